//! Shared representations: qualifiers, types, predicates, schemes and the
//! three term layers (surface, annotated, internal).
//!
//! Every stage of the pipeline reads and produces these values. They are
//! plain immutable trees; nothing here mutates after construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type Name = String;

/// Source position, 1-based. `Pos::default()` marks synthesized nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }

    pub fn is_synthetic(&self) -> bool {
        self.line == 0
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Qualifier on a function arrow. It governs the closure itself, not its
/// argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArrowQual {
    /// Unlimited: may be duplicated and dropped.
    U,
    /// Relevant: may be duplicated, not dropped.
    R,
    /// Affine: may be dropped, not duplicated.
    A,
    /// Linear: neither.
    L,
}

impl ArrowQual {
    pub const ALL: [ArrowQual; 4] = [ArrowQual::U, ArrowQual::R, ArrowQual::A, ArrowQual::L];

    pub fn letter(self) -> char {
        match self {
            ArrowQual::U => 'U',
            ArrowQual::R => 'R',
            ArrowQual::A => 'A',
            ArrowQual::L => 'L',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'U' => Some(ArrowQual::U),
            'R' => Some(ArrowQual::R),
            'A' => Some(ArrowQual::A),
            'L' => Some(ArrowQual::L),
            _ => None,
        }
    }
}

impl fmt::Display for ArrowQual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "-{}>", self.letter())
    }
}

/// Reference qualifier: strong cells allow type-changing updates and are
/// never aliased; weak cells are aliasable and reference counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RefQual {
    S,
    W,
}

impl RefQual {
    pub const ALL: [RefQual; 2] = [RefQual::S, RefQual::W];

    pub fn suffix(self) -> &'static str {
        match self {
            RefQual::S => "s",
            RefQual::W => "w",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Type {
    Var(Name),
    Arrow(Box<Type>, Box<Type>, ArrowQual),
    Prod(Box<Type>, Box<Type>),
    Sum(Box<Type>, Box<Type>),
    Unit,
    Ref(RefQual, Box<Type>),
}

impl Type {
    pub fn var(name: impl Into<Name>) -> Type {
        Type::Var(name.into())
    }

    pub fn arrow(dom: Type, cod: Type, q: ArrowQual) -> Type {
        Type::Arrow(Box::new(dom), Box::new(cod), q)
    }

    pub fn prod(a: Type, b: Type) -> Type {
        Type::Prod(Box::new(a), Box::new(b))
    }

    pub fn sum(a: Type, b: Type) -> Type {
        Type::Sum(Box::new(a), Box::new(b))
    }

    pub fn reference(rq: RefQual, t: Type) -> Type {
        Type::Ref(rq, Box::new(t))
    }

    /// Set of type variables occurring in the type.
    pub fn free_type_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut |n| {
            out.insert(n.clone());
        });
        out
    }

    /// Type variables in order of first (left-to-right) occurrence.
    pub fn vars_in_order(&self) -> Vec<Name> {
        let mut out: Vec<Name> = Vec::new();
        self.collect_vars(&mut |n| {
            if !out.contains(n) {
                out.push(n.clone());
            }
        });
        out
    }

    fn collect_vars(&self, f: &mut impl FnMut(&Name)) {
        match self {
            Type::Var(n) => f(n),
            Type::Arrow(a, b, _) | Type::Prod(a, b) | Type::Sum(a, b) => {
                a.collect_vars(f);
                b.collect_vars(f);
            }
            Type::Ref(_, t) => t.collect_vars(f),
            Type::Unit => {}
        }
    }

    /// Capture-free renaming of type variables.
    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Type {
        match self {
            Type::Var(n) => Type::Var(map.get(n).cloned().unwrap_or_else(|| n.clone())),
            Type::Arrow(a, b, q) => Type::arrow(a.rename(map), b.rename(map), *q),
            Type::Prod(a, b) => Type::prod(a.rename(map), b.rename(map)),
            Type::Sum(a, b) => Type::sum(a.rename(map), b.rename(map)),
            Type::Ref(rq, t) => Type::reference(*rq, t.rename(map)),
            Type::Unit => Type::Unit,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Type::Var(_))
    }

    pub fn size(&self) -> usize {
        match self {
            Type::Var(_) | Type::Unit => 1,
            Type::Arrow(a, b, _) | Type::Prod(a, b) | Type::Sum(a, b) => 1 + a.size() + b.size(),
            Type::Ref(_, t) => 1 + t.size(),
        }
    }

    pub fn mentions_ref(&self) -> bool {
        match self {
            Type::Ref(..) => true,
            Type::Arrow(a, b, _) | Type::Prod(a, b) | Type::Sum(a, b) => {
                a.mentions_ref() || b.mentions_ref()
            }
            Type::Var(_) | Type::Unit => false,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        // 0: arrow, 1: sum, 2: Ref application, 3: atom
        match self {
            Type::Var(n) => write!(f, "{n}"),
            Type::Unit => write!(f, "()"),
            Type::Prod(a, b) => {
                write!(f, "(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                b.fmt_prec(f, 0)?;
                write!(f, ")")
            }
            Type::Arrow(a, b, q) => {
                if prec > 0 {
                    write!(f, "(")?;
                }
                a.fmt_prec(f, 1)?;
                write!(f, " {q} ")?;
                b.fmt_prec(f, 0)?;
                if prec > 0 {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Type::Sum(a, b) => {
                if prec > 1 {
                    write!(f, "(")?;
                }
                a.fmt_prec(f, 1)?;
                write!(f, " + ")?;
                b.fmt_prec(f, 2)?;
                if prec > 1 {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Type::Ref(rq, t) => {
                if prec > 2 {
                    write!(f, "(")?;
                }
                write!(f, "Ref_{} ", rq.suffix())?;
                t.fmt_prec(f, 3)?;
                if prec > 2 {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// The two structural type classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Class {
    Dup,
    Drop,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Dup, Class::Drop];
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Class::Dup => write!(f, "Dup"),
            Class::Drop => write!(f, "Drop"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pred {
    pub class: Class,
    pub ty: Type,
}

impl Pred {
    pub fn new(class: Class, ty: Type) -> Self {
        Pred { class, ty }
    }

    pub fn dup(ty: Type) -> Self {
        Pred::new(Class::Dup, ty)
    }

    pub fn drop(ty: Type) -> Self {
        Pred::new(Class::Drop, ty)
    }

    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Pred {
        Pred::new(self.class, self.ty.rename(map))
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.class)?;
        self.ty.fmt_prec(f, 3)
    }
}

/// A finite, duplicate-free set of predicates. Iteration follows the
/// canonical syntactic order, so printing is deterministic.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConstraintSet(BTreeSet<Pred>);

impl ConstraintSet {
    pub fn new() -> Self {
        ConstraintSet(BTreeSet::new())
    }

    pub fn insert(&mut self, p: Pred) -> bool {
        self.0.insert(p)
    }

    pub fn remove(&mut self, p: &Pred) -> bool {
        self.0.remove(p)
    }

    pub fn contains(&self, p: &Pred) -> bool {
        self.0.contains(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pred> {
        self.0.iter()
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = Pred>) {
        self.0.extend(other)
    }

    pub fn union(&self, other: &ConstraintSet) -> ConstraintSet {
        self.0.union(&other.0).cloned().collect()
    }

    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> ConstraintSet {
        self.iter().map(|p| p.rename(map)).collect()
    }

    pub fn vars_in_order(&self) -> Vec<Name> {
        let mut out: Vec<Name> = Vec::new();
        for p in &self.0 {
            for v in p.ty.vars_in_order() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }
}

impl FromIterator<Pred> for ConstraintSet {
    fn from_iter<I: IntoIterator<Item = Pred>>(iter: I) -> Self {
        ConstraintSet(iter.into_iter().collect())
    }
}

impl IntoIterator for ConstraintSet {
    type Item = Pred;
    type IntoIter = std::collections::btree_set::IntoIter<Pred>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a ConstraintSet {
    type Item = &'a Pred;
    type IntoIter = std::collections::btree_set::Iter<'a, Pred>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.len() {
            0 => write!(f, "()"),
            1 => write!(f, "{}", self.0.iter().next().unwrap()),
            _ => {
                write!(f, "(")?;
                for (i, p) in self.0.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// `forall vars. constraints => ty`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scheme {
    pub vars: Vec<Name>,
    pub constraints: ConstraintSet,
    pub ty: Type,
}

impl Scheme {
    pub fn mono(ty: Type) -> Self {
        Scheme { vars: Vec::new(), constraints: ConstraintSet::new(), ty }
    }

    /// Quantifies every variable of `constraints` and `ty`, in order of first
    /// occurrence in the body and then in the constraints. This is how
    /// written signatures are read.
    pub fn closed(constraints: ConstraintSet, ty: Type) -> Self {
        let mut vars = ty.vars_in_order();
        for v in constraints.vars_in_order() {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
        Scheme { vars, constraints, ty }
    }

    pub fn is_mono(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn free_type_vars(&self) -> BTreeSet<Name> {
        let mut fvs = self.ty.free_type_vars();
        for p in &self.constraints {
            fvs.extend(p.ty.free_type_vars());
        }
        for v in &self.vars {
            fvs.remove(v);
        }
        fvs
    }

    /// Renames quantified variables to `a`, `b`, ... in order of first
    /// occurrence, skipping names that are free in the scheme.
    pub fn normalized(&self) -> Scheme {
        let free = self.free_type_vars();
        let mut order = self.ty.vars_in_order();
        for v in self.constraints.vars_in_order() {
            if !order.contains(&v) {
                order.push(v);
            }
        }
        for v in &self.vars {
            if !order.contains(v) {
                order.push(v.clone());
            }
        }
        let mut names = pretty_var_names().filter(|n| !free.contains(n));
        let mut map = BTreeMap::new();
        let mut vars = Vec::new();
        for v in order.into_iter().filter(|v| self.vars.contains(v)) {
            let fresh = names.next().expect("name supply is infinite");
            map.insert(v, fresh.clone());
            vars.push(fresh);
        }
        Scheme {
            vars,
            constraints: self.constraints.rename(&map),
            ty: self.ty.rename(&map),
        }
    }

    /// Equality up to renaming of quantified variables and reordering of
    /// the constraint set.
    pub fn alpha_eq(&self, other: &Scheme) -> bool {
        let mine: BTreeSet<&Name> = self.vars.iter().collect();
        let theirs: BTreeSet<&Name> = other.vars.iter().collect();
        if mine.len() != theirs.len() || self.constraints.len() != other.constraints.len() {
            return false;
        }
        let mut map: BTreeMap<Name, Name> = BTreeMap::new();
        if !match_types(&self.ty, &other.ty, &mine, &theirs, &mut map) {
            return false;
        }
        // Quantified variables that only occur in constraints are matched by
        // trying every remaining assignment.
        let left: Vec<Name> = self.vars.iter().filter(|v| !map.contains_key(*v)).cloned().collect();
        let used: BTreeSet<Name> = map.values().cloned().collect();
        let right: Vec<Name> = other.vars.iter().filter(|v| !used.contains(*v)).cloned().collect();
        if left.len() != right.len() {
            return false;
        }
        let mut assignment = right.clone();
        permutations_any(&mut assignment, 0, &mut |perm| {
            let mut full = map.clone();
            for (l, r) in left.iter().zip(perm) {
                full.insert(l.clone(), r.clone());
            }
            self.constraints.rename(&full) == other.constraints
        })
    }
}

fn match_types(
    a: &Type,
    b: &Type,
    qa: &BTreeSet<&Name>,
    qb: &BTreeSet<&Name>,
    map: &mut BTreeMap<Name, Name>,
) -> bool {
    match (a, b) {
        (Type::Var(x), Type::Var(y)) => match (qa.contains(x), qb.contains(y)) {
            (true, true) => match map.get(x) {
                Some(bound) => bound == y,
                None => {
                    if map.values().any(|v| v == y) {
                        return false;
                    }
                    map.insert(x.clone(), y.clone());
                    true
                }
            },
            (false, false) => x == y,
            _ => false,
        },
        (Type::Arrow(a1, a2, q1), Type::Arrow(b1, b2, q2)) => {
            q1 == q2 && match_types(a1, b1, qa, qb, map) && match_types(a2, b2, qa, qb, map)
        }
        (Type::Prod(a1, a2), Type::Prod(b1, b2)) | (Type::Sum(a1, a2), Type::Sum(b1, b2)) => {
            match_types(a1, b1, qa, qb, map) && match_types(a2, b2, qa, qb, map)
        }
        (Type::Ref(r1, a1), Type::Ref(r2, b1)) => r1 == r2 && match_types(a1, b1, qa, qb, map),
        (Type::Unit, Type::Unit) => true,
        _ => false,
    }
}

fn permutations_any(xs: &mut Vec<Name>, k: usize, f: &mut impl FnMut(&[Name]) -> bool) -> bool {
    if k == xs.len() {
        return f(xs);
    }
    for i in k..xs.len() {
        xs.swap(k, i);
        if permutations_any(xs, k + 1, f) {
            xs.swap(k, i);
            return true;
        }
        xs.swap(k, i);
    }
    false
}

/// `a, b, ..., z, a1, b1, ...`
pub fn pretty_var_names() -> impl Iterator<Item = Name> {
    (0usize..).map(|i| {
        let letter = (b'a' + (i % 26) as u8) as char;
        match i / 26 {
            0 => letter.to_string(),
            n => format!("{letter}{n}"),
        }
    })
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.constraints.is_empty() {
            write!(f, "{} => ", self.constraints)?;
        }
        write!(f, "{}", self.ty)
    }
}

/// Multiset of variable names. Zero counts are never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarMultiset(BTreeMap<Name, usize>);

impl VarMultiset {
    pub fn new() -> Self {
        VarMultiset(BTreeMap::new())
    }

    pub fn singleton(x: impl Into<Name>) -> Self {
        let mut m = VarMultiset::new();
        m.add(x.into(), 1);
        m
    }

    pub fn from_set<'a>(xs: impl IntoIterator<Item = &'a Name>) -> Self {
        let mut m = VarMultiset::new();
        for x in xs {
            m.add(x.clone(), 1);
        }
        m
    }

    pub fn count(&self, x: &str) -> usize {
        self.0.get(x).copied().unwrap_or(0)
    }

    pub fn add(&mut self, x: Name, n: usize) {
        if n > 0 {
            *self.0.entry(x).or_insert(0) += n;
        }
    }

    /// Removes `n` copies of `x`; `false` (and no change) if fewer exist.
    pub fn remove(&mut self, x: &str, n: usize) -> bool {
        let have = self.count(x);
        if have < n {
            return false;
        }
        if have == n {
            self.0.remove(x);
        } else {
            self.0.insert(x.to_string(), have - n);
        }
        true
    }

    pub fn sum(&self, other: &VarMultiset) -> VarMultiset {
        let mut out = self.clone();
        for (x, n) in &other.0 {
            out.add(x.clone(), *n);
        }
        out
    }

    /// `self - other`, defined only when `other` is a sub-multiset.
    pub fn difference(&self, other: &VarMultiset) -> Option<VarMultiset> {
        let mut out = self.clone();
        for (x, n) in &other.0 {
            if !out.remove(x, *n) {
                return None;
            }
        }
        Some(out)
    }

    pub fn contains_multiset(&self, other: &VarMultiset) -> bool {
        other.0.iter().all(|(x, n)| self.count(x) >= *n)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of elements, counting multiplicity.
    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn support(&self) -> impl Iterator<Item = &Name> {
        self.0.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Name, usize)> {
        self.0.iter().map(|(x, n)| (x, *n))
    }

    /// Elements with repetition, ascending by name.
    pub fn elements(&self) -> impl Iterator<Item = &Name> {
        self.0.iter().flat_map(|(x, n)| std::iter::repeat_n(x, *n))
    }
}

impl FromIterator<Name> for VarMultiset {
    fn from_iter<I: IntoIterator<Item = Name>>(iter: I) -> Self {
        let mut m = VarMultiset::new();
        for x in iter {
            m.add(x, 1);
        }
        m
    }
}

impl fmt::Display for VarMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, x) in self.elements().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, "}}")
    }
}

/// Store location. Fresh per run, never reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location(pub u64);

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ℓ{}", self.0)
    }
}

/// Lambda parameter: a variable or the pair sugar `\(x, y) -q> e`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pattern {
    Var(Name),
    Pair(Name, Name),
}

impl Pattern {
    pub fn binders(&self) -> Vec<&Name> {
        match self {
            Pattern::Var(x) => vec![x],
            Pattern::Pair(x, y) => vec![x, y],
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Var(x) => write!(f, "{x}"),
            Pattern::Pair(x, y) => write!(f, "({x}, {y})"),
        }
    }
}

/// Implicitly structural source term. Equality ignores positions.
#[derive(Clone, Debug)]
pub struct SurfaceTerm {
    pub kind: Surface,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    Var(Name),
    Lam(ArrowQual, Pattern, Box<SurfaceTerm>),
    App(Box<SurfaceTerm>, Box<SurfaceTerm>),
    Pair(Box<SurfaceTerm>, Box<SurfaceTerm>),
    LetPair(Name, Name, Box<SurfaceTerm>, Box<SurfaceTerm>),
    Let(Name, Box<SurfaceTerm>, Box<SurfaceTerm>),
    Inl(Box<SurfaceTerm>),
    Inr(Box<SurfaceTerm>),
    Case {
        scrut: Box<SurfaceTerm>,
        left: (Name, Box<SurfaceTerm>),
        right: (Name, Box<SurfaceTerm>),
    },
    Unit,
    New(RefQual, Box<SurfaceTerm>),
    Release(RefQual, Box<SurfaceTerm>),
    Swap(RefQual, Box<SurfaceTerm>, Box<SurfaceTerm>),
}

impl PartialEq for SurfaceTerm {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl SurfaceTerm {
    pub fn new(kind: Surface) -> Self {
        SurfaceTerm { kind, pos: Pos::default() }
    }

    pub fn at(kind: Surface, pos: Pos) -> Self {
        SurfaceTerm { kind, pos }
    }

    pub fn var(x: impl Into<Name>) -> Self {
        Self::new(Surface::Var(x.into()))
    }

    pub fn unit() -> Self {
        Self::new(Surface::Unit)
    }

    pub fn lam(q: ArrowQual, x: impl Into<Name>, body: SurfaceTerm) -> Self {
        Self::new(Surface::Lam(q, Pattern::Var(x.into()), Box::new(body)))
    }

    pub fn lam_pair(q: ArrowQual, x: impl Into<Name>, y: impl Into<Name>, body: SurfaceTerm) -> Self {
        Self::new(Surface::Lam(q, Pattern::Pair(x.into(), y.into()), Box::new(body)))
    }

    pub fn app(f: SurfaceTerm, a: SurfaceTerm) -> Self {
        Self::new(Surface::App(Box::new(f), Box::new(a)))
    }

    pub fn pair(a: SurfaceTerm, b: SurfaceTerm) -> Self {
        Self::new(Surface::Pair(Box::new(a), Box::new(b)))
    }

    pub fn let_(x: impl Into<Name>, rhs: SurfaceTerm, body: SurfaceTerm) -> Self {
        Self::new(Surface::Let(x.into(), Box::new(rhs), Box::new(body)))
    }

    pub fn let_pair(x: impl Into<Name>, y: impl Into<Name>, rhs: SurfaceTerm, body: SurfaceTerm) -> Self {
        Self::new(Surface::LetPair(x.into(), y.into(), Box::new(rhs), Box::new(body)))
    }

    pub fn inl(e: SurfaceTerm) -> Self {
        Self::new(Surface::Inl(Box::new(e)))
    }

    pub fn inr(e: SurfaceTerm) -> Self {
        Self::new(Surface::Inr(Box::new(e)))
    }

    pub fn case(
        scrut: SurfaceTerm,
        x: impl Into<Name>,
        left: SurfaceTerm,
        y: impl Into<Name>,
        right: SurfaceTerm,
    ) -> Self {
        Self::new(Surface::Case {
            scrut: Box::new(scrut),
            left: (x.into(), Box::new(left)),
            right: (y.into(), Box::new(right)),
        })
    }

    pub fn new_ref(rq: RefQual, e: SurfaceTerm) -> Self {
        Self::new(Surface::New(rq, Box::new(e)))
    }

    pub fn release(rq: RefQual, e: SurfaceTerm) -> Self {
        Self::new(Surface::Release(rq, Box::new(e)))
    }

    pub fn swap(rq: RefQual, r: SurfaceTerm, v: SurfaceTerm) -> Self {
        Self::new(Surface::Swap(rq, Box::new(r), Box::new(v)))
    }

    /// Number of constructors.
    pub fn size(&self) -> usize {
        1 + match &self.kind {
            Surface::Var(_) | Surface::Unit => 0,
            Surface::Lam(_, _, b) | Surface::Inl(b) | Surface::Inr(b) => b.size(),
            Surface::New(_, b) | Surface::Release(_, b) => b.size(),
            Surface::App(a, b) | Surface::Pair(a, b) | Surface::Swap(_, a, b) => a.size() + b.size(),
            Surface::Let(_, a, b) | Surface::LetPair(_, _, a, b) => a.size() + b.size(),
            Surface::Case { scrut, left, right } => scrut.size() + left.1.size() + right.1.size(),
        }
    }
}

/// A term with explicit multiset dup/drop annotations.
#[derive(Clone, Debug)]
pub struct AnnTerm {
    pub kind: Ann,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Ann {
    Var(Name),
    Lam(ArrowQual, Pattern, Box<AnnTerm>),
    App(Box<AnnTerm>, Box<AnnTerm>),
    Pair(Box<AnnTerm>, Box<AnnTerm>),
    LetPair(Name, Name, Box<AnnTerm>, Box<AnnTerm>),
    Let(Name, Box<AnnTerm>, Box<AnnTerm>),
    Inl(Box<AnnTerm>),
    Inr(Box<AnnTerm>),
    Case {
        scrut: Box<AnnTerm>,
        left: Box<AnnArm>,
        right: Box<AnnArm>,
    },
    Unit,
    New(RefQual, Box<AnnTerm>),
    Release(RefQual, Box<AnnTerm>),
    Swap(RefQual, Box<AnnTerm>, Box<AnnTerm>),
    Dup(VarMultiset, Box<AnnTerm>),
    Drop(VarMultiset, Box<AnnTerm>),
}

/// A case arm. Annotations may wrap the arm outside its binder, which is
/// where branch-asymmetric drops live.
#[derive(Clone, Debug, PartialEq)]
pub enum AnnArm {
    Bind(Name, AnnTerm),
    Dup(VarMultiset, Box<AnnArm>),
    Drop(VarMultiset, Box<AnnArm>),
}

impl PartialEq for AnnTerm {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl AnnTerm {
    pub fn new(kind: Ann) -> Self {
        AnnTerm { kind, pos: Pos::default() }
    }

    pub fn at(kind: Ann, pos: Pos) -> Self {
        AnnTerm { kind, pos }
    }

    /// Number of dup/drop annotation nodes, including those on case arms.
    pub fn annotation_count(&self) -> usize {
        match &self.kind {
            Ann::Var(_) | Ann::Unit => 0,
            Ann::Dup(_, b) | Ann::Drop(_, b) => 1 + b.annotation_count(),
            Ann::Lam(_, _, b) | Ann::Inl(b) | Ann::Inr(b) | Ann::New(_, b) | Ann::Release(_, b) => {
                b.annotation_count()
            }
            Ann::App(a, b) | Ann::Pair(a, b) | Ann::Swap(_, a, b) => {
                a.annotation_count() + b.annotation_count()
            }
            Ann::Let(_, a, b) | Ann::LetPair(_, _, a, b) => a.annotation_count() + b.annotation_count(),
            Ann::Case { scrut, left, right } => {
                scrut.annotation_count() + left.annotation_count() + right.annotation_count()
            }
        }
    }

    /// Visits every annotation node as `(is_dup, multiset)`.
    pub fn for_each_annotation(&self, f: &mut impl FnMut(bool, &VarMultiset)) {
        match &self.kind {
            Ann::Var(_) | Ann::Unit => {}
            Ann::Dup(g, b) => {
                f(true, g);
                b.for_each_annotation(f)
            }
            Ann::Drop(g, b) => {
                f(false, g);
                b.for_each_annotation(f)
            }
            Ann::Lam(_, _, b) | Ann::Inl(b) | Ann::Inr(b) | Ann::New(_, b) | Ann::Release(_, b) => {
                b.for_each_annotation(f)
            }
            Ann::App(a, b) | Ann::Pair(a, b) | Ann::Swap(_, a, b) | Ann::Let(_, a, b) | Ann::LetPair(_, _, a, b) => {
                a.for_each_annotation(f);
                b.for_each_annotation(f)
            }
            Ann::Case { scrut, left, right } => {
                scrut.for_each_annotation(f);
                left.for_each_annotation(f);
                right.for_each_annotation(f)
            }
        }
    }

    pub fn drops_var(&self, x: &str) -> bool {
        let mut found = false;
        self.for_each_annotation(&mut |is_dup, g| found |= !is_dup && g.count(x) > 0);
        found
    }

    pub fn dups_var(&self, x: &str) -> bool {
        let mut found = false;
        self.for_each_annotation(&mut |is_dup, g| found |= is_dup && g.count(x) > 0);
        found
    }
}

impl AnnArm {
    pub fn annotation_count(&self) -> usize {
        match self {
            AnnArm::Bind(_, b) => b.annotation_count(),
            AnnArm::Dup(_, a) | AnnArm::Drop(_, a) => 1 + a.annotation_count(),
        }
    }

    pub fn for_each_annotation(&self, f: &mut impl FnMut(bool, &VarMultiset)) {
        match self {
            AnnArm::Bind(_, b) => b.for_each_annotation(f),
            AnnArm::Dup(g, a) => {
                f(true, g);
                a.for_each_annotation(f)
            }
            AnnArm::Drop(g, a) => {
                f(false, g);
                a.for_each_annotation(f)
            }
        }
    }
}

/// Explicitly linear term: every variable is used exactly once and all
/// sharing goes through `Dup`/`Drop`. Equality ignores positions.
#[derive(Clone, Debug)]
pub struct InternalTerm {
    pub kind: Internal,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Internal {
    Var(Name),
    /// Reference to a top-level definition; exempt from linearity.
    Global(Name),
    Lam(ArrowQual, Name, Box<InternalTerm>),
    App(Box<InternalTerm>, Box<InternalTerm>),
    Pair(Box<InternalTerm>, Box<InternalTerm>),
    LetPair(Name, Name, Box<InternalTerm>, Box<InternalTerm>),
    Let(Name, Box<InternalTerm>, Box<InternalTerm>),
    Inl(Box<InternalTerm>),
    Inr(Box<InternalTerm>),
    Case {
        scrut: Box<InternalTerm>,
        left: (Name, Box<InternalTerm>),
        right: (Name, Box<InternalTerm>),
    },
    Unit,
    New(RefQual, Box<InternalTerm>),
    Release(RefQual, Box<InternalTerm>),
    Swap(RefQual, Box<InternalTerm>, Box<InternalTerm>),
    /// `dup src as x1, x2 in body`
    Dup(Box<InternalTerm>, Name, Name, Box<InternalTerm>),
    /// `drop src in body`
    Drop(Box<InternalTerm>, Box<InternalTerm>),
    Loc(Location),
}

impl PartialEq for InternalTerm {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl InternalTerm {
    pub fn new(kind: Internal) -> Self {
        InternalTerm { kind, pos: Pos::default() }
    }

    pub fn at(kind: Internal, pos: Pos) -> Self {
        InternalTerm { kind, pos }
    }

    pub fn var(x: impl Into<Name>) -> Self {
        Self::new(Internal::Var(x.into()))
    }

    pub fn unit() -> Self {
        Self::new(Internal::Unit)
    }

    pub fn loc(l: Location) -> Self {
        Self::new(Internal::Loc(l))
    }

    pub fn pair(a: InternalTerm, b: InternalTerm) -> Self {
        Self::new(Internal::Pair(Box::new(a), Box::new(b)))
    }

    pub fn inl(e: InternalTerm) -> Self {
        Self::new(Internal::Inl(Box::new(e)))
    }

    pub fn inr(e: InternalTerm) -> Self {
        Self::new(Internal::Inr(Box::new(e)))
    }

    pub fn lam(q: ArrowQual, x: impl Into<Name>, body: InternalTerm) -> Self {
        Self::new(Internal::Lam(q, x.into(), Box::new(body)))
    }

    pub fn app(f: InternalTerm, a: InternalTerm) -> Self {
        Self::new(Internal::App(Box::new(f), Box::new(a)))
    }

    pub fn dup(src: InternalTerm, x1: impl Into<Name>, x2: impl Into<Name>, body: InternalTerm) -> Self {
        Self::new(Internal::Dup(Box::new(src), x1.into(), x2.into(), Box::new(body)))
    }

    pub fn drop_in(src: InternalTerm, body: InternalTerm) -> Self {
        Self::new(Internal::Drop(Box::new(src), Box::new(body)))
    }

    pub fn is_value(&self) -> bool {
        match &self.kind {
            Internal::Lam(..) | Internal::Unit | Internal::Loc(_) => true,
            Internal::Pair(a, b) => a.is_value() && b.is_value(),
            Internal::Inl(v) | Internal::Inr(v) => v.is_value(),
            _ => false,
        }
    }
}

// ---------------------------------------------------------------------------
// Pretty printing. Precedence levels: 0 = full expression (lambda, let,
// case, dup, drop), 1 = application / prefix keyword, 2 = atom.

trait TermDoc {
    fn write_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result;
}

fn open(f: &mut fmt::Formatter<'_>, need: bool) -> fmt::Result {
    if need {
        write!(f, "(")?;
    }
    Ok(())
}

fn close(f: &mut fmt::Formatter<'_>, need: bool) -> fmt::Result {
    if need {
        write!(f, ")")?;
    }
    Ok(())
}

fn write_prefix<T: TermDoc>(f: &mut fmt::Formatter<'_>, prec: u8, kw: &str, args: &[&T]) -> fmt::Result {
    open(f, prec > 1)?;
    write!(f, "{kw}")?;
    for a in args {
        write!(f, " ")?;
        a.write_prec(f, 2)?;
    }
    close(f, prec > 1)
}

fn write_app<T: TermDoc>(f: &mut fmt::Formatter<'_>, prec: u8, fun: &T, arg: &T) -> fmt::Result {
    open(f, prec > 1)?;
    fun.write_prec(f, 1)?;
    write!(f, " ")?;
    arg.write_prec(f, 2)?;
    close(f, prec > 1)
}

fn write_pair<T: TermDoc>(f: &mut fmt::Formatter<'_>, a: &T, b: &T) -> fmt::Result {
    write!(f, "(")?;
    a.write_prec(f, 0)?;
    write!(f, ", ")?;
    b.write_prec(f, 0)?;
    write!(f, ")")
}

impl TermDoc for SurfaceTerm {
    fn write_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        match &self.kind {
            Surface::Var(x) => write!(f, "{x}"),
            Surface::Unit => write!(f, "()"),
            Surface::Pair(a, b) => write_pair(f, &**a, &**b),
            Surface::App(a, b) => write_app(f, prec, &**a, &**b),
            Surface::Inl(e) => write_prefix(f, prec, "inl", &[&**e]),
            Surface::Inr(e) => write_prefix(f, prec, "inr", &[&**e]),
            Surface::New(rq, e) => write_prefix(f, prec, &format!("new_{}", rq.suffix()), &[&**e]),
            Surface::Release(rq, e) => write_prefix(f, prec, &format!("release_{}", rq.suffix()), &[&**e]),
            Surface::Swap(rq, a, b) => write_prefix(f, prec, &format!("swap_{}", rq.suffix()), &[&**a, &**b]),
            Surface::Lam(q, p, body) => {
                open(f, prec > 0)?;
                write!(f, "\\{p} {q} ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Surface::Let(x, rhs, body) => {
                open(f, prec > 0)?;
                write!(f, "let {x} = ")?;
                rhs.write_prec(f, 0)?;
                write!(f, " in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Surface::LetPair(x, y, rhs, body) => {
                open(f, prec > 0)?;
                write!(f, "let ({x}, {y}) = ")?;
                rhs.write_prec(f, 0)?;
                write!(f, " in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Surface::Case { scrut, left, right } => {
                open(f, prec > 0)?;
                write!(f, "case ")?;
                scrut.write_prec(f, 0)?;
                write!(f, " of {{ inl {} -> ", left.0)?;
                left.1.write_prec(f, 0)?;
                write!(f, " ; inr {} -> ", right.0)?;
                right.1.write_prec(f, 0)?;
                write!(f, " }}")?;
                close(f, prec > 0)
            }
        }
    }
}

impl TermDoc for AnnTerm {
    fn write_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        match &self.kind {
            Ann::Var(x) => write!(f, "{x}"),
            Ann::Unit => write!(f, "()"),
            Ann::Pair(a, b) => write_pair(f, &**a, &**b),
            Ann::App(a, b) => write_app(f, prec, &**a, &**b),
            Ann::Inl(e) => write_prefix(f, prec, "inl", &[&**e]),
            Ann::Inr(e) => write_prefix(f, prec, "inr", &[&**e]),
            Ann::New(rq, e) => write_prefix(f, prec, &format!("new_{}", rq.suffix()), &[&**e]),
            Ann::Release(rq, e) => write_prefix(f, prec, &format!("release_{}", rq.suffix()), &[&**e]),
            Ann::Swap(rq, a, b) => write_prefix(f, prec, &format!("swap_{}", rq.suffix()), &[&**a, &**b]),
            Ann::Lam(q, p, body) => {
                open(f, prec > 0)?;
                write!(f, "\\{p} {q} ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Ann::Let(x, rhs, body) => {
                open(f, prec > 0)?;
                write!(f, "let {x} = ")?;
                rhs.write_prec(f, 0)?;
                write!(f, " in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Ann::LetPair(x, y, rhs, body) => {
                open(f, prec > 0)?;
                write!(f, "let ({x}, {y}) = ")?;
                rhs.write_prec(f, 0)?;
                write!(f, " in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Ann::Case { scrut, left, right } => {
                open(f, prec > 0)?;
                write!(f, "case ")?;
                scrut.write_prec(f, 0)?;
                write!(f, " of {{ ")?;
                write_arm(f, "inl", left)?;
                write!(f, " ; ")?;
                write_arm(f, "inr", right)?;
                write!(f, " }}")?;
                close(f, prec > 0)
            }
            Ann::Dup(g, body) => {
                open(f, prec > 0)?;
                write!(f, "dup {g} in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Ann::Drop(g, body) => {
                open(f, prec > 0)?;
                write!(f, "drop {g} in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
        }
    }
}

fn write_arm(f: &mut fmt::Formatter<'_>, tag: &str, arm: &AnnArm) -> fmt::Result {
    match arm {
        AnnArm::Bind(x, body) => {
            write!(f, "{tag} {x} -> ")?;
            body.write_prec(f, 0)
        }
        AnnArm::Dup(g, inner) => {
            write!(f, "dup {g} in ")?;
            write_arm(f, tag, inner)
        }
        AnnArm::Drop(g, inner) => {
            write!(f, "drop {g} in ")?;
            write_arm(f, tag, inner)
        }
    }
}

impl TermDoc for InternalTerm {
    fn write_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        match &self.kind {
            Internal::Var(x) | Internal::Global(x) => write!(f, "{x}"),
            Internal::Loc(l) => write!(f, "{l}"),
            Internal::Unit => write!(f, "()"),
            Internal::Pair(a, b) => write_pair(f, &**a, &**b),
            Internal::App(a, b) => write_app(f, prec, &**a, &**b),
            Internal::Inl(e) => write_prefix(f, prec, "inl", &[&**e]),
            Internal::Inr(e) => write_prefix(f, prec, "inr", &[&**e]),
            Internal::New(rq, e) => write_prefix(f, prec, &format!("new_{}", rq.suffix()), &[&**e]),
            Internal::Release(rq, e) => {
                write_prefix(f, prec, &format!("release_{}", rq.suffix()), &[&**e])
            }
            Internal::Swap(rq, a, b) => {
                write_prefix(f, prec, &format!("swap_{}", rq.suffix()), &[&**a, &**b])
            }
            Internal::Lam(q, x, body) => {
                open(f, prec > 0)?;
                write!(f, "\\{x} {q} ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Internal::Let(x, rhs, body) => {
                open(f, prec > 0)?;
                write!(f, "let {x} = ")?;
                rhs.write_prec(f, 0)?;
                write!(f, " in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Internal::LetPair(x, y, rhs, body) => {
                open(f, prec > 0)?;
                write!(f, "let ({x}, {y}) = ")?;
                rhs.write_prec(f, 0)?;
                write!(f, " in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Internal::Case { scrut, left, right } => {
                open(f, prec > 0)?;
                write!(f, "case ")?;
                scrut.write_prec(f, 0)?;
                write!(f, " of {{ inl {} -> ", left.0)?;
                left.1.write_prec(f, 0)?;
                write!(f, " ; inr {} -> ", right.0)?;
                right.1.write_prec(f, 0)?;
                write!(f, " }}")?;
                close(f, prec > 0)
            }
            Internal::Dup(src, x1, x2, body) => {
                open(f, prec > 0)?;
                write!(f, "dup ")?;
                src.write_prec(f, 1)?;
                write!(f, " as {x1}, {x2} in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
            Internal::Drop(src, body) => {
                open(f, prec > 0)?;
                write!(f, "drop ")?;
                src.write_prec(f, 1)?;
                write!(f, " in ")?;
                body.write_prec(f, 0)?;
                close(f, prec > 0)
            }
        }
    }
}

impl fmt::Display for SurfaceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

impl fmt::Display for AnnTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

impl fmt::Display for InternalTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

/// Renders a scheme in source notation, e.g. `Drop b => (a, b) -U> a`.
pub fn pretty_scheme(s: &Scheme) -> String {
    s.to_string()
}

pub fn free_type_vars(t: &Type) -> BTreeSet<Name> {
    t.free_type_vars()
}
