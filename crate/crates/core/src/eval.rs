//! Small-step call-by-value evaluation over a reference-counted store.
//!
//! Values are closed terms: a closure is a lambda whose body has had every
//! captured value substituted in, so its locations are simply the locations
//! written in its body. Top-level names are unfolded on demand.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ast::{ArrowQual, Internal, InternalTerm, Location, Name, Pos, RefQual, Type};
use crate::infer::{CheckedProgram, Checker, TypeEnv, TypeError};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("evaluation is stuck at `{term}`: {reason}")]
    Stuck { term: String, reason: String },
    #[error("step limit of {limit} exceeded")]
    StepLimitExceeded { limit: usize },
    #[error("location {0} is not in the store")]
    MissingLocation(Location),
    #[error("no definition named `{0}`")]
    UnknownEntry(Name),
    #[error("entry `{name}` has polymorphic type `{scheme}`; the entry point must be monomorphic")]
    PolymorphicEntry { name: Name, scheme: String },
    #[error("step {step}: expected a term of type `{expected}`, but {got}")]
    PreservationViolation { step: usize, expected: Type, got: String },
    #[error("step {step}: {loc} has count {count} but {demand} references")]
    CountInvariantViolation { step: usize, loc: Location, count: usize, demand: usize },
    #[error("step {step}: contents of {loc} are ill-typed: {message}")]
    IllTypedStoreValue { step: usize, loc: Location, message: String },
    #[error("step {step}: case branches reference different locations in `{term}`")]
    BranchLocsMismatch { step: usize, term: String },
    #[error("step {step}: store cell {loc} reaches itself")]
    CyclicStore { step: usize, loc: Location },
}

// ---------------------------------------------------------------------------
// Values, stores, configurations

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Closure { q: ArrowQual, param: Name, body: InternalTerm },
    Pair(Box<Value>, Box<Value>),
    Inl(Box<Value>),
    Inr(Box<Value>),
    Unit,
    Loc(Location),
}

impl Value {
    pub fn from_term(t: &InternalTerm) -> Option<Value> {
        Some(match &t.kind {
            Internal::Lam(q, x, b) => Value::Closure { q: *q, param: x.clone(), body: (**b).clone() },
            Internal::Pair(a, b) => Value::Pair(Box::new(Value::from_term(a)?), Box::new(Value::from_term(b)?)),
            Internal::Inl(a) => Value::Inl(Box::new(Value::from_term(a)?)),
            Internal::Inr(a) => Value::Inr(Box::new(Value::from_term(a)?)),
            Internal::Unit => Value::Unit,
            Internal::Loc(l) => Value::Loc(*l),
            _ => return None,
        })
    }

    pub fn to_term(&self) -> InternalTerm {
        match self {
            Value::Closure { q, param, body } => InternalTerm::lam(*q, param.clone(), body.clone()),
            Value::Pair(a, b) => InternalTerm::pair(a.to_term(), b.to_term()),
            Value::Inl(a) => InternalTerm::inl(a.to_term()),
            Value::Inr(a) => InternalTerm::inr(a.to_term()),
            Value::Unit => InternalTerm::unit(),
            Value::Loc(l) => InternalTerm::loc(*l),
        }
    }

    pub fn locs(&self) -> LocMultiset {
        match self {
            Value::Closure { body, .. } => locs(body),
            Value::Pair(a, b) => a.locs().sum(&b.locs()),
            Value::Inl(a) | Value::Inr(a) => a.locs(),
            Value::Unit => LocMultiset::new(),
            Value::Loc(l) => LocMultiset::singleton(*l),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_term())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LocMultiset(BTreeMap<Location, usize>);

impl LocMultiset {
    pub fn new() -> Self {
        LocMultiset(BTreeMap::new())
    }

    pub fn singleton(l: Location) -> Self {
        LocMultiset(BTreeMap::from([(l, 1)]))
    }

    pub fn count(&self, l: Location) -> usize {
        self.0.get(&l).copied().unwrap_or(0)
    }

    pub fn add(&mut self, l: Location, n: usize) {
        if n > 0 {
            *self.0.entry(l).or_insert(0) += n;
        }
    }

    pub fn sum(&self, other: &LocMultiset) -> LocMultiset {
        let mut out = self.clone();
        for (l, n) in &other.0 {
            out.add(*l, *n);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Location, usize)> + '_ {
        self.0.iter().map(|(l, n)| (*l, *n))
    }
}

impl FromIterator<Location> for LocMultiset {
    fn from_iter<I: IntoIterator<Item = Location>>(iter: I) -> Self {
        let mut m = LocMultiset::new();
        for l in iter {
            m.add(l, 1);
        }
        m
    }
}

/// Locations a term holds. A case counts its scrutinee and first branch
/// only, since both branches hold the same ones.
pub fn locs(t: &InternalTerm) -> LocMultiset {
    match &t.kind {
        Internal::Loc(l) => LocMultiset::singleton(*l),
        Internal::Var(_) | Internal::Global(_) | Internal::Unit => LocMultiset::new(),
        Internal::Lam(_, _, b) | Internal::Inl(b) | Internal::Inr(b) | Internal::New(_, b) | Internal::Release(_, b) => {
            locs(b)
        }
        Internal::App(a, b)
        | Internal::Pair(a, b)
        | Internal::Swap(_, a, b)
        | Internal::Let(_, a, b)
        | Internal::LetPair(_, _, a, b)
        | Internal::Dup(a, _, _, b)
        | Internal::Drop(a, b) => locs(a).sum(&locs(b)),
        Internal::Case { scrut, left, .. } => locs(scrut).sum(&locs(&left.1)),
    }
}

/// Finds a case whose branches hold different locations.
fn branch_mismatch(t: &InternalTerm) -> Option<&InternalTerm> {
    match &t.kind {
        Internal::Loc(_) | Internal::Var(_) | Internal::Global(_) | Internal::Unit => None,
        Internal::Lam(_, _, b) | Internal::Inl(b) | Internal::Inr(b) | Internal::New(_, b) | Internal::Release(_, b) => {
            branch_mismatch(b)
        }
        Internal::App(a, b)
        | Internal::Pair(a, b)
        | Internal::Swap(_, a, b)
        | Internal::Let(_, a, b)
        | Internal::LetPair(_, _, a, b)
        | Internal::Dup(a, _, _, b)
        | Internal::Drop(a, b) => branch_mismatch(a).or_else(|| branch_mismatch(b)),
        Internal::Case { scrut, left, right } => {
            if locs(&left.1) != locs(&right.1) {
                return Some(t);
            }
            branch_mismatch(scrut).or_else(|| branch_mismatch(&left.1)).or_else(|| branch_mismatch(&right.1))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub count: usize,
    pub qual: RefQual,
    pub value: Value,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Store(BTreeMap<Location, Cell>);

impl Store {
    pub fn new() -> Self {
        Store(BTreeMap::new())
    }

    pub fn get(&self, l: Location) -> Option<&Cell> {
        self.0.get(&l)
    }

    pub fn insert(&mut self, l: Location, cell: Cell) {
        self.0.insert(l, cell);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Location, &Cell)> {
        self.0.iter().map(|(l, c)| (*l, c))
    }

    pub fn incr(&mut self, ls: &LocMultiset) -> Result<(), EvalError> {
        for (l, n) in ls.iter() {
            self.0.get_mut(&l).ok_or(EvalError::MissingLocation(l))?.count += n;
        }
        Ok(())
    }

    /// Lowers counts, freeing cells that reach zero and releasing whatever
    /// their contents held.
    pub fn decr(&mut self, ls: &LocMultiset) -> Result<(), EvalError> {
        let mut work: Vec<(Location, usize)> = ls.iter().collect();
        while let Some((l, n)) = work.pop() {
            let cell = self.0.get_mut(&l).ok_or(EvalError::MissingLocation(l))?;
            if cell.count > n {
                cell.count -= n;
                continue;
            }
            let extra = n - cell.count;
            let cell = self.0.remove(&l).expect("present");
            if extra > 0 {
                return Err(EvalError::MissingLocation(l));
            }
            work.extend(cell.value.locs().iter());
        }
        Ok(())
    }

    /// Sum of the locations held by all stored values.
    pub fn held(&self) -> LocMultiset {
        self.0.values().fold(LocMultiset::new(), |acc, c| acc.sum(&c.value.locs()))
    }
}

impl fmt::Display for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (l, c)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{l}↦{} {}", c.count, c.value)?;
        }
        write!(f, "}}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub store: Store,
    pub term: InternalTerm,
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{}, {}⟩", self.store, self.term)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Next(Config),
    Done(Value, Store),
    Stuck(String),
}

// ---------------------------------------------------------------------------
// Substitution

/// `t[v/x]` for a closed value `v`.
pub fn subst(t: &InternalTerm, x: &str, v: &InternalTerm) -> InternalTerm {
    let go = |e: &InternalTerm| Box::new(subst(e, x, v));
    let under = |bound: &[&Name], e: &InternalTerm| {
        if bound.iter().any(|b| *b == x) {
            Box::new(e.clone())
        } else {
            Box::new(subst(e, x, v))
        }
    };
    let kind = match &t.kind {
        Internal::Var(y) if y == x => return v.clone(),
        Internal::Var(_) | Internal::Global(_) | Internal::Unit | Internal::Loc(_) => return t.clone(),
        Internal::Lam(q, y, b) => Internal::Lam(*q, y.clone(), under(&[y], b)),
        Internal::App(a, b) => Internal::App(go(a), go(b)),
        Internal::Pair(a, b) => Internal::Pair(go(a), go(b)),
        Internal::Swap(q, a, b) => Internal::Swap(*q, go(a), go(b)),
        Internal::Let(y, r, b) => Internal::Let(y.clone(), go(r), under(&[y], b)),
        Internal::LetPair(y, z, r, b) => Internal::LetPair(y.clone(), z.clone(), go(r), under(&[y, z], b)),
        Internal::Inl(a) => Internal::Inl(go(a)),
        Internal::Inr(a) => Internal::Inr(go(a)),
        Internal::New(q, a) => Internal::New(*q, go(a)),
        Internal::Release(q, a) => Internal::Release(*q, go(a)),
        Internal::Case { scrut, left, right } => Internal::Case {
            scrut: go(scrut),
            left: (left.0.clone(), under(&[&left.0], &left.1)),
            right: (right.0.clone(), under(&[&right.0], &right.1)),
        },
        Internal::Dup(s, y, z, b) => Internal::Dup(go(s), y.clone(), z.clone(), under(&[y, z], b)),
        Internal::Drop(s, b) => Internal::Drop(go(s), go(b)),
    };
    InternalTerm::at(kind, t.pos)
}

// ---------------------------------------------------------------------------
// The machine

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub step_limit: usize,
    pub trace: bool,
    /// Check every configuration against this type.
    pub expect: Option<Type>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { step_limit: 100_000, trace: false, expect: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub value: Value,
    pub store: Store,
    pub steps: usize,
    pub trace: Vec<String>,
}

/// Definitions and types of the top-level names a term may mention.
#[derive(Clone, Debug, Default)]
pub struct Runtime {
    pub defs: BTreeMap<Name, InternalTerm>,
    pub env: TypeEnv,
}

impl Runtime {
    pub fn new() -> Self {
        Runtime::default()
    }

    pub fn from_program(p: &CheckedProgram) -> Self {
        Runtime {
            defs: p.defs.iter().map(|d| (d.name.clone(), d.internal.clone())).collect(),
            env: p.env(),
        }
    }

    /// Runs the monomorphic definition `name` in an empty store. When
    /// checking, its type is the expected type of every configuration.
    pub fn run_entry(&self, name: &str, mut opts: RunOptions, checked: bool) -> Result<Outcome, EvalError> {
        if !self.defs.contains_key(name) {
            return Err(EvalError::UnknownEntry(name.to_string()));
        }
        let scheme = &self.env[name];
        if !scheme.vars.is_empty() {
            return Err(EvalError::PolymorphicEntry { name: name.to_string(), scheme: scheme.to_string() });
        }
        if checked {
            opts.expect = Some(scheme.ty.clone());
        }
        self.run(InternalTerm::new(Internal::Global(name.to_string())), &opts)
    }

    pub fn run(&self, t: InternalTerm, opts: &RunOptions) -> Result<Outcome, EvalError> {
        let mut m = Machine { rt: self, store: Store::new(), next: 0 };
        let mut term = t;
        let mut trace = Vec::new();
        let mut steps = 0usize;
        loop {
            if opts.trace {
                trace.push(Config { store: m.store.clone(), term: term.clone() }.to_string());
            }
            if let Some(expected) = &opts.expect {
                self.check_config(&m.store, &term, expected, steps)?;
            }
            if let Some(value) = Value::from_term(&term) {
                return Ok(Outcome { value, store: m.store, steps, trace });
            }
            if steps >= opts.step_limit {
                return Err(EvalError::StepLimitExceeded { limit: opts.step_limit });
            }
            term = m.reduce(term)?;
            steps += 1;
        }
    }

    /// One step from `c`.
    pub fn step(&self, c: Config) -> Step {
        if let Some(v) = Value::from_term(&c.term) {
            return Step::Done(v, c.store);
        }
        let next = c.store.0.keys().next_back().map_or(0, |l| l.0 + 1);
        let mut m = Machine { rt: self, store: c.store, next };
        match m.reduce(c.term) {
            Ok(term) => Step::Next(Config { store: m.store, term }),
            Err(EvalError::Stuck { term, reason }) => Step::Stuck(format!("{reason}: {term}")),
            Err(e) => Step::Stuck(e.to_string()),
        }
    }

    /// Types the store and the term, checks the term has type `expected`,
    /// and checks every count against the references that exist.
    pub fn check_config(&self, store: &Store, term: &InternalTerm, expected: &Type, step: usize) -> Result<(), EvalError> {
        check_acyclic(store, step)?;
        let mut ck = Checker::new(&self.env);
        let mut contents = BTreeMap::new();
        for (l, cell) in store.iter() {
            let a = ck.fresh();
            ck.bind_location(l, Type::reference(cell.qual, a.clone()));
            contents.insert(l, a);
        }
        for (l, cell) in store.iter() {
            let ill = |e: TypeError| EvalError::IllTypedStoreValue { step, loc: l, message: e.to_string() };
            let tv = ck.infer(&cell.value.to_term()).map_err(ill)?;
            ck.unify(&contents[&l], &tv, Pos::default()).map_err(ill)?;
        }
        let violation = |got: String| EvalError::PreservationViolation { step, expected: expected.clone(), got };
        let ty = ck.infer(term).map_err(|e| violation(e.to_string()))?;
        if let Err(e) = ck.unify(expected, &ty, term.pos) {
            return Err(violation(format!("it has type `{}` ({e})", ck.subst().apply(&ty))));
        }
        ck.finish().map_err(|e| violation(e.to_string()))?;

        for t in std::iter::once(term.clone()).chain(store.iter().map(|(_, c)| c.value.to_term())) {
            if let Some(bad) = branch_mismatch(&t) {
                return Err(EvalError::BranchLocsMismatch { step, term: bad.to_string() });
            }
        }
        let demand = locs(term).sum(&store.held());
        for (l, cell) in store.iter() {
            let d = demand.count(l);
            if d != cell.count || (cell.qual == RefQual::S && d != 1) {
                return Err(EvalError::CountInvariantViolation { step, loc: l, count: cell.count, demand: d });
            }
        }
        for (l, d) in demand.iter() {
            if store.get(l).is_none() {
                return Err(EvalError::CountInvariantViolation { step, loc: l, count: 0, demand: d });
            }
        }
        Ok(())
    }
}

fn check_acyclic(store: &Store, step: usize) -> Result<(), EvalError> {
    fn visit(store: &Store, l: Location, path: &mut Vec<Location>, done: &mut BTreeSet<Location>) -> Result<(), Location> {
        if done.contains(&l) {
            return Ok(());
        }
        if path.contains(&l) {
            return Err(l);
        }
        path.push(l);
        if let Some(cell) = store.get(l) {
            for (m, _) in cell.value.locs().iter() {
                visit(store, m, path, done)?;
            }
        }
        path.pop();
        done.insert(l);
        Ok(())
    }
    let mut done = BTreeSet::new();
    for (l, _) in store.iter() {
        visit(store, l, &mut Vec::new(), &mut done).map_err(|loc| EvalError::CyclicStore { step, loc })?;
    }
    Ok(())
}

/// Runs a closed term that mentions no top-level names.
pub fn run(t: InternalTerm, opts: &RunOptions) -> Result<Outcome, EvalError> {
    Runtime::new().run(t, opts)
}

struct Machine<'r> {
    rt: &'r Runtime,
    store: Store,
    next: u64,
}

fn stuck<T>(t: &InternalTerm, reason: &str) -> Result<T, EvalError> {
    Err(EvalError::Stuck { term: t.to_string(), reason: reason.to_string() })
}

impl Machine<'_> {
    fn value(&self, t: &InternalTerm) -> Option<Value> {
        Value::from_term(t)
    }

    /// Performs the single step of `t`: the leftmost redex outside any
    /// lambda is contracted.
    fn reduce(&mut self, t: InternalTerm) -> Result<InternalTerm, EvalError> {
        let pos = t.pos;
        let at = |kind| InternalTerm::at(kind, pos);
        match t.kind {
            Internal::Global(ref g) => match self.rt.defs.get(g) {
                Some(def) => Ok(def.clone()),
                None => stuck(&t, "unknown top-level name"),
            },
            Internal::Var(_) => stuck(&t, "free variable"),
            Internal::Unit | Internal::Loc(_) | Internal::Lam(..) => stuck(&t, "already a value"),
            Internal::App(f, a) => {
                if !f.is_value() {
                    return Ok(at(Internal::App(Box::new(self.reduce(*f)?), a)));
                }
                if !a.is_value() {
                    return Ok(at(Internal::App(f, Box::new(self.reduce(*a)?))));
                }
                match f.kind {
                    Internal::Lam(_, x, body) => Ok(subst(&body, &x, &a)),
                    _ => stuck(&InternalTerm::at(Internal::App(f, a), pos), "applying a non-function"),
                }
            }
            Internal::Pair(a, b) => {
                if !a.is_value() {
                    Ok(at(Internal::Pair(Box::new(self.reduce(*a)?), b)))
                } else {
                    Ok(at(Internal::Pair(a, Box::new(self.reduce(*b)?))))
                }
            }
            Internal::Inl(a) => Ok(at(Internal::Inl(Box::new(self.reduce(*a)?)))),
            Internal::Inr(a) => Ok(at(Internal::Inr(Box::new(self.reduce(*a)?)))),
            Internal::Let(x, r, body) => {
                if !r.is_value() {
                    return Ok(at(Internal::Let(x, Box::new(self.reduce(*r)?), body)));
                }
                Ok(subst(&body, &x, &r))
            }
            Internal::LetPair(x, y, r, body) => {
                if !r.is_value() {
                    return Ok(at(Internal::LetPair(x, y, Box::new(self.reduce(*r)?), body)));
                }
                match r.kind {
                    Internal::Pair(a, b) => Ok(subst(&subst(&body, &x, &a), &y, &b)),
                    kind => stuck(&InternalTerm::at(kind, pos), "unpacking a non-pair"),
                }
            }
            Internal::Case { scrut, left, right } => {
                if !scrut.is_value() {
                    let scrut = Box::new(self.reduce(*scrut)?);
                    return Ok(at(Internal::Case { scrut, left, right }));
                }
                match scrut.kind {
                    Internal::Inl(v) => Ok(subst(&left.1, &left.0, &v)),
                    Internal::Inr(v) => Ok(subst(&right.1, &right.0, &v)),
                    kind => stuck(&InternalTerm::at(kind, pos), "case on a non-injection"),
                }
            }
            Internal::New(q, a) => {
                if !a.is_value() {
                    return Ok(at(Internal::New(q, Box::new(self.reduce(*a)?))));
                }
                let l = Location(self.next);
                self.next += 1;
                let value = self.value(&a).expect("checked value");
                self.store.insert(l, Cell { count: 1, qual: q, value });
                Ok(at(Internal::Loc(l)))
            }
            Internal::Release(q, a) => {
                if !a.is_value() {
                    return Ok(at(Internal::Release(q, Box::new(self.reduce(*a)?))));
                }
                let Internal::Loc(l) = a.kind else {
                    return stuck(&a, "releasing a non-reference");
                };
                let Some(cell) = self.store.get(l) else {
                    return stuck(&a, "dangling reference");
                };
                match (q, cell.count) {
                    (RefQual::S, 1) => Ok(self.store.0.remove(&l).expect("present").value.to_term()),
                    (RefQual::S, _) => stuck(&a, "strong release of an aliased cell"),
                    (RefQual::W, 1) => {
                        let v = self.store.0.remove(&l).expect("present").value.to_term();
                        Ok(at(Internal::Inr(Box::new(v))))
                    }
                    (RefQual::W, _) => {
                        self.store.0.get_mut(&l).expect("present").count -= 1;
                        Ok(at(Internal::Inl(Box::new(InternalTerm::unit()))))
                    }
                }
            }
            Internal::Swap(q, r, v) => {
                if !r.is_value() {
                    return Ok(at(Internal::Swap(q, Box::new(self.reduce(*r)?), v)));
                }
                if !v.is_value() {
                    return Ok(at(Internal::Swap(q, r, Box::new(self.reduce(*v)?))));
                }
                let Internal::Loc(l) = r.kind else {
                    return stuck(&r, "swapping a non-reference");
                };
                let new = self.value(&v).expect("checked value");
                let Some(cell) = self.store.0.get_mut(&l) else {
                    return stuck(&r, "dangling reference");
                };
                let old = std::mem::replace(&mut cell.value, new);
                Ok(at(Internal::Pair(r, Box::new(old.to_term()))))
            }
            Internal::Dup(src, x1, x2, body) => {
                if !src.is_value() {
                    return Ok(at(Internal::Dup(Box::new(self.reduce(*src)?), x1, x2, body)));
                }
                self.store.incr(&locs(&src))?;
                Ok(subst(&subst(&body, &x1, &src), &x2, &src))
            }
            Internal::Drop(src, body) => {
                if !src.is_value() {
                    return Ok(at(Internal::Drop(Box::new(self.reduce(*src)?), body)));
                }
                self.store.decr(&locs(&src))?;
                Ok(*body)
            }
        }
    }
}
