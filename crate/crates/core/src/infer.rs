//! Type inference for internal terms.
//!
//! Inference is Damas-Hindley-Milner over the explicitly linear internal
//! language produced by elaboration. Structural requirements show up as
//! `Dup`/`Drop` predicates: every `dup` node asks for `Dup` of the type it
//! copies, every `drop` node for `Drop`, and a closure with qualifier `q`
//! asks for whatever `q` demands of the values it captures.
//!
//! Two pieces of bookkeeping go beyond plain unification:
//!
//! * applying a function whose type is still a variable, and using a
//!   reference with a weak operation before its qualifier is known, create
//!   deferred obligations. They are resolved once the type is known.
//!   Otherwise a function gets the least restrictive qualifier meeting the
//!   `Dup`/`Drop` requirements on it, and a reference becomes weak;
//! * `let` generalizes only syntactic values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ast::{
    pretty_var_names, ArrowQual, Class, ConstraintSet, Internal, InternalTerm, Location, Name, Pos, Pred, RefQual,
    Scheme, Type,
};
use crate::classes::{constrain_env, instances, IrreduciblePredicate};
use crate::elaborate::{elaborate_program, ElabDef, ElabError};
use crate::parser::Program;

pub type TypeEnv = BTreeMap<Name, Scheme>;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("{pos}: type mismatch: expected `{expected}`, found `{found}`")]
    ConstructorMismatch { pos: Pos, expected: Type, found: Type },
    #[error("{pos}: qualifier mismatch: expected `{expected}`, found `{found}`")]
    QualifierMismatch { pos: Pos, expected: Type, found: Type },
    #[error("{pos}: cannot construct the infinite type `{var}` = `{ty}`")]
    OccursCheck { pos: Pos, var: Name, ty: Type },
    #[error("{pos}: unbound variable `{name}`")]
    UnboundVariable { pos: Pos, name: Name },
    #[error("{pos}: no instance for `{pred}` arising from {origin}")]
    IrreduciblePredicate { pos: Pos, pred: Pred, origin: String },
    #[error("{pos}: ambiguous constraint `{pred}` in `{name}`: the variable does not occur in the type `{ty}`")]
    AmbiguousScheme { pos: Pos, name: Name, pred: Pred, ty: Type },
    #[error("{pos}: signature for `{name}` is `{declared}`, but the inferred type is `{inferred}`")]
    SignatureMismatch { pos: Pos, name: Name, declared: Box<Scheme>, inferred: Box<Scheme> },
    #[error("{pos}: top-level definition `{name} :: {scheme}` must be duplicable and droppable, but `{pred}` does not hold")]
    TopLevelNotUnlimited { pos: Pos, name: Name, scheme: Box<Scheme>, pred: Pred },
}

impl TypeError {
    pub fn pos(&self) -> Pos {
        match self {
            TypeError::ConstructorMismatch { pos, .. }
            | TypeError::QualifierMismatch { pos, .. }
            | TypeError::OccursCheck { pos, .. }
            | TypeError::UnboundVariable { pos, .. }
            | TypeError::IrreduciblePredicate { pos, .. }
            | TypeError::AmbiguousScheme { pos, .. }
            | TypeError::SignatureMismatch { pos, .. }
            | TypeError::TopLevelNotUnlimited { pos, .. } => *pos,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            TypeError::ConstructorMismatch { .. } => "ConstructorMismatch",
            TypeError::QualifierMismatch { .. } => "QualifierMismatch",
            TypeError::OccursCheck { .. } => "OccursCheck",
            TypeError::UnboundVariable { .. } => "UnboundVariable",
            TypeError::IrreduciblePredicate { .. } => "IrreduciblePredicate",
            TypeError::AmbiguousScheme { .. } => "AmbiguousScheme",
            TypeError::SignatureMismatch { .. } => "SignatureMismatch",
            TypeError::TopLevelNotUnlimited { .. } => "TopLevelNotUnlimited",
        }
    }
}

/// An error in a whole program, tagged with the definition it occurred in.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error(transparent)]
    Elab(#[from] ElabError),
    #[error("{error} (in `{name}`)")]
    Type { name: Name, error: Box<TypeError> },
}

impl ProgramError {
    pub fn pos(&self) -> Pos {
        match self {
            ProgramError::Elab(ElabError::ShadowsTopLevel { pos, .. })
            | ProgramError::Elab(ElabError::NotWellFormed { pos, .. }) => *pos,
            ProgramError::Elab(ElabError::TooLarge { .. }) => Pos::default(),
            ProgramError::Type { error, .. } => error.pos(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProgramError::Elab(ElabError::ShadowsTopLevel { .. }) => "ShadowsTopLevel",
            ProgramError::Elab(_) => "NotWellFormed",
            ProgramError::Type { error, .. } => error.kind(),
        }
    }
}

// ---------------------------------------------------------------------------
// Substitutions and unification

/// Idempotent substitution on type variables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Subst(BTreeMap<Name, Type>);

impl Subst {
    pub fn new() -> Self {
        Subst(BTreeMap::new())
    }

    pub fn get(&self, v: &str) -> Option<&Type> {
        self.0.get(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Name, &Type)> {
        self.0.iter()
    }

    pub fn apply(&self, t: &Type) -> Type {
        if self.0.is_empty() {
            return t.clone();
        }
        match t {
            Type::Var(v) => self.0.get(v).cloned().unwrap_or_else(|| t.clone()),
            Type::Unit => Type::Unit,
            Type::Arrow(a, b, q) => Type::arrow(self.apply(a), self.apply(b), *q),
            Type::Prod(a, b) => Type::prod(self.apply(a), self.apply(b)),
            Type::Sum(a, b) => Type::sum(self.apply(a), self.apply(b)),
            Type::Ref(q, a) => Type::reference(*q, self.apply(a)),
        }
    }

    pub fn apply_pred(&self, p: &Pred) -> Pred {
        Pred::new(p.class, self.apply(&p.ty))
    }

    pub fn apply_constraints(&self, cs: &ConstraintSet) -> ConstraintSet {
        cs.iter().map(|p| self.apply_pred(p)).collect()
    }

    /// Applies the substitution to the free variables of a scheme.
    pub fn apply_scheme(&self, s: &Scheme) -> Scheme {
        if s.vars.is_empty() {
            return Scheme { vars: Vec::new(), constraints: self.apply_constraints(&s.constraints), ty: self.apply(&s.ty) };
        }
        let mut inner = self.clone();
        for v in &s.vars {
            inner.0.remove(v);
        }
        Scheme { vars: s.vars.clone(), constraints: inner.apply_constraints(&s.constraints), ty: inner.apply(&s.ty) }
    }

    /// Adds `v := t`, where `t` is already fully substituted.
    fn bind(&mut self, v: Name, t: Type) {
        let single = Subst(BTreeMap::from([(v.clone(), t.clone())]));
        for ty in self.0.values_mut() {
            *ty = single.apply(ty);
        }
        self.0.insert(v, t);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Clash {
    Constructor,
    Qualifier,
}

/// Most general unifier of two types.
pub fn unify(t1: &Type, t2: &Type) -> Result<Subst, TypeError> {
    let mut s = Subst::new();
    unify_into(&mut s, t1, t2, Pos::default())?;
    Ok(s)
}

fn unify_into(s: &mut Subst, t1: &Type, t2: &Type, pos: Pos) -> Result<(), TypeError> {
    let (a, b) = (s.apply(t1), s.apply(t2));
    match unify_step(s, &a, &b) {
        Ok(()) => Ok(()),
        Err(UnifyFail::Clash(kind)) => {
            let (expected, found) = prettify_pair(&s.apply(t1), &s.apply(t2));
            Err(match kind {
                Clash::Constructor => TypeError::ConstructorMismatch { pos, expected, found },
                Clash::Qualifier => TypeError::QualifierMismatch { pos, expected, found },
            })
        }
        Err(UnifyFail::Occurs(var, ty)) => Err(TypeError::OccursCheck { pos, var, ty }),
    }
}

enum UnifyFail {
    Clash(Clash),
    Occurs(Name, Type),
}

fn unify_step(s: &mut Subst, a: &Type, b: &Type) -> Result<(), UnifyFail> {
    let (a, b) = (s.apply(a), s.apply(b));
    match (&a, &b) {
        (Type::Var(x), Type::Var(y)) if x == y => Ok(()),
        (Type::Var(x), t) | (t, Type::Var(x)) => {
            if t.free_type_vars().contains(x) {
                return Err(UnifyFail::Occurs(x.clone(), t.clone()));
            }
            s.bind(x.clone(), t.clone());
            Ok(())
        }
        (Type::Unit, Type::Unit) => Ok(()),
        (Type::Arrow(a1, a2, q1), Type::Arrow(b1, b2, q2)) => {
            if q1 != q2 {
                return Err(UnifyFail::Clash(Clash::Qualifier));
            }
            unify_step(s, a1, b1)?;
            unify_step(s, a2, b2)
        }
        (Type::Prod(a1, a2), Type::Prod(b1, b2)) | (Type::Sum(a1, a2), Type::Sum(b1, b2)) => {
            unify_step(s, a1, b1)?;
            unify_step(s, a2, b2)
        }
        (Type::Ref(q1, a1), Type::Ref(q2, b1)) => {
            if q1 != q2 {
                return Err(UnifyFail::Clash(Clash::Qualifier));
            }
            unify_step(s, a1, b1)
        }
        _ => Err(UnifyFail::Clash(Clash::Constructor)),
    }
}

/// Renames inference variables to `a`, `b`, ... consistently across types.
fn prettify_all(ts: &[&Type]) -> Vec<Type> {
    let mut order: Vec<Name> = Vec::new();
    for t in ts {
        for v in t.vars_in_order() {
            if !order.contains(&v) {
                order.push(v);
            }
        }
    }
    let taken: BTreeSet<&Name> = order.iter().filter(|v| !v.contains('#')).collect();
    let mut names = pretty_var_names().filter(|n| !taken.contains(n));
    let map: BTreeMap<Name, Name> = order
        .iter()
        .filter(|v| v.contains('#'))
        .map(|v| (v.clone(), names.next().expect("infinite supply")))
        .collect();
    ts.iter().map(|t| t.rename(&map)).collect()
}

fn prettify_pair(a: &Type, b: &Type) -> (Type, Type) {
    let mut v = prettify_all(&[a, b]).into_iter();
    (v.next().unwrap(), v.next().unwrap())
}

fn prettify_pred(p: &Pred) -> Pred {
    Pred::new(p.class, prettify_all(&[&p.ty]).remove(0))
}

// ---------------------------------------------------------------------------
// Inference state

/// Where a predicate came from, for error messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Origin {
    pub pos: Pos,
    pub what: String,
}

#[derive(Clone, Debug)]
enum Obligation {
    /// A function of unknown type applied to `arg`, producing `res`.
    App { fun: Type, arg: Type, res: Type, pos: Pos },
    /// A weak operation on `r`, whose contents have type `content`.
    WeakRef { r: Type, content: Type, pos: Pos },
}

impl Obligation {
    fn head(&self) -> &Type {
        match self {
            Obligation::App { fun, .. } => fun,
            Obligation::WeakRef { r, .. } => r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum UseKey {
    Var(usize),
    Loc(Location),
}

#[derive(Clone, Debug)]
enum UseTy {
    Mono(Type),
    Poly(Scheme),
}

struct Binding {
    name: Name,
    id: usize,
    scheme: Scheme,
}

/// Mutable state of one inference run.
pub struct Checker<'g> {
    globals: &'g TypeEnv,
    subst: Subst,
    counter: usize,
    next_id: usize,
    locals: Vec<Binding>,
    locations: BTreeMap<Location, Type>,
    preds: Vec<(Pred, Origin)>,
    obligations: Vec<Obligation>,
    uses: Vec<(UseKey, Name, UseTy)>,
}

/// Constraints of a finished run, reduced to predicates on variables.
pub type Residual = Vec<(Pred, Origin)>;

impl<'g> Checker<'g> {
    pub fn new(globals: &'g TypeEnv) -> Self {
        Checker {
            globals,
            subst: Subst::new(),
            counter: 0,
            next_id: 0,
            locals: Vec::new(),
            locations: BTreeMap::new(),
            preds: Vec::new(),
            obligations: Vec::new(),
            uses: Vec::new(),
        }
    }

    pub fn fresh(&mut self) -> Type {
        self.counter += 1;
        Type::Var(format!("t#{}", self.counter))
    }

    pub fn subst(&self) -> &Subst {
        &self.subst
    }

    /// Brings a free variable into scope for the rest of the run.
    pub fn bind_local(&mut self, name: &str, scheme: Scheme) {
        self.push(name, scheme);
    }

    /// Declares the type of a store location.
    pub fn bind_location(&mut self, l: Location, ty: Type) {
        self.locations.insert(l, ty);
    }

    pub fn unify(&mut self, a: &Type, b: &Type, pos: Pos) -> Result<(), TypeError> {
        unify_into(&mut self.subst, a, b, pos)
    }

    pub fn require(&mut self, pred: Pred, pos: Pos, what: impl Into<String>) {
        self.preds.push((pred, Origin { pos, what: what.into() }));
    }

    fn push(&mut self, name: &str, scheme: Scheme) -> usize {
        self.next_id += 1;
        self.locals.push(Binding { name: name.to_string(), id: self.next_id, scheme });
        self.next_id
    }

    fn pop(&mut self, n: usize) {
        for _ in 0..n {
            self.locals.pop();
        }
    }

    fn lookup(&self, x: &str) -> Option<(usize, &Scheme)> {
        self.locals.iter().rev().find(|b| b.name == x).map(|b| (b.id, &b.scheme))
    }

    fn instantiate(&mut self, s: &Scheme, pos: Pos, what: &str) -> Type {
        let s = self.subst.apply_scheme(s);
        if s.vars.is_empty() {
            return s.ty;
        }
        let map: BTreeMap<Name, Name> = s
            .vars
            .iter()
            .map(|v| {
                let Type::Var(fresh) = self.fresh() else { unreachable!() };
                (v.clone(), fresh)
            })
            .collect();
        for p in &s.constraints {
            self.require(p.rename(&map), pos, what.to_string());
        }
        s.ty.rename(&map)
    }

    /// Type variables free in the local environment and the store typing.
    fn env_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        for b in &self.locals {
            out.extend(self.subst.apply_scheme(&b.scheme).free_type_vars());
        }
        for t in self.locations.values() {
            out.extend(self.subst.apply(t).free_type_vars());
        }
        out
    }

    // -- obligations -------------------------------------------------------

    fn discharge(&mut self, ob: Obligation, head: Type) -> Result<(), TypeError> {
        match ob {
            Obligation::App { fun, arg, res, pos } => {
                let q = match head {
                    Type::Arrow(_, _, q) => q,
                    _ => self.default_qualifier(&head),
                };
                self.unify(&fun, &Type::arrow(arg, res, q), pos)
            }
            Obligation::WeakRef { r, content, pos } => {
                let q = match head {
                    Type::Ref(q, _) => q,
                    _ => RefQual::W,
                };
                self.unify(&r, &Type::reference(q, content), pos)
            }
        }
    }

    /// The least restrictive qualifier for an applied function of unknown
    /// type `v` that meets the `Dup`/`Drop` requirements already placed on it.
    fn default_qualifier(&self, v: &Type) -> ArrowQual {
        let (mut dup, mut drop) = (false, false);
        for (p, _) in &self.preds {
            let applied = ConstraintSet::from_iter([self.subst.apply_pred(p)]);
            let Ok(reduced) = instances().reduce_context(&applied) else { continue };
            for r in reduced.iter().filter(|r| r.ty == *v) {
                match r.class {
                    Class::Dup => dup = true,
                    Class::Drop => drop = true,
                }
            }
        }
        match (dup, drop) {
            (true, true) => ArrowQual::U,
            (true, false) => ArrowQual::R,
            (false, true) => ArrowQual::A,
            (false, false) => ArrowQual::L,
        }
    }

    /// Discharges obligations whose head type is known. With `force`,
    /// obligations whose head is a variable outside `keep` take the default.
    fn solve_obligations(&mut self, force: bool, keep: &BTreeSet<Name>) -> Result<(), TypeError> {
        loop {
            let mut progress = false;
            let pending = std::mem::take(&mut self.obligations);
            let mut waiting = Vec::new();
            for ob in pending {
                let head = self.subst.apply(ob.head());
                if head.is_var() {
                    waiting.push(ob);
                } else {
                    self.discharge(ob, head)?;
                    progress = true;
                }
            }
            self.obligations = waiting;
            if progress {
                continue;
            }
            if !force {
                return Ok(());
            }
            let idx = self.obligations.iter().position(|ob| match self.subst.apply(ob.head()) {
                Type::Var(v) => !keep.contains(&v),
                _ => true,
            });
            match idx {
                Some(i) => {
                    let ob = self.obligations.remove(i);
                    let head = self.subst.apply(ob.head());
                    self.discharge(ob, head)?;
                }
                None => return Ok(()),
            }
        }
    }

    // -- constraints -------------------------------------------------------

    /// Reduces the accumulated predicates to predicates on variables.
    fn reduce(&self, preds: Vec<(Pred, Origin)>) -> Result<Residual, TypeError> {
        let mut out: Vec<(Pred, Origin)> = Vec::new();
        for (p, origin) in preds {
            let applied = self.subst.apply_pred(&p);
            let reduced = instances()
                .reduce_context(&ConstraintSet::from_iter([applied]))
                .map_err(|IrreduciblePredicate(bad)| TypeError::IrreduciblePredicate {
                    pos: origin.pos,
                    pred: prettify_pred(&bad),
                    origin: origin.what.clone(),
                })?;
            for r in reduced {
                if !out.iter().any(|(q, _)| *q == r) {
                    out.push((r, origin.clone()));
                }
            }
        }
        Ok(out)
    }

    /// Finishes a run: resolves all obligations and reduces every predicate.
    pub fn finish(&mut self) -> Result<Residual, TypeError> {
        self.solve_obligations(true, &BTreeSet::new())?;
        let preds = std::mem::take(&mut self.preds);
        self.reduce(preds)
    }

    // -- terms -------------------------------------------------------------

    pub fn infer(&mut self, t: &InternalTerm) -> Result<Type, TypeError> {
        let pos = t.pos;
        match &t.kind {
            Internal::Var(x) => {
                let Some((id, scheme)) = self.lookup(x) else {
                    return Err(TypeError::UnboundVariable { pos, name: x.clone() });
                };
                let scheme = scheme.clone();
                let ty = self.instantiate(&scheme, pos, &format!("the use of `{x}`"));
                self.uses.push((UseKey::Var(id), x.clone(), UseTy::Mono(ty.clone())));
                Ok(ty)
            }
            Internal::Global(g) => match self.globals.get(g) {
                Some(s) => Ok(self.instantiate(s, pos, &format!("the use of `{g}`"))),
                None => Err(TypeError::UnboundVariable { pos, name: g.clone() }),
            },
            Internal::Loc(l) => match self.locations.get(l).cloned() {
                Some(ty) => {
                    self.uses.push((UseKey::Loc(*l), l.to_string(), UseTy::Mono(ty.clone())));
                    Ok(ty)
                }
                None => Err(TypeError::UnboundVariable { pos, name: l.to_string() }),
            },
            Internal::Unit => Ok(Type::Unit),
            Internal::Lam(q, x, body) => {
                let outer: BTreeSet<usize> = self.locals.iter().map(|b| b.id).collect();
                let mark = self.uses.len();
                let a = self.fresh();
                self.push(x, Scheme::mono(a.clone()));
                let result = self.infer(body);
                self.pop(1);
                let b = result?;
                self.constrain_captures(*q, &outer, mark, pos)?;
                Ok(Type::arrow(a, b, *q))
            }
            Internal::App(f, arg) => {
                let tf = self.infer(f)?;
                let ta = self.infer(arg)?;
                let res = self.fresh();
                let ob = Obligation::App { fun: tf, arg: ta, res: res.clone(), pos };
                self.obligations.push(ob);
                self.solve_obligations(false, &BTreeSet::new())?;
                Ok(res)
            }
            Internal::Pair(a, b) => {
                let ta = self.infer(a)?;
                let tb = self.infer(b)?;
                Ok(Type::prod(ta, tb))
            }
            Internal::Let(x, rhs, body) => {
                let scheme = if is_nonexpansive(rhs) {
                    self.infer_generalized(rhs)?
                } else {
                    Scheme::mono(self.infer(rhs)?)
                };
                self.push(x, scheme);
                let result = self.infer(body);
                self.pop(1);
                result
            }
            Internal::LetPair(x, y, rhs, body) => {
                let tr = self.infer(rhs)?;
                let (a, b) = (self.fresh(), self.fresh());
                self.unify(&Type::prod(a.clone(), b.clone()), &tr, rhs.pos)?;
                self.push(x, Scheme::mono(a));
                self.push(y, Scheme::mono(b));
                let result = self.infer(body);
                self.pop(2);
                result
            }
            Internal::Inl(e) => {
                let te = self.infer(e)?;
                Ok(Type::sum(te, self.fresh()))
            }
            Internal::Inr(e) => {
                let te = self.infer(e)?;
                Ok(Type::sum(self.fresh(), te))
            }
            Internal::Case { scrut, left, right } => {
                let ts = self.infer(scrut)?;
                let (a, b) = (self.fresh(), self.fresh());
                self.unify(&Type::sum(a.clone(), b.clone()), &ts, scrut.pos)?;
                self.push(&left.0, Scheme::mono(a));
                let tl = self.infer(&left.1);
                self.pop(1);
                let tl = tl?;
                self.push(&right.0, Scheme::mono(b));
                let tr = self.infer(&right.1);
                self.pop(1);
                let tr = tr?;
                self.unify(&tl, &tr, right.1.pos)?;
                Ok(tl)
            }
            Internal::New(q, e) => {
                let te = self.infer(e)?;
                Ok(Type::reference(*q, te))
            }
            Internal::Release(RefQual::S, e) => {
                let te = self.infer(e)?;
                let a = self.fresh();
                self.unify(&Type::reference(RefQual::S, a.clone()), &te, e.pos)?;
                Ok(a)
            }
            Internal::Release(RefQual::W, e) => {
                let te = self.infer(e)?;
                let a = self.fresh();
                self.obligations.push(Obligation::WeakRef { r: te, content: a.clone(), pos: e.pos });
                self.solve_obligations(false, &BTreeSet::new())?;
                Ok(Type::sum(Type::Unit, a))
            }
            Internal::Swap(RefQual::S, r, v) => {
                let tr = self.infer(r)?;
                let tv = self.infer(v)?;
                let old = self.fresh();
                self.unify(&Type::reference(RefQual::S, old.clone()), &tr, r.pos)?;
                Ok(Type::prod(Type::reference(RefQual::S, tv), old))
            }
            Internal::Swap(RefQual::W, r, v) => {
                let tr = self.infer(r)?;
                let tv = self.infer(v)?;
                self.obligations.push(Obligation::WeakRef { r: tr.clone(), content: tv.clone(), pos: r.pos });
                self.solve_obligations(false, &BTreeSet::new())?;
                Ok(Type::prod(tr, tv))
            }
            Internal::Dup(src, x1, x2, body) => {
                let what = format!("dup of `{}`", src);
                let shared = match &src.kind {
                    Internal::Var(x) => self.lookup(x).filter(|(_, s)| !s.vars.is_empty()).map(|(id, s)| (id, s.clone())),
                    _ => None,
                };
                let copy_scheme = match shared.and_then(|(id, s)| {
                    let s = self.subst.apply_scheme(&s);
                    self.rigid(&s, Class::Dup, pos, &what).transpose().map(|r| (id, s, r))
                }) {
                    Some((id, s, residual)) => {
                        for p in residual? {
                            self.require(p, pos, what.clone());
                        }
                        let name = src.to_string();
                        self.uses.push((UseKey::Var(id), name, UseTy::Poly(s.clone())));
                        s
                    }
                    None => {
                        let ts = self.infer(src)?;
                        self.require(Pred::dup(ts.clone()), pos, what);
                        Scheme::mono(ts)
                    }
                };
                self.push(x1, copy_scheme.clone());
                self.push(x2, copy_scheme);
                let result = self.infer(body);
                self.pop(2);
                result
            }
            Internal::Drop(src, body) => {
                let ts = self.infer(src)?;
                self.require(Pred::drop(ts), pos, format!("drop of `{}`", src));
                self.infer(body)
            }
        }
    }

    /// Whether every instance of `s` is in `class`, given only the scheme's
    /// own constraints. Returns the predicates left over on free variables,
    /// or `None` if some instance would need an extra constraint.
    fn rigid(&self, s: &Scheme, class: Class, pos: Pos, what: &str) -> Result<Option<ConstraintSet>, TypeError> {
        let goal = ConstraintSet::from_iter([Pred::new(class, s.ty.clone())]);
        let reduced = instances().reduce_context(&goal).map_err(|IrreduciblePredicate(bad)| {
            TypeError::IrreduciblePredicate { pos, pred: prettify_pred(&bad), origin: what.to_string() }
        })?;
        let mut residual = ConstraintSet::new();
        for p in reduced {
            let quantified = p.ty.free_type_vars().iter().any(|v| s.vars.contains(v));
            if quantified {
                if !s.constraints.contains(&p) {
                    return Ok(None);
                }
            } else {
                residual.insert(p);
            }
        }
        Ok(Some(residual))
    }

    /// Adds the predicates a `q` closure places on what it captured.
    fn constrain_captures(&mut self, q: ArrowQual, outer: &BTreeSet<usize>, mark: usize, pos: Pos) -> Result<(), TypeError> {
        if q == ArrowQual::L {
            return Ok(());
        }
        let captured: Vec<(Name, UseTy)> = self.uses[mark..]
            .iter()
            .filter(|(k, _, _)| match k {
                UseKey::Var(id) => outer.contains(id),
                UseKey::Loc(_) => true,
            })
            .map(|(_, n, u)| (n.clone(), u.clone()))
            .collect();
        for (name, use_ty) in captured {
            let what = format!("`{name}` captured by a `{q}` closure");
            match use_ty {
                UseTy::Mono(ty) => {
                    for p in constrain_env(q, [&ty]) {
                        self.require(p, pos, what.clone());
                    }
                }
                UseTy::Poly(s) => {
                    let classes: &[Class] = match q {
                        ArrowQual::U => &[Class::Dup, Class::Drop],
                        ArrowQual::R => &[Class::Dup],
                        ArrowQual::A => &[Class::Drop],
                        ArrowQual::L => &[],
                    };
                    for &class in classes {
                        match self.rigid(&s, class, pos, &what)? {
                            Some(residual) => {
                                for p in residual {
                                    self.require(p, pos, what.clone());
                                }
                            }
                            None => {
                                let ty = self.instantiate(&s, pos, &what);
                                self.require(Pred::new(class, ty), pos, what.clone());
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Infers `rhs` and generalizes over variables not free in the
    /// environment.
    fn infer_generalized(&mut self, rhs: &InternalTerm) -> Result<Scheme, TypeError> {
        let outer_preds = std::mem::take(&mut self.preds);
        let outer_obligations = std::mem::take(&mut self.obligations);
        let ty = self.infer(rhs);
        let inner_preds = std::mem::replace(&mut self.preds, outer_preds);
        let ty = ty?;
        let env = self.env_vars();
        self.solve_obligations(true, &env)?;
        let leftover = std::mem::replace(&mut self.obligations, outer_obligations);
        self.obligations.extend(leftover);

        let ty = self.subst.apply(&ty);
        let gen: Vec<Name> = ty.vars_in_order().into_iter().filter(|v| !env.contains(v)).collect();
        let mut constraints = ConstraintSet::new();
        for (p, origin) in self.reduce(inner_preds)? {
            if p.ty.free_type_vars().iter().all(|v| gen.contains(v)) {
                constraints.insert(p);
            } else {
                self.preds.push((p, origin));
            }
        }
        Ok(Scheme { vars: gen, constraints, ty })
    }
}

/// Syntactic values, whose types may be generalized.
fn is_nonexpansive(t: &InternalTerm) -> bool {
    match &t.kind {
        Internal::Var(_) | Internal::Global(_) | Internal::Unit | Internal::Lam(..) => true,
        Internal::Pair(a, b) => is_nonexpansive(a) && is_nonexpansive(b),
        Internal::Inl(a) | Internal::Inr(a) => is_nonexpansive(a),
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Public entry points

/// Infers the type of `t` and the predicates it needs, unreduced. Names in
/// `env` are visible both as local variables and as globals.
pub fn infer_term(env: &TypeEnv, t: &InternalTerm) -> Result<(ConstraintSet, Type), TypeError> {
    let mut ck = Checker::new(env);
    for (x, s) in env {
        ck.bind_local(x, s.clone());
    }
    let ty = ck.infer(t)?;
    ck.solve_obligations(true, &BTreeSet::new())?;
    let preds: ConstraintSet = ck.preds.iter().map(|(p, _)| ck.subst.apply_pred(p)).collect();
    Ok((preds, ck.subst.apply(&ty)))
}

/// Reduces `p` and quantifies over the variables of `t` not free in `env`.
pub fn generalize(env: &TypeEnv, p: &ConstraintSet, t: &Type) -> Result<Scheme, TypeError> {
    let reduced = instances().reduce_context(p).map_err(|IrreduciblePredicate(bad)| {
        TypeError::IrreduciblePredicate { pos: Pos::default(), pred: prettify_pred(&bad), origin: "generalization".into() }
    })?;
    let env_vars: BTreeSet<Name> = env.values().flat_map(|s| s.free_type_vars()).collect();
    let body_vars = t.free_type_vars();
    for pred in &reduced {
        if pred.ty.free_type_vars().iter().any(|v| !body_vars.contains(v) && !env_vars.contains(v)) {
            return Err(TypeError::AmbiguousScheme {
                pos: Pos::default(),
                name: String::new(),
                pred: pred.clone(),
                ty: t.clone(),
            });
        }
    }
    let vars = t.vars_in_order().into_iter().filter(|v| !env_vars.contains(v)).collect();
    Ok(Scheme { vars, constraints: reduced, ty: t.clone() })
}

/// Infers the scheme of one closed top-level term.
pub fn infer_closed(globals: &TypeEnv, name: &str, t: &InternalTerm) -> Result<Scheme, TypeError> {
    let mut ck = Checker::new(globals);
    let ty = ck.infer(t)?;
    let residual = ck.finish()?;
    let ty = ck.subst.apply(&ty);
    let body_vars = ty.free_type_vars();
    let mut constraints = ConstraintSet::new();
    for (p, origin) in residual {
        if !p.ty.free_type_vars().is_subset(&body_vars) {
            let pretty = prettify_all(&[&ty, &p.ty]);
            return Err(TypeError::AmbiguousScheme {
                pos: origin.pos,
                name: name.to_string(),
                pred: Pred::new(p.class, pretty[1].clone()),
                ty: pretty[0].clone(),
            });
        }
        constraints.insert(p);
    }
    Ok(Scheme { vars: ty.vars_in_order(), constraints, ty }.normalized())
}

/// The first of `Dup τ`, `Drop τ` that the scheme's constraints fail to
/// entail.
pub fn unlimited_violation(s: &Scheme) -> Option<Pred> {
    for class in [Class::Dup, Class::Drop] {
        let goal = ConstraintSet::from_iter([Pred::new(class, s.ty.clone())]);
        match instances().reduce_context(&goal) {
            Err(IrreduciblePredicate(bad)) => return Some(bad),
            Ok(reduced) => {
                if let Some(p) = reduced.iter().find(|p| !instances().entails(&s.constraints, p)) {
                    return Some(p.clone());
                }
            }
        }
    }
    None
}

/// Alpha-equivalence of the types together with mutual entailment of the
/// constraints.
pub fn signature_matches(declared: &Scheme, inferred: &Scheme) -> bool {
    match instances().reduce_context(&declared.constraints) {
        Ok(reduced) => Scheme { vars: declared.vars.clone(), constraints: reduced, ty: declared.ty.clone() }
            .alpha_eq(inferred),
        Err(_) => false,
    }
}

/// A program after elaboration and type inference.
#[derive(Clone, Debug)]
pub struct CheckedProgram {
    pub defs: Vec<ElabDef>,
    pub schemes: Vec<(Name, Scheme)>,
}

impl CheckedProgram {
    pub fn scheme(&self, name: &str) -> Option<&Scheme> {
        self.schemes.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn def(&self, name: &str) -> Option<&ElabDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn env(&self) -> TypeEnv {
        self.schemes.iter().cloned().collect()
    }
}

impl fmt::Display for CheckedProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, s) in &self.schemes {
            writeln!(f, "{name} :: {s}")?;
        }
        Ok(())
    }
}

pub fn check_program(p: &Program) -> Result<CheckedProgram, ProgramError> {
    let defs = elaborate_program(p)?;
    let mut env = TypeEnv::new();
    let mut schemes = Vec::new();
    for d in &defs {
        let tag = |error| ProgramError::Type { name: d.name.clone(), error: Box::new(error) };
        let inferred = infer_closed(&env, &d.name, &d.internal).map_err(tag)?;
        let scheme = match p.signature(&d.name) {
            Some((declared, pos)) => {
                if !signature_matches(declared, &inferred) {
                    return Err(tag(TypeError::SignatureMismatch {
                        pos,
                        name: d.name.clone(),
                        declared: Box::new(declared.clone()),
                        inferred: Box::new(inferred),
                    }));
                }
                declared.clone()
            }
            None => inferred,
        };
        if let Some(pred) = unlimited_violation(&scheme) {
            return Err(tag(TypeError::TopLevelNotUnlimited { pos: d.pos, name: d.name.clone(), scheme: Box::new(scheme), pred }));
        }
        env.insert(d.name.clone(), scheme.clone());
        schemes.push((d.name.clone(), scheme));
    }
    Ok(CheckedProgram { defs, schemes })
}

/// Schemes of every definition, in declaration order.
pub fn infer_program(p: &Program) -> Result<Vec<(Name, Scheme)>, ProgramError> {
    Ok(check_program(p)?.schemes)
}
