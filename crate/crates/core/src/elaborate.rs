//! Dup/drop insertion, well-formedness of annotated terms, lowering to the
//! explicitly linear internal language, and an exhaustive enumerator of
//! well-formed annotations used as a test oracle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use thiserror::Error;

use crate::ast::{
    Ann, AnnArm, AnnTerm, Internal, InternalTerm, Name, Pattern, Pos, Surface, SurfaceTerm, VarMultiset,
};
use crate::parser::Program;

pub type VarSet = BTreeSet<Name>;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ElabError {
    #[error("{pos}: local binder `{name}` shadows a top-level definition")]
    ShadowsTopLevel { pos: Pos, name: Name },
    #[error("{pos}: annotated term is not well-formed: {message}")]
    NotWellFormed { pos: Pos, message: String },
    #[error("enumeration limit exceeded: term size {size}, budget {budget}")]
    TooLarge { size: usize, budget: usize },
}

fn wf_error<T>(pos: Pos, message: impl Into<String>) -> Result<T, ElabError> {
    Err(ElabError::NotWellFormed { pos, message: message.into() })
}

// ---------------------------------------------------------------------------
// Free variables

pub fn free_vars(e: &SurfaceTerm) -> VarSet {
    let mut out = VarSet::new();
    collect_free(e, &mut Vec::new(), &mut out);
    out
}

fn collect_free(e: &SurfaceTerm, bound: &mut Vec<Name>, out: &mut VarSet) {
    let under = |names: &[&Name], body: &SurfaceTerm, bound: &mut Vec<Name>, out: &mut VarSet| {
        let n = bound.len();
        bound.extend(names.iter().map(|x| (*x).clone()));
        collect_free(body, bound, out);
        bound.truncate(n);
    };
    match &e.kind {
        Surface::Var(x) => {
            if !bound.contains(x) {
                out.insert(x.clone());
            }
        }
        Surface::Unit => {}
        Surface::Lam(_, p, b) => under(&p.binders(), b, bound, out),
        Surface::App(a, b) | Surface::Pair(a, b) | Surface::Swap(_, a, b) => {
            collect_free(a, bound, out);
            collect_free(b, bound, out);
        }
        Surface::Let(x, r, b) => {
            collect_free(r, bound, out);
            under(&[x], b, bound, out);
        }
        Surface::LetPair(x, y, r, b) => {
            collect_free(r, bound, out);
            under(&[x, y], b, bound, out);
        }
        Surface::Inl(a) | Surface::Inr(a) | Surface::New(_, a) | Surface::Release(_, a) => {
            collect_free(a, bound, out)
        }
        Surface::Case { scrut, left, right } => {
            collect_free(scrut, bound, out);
            under(&[&left.0], &left.1, bound, out);
            under(&[&right.0], &right.1, bound, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Insertion

/// Annotates `e` with the dups and drops it needs, treating every free
/// variable as a local.
pub fn insert(e: &SurfaceTerm) -> AnnTerm {
    insert_with_globals(e, &VarSet::new())
}

/// Like [`insert`], but names in `globals` are top-level definitions that
/// are never duplicated or dropped.
pub fn insert_with_globals(e: &SurfaceTerm, globals: &VarSet) -> AnnTerm {
    Inserter { globals }.go(e).0
}

struct Inserter<'a> {
    globals: &'a VarSet,
}

fn dup_over(shared: VarSet, t: AnnTerm) -> AnnTerm {
    if shared.is_empty() {
        return t;
    }
    let pos = t.pos;
    AnnTerm::at(Ann::Dup(VarMultiset::from_set(&shared), Box::new(t)), pos)
}

fn drop_over(unused: &VarSet, t: AnnTerm) -> AnnTerm {
    if unused.is_empty() {
        return t;
    }
    let pos = t.pos;
    AnnTerm::at(Ann::Drop(VarMultiset::from_set(unused), Box::new(t)), pos)
}

impl Inserter<'_> {
    /// Returns the annotated term together with its local free variables.
    fn go(&self, e: &SurfaceTerm) -> (AnnTerm, VarSet) {
        let pos = e.pos;
        let at = |kind| AnnTerm::at(kind, pos);
        match &e.kind {
            Surface::Var(x) => {
                let fv = if self.globals.contains(x) { VarSet::new() } else { VarSet::from([x.clone()]) };
                (at(Ann::Var(x.clone())), fv)
            }
            Surface::Unit => (at(Ann::Unit), VarSet::new()),
            Surface::Lam(q, p, b) => {
                let (body, fv) = self.binder(&p.binders(), b);
                (at(Ann::Lam(*q, p.clone(), Box::new(body))), fv)
            }
            Surface::App(a, b) => self.mult(a, b, Ann::App, pos),
            Surface::Pair(a, b) => self.mult(a, b, Ann::Pair, pos),
            Surface::Swap(q, a, b) => self.mult(a, b, |a, b| Ann::Swap(*q, a, b), pos),
            Surface::Let(x, r, b) => {
                let (r, fv_r) = self.go(r);
                let (b, fv_b) = self.binder(&[x], b);
                let shared = fv_r.intersection(&fv_b).cloned().collect();
                let fv = fv_r.union(&fv_b).cloned().collect();
                (dup_over(shared, at(Ann::Let(x.clone(), Box::new(r), Box::new(b)))), fv)
            }
            Surface::LetPair(x, y, r, b) => {
                let (r, fv_r) = self.go(r);
                let (b, fv_b) = self.binder(&[x, y], b);
                let shared = fv_r.intersection(&fv_b).cloned().collect();
                let fv = fv_r.union(&fv_b).cloned().collect();
                let kind = Ann::LetPair(x.clone(), y.clone(), Box::new(r), Box::new(b));
                (dup_over(shared, at(kind)), fv)
            }
            Surface::Inl(a) => self.unary(a, Ann::Inl, pos),
            Surface::Inr(a) => self.unary(a, Ann::Inr, pos),
            Surface::New(q, a) => self.unary(a, |a| Ann::New(*q, a), pos),
            Surface::Release(q, a) => self.unary(a, |a| Ann::Release(*q, a), pos),
            Surface::Case { scrut, left, right } => {
                let (s, fv_s) = self.go(scrut);
                let (l, fv_l) = self.binder(&[&left.0], &left.1);
                let (r, fv_r) = self.binder(&[&right.0], &right.1);
                let arm = |x: &Name, body: AnnTerm, missing: VarSet| {
                    let bind = AnnArm::Bind(x.clone(), body);
                    if missing.is_empty() {
                        bind
                    } else {
                        AnnArm::Drop(VarMultiset::from_set(&missing), Box::new(bind))
                    }
                };
                let l = arm(&left.0, l, fv_r.difference(&fv_l).cloned().collect());
                let r = arm(&right.0, r, fv_l.difference(&fv_r).cloned().collect());
                let fv_arms: VarSet = fv_l.union(&fv_r).cloned().collect();
                let shared = fv_s.intersection(&fv_arms).cloned().collect();
                let fv = fv_s.union(&fv_arms).cloned().collect();
                let kind = Ann::Case { scrut: Box::new(s), left: Box::new(l), right: Box::new(r) };
                (dup_over(shared, at(kind)), fv)
            }
        }
    }

    /// Body of a binding form: drops unused binders and returns the free
    /// variables of the abstraction.
    fn binder(&self, xs: &[&Name], body: &SurfaceTerm) -> (AnnTerm, VarSet) {
        let (b, mut fv) = self.go(body);
        let unused: VarSet = xs.iter().filter(|x| !fv.contains(**x)).map(|x| (*x).clone()).collect();
        for x in xs {
            fv.remove(*x);
        }
        (drop_over(&unused, b), fv)
    }

    fn mult(
        &self,
        a: &SurfaceTerm,
        b: &SurfaceTerm,
        mk: impl FnOnce(Box<AnnTerm>, Box<AnnTerm>) -> Ann,
        pos: Pos,
    ) -> (AnnTerm, VarSet) {
        let (a, fv_a) = self.go(a);
        let (b, fv_b) = self.go(b);
        let shared = fv_a.intersection(&fv_b).cloned().collect();
        let fv = fv_a.union(&fv_b).cloned().collect();
        (dup_over(shared, AnnTerm::at(mk(Box::new(a), Box::new(b)), pos)), fv)
    }

    fn unary(&self, a: &SurfaceTerm, mk: impl FnOnce(Box<AnnTerm>) -> Ann, pos: Pos) -> (AnnTerm, VarSet) {
        let (a, fv) = self.go(a);
        (AnnTerm::at(mk(Box::new(a)), pos), fv)
    }
}

// ---------------------------------------------------------------------------
// Erasure

pub fn erase(ae: &AnnTerm) -> SurfaceTerm {
    let b = |t: &AnnTerm| Box::new(erase(t));
    let kind = match &ae.kind {
        Ann::Var(x) => Surface::Var(x.clone()),
        Ann::Unit => Surface::Unit,
        Ann::Lam(q, p, body) => Surface::Lam(*q, p.clone(), b(body)),
        Ann::App(f, a) => Surface::App(b(f), b(a)),
        Ann::Pair(l, r) => Surface::Pair(b(l), b(r)),
        Ann::Swap(q, l, r) => Surface::Swap(*q, b(l), b(r)),
        Ann::Let(x, r, body) => Surface::Let(x.clone(), b(r), b(body)),
        Ann::LetPair(x, y, r, body) => Surface::LetPair(x.clone(), y.clone(), b(r), b(body)),
        Ann::Inl(a) => Surface::Inl(b(a)),
        Ann::Inr(a) => Surface::Inr(b(a)),
        Ann::New(q, a) => Surface::New(*q, b(a)),
        Ann::Release(q, a) => Surface::Release(*q, b(a)),
        Ann::Case { scrut, left, right } => {
            let (x, l) = erase_arm(left);
            let (y, r) = erase_arm(right);
            Surface::Case { scrut: b(scrut), left: (x, Box::new(l)), right: (y, Box::new(r)) }
        }
        Ann::Dup(_, inner) | Ann::Drop(_, inner) => return erase(inner),
    };
    SurfaceTerm::at(kind, ae.pos)
}

fn erase_arm(arm: &AnnArm) -> (Name, SurfaceTerm) {
    match arm {
        AnnArm::Bind(x, body) => (x.clone(), erase(body)),
        AnnArm::Dup(_, inner) | AnnArm::Drop(_, inner) => erase_arm(inner),
    }
}

// ---------------------------------------------------------------------------
// Well-formedness

/// The unique context under which `ae` is well-formed, if any. Names in
/// `globals` that are not locally bound demand nothing.
pub fn demand(ae: &AnnTerm, globals: &VarSet) -> Result<VarMultiset, ElabError> {
    Demand { globals, bound: Vec::new() }.term(ae)
}

pub fn well_formed(g: &VarMultiset, ae: &AnnTerm) -> bool {
    matches!(demand(ae, &VarSet::new()), Ok(d) if d == *g)
}

/// Like [`well_formed`], reporting the first offending subterm.
pub fn check_well_formed(g: &VarMultiset, ae: &AnnTerm, globals: &VarSet) -> Result<(), ElabError> {
    let d = demand(ae, globals)?;
    if d != *g {
        return wf_error(ae.pos, format!("term needs context {d}, but {g} is available"));
    }
    Ok(())
}

struct Demand<'a> {
    globals: &'a VarSet,
    bound: Vec<Name>,
}

impl Demand<'_> {
    fn term(&mut self, ae: &AnnTerm) -> Result<VarMultiset, ElabError> {
        match &ae.kind {
            Ann::Var(x) => {
                if self.globals.contains(x) && !self.bound.contains(x) {
                    Ok(VarMultiset::new())
                } else {
                    Ok(VarMultiset::singleton(x.clone()))
                }
            }
            Ann::Unit => Ok(VarMultiset::new()),
            Ann::Lam(_, p, body) => self.abs(&p.binders(), body, ae.pos),
            Ann::App(a, b) | Ann::Pair(a, b) | Ann::Swap(_, a, b) => Ok(self.term(a)?.sum(&self.term(b)?)),
            Ann::Let(x, r, body) => Ok(self.term(r)?.sum(&self.abs(&[x], body, ae.pos)?)),
            Ann::LetPair(x, y, r, body) => Ok(self.term(r)?.sum(&self.abs(&[x, y], body, ae.pos)?)),
            Ann::Inl(a) | Ann::Inr(a) | Ann::New(_, a) | Ann::Release(_, a) => self.term(a),
            Ann::Case { scrut, left, right } => {
                let s = self.term(scrut)?;
                let l = self.arm(left, ae.pos)?;
                let r = self.arm(right, ae.pos)?;
                if l != r {
                    return wf_error(ae.pos, format!("case branches need different contexts {l} and {r}"));
                }
                Ok(s.sum(&l))
            }
            Ann::Dup(g, inner) => {
                let d = self.term(inner)?;
                dup_rule(d, g, ae.pos)
            }
            Ann::Drop(g, inner) => Ok(self.term(inner)?.sum(g)),
        }
    }

    fn abs(&mut self, xs: &[&Name], body: &AnnTerm, pos: Pos) -> Result<VarMultiset, ElabError> {
        let n = self.bound.len();
        self.bound.extend(xs.iter().map(|x| (*x).clone()));
        let d = self.term(body);
        self.bound.truncate(n);
        let mut d = d?;
        for x in xs {
            if d.count(x) != 1 {
                return wf_error(pos, format!("binder `{x}` is used {} times in its scope", d.count(x)));
            }
            d.remove(x, 1);
        }
        Ok(d)
    }

    fn arm(&mut self, arm: &AnnArm, pos: Pos) -> Result<VarMultiset, ElabError> {
        match arm {
            AnnArm::Bind(x, body) => self.abs(&[x], body, body.pos),
            AnnArm::Dup(g, inner) => {
                let d = self.arm(inner, pos)?;
                dup_rule(d, g, pos)
            }
            AnnArm::Drop(g, inner) => Ok(self.arm(inner, pos)?.sum(g)),
        }
    }
}

fn dup_rule(d: VarMultiset, g: &VarMultiset, pos: Pos) -> Result<VarMultiset, ElabError> {
    if !d.contains_multiset(&g.sum(g)) {
        return wf_error(pos, format!("dup {g} produces copies that are not all used"));
    }
    Ok(d.difference(g).expect("sub-multiset"))
}

// ---------------------------------------------------------------------------
// Lowering

/// Lowers a closed well-formed annotated term.
pub fn lower(ae: &AnnTerm) -> Result<InternalTerm, ElabError> {
    lower_with_globals(ae, &VarSet::new())
}

/// Lowers `ae` to the internal language. Every free local variable must be
/// demanded exactly once; it keeps its own name. Copies made by `dup` are
/// named `x#1`, `x#2`, ...
pub fn lower_with_globals(ae: &AnnTerm, globals: &VarSet) -> Result<InternalTerm, ElabError> {
    let d = demand(ae, globals)?;
    let mut avail = Avail::new();
    for (x, n) in d.iter() {
        if n != 1 {
            return wf_error(ae.pos, format!("free variable `{x}` is needed {n} times"));
        }
        avail.entry(x.clone()).or_default().push(x.clone());
    }
    let mut lw = Lowerer { globals, counters: BTreeMap::new() };
    lw.term(ae, avail, &mut Vec::new())
}

/// Internal names available for each source variable.
type Avail = BTreeMap<Name, Vec<Name>>;

struct Lowerer<'a> {
    globals: &'a VarSet,
    counters: BTreeMap<Name, usize>,
}

enum Wrap {
    Dup(Name, Name, Name),
    Drop(Name),
}

fn wrap_all(wraps: Vec<Wrap>, body: InternalTerm) -> InternalTerm {
    let pos = body.pos;
    wraps.into_iter().rev().fold(body, |acc, w| {
        let kind = match w {
            Wrap::Dup(src, a, b) => {
                Internal::Dup(Box::new(InternalTerm::at(Internal::Var(src), pos)), a, b, Box::new(acc))
            }
            Wrap::Drop(src) => Internal::Drop(Box::new(InternalTerm::at(Internal::Var(src), pos)), Box::new(acc)),
        };
        InternalTerm::at(kind, pos)
    })
}

fn take(avail: &mut Avail, x: &str, pos: Pos) -> Result<Name, ElabError> {
    match avail.get_mut(x).and_then(|v| (!v.is_empty()).then(|| v.remove(0))) {
        Some(c) => {
            if avail.get(x).is_some_and(|v| v.is_empty()) {
                avail.remove(x);
            }
            Ok(c)
        }
        None => wf_error(pos, format!("no copy of `{x}` is available")),
    }
}

/// Moves the copies demanded by `d` out of `avail`.
fn split(avail: &mut Avail, d: &VarMultiset, pos: Pos) -> Result<Avail, ElabError> {
    let mut out = Avail::new();
    for x in d.elements() {
        let c = take(avail, x, pos)?;
        out.entry(x.clone()).or_default().push(c);
    }
    Ok(out)
}

impl Lowerer<'_> {
    fn fresh(&mut self, base: &str) -> Name {
        let base = base.split('#').next().unwrap_or(base);
        let n = self.counters.entry(base.to_string()).or_insert(0);
        *n += 1;
        format!("{base}#{n}")
    }

    /// Internal name for a binder, renamed if it would capture a live copy.
    fn bind(&mut self, x: &Name, avail: &Avail, reserved: &[Name]) -> Name {
        let clash = reserved.contains(x) || avail.values().flatten().any(|c| c == x);
        if clash {
            self.fresh(x)
        } else {
            x.clone()
        }
    }

    fn demand(&self, ae: &AnnTerm) -> Result<VarMultiset, ElabError> {
        demand(ae, self.globals)
    }

    fn term(&mut self, ae: &AnnTerm, mut avail: Avail, reserved: &mut Vec<Name>) -> Result<InternalTerm, ElabError> {
        let pos = ae.pos;
        let at = |kind| InternalTerm::at(kind, pos);
        Ok(match &ae.kind {
            Ann::Var(x) => match avail.get(x) {
                Some(_) => at(Internal::Var(take(&mut avail, x, pos)?)),
                None if self.globals.contains(x) => at(Internal::Global(x.clone())),
                None => return wf_error(pos, format!("`{x}` is not available")),
            },
            Ann::Unit => at(Internal::Unit),
            Ann::Lam(q, Pattern::Var(x), body) => {
                let x2 = self.bind(x, &avail, reserved);
                avail.entry(x.clone()).or_default().push(x2.clone());
                at(Internal::Lam(*q, x2, Box::new(self.term(body, avail, reserved)?)))
            }
            Ann::Lam(q, Pattern::Pair(x, y), body) => {
                let p = self.fresh("p");
                let x2 = self.bind(x, &avail, reserved);
                let y2 = self.bind(y, &avail, reserved);
                avail.entry(x.clone()).or_default().push(x2.clone());
                avail.entry(y.clone()).or_default().push(y2.clone());
                let body = self.term(body, avail, reserved)?;
                let unpack = Internal::LetPair(x2, y2, Box::new(at(Internal::Var(p.clone()))), Box::new(body));
                at(Internal::Lam(*q, p, Box::new(at(unpack))))
            }
            Ann::App(a, b) => {
                let (a, b) = self.pair(a, b, avail, reserved)?;
                at(Internal::App(a, b))
            }
            Ann::Pair(a, b) => {
                let (a, b) = self.pair(a, b, avail, reserved)?;
                at(Internal::Pair(a, b))
            }
            Ann::Swap(q, a, b) => {
                let (a, b) = self.pair(a, b, avail, reserved)?;
                at(Internal::Swap(*q, a, b))
            }
            Ann::Let(x, r, body) => {
                let mine = split(&mut avail, &self.demand(r)?, pos)?;
                let r = self.term(r, mine, reserved)?;
                let x2 = self.bind(x, &avail, reserved);
                avail.entry(x.clone()).or_default().push(x2.clone());
                at(Internal::Let(x2, Box::new(r), Box::new(self.term(body, avail, reserved)?)))
            }
            Ann::LetPair(x, y, r, body) => {
                let mine = split(&mut avail, &self.demand(r)?, pos)?;
                let r = self.term(r, mine, reserved)?;
                let x2 = self.bind(x, &avail, reserved);
                let y2 = self.bind(y, &avail, reserved);
                avail.entry(x.clone()).or_default().push(x2.clone());
                avail.entry(y.clone()).or_default().push(y2.clone());
                at(Internal::LetPair(x2, y2, Box::new(r), Box::new(self.term(body, avail, reserved)?)))
            }
            Ann::Inl(a) => at(Internal::Inl(Box::new(self.term(a, avail, reserved)?))),
            Ann::Inr(a) => at(Internal::Inr(Box::new(self.term(a, avail, reserved)?))),
            Ann::New(q, a) => at(Internal::New(*q, Box::new(self.term(a, avail, reserved)?))),
            Ann::Release(q, a) => at(Internal::Release(*q, Box::new(self.term(a, avail, reserved)?))),
            Ann::Case { scrut, left, right } => {
                let mine = split(&mut avail, &self.demand(scrut)?, pos)?;
                let scrut = self.term(scrut, mine, reserved)?;
                let left = self.arm(left, avail.clone(), reserved, Vec::new())?;
                let right = self.arm(right, avail, reserved, Vec::new())?;
                at(Internal::Case { scrut: Box::new(scrut), left, right })
            }
            Ann::Dup(g, inner) => {
                let wraps = self.dup_wraps(g, &mut avail, pos)?;
                wrap_all(wraps, self.term(inner, avail, reserved)?)
            }
            Ann::Drop(g, inner) => {
                let wraps = drop_wraps(g, &mut avail, pos)?;
                wrap_all(wraps, self.term(inner, avail, reserved)?)
            }
        })
    }

    fn pair(
        &mut self,
        a: &AnnTerm,
        b: &AnnTerm,
        mut avail: Avail,
        reserved: &mut Vec<Name>,
    ) -> Result<(Box<InternalTerm>, Box<InternalTerm>), ElabError> {
        let mine = split(&mut avail, &self.demand(a)?, a.pos)?;
        let a = self.term(a, mine, reserved)?;
        let b = self.term(b, avail, reserved)?;
        Ok((Box::new(a), Box::new(b)))
    }

    fn dup_wraps(&mut self, g: &VarMultiset, avail: &mut Avail, pos: Pos) -> Result<Vec<Wrap>, ElabError> {
        let mut wraps = Vec::new();
        for x in g.elements() {
            let c = take(avail, x, pos)?;
            let (a, b) = (self.fresh(x), self.fresh(x));
            avail.entry(x.clone()).or_default().extend([a.clone(), b.clone()]);
            wraps.push(Wrap::Dup(c, a, b));
        }
        Ok(wraps)
    }

    /// Lowers a case arm. Annotations wrapped around the arm are moved just
    /// inside its binder, which is renamed if it would capture them.
    fn arm(
        &mut self,
        arm: &AnnArm,
        mut avail: Avail,
        reserved: &mut Vec<Name>,
        mut wraps: Vec<Wrap>,
    ) -> Result<(Name, Box<InternalTerm>), ElabError> {
        match arm {
            AnnArm::Bind(x, body) => {
                let n = reserved.len();
                reserved.extend(wraps.iter().map(|w| match w {
                    Wrap::Dup(c, _, _) | Wrap::Drop(c) => c.clone(),
                }));
                let x2 = self.bind(x, &avail, reserved);
                avail.entry(x.clone()).or_default().push(x2.clone());
                let body = self.term(body, avail, reserved);
                reserved.truncate(n);
                Ok((x2, Box::new(wrap_all(wraps, body?))))
            }
            AnnArm::Dup(g, inner) => {
                wraps.extend(self.dup_wraps(g, &mut avail, Pos::default())?);
                self.arm(inner, avail, reserved, wraps)
            }
            AnnArm::Drop(g, inner) => {
                wraps.extend(drop_wraps(g, &mut avail, Pos::default())?);
                self.arm(inner, avail, reserved, wraps)
            }
        }
    }
}

fn drop_wraps(g: &VarMultiset, avail: &mut Avail, pos: Pos) -> Result<Vec<Wrap>, ElabError> {
    g.elements().map(|x| Ok(Wrap::Drop(take(avail, x, pos)?))).collect()
}

// ---------------------------------------------------------------------------
// Linearity

/// True iff every variable, bound or free, is used exactly once and both
/// branches of every case consume the same variables.
pub fn linearity_check(t: &InternalTerm) -> bool {
    matches!(linear_uses(t), Some(u) if u.iter().all(|(_, n)| n == 1))
}

fn linear_uses(t: &InternalTerm) -> Option<VarMultiset> {
    fn bind(mut u: VarMultiset, xs: &[&Name]) -> Option<VarMultiset> {
        for x in xs {
            if u.count(x) != 1 {
                return None;
            }
            u.remove(x, 1);
        }
        Some(u)
    }
    match &t.kind {
        Internal::Var(x) => Some(VarMultiset::singleton(x.clone())),
        Internal::Global(_) | Internal::Unit | Internal::Loc(_) => Some(VarMultiset::new()),
        Internal::Lam(_, x, b) => bind(linear_uses(b)?, &[x]),
        Internal::App(a, b) | Internal::Pair(a, b) | Internal::Swap(_, a, b) => {
            Some(linear_uses(a)?.sum(&linear_uses(b)?))
        }
        Internal::Let(x, r, b) => Some(linear_uses(r)?.sum(&bind(linear_uses(b)?, &[x])?)),
        Internal::LetPair(x, y, r, b) => {
            if x == y {
                return None;
            }
            Some(linear_uses(r)?.sum(&bind(linear_uses(b)?, &[x, y])?))
        }
        Internal::Inl(a) | Internal::Inr(a) | Internal::New(_, a) | Internal::Release(_, a) => linear_uses(a),
        Internal::Case { scrut, left, right } => {
            let l = bind(linear_uses(&left.1)?, &[&left.0])?;
            let r = bind(linear_uses(&right.1)?, &[&right.0])?;
            (l == r).then_some(())?;
            Some(linear_uses(scrut)?.sum(&l))
        }
        Internal::Dup(src, a, b, body) => {
            if a == b {
                return None;
            }
            Some(linear_uses(src)?.sum(&bind(linear_uses(body)?, &[a, b])?))
        }
        Internal::Drop(src, body) => Some(linear_uses(src)?.sum(&linear_uses(body)?)),
    }
}

// ---------------------------------------------------------------------------
// Programs

/// A top-level definition after elaboration.
#[derive(Clone, Debug)]
pub struct ElabDef {
    pub name: Name,
    pub pos: Pos,
    pub surface: SurfaceTerm,
    pub annotated: AnnTerm,
    pub internal: InternalTerm,
}

/// Elaborates every definition in order. Each definition sees the names of
/// the definitions before it as globals.
pub fn elaborate_program(p: &Program) -> Result<Vec<ElabDef>, ElabError> {
    let mut globals = VarSet::new();
    let mut out = Vec::new();
    for (name, e, pos) in p.defs() {
        check_shadowing(e, &globals)?;
        let annotated = insert_with_globals(e, &globals);
        let internal = lower_with_globals(&annotated, &globals)?;
        out.push(ElabDef { name: name.clone(), pos, surface: e.clone(), annotated, internal });
        globals.insert(name.clone());
    }
    Ok(out)
}

pub fn check_shadowing(e: &SurfaceTerm, globals: &VarSet) -> Result<(), ElabError> {
    let check = |x: &Name| {
        if globals.contains(x) {
            Err(ElabError::ShadowsTopLevel { pos: e.pos, name: x.clone() })
        } else {
            Ok(())
        }
    };
    match &e.kind {
        Surface::Var(_) | Surface::Unit => Ok(()),
        Surface::Lam(_, p, b) => {
            p.binders().into_iter().try_for_each(check)?;
            check_shadowing(b, globals)
        }
        Surface::App(a, b) | Surface::Pair(a, b) | Surface::Swap(_, a, b) => {
            check_shadowing(a, globals)?;
            check_shadowing(b, globals)
        }
        Surface::Let(x, r, b) => {
            check(x)?;
            check_shadowing(r, globals)?;
            check_shadowing(b, globals)
        }
        Surface::LetPair(x, y, r, b) => {
            check(x)?;
            check(y)?;
            check_shadowing(r, globals)?;
            check_shadowing(b, globals)
        }
        Surface::Inl(a) | Surface::Inr(a) | Surface::New(_, a) | Surface::Release(_, a) => {
            check_shadowing(a, globals)
        }
        Surface::Case { scrut, left, right } => {
            check(&left.0)?;
            check(&right.0)?;
            check_shadowing(scrut, globals)?;
            check_shadowing(&left.1, globals)?;
            check_shadowing(&right.1, globals)
        }
    }
}

// ---------------------------------------------------------------------------
// Enumeration oracle

pub const MAX_ENUM_SIZE: usize = 12;
pub const MAX_ENUM_BUDGET: usize = 4;

/// Every well-formed annotation of `e` under `fv(e)` with at most `budget`
/// dup/drop nodes.
pub fn enumerate_annotations(e: &SurfaceTerm, budget: usize) -> Result<Vec<AnnTerm>, ElabError> {
    enumerate_annotations_under(&VarMultiset::from_set(&free_vars(e)), e, budget)
}

/// Every annotation of `e` with at most `budget` dup/drop nodes that is
/// well-formed under `g`.
pub fn enumerate_annotations_under(g: &VarMultiset, e: &SurfaceTerm, budget: usize) -> Result<Vec<AnnTerm>, ElabError> {
    let size = e.size();
    if size > MAX_ENUM_SIZE || budget > MAX_ENUM_BUDGET {
        return Err(ElabError::TooLarge { size, budget });
    }
    Ok(Enumerator::default().term(g, e, budget).as_ref().clone())
}

/// Nonempty sub-multisets of `g`.
fn sub_multisets(g: &VarMultiset) -> Vec<VarMultiset> {
    let mut out = vec![VarMultiset::new()];
    for (x, n) in g.iter() {
        let mut next = Vec::new();
        for m in &out {
            for k in 0..=n {
                let mut m2 = m.clone();
                m2.add(x.clone(), k);
                next.push(m2);
            }
        }
        out = next;
    }
    out.retain(|m| !m.is_empty());
    out
}

/// All ways to write `g` as an ordered sum of two multisets.
fn splits(g: &VarMultiset) -> Vec<(VarMultiset, VarMultiset)> {
    let mut out = vec![(VarMultiset::new(), VarMultiset::new())];
    for (x, n) in g.iter() {
        let mut next = Vec::new();
        for (a, b) in &out {
            for k in 0..=n {
                let (mut a2, mut b2) = (a.clone(), b.clone());
                a2.add(x.clone(), k);
                b2.add(x.clone(), n - k);
                next.push((a2, b2));
            }
        }
        out = next;
    }
    out
}

type Key = (usize, VarMultiset, usize);

/// Top-down enumeration, memoized on (subterm, context, budget). Subterms
/// are identified by address, so a memo is only valid for one root term.
#[derive(Default)]
struct Enumerator {
    terms: HashMap<Key, Rc<Vec<AnnTerm>>>,
    arms: HashMap<Key, Rc<Vec<AnnArm>>>,
}

fn addr<T>(t: &T) -> usize {
    t as *const T as usize
}

impl Enumerator {
    fn term(&mut self, g: &VarMultiset, e: &SurfaceTerm, budget: usize) -> Rc<Vec<AnnTerm>> {
        let key = (addr(e), g.clone(), budget);
        if let Some(v) = self.terms.get(&key) {
            return v.clone();
        }
        let mut out = self.structural(g, e, budget);
        if budget > 0 {
            for g2 in sub_multisets(g) {
                let rest = g.difference(&g2).expect("sub-multiset");
                for inner in self.term(&rest, e, budget - 1).iter() {
                    out.push(AnnTerm::new(Ann::Drop(g2.clone(), Box::new(inner.clone()))));
                }
                for inner in self.term(&g.sum(&g2), e, budget - 1).iter() {
                    out.push(AnnTerm::new(Ann::Dup(g2.clone(), Box::new(inner.clone()))));
                }
            }
        }
        let out = Rc::new(out);
        self.terms.insert(key, out.clone());
        out
    }

    fn binder(&mut self, g: &VarMultiset, xs: &[&Name], body: &SurfaceTerm, budget: usize) -> Rc<Vec<AnnTerm>> {
        if xs.iter().any(|x| g.count(x) > 0) {
            return Rc::new(Vec::new());
        }
        let mut inner = g.clone();
        for x in xs {
            inner.add((*x).clone(), 1);
        }
        self.term(&inner, body, budget)
    }

    /// Pairs of annotated parts: the first under some split of `g`, the
    /// second under the rest, sharing the budget.
    fn product(
        &mut self,
        g: &VarMultiset,
        budget: usize,
        first: &SurfaceTerm,
        second: &SurfaceTerm,
        binders: &[&Name],
    ) -> Vec<(AnnTerm, AnnTerm)> {
        let mut out = Vec::new();
        for (g1, g2) in splits(g) {
            let firsts = self.term(&g1, first, budget);
            for a in firsts.iter() {
                let left = budget - a.annotation_count();
                let seconds = if binders.is_empty() {
                    self.term(&g2, second, left)
                } else {
                    self.binder(&g2, binders, second, left)
                };
                for b in seconds.iter() {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    }

    fn structural(&mut self, g: &VarMultiset, e: &SurfaceTerm, budget: usize) -> Vec<AnnTerm> {
        let one = |t: &AnnTerm| Box::new(t.clone());
        let two = |v: Vec<(AnnTerm, AnnTerm)>, mk: &dyn Fn(Box<AnnTerm>, Box<AnnTerm>) -> Ann| -> Vec<AnnTerm> {
            v.into_iter().map(|(a, b)| AnnTerm::new(mk(Box::new(a), Box::new(b)))).collect()
        };
        match &e.kind {
            Surface::Var(x) => {
                if *g == VarMultiset::singleton(x.clone()) {
                    vec![AnnTerm::new(Ann::Var(x.clone()))]
                } else {
                    Vec::new()
                }
            }
            Surface::Unit => {
                if g.is_empty() {
                    vec![AnnTerm::new(Ann::Unit)]
                } else {
                    Vec::new()
                }
            }
            Surface::Lam(q, p, b) => self
                .binder(g, &p.binders(), b, budget)
                .iter()
                .map(|t| AnnTerm::new(Ann::Lam(*q, p.clone(), one(t))))
                .collect(),
            Surface::Inl(a) => self.term(g, a, budget).iter().map(|t| AnnTerm::new(Ann::Inl(one(t)))).collect(),
            Surface::Inr(a) => self.term(g, a, budget).iter().map(|t| AnnTerm::new(Ann::Inr(one(t)))).collect(),
            Surface::New(q, a) => self.term(g, a, budget).iter().map(|t| AnnTerm::new(Ann::New(*q, one(t)))).collect(),
            Surface::Release(q, a) => {
                self.term(g, a, budget).iter().map(|t| AnnTerm::new(Ann::Release(*q, one(t)))).collect()
            }
            Surface::App(a, b) => two(self.product(g, budget, a, b, &[]), &Ann::App),
            Surface::Pair(a, b) => two(self.product(g, budget, a, b, &[]), &Ann::Pair),
            Surface::Swap(q, a, b) => two(self.product(g, budget, a, b, &[]), &|a, b| Ann::Swap(*q, a, b)),
            Surface::Let(x, r, b) => two(self.product(g, budget, r, b, &[x]), &|r, b| Ann::Let(x.clone(), r, b)),
            Surface::LetPair(x, y, r, b) => {
                two(self.product(g, budget, r, b, &[x, y]), &|r, b| Ann::LetPair(x.clone(), y.clone(), r, b))
            }
            Surface::Case { scrut, left, right } => {
                let mut out = Vec::new();
                for (g1, g2) in splits(g) {
                    let scruts = self.term(&g1, scrut, budget);
                    for s in scruts.iter() {
                        let k = budget - s.annotation_count();
                        let lefts = self.arm(&g2, left, k);
                        for l in lefts.iter() {
                            let k2 = k - l.annotation_count();
                            for r in self.arm(&g2, right, k2).iter() {
                                out.push(AnnTerm::new(Ann::Case {
                                    scrut: one(s),
                                    left: Box::new(l.clone()),
                                    right: Box::new(r.clone()),
                                }));
                            }
                        }
                    }
                }
                out
            }
        }
    }

    fn arm(&mut self, g: &VarMultiset, arm: &(Name, Box<SurfaceTerm>), budget: usize) -> Rc<Vec<AnnArm>> {
        let key = (addr(arm), g.clone(), budget);
        if let Some(v) = self.arms.get(&key) {
            return v.clone();
        }
        let (x, body) = arm;
        let mut out: Vec<AnnArm> =
            self.binder(g, &[x], body, budget).iter().map(|t| AnnArm::Bind(x.clone(), t.clone())).collect();
        if budget > 0 {
            for g2 in sub_multisets(g) {
                let rest = g.difference(&g2).expect("sub-multiset");
                for inner in self.arm(&rest, arm, budget - 1).iter() {
                    out.push(AnnArm::Drop(g2.clone(), Box::new(inner.clone())));
                }
                for inner in self.arm(&g.sum(&g2), arm, budget - 1).iter() {
                    out.push(AnnArm::Dup(g2.clone(), Box::new(inner.clone())));
                }
            }
        }
        let out = Rc::new(out);
        self.arms.insert(key, out.clone());
        out
    }
}
