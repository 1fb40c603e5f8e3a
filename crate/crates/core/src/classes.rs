//! The fixed `Dup`/`Drop` instance environment, entailment and context
//! reduction.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

use crate::ast::{ArrowQual, Class, ConstraintSet, Name, Pred, RefQual, Type};

/// `premises => conclusion`, where the conclusion has a constructed head and
/// the premises mention only variables of the conclusion.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceRule {
    pub premises: ConstraintSet,
    pub conclusion: Pred,
}

impl fmt::Display for InstanceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} => {}", self.premises, self.conclusion)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceEnv {
    pub rules: Vec<InstanceRule>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("no instance for `{0}`")]
pub struct IrreduciblePredicate(pub Pred);

fn a1() -> Type {
    Type::var("a1")
}

fn a2() -> Type {
    Type::var("a2")
}

fn rule(premises: impl IntoIterator<Item = Pred>, conclusion: Pred) -> InstanceRule {
    InstanceRule { premises: premises.into_iter().collect(), conclusion }
}

pub fn default_instance_env() -> InstanceEnv {
    use ArrowQual::*;
    let arrow = |q| Type::arrow(a1(), a2(), q);
    let rules = vec![
        rule([Pred::dup(a1()), Pred::dup(a2())], Pred::dup(Type::prod(a1(), a2()))),
        rule([Pred::drop(a1()), Pred::drop(a2())], Pred::drop(Type::prod(a1(), a2()))),
        rule([Pred::dup(a1()), Pred::dup(a2())], Pred::dup(Type::sum(a1(), a2()))),
        rule([Pred::drop(a1()), Pred::drop(a2())], Pred::drop(Type::sum(a1(), a2()))),
        rule([], Pred::dup(arrow(U))),
        rule([], Pred::drop(arrow(U))),
        rule([], Pred::dup(arrow(R))),
        rule([], Pred::drop(arrow(A))),
        rule([], Pred::dup(Type::Unit)),
        rule([], Pred::drop(Type::Unit)),
        rule([], Pred::dup(Type::reference(RefQual::W, a1()))),
        rule([Pred::drop(a1())], Pred::drop(Type::reference(RefQual::S, a1()))),
        rule([Pred::drop(a1())], Pred::drop(Type::reference(RefQual::W, a1()))),
    ];
    InstanceEnv { rules }
}

/// The shared default environment.
pub fn instances() -> &'static InstanceEnv {
    static ENV: OnceLock<InstanceEnv> = OnceLock::new();
    ENV.get_or_init(default_instance_env)
}

/// One-way matching of an instance pattern against a type.
fn match_type(pat: &Type, ty: &Type, sub: &mut BTreeMap<Name, Type>) -> bool {
    match (pat, ty) {
        (Type::Var(a), _) => match sub.get(a) {
            Some(bound) => bound == ty,
            None => {
                sub.insert(a.clone(), ty.clone());
                true
            }
        },
        (Type::Unit, Type::Unit) => true,
        (Type::Arrow(p1, p2, q), Type::Arrow(t1, t2, r)) => {
            q == r && match_type(p1, t1, sub) && match_type(p2, t2, sub)
        }
        (Type::Prod(p1, p2), Type::Prod(t1, t2)) | (Type::Sum(p1, p2), Type::Sum(t1, t2)) => {
            match_type(p1, t1, sub) && match_type(p2, t2, sub)
        }
        (Type::Ref(q, p), Type::Ref(r, t)) => q == r && match_type(p, t, sub),
        _ => false,
    }
}

fn instantiate(t: &Type, sub: &BTreeMap<Name, Type>) -> Type {
    match t {
        Type::Var(a) => sub.get(a).cloned().unwrap_or_else(|| t.clone()),
        Type::Unit => Type::Unit,
        Type::Arrow(a, b, q) => Type::arrow(instantiate(a, sub), instantiate(b, sub), *q),
        Type::Prod(a, b) => Type::prod(instantiate(a, sub), instantiate(b, sub)),
        Type::Sum(a, b) => Type::sum(instantiate(a, sub), instantiate(b, sub)),
        Type::Ref(q, a) => Type::reference(*q, instantiate(a, sub)),
    }
}

impl InstanceEnv {
    /// The instantiated premises of the rule whose conclusion matches `goal`.
    pub fn lookup(&self, goal: &Pred) -> Option<ConstraintSet> {
        if goal.ty.is_var() {
            return None;
        }
        self.rules.iter().find_map(|r| {
            if r.conclusion.class != goal.class {
                return None;
            }
            let mut sub = BTreeMap::new();
            match_type(&r.conclusion.ty, &goal.ty, &mut sub).then(|| {
                r.premises
                    .iter()
                    .map(|p| Pred::new(p.class, instantiate(&p.ty, &sub)))
                    .collect()
            })
        })
    }

    pub fn entails(&self, given: &ConstraintSet, goal: &Pred) -> bool {
        if given.contains(goal) {
            return true;
        }
        match self.lookup(goal) {
            Some(premises) => premises.iter().all(|p| self.entails(given, p)),
            None => false,
        }
    }

    pub fn entails_all(&self, given: &ConstraintSet, goals: &ConstraintSet) -> bool {
        goals.iter().all(|g| self.entails(given, g))
    }

    /// Rewrites constructed-head predicates to the premises of their
    /// instances until only variable-headed predicates remain.
    pub fn reduce_context(&self, p: &ConstraintSet) -> Result<ConstraintSet, IrreduciblePredicate> {
        let mut out = ConstraintSet::new();
        let mut work: Vec<Pred> = p.iter().cloned().collect();
        while let Some(goal) = work.pop() {
            if goal.ty.is_var() {
                out.insert(goal);
                continue;
            }
            match self.lookup(&goal) {
                Some(premises) => work.extend(premises),
                None => return Err(IrreduciblePredicate(goal)),
            }
        }
        Ok(out)
    }
}

pub fn entails(given: &ConstraintSet, goal: &Pred) -> bool {
    instances().entails(given, goal)
}

pub fn entails_all(given: &ConstraintSet, goals: &ConstraintSet) -> bool {
    instances().entails_all(given, goals)
}

pub fn reduce_context(p: &ConstraintSet) -> Result<ConstraintSet, IrreduciblePredicate> {
    instances().reduce_context(p)
}

/// The structural constraints a closure of qualifier `q` places on the
/// types it captures.
pub fn constrain_env<'a>(q: ArrowQual, ts: impl IntoIterator<Item = &'a Type>) -> ConstraintSet {
    let (dup, drop) = match q {
        ArrowQual::U => (true, true),
        ArrowQual::R => (true, false),
        ArrowQual::A => (false, true),
        ArrowQual::L => (false, false),
    };
    let mut cs = ConstraintSet::new();
    for t in ts {
        if dup {
            cs.insert(Pred::dup(t.clone()));
        }
        if drop {
            cs.insert(Pred::drop(t.clone()));
        }
    }
    cs
}

/// Whether values of a type may be used without restriction.
pub fn is_unrestricted(given: &ConstraintSet, t: &Type) -> bool {
    entails(given, &Pred::new(Class::Dup, t.clone())) && entails(given, &Pred::new(Class::Drop, t.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::ArrowQual::*;
    use crate::parser::parse_type;

    fn ty(s: &str) -> Type {
        parse_type(s).unwrap()
    }

    fn cs(ps: &[Pred]) -> ConstraintSet {
        ps.iter().cloned().collect()
    }

    #[test]
    fn rule_table_shape() {
        let env = default_instance_env();
        assert_eq!(env.rules.len(), 13);
        for r in &env.rules {
            assert!(!r.conclusion.ty.is_var());
            let head_vars = r.conclusion.ty.free_type_vars();
            for p in &r.premises {
                assert!(p.ty.free_type_vars().is_subset(&head_vars), "{r}");
            }
        }
    }

    #[test]
    fn rules_do_not_overlap() {
        let env = default_instance_env();
        for (i, r) in env.rules.iter().enumerate() {
            for s in &env.rules[i + 1..] {
                let mut sub = BTreeMap::new();
                let overlap = r.conclusion.class == s.conclusion.class
                    && match_type(&r.conclusion.ty, &s.conclusion.ty, &mut sub);
                assert!(!overlap, "{r} overlaps {s}");
            }
        }
    }

    #[test]
    fn lookup_examples() {
        let env = instances();
        assert_eq!(env.lookup(&Pred::dup(ty("Ref_s a"))), None);
        for r in ["Ref_s a", "Ref_w a"] {
            assert_eq!(env.lookup(&Pred::drop(ty(r))), Some(cs(&[Pred::drop(ty("a"))])));
        }
        assert_eq!(env.lookup(&Pred::dup(Type::Unit)), Some(ConstraintSet::new()));
    }

    #[test]
    fn entails_examples() {
        let none = ConstraintSet::new();
        assert!(entails(&none, &Pred::dup(ty("((), ())"))));
        assert!(!entails(&none, &Pred::dup(ty("Ref_s ()"))));
        assert!(entails(&cs(&[Pred::dup(ty("a"))]), &Pred::dup(ty("(a, () -U> ())"))));
        assert!(!entails(&none, &Pred::drop(ty("() -L> ()"))));
        assert!(!entails(&none, &Pred::dup(ty("a"))));
    }

    #[test]
    fn entails_all_examples() {
        let p = cs(&[Pred::dup(ty("a")), Pred::drop(ty("a"))]);
        assert!(entails_all(&p, &ConstraintSet::new()));
        assert!(entails_all(&p, &cs(&[Pred::dup(ty("a"))])));
        assert!(!entails_all(
            &ConstraintSet::new(),
            &cs(&[Pred::dup(ty("Ref_s ()")), Pred::dup(Type::Unit)])
        ));
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(
            reduce_context(&cs(&[Pred::dup(ty("(a, b)"))])).unwrap(),
            cs(&[Pred::dup(ty("a")), Pred::dup(ty("b"))])
        );
        assert_eq!(reduce_context(&cs(&[Pred::drop(Type::Unit)])).unwrap(), ConstraintSet::new());
        assert_eq!(
            reduce_context(&cs(&[Pred::dup(ty("a -L> b"))])),
            Err(IrreduciblePredicate(Pred::dup(ty("a -L> b"))))
        );
    }

    #[test]
    fn arrow_instances_follow_qualifiers() {
        let none = ConstraintSet::new();
        let expect = [(U, true, true), (R, true, false), (A, false, true), (L, false, false)];
        for (q, dup, drop) in expect {
            let t = Type::arrow(Type::Unit, Type::Unit, q);
            assert_eq!(entails(&none, &Pred::dup(t.clone())), dup, "{q}");
            assert_eq!(entails(&none, &Pred::drop(t)), drop, "{q}");
        }
    }

    #[test]
    fn constrain_examples() {
        let ab = [ty("a"), ty("b")];
        assert!(constrain_env(L, &ab).is_empty());
        assert_eq!(constrain_env(R, &ab[..1]), cs(&[Pred::dup(ty("a"))]));
        assert_eq!(constrain_env(A, &ab[..1]), cs(&[Pred::drop(ty("a"))]));
        assert_eq!(constrain_env(U, &ab[..1]), cs(&[Pred::dup(ty("a")), Pred::drop(ty("a"))]));
    }
}
