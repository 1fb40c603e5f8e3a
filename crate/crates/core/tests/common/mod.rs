//! Random generators shared by the integration tests and the acceptance
//! harness.

#![allow(dead_code)]

use clamp::ast::{ArrowQual, Class, ConstraintSet, Pattern, Pred, RefQual, Scheme, SurfaceTerm, Type};
use clamp::parser::{Decl, DeclItem, Program};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

pub const VARS: [&str; 4] = ["x", "y", "z", "f"];
pub const TYVARS: [&str; 3] = ["a", "b", "c"];

fn pick<R: Rng>(rng: &mut R, xs: &[&str]) -> String {
    xs.choose(rng).expect("nonempty").to_string()
}

fn two<R: Rng>(rng: &mut R, xs: &[&str]) -> (String, String) {
    let mut v: Vec<&str> = xs.to_vec();
    v.shuffle(rng);
    (v[0].to_string(), v[1].to_string())
}

fn qual<R: Rng>(rng: &mut R) -> ArrowQual {
    ArrowQual::ALL[rng.gen_range(0..4)]
}

fn rqual<R: Rng>(rng: &mut R) -> RefQual {
    RefQual::ALL[rng.gen_range(0..2)]
}

/// Splits `n` into `k` parts, each at least 1. Requires `n >= k`.
fn split<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut parts = vec![1; k];
    for _ in 0..n - k {
        parts[rng.gen_range(0..k)] += 1;
    }
    parts
}

/// A surface term of size at most `budget` over the variable pool `vars`.
pub fn gen_term<R: Rng>(rng: &mut R, budget: usize, vars: &[&str]) -> SurfaceTerm {
    assert!(budget >= 1);
    if budget == 1 || rng.gen_ratio(1, 6) {
        return if rng.gen_ratio(3, 4) { SurfaceTerm::var(pick(rng, vars)) } else { SurfaceTerm::unit() };
    }
    let rest = budget - 1;
    let choice = match rest {
        1 => rng.gen_range(0..5),
        2 => rng.gen_range(0..10),
        _ => rng.gen_range(0..11),
    };
    match choice {
        0..=4 => {
            let b = gen_term(rng, rest, vars);
            match choice {
                0 => {
                    let pat = if rng.gen_ratio(1, 4) {
                        let (x, y) = two(rng, vars);
                        Pattern::Pair(x, y)
                    } else {
                        Pattern::Var(pick(rng, vars))
                    };
                    SurfaceTerm::new(clamp::ast::Surface::Lam(qual(rng), pat, Box::new(b)))
                }
                1 => SurfaceTerm::inl(b),
                2 => SurfaceTerm::inr(b),
                3 => SurfaceTerm::new_ref(rqual(rng), b),
                _ => SurfaceTerm::release(rqual(rng), b),
            }
        }
        5..=9 => {
            let p = split(rng, rest, 2);
            let a = gen_term(rng, p[0], vars);
            let b = gen_term(rng, p[1], vars);
            match choice {
                5 => SurfaceTerm::app(a, b),
                6 => SurfaceTerm::pair(a, b),
                7 => SurfaceTerm::swap(rqual(rng), a, b),
                8 => SurfaceTerm::let_(pick(rng, vars), a, b),
                _ => {
                    let (x, y) = two(rng, vars);
                    SurfaceTerm::let_pair(x, y, a, b)
                }
            }
        }
        _ => {
            let p = split(rng, rest, 3);
            let s = gen_term(rng, p[0], vars);
            let l = gen_term(rng, p[1], vars);
            let r = gen_term(rng, p[2], vars);
            SurfaceTerm::case(s, pick(rng, vars), l, pick(rng, vars), r)
        }
    }
}

pub fn gen_type<R: Rng>(rng: &mut R, depth: usize) -> Type {
    if depth == 0 || rng.gen_ratio(1, 4) {
        return if rng.gen_ratio(2, 3) { Type::var(pick(rng, &TYVARS)) } else { Type::Unit };
    }
    let a = gen_type(rng, depth - 1);
    match rng.gen_range(0..4) {
        0 => Type::arrow(a, gen_type(rng, depth - 1), qual(rng)),
        1 => Type::prod(a, gen_type(rng, depth - 1)),
        2 => Type::sum(a, gen_type(rng, depth - 1)),
        _ => Type::reference(rqual(rng), a),
    }
}

pub fn gen_scheme<R: Rng>(rng: &mut R, depth: usize) -> Scheme {
    let ty = gen_type(rng, depth);
    let mut cs = ConstraintSet::new();
    for _ in 0..rng.gen_range(0..3) {
        let class = if rng.gen() { Class::Dup } else { Class::Drop };
        let t = if rng.gen_ratio(3, 4) { Type::var(pick(rng, &TYVARS)) } else { gen_type(rng, 1) };
        cs.insert(Pred::new(class, t));
    }
    Scheme::closed(cs, ty)
}

pub fn gen_program<R: Rng>(rng: &mut R, budget: usize) -> Program {
    let names = ["main", "go", "helper", "k"];
    let n = rng.gen_range(1..=names.len());
    let mut decls = Vec::new();
    for name in &names[..n] {
        if rng.gen_ratio(1, 3) {
            decls.push(Decl { name: name.to_string(), item: DeclItem::Sig(gen_scheme(rng, 3)), pos: Default::default() });
        }
        let e = gen_term(rng, budget, &VARS);
        decls.push(Decl { name: name.to_string(), item: DeclItem::Def(e), pos: Default::default() });
    }
    Program { decls }
}

// ---------------------------------------------------------------------------
// proptest strategies built from the generators above

pub fn arb_term(budget: usize) -> impl Strategy<Value = SurfaceTerm> {
    (any::<u64>(), 1..=budget).prop_map(|(seed, n)| gen_term(&mut seeded(seed), n, &VARS))
}

pub fn arb_type() -> impl Strategy<Value = Type> {
    any::<u64>().prop_map(|seed| gen_type(&mut seeded(seed), 4))
}

pub fn arb_scheme() -> impl Strategy<Value = Scheme> {
    any::<u64>().prop_map(|seed| gen_scheme(&mut seeded(seed), 4))
}

pub fn arb_program() -> impl Strategy<Value = Program> {
    any::<u64>().prop_map(|seed| gen_program(&mut seeded(seed), 12))
}

pub fn seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Independent oracle for the instance environment: the least fixpoint of
// the instance rules over a finite universe of ground types.

/// All ground types built from `()` with at most `depth` constructor
/// layers above the leaves.
pub fn ground_types(depth: usize) -> Vec<Type> {
    if depth == 0 {
        return vec![Type::Unit];
    }
    let smaller = ground_types(depth - 1);
    let mut out = vec![Type::Unit];
    each_layer(&smaller, &mut |t| out.push(t));
    out.sort();
    out.dedup();
    out
}

/// Every type with one constructor applied to types from `smaller`.
pub fn each_layer(smaller: &[Type], f: &mut dyn FnMut(Type)) {
    for a in smaller {
        for rq in RefQual::ALL {
            f(Type::reference(rq, a.clone()));
        }
        for b in smaller {
            f(Type::prod(a.clone(), b.clone()));
            f(Type::sum(a.clone(), b.clone()));
            for q in ArrowQual::ALL {
                f(Type::arrow(a.clone(), b.clone(), q));
            }
        }
    }
}

/// Whether a class holds of a type under the rules, with every premise
/// read off the table below rather than the library's instance list.
pub fn one_step(class: Class, t: &Type, holds: &dyn Fn(Class, &Type) -> bool) -> bool {
    use ArrowQual::*;
    match (class, t) {
        (_, Type::Unit) => true,
        (c, Type::Prod(a, b)) | (c, Type::Sum(a, b)) => holds(c, a) && holds(c, b),
        (Class::Dup, Type::Arrow(_, _, q)) => matches!(q, U | R),
        (Class::Drop, Type::Arrow(_, _, q)) => matches!(q, U | A),
        (Class::Dup, Type::Ref(RefQual::W, _)) => true,
        (Class::Dup, Type::Ref(RefQual::S, _)) => false,
        (Class::Drop, Type::Ref(_, a)) => holds(Class::Drop, a),
        (_, Type::Var(_)) => false,
    }
}

/// Naive Kleene iteration: start from the empty relation and add every
/// `(class, type)` whose premises already hold until nothing changes.
pub fn naive_fixpoint(universe: &[Type]) -> std::collections::BTreeSet<(Class, Type)> {
    use std::collections::BTreeSet;
    let mut known: BTreeSet<(Class, Type)> = BTreeSet::new();
    loop {
        let holds = |c: Class, u: &Type| known.contains(&(c, u.clone()));
        let fresh: Vec<(Class, Type)> = universe
            .iter()
            .flat_map(|t| [(Class::Dup, t.clone()), (Class::Drop, t.clone())])
            .filter(|(c, t)| !known.contains(&(*c, t.clone())) && one_step(*c, t, &holds))
            .collect();
        if fresh.is_empty() {
            return known;
        }
        known.extend(fresh);
    }
}
