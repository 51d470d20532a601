//! Random problems with strictly feasible primal and dual.

use super::{build_problem, LinearFunctional, ProblemSpec, Relation, SdpProblem, VarId};
use crate::linalg::{CMat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gauss(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| gauss(rng));
    (&g + g.adjoint()).scale(0.5)
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| gauss(rng));
    &g * g.adjoint() + CMat::identity(n, n).scale(0.5)
}

/// Strictly feasible primal and dual by construction: b = A(X0) (plus slack
/// for inequalities) with X0 ≻ 0, and C ≻ 0 with zero objective on free scalars.
pub fn random_feasible(seed: u64) -> SdpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = ProblemSpec::new();
    let n_blocks = rng.random_range(1..=3);
    let mut vars: Vec<(VarId, usize, CMat)> = Vec::new();
    let mut obj = LinearFunctional::new();
    for b in 0..n_blocks {
        let n = rng.random_range(1..=5);
        let v = spec.psd(format!("X{b}"), n);
        let x0 = random_pd(&mut rng, n);
        obj = obj.term(v, random_pd(&mut rng, n));
        vars.push((v, n, x0));
    }
    let free = if rng.random_bool(0.5) {
        let v = spec.free_scalar("f");
        Some((v, rng.sample::<f64, _>(StandardNormal)))
    } else {
        None
    };
    spec.minimize(obj);
    let m = rng.random_range(1..=8);
    for i in 0..m {
        let mut f = LinearFunctional::new();
        let mut value = 0.0;
        for (v, n, x0) in &vars {
            if rng.random_bool(0.7) {
                let a = random_hermitian(&mut rng, *n);
                value += a.dotc(x0).re;
                f = f.term(*v, a);
            }
        }
        if let Some((v, f0)) = free {
            if rng.random_bool(0.5) {
                let a: f64 = rng.sample(StandardNormal);
                value += a * f0;
                f = f.scalar(v, a);
            }
        }
        let slack = 0.1 + rng.random::<f64>();
        let (rel, rhs) = match rng.random_range(0..3) {
            0 => (Relation::Le, value + slack),
            1 => (Relation::Ge, value - slack),
            _ => (Relation::Eq, value),
        };
        spec.constrain(format!("c{i}"), f, rel, rhs);
    }
    build_problem(spec).expect("generated problem is well formed")
}

