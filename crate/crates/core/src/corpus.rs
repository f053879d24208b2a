//! Seeded random problem instances, shared by `verify`, the benchmarks and the tests.
//! Each generator is a pure function of its seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::bayes::DiscreteModel;
use crate::filters::{FilterState, GpModel, LinearSystem};
use crate::hierarchy::{GroupMembers, GroupedPopulation};
use crate::infogeo::DistributionPair;
use crate::objectives::Quadratic;
use crate::price::Population;
use crate::rng::{Rng, SeedStream};

fn rng(family: &str, seed: u64) -> Rng {
    SeedStream::new(seed).named(family).rng()
}

/// Probability vector with entries bounded away from zero, summing to one within rounding.
pub fn simplex(rng: &mut Rng, k: usize) -> DVector<f64> {
    let v = DVector::from_fn(k, |_, _| rng.random_range(0.05..1.0));
    let mut q = &v / v.sum();
    let drift = 1.0 - q.sum();
    q[0] += drift;
    q
}

/// `BBᵀ + ridge·I` with `B` uniform on `[−1, 1]`.
pub fn spd(rng: &mut Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = &b * b.transpose() + DMatrix::identity(n, n) * ridge;
    (&a + a.transpose()) * 0.5
}

/// Population with `m ≤ 50`, `n ≤ 5`. About a quarter of the instances have a
/// rank-deficient trait covariance (a duplicated or constant trait, or `m ≤ n`), and
/// some frequencies are exactly zero.
pub fn population(seed: u64) -> Population {
    let mut r = rng("population", seed);
    let n = r.random_range(1..=5);
    let m = r.random_range(1..=50);
    let mut q = DVector::from_fn(m, |_, _| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.01..1.0) });
    if q.sum() == 0.0 {
        q[0] = 1.0;
    }
    let mut q = &q / q.sum();
    let drift = 1.0 - q.sum();
    let first = q.iter().position(|&x| x > 0.0).unwrap_or(0);
    q[first] += drift;
    let mut theta = DMatrix::from_fn(m, n, |_, _| r.random_range(-3.0..3.0));
    if n >= 2 && r.random_bool(0.25) {
        match r.random_range(0..2) {
            0 => {
                let c = theta.column(0).into_owned() * 2.0;
                theta.set_column(1, &c);
            }
            _ => theta.set_column(n - 1, &DVector::from_element(m, 0.7)),
        }
    }
    let mut fitness = DVector::from_fn(m, |_, _| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..3.0) });
    if q.dot(&fitness) <= 0.0 {
        fitness[first] = 1.0;
    }
    let dtheta = r.random_bool(0.7).then(|| DMatrix::from_fn(m, n, |_, _| r.random_range(-0.5..0.5)));
    Population::new(q, theta, fitness, dtheta).expect("valid by construction")
}

/// Pair of full-support distributions over 2 to 20 points.
pub fn distribution_pair(seed: u64) -> DistributionPair {
    let mut r = rng("pair", seed);
    let k = r.random_range(2..=20);
    let q = simplex(&mut r, k);
    let qp = simplex(&mut r, k);
    DistributionPair::new(q, qp).expect("valid by construction")
}

/// Random direction `d = q ∘ (u − q·u)` in the tangent space of the simplex at `q`,
/// scaled to unit Fisher length `Σ d²/q = 1`.
pub fn tangent_direction(seed: u64, q: &DVector<f64>) -> DVector<f64> {
    let mut r = rng("direction", seed);
    let u = DVector::from_fn(q.len(), |_, _| r.random_range(-1.0..1.0));
    let d = q.component_mul(&u.add_scalar(-q.dot(&u)));
    let len: f64 = d.iter().zip(q.iter()).map(|(d, q)| d * d / q).sum::<f64>().sqrt();
    if len == 0.0 {
        d
    } else {
        d / len
    }
}

/// `U = −½θᵀAθ + cᵀθ` with `n ≤ max_n`.
pub fn concave_quadratic(seed: u64, max_n: usize) -> Quadratic {
    let mut r = rng("quadratic", seed);
    let n = r.random_range(1..=max_n);
    let a = spd(&mut r, n, 0.2);
    let c = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
    Quadratic::new(a, c).expect("valid by construction")
}

/// GP problem with `N ≤ max_n` inputs in `d ≤ 3` dimensions, plus observations.
pub fn gp_instance(seed: u64, max_n: usize) -> (GpModel, DVector<f64>) {
    let mut r = rng("gp", seed);
    let n = r.random_range(1..=max_n);
    let d = r.random_range(1..=3);
    let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-2.0..2.0));
    let model = GpModel::new(
        x,
        r.random_range(0.5..2.0),
        r.random_range(0.3..2.0),
        r.random_range(0.01..1.0),
        DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0)),
    )
    .expect("valid by construction");
    let y = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
    (model, y)
}

/// Linear system with state dimension `≤ 4` and observation dimension `≤ 3`, a PD prior
/// and one observation.
pub fn kalman_instance(seed: u64) -> (LinearSystem, FilterState, DVector<f64>) {
    let mut r = rng("kalman", seed);
    let n = r.random_range(1..=4);
    let k = r.random_range(1..=3);
    let f = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0)) * 0.9;
    let q = spd(&mut r, n, 0.01) * 0.1;
    let h = DMatrix::from_fn(k, n, |_, _| r.random_range(-1.0..1.0));
    let rr = spd(&mut r, k, 0.1);
    let sys = LinearSystem::new(f, q, h, rr).expect("valid by construction");
    let prior = FilterState::new(DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0)), spd(&mut r, n, 0.1))
        .expect("valid by construction");
    let y = DVector::from_fn(k, |_, _| r.random_range(-2.0..2.0));
    (sys, prior, y)
}

/// Unstructured discrete model on 2 to 30 points with full-support prior.
pub fn discrete_model(seed: u64) -> DiscreteModel {
    let mut r = rng("model", seed);
    let k = r.random_range(2..=30);
    let prior = simplex(&mut r, k);
    let ll = DVector::from_fn(k, |_, _| r.random_range(-6.0..2.0));
    DiscreteModel::unstructured(prior, ll).expect("valid by construction")
}

/// Grouped population with up to 6 groups of up to 10 members each, `n ≤ 4`.
pub fn grouped_population(seed: u64) -> GroupedPopulation {
    let mut r = rng("grouped", seed);
    let k = r.random_range(1..=6);
    let n = r.random_range(1..=4);
    let groups = (0..k)
        .map(|_| {
            let m = r.random_range(1..=10);
            let flat = r.random_bool(0.2);
            GroupMembers {
                q: simplex(&mut r, m),
                theta: DMatrix::from_fn(m, n, |_, j| if flat && j == 0 { 0.5 } else { r.random_range(-2.0..2.0) }),
                fitness: DVector::from_fn(m, |_, _| r.random_range(0.05..3.0)),
                dtheta: r.random_bool(0.7).then(|| DMatrix::from_fn(m, n, |_, _| r.random_range(-0.5..0.5))),
            }
        })
        .collect();
    GroupedPopulation::new(simplex(&mut r, k), groups).expect("valid by construction")
}
