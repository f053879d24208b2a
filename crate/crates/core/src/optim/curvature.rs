use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{checked_gradient, require_positive, simple_fmb, OptimizerState, StepReport};
use crate::bayes::logsumexp;
use crate::error::{FmbError, Result};
use crate::linalg::{check_finite_mat, eigen_map, repair_pd, symmetrize};
use crate::objectives::Objective;
use crate::rng::Rng;

/// Eigenvalues of the repaired curvature are floored at this fraction of the largest.
pub const HESSIAN_FLOOR: f64 = 1e-8;

/// Effective sample size below which importance weights are rejected, capped by the
/// number of draws so that a single deterministic draw remains usable.
const MIN_ESS: f64 = 5.0;

fn hessian_of(obj: &dyn Objective, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let h = obj
        .hessian(theta)
        .ok_or_else(|| FmbError::Unsupported(format!("{} provides no Hessian", obj.name())))?;
    check_finite_mat(&h, "hessian")?;
    Ok(h)
}

/// Inverse of a repaired curvature matrix `G`, returned together with `G`.
fn repaired_inverse(neg_h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = repair_pd(neg_h, HESSIAN_FLOOR)?;
    let inv = eigen_map(&g, |l| 1.0 / l);
    Ok((g, inv))
}

/// Newton ascent: `Δθ = (−H)⁻¹∇U` with `−H` repaired to positive definite.
pub fn step_newton(obj: &dyn Objective, state: &OptimizerState) -> Result<(OptimizerState, StepReport)> {
    let g = checked_gradient(obj, &state.theta)?;
    let h = hessian_of(obj, &state.theta)?;
    let n = g.len();
    let neg_h = -h;
    let (repaired, metric) = repaired_inverse(&neg_h)?;
    let delta = &metric * &g;
    let repair = (&repaired - symmetrize(&neg_h)).amax();
    let fmb = simple_fmb(metric, g, DVector::zeros(n), DVector::zeros(n));
    Ok((state.advanced(&delta), StepReport::new(state.t + 1, delta, fmb).with("hessian_repair", repair)))
}

/// Natural-gradient ascent with the Boltzmann-averaged curvature
/// `G = −E[H(θ)]` under `q(θ) ∝ exp(b U(θ))`.
///
/// The expectation is a self-normalized importance-sampling estimate with a Gaussian
/// proposal `N(θ, s² I)`. With `s = 0` every draw sits at `θ` and `G = −H(θ)`.
pub fn step_natural_gradient(
    obj: &dyn Objective,
    state: &OptimizerState,
    eta: f64,
    boltzmann_b: f64,
    n_samples: usize,
    proposal_scale: f64,
    rng: &mut Rng,
) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    require_positive("boltzmann_b", boltzmann_b)?;
    if n_samples == 0 {
        return Err(FmbError::InvalidInput("n_samples must be at least 1".into()));
    }
    if !(proposal_scale >= 0.0 && proposal_scale.is_finite()) {
        return Err(FmbError::InvalidInput(format!("proposal_scale must be nonnegative, got {proposal_scale}")));
    }
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    let mut points = Vec::with_capacity(n_samples);
    let mut logw = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z = DVector::from_fn(n, |_, _| {
            let e: f64 = StandardNormal.sample(rng);
            e
        });
        let x = &state.theta + &z * proposal_scale;
        // target exp(bU) over proposal density exp(−‖z‖²/2), constants dropped
        let lw = boltzmann_b * obj.value(&x) + 0.5 * z.norm_squared();
        if !lw.is_finite() {
            return Err(FmbError::NonFinite(format!("objective at importance sample {:?}", x.as_slice())));
        }
        points.push(x);
        logw.push(lw);
    }
    let lz = logsumexp(logw.iter().cloned());
    let weights: Vec<f64> = logw.iter().map(|l| (l - lz).exp()).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let min_ess = MIN_ESS.min(n_samples as f64);
    // tolerance for rounding when every weight is equal
    if ess < min_ess * (1.0 - 1e-12) {
        return Err(FmbError::DegenerateImportanceWeights { ess, min: min_ess });
    }
    let mut fisher = DMatrix::zeros(n, n);
    for (x, w) in points.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        fisher -= hessian_of(obj, x)? * *w;
    }
    let (_, inv) = repaired_inverse(&fisher)?;
    let metric = inv * eta;
    let delta = &metric * &g;
    let fmb = simple_fmb(metric, g, DVector::zeros(n), DVector::zeros(n));
    Ok((state.advanced(&delta), StepReport::new(state.t + 1, delta, fmb).with("ess", ess)))
}

/// `−E[H]` under `exp(bU)` by midpoint quadrature on a box, for `dim ≤ 2`.
pub fn boltzmann_fisher_quadrature(
    obj: &dyn Objective,
    b: f64,
    lo: &[f64],
    hi: &[f64],
    points_per_axis: usize,
) -> Result<DMatrix<f64>> {
    let n = obj.dim();
    if n == 0 || n > 2 || lo.len() != n || hi.len() != n || points_per_axis == 0 {
        return Err(FmbError::Unsupported("quadrature is implemented for one or two dimensions".into()));
    }
    let axis = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * (i as f64 + 0.5) / points_per_axis as f64;
    let mut nodes = Vec::new();
    if n == 1 {
        for i in 0..points_per_axis {
            nodes.push(DVector::from_element(1, axis(0, i)));
        }
    } else {
        for i in 0..points_per_axis {
            for j in 0..points_per_axis {
                nodes.push(DVector::from_row_slice(&[axis(0, i), axis(1, j)]));
            }
        }
    }
    let logw: Vec<f64> = nodes.iter().map(|x| b * obj.value(x)).collect();
    let lz = logsumexp(logw.iter().cloned());
    let mut g = DMatrix::zeros(n, n);
    for (x, lw) in nodes.iter().zip(&logw) {
        g -= hessian_of(obj, x)? * (lw - lz).exp();
    }
    Ok(g)
}

/// Quasi-Newton ascent `Δθ = η B ∇U`, followed by the standard BFGS update of the
/// inverse-curvature estimate `B` with `s = Δθ` and `y = ∇U(θ) − ∇U(θ′)`. The update is
/// skipped when `sᵀy ≤ 1e-12‖s‖‖y‖`.
pub fn step_bfgs(obj: &dyn Objective, state: &OptimizerState, eta: f64) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    let metric = &state.inv_hessian * eta;
    let delta = &metric * &g;
    let mut next = state.advanced(&delta);
    let g_next = checked_gradient(obj, &next.theta)?;
    let s = &delta;
    let y = &g - &g_next;
    let sy = s.dot(&y);
    let skipped = sy <= 1e-12 * s.norm() * y.norm() || sy <= 0.0;
    if !skipped {
        let rho = 1.0 / sy;
        let i = DMatrix::<f64>::identity(n, n);
        let left = &i - s * y.transpose() * rho;
        let right = &i - &y * s.transpose() * rho;
        next.inv_hessian = symmetrize(&(left * &state.inv_hessian * right + s * s.transpose() * rho));
    }
    let fmb = simple_fmb(metric, g, DVector::zeros(n), DVector::zeros(n));
    let report = StepReport::new(state.t + 1, delta, fmb).with("curvature_update_skipped", if skipped { 1.0 } else { 0.0 });
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{GaussianBumps, Quadratic, RosenbrockNeg};
    use crate::optim::step_gd;
    use crate::rng::SeedStream;
    use rand::Rng as _;

    fn parabola() -> Quadratic {
        Quadratic::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 6.0)).unwrap()
    }

    fn random_quadratic(n: usize, seed: u64) -> Quadratic {
        let mut rng = SeedStream::new(seed).rng();
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = b.tr_mul(&b) + DMatrix::identity(n, n) * 0.3;
        let c = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        Quadratic::new(a, c).unwrap()
    }

    #[test]
    fn newton_on_parabola() {
        let s = OptimizerState::new(DVector::zeros(1), 0);
        let (n, r) = step_newton(&parabola(), &s).unwrap();
        assert_eq!(r.force()[0], 6.0);
        assert!((r.metric()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((r.delta_theta[0] - 3.0).abs() < 1e-14);
        let (_, r) = step_newton(&parabola(), &n).unwrap();
        assert!(r.delta_theta[0].abs() < 1e-14);
    }

    #[test]
    fn newton_one_step_on_random_quadratics() {
        for seed in 0..20 {
            let q = random_quadratic(1 + (seed as usize % 6), seed);
            let s = OptimizerState::new(DVector::from_element(q.dim(), 4.0), 0);
            let (n, _) = step_newton(&q, &s).unwrap();
            assert!((&n.theta - q.argmax().unwrap()).amax() < 1e-8);
        }
    }

    #[test]
    fn newton_rejects_convex_locus() {
        // a pure minimum: −H has no positive eigenvalue
        struct Bowl;
        impl Objective for Bowl {
            fn name(&self) -> &'static str { "bowl" }
            fn dim(&self) -> usize { 2 }
            fn value(&self, t: &DVector<f64>) -> f64 { t.norm_squared() }
            fn gradient(&self, t: &DVector<f64>) -> DVector<f64> { t * 2.0 }
            fn hessian(&self, _t: &DVector<f64>) -> Option<DMatrix<f64>> { Some(DMatrix::identity(2, 2) * 2.0) }
        }
        let s = OptimizerState::new(DVector::from_element(2, 1.0), 0);
        assert_eq!(step_newton(&Bowl, &s).unwrap_err(), FmbError::NonConcaveLocus);
    }

    #[test]
    fn newton_repairs_saddle() {
        let r = RosenbrockNeg::new(2).unwrap();
        // −H is indefinite here
        let s = OptimizerState::new(DVector::from_row_slice(&[0.0, 1.0]), 0);
        let (_, rep) = step_newton(&r, &s).unwrap();
        assert!(rep.diagnostics["hessian_repair"] > 0.0);
        assert!(crate::linalg::min_eigenvalue(rep.metric()) > 0.0);
        assert!(rep.predicted_gain() > 0.0);
    }

    #[test]
    fn natural_gradient_on_quadratic_is_scaled_newton() {
        let q = random_quadratic(3, 5);
        let s = OptimizerState::new(DVector::from_element(3, 1.0), 0);
        let (_, newton) = step_newton(&q, &s).unwrap();
        let mut rng = SeedStream::new(3).rng();
        for (ns, scale) in [(1, 0.0), (16, 0.5), (64, 2.0)] {
            let (_, r) = step_natural_gradient(&q, &s, 0.25, 2.0, ns, scale, &mut rng).unwrap();
            assert!((&r.delta_theta - &newton.delta_theta * 0.25).amax() < 1e-10);
        }
    }

    #[test]
    fn natural_gradient_rejects_degenerate_weights() {
        let q = random_quadratic(2, 1);
        let s = OptimizerState::new(DVector::zeros(2), 0);
        let mut rng = SeedStream::new(3).rng();
        let e = step_natural_gradient(&q, &s, 0.1, 500.0, 50, 3.0, &mut rng).unwrap_err();
        assert!(matches!(e, FmbError::DegenerateImportanceWeights { .. }));
    }

    #[test]
    fn boltzmann_curvature_concentrates_on_best_basin() {
        // tall narrow bump at 0 and a lower broad bump at 3
        let obj = GaussianBumps::new(
            vec![DVector::from_element(1, 0.0), DVector::from_element(1, 3.0)],
            vec![0.5, 1.0],
            Some(vec![1.0, 0.3]),
        )
        .unwrap();
        let b = 20.0;
        let quad = boltzmann_fisher_quadrature(&obj, b, &[-4.0], &[7.0], 20000).unwrap();
        let at_best = -obj.hessian(&DVector::from_element(1, 0.0)).unwrap();
        assert!((quad[(0, 0)] - at_best[(0, 0)]).abs() / at_best[(0, 0)] < 0.1);
        // importance-sampling estimate agrees with the quadrature oracle
        let s = OptimizerState::new(DVector::from_element(1, 0.2), 0);
        let g = obj.gradient(&s.theta);
        let mut rng = SeedStream::new(11).rng();
        let (_, r) = step_natural_gradient(&obj, &s, 1.0, b, 4000, 0.5, &mut rng).unwrap();
        let est = g[0] / r.delta_theta[0];
        assert!((est - quad[(0, 0)]).abs() / quad[(0, 0)] < 0.05, "est {est} quad {}", quad[(0, 0)]);
    }

    #[test]
    fn bfgs_first_step_is_gd_and_converges() {
        let q = random_quadratic(2, 8);
        let s = OptimizerState::new(DVector::from_element(2, 2.0), 0);
        let (_, gd) = step_gd(&q, &s, 0.1).unwrap();
        let (_, bf) = step_bfgs(&q, &s, 0.1).unwrap();
        assert_eq!(gd.delta_theta, bf.delta_theta);

        // exact line search along d = B g
        let a = q.a().clone();
        let target = a.clone().try_inverse().unwrap();
        let mut st = s;
        for _ in 0..4 {
            let g = q.gradient(&st.theta);
            if g.norm() < 1e-12 {
                break;
            }
            let d = &st.inv_hessian * &g;
            let alpha = g.dot(&d) / d.dot(&(&a * &d));
            let (n, r) = step_bfgs(&q, &st, alpha).unwrap();
            assert!(r.reconstruction_error() < 1e-14);
            st = n;
        }
        assert!((&st.inv_hessian - target).amax() < 1e-6);
    }
}
