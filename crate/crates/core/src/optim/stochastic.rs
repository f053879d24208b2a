use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{checked_gradient, require_positive, simple_fmb, OptimizerState, StepReport};
use crate::error::{FmbError, Result};
use crate::linalg::{check_finite_vec, eigen_map, repair_pd, sqrt_psd};
use crate::objectives::Objective;
use crate::rng::Rng;

use super::curvature::HESSIAN_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgldMetric {
    #[default]
    Identity,
    InverseHessian,
}

/// Langevin step (Euler–Maruyama): `Δθ = ηM∇U + √(2ηM) ε`, `ε ~ N(0, I)`.
pub fn step_sgld(
    obj: &dyn Objective,
    state: &OptimizerState,
    eta: f64,
    metric: SgldMetric,
    rng: &mut Rng,
) -> Result<(OptimizerState, StepReport)> {
    let eps = DVector::from_fn(state.dim(), |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    step_sgld_with(obj, state, eta, metric, &eps)
}

/// [`step_sgld`] with the standard-normal draw supplied by the caller.
pub fn step_sgld_with(
    obj: &dyn Objective,
    state: &OptimizerState,
    eta: f64,
    metric: SgldMetric,
    eps: &DVector<f64>,
) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    if eps.len() != n {
        return Err(FmbError::Dimension(format!("noise has length {} but theta has {n}", eps.len())));
    }
    let (m, noise) = match metric {
        SgldMetric::Identity => (DMatrix::identity(n, n), eps * (2.0 * eta).sqrt()),
        SgldMetric::InverseHessian => {
            let h = obj
                .hessian(&state.theta)
                .ok_or_else(|| FmbError::Unsupported(format!("{} provides no Hessian", obj.name())))?;
            let m = eigen_map(&repair_pd(&(-h), HESSIAN_FLOOR)?, |l| 1.0 / l);
            let root = sqrt_psd(&(&m * (2.0 * eta)));
            let noise = root * eps;
            (m, noise)
        }
    };
    let metric_scaled = m * eta;
    let drift = &metric_scaled * &g;
    let delta = &drift + &noise;
    check_finite_vec(&delta, "langevin step")?;
    let noise_trace = 2.0 * metric_scaled.trace();
    let fmb = simple_fmb(metric_scaled, g, DVector::zeros(n), noise);
    Ok((state.advanced(&delta), StepReport::new(state.t + 1, delta, fmb).with("noise_trace", noise_trace)))
}

/// Mini-batch ascent `Δθ = η ĝ`. The force is the full gradient and the sampling error
/// `η(ĝ − ∇U)` is reported as noise.
pub fn step_sgd(
    obj: &dyn Objective,
    state: &OptimizerState,
    eta: f64,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    if batch_size == 0 {
        return Err(FmbError::InvalidInput("batch_size must be at least 1".into()));
    }
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    let batch = obj
        .batch_gradient(&state.theta, rng, batch_size)
        .ok_or_else(|| FmbError::Unsupported(format!("{} has no mini-batch gradient", obj.name())))?;
    check_finite_vec(&batch.gradient, "batch gradient")?;
    let delta = &batch.gradient * eta;
    let xi = (&batch.gradient - &g) * eta;
    let fmb = simple_fmb(DMatrix::identity(n, n) * eta, g, DVector::zeros(n), xi);
    let report = StepReport::new(state.t + 1, delta.clone(), fmb)
        .with("batch_size", batch.batch_size as f64)
        .with("batch_clamped", if batch.clamped { 1.0 } else { 0.0 });
    Ok((state.advanced(&delta), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{LinRegSynthetic, Quadratic};
    use crate::optim::step_gd;
    use crate::rng::SeedStream;

    fn std_normal_target() -> Quadratic {
        Quadratic::new(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap()
    }

    #[test]
    fn zero_noise_is_gd() {
        let q = Quadratic::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        let s = OptimizerState::new(DVector::from_row_slice(&[0.4, -0.2]), 0);
        let (a, _) = step_gd(&q, &s, 0.05).unwrap();
        let (b, r) = step_sgld_with(&q, &s, 0.05, SgldMetric::Identity, &DVector::zeros(2)).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(r.noise().amax(), 0.0);
        // inverse-Hessian metric with zero noise is a damped Newton step
        let (_, r) = step_sgld_with(&q, &s, 0.05, SgldMetric::InverseHessian, &DVector::zeros(2)).unwrap();
        let newton = q.a().clone().try_inverse().unwrap() * q.gradient(&s.theta) * 0.05;
        assert!((&r.delta_theta - newton).amax() < 1e-12);
    }

    #[test]
    fn drift_and_noise_scale() {
        let q = std_normal_target();
        let s = OptimizerState::new(DVector::from_element(1, 1.0), 0);
        let eps = DVector::from_element(1, 0.7);
        let (_, a) = step_sgld_with(&q, &s, 0.04, SgldMetric::Identity, &eps).unwrap();
        let (_, b) = step_sgld_with(&q, &s, 0.01, SgldMetric::Identity, &eps).unwrap();
        let drift = |r: &StepReport| (r.metric() * r.force())[0];
        assert!((drift(&a) / drift(&b) - 4.0).abs() < 1e-12);
        assert!((a.noise()[0] / b.noise()[0] - 2.0).abs() < 1e-12);
        assert!((a.diagnostics["noise_trace"] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn stationary_variance_short_run() {
        // shorter, looser version of the acceptance check
        let q = std_normal_target();
        let mut s = OptimizerState::new(DVector::zeros(1), 0);
        let mut rng = SeedStream::new(42).rng();
        let (mut sum, mut sum2, n) = (0.0, 0.0, 50_000);
        for _ in 0..n {
            s = step_sgld(&q, &s, 0.05, SgldMetric::Identity, &mut rng).unwrap().0;
            sum += s.theta[0];
            sum2 += s.theta[0] * s.theta[0];
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn sgd_full_batch_is_gd() {
        let l = LinRegSynthetic::generate(64, 3, 0.5, 1).unwrap();
        let s = OptimizerState::new(DVector::from_row_slice(&[0.3, 0.1, -0.4]), 0);
        let mut rng = SeedStream::new(1).rng();
        let (a, r) = step_sgd(&l, &s, 0.1, 64, &mut rng).unwrap();
        let (b, _) = step_gd(&l, &s, 0.1).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(r.noise().amax(), 0.0);
        let (_, r) = step_sgd(&l, &s, 0.1, 1000, &mut rng).unwrap();
        assert_eq!(r.diagnostics["batch_clamped"], 1.0);
    }

    #[test]
    fn sgd_is_reproducible() {
        let l = LinRegSynthetic::generate(64, 3, 0.5, 1).unwrap();
        let s = OptimizerState::new(DVector::zeros(3), 0);
        let a = step_sgd(&l, &s, 0.1, 4, &mut SeedStream::new(9).rng()).unwrap();
        let b = step_sgd(&l, &s, 0.1, 4, &mut SeedStream::new(9).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_variance_shrinks_with_batch_size() {
        let l = LinRegSynthetic::generate(2000, 1, 1.0, 2).unwrap();
        let theta = DVector::from_element(1, 0.0);
        let var = |b: usize| {
            let mut rng = SeedStream::new(b as u64).rng();
            let draws: Vec<f64> = (0..10_000).map(|_| l.batch_gradient(&theta, &mut rng, b).unwrap().gradient[0]).collect();
            let m = draws.iter().sum::<f64>() / draws.len() as f64;
            draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws.len() as f64
        };
        let ratio = var(1) / var(16);
        // sampling without replacement from 2000 points shrinks the ratio by < 1%
        assert!((ratio / 16.0 - 1.0).abs() < 0.25, "ratio {ratio}");
    }
}
