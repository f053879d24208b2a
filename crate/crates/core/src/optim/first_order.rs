use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{checked_gradient, require_positive, require_unit_interval, simple_fmb, OptimizerState, StepReport};
use crate::error::{FmbError, Result};
use crate::objectives::Objective;
use crate::price::FmbDecomposition;

/// `Δθ = η∇U` with `M = ηI`.
pub fn step_gd(obj: &dyn Objective, state: &OptimizerState, eta: f64) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    let delta = &g * eta;
    let fmb = simple_fmb(DMatrix::identity(n, n) * eta, g, DVector::zeros(n), DVector::zeros(n));
    Ok((state.advanced(&delta), StepReport::new(state.t + 1, delta, fmb)))
}

/// Gradient step with an L2 pull toward the origin, carried as bias `γ = −ηλθ`.
pub fn step_regularized(
    obj: &dyn Objective,
    state: &OptimizerState,
    eta: f64,
    lambda: f64,
) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(FmbError::InvalidInput(format!("lambda must be nonnegative, got {lambda}")));
    }
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    let gamma = &state.theta * (-eta * lambda);
    let delta = &g * eta + &gamma;
    let fmb = simple_fmb(DMatrix::identity(n, n) * eta, g, gamma, DVector::zeros(n));
    Ok((state.advanced(&delta), StepReport::new(state.t + 1, delta, fmb)))
}

/// Heavy-ball momentum: `m_t = (1−u)g_t + u m_{t−1}`, `Δθ = η m_t`. The carried-over
/// momentum is the bias `γ = ηu m_{t−1}`.
pub fn step_polyak(obj: &dyn Objective, state: &OptimizerState, eta: f64, u: f64) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    require_unit_interval("u", u)?;
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    let m = &g * (1.0 - u) + &state.momentum * u;
    let delta = &m * eta;
    let gamma = &state.momentum * (eta * u);
    let fmb = simple_fmb(DMatrix::identity(n, n) * (eta * (1.0 - u)), g, gamma, DVector::zeros(n));
    let mut next = state.advanced(&delta);
    next.momentum = m;
    Ok((next, StepReport::new(state.t + 1, delta, fmb)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamVariant {
    /// Moving averages used as they are.
    #[default]
    Plain,
    /// Averages divided by `1 − u^t` and `1 − s^t`.
    BiasCorrected,
}

/// Adam: `Δθ = η m_t / (√v_t + c)` elementwise.
///
/// Decomposed as `M = diag(η(1−u)/(√v_t + c))`, `f = g_t`, `C = M`,
/// `β = u m_{t−1}/(1−u)`, `γ = 0`, so that `M f + C β = η m_t/(√v_t + c)`
/// and `Δθ = M m_t/(1−u)`. The bias-corrected variant rescales `M` accordingly.
pub fn step_adam(
    obj: &dyn Objective,
    state: &OptimizerState,
    eta: f64,
    u: f64,
    s: f64,
    c: f64,
    variant: AdamVariant,
) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    require_positive("c", c)?;
    require_unit_interval("u", u)?;
    require_unit_interval("s", s)?;
    let g = checked_gradient(obj, &state.theta)?;
    let (next, report) = adam_update(state, &g, eta, u, s, c, variant);
    Ok((next, report))
}

/// Adam step for an externally supplied gradient.
pub(crate) fn adam_update(
    state: &OptimizerState,
    g: &DVector<f64>,
    eta: f64,
    u: f64,
    s: f64,
    c: f64,
    variant: AdamVariant,
) -> (OptimizerState, StepReport) {
    let n = g.len();
    let t = state.t + 1;
    let v = g.component_mul(g) * (1.0 - s) + &state.second_moment * s;
    let m = g * (1.0 - u) + &state.momentum * u;
    let (m_scale, v_hat) = match variant {
        AdamVariant::Plain => (1.0, v.clone()),
        AdamVariant::BiasCorrected => {
            let ti = t as i32;
            (1.0 / (1.0 - u.powi(ti)), &v / (1.0 - s.powi(ti)))
        }
    };
    let denom = v_hat.map(|x| x.sqrt() + c);
    let delta = DVector::from_fn(n, |i, _| eta * m_scale * m[i] / denom[i]);
    let mdiag = DVector::from_fn(n, |i, _| eta * m_scale * (1.0 - u) / denom[i]);
    let metric = DMatrix::from_diagonal(&mdiag);
    let beta = &state.momentum * (u / (1.0 - u));
    let fmb = FmbDecomposition {
        metric: metric.clone(),
        force: g.clone(),
        bias_cov: metric,
        beta,
        gamma: DVector::zeros(n),
        xi: DVector::zeros(n),
    };
    let mut next = state.advanced(&delta);
    next.momentum = m;
    next.second_moment = v;
    (next, StepReport::new(t, delta, fmb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `½‖θ‖²` on all of ℝⁿ.
    Euclidean,
    /// `Σ θ log θ − θ` on the positive orthant.
    NegEntropy,
    /// `Σ θ log θ` restricted to the probability simplex.
    SimplexEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorForm {
    /// Exact dual-map update; the departure from the first-order step is reported as bias.
    #[default]
    Exact,
    /// `Δθ = η H_φ⁻¹ ∇U` only.
    FirstOrder,
}

const SIMPLEX_TOL: f64 = 1e-9;

impl Potential {
    fn check_domain(self, theta: &DVector<f64>) -> Result<()> {
        match self {
            Potential::Euclidean => Ok(()),
            Potential::NegEntropy | Potential::SimplexEntropy => {
                if let Some(i) = theta.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(FmbError::OutsideDomain(format!(
                        "entropy potential needs strictly positive coordinates; theta[{i}] = {}",
                        theta[i]
                    )));
                }
                if self == Potential::SimplexEntropy && (theta.sum() - 1.0).abs() > SIMPLEX_TOL {
                    return Err(FmbError::OutsideDomain(format!(
                        "simplex potential needs coordinates summing to 1, got {}",
                        theta.sum()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Inverse Hessian of the potential (on the tangent space for the simplex).
    pub fn inverse_hessian(self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = theta.len();
        match self {
            Potential::Euclidean => DMatrix::identity(n, n),
            Potential::NegEntropy => DMatrix::from_diagonal(theta),
            Potential::SimplexEntropy => DMatrix::from_diagonal(theta) - theta * theta.transpose(),
        }
    }

    /// Exact update solving `∇φ(θ′) = ∇φ(θ) + η∇U` (with the simplex multiplier).
    pub fn exact_step(self, theta: &DVector<f64>, g: &DVector<f64>, eta: f64) -> DVector<f64> {
        match self {
            Potential::Euclidean => theta + g * eta,
            Potential::NegEntropy => theta.zip_map(g, |t, gi| t * (eta * gi).exp()),
            Potential::SimplexEntropy => {
                // subtract the largest exponent before exponentiating
                let mx = g.max();
                let un = theta.zip_map(g, |t, gi| t * (eta * (gi - mx)).exp());
                let z = un.sum();
                un / z
            }
        }
    }
}

/// Mirror ascent. The report always carries `M = ηH_φ⁻¹` and `f = ∇U`; in exact form the
/// difference between the exact and first-order updates is the bias `γ`, and its norm is
/// recorded as the `mirror_gap` diagnostic.
pub fn step_mirror(
    obj: &dyn Objective,
    state: &OptimizerState,
    eta: f64,
    potential: Potential,
    form: MirrorForm,
) -> Result<(OptimizerState, StepReport)> {
    require_positive("eta", eta)?;
    potential.check_domain(&state.theta)?;
    let g = checked_gradient(obj, &state.theta)?;
    let n = g.len();
    let metric = potential.inverse_hessian(&state.theta) * eta;
    let first_order = &metric * &g;
    let (delta, next_theta) = match (potential, form) {
        // identical arithmetic to plain gradient ascent
        (Potential::Euclidean, _) => {
            let d = &g * eta;
            let nt = &state.theta + &d;
            (d, nt)
        }
        (_, MirrorForm::FirstOrder) => (first_order.clone(), &state.theta + &first_order),
        (_, MirrorForm::Exact) => {
            let nt = potential.exact_step(&state.theta, &g, eta);
            (&nt - &state.theta, nt)
        }
    };
    let gamma = match (potential, form) {
        (Potential::Euclidean, _) | (_, MirrorForm::FirstOrder) => DVector::zeros(n),
        _ => &delta - &first_order,
    };
    let gap = gamma.norm();
    let fmb = simple_fmb(metric, g, gamma, DVector::zeros(n));
    let mut next = state.advanced(&delta);
    next.theta = next_theta;
    Ok((next, StepReport::new(state.t + 1, delta, fmb).with("mirror_gap", gap)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{LinRegSynthetic, Quadratic};
    use proptest::prelude::*;

    /// `U = −(θ − 3)²` in one dimension.
    fn parabola() -> Quadratic {
        Quadratic::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 6.0)).unwrap()
    }

    fn st(x: &[f64]) -> OptimizerState {
        OptimizerState::new(DVector::from_row_slice(x), 0)
    }

    /// Linear objective `U = gᵀθ` for fixed-gradient tests.
    struct Linear(DVector<f64>);

    impl Objective for Linear {
        fn name(&self) -> &'static str {
            "linear"
        }
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value(&self, t: &DVector<f64>) -> f64 {
            self.0.dot(t)
        }
        fn gradient(&self, _t: &DVector<f64>) -> DVector<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn gd_examples() {
        let (_, r) = step_gd(&parabola(), &st(&[0.0]), 0.1).unwrap();
        assert!((r.delta_theta[0] - 0.6).abs() < 1e-15);
        let (_, r) = step_gd(&parabola(), &st(&[3.0]), 0.1).unwrap();
        assert_eq!(r.delta_theta[0], 0.0);
        assert_eq!(r.reconstruction_error(), 0.0);
        assert!(step_gd(&parabola(), &st(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn regularized_examples() {
        let (_, r) = step_regularized(&parabola(), &st(&[1.0]), 0.1, 1.0).unwrap();
        assert!((r.delta_theta[0] - 0.3).abs() < 1e-15);
        let (_, g) = step_gd(&parabola(), &st(&[1.0]), 0.1).unwrap();
        let (_, r0) = step_regularized(&parabola(), &st(&[1.0]), 0.1, 0.0).unwrap();
        assert_eq!(r0.delta_theta, g.delta_theta);
        let (_, r) = step_regularized(&parabola(), &st(&[0.0]), 0.1, 5.0).unwrap();
        assert_eq!(r.bias()[0], 0.0);
    }

    #[test]
    fn polyak_examples() {
        let (_, g) = step_gd(&parabola(), &st(&[0.0]), 0.1).unwrap();
        let (_, p) = step_polyak(&parabola(), &st(&[0.0]), 0.1, 0.0).unwrap();
        assert_eq!(p.delta_theta, g.delta_theta);
        let (_, p) = step_polyak(&parabola(), &st(&[0.0]), 0.1, 0.9).unwrap();
        assert!((p.delta_theta[0] - 0.1 * 0.1 * 6.0).abs() < 1e-15);
        // constant gradient: Δθ → ηg as the geometric series fills in
        let obj = Linear(DVector::from_element(1, 2.0));
        let (eta, u) = (0.1, 0.8);
        let mut s = st(&[0.0]);
        let mut last = 0.0;
        for k in 1..=200 {
            let (n, r) = step_polyak(&obj, &s, eta, u).unwrap();
            let oracle = eta * 2.0 * (1.0 - u.powi(k));
            assert!((r.delta_theta[0] - oracle).abs() < 1e-12);
            last = r.delta_theta[0];
            s = n;
        }
        assert!((last - eta * 2.0).abs() < 1e-12);
    }

    #[test]
    fn adam_examples() {
        let obj = Linear(DVector::from_row_slice(&[3.0, -0.5]));
        let (eta, c) = (0.1, 1e-3);
        let (_, r) = step_adam(&obj, &st(&[0.0, 0.0]), eta, 0.0, 0.0, c, AdamVariant::Plain).unwrap();
        assert_eq!(r.delta_theta[0], eta * 3.0 / (3.0 + c));
        assert_eq!(r.delta_theta[1], eta * -0.5 / (0.5 + c));

        let zero = Linear(DVector::zeros(2));
        let mut s = st(&[0.0, 0.0]);
        s.momentum = DVector::from_row_slice(&[1.0, -2.0]);
        s.second_moment = DVector::from_row_slice(&[0.5, 0.25]);
        let (_, r) = step_adam(&zero, &s, eta, 0.9, 0.99, c, AdamVariant::Plain).unwrap();
        let cb = &r.fmb.bias_cov * &r.fmb.beta;
        assert!((&r.delta_theta - cb).amax() < 1e-16);
        assert!(r.force().amax() == 0.0);
    }

    #[test]
    fn bias_corrected_adam_is_standard_adam() {
        let obj = LinRegSynthetic::generate(20, 2, 0.1, 2).unwrap();
        let (eta, u, s, c) = (0.05, 0.9, 0.999, 1e-8);
        let mut state = st(&[0.5, -0.5]);
        let (mut m, mut v) = (DVector::zeros(2), DVector::zeros(2));
        for t in 1..=10 {
            let g = obj.gradient(&state.theta);
            m = &g * (1.0 - u) + &m * u;
            v = g.component_mul(&g) * (1.0 - s) + &v * s;
            let mh = &m / (1.0 - u.powi(t));
            let vh = &v / (1.0 - s.powi(t));
            let oracle = DVector::from_fn(2, |i, _| eta * mh[i] / (vh[i].sqrt() + c));
            let (n, r) = step_adam(&obj, &state, eta, u, s, c, AdamVariant::BiasCorrected).unwrap();
            assert!((&r.delta_theta - &oracle).amax() < 1e-12);
            assert!(r.reconstruction_error() < 1e-12);
            state = n;
        }
    }

    #[test]
    fn mirror_euclidean_is_gd() {
        let s = st(&[0.3, -1.2]);
        let obj = Quadratic::new(DMatrix::identity(2, 2), DVector::from_row_slice(&[1.0, 2.0])).unwrap();
        let (a, ra) = step_gd(&obj, &s, 0.2).unwrap();
        let (b, rb) = step_mirror(&obj, &s, 0.2, Potential::Euclidean, MirrorForm::Exact).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(ra.delta_theta, rb.delta_theta);
    }

    #[test]
    fn simplex_mirror_is_multiplicative_weights() {
        let obj = Linear(DVector::from_row_slice(&[1.0, -0.5, 2.0]));
        let theta = DVector::from_row_slice(&[0.2, 0.5, 0.3]);
        let eta = 0.7;
        let (n, r) = step_mirror(&obj, &OptimizerState::new(theta.clone(), 0), eta, Potential::SimplexEntropy, MirrorForm::Exact).unwrap();
        let un = DVector::from_fn(3, |i, _| theta[i] * (eta * obj.0[i]).exp());
        let oracle = &un / un.sum();
        assert!((&n.theta - oracle).amax() < 1e-12);
        assert!(r.reconstruction_error() < 1e-15);
    }

    #[test]
    fn mirror_domain_errors() {
        let obj = Linear(DVector::from_row_slice(&[1.0, 1.0]));
        let e = step_mirror(&obj, &st(&[0.0, 1.0]), 0.1, Potential::SimplexEntropy, MirrorForm::Exact);
        assert!(matches!(e, Err(FmbError::OutsideDomain(_))));
        let e = step_mirror(&obj, &st(&[0.4, 0.4]), 0.1, Potential::SimplexEntropy, MirrorForm::Exact);
        assert!(matches!(e, Err(FmbError::OutsideDomain(_))));
        let e = step_mirror(&obj, &st(&[-1.0, 0.4]), 0.1, Potential::NegEntropy, MirrorForm::Exact);
        assert!(matches!(e, Err(FmbError::OutsideDomain(_))));
    }

    #[test]
    fn mirror_gap_is_second_order() {
        let obj = Linear(DVector::from_row_slice(&[1.0, -0.5, 2.0]));
        let s = OptimizerState::new(DVector::from_row_slice(&[0.2, 0.5, 0.3]), 0);
        for pot in [Potential::SimplexEntropy, Potential::NegEntropy] {
            let gap = |eta: f64| step_mirror(&obj, &s, eta, pot, MirrorForm::Exact).unwrap().1.diagnostics["mirror_gap"];
            let ratio = gap(0.01) / gap(0.005);
            assert!((3.5..=4.5).contains(&ratio), "{pot:?} ratio {ratio}");
        }
        let (_, fo) = step_mirror(&obj, &s, 0.01, Potential::NegEntropy, MirrorForm::FirstOrder).unwrap();
        assert_eq!(fo.diagnostics["mirror_gap"], 0.0);
    }

    proptest! {
        #[test]
        fn adam_identity_on_random_streams(
            gs in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..30),
            u in 0.0f64..0.99, s in 0.0f64..0.999, c in 1e-8f64..1e-1,
        ) {
            let eta = 0.01;
            let mut state = OptimizerState::new(DVector::zeros(3), 0);
            for g in gs {
                let g = DVector::from_vec(g);
                let (n, r) = adam_update(&state, &g, eta, u, s, c, AdamVariant::Plain);
                let target = DVector::from_fn(3, |i, _| eta * n.momentum[i] / (n.second_moment[i].sqrt() + c));
                let mf_cb = r.metric() * r.force() + &r.fmb.bias_cov * &r.fmb.beta;
                prop_assert!((&mf_cb - &target).amax() < 1e-12);
                prop_assert!((&r.delta_theta - &target).amax() == 0.0);
                // Δθ = M m_t / (1 − u)
                let alt = r.metric() * &n.momentum / (1.0 - u);
                prop_assert!((&r.delta_theta - alt).amax() < 1e-12);
                prop_assert!(n.second_moment.iter().all(|&x| x >= 0.0));
                state = n;
            }
        }
    }
}
