//! Exact Price equation over finite weighted populations, and the force-metric-bias
//! decomposition extracted from population moments.
//!
//! A population is a set of `m` variants with frequencies `q`, parameter rows `Θ`,
//! relative fitness `w` (mean one under `q`) and parameter changes `ΔΘ`. The next
//! generation has frequencies `q′ = q ∘ w` and parameters `Θ′ = Θ + ΔΘ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FmbError, Result};
use crate::linalg::{
    check_finite_mat, check_finite_vec, check_probability, from_rows, pinv_solve_sym, to_rows,
    weighted_cov, weighted_cov_vec, weighted_mean, PINV_RTOL,
};

/// Scale a nonnegative performance vector so that its `q`-weighted mean is one.
pub fn normalize_fitness(raw: &DVector<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
    check_probability(q, "q")?;
    if raw.len() != q.len() {
        return Err(FmbError::Dimension(format!(
            "fitness has length {} but q has length {}",
            raw.len(),
            q.len()
        )));
    }
    for (i, &r) in raw.iter().enumerate() {
        if !r.is_finite() || r < 0.0 {
            return Err(FmbError::InvalidInput(format!(
                "fitness[{i}] = {r} must be finite and nonnegative"
            )));
        }
    }
    let mean = q.dot(raw);
    if mean <= 0.0 {
        return Err(FmbError::DegenerateFitness);
    }
    Ok(raw / mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    q: DVector<f64>,
    theta: DMatrix<f64>,
    w: DVector<f64>,
    dtheta: DMatrix<f64>,
}

impl Population {
    /// Build a population, normalizing `fitness` to relative fitness.
    ///
    /// `dtheta = None` means no transmission change.
    pub fn new(
        q: DVector<f64>,
        theta: DMatrix<f64>,
        fitness: DVector<f64>,
        dtheta: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = q.len();
        if theta.nrows() != m {
            return Err(FmbError::Dimension(format!(
                "theta has {} rows but q has length {m}",
                theta.nrows()
            )));
        }
        let dtheta = dtheta.unwrap_or_else(|| DMatrix::zeros(m, theta.ncols()));
        if dtheta.shape() != theta.shape() {
            return Err(FmbError::Dimension(format!(
                "dtheta is {:?} but theta is {:?}",
                dtheta.shape(),
                theta.shape()
            )));
        }
        check_finite_mat(&theta, "theta")?;
        check_finite_mat(&dtheta, "dtheta")?;
        let w = normalize_fitness(&fitness, &q)?;
        Ok(Population { q, theta, w, dtheta })
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn n(&self) -> usize {
        self.theta.ncols()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn dtheta(&self) -> &DMatrix<f64> {
        &self.dtheta
    }

    pub fn q_prime(&self) -> DVector<f64> {
        self.q.component_mul(&self.w)
    }

    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.q, &self.theta)
    }

    /// `q′·Θ′`, the descendant mean.
    pub fn mean_prime(&self) -> DVector<f64> {
        weighted_mean(&self.q_prime(), &(&self.theta + &self.dtheta))
    }

    pub fn has_transmission(&self) -> bool {
        self.dtheta.iter().any(|&x| x != 0.0)
    }
}

/// Wire format: row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationRecord {
    pub q: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtheta: Option<Vec<Vec<f64>>>,
}

impl TryFrom<&PopulationRecord> for Population {
    type Error = FmbError;

    fn try_from(r: &PopulationRecord) -> Result<Self> {
        let theta = from_rows(&r.theta, "theta")?;
        let dtheta = r.dtheta.as_ref().map(|d| from_rows(d, "dtheta")).transpose()?;
        Population::new(
            DVector::from_vec(r.q.clone()),
            theta,
            DVector::from_vec(r.w.clone()),
            dtheta,
        )
    }
}

impl From<&Population> for PopulationRecord {
    fn from(p: &Population) -> Self {
        PopulationRecord {
            q: p.q.iter().cloned().collect(),
            theta: to_rows(&p.theta),
            w: p.w.iter().cloned().collect(),
            dtheta: Some(to_rows(&p.dtheta)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceDecomposition {
    pub delta_mean: DVector<f64>,
    /// `Δq·θ = Cov(w, θ)`.
    pub selection: DVector<f64>,
    /// `q′·Δθ = E(w Δθ)`.
    pub transmission: DVector<f64>,
}

/// Price equation: partition the change in the mean into selection and transmission.
///
/// `delta_mean` is computed directly from `q′` and `Θ′`, independently of the two terms.
pub fn price_update(pop: &Population) -> PriceDecomposition {
    let selection = weighted_cov_vec(&pop.q, &pop.w, &pop.theta);
    let transmission = weighted_mean(&pop.q_prime(), &pop.dtheta);
    let delta_mean = pop.mean_prime() - pop.mean();
    PriceDecomposition { delta_mean, selection, transmission }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmbDecomposition {
    pub metric: DMatrix<f64>,
    pub force: DVector<f64>,
    pub bias_cov: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub xi: DVector<f64>,
}

impl FmbDecomposition {
    /// `b = Cβ + γ`.
    pub fn bias(&self) -> DVector<f64> {
        &self.bias_cov * &self.beta + &self.gamma
    }

    /// `M f + C β + γ`, without the residual.
    pub fn deterministic_part(&self) -> DVector<f64> {
        &self.metric * &self.force + self.bias()
    }

    pub fn reconstruct(&self) -> DVector<f64> {
        self.deterministic_part() + &self.xi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmbRecord {
    #[serde(rename = "M")]
    pub metric: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    #[serde(rename = "C")]
    pub bias_cov: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
    pub b: Vec<f64>,
    pub expected_gain: f64,
}

impl From<&FmbDecomposition> for FmbRecord {
    fn from(d: &FmbDecomposition) -> Self {
        FmbRecord {
            metric: to_rows(&d.metric),
            f: d.force.iter().cloned().collect(),
            bias_cov: to_rows(&d.bias_cov),
            beta: d.beta.iter().cloned().collect(),
            gamma: d.gamma.iter().cloned().collect(),
            xi: d.xi.iter().cloned().collect(),
            b: d.bias().iter().cloned().collect(),
            expected_gain: expected_gain(d),
        }
    }
}

/// Sufficient statistics of the update: `M = Cov(θ,θ)`, `f = M⁺Cov(w,θ)`,
/// `C = Cov(Δθ,Δθ)`, `β = C⁺Cov(w,Δθ)`, `γ = E(Δθ)`, and `ξ` the reconstruction residual.
pub fn fmb_decompose(pop: &Population) -> FmbDecomposition {
    let metric = weighted_cov(&pop.q, &pop.theta, &pop.theta);
    let cov_wt = weighted_cov_vec(&pop.q, &pop.w, &pop.theta);
    let force = pinv_solve_sym(&metric, &cov_wt, PINV_RTOL);
    let bias_cov = weighted_cov(&pop.q, &pop.dtheta, &pop.dtheta);
    let cov_wd = weighted_cov_vec(&pop.q, &pop.w, &pop.dtheta);
    let beta = pinv_solve_sym(&bias_cov, &cov_wd, PINV_RTOL);
    let gamma = weighted_mean(&pop.q, &pop.dtheta);
    let mut dec = FmbDecomposition {
        metric,
        force,
        bias_cov,
        beta,
        gamma,
        xi: DVector::zeros(pop.n()),
    };
    let delta_mean = pop.mean_prime() - pop.mean();
    dec.xi = delta_mean - dec.deterministic_part();
    dec
}

/// Selection response `Cov(w, θ) = M f`. Requires a population without transmission.
pub fn lande_step(pop: &Population) -> Result<DVector<f64>> {
    if pop.has_transmission() {
        return Err(FmbError::InvalidInput(
            "lande_step isolates selection; dtheta must be zero".into(),
        ));
    }
    let v = weighted_cov_vec(&pop.q, &pop.w, &pop.theta);
    check_finite_vec(&v, "selection response")?;
    Ok(v)
}

/// `fᵀ M f`.
pub fn expected_gain(dec: &FmbDecomposition) -> f64 {
    dec.force.dot(&(&dec.metric * &dec.force))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff_vec;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn col(x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(x.len(), 1, x)
    }

    fn two_point(w: &[f64], dtheta: Option<&[f64]>) -> Population {
        Population::new(v(&[0.5, 0.5]), col(&[0.0, 1.0]), v(w), dtheta.map(col)).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let w = normalize_fitness(&v(&[2.0, 2.0]), &v(&[0.5, 0.5])).unwrap();
        assert_eq!(w, v(&[1.0, 1.0]));
        let w = normalize_fitness(&v(&[1.0, 3.0]), &v(&[0.5, 0.5])).unwrap();
        assert_eq!(w, v(&[0.5, 1.5]));
        let w = normalize_fitness(&v(&[1.0, 1.0, 4.0]), &v(&[0.25, 0.25, 0.5])).unwrap();
        assert!(max_abs_diff_vec(&w, &v(&[0.4, 0.4, 1.6])) < 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_effective_performance() {
        // positive performance only where q vanishes
        let e = normalize_fitness(&v(&[0.0, 5.0]), &v(&[1.0, 0.0]));
        assert_eq!(e, Err(FmbError::DegenerateFitness));
        assert!(normalize_fitness(&v(&[1.0]), &v(&[0.5])).is_err());
    }

    #[test]
    fn price_examples() {
        let d = price_update(&two_point(&[1.0, 1.0], None));
        assert_eq!(d.delta_mean[0], 0.0);
        assert_eq!(d.selection[0], 0.0);
        assert_eq!(d.transmission[0], 0.0);

        let d = price_update(&two_point(&[0.5, 1.5], None));
        // q′ = (0.25, 0.75): mean moves 0.5 → 0.75
        let q_prime = [0.5 * 0.5, 0.5 * 1.5];
        let oracle = q_prime[1] * 1.0 - 0.5;
        assert!((d.selection[0] - 0.25).abs() < 1e-15);
        assert!((d.delta_mean[0] - oracle).abs() < 1e-15);

        let d = price_update(&two_point(&[1.0, 1.0], Some(&[0.2, 0.4])));
        let oracle = 0.5 * 0.2 + 0.5 * 0.4;
        assert!((d.transmission[0] - oracle).abs() < 1e-15);
        assert!((d.delta_mean[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fmb_two_point() {
        let pop = two_point(&[0.5, 1.5], None);
        let d = fmb_decompose(&pop);
        assert!((d.metric[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((d.force[0] - 1.0).abs() < 1e-14);
        assert!((expected_gain(&d) - 0.25).abs() < 1e-14);
        // Var(w) under q
        let var_w = 0.5 * 0.25 + 0.5 * 0.25;
        assert!((expected_gain(&d) - var_w).abs() < 1e-14);
        assert_eq!(lande_step(&pop).unwrap()[0], 0.25);
    }

    #[test]
    fn constant_theta_is_all_bias() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let dtheta = DMatrix::from_row_slice(3, 2, &[0.1, 0.0, -0.3, 0.2, 0.5, 0.1]);
        let pop = Population::new(v(&[0.2, 0.3, 0.5]), theta, v(&[1.0, 2.0, 3.0]), Some(dtheta))
            .unwrap();
        let d = fmb_decompose(&pop);
        assert_eq!(d.metric, DMatrix::zeros(2, 2));
        assert_eq!(d.force, DVector::zeros(2));
        let p = price_update(&pop);
        assert!(max_abs_diff_vec(&d.bias(), &p.delta_mean) < 1e-14);
    }

    #[test]
    fn lande_rejects_transmission_and_handles_uniform() {
        assert!(lande_step(&two_point(&[1.0, 1.0], Some(&[0.1, 0.0]))).is_err());
        assert_eq!(lande_step(&two_point(&[1.0, 1.0], None)).unwrap()[0], 0.0);
    }

    #[test]
    fn lande_independent_coordinates() {
        // coordinates 0 and 1 vary independently; w depends only on coordinate 0
        let q = v(&[0.25; 4]);
        let theta = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let pop = Population::new(q, theta, v(&[1.0, 1.0, 3.0, 3.0]), None).unwrap();
        let l = lande_step(&pop).unwrap();
        // coordinate-wise: Var(θ0) = 0.25, slope of w on θ0 = 1 (w = 0.5 + θ0)
        assert!((l[0] - 0.25).abs() < 1e-15);
        assert!(l[1].abs() < 1e-15);
        let d = fmb_decompose(&pop);
        assert!((d.force[0] - 1.0).abs() < 1e-12 && d.force[1].abs() < 1e-12);
    }

    #[test]
    fn expected_gain_identity_metric() {
        let d = FmbDecomposition {
            metric: DMatrix::identity(2, 2),
            force: v(&[3.0, 4.0]),
            bias_cov: DMatrix::zeros(2, 2),
            beta: DVector::zeros(2),
            gamma: DVector::zeros(2),
            xi: DVector::zeros(2),
        };
        assert_eq!(expected_gain(&d), 25.0);
    }

    #[test]
    fn dimension_errors() {
        let e = Population::new(v(&[0.5, 0.5]), DMatrix::zeros(3, 1), v(&[1.0, 1.0]), None);
        assert!(matches!(e, Err(FmbError::Dimension(_))));
        let e = Population::new(v(&[0.6, 0.6]), DMatrix::zeros(2, 1), v(&[1.0, 1.0]), None);
        assert!(matches!(e, Err(FmbError::InvalidProbability(_))));
    }

    #[test]
    fn record_round_trip() {
        let pop = two_point(&[0.5, 1.5], Some(&[0.1, 0.2]));
        let rec = PopulationRecord::from(&pop);
        let json = serde_json::to_string(&rec).unwrap();
        let back: PopulationRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(Population::try_from(&back).unwrap(), pop);
    }

    fn population_strategy() -> impl Strategy<Value = Population> {
        (2usize..30, 1usize..5).prop_flat_map(|(m, n)| {
            (
                prop::collection::vec(0.0f64..1.0, m),
                prop::collection::vec(-5.0f64..5.0, m * n),
                prop::collection::vec(0.0f64..3.0, m),
                prop::collection::vec(-1.0f64..1.0, m * n),
                Just((m, n)),
            )
                .prop_filter_map("needs mass and fitness", |(qr, th, w, dt, (m, n))| {
                    let s: f64 = qr.iter().sum();
                    if s <= 1e-3 {
                        return None;
                    }
                    let q = DVector::from_iterator(m, qr.iter().map(|x| x / s));
                    let mut q = q;
                    // absorb rounding so Σq = 1 exactly enough
                    let drift = 1.0 - q.sum();
                    q[0] += drift;
                    Population::new(
                        q,
                        DMatrix::from_row_slice(m, n, &th),
                        DVector::from_vec(w),
                        Some(DMatrix::from_row_slice(m, n, &dt)),
                    )
                    .ok()
                })
        })
    }

    proptest! {
        #[test]
        fn price_identity_holds(pop in population_strategy()) {
            let d = price_update(&pop);
            let sum = &d.selection + &d.transmission;
            prop_assert!(max_abs_diff_vec(&d.delta_mean, &sum) < 1e-12);
        }

        #[test]
        fn fmb_reconstructs_delta_mean(pop in population_strategy()) {
            let d = fmb_decompose(&pop);
            let p = price_update(&pop);
            prop_assert!(max_abs_diff_vec(&d.deterministic_part(), &p.delta_mean) < 1e-8);
            prop_assert!(expected_gain(&d) >= -1e-12);
        }

        #[test]
        fn fitness_as_own_trait_gain_is_var_w(pop in population_strategy()) {
            let w = pop.w().clone();
            let trait_pop = Population::new(
                pop.q().clone(),
                DMatrix::from_column_slice(pop.m(), 1, w.as_slice()),
                w.clone(),
                None,
            ).unwrap();
            let d = fmb_decompose(&trait_pop);
            let wbar = pop.q().dot(&w);
            let var_w: f64 = pop.q().iter().zip(w.iter()).map(|(q, x)| q * (x - wbar).powi(2)).sum();
            prop_assert!((expected_gain(&d) - var_w).abs() < 1e-10 * (1.0 + var_w));
        }

        #[test]
        fn scale_equivariance(pop in population_strategy(), s in prop::collection::vec(-3.0f64..3.0, 5)) {
            let n = pop.n();
            let scale = DMatrix::from_diagonal(&DVector::from_iterator(n, s.iter().take(n).cloned()));
            let scaled = Population::new(
                pop.q().clone(),
                pop.theta() * &scale,
                pop.w().clone(),
                Some(pop.dtheta() * &scale),
            ).unwrap();
            let a = price_update(&pop).delta_mean;
            let b = price_update(&scaled).delta_mean;
            prop_assert!(max_abs_diff_vec(&(scale * a), &b) < 1e-10);
        }
    }
}
