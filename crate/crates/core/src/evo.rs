//! Gaussian evolution strategy with rank-weighted recombination and rank-μ covariance
//! blending. Each generation is a [`Population`], so the mean update is the selection
//! response `Cov(w, θ)`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FmbError, Result};
use crate::exec::Execution;
use crate::linalg::{check_finite_mat, check_finite_vec, floor_pd, is_square, min_eigenvalue, sqrt_psd, symmetrize};
use crate::objectives::Objective;
use crate::price::{lande_step, Population};
use crate::rng::SeedStream;

/// Relative eigenvalue floor applied to `Σ` after every adaptation.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EsState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub step_scale: f64,
    pub generation: usize,
    pub rng_seed: u64,
}

impl EsState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, step_scale: f64, rng_seed: u64) -> Result<Self> {
        let n = mean.len();
        if n == 0 || !is_square(&covariance) || covariance.nrows() != n {
            return Err(FmbError::Dimension(format!(
                "mean has length {n} but covariance is {:?}",
                covariance.shape()
            )));
        }
        check_finite_vec(&mean, "mean")?;
        check_finite_mat(&covariance, "covariance")?;
        if !(step_scale > 0.0 && step_scale.is_finite()) {
            return Err(FmbError::InvalidInput(format!("step_scale must be positive, got {step_scale}")));
        }
        let covariance = symmetrize(&covariance);
        if nalgebra::Cholesky::new(covariance.clone()).is_none() {
            return Err(FmbError::InvalidInput("covariance must be positive definite".into()));
        }
        Ok(EsState { mean, covariance, step_scale, generation: 0, rng_seed })
    }

    /// Isotropic start `N(mean, σ² I)`.
    pub fn isotropic(mean: DVector<f64>, step_scale: f64, rng_seed: u64) -> Result<Self> {
        let n = mean.len();
        EsState::new(mean, DMatrix::identity(n, n), step_scale, rng_seed)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsRates {
    /// Blend weight of the selected covariance.
    pub c_mu: f64,
}

impl Default for EsRates {
    fn default() -> Self {
        EsRates { c_mu: 0.3 }
    }
}

/// One sampled generation: the population plus the raw performance of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EsGeneration {
    pub population: Population,
    pub utilities: Vec<f64>,
}

impl EsGeneration {
    pub fn best(&self) -> f64 {
        self.utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_utility(&self) -> f64 {
        self.utilities.iter().sum::<f64>() / self.utilities.len() as f64
    }
}

/// Log-rank weights for the top `⌈pop/2⌉` samples, zero below. Ties keep sample order.
pub fn rank_weights(utilities: &[f64]) -> Result<DVector<f64>> {
    let pop = utilities.len();
    if let Some(i) = utilities.iter().position(|u| !u.is_finite()) {
        return Err(FmbError::NonFinite(format!("utility of sample {i} is {}", utilities[i])));
    }
    if pop < 2 || utilities.iter().all(|&u| u == utilities[0]) {
        return Err(FmbError::DegenerateFitness);
    }
    let mut order: Vec<usize> = (0..pop).collect();
    order.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]));
    let mu = pop.div_ceil(2);
    let base = (pop as f64 / 2.0 + 0.5).ln();
    let mut w = DVector::zeros(pop);
    for (rank, &i) in order.iter().take(mu).enumerate() {
        w[i] = base - ((rank + 1) as f64).ln();
    }
    Ok(w)
}

/// Draw `pop_size` points from `N(mean, σ²Σ)` and score them. Sample `i` of generation `g`
/// uses its own stream `(seed, g, i)`.
pub fn es_sample(state: &EsState, pop_size: usize, obj: &dyn Objective, exec: Execution) -> Result<EsGeneration> {
    if pop_size < 2 {
        return Err(FmbError::InvalidInput(format!("pop_size must be at least 2, got {pop_size}")));
    }
    let n = state.dim();
    if obj.dim() != n {
        return Err(FmbError::Dimension(format!("objective has dimension {} but the mean has {n}", obj.dim())));
    }
    let root = sqrt_psd(&state.covariance) * state.step_scale;
    let gen_stream = SeedStream::new(state.rng_seed).child(state.generation as u64);
    let samples = exec.try_map_range(pop_size, |i| {
        let mut rng = gen_stream.child(i as u64).rng();
        let z = DVector::from_fn(n, |_, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            e
        });
        let x = &state.mean + &root * z;
        let u = obj.value(&x);
        if !u.is_finite() {
            return Err(FmbError::NonFinite(format!("objective at sample {i} {:?} is {u}", x.as_slice())));
        }
        Ok((x, u))
    })?;
    let theta = DMatrix::from_fn(pop_size, n, |i, j| samples[i].0[j]);
    let utilities: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let raw = rank_weights(&utilities)?;
    let q = DVector::from_element(pop_size, 1.0 / pop_size as f64);
    let population = Population::new(q, theta, raw, None)?;
    Ok(EsGeneration { population, utilities })
}

/// `mean′ = mean + Cov(w, θ)`; `Σ′ = (1 − c_μ)Σ + c_μ Σ_sel`, where `Σ_sel` is the
/// `q∘w`-weighted second moment of `(θ − mean)/σ`.
pub fn es_update(state: &EsState, generation: &EsGeneration, rates: EsRates) -> Result<EsState> {
    if !(0.0..=1.0).contains(&rates.c_mu) {
        return Err(FmbError::InvalidInput(format!("c_mu must lie in [0, 1], got {}", rates.c_mu)));
    }
    let pop = &generation.population;
    if pop.n() != state.dim() {
        return Err(FmbError::Dimension(format!("population has {} traits but the mean has {}", pop.n(), state.dim())));
    }
    let step = lande_step(pop)?;
    let qw = pop.q_prime();
    let n = state.dim();
    let mut selected = DMatrix::zeros(n, n);
    for i in 0..pop.m() {
        if qw[i] == 0.0 {
            continue;
        }
        let y = (pop.theta().row(i).transpose() - &state.mean) / state.step_scale;
        selected += &y * y.transpose() * qw[i];
    }
    let blended = &state.covariance * (1.0 - rates.c_mu) + selected * rates.c_mu;
    let covariance = floor_pd(&blended, SIGMA_FLOOR);
    check_finite_mat(&covariance, "adapted covariance")?;
    Ok(EsState {
        mean: &state.mean + step,
        covariance,
        step_scale: state.step_scale,
        generation: state.generation + 1,
        rng_seed: state.rng_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsTraceRow {
    pub generation: usize,
    pub best_u: f64,
    pub mean_u: f64,
    pub trace_sigma: f64,
    pub eigmin_sigma: f64,
    /// Distance of the updated mean from the known maximizer.
    pub distance_to_argmax: Option<f64>,
}

impl EsTraceRow {
    pub const HEADER: [&'static str; 5] = ["generation", "bestU", "meanU", "traceSigma", "eigminSigma"];

    pub fn values(&self) -> [f64; 5] {
        [self.generation as f64, self.best_u, self.mean_u, self.trace_sigma, self.eigmin_sigma]
    }
}

pub fn es_optimize(
    obj: &dyn Objective,
    init: &EsState,
    generations: usize,
    pop_size: usize,
    rates: EsRates,
    exec: Execution,
) -> Result<(EsState, Vec<EsTraceRow>)> {
    let argmax = obj.argmax();
    let mut state = init.clone();
    let mut trace = Vec::with_capacity(generations);
    for _ in 0..generations {
        let gen = es_sample(&state, pop_size, obj, exec)?;
        let next = es_update(&state, &gen, rates)?;
        trace.push(EsTraceRow {
            generation: state.generation,
            best_u: gen.best(),
            mean_u: gen.mean_utility(),
            trace_sigma: next.covariance.trace(),
            eigmin_sigma: min_eigenvalue(&next.covariance),
            distance_to_argmax: argmax.as_ref().map(|a| (&next.mean - a).norm()),
        });
        state = next;
    }
    Ok((state, trace))
}
