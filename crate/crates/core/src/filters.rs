//! Gaussian-process regression at the training inputs and linear Kalman filtering, both
//! written as metric times force.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FmbError, Result};
use crate::linalg::{check_finite_mat, check_finite_vec, from_rows, is_square, min_eigenvalue, sqrt_psd, symmetrize};
use crate::optim::{simple_fmb, StepReport};
use crate::rng::SeedStream;

pub fn rbf_kernel(x: &[f64], y: &[f64], sigma_g: f64, ell: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    sigma_g * sigma_g * (-d2 / (2.0 * ell * ell)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    sigma_g: f64,
    ell: f64,
    noise_var: f64,
    prior_mean: DVector<f64>,
}

impl GpModel {
    pub fn new(inputs: DMatrix<f64>, sigma_g: f64, ell: f64, noise_var: f64, prior_mean: DVector<f64>) -> Result<Self> {
        for (name, v) in [("sigma_g", sigma_g), ("ell", ell), ("noise_var", noise_var)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FmbError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if inputs.nrows() == 0 || prior_mean.len() != inputs.nrows() {
            return Err(FmbError::Dimension(format!(
                "{} inputs but prior mean has length {}",
                inputs.nrows(),
                prior_mean.len()
            )));
        }
        check_finite_mat(&inputs, "inputs")?;
        check_finite_vec(&prior_mean, "prior_mean")?;
        Ok(GpModel { inputs, sigma_g, ell, noise_var, prior_mean })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| self.inputs.row(i).iter().cloned().collect()).collect();
        DMatrix::from_fn(n, n, |i, j| rbf_kernel(&rows[i], &rows[j], self.sigma_g, self.ell))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpUpdate {
    pub delta_mean: DVector<f64>,
    pub metric: DMatrix<f64>,
    pub force: DVector<f64>,
    pub posterior_mean: DVector<f64>,
}

/// `M = (K⁻¹ + σ⁻²I)⁻¹`, `f = σ⁻²(y − μ0)`.
///
/// `M` is formed on the eigenbasis of `K` as `V diag(λσ²/(λ+σ²)) Vᵀ`, which stays finite
/// when `K` is singular.
pub fn gp_update(model: &GpModel, y: &DVector<f64>) -> Result<GpUpdate> {
    if y.len() != model.len() {
        return Err(FmbError::Dimension(format!("y has length {} but the model has {} inputs", y.len(), model.len())));
    }
    check_finite_vec(y, "y")?;
    let s2 = model.noise_var;
    let eig = SymmetricEigen::new(symmetrize(&model.gram()));
    let shrunk = eig.eigenvalues.map(|l| {
        let l = l.max(0.0);
        l * s2 / (l + s2)
    });
    let v = &eig.eigenvectors;
    let metric = symmetrize(&(v * DMatrix::from_diagonal(&shrunk) * v.transpose()));
    let force = (y - &model.prior_mean) / s2;
    let delta_mean = &metric * &force;
    check_finite_vec(&delta_mean, "gp update")?;
    let posterior_mean = &model.prior_mean + &delta_mean;
    Ok(GpUpdate { delta_mean, metric, force, posterior_mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FilterState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !is_square(&cov) || cov.nrows() != mean.len() {
            return Err(FmbError::Dimension(format!("mean has length {} but P is {:?}", mean.len(), cov.shape())));
        }
        check_finite_vec(&mean, "state mean")?;
        check_finite_mat(&cov, "P")?;
        let cov = symmetrize(&cov);
        if nalgebra::Cholesky::new(cov.clone()).is_none() {
            return Err(FmbError::InvalidInput("P must be positive definite".into()));
        }
        Ok(FilterState { mean, cov })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(f: DMatrix<f64>, q: DMatrix<f64>, h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = f.nrows();
        let k = h.nrows();
        if !is_square(&f) || q.shape() != (n, n) || h.ncols() != n || r.shape() != (k, k) || n == 0 || k == 0 {
            return Err(FmbError::Dimension(format!(
                "inconsistent system shapes F {:?}, Q {:?}, H {:?}, R {:?}",
                f.shape(),
                q.shape(),
                h.shape(),
                r.shape()
            )));
        }
        for (name, m) in [("F", &f), ("Q", &q), ("H", &h), ("R", &r)] {
            check_finite_mat(m, name)?;
        }
        let q = symmetrize(&q);
        let r = symmetrize(&r);
        let qmax = q.amax();
        if min_eigenvalue(&q) < -1e-12 * qmax.max(1.0) {
            return Err(FmbError::InvalidInput("Q must be positive semidefinite".into()));
        }
        if nalgebra::Cholesky::new(r.clone()).is_none() {
            return Err(FmbError::InvalidInput("R must be positive definite".into()));
        }
        Ok(LinearSystem { f, q, h, r })
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    /// Draw a ground-truth path and its observations: `x_{t+1} = F x_t + w`, `y_t = H x_t + v`,
    /// starting from `x0`. Returns `steps` states `x_1..x_steps` and matching observations.
    pub fn simulate(&self, x0: &DVector<f64>, steps: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut rng = SeedStream::new(seed).named("kalman-sim").rng();
        let qs = sqrt_psd(&self.q);
        let rs = sqrt_psd(&self.r);
        let mut draw = |d: usize| {
            DVector::from_fn(d, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
        };
        let mut x = x0.clone();
        let mut truth = Vec::with_capacity(steps);
        let mut obs = Vec::with_capacity(steps);
        for _ in 0..steps {
            x = &self.f * &x + &qs * draw(self.state_dim());
            let y = &self.h * &x + &rs * draw(self.obs_dim());
            truth.push(x.clone());
            obs.push(y);
        }
        (truth, obs)
    }
}

fn check_state(state: &FilterState, sys: &LinearSystem) -> Result<()> {
    if state.mean.len() != sys.state_dim() {
        return Err(FmbError::Dimension(format!(
            "state has dimension {} but the system has {}",
            state.mean.len(),
            sys.state_dim()
        )));
    }
    Ok(())
}

/// `x̂⁻ = F x̂`, `P⁻ = F P Fᵀ + Q`.
pub fn kalman_predict(state: &FilterState, sys: &LinearSystem) -> Result<FilterState> {
    check_state(state, sys)?;
    Ok(FilterState {
        mean: &sys.f * &state.mean,
        cov: symmetrize(&(&sys.f * &state.cov * sys.f.transpose() + &sys.q)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanUpdate {
    pub posterior: FilterState,
    /// `M = P⁻`, `f = Hᵀ S⁻¹ v`.
    pub report: StepReport,
    pub innovation: DVector<f64>,
    /// Information carried by one innovation about the hidden state.
    pub s_inv: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Measurement update with the covariance in Joseph form.
pub fn kalman_update(prior: &FilterState, sys: &LinearSystem, y: &DVector<f64>) -> Result<KalmanUpdate> {
    check_state(prior, sys)?;
    if y.len() != sys.obs_dim() {
        return Err(FmbError::Dimension(format!("observation has length {} but H has {} rows", y.len(), sys.obs_dim())));
    }
    check_finite_vec(y, "observation")?;
    let p = &prior.cov;
    let innovation = y - &sys.h * &prior.mean;
    let s = symmetrize(&(&sys.h * p * sys.h.transpose() + &sys.r));
    let s_inv = nalgebra::Cholesky::new(s)
        .map(|c| c.inverse())
        .ok_or_else(|| FmbError::Singular("innovation covariance S is not positive definite".into()))?;
    let force = sys.h.transpose() * &s_inv * &innovation;
    let delta = p * &force;
    let gain = p * sys.h.transpose() * &s_inv;
    let n = sys.state_dim();
    let ikh = DMatrix::identity(n, n) - &gain * &sys.h;
    let cov = symmetrize(&(&ikh * p * ikh.transpose() + &gain * &sys.r * gain.transpose()));
    check_finite_mat(&cov, "posterior covariance")?;
    let report = StepReport::new(0, delta.clone(), simple_fmb(p.clone(), force, DVector::zeros(n), DVector::zeros(n)))
        .with("innovation_norm", innovation.norm())
        .with("s_inv_trace", s_inv.trace());
    Ok(KalmanUpdate {
        posterior: FilterState { mean: &prior.mean + delta, cov },
        report,
        innovation,
        s_inv,
        gain,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanTraceRow {
    pub t: usize,
    pub state: FilterState,
    /// `None` for the initial row.
    pub innovation_norm: Option<f64>,
}

/// Alternate predict and update over `observations`. Row 0 is `init`.
pub fn kalman_run(sys: &LinearSystem, init: &FilterState, observations: &[DVector<f64>]) -> Result<Vec<KalmanTraceRow>> {
    check_state(init, sys)?;
    let mut trace = vec![KalmanTraceRow { t: 0, state: init.clone(), innovation_norm: None }];
    let mut state = init.clone();
    for (t, y) in observations.iter().enumerate() {
        let prior = kalman_predict(&state, sys)?;
        let up = kalman_update(&prior, sys, y)?;
        state = up.posterior;
        trace.push(KalmanTraceRow { t: t + 1, state: state.clone(), innovation_norm: Some(up.innovation.norm()) });
    }
    Ok(trace)
}

/// Wire format for a GP instance with its observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpRecord {
    pub inputs: Vec<Vec<f64>>,
    pub sigma_g: f64,
    pub ell: f64,
    pub noise_var: f64,
    pub prior_mean: Vec<f64>,
    pub y: Vec<f64>,
}

impl GpRecord {
    pub fn build(&self) -> Result<(GpModel, DVector<f64>)> {
        let model = GpModel::new(
            from_rows(&self.inputs, "inputs")?,
            self.sigma_g,
            self.ell,
            self.noise_var,
            DVector::from_vec(self.prior_mean.clone()),
        )?;
        Ok((model, DVector::from_vec(self.y.clone())))
    }
}

/// Wire format for a filtering problem. Without `observations`, a path of `steps` is
/// simulated from `seed` starting at `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanRecord {
    pub f: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub init_mean: Vec<f64>,
    pub init_cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl KalmanRecord {
    pub fn system(&self) -> Result<(LinearSystem, FilterState)> {
        let sys = LinearSystem::new(
            from_rows(&self.f, "F")?,
            from_rows(&self.q, "Q")?,
            from_rows(&self.h, "H")?,
            from_rows(&self.r, "R")?,
        )?;
        let init = FilterState::new(DVector::from_vec(self.init_mean.clone()), from_rows(&self.init_cov, "init_cov")?)?;
        Ok((sys, init))
    }

    /// Whether observations must be simulated, which needs a seed.
    pub fn is_simulated(&self) -> bool {
        self.observations.is_none()
    }

    pub fn observations(&self, sys: &LinearSystem, seed: Option<u64>) -> Result<Vec<DVector<f64>>> {
        match &self.observations {
            Some(obs) => Ok(obs.iter().map(|o| DVector::from_vec(o.clone())).collect()),
            None => {
                let seed = seed.ok_or_else(|| FmbError::InvalidInput("simulated observations need a seed".into()))?;
                let steps = self
                    .steps
                    .ok_or_else(|| FmbError::InvalidInput("either observations or steps is required".into()))?;
                let x0 = DVector::from_vec(self.x0.clone().unwrap_or_else(|| self.init_mean.clone()));
                if x0.len() != sys.state_dim() {
                    return Err(FmbError::Dimension(format!("x0 has length {} but the state has {}", x0.len(), sys.state_dim())));
                }
                Ok(sys.simulate(&x0, steps, seed).1)
            }
        }
    }
}
