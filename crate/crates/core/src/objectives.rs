//! Bundled performance functions `U(θ)`, all in maximization convention, with analytic
//! gradients and Hessians.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FmbError, Result};
use crate::linalg::{from_rows, symmetrize};
use crate::rng::{Rng, SeedStream};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub gradient: DVector<f64>,
    pub batch_size: usize,
    /// The requested batch exceeded the data set and was clamped.
    pub clamped: bool,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn value(&self, theta: &DVector<f64>) -> f64;

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64>;

    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Mini-batch gradient estimate, for data-backed objectives.
    fn batch_gradient(
        &self,
        _theta: &DVector<f64>,
        _rng: &mut Rng,
        _batch_size: usize,
    ) -> Option<BatchGradient> {
        None
    }

    /// Global maximizer when known in closed form.
    fn argmax(&self) -> Option<DVector<f64>> {
        None
    }
}

/// `U = −½θᵀAθ + cᵀθ` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl Quadratic {
    pub fn new(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let n = c.len();
        if a.shape() != (n, n) {
            return Err(FmbError::Dimension(format!("A is {:?} but c has length {n}", a.shape())));
        }
        let scale = a.amax().max(1.0);
        if (&a - a.transpose()).amax() > 1e-12 * scale {
            return Err(FmbError::InvalidInput("quadratic A must be symmetric".into()));
        }
        let a = symmetrize(&a);
        if nalgebra::Cholesky::new(a.clone()).is_none() {
            return Err(FmbError::InvalidInput("quadratic A must be positive definite".into()));
        }
        Ok(Quadratic { a, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
}

impl Objective for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        -0.5 * theta.dot(&(&self.a * theta)) + self.c.dot(theta)
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.c - &self.a * theta
    }

    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(-self.a.clone())
    }

    fn argmax(&self) -> Option<DVector<f64>> {
        nalgebra::Cholesky::new(self.a.clone()).map(|ch| ch.solve(&self.c))
    }
}

/// Negated Rosenbrock function in `n ≥ 2` dimensions; maximum 0 at the all-ones point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosenbrockNeg {
    n: usize,
}

impl RosenbrockNeg {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(FmbError::InvalidInput(format!("rosenbrock needs n >= 2, got {n}")));
        }
        Ok(RosenbrockNeg { n })
    }
}

impl Objective for RosenbrockNeg {
    fn name(&self) -> &'static str {
        "rosenbrock_neg"
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, t: &DVector<f64>) -> f64 {
        -(0..self.n - 1)
            .map(|i| 100.0 * (t[i + 1] - t[i] * t[i]).powi(2) + (1.0 - t[i]).powi(2))
            .sum::<f64>()
    }

    fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for i in 0..self.n - 1 {
            let r = t[i + 1] - t[i] * t[i];
            g[i] += 400.0 * t[i] * r + 2.0 * (1.0 - t[i]);
            g[i + 1] -= 200.0 * r;
        }
        g
    }

    fn hessian(&self, t: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n - 1 {
            h[(i, i)] -= 1200.0 * t[i] * t[i] - 400.0 * t[i + 1] + 2.0;
            h[(i + 1, i + 1)] -= 200.0;
            h[(i, i + 1)] += 400.0 * t[i];
            h[(i + 1, i)] += 400.0 * t[i];
        }
        Some(h)
    }

    fn argmax(&self) -> Option<DVector<f64>> {
        Some(DVector::from_element(self.n, 1.0))
    }
}

/// `U = log Σ_k h_k exp(−‖θ − c_k‖² / (2 w_k²))`: a mixture of Gaussian bumps whose
/// Boltzmann weights `exp(bU)` are normalizable for every `b > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBumps {
    centers: Vec<DVector<f64>>,
    widths: Vec<f64>,
    log_heights: Vec<f64>,
}

impl GaussianBumps {
    pub fn new(centers: Vec<DVector<f64>>, widths: Vec<f64>, heights: Option<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(FmbError::InvalidInput("at least one bump is required".into()));
        }
        let n = centers[0].len();
        if n == 0 || centers.iter().any(|c| c.len() != n) {
            return Err(FmbError::Dimension("bump centers must share a positive dimension".into()));
        }
        if widths.len() != centers.len() || widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(FmbError::InvalidInput("one positive width per bump is required".into()));
        }
        let heights = heights.unwrap_or_else(|| vec![1.0; centers.len()]);
        if heights.len() != centers.len() || heights.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(FmbError::InvalidInput("one positive height per bump is required".into()));
        }
        Ok(GaussianBumps { centers, widths, log_heights: heights.iter().map(|h| h.ln()).collect() })
    }

    fn exponents(&self, t: &DVector<f64>) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.widths)
            .zip(&self.log_heights)
            .map(|((c, w), lh)| lh - (t - c).norm_squared() / (2.0 * w * w))
            .collect()
    }

    fn responsibilities(&self, t: &DVector<f64>) -> (f64, Vec<f64>) {
        let e = self.exponents(t);
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = e.iter().map(|x| (x - mx).exp()).sum();
        (mx + s.ln(), e.iter().map(|x| (x - mx).exp() / s).collect())
    }
}

impl Objective for GaussianBumps {
    fn name(&self) -> &'static str {
        "two_bumps"
    }

    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn value(&self, t: &DVector<f64>) -> f64 {
        self.responsibilities(t).0
    }

    fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        let (_, r) = self.responsibilities(t);
        let mut g = DVector::zeros(self.dim());
        for k in 0..r.len() {
            let w2 = self.widths[k] * self.widths[k];
            g -= (t - &self.centers[k]) * (r[k] / w2);
        }
        g
    }

    fn hessian(&self, t: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (_, r) = self.responsibilities(t);
        let n = self.dim();
        let g = self.gradient(t);
        let mut h = -(&g * g.transpose());
        for k in 0..r.len() {
            let w2 = self.widths[k] * self.widths[k];
            let de = -(t - &self.centers[k]) / w2;
            h += (&de * de.transpose() - DMatrix::identity(n, n) / w2) * r[k];
        }
        Some(symmetrize(&h))
    }
}

/// Least-squares regression on a synthetic data set: `U = −(1/2N) Σ (y_i − x_iᵀθ)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegSynthetic {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl LinRegSynthetic {
    /// Features and true weights are standard normal; responses carry Gaussian noise of
    /// standard deviation `noise`.
    pub fn generate(n_data: usize, dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if n_data == 0 || dim == 0 {
            return Err(FmbError::InvalidInput("linreg needs n_data >= 1 and dim >= 1".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(FmbError::InvalidInput(format!("noise must be nonnegative, got {noise}")));
        }
        let mut rng = SeedStream::new(seed).named("linreg").rng();
        let truth = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_fn(n_data, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = DVector::from_fn(n_data, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x * truth + eps * noise;
        Ok(LinRegSynthetic { x, y })
    }

    pub fn from_data(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(FmbError::Dimension("x rows must match y length".into()));
        }
        Ok(LinRegSynthetic { x, y })
    }

    pub fn n_data(&self) -> usize {
        self.y.len()
    }

    /// Mean of per-example gradients over `idx`, summed in the given order.
    fn gradient_on(&self, theta: &DVector<f64>, idx: impl ExactSizeIterator<Item = usize>) -> DVector<f64> {
        let len = idx.len() as f64;
        let mut g = DVector::zeros(self.x.ncols());
        for i in idx {
            let row = self.x.row(i);
            let r = self.y[i] - row.dot(&theta.transpose());
            g += row.transpose() * r;
        }
        g / len
    }
}

impl Objective for LinRegSynthetic {
    fn name(&self) -> &'static str {
        "linreg_synthetic"
    }

    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        -(&self.y - &self.x * theta).norm_squared() / (2.0 * self.n_data() as f64)
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.gradient_on(theta, 0..self.n_data())
    }

    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(-self.x.tr_mul(&self.x) / self.n_data() as f64)
    }

    /// Indices are drawn without replacement and then sorted, so a full-size batch
    /// reproduces [`Objective::gradient`] bit for bit.
    fn batch_gradient(&self, theta: &DVector<f64>, rng: &mut Rng, batch_size: usize) -> Option<BatchGradient> {
        let n = self.n_data();
        let clamped = batch_size > n;
        let b = batch_size.clamp(1, n);
        let mut idx = rand::seq::index::sample(rng, n, b).into_vec();
        idx.sort_unstable();
        Some(BatchGradient { gradient: self.gradient_on(theta, idx.into_iter()), batch_size: b, clamped })
    }

    fn argmax(&self) -> Option<DVector<f64>> {
        let xtx = self.x.tr_mul(&self.x);
        nalgebra::Cholesky::new(xtx).map(|c| c.solve(&self.x.tr_mul(&self.y)))
    }
}

/// Serializable objective identifier with parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    RosenbrockNeg {
        n: usize,
    },
    TwoBumps {
        centers: Vec<Vec<f64>>,
        widths: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heights: Option<Vec<f64>>,
    },
    LinregSynthetic {
        n_data: usize,
        dim: usize,
        noise: f64,
        seed: u64,
    },
}

pub const OBJECTIVE_IDS: &[&str] = &["quadratic", "rosenbrock_neg", "two_bumps", "linreg_synthetic"];

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Box<dyn Objective>> {
        Ok(match self {
            ObjectiveSpec::Quadratic { a, c } => {
                Box::new(Quadratic::new(from_rows(a, "A")?, DVector::from_vec(c.clone()))?)
            }
            ObjectiveSpec::RosenbrockNeg { n } => Box::new(RosenbrockNeg::new(*n)?),
            ObjectiveSpec::TwoBumps { centers, widths, heights } => Box::new(GaussianBumps::new(
                centers.iter().map(|c| DVector::from_vec(c.clone())).collect(),
                widths.clone(),
                heights.clone(),
            )?),
            ObjectiveSpec::LinregSynthetic { n_data, dim, noise, seed } => {
                Box::new(LinRegSynthetic::generate(*n_data, *dim, *noise, *seed)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub max_gradient_error: f64,
    pub max_hessian_error: f64,
    pub passed: bool,
}

/// Compare analytic derivatives with central differences at each probe. Errors are
/// measured relative to `max(1, |analytic|)`.
pub fn check_derivatives(obj: &dyn Objective, probes: &[DVector<f64>], h: f64, rtol: f64) -> DerivativeCheck {
    let n = obj.dim();
    let mut ge: f64 = 0.0;
    let mut he: f64 = 0.0;
    for p in probes {
        let g = obj.gradient(p);
        let hess = obj.hessian(p);
        for k in 0..n {
            let mut up = p.clone();
            up[k] += h;
            let mut dn = p.clone();
            dn[k] -= h;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
            ge = ge.max((fd - g[k]).abs() / g[k].abs().max(1.0));
            if let Some(hm) = &hess {
                let col = (obj.gradient(&up) - obj.gradient(&dn)) / (2.0 * h);
                for j in 0..n {
                    he = he.max((col[j] - hm[(j, k)]).abs() / hm[(j, k)].abs().max(1.0));
                }
            }
        }
    }
    DerivativeCheck { max_gradient_error: ge, max_hessian_error: he, passed: ge < rtol && he < rtol }
}

/// Standard-normal probe points scaled by `scale` around `center`.
pub fn random_probes(center: &DVector<f64>, scale: f64, count: usize, rng: &mut Rng) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| center + DVector::from_fn(center.len(), |_, _| { let z: f64 = StandardNormal.sample(rng); scale * z }))
        .collect()
}
