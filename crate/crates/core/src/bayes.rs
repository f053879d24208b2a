//! Discrete Bayesian updating and variational Bayes on a finite support.
//!
//! Evidence is always computed in log space. The variational family is a product of
//! softmax-parameterized categoricals over the coordinates of the support grid; the
//! saturated family is the single-factor special case over the whole support.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FmbError, Result};
use crate::infogeo::kl;
use crate::linalg::{check_probability, from_rows, pinv_solve_sym, PINV_RTOL};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    q: DVector<f64>,
    loglik: DVector<f64>,
    grid: DMatrix<f64>,
}

impl DiscreteModel {
    pub fn new(q: DVector<f64>, loglik: DVector<f64>, grid: DMatrix<f64>) -> Result<Self> {
        check_probability(&q, "prior")?;
        if loglik.len() != q.len() || grid.nrows() != q.len() {
            return Err(FmbError::Dimension(format!(
                "prior has {} points, loglik {}, grid {} rows",
                q.len(),
                loglik.len(),
                grid.nrows()
            )));
        }
        if let Some(i) = loglik.iter().position(|x| !x.is_finite()) {
            return Err(FmbError::NonFinite(format!("loglik[{i}]")));
        }
        Ok(DiscreteModel { q, loglik, grid })
    }

    /// Model on a one-column grid `0, 1, …, m−1`.
    pub fn unstructured(q: DVector<f64>, loglik: DVector<f64>) -> Result<Self> {
        let m = q.len();
        let grid = DMatrix::from_fn(m, 1, |i, _| i as f64);
        DiscreteModel::new(q, loglik, grid)
    }

    pub fn prior(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn loglik(&self) -> &DVector<f64> {
        &self.loglik
    }

    pub fn grid(&self) -> &DMatrix<f64> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Same prior and grid, log-likelihoods added (conditionally independent data).
    pub fn with_extra_loglik(&self, extra: &DVector<f64>) -> Result<Self> {
        DiscreteModel::new(self.q.clone(), &self.loglik + extra, self.grid.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteModelRecord {
    pub prior: Vec<f64>,
    pub loglik: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Vec<f64>>>,
}

impl TryFrom<&DiscreteModelRecord> for DiscreteModel {
    type Error = FmbError;

    fn try_from(r: &DiscreteModelRecord) -> Result<Self> {
        let q = DVector::from_vec(r.prior.clone());
        let ll = DVector::from_vec(r.loglik.clone());
        match &r.grid {
            Some(g) => DiscreteModel::new(q, ll, from_rows(g, "grid")?),
            None => DiscreteModel::unstructured(q, ll),
        }
    }
}

/// `log Σ exp(a_i)` over finite entries; `-∞` entries are skipped.
pub fn logsumexp(a: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = a.clone().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + a.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn log_joint(model: &DiscreteModel) -> impl Iterator<Item = f64> + Clone + '_ {
    model
        .q
        .iter()
        .zip(model.loglik.iter())
        .map(|(&q, &l)| if q > 0.0 { q.ln() + l } else { f64::NEG_INFINITY })
}

pub fn log_evidence(model: &DiscreteModel) -> Result<f64> {
    let z = logsumexp(log_joint(model));
    if z.is_finite() {
        Ok(z)
    } else {
        Err(FmbError::EvidenceUnderflow)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesUpdate {
    pub posterior: DVector<f64>,
    /// `posterior / prior`, zero off the prior support; `prior · L = 1`.
    pub normalized_l: DVector<f64>,
}

pub fn bayes_update(model: &DiscreteModel) -> Result<BayesUpdate> {
    let z = log_evidence(model)?;
    let lj: Vec<f64> = log_joint(model).collect();
    let posterior = DVector::from_iterator(lj.len(), lj.iter().map(|a| (a - z).exp()));
    let normalized_l = DVector::from_iterator(
        lj.len(),
        model.loglik.iter().zip(model.q.iter()).map(|(&l, &q)| if q > 0.0 { (l - z).exp() } else { 0.0 }),
    );
    Ok(BayesUpdate { posterior, normalized_l })
}

/// `Δq·L` for the Bayes update, the squared Fisher-Rao length of the update.
pub fn partial_likelihood_gain(model: &DiscreteModel) -> Result<f64> {
    let u = bayes_update(model)?;
    Ok((&u.posterior - &model.q).dot(&u.normalized_l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    pub elbo: f64,
    /// `(q̂ − q)·log L̃`.
    pub direct_term: f64,
    /// `−KL(q̂‖q)`.
    pub inertial_term: f64,
    pub log_evidence: f64,
    pub kl_to_true: f64,
}

fn check_qhat(model: &DiscreteModel, qhat: &DVector<f64>) -> Result<()> {
    if qhat.len() != model.len() {
        return Err(FmbError::Dimension(format!(
            "q̂ has length {} but the model has {} points",
            qhat.len(),
            model.len()
        )));
    }
    check_probability(qhat, "q̂")?;
    match (0..qhat.len()).find(|&i| qhat[i] > 0.0 && model.q[i] == 0.0) {
        Some(i) => Err(FmbError::SupportViolation(i)),
        None => Ok(()),
    }
}

pub fn elbo(model: &DiscreteModel, qhat: &DVector<f64>) -> Result<ElboReport> {
    check_qhat(model, qhat)?;
    let post = bayes_update(model)?.posterior;
    let z = log_evidence(model)?;
    let kl_prior = kl(qhat, &model.q)?;
    let expected = qhat.dot(&model.loglik);
    Ok(ElboReport {
        elbo: expected - kl_prior,
        direct_term: (qhat - &model.q).dot(&model.loglik),
        inertial_term: -kl_prior,
        log_evidence: z,
        kl_to_true: kl(qhat, &post)?,
    })
}

/// Price split of `elbo(q̂) − elbo(q)` into the direct force of the data and the inertial
/// pull back toward the prior.
pub fn elbo_delta_price(model: &DiscreteModel, qhat: &DVector<f64>) -> Result<(f64, f64)> {
    let r = elbo(model, qhat)?;
    Ok((r.direct_term, r.inertial_term))
}

/// Change in variational free energy from `q` to `q̂`: complexity minus accuracy.
pub fn free_energy_delta(model: &DiscreteModel, qhat: &DVector<f64>) -> Result<f64> {
    check_qhat(model, qhat)?;
    Ok(kl(qhat, &model.q)? - (qhat - &model.q).dot(&model.loglik))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Saturated,
    MeanField,
}

/// Softmax-product family over the model's support.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalFamily {
    pub phi: DVector<f64>,
    kind: FamilyKind,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    /// Per support point, its level in each factor; `None` for points the family excludes.
    index: Vec<Option<Vec<usize>>>,
}

impl VariationalFamily {
    /// Full categorical over the prior's support, initialized at the uniform distribution.
    pub fn saturated(model: &DiscreteModel) -> Self {
        let mut index = Vec::with_capacity(model.len());
        let mut k = 0;
        for &q in model.q.iter() {
            if q > 0.0 {
                index.push(Some(vec![k]));
                k += 1;
            } else {
                index.push(None);
            }
        }
        VariationalFamily {
            phi: DVector::zeros(k),
            kind: FamilyKind::Saturated,
            sizes: vec![k],
            offsets: vec![0],
            index,
        }
    }

    /// Product of independent categoricals, one per grid column. The grid must enumerate
    /// the full Cartesian product of its column values exactly once, and the prior must
    /// put mass on every point.
    pub fn mean_field(model: &DiscreteModel) -> Result<Self> {
        let (m, n) = model.grid.shape();
        let mut levels: Vec<Vec<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let mut vals: Vec<f64> = model.grid.column(k).iter().cloned().collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            levels.push(vals);
        }
        let sizes: Vec<usize> = levels.iter().map(Vec::len).collect();
        let product: usize = sizes.iter().product();
        if product != m {
            return Err(FmbError::NonFactorizable(format!(
                "grid has {m} points but its coordinate levels span {product}"
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(m);
        let mut index = Vec::with_capacity(m);
        for i in 0..m {
            let tuple: Vec<usize> = (0..n)
                .map(|k| {
                    let x = model.grid[(i, k)];
                    levels[k].iter().position(|&l| l == x).expect("level from same column")
                })
                .collect();
            if !seen.insert(tuple.clone()) {
                return Err(FmbError::NonFactorizable(format!("grid point {i} is repeated")));
            }
            if model.q[i] == 0.0 {
                return Err(FmbError::NonFactorizable(format!(
                    "prior has no mass at grid point {i} inside the product support"
                )));
            }
            index.push(Some(tuple));
        }
        let mut offsets = Vec::with_capacity(n);
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(VariationalFamily {
            phi: DVector::zeros(acc),
            kind: FamilyKind::MeanField,
            sizes,
            offsets,
            index,
        })
    }

    pub fn of_kind(kind: FamilyKind, model: &DiscreteModel) -> Result<Self> {
        match kind {
            FamilyKind::Saturated => Ok(VariationalFamily::saturated(model)),
            FamilyKind::MeanField => VariationalFamily::mean_field(model),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn factor_sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn log_factors(&self, phi: &DVector<f64>) -> Vec<DVector<f64>> {
        self.sizes
            .iter()
            .zip(&self.offsets)
            .map(|(&s, &o)| {
                let seg = phi.rows(o, s);
                let z = logsumexp(seg.iter().cloned());
                DVector::from_iterator(s, seg.iter().map(|x| x - z))
            })
            .collect()
    }

    /// `log q̂` per support point (`-∞` for excluded points).
    pub fn log_qhat(&self, phi: &DVector<f64>) -> DVector<f64> {
        let lf = self.log_factors(phi);
        DVector::from_iterator(
            self.index.len(),
            self.index.iter().map(|ix| match ix {
                Some(t) => t.iter().enumerate().map(|(k, &a)| lf[k][a]).sum(),
                None => f64::NEG_INFINITY,
            }),
        )
    }

    pub fn qhat(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.log_qhat(phi).map(f64::exp)
    }

    /// `∂q̂_i/∂φ` as an `m × p` matrix.
    pub fn jacobian(&self, phi: &DVector<f64>) -> DMatrix<f64> {
        let lf = self.log_factors(phi);
        let qh = self.qhat(phi);
        let mut j = DMatrix::zeros(self.index.len(), phi.len());
        for (i, ix) in self.index.iter().enumerate() {
            let Some(t) = ix else { continue };
            for (k, &a_i) in t.iter().enumerate() {
                for a in 0..self.sizes[k] {
                    let pi = lf[k][a].exp();
                    let ind = if a == a_i { 1.0 } else { 0.0 };
                    j[(i, self.offsets[k] + a)] = qh[i] * (ind - pi);
                }
            }
        }
        j
    }
}

/// Per-point force on `q̂`: `log L̃ − log(q̂/q)`. Zero on excluded points.
fn point_force(model: &DiscreteModel, log_qhat: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        model.len(),
        (0..model.len()).map(|i| {
            if log_qhat[i].is_finite() {
                model.loglik[i] - (log_qhat[i] - model.q[i].ln())
            } else {
                0.0
            }
        }),
    )
}

/// ELBO as a function of the family parameters.
pub fn elbo_at(model: &DiscreteModel, family: &VariationalFamily, phi: &DVector<f64>) -> f64 {
    let lq = family.log_qhat(phi);
    let g = point_force(model, &lq);
    lq.iter().zip(g.iter()).map(|(l, g)| if l.is_finite() { l.exp() * g } else { 0.0 }).sum()
}

/// Analytic gradient `∂L/∂φ = Jᵀ g`.
pub fn elbo_gradient(model: &DiscreteModel, family: &VariationalFamily, phi: &DVector<f64>) -> DVector<f64> {
    let g = point_force(model, &family.log_qhat(phi));
    family.jacobian(phi).tr_mul(&g)
}

/// Largest directional derivative of the ELBO over unit `δq̂` in the family's tangent space:
/// the norm of the force projected onto the column space of the Jacobian.
pub fn statics_residual(model: &DiscreteModel, family: &VariationalFamily, phi: &DVector<f64>) -> f64 {
    let g = point_force(model, &family.log_qhat(phi));
    let j = family.jacobian(phi);
    let jtj = j.tr_mul(&j);
    let x = pinv_solve_sym(&jtj, &j.tr_mul(&g), PINV_RTOL);
    (j * x).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalFit {
    pub phi: DVector<f64>,
    pub qhat: DVector<f64>,
    /// One report per accepted iterate, starting with the initial parameters.
    pub trace: Vec<ElboReport>,
    pub statics_residual: f64,
}

const MAX_HALVINGS: usize = 60;

/// Search direction for [`variational_fit_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ascent {
    /// Plain gradient `∂L/∂φ`.
    #[default]
    Gradient,
    /// Gradient preconditioned by the Fisher information of `q̂(φ)`, `G = Jᵀ diag(1/q̂) J`,
    /// through a least-norm solve. For the saturated family a unit step lands on the
    /// posterior.
    Natural,
}

/// Fisher information of the family at `phi`.
pub fn family_fisher(family: &VariationalFamily, phi: &DVector<f64>) -> DMatrix<f64> {
    let j = family.jacobian(phi);
    let qh = family.qhat(phi);
    let scaled = DMatrix::from_fn(j.nrows(), j.ncols(), |i, k| if qh[i] > 0.0 { j[(i, k)] / qh[i] } else { 0.0 });
    j.tr_mul(&scaled)
}

/// Gradient ascent on `φ` with backtracking: the rate is halved until the ELBO does not
/// decrease. Stops early when no nonnegative-gain step exists at any tested rate.
pub fn variational_fit(
    model: &DiscreteModel,
    family: &VariationalFamily,
    steps: usize,
    rate: f64,
) -> Result<VariationalFit> {
    variational_fit_with(model, family, steps, rate, Ascent::Gradient)
}

/// [`variational_fit`] with a choice of search direction.
pub fn variational_fit_with(
    model: &DiscreteModel,
    family: &VariationalFamily,
    steps: usize,
    rate: f64,
    ascent: Ascent,
) -> Result<VariationalFit> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(FmbError::InvalidInput(format!("rate must be positive, got {rate}")));
    }
    if family.index.len() != model.len() {
        return Err(FmbError::NonFactorizable("family built for a different support".into()));
    }
    let mut phi = family.phi.clone();
    let mut trace = vec![elbo(model, &family.qhat(&phi))?];
    let mut current = trace[0].elbo;
    for _ in 0..steps {
        let mut grad = elbo_gradient(model, family, &phi);
        if ascent == Ascent::Natural {
            grad = pinv_solve_sym(&family_fisher(family, &phi), &grad, PINV_RTOL);
        }
        if grad.norm() == 0.0 {
            break;
        }
        let mut r = rate;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &phi + &grad * r;
            // accept on the same evaluation that is recorded, so the trace is monotone
            let report = elbo(model, &family.qhat(&cand))?;
            if report.elbo.is_finite() && report.elbo >= current {
                accepted = Some((cand, report));
                break;
            }
            r *= 0.5;
        }
        let Some((cand, report)) = accepted else { break };
        if cand == phi {
            break;
        }
        phi = cand;
        current = report.elbo;
        trace.push(report);
    }
    Ok(VariationalFit {
        qhat: family.qhat(&phi),
        statics_residual: statics_residual(model, family, &phi),
        phi,
        trace,
    })
}
