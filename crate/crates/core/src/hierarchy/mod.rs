//! Two-level Price equation and the hierarchical force-metric-bias split, plus the
//! learning-within-selection experiments built on it.

pub mod baldwin;
pub mod lookahead;

use nalgebra::{DMatrix, DVector};

use crate::error::{FmbError, Result};
use crate::linalg::{check_probability, pinv_solve_sym, weighted_cov, weighted_cov_vec, weighted_mean, PINV_RTOL};
use crate::price::{PriceDecomposition, Population};

pub use baldwin::{baldwin_experiment, BaldwinConfig, BaldwinResult, BaldwinRow, FitnessMode, Landscape};
pub use lookahead::{lookahead_meta, LookaheadTrace};

/// Members of one group, with within-group frequencies summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMembers {
    pub q: DVector<f64>,
    pub theta: DMatrix<f64>,
    /// Nonnegative raw fitness; normalized over the whole population.
    pub fitness: DVector<f64>,
    pub dtheta: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPopulation {
    group_q: DVector<f64>,
    within_q: Vec<DVector<f64>>,
    offsets: Vec<usize>,
    flat: Population,
}

impl GroupedPopulation {
    pub fn new(group_q: DVector<f64>, groups: Vec<GroupMembers>) -> Result<Self> {
        check_probability(&group_q, "group weights")?;
        if groups.len() != group_q.len() {
            return Err(FmbError::Dimension(format!(
                "{} group weights for {} groups",
                group_q.len(),
                groups.len()
            )));
        }
        let n = groups.first().map_or(0, |g| g.theta.ncols());
        let mut offsets = vec![0];
        for (g, grp) in groups.iter().enumerate() {
            if grp.q.is_empty() {
                return Err(FmbError::EmptyGroup(g));
            }
            check_probability(&grp.q, &format!("q within group {g}"))?;
            if grp.theta.shape() != (grp.q.len(), n) || grp.fitness.len() != grp.q.len() {
                return Err(FmbError::Dimension(format!("group {g} has inconsistent shapes")));
            }
            offsets.push(offsets[g] + grp.q.len());
        }
        let m = offsets[groups.len()];
        let mut q = DVector::zeros(m);
        let mut theta = DMatrix::zeros(m, n);
        let mut fitness = DVector::zeros(m);
        let mut dtheta = DMatrix::zeros(m, n);
        for (g, grp) in groups.iter().enumerate() {
            let o = offsets[g];
            let mg = grp.q.len();
            q.rows_mut(o, mg).copy_from(&(&grp.q * group_q[g]));
            theta.rows_mut(o, mg).copy_from(&grp.theta);
            fitness.rows_mut(o, mg).copy_from(&grp.fitness);
            if let Some(d) = &grp.dtheta {
                if d.shape() != grp.theta.shape() {
                    return Err(FmbError::Dimension(format!("dtheta of group {g} has shape {:?}", d.shape())));
                }
                dtheta.rows_mut(o, mg).copy_from(d);
            }
        }
        // renormalize away rounding from the products
        let q = &q / q.sum();
        let flat = Population::new(q, theta, fitness, Some(dtheta))?;
        let within_q = groups.into_iter().map(|g| g.q).collect();
        Ok(GroupedPopulation { group_q, within_q, offsets, flat })
    }

    pub fn groups(&self) -> usize {
        self.group_q.len()
    }

    pub fn group_weights(&self) -> &DVector<f64> {
        &self.group_q
    }

    pub fn flatten(&self) -> &Population {
        &self.flat
    }

    fn slice(&self, g: usize) -> (&DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let (o, mg) = (self.offsets[g], self.within_q[g].len());
        (
            &self.within_q[g],
            self.flat.theta().rows(o, mg).into_owned(),
            self.flat.w().rows(o, mg).into_owned(),
            self.flat.dtheta().rows(o, mg).into_owned(),
        )
    }

    /// `w̄_g`, `θ̄_g` and `Δθ̄_g` for every group, as rows.
    fn group_moments(&self) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (k, n) = (self.groups(), self.flat.n());
        let mut wbar = DVector::zeros(k);
        let mut tbar = DMatrix::zeros(k, n);
        let mut dbar = DMatrix::zeros(k, n);
        for g in 0..k {
            let (q, theta, w, dtheta) = self.slice(g);
            wbar[g] = q.dot(&w);
            let mean = weighted_mean(q, &theta);
            tbar.row_mut(g).copy_from(&mean.transpose());
            if wbar[g] > 0.0 {
                let qp = q.component_mul(&w) / wbar[g];
                let after = weighted_mean(&qp, &(&theta + &dtheta));
                dbar.row_mut(g).copy_from(&(after - mean).transpose());
            }
        }
        (wbar, tbar, dbar)
    }
}

/// Within-group Price terms on the population-wide fitness scale:
/// `w̄_g Δθ̄_g = Cov(w_{j|g}, θ_{j|g}) + E(w_{j|g} Δθ_{j|g})`.
#[derive(Debug, Clone, PartialEq)]
pub struct WithinPrice {
    pub mean_fitness: f64,
    pub delta_mean: DVector<f64>,
    pub selection: DVector<f64>,
    pub transmission: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierPrice {
    /// Price terms over groups: `Cov(w̄_g, θ̄_g)` and `E(w̄_g Δθ̄_g)`.
    pub between: PriceDecomposition,
    pub within: Vec<WithinPrice>,
    /// `Cov(w̄_g, θ̄_g) + E(Cov_g + E_g)`, fully expanded.
    pub total: DVector<f64>,
}

pub fn hierarchical_price(gpop: &GroupedPopulation) -> HierPrice {
    let qg = &gpop.group_q;
    let (wbar, tbar, dbar) = gpop.group_moments();
    let selection = weighted_cov_vec(qg, &wbar, &tbar);
    let qgw = qg.component_mul(&wbar);
    let transmission = weighted_mean(&qgw, &dbar);
    let delta_mean = weighted_mean(&qgw, &(&tbar + &dbar)) - weighted_mean(qg, &tbar);
    let mut total = selection.clone();
    let within: Vec<WithinPrice> = (0..gpop.groups())
        .map(|g| {
            let (q, theta, w, dtheta) = gpop.slice(g);
            let sel = weighted_cov_vec(q, &w, &theta);
            let trans = weighted_mean(&q.component_mul(&w), &dtheta);
            total += (&sel + &trans) * qg[g];
            WithinPrice { mean_fitness: wbar[g], delta_mean: dbar.row(g).transpose(), selection: sel, transmission: trans }
        })
        .collect();
    HierPrice { between: PriceDecomposition { delta_mean, selection, transmission }, within, total }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFmb {
    pub metric: DMatrix<f64>,
    pub force: DVector<f64>,
    /// `b_g = E(w_{j|g} Δθ_{j|g})`.
    pub bias: DVector<f64>,
    /// `b̃_g = b_g − b_B`.
    pub bias_residual: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierFmb {
    pub metric_between: DMatrix<f64>,
    pub force_between: DVector<f64>,
    /// The constant bias component, taken as the group-weighted mean of `b_g`.
    pub bias_between: DVector<f64>,
    pub groups: Vec<GroupFmb>,
    pub group_weights: DVector<f64>,
    pub metric: DMatrix<f64>,
    pub force: DVector<f64>,
    pub bias: DVector<f64>,
}

impl HierFmb {
    /// `E(M_g)` under the group weights.
    pub fn mean_within_metric(&self) -> DMatrix<f64> {
        let n = self.metric.nrows();
        self.groups
            .iter()
            .zip(self.group_weights.iter())
            .fold(DMatrix::zeros(n, n), |acc, (g, &w)| acc + &g.metric * w)
    }

    /// `M_B f_B + b_B + E(M_g f_g + b̃_g)`.
    pub fn reconstruct(&self) -> DVector<f64> {
        let mut out = &self.metric_between * &self.force_between + &self.bias_between;
        for (g, &w) in self.groups.iter().zip(self.group_weights.iter()) {
            out += (&g.metric * &g.force + &g.bias_residual) * w;
        }
        out
    }
}

pub fn hierarchical_fmb(gpop: &GroupedPopulation) -> HierFmb {
    let qg = &gpop.group_q;
    let n = gpop.flat.n();
    let (wbar, tbar, _) = gpop.group_moments();
    let metric_between = weighted_cov(qg, &tbar, &tbar);
    let force_between = pinv_solve_sym(&metric_between, &weighted_cov_vec(qg, &wbar, &tbar), PINV_RTOL);
    let mut parts = Vec::with_capacity(gpop.groups());
    let mut bias_between = DVector::zeros(n);
    let mut selection = &metric_between * &force_between;
    for g in 0..gpop.groups() {
        let (q, theta, w, dtheta) = gpop.slice(g);
        let metric = weighted_cov(q, &theta, &theta);
        let force = pinv_solve_sym(&metric, &weighted_cov_vec(q, &w, &theta), PINV_RTOL);
        let bias = weighted_mean(&q.component_mul(&w), &dtheta);
        bias_between += &bias * qg[g];
        selection += &metric * &force * qg[g];
        parts.push((metric, force, bias));
    }
    let groups = parts
        .into_iter()
        .map(|(metric, force, bias)| {
            let bias_residual = &bias - &bias_between;
            GroupFmb { metric, force, bias, bias_residual }
        })
        .collect();
    let flat = &gpop.flat;
    let metric = weighted_cov(flat.q(), flat.theta(), flat.theta());
    let force = pinv_solve_sym(&metric, &selection, PINV_RTOL);
    HierFmb {
        metric_between,
        force_between,
        bias: bias_between.clone(),
        bias_between,
        groups,
        group_weights: qg.clone(),
        metric,
        force,
    }
}
