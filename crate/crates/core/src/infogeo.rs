//! Separation measures between two probability vectors `q` and `q′`, all in nats.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{FmbError, Result};
use crate::linalg::check_probability;

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionPair {
    q: DVector<f64>,
    q_prime: DVector<f64>,
}

impl DistributionPair {
    pub fn new(q: DVector<f64>, q_prime: DVector<f64>) -> Result<Self> {
        check_probability(&q, "q")?;
        check_probability(&q_prime, "q_prime")?;
        if q.len() != q_prime.len() {
            return Err(FmbError::Dimension(format!(
                "q has length {} but q_prime has length {}",
                q.len(),
                q_prime.len()
            )));
        }
        Ok(DistributionPair { q, q_prime })
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn q_prime(&self) -> &DVector<f64> {
        &self.q_prime
    }

    pub fn delta(&self) -> DVector<f64> {
        &self.q_prime - &self.q
    }

    /// `w = q′/q`, zero where both vanish.
    pub fn relative_fitness(&self) -> Result<DVector<f64>> {
        let mut w = DVector::zeros(self.q.len());
        for i in 0..self.q.len() {
            let (a, b) = (self.q[i], self.q_prime[i]);
            if a > 0.0 {
                w[i] = b / a;
            } else if b != 0.0 {
                return Err(FmbError::UnsupportedMassCreation(i));
            }
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub q: Vec<f64>,
    pub q_prime: Vec<f64>,
}

impl TryFrom<&PairRecord> for DistributionPair {
    type Error = FmbError;

    fn try_from(r: &PairRecord) -> Result<Self> {
        DistributionPair::new(DVector::from_vec(r.q.clone()), DVector::from_vec(r.q_prime.clone()))
    }
}

/// `Σ Δq²/q`.
pub fn fisher_rao_sq(pair: &DistributionPair) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..pair.q.len() {
        let d = pair.q_prime[i] - pair.q[i];
        if pair.q[i] > 0.0 {
            s += d * d / pair.q[i];
        } else if d != 0.0 {
            return Err(FmbError::UnsupportedMassCreation(i));
        }
    }
    Ok(s)
}

/// `Var_q(q′/q)`, the covariance reading of the Fisher-Rao length.
pub fn relative_fitness_variance(pair: &DistributionPair) -> Result<f64> {
    let w = pair.relative_fitness()?;
    let wbar = pair.q.dot(&w);
    Ok(pair.q.iter().zip(w.iter()).map(|(q, x)| q * (x - wbar).powi(2)).sum())
}

/// `KL(p‖r) = Σ p log(p/r)` with `0 log 0 = 0`.
pub fn kl(p: &DVector<f64>, r: &DVector<f64>) -> Result<f64> {
    if p.len() != r.len() {
        return Err(FmbError::Dimension(format!(
            "p has length {} but r has length {}",
            p.len(),
            r.len()
        )));
    }
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] == 0.0 {
            continue;
        }
        if r[i] == 0.0 {
            return Err(FmbError::InfiniteDivergence(i));
        }
        s += p[i] * (p[i] / r[i]).ln();
    }
    Ok(s)
}

/// `KL(q′‖q) + KL(q‖q′)`.
pub fn jeffreys(pair: &DistributionPair) -> Result<f64> {
    Ok(kl(&pair.q_prime, &pair.q)? + kl(&pair.q, &pair.q_prime)?)
}

/// `m = log(q′/q)`, zero where both vanish.
pub fn malthusian(pair: &DistributionPair) -> Result<DVector<f64>> {
    let mut m = DVector::zeros(pair.q.len());
    for i in 0..pair.q.len() {
        let (a, b) = (pair.q[i], pair.q_prime[i]);
        match (a > 0.0, b > 0.0) {
            (true, true) => m[i] = (b / a).ln(),
            (false, false) => {}
            _ => return Err(FmbError::InfiniteDivergence(i)),
        }
    }
    Ok(m)
}

/// Jeffreys divergence in its `Δq·m` form.
pub fn jeffreys_malthusian(pair: &DistributionPair) -> Result<f64> {
    Ok(pair.delta().dot(&malthusian(pair)?))
}

pub fn sqrt_embed(q: &DVector<f64>) -> DVector<f64> {
    q.map(f64::sqrt)
}

/// `4‖√q′ − √q‖²`.
pub fn fisher_rao_sphere_sq(pair: &DistributionPair) -> f64 {
    4.0 * (sqrt_embed(&pair.q_prime) - sqrt_embed(&pair.q)).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DalembertTerms {
    /// `Δq·L`, equal to the Fisher-Rao length.
    pub direct: f64,
    /// `q′·(1 − L)`.
    pub inertial: f64,
    pub residual: f64,
}

/// Virtual work of the direct and inertial terms for the normalized likelihood
/// `L = q′/q`, whose post-update value is identically one.
///
/// The residual is summed per coordinate, so it measures the identity rather than the
/// cancellation error between two large totals.
pub fn dalembert(pair: &DistributionPair) -> Result<DalembertTerms> {
    let l = pair.relative_fitness()?;
    let (mut direct, mut inertial, mut residual) = (0.0, 0.0, 0.0);
    for i in 0..l.len() {
        let d = (pair.q_prime[i] - pair.q[i]) * l[i];
        let n = pair.q_prime[i] * (1.0 - l[i]);
        direct += d;
        inertial += n;
        residual += d + n;
    }
    Ok(DalembertTerms { direct, inertial, residual })
}

pub fn dalembert_residual(pair: &DistributionPair) -> Result<f64> {
    Ok(dalembert(pair)?.residual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub fisher_rao_sq: f64,
    pub kl_forward: f64,
    pub kl_reverse: f64,
    pub jeffreys: f64,
    pub fisher_rao_sphere_sq: f64,
    pub dalembert_residual: f64,
}

/// All measures at once; `kl_forward` is `KL(q′‖q)`.
pub fn divergence_report(pair: &DistributionPair) -> Result<DivergenceReport> {
    let kl_forward = kl(&pair.q_prime, &pair.q)?;
    let kl_reverse = kl(&pair.q, &pair.q_prime)?;
    Ok(DivergenceReport {
        fisher_rao_sq: fisher_rao_sq(pair)?,
        kl_forward,
        kl_reverse,
        jeffreys: kl_forward + kl_reverse,
        fisher_rao_sphere_sq: fisher_rao_sphere_sq(pair),
        dalembert_residual: dalembert_residual(pair)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn pair(a: &[f64], b: &[f64]) -> DistributionPair {
        DistributionPair::new(v(a), v(b)).unwrap()
    }

    #[test]
    fn fisher_rao_examples() {
        assert_eq!(fisher_rao_sq(&pair(&[0.5, 0.5], &[0.5, 0.5])).unwrap(), 0.0);
        let p = pair(&[0.5, 0.5], &[0.25, 0.75]);
        let oracle = 2.0 * (0.0625 / 0.5);
        assert!((fisher_rao_sq(&p).unwrap() - oracle).abs() < 1e-15);
        assert!((relative_fitness_variance(&p).unwrap() - 0.25).abs() < 1e-15);
        let p = pair(&[0.25, 0.25, 0.5], &[0.25, 0.5, 0.25]);
        assert!((fisher_rao_sq(&p).unwrap() - (0.0625 / 0.25 + 0.0625 / 0.5)).abs() < 1e-15);
    }

    #[test]
    fn mass_creation_is_an_error() {
        let p = pair(&[1.0, 0.0], &[0.5, 0.5]);
        assert_eq!(fisher_rao_sq(&p), Err(FmbError::UnsupportedMassCreation(1)));
        assert_eq!(kl(p.q_prime(), p.q()), Err(FmbError::InfiniteDivergence(1)));
        assert!(dalembert(&p).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&v(&[0.3, 0.7]), &v(&[0.3, 0.7])).unwrap(), 0.0);
        assert!((kl(&v(&[1.0, 0.0]), &v(&[0.5, 0.5])).unwrap() - 2f64.ln()).abs() < 1e-15);
        let oracle = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
        let got = kl(&v(&[0.25, 0.75]), &v(&[0.5, 0.5])).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn jeffreys_example() {
        let p = pair(&[0.5, 0.5], &[0.25, 0.75]);
        let a = kl(&v(&[0.5, 0.5]), &v(&[0.25, 0.75])).unwrap();
        let b = kl(&v(&[0.25, 0.75]), &v(&[0.5, 0.5])).unwrap();
        let j = jeffreys(&p).unwrap();
        assert!((j - (a + b)).abs() < 1e-15);
        assert!((j - 0.274653).abs() < 1e-6);
        assert!((jeffreys_malthusian(&p).unwrap() - j).abs() < 1e-15);
    }

    #[test]
    fn sqrt_embed_examples() {
        assert_eq!(sqrt_embed(&v(&[1.0, 0.0])), v(&[1.0, 0.0]));
        let r = sqrt_embed(&v(&[0.25, 0.75]));
        assert_eq!(r[0], 0.5);
        assert_eq!(r[1], 0.75f64.sqrt());
    }

    #[test]
    fn sphere_examples() {
        let p = pair(&[0.5, 0.5], &[0.5 + 1e-4, 0.5 - 1e-4]);
        let ratio = fisher_rao_sphere_sq(&p) / fisher_rao_sq(&p).unwrap();
        assert!((ratio - 1.0).abs() < 1e-3);
        let p = pair(&[0.25, 0.75], &[0.75, 0.25]);
        let dr0 = 0.75f64.sqrt() - 0.5;
        let oracle = 4.0 * 2.0 * dr0 * dr0;
        assert!((fisher_rao_sphere_sq(&p) - oracle).abs() < 1e-14);
        assert!((fisher_rao_sphere_sq(&p) - 1.0717968).abs() < 1e-6);
    }

    #[test]
    fn dalembert_example() {
        let t = dalembert(&pair(&[0.5, 0.5], &[0.25, 0.75])).unwrap();
        assert!((t.direct - 0.25).abs() < 1e-15);
        assert!((t.inertial + 0.25).abs() < 1e-15);
        assert!(t.residual.abs() < 1e-15);
    }

    fn simplex(len: usize) -> impl Strategy<Value = DVector<f64>> {
        prop::collection::vec(0.01f64..1.0, len).prop_map(|x| {
            let s: f64 = x.iter().sum();
            let mut q = DVector::from_iterator(x.len(), x.iter().map(|a| a / s));
            let drift = 1.0 - q.sum();
            q[0] += drift;
            q
        })
    }

    fn pairs() -> impl Strategy<Value = DistributionPair> {
        (2usize..20).prop_flat_map(|m| (simplex(m), simplex(m)))
            .prop_filter_map("valid pair", |(a, b)| DistributionPair::new(a, b).ok())
    }

    proptest! {
        #[test]
        fn fisher_rao_is_var_w(p in pairs()) {
            let f = fisher_rao_sq(&p).unwrap();
            prop_assert!((f - relative_fitness_variance(&p).unwrap()).abs() < 1e-12 * (1.0 + f));
            prop_assert!(dalembert_residual(&p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn gibbs_and_symmetry(p in pairs()) {
            prop_assert!(kl(p.q(), p.q_prime()).unwrap() >= 0.0);
            let swapped = DistributionPair::new(p.q_prime().clone(), p.q().clone()).unwrap();
            prop_assert!((jeffreys(&p).unwrap() - jeffreys(&swapped).unwrap()).abs() < 1e-14);
        }

        #[test]
        fn embedding_is_unit(q in (1usize..20).prop_flat_map(simplex)) {
            prop_assert!((sqrt_embed(&q).norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn small_step_limits(q in (2usize..12).prop_flat_map(simplex), d in prop::collection::vec(-1.0f64..1.0, 12)) {
            let m = q.len();
            // relative perturbation δ = q∘(u − q·u), which sums to zero
            let u = DVector::from_iterator(m, d.into_iter().take(m));
            let delta = q.component_mul(&u.add_scalar(-q.dot(&u)));
            prop_assume!(delta.norm() > 1e-6);
            let eps = 1e-3;
            let p = DistributionPair::new(q.clone(), &q + &delta * eps);
            prop_assume!(p.is_ok());
            let p = p.unwrap();
            let f = fisher_rao_sq(&p).unwrap();
            prop_assert!((jeffreys(&p).unwrap() / f - 1.0).abs() < 0.01);
            prop_assert!((fisher_rao_sphere_sq(&p) / f - 1.0).abs() < 0.01);
        }
    }
}
