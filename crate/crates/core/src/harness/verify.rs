//! Self-checks run by `fmb verify`: analytic derivatives of the bundled objectives
//! against central differences, and the algebraic identities on a small seeded corpus.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bayes::{elbo, log_evidence};
use crate::corpus;
use crate::exec::Execution;
use crate::filters::{gp_update, kalman_update};
use crate::hierarchy::hierarchical_price;
use crate::infogeo::{dalembert_residual, fisher_rao_sq, relative_fitness_variance};
use crate::objectives::{check_derivatives, random_probes, GaussianBumps, LinRegSynthetic, Objective, Quadratic, RosenbrockNeg};
use crate::price::{fmb_decompose, price_update};
use crate::rng::SeedStream;

pub const PROBES: usize = 20;
pub const STEP: f64 = 1e-6;
pub const RTOL: f64 = 1e-4;
const CORPUS: u64 = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn bundled() -> Vec<Box<dyn Objective>> {
    vec![
        Box::new(Quadratic::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]), DVector::from_row_slice(&[1.0, -0.5])).expect("spd")),
        Box::new(RosenbrockNeg::new(3).expect("n >= 2")),
        Box::new(
            GaussianBumps::new(
                vec![DVector::from_row_slice(&[-1.0, 0.0]), DVector::from_row_slice(&[1.5, 0.5])],
                vec![0.7, 1.2],
                Some(vec![1.0, 0.6]),
            )
            .expect("valid bumps"),
        ),
        Box::new(LinRegSynthetic::generate(100, 3, 0.5, 0).expect("valid data")),
    ]
}

fn derivative_checks() -> Vec<Check> {
    let mut rng = SeedStream::new(0).named("verify-probes").rng();
    bundled()
        .iter()
        .map(|obj| {
            let probes = random_probes(&DVector::zeros(obj.dim()), 1.0, PROBES, &mut rng);
            let d = check_derivatives(obj.as_ref(), &probes, STEP, RTOL);
            Check {
                name: format!("derivatives/{}", obj.name()),
                passed: d.passed,
                max_error: d.max_gradient_error.max(d.max_hessian_error),
                tolerance: RTOL,
            }
        })
        .collect()
}

/// Largest per-instance error over `CORPUS` seeds; NaN propagates as a failure.
fn corpus_check(name: &str, tolerance: f64, exec: Execution, err: impl Fn(u64) -> f64 + Sync + Send) -> Check {
    let errs = exec.map_range(CORPUS as usize, |s| err(s as u64));
    let max_error = errs.iter().fold(0.0_f64, |a, &e| if e.is_nan() || a.is_nan() { f64::NAN } else { a.max(e) });
    Check { name: name.into(), passed: max_error <= tolerance, max_error, tolerance }
}

fn invariant_checks(exec: Execution) -> Vec<Check> {
    vec![
        corpus_check("price_identity", 1e-12, exec, |s| {
            let p = price_update(&corpus::population(s));
            (&p.delta_mean - &p.selection - &p.transmission).amax()
        }),
        corpus_check("fmb_reconstruction", 1e-8, exec, |s| {
            let pop = corpus::population(s);
            (price_update(&pop).delta_mean - fmb_decompose(&pop).deterministic_part()).amax()
        }),
        corpus_check("fisher_rao_equals_fitness_variance", 1e-12, exec, |s| {
            let pair = corpus::distribution_pair(s);
            match (fisher_rao_sq(&pair), relative_fitness_variance(&pair)) {
                (Ok(a), Ok(b)) => (a - b).abs(),
                _ => f64::NAN,
            }
        }),
        corpus_check("dalembert_balance", 1e-12, exec, |s| {
            dalembert_residual(&corpus::distribution_pair(s)).map_or(f64::NAN, f64::abs)
        }),
        corpus_check("gp_against_solve", 1e-8, exec, |s| {
            let (model, y) = corpus::gp_instance(s, 20);
            let Ok(up) = gp_update(&model, &y) else { return f64::NAN };
            let k = model.gram();
            let a = &k + DMatrix::identity(model.len(), model.len()) * model.noise_var();
            match a.cholesky() {
                Some(c) => (&up.delta_mean - &k * c.solve(&(&y - model.prior_mean()))).amax(),
                None => f64::NAN,
            }
        }),
        corpus_check("kalman_against_gain_form", 1e-10, exec, |s| {
            let (sys, prior, y) = corpus::kalman_instance(s);
            let Ok(up) = kalman_update(&prior, &sys, &y) else { return f64::NAN };
            let s_mat = &sys.h * &prior.cov * sys.h.transpose() + &sys.r;
            let Some(s_inv) = s_mat.try_inverse() else { return f64::NAN };
            let gain = &prior.cov * sys.h.transpose() * s_inv;
            let mean = &prior.mean + &gain * (&y - &sys.h * &prior.mean);
            (&up.posterior.mean - mean).amax()
        }),
        corpus_check("elbo_below_evidence", 1e-10, exec, |s| {
            let m = corpus::discrete_model(s);
            let mut rng = SeedStream::new(s).named("verify-qhat").rng();
            let qhat = corpus::simplex(&mut rng, m.len());
            match (elbo(&m, &qhat), log_evidence(&m)) {
                (Ok(r), Ok(z)) => (r.elbo - z).max(0.0),
                _ => f64::NAN,
            }
        }),
        corpus_check("hierarchy_matches_flat", 1e-10, exec, |s| {
            let g = corpus::grouped_population(s);
            (hierarchical_price(&g).total - price_update(g.flatten()).delta_mean).amax()
        }),
    ]
}

pub fn verify_all(exec: Execution) -> VerifyReport {
    let mut checks = derivative_checks();
    checks.extend(invariant_checks(exec));
    VerifyReport { passed: checks.iter().all(|c| c.passed), checks }
}
