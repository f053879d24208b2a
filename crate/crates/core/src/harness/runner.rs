use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{Command, ExperimentConfig, OutputFormat};
use super::output::Table;
use super::verify::verify_all;
use super::HarnessError;
use crate::bayes::{variational_fit_with, DiscreteModel, VariationalFamily};
use crate::error::FmbError;
use crate::evo::{es_optimize, EsRates, EsState, EsTraceRow};
use crate::exec::Execution;
use crate::filters::{gp_update, kalman_run};
use crate::hierarchy::{baldwin_experiment, BaldwinRow};
use crate::infogeo::{divergence_report, DistributionPair};
use crate::linalg::{from_rows, max_eigenvalue, min_eigenvalue};
use crate::optim::{optimizer_rng, OptimizerState, StepReport};
use crate::price::{fmb_decompose, price_update, FmbRecord, Population};

/// What a command produces: a trace table or a single JSON record.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Trace(Table),
    Record(Value),
}

impl Artifact {
    pub fn render(&self, format: OutputFormat) -> String {
        match self {
            Artifact::Trace(t) => t.render(format),
            Artifact::Record(v) => {
                let mut s = serde_json::to_string_pretty(v).expect("json");
                s.push('\n');
                s
            }
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Artifact::Trace(t) => t.rows.len(),
            Artifact::Record(_) => 1,
        }
    }
}

/// Outcome of one run. `text` is the rendered artifact, also written to `path` when set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub command: Command,
    pub seed: Option<u64>,
    pub path: Option<PathBuf>,
    pub sha256: String,
    pub rows: usize,
    pub wall_time_seconds: f64,
    pub text: String,
    pub artifact: Artifact,
}

/// Errors while assembling the problem are input errors.
fn input<T>(r: crate::Result<T>) -> Result<T, HarnessError> {
    r.map_err(|e| HarnessError::Config(vec![e.to_string()]))
}

/// Errors while running are numerical failures.
fn numeric<T>(r: crate::Result<T>) -> Result<T, HarnessError> {
    r.map_err(HarnessError::Numerical)
}

fn required<'a, T>(x: &'a Option<T>, what: &str) -> Result<&'a T, HarnessError> {
    x.as_ref().ok_or_else(|| HarnessError::Config(vec![format!("missing {what}")]))
}

fn state_columns(first: &str, prefix: &str, n: usize, rest: &[&str]) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..n).map(|i| format!("{prefix}{i}")))
        .chain(rest.iter().map(|s| s.to_string()))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `trace.csv` with seed 7 becomes `trace.seed7.csv`.
pub fn replicate_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    path.with_file_name(name)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Run `command` under `cfg` in memory. The config must already be valid.
pub fn execute(cfg: &ExperimentConfig, command: Command, exec: Execution) -> Result<Artifact, HarnessError> {
    match command {
        Command::Run => run_trace(cfg).map(Artifact::Trace),
        Command::Es => es_trace(cfg, exec).map(Artifact::Trace),
        Command::Vb => vb_trace(cfg).map(Artifact::Trace),
        Command::Gp => gp_trace(cfg).map(Artifact::Trace),
        Command::Kalman => kalman_trace(cfg).map(Artifact::Trace),
        Command::Baldwin => baldwin_trace(cfg, exec).map(Artifact::Trace),
        Command::Decompose => decompose(cfg).map(Artifact::Record),
        Command::Diverge => diverge(cfg).map(Artifact::Record),
        Command::Verify => {
            let report = verify_all(exec);
            Ok(Artifact::Record(serde_json::to_value(&report).expect("report serializes")))
        }
    }
}

fn run_trace(cfg: &ExperimentConfig) -> Result<Table, HarnessError> {
    let obj = input(required(&cfg.objective, "objective")?.build())?;
    let spec = required(&cfg.optimizer, "optimizer")?;
    let steps = *required(&cfg.steps, "steps")?;
    let n = obj.dim();
    let theta0 = cfg.init.as_ref().map_or_else(|| DVector::zeros(n), |v| DVector::from_vec(v.clone()));
    if theta0.len() != n {
        return Err(HarnessError::Config(vec![format!("init has length {} but the objective has dimension {n}", theta0.len())]));
    }
    let seed = cfg.seed.unwrap_or(0);
    let mut rng = optimizer_rng(seed);
    let mut state = OptimizerState::new(theta0, seed);
    let mut table = Table::new(state_columns("t", "theta", n, &["U", "f_norm", "predicted_gain", "b_norm", "xi_norm"]));
    let row = |t: usize, theta: &DVector<f64>, rep: Option<&StepReport>| {
        let mut r = vec![Some(t as f64)];
        r.extend(theta.iter().map(|&x| Some(x)));
        r.push(Some(obj.value(theta)));
        match rep {
            Some(s) => r.extend([s.force().norm(), s.predicted_gain(), s.bias().norm(), s.noise().norm()].map(Some)),
            None => r.extend([None; 4]),
        }
        r
    };
    table.push(row(0, &state.theta, None));
    let mut reports = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (next, rep) = numeric(spec.step(obj.as_ref(), &state, &mut rng))?;
        if next.theta.iter().any(|x| !x.is_finite()) {
            return Err(HarnessError::Numerical(FmbError::NonFinite(format!("theta at step {}", next.t))));
        }
        state = next;
        table.push(row(state.t, &state.theta, Some(&rep)));
        reports.push(rep);
    }
    recheck_reconstruction(&table, &reports, n, cfg.format_or_default())?;
    Ok(table)
}

/// Read the rendered trace back and confirm that each step's `Δθ`, as written, matches
/// `M f + b + ξ` from the step report.
fn recheck_reconstruction(table: &Table, reports: &[StepReport], n: usize, format: OutputFormat) -> Result<(), HarnessError> {
    let text = table.render(format);
    let parsed = match format {
        OutputFormat::Csv => Table::from_csv(&text),
        OutputFormat::Json => Table::from_json(&text),
    }
    .map_err(HarnessError::Output)?;
    let theta = |r: usize| DVector::from_fn(n, |i, _| parsed.rows[r][1 + i].unwrap_or(f64::NAN));
    let mut bad = Vec::new();
    for (k, rep) in reports.iter().enumerate() {
        let (before, after) = (theta(k), theta(k + 1));
        let written = &after - &before;
        let scale = 1.0_f64.max(before.amax()).max(after.amax());
        let err = (&written - rep.fmb.reconstruct()).amax();
        if !(err <= 1e-9 * scale) {
            bad.push(format!("step {}: |Δθ − (Mf + b + ξ)| = {err:e}", k + 1));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Verification(bad))
    }
}

fn es_trace(cfg: &ExperimentConfig, exec: Execution) -> Result<Table, HarnessError> {
    let obj = input(required(&cfg.objective, "objective")?.build())?;
    let es = required(&cfg.es, "es section")?;
    let n = obj.dim();
    if es.init_mean.len() != n {
        return Err(HarnessError::Config(vec![format!("es.init_mean has length {} but the objective has dimension {n}", es.init_mean.len())]));
    }
    let cov = match &es.init_cov {
        Some(rows) => input(from_rows(rows, "es.init_cov"))?,
        None => DMatrix::identity(n, n),
    };
    let seed = cfg.seed.unwrap_or(0);
    let init = input(EsState::new(DVector::from_vec(es.init_mean.clone()), cov, es.sigma, seed))?;
    let rates = EsRates { c_mu: es.c_mu.unwrap_or(EsRates::default().c_mu) };
    let (_, rows) = numeric(es_optimize(obj.as_ref(), &init, es.generations, es.pop_size, rates, exec))?;
    let mut table = Table::new(EsTraceRow::HEADER.iter().map(|s| s.to_string()).collect());
    for r in &rows {
        table.push_values(&r.values());
    }
    Ok(table)
}

fn vb_trace(cfg: &ExperimentConfig) -> Result<Table, HarnessError> {
    let vb = required(&cfg.vb, "vb section")?;
    let model = input(DiscreteModel::try_from(&vb.model))?;
    let family = input(VariationalFamily::of_kind(vb.family, &model))?;
    let fit = numeric(variational_fit_with(&model, &family, vb.steps, vb.rate, vb.ascent))?;
    let mut table = Table::new(["step", "elbo", "direct", "inertial", "kl_to_true"].map(String::from).to_vec());
    for (k, r) in fit.trace.iter().enumerate() {
        table.push_values(&[k as f64, r.elbo, r.direct_term, r.inertial_term, r.kl_to_true]);
    }
    Ok(table)
}

fn gp_trace(cfg: &ExperimentConfig) -> Result<Table, HarnessError> {
    let rec = required(&cfg.gp, "gp problem")?;
    let (model, y) = input(rec.build())?;
    if y.len() != model.len() {
        return Err(HarnessError::Config(vec![format!("y has length {} but there are {} inputs", y.len(), model.len())]));
    }
    let up = numeric(gp_update(&model, &y))?;
    let n = model.len();
    let mut table = Table::new(state_columns("t", "x", n, &["traceP", "innovationNorm"]));
    let mut row0 = vec![Some(0.0)];
    row0.extend(model.prior_mean().iter().map(|&x| Some(x)));
    row0.extend([Some(model.gram().trace()), None]);
    table.push(row0);
    let mut row1 = vec![1.0];
    row1.extend(up.posterior_mean.iter());
    row1.extend([up.metric.trace(), (&y - model.prior_mean()).norm()]);
    table.push_values(&row1);
    Ok(table)
}

fn kalman_trace(cfg: &ExperimentConfig) -> Result<Table, HarnessError> {
    let rec = required(&cfg.kalman, "kalman problem")?;
    let (sys, init) = input(rec.system())?;
    let obs = input(rec.observations(&sys, cfg.seed))?;
    if let Some((t, y)) = obs.iter().enumerate().find(|(_, y)| y.len() != sys.obs_dim()) {
        return Err(HarnessError::Config(vec![format!(
            "observation {t} has length {} but H has {} rows",
            y.len(),
            sys.obs_dim()
        )]));
    }
    let rows = numeric(kalman_run(&sys, &init, &obs))?;
    let mut table = Table::new(state_columns("t", "x", sys.state_dim(), &["traceP", "innovationNorm"]));
    for r in &rows {
        let mut row = vec![Some(r.t as f64)];
        row.extend(r.state.mean.iter().map(|&x| Some(x)));
        row.extend([Some(r.state.cov.trace()), r.innovation_norm]);
        table.push(row);
    }
    Ok(table)
}

fn baldwin_trace(cfg: &ExperimentConfig, exec: Execution) -> Result<Table, HarnessError> {
    let mut b = required(&cfg.baldwin, "baldwin config")?.clone();
    if let Some(s) = cfg.seed {
        b.seed = s;
    }
    input(b.validate())?;
    let result = numeric(baldwin_experiment(&b, exec))?;
    let mut table = Table::new(BaldwinRow::HEADER.iter().map(|s| s.to_string()).collect());
    for r in &result.rows {
        table.push_values(&r.values());
    }
    Ok(table)
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().collect::<Vec<_>>())
}

fn decompose(cfg: &ExperimentConfig) -> Result<Value, HarnessError> {
    let pop = input(Population::try_from(required(&cfg.population, "population")?))?;
    let price = price_update(&pop);
    let fmb = fmb_decompose(&pop);
    let err = (&price.delta_mean - fmb.reconstruct()).amax();
    if !err.is_finite() || fmb.metric.iter().any(|x| !x.is_finite()) {
        return Err(HarnessError::Numerical(FmbError::NonFinite("decomposition".into())));
    }
    Ok(json!({
        "price": {
            "delta_mean": vec_json(&price.delta_mean),
            "selection": vec_json(&price.selection),
            "transmission": vec_json(&price.transmission),
        },
        "fmb": FmbRecord::from(&fmb),
        "reconstruction_error": err,
        "metric_rank_deficient": min_eigenvalue(&fmb.metric) <= 1e-12 * max_eigenvalue(&fmb.metric).max(1e-300),
    }))
}

fn diverge(cfg: &ExperimentConfig) -> Result<Value, HarnessError> {
    let pair = input(DistributionPair::try_from(required(&cfg.pair, "distribution pair")?))?;
    let report = numeric(divergence_report(&pair))?;
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Output(format!("cannot write {}: {e}", path.display())))
}

/// Validate, run, and write the artifact and its manifest when an output path is set.
/// A verification report with failures is written first, then returned as an error.
pub fn run_once(cfg: &ExperimentConfig, command: Command, exec: Execution) -> Result<RunSummary, HarnessError> {
    cfg.validate(command)?;
    let start = Instant::now();
    let artifact = execute(cfg, command, exec)?;
    let wall = start.elapsed().as_secs_f64();
    let text = artifact.render(cfg.format_or_default());
    let sha = sha256_hex(text.as_bytes());
    if let Some(path) = &cfg.output {
        write_file(path, &text)?;
        let manifest = json!({
            "command": command.id(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "wall_time_seconds": wall,
            "trace_sha256": sha,
            "rows": artifact.rows(),
            "path": path.display().to_string(),
            "config": serde_json::to_value(cfg).expect("config serializes"),
        });
        let mut m = serde_json::to_string_pretty(&manifest).expect("json");
        m.push('\n');
        write_file(&manifest_path(path), &m)?;
    }
    if let Artifact::Record(v) = &artifact {
        if v.get("passed") == Some(&Value::Bool(false)) {
            let failed = v["checks"]
                .as_array()
                .into_iter()
                .flatten()
                .filter(|c| c["passed"] == Value::Bool(false))
                .map(|c| c["name"].as_str().unwrap_or("?").to_string())
                .collect();
            return Err(HarnessError::Verification(failed));
        }
    }
    Ok(RunSummary {
        command,
        seed: cfg.seed,
        path: cfg.output.clone(),
        sha256: sha,
        rows: artifact.rows(),
        wall_time_seconds: wall,
        text,
        artifact,
    })
}

/// Run once, or once per seed in `replicates` with the seed spliced into the output file
/// name. Replicates run concurrently under [`Execution::Parallel`]; each writes its own
/// files, so the outputs do not depend on the mode.
pub fn run_command(
    cfg: &ExperimentConfig,
    command: Command,
    replicates: Option<&[u64]>,
    exec: Execution,
) -> Result<Vec<RunSummary>, HarnessError> {
    let Some(seeds) = replicates else {
        return run_once(cfg, command, exec).map(|s| vec![s]);
    };
    if seeds.is_empty() {
        return Err(HarnessError::Config(vec!["--replicates needs at least one seed".into()]));
    }
    let mut distinct = seeds.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != seeds.len() {
        return Err(HarnessError::Config(vec!["--replicates lists a seed twice".into()]));
    }
    let configs: Vec<ExperimentConfig> = seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seed = Some(s);
            c.output = cfg.output.as_deref().map(|p| replicate_path(p, s));
            c
        })
        .collect();
    for c in &configs {
        c.validate(command)?;
    }
    exec.map(&configs, |c| run_once(c, command, Execution::Sequential)).into_iter().collect()
}
