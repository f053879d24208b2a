use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bayes::{Ascent, DiscreteModelRecord, FamilyKind};
use crate::filters::{GpRecord, KalmanRecord};
use crate::hierarchy::BaldwinConfig;
use crate::infogeo::PairRecord;
use crate::objectives::ObjectiveSpec;
use crate::optim::OptimizerSpec;
use crate::price::PopulationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Run,
    Es,
    Vb,
    Gp,
    Kalman,
    Baldwin,
    Decompose,
    Diverge,
    Verify,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Run,
        Command::Es,
        Command::Vb,
        Command::Gp,
        Command::Kalman,
        Command::Baldwin,
        Command::Decompose,
        Command::Diverge,
        Command::Verify,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Es => "es",
            Command::Vb => "vb",
            Command::Gp => "gp",
            Command::Kalman => "kalman",
            Command::Baldwin => "baldwin",
            Command::Decompose => "decompose",
            Command::Diverge => "diverge",
            Command::Verify => "verify",
        }
    }

    /// Config section holding this command's input, for commands that take a bare
    /// record as their whole input file.
    fn section(self) -> Option<&'static str> {
        match self {
            Command::Gp => Some("gp"),
            Command::Kalman => Some("kalman"),
            Command::Baldwin => Some("baldwin"),
            Command::Decompose => Some("population"),
            Command::Diverge => Some("pair"),
            Command::Vb => Some("vb"),
            _ => None,
        }
    }

    /// Whether the command writes a trace table (as opposed to a single record).
    pub fn writes_trace(self) -> bool {
        !matches!(self, Command::Decompose | Command::Diverge | Command::Verify)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsSection {
    pub pop_size: usize,
    pub generations: usize,
    pub sigma: f64,
    pub init_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_mu: Option<f64>,
}

fn default_vb_steps() -> usize {
    200
}

fn default_vb_rate() -> f64 {
    1.0
}

fn default_family() -> FamilyKind {
    FamilyKind::Saturated
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VbSection {
    pub model: DiscreteModelRecord,
    #[serde(default = "default_family")]
    pub family: FamilyKind,
    #[serde(default = "default_vb_steps")]
    pub steps: usize,
    #[serde(default = "default_vb_rate")]
    pub rate: f64,
    #[serde(default)]
    pub ascent: Ascent,
}

/// One experiment. Only the sections the command uses need to be present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Starting parameters; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub es: Option<EsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vb: Option<VbSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kalman: Option<KalmanRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baldwin: Option<BaldwinConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Syntax {
    Toml,
    Json,
}

impl Syntax {
    pub fn from_path(path: &Path) -> Result<Syntax, HarnessError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("toml") => Ok(Syntax::Toml),
            Some("json") => Ok(Syntax::Json),
            _ => Err(HarnessError::Config(vec![format!(
                "cannot tell the format of {}: use a .toml or .json extension",
                path.display()
            )])),
        }
    }
}

fn parse_value(text: &str, syntax: Syntax) -> Result<serde_json::Value, HarnessError> {
    match syntax {
        Syntax::Json => serde_json::from_str(text).map_err(|e| HarnessError::Config(vec![e.to_string()])),
        Syntax::Toml => toml::from_str(text).map_err(|e| HarnessError::Config(vec![e.to_string().trim().to_string()])),
    }
}

/// Parse a config document. For commands whose input is a single record (a population,
/// a distribution pair, a GP or filtering problem, a Baldwin config, a VB model), the
/// bare record is accepted in place of a full config.
pub fn parse_config(text: &str, syntax: Syntax, command: Option<Command>) -> Result<ExperimentConfig, HarnessError> {
    let mut value = parse_value(text, syntax)?;
    if let (Some(cmd), Some(obj)) = (command, value.as_object()) {
        if let Some(section) = cmd.section() {
            let bare = !obj.contains_key(section) && !obj.contains_key("command");
            if bare && cmd == Command::Vb {
                if obj.contains_key("prior") {
                    value = serde_json::json!({ "vb": { "model": value } });
                }
            } else if bare && cmd == Command::Baldwin {
                let seed = obj.get("seed").cloned();
                value = serde_json::json!({ "baldwin": value });
                if let Some(s) = seed {
                    value["seed"] = s;
                }
            } else if bare {
                value = serde_json::json!({ section: value });
            }
        }
    }
    serde_json::from_value(value).map_err(|e| HarnessError::Config(vec![e.to_string()]))
}

pub fn load_config(path: &Path, command: Option<Command>) -> Result<ExperimentConfig, HarnessError> {
    let syntax = Syntax::from_path(path)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config(&text, syntax, command)
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn format_or_default(&self) -> OutputFormat {
        self.format.unwrap_or_default()
    }

    /// Whether a run of `command` under this config consumes random numbers.
    pub fn is_stochastic(&self, command: Command) -> bool {
        match command {
            Command::Run => self.optimizer.as_ref().is_some_and(OptimizerSpec::is_stochastic),
            Command::Es | Command::Baldwin => true,
            Command::Kalman => self.kalman.as_ref().is_some_and(KalmanRecord::is_simulated),
            _ => false,
        }
    }

    /// Every problem with this config for `command`, without stopping at the first.
    pub fn violations(&self, command: Command) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(c) = self.command {
            if c != command {
                v.push(format!("config is for `{}` but `{}` was requested", c.id(), command.id()));
            }
        }
        let mut need = |present: bool, what: &str| {
            if !present {
                v.push(format!("`{}` needs {what}", command.id()));
            }
        };
        match command {
            Command::Run => {
                need(self.objective.is_some(), "an objective");
                need(self.optimizer.is_some(), "an optimizer");
                need(self.steps.is_some(), "steps");
            }
            Command::Es => {
                need(self.objective.is_some(), "an objective");
                need(self.es.is_some(), "an es section");
            }
            Command::Vb => need(self.vb.is_some(), "a vb section or a model"),
            Command::Gp => need(self.gp.is_some(), "a gp problem"),
            Command::Kalman => need(self.kalman.is_some(), "a kalman problem"),
            Command::Baldwin => need(self.baldwin.is_some(), "a baldwin config"),
            Command::Decompose => need(self.population.is_some(), "a population"),
            Command::Diverge => need(self.pair.is_some(), "a distribution pair"),
            Command::Verify => {}
        }
        if let Some(o) = &self.optimizer {
            v.extend(o.violations());
        }
        if let Some(es) = &self.es {
            if es.pop_size < 2 {
                v.push(format!("es.pop_size must be at least 2, got {}", es.pop_size));
            }
            if !(es.sigma > 0.0 && es.sigma.is_finite()) {
                v.push(format!("es.sigma must be positive, got {}", es.sigma));
            }
            if let Some(c) = es.c_mu {
                if !(0.0..=1.0).contains(&c) {
                    v.push(format!("es.c_mu must lie in [0, 1], got {c}"));
                }
            }
        }
        if let Some(vb) = &self.vb {
            if !(vb.rate > 0.0 && vb.rate.is_finite()) {
                v.push(format!("vb.rate must be positive, got {}", vb.rate));
            }
        }
        if let Some(b) = &self.baldwin {
            v.extend(b.violations().into_iter().map(|m| format!("baldwin.{m}")));
        }
        if let Some(k) = &self.kalman {
            if k.is_simulated() && k.steps.is_none() {
                v.push("kalman needs observations or steps".into());
            }
        }
        if command.writes_trace() && self.output.is_none() {
            v.push("an output path is required (--out or `output`)".into());
        }
        if matches!(command, Command::Decompose | Command::Diverge) && self.format == Some(OutputFormat::Csv) {
            v.push(format!("`{}` writes JSON only", command.id()));
        }
        if self.is_stochastic(command) && self.seed.is_none() {
            v.push("a seed is required for stochastic runs (--seed or `seed`)".into());
        }
        v
    }

    pub fn validate(&self, command: Command) -> Result<(), HarnessError> {
        let v = self.violations(command);
        if v.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(v))
        }
    }
}
