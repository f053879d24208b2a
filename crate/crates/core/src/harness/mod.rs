//! Experiment harness: config parsing, trace output, runs with manifests, and
//! self-verification. The `fmb` binary is a thin shell over this module.

pub mod config;
pub mod output;
pub mod runner;
pub mod verify;

pub use config::{load_config, parse_config, Command, ExperimentConfig, OutputFormat, Syntax};
pub use output::{format_f64, Table};
pub use runner::{execute, replicate_path, run_command, Artifact, RunSummary};
pub use verify::{verify_all, Check, VerifyReport};

use crate::error::FmbError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0}")]
    Numerical(FmbError),
    #[error("output failed: {0}")]
    Output(String),
    #[error("verification failed: {}", .0.join("; "))]
    Verification(Vec<String>),
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Numerical(e) => e.kind(),
            HarnessError::Output(_) => "output",
            HarnessError::Verification(_) => "verification",
        }
    }

    /// Process exit status: 1 for bad input, 2 for failures while running, 3 when a
    /// self-check fails.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Numerical(_) | HarnessError::Output(_) => 2,
            HarnessError::Verification(_) => 3,
        }
    }

    /// `{"error": kind, "exit_code": n, "message": text}` on one line.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_lines_are_single_line_json() {
        let e = HarnessError::Config(vec!["a\nb".into(), "c".into()]);
        let line = e.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["exit_code"], 1);
        assert_eq!(HarnessError::Numerical(FmbError::NonFinite("x".into())).exit_code(), 2);
        assert_eq!(HarnessError::Verification(vec![]).exit_code(), 3);
    }
}
