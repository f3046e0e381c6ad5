//! Evaluation backends: each turns a configuration into a measured metric.

mod shell;
pub mod surrogate;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::paramspace::Configuration;

pub use shell::{shell_eval, ExecTemplate, MetricRule, ShellTarget};
pub use surrogate::{surrogate_eval, surrogate_truth, SurrogateSpec, SurrogateTarget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Shell,
    Surrogate,
    Imported,
}

/// A measured metric, or the reason no metric was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Metric(f64),
    Failure(String),
}

/// One row of the evaluation database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub config: Configuration,
    pub workload_id: String,
    pub outcome: Outcome,
    pub duration_s: f64,
    pub source: Source,
    pub timestamp: DateTime<Utc>,
}

impl EvaluationRecord {
    /// Builds a record; a non-finite metric is stored as a failure.
    pub fn new(
        config: Configuration,
        workload_id: impl Into<String>,
        metric: Result<f64, String>,
        duration_s: f64,
        source: Source,
    ) -> Self {
        let outcome = match metric {
            Ok(m) if m.is_finite() => Outcome::Metric(m),
            Ok(m) => Outcome::Failure(format!("non-finite metric {m}")),
            Err(reason) => Outcome::Failure(reason),
        };
        Self {
            config,
            workload_id: workload_id.into(),
            outcome,
            duration_s,
            source,
            timestamp: Utc::now(),
        }
    }

    pub fn metric(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Metric(m) => Some(m),
            Outcome::Failure(_) => None,
        }
    }

    pub fn failure(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Metric(_) => None,
            Outcome::Failure(r) => Some(r),
        }
    }
}

/// Something that can measure a configuration.
pub trait Target {
    /// Measures `config`. `iteration` identifies the call within a run and
    /// seeds any randomness. Failures come back as failure records.
    fn evaluate(&mut self, config: &Configuration, iteration: u64) -> EvaluationRecord;

    /// The noise-free metric, when the target knows it.
    fn true_metric(&self, _config: &Configuration) -> Option<f64> {
        None
    }
}

/// Mixes a run seed and an iteration counter into an independent stream seed.
pub fn derive_seed(run_seed: u64, iteration: u64) -> u64 {
    splitmix64(splitmix64(run_seed) ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
