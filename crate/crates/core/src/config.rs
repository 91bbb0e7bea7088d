//! Experiment configuration files: strict-schema JSON wiring a problem, a
//! noise model, a stepsize schedule, and the confidence parameters into the
//! runnable objects.
//!
//! Unknown keys are rejected with the offending path, and cross-field
//! constraints (confidence-level domain, schedule parameter domains,
//! feasibility of the start point) are validated when the config is turned
//! into an [`Experiment`]. A typo in `alpha` or `gamma` silently changing
//! the statistical claim is exactly what this layer exists to prevent.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confseq::{ConfSeqError, ConfidenceConfig, MixtureConfig};
use crate::problems::{make_quadratic, ConvexProblem, NoiseModel, ProblemError, Region};
use crate::schedules::{ScheduleError, StepSchedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported problem kind {0:?} (expected \"quadratic\")")]
    UnknownProblem(String),
    #[error("field {field} has {got} entries but dim = {dim}")]
    DimensionMismatch {
        field: &'static str,
        dim: usize,
        got: usize,
    },
    #[error("x1 is infeasible for the configured region")]
    InfeasibleStart,
    #[error("confidence computations need a positive noise proxy; gaussian sigma must be > 0")]
    ZeroNoiseProxy,
    #[error("alpha must lie strictly inside (0, 2/e): {0}")]
    Alpha(ConfSeqError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    ConfSeq(ConfSeqError),
}

/// Confidence block: level plus numerical knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceBlock {
    pub alpha: f64,
    #[serde(default = "default_kmax")]
    pub mixture_kmax: usize,
    #[serde(default = "default_v_inf_rel_tol")]
    pub v_inf_rel_tol: f64,
}

fn default_kmax() -> usize {
    200
}

fn default_v_inf_rel_tol() -> f64 {
    1e-10
}

/// Run block: start point and loop controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    /// Start point; omitted means the projection of the origin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x1: Option<Vec<f64>>,
    /// Safety cap on the number of iterations.
    pub t_cap: u64,
    /// Record every `trace_stride`-th step when tracing.
    pub trace_stride: u64,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            x1: None,
            t_cap: 100_000,
            trace_stride: 1,
        }
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Problem family; only `"quadratic"` is defined.
    pub problem: String,
    pub dim: usize,
    /// Curvatures μ_i of the separable quadratic.
    pub mu: Vec<f64>,
    /// Anchor (= exact minimizer, must be feasible).
    pub anchor: Vec<f64>,
    pub region: Region,
    pub noise: NoiseModel,
    pub schedule: StepSchedule,
    pub confidence: ConfidenceBlock,
    #[serde(default)]
    pub run: RunBlock,
}

/// Fully constructed runnable experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: ConvexProblem,
    pub noise: NoiseModel,
    pub schedule: StepSchedule,
    pub confidence: ConfidenceConfig,
    pub mixture: MixtureConfig,
    pub x1: Vec<f64>,
    pub t_cap: u64,
    pub trace_stride: u64,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Validate all cross-field constraints and build the runnable pieces.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        if self.problem != "quadratic" {
            return Err(ConfigError::UnknownProblem(self.problem.clone()));
        }
        for (field, len) in [("mu", self.mu.len()), ("anchor", self.anchor.len())] {
            if len != self.dim {
                return Err(ConfigError::DimensionMismatch {
                    field,
                    dim: self.dim,
                    got: len,
                });
            }
        }
        if self.region.dim() != self.dim {
            return Err(ConfigError::DimensionMismatch {
                field: "region",
                dim: self.dim,
                got: self.region.dim(),
            });
        }
        self.noise.validate()?;
        self.schedule.validate()?;
        let problem = make_quadratic(&self.mu, &self.anchor, self.region.clone())?;

        let sigma2 = self.noise.sigma2_proxy(problem.g_bound());
        if sigma2 <= 0.0 {
            return Err(ConfigError::ZeroNoiseProxy);
        }
        let v_inf_upper = self.schedule.v_infinity_upper(self.confidence.v_inf_rel_tol)?;
        let confidence =
            ConfidenceConfig::new(self.confidence.alpha, sigma2, problem.r_x2(), v_inf_upper)
                .map_err(|e| match e {
                    ConfSeqError::AlphaOutOfRange(_) => ConfigError::Alpha(e),
                    other => ConfigError::ConfSeq(other),
                })?;
        let mixture = MixtureConfig::new(&confidence, self.confidence.mixture_kmax);

        let x1 = match &self.run.x1 {
            Some(x) => {
                if x.len() != self.dim {
                    return Err(ConfigError::DimensionMismatch {
                        field: "run.x1",
                        dim: self.dim,
                        got: x.len(),
                    });
                }
                if !problem.is_feasible(x) {
                    return Err(ConfigError::InfeasibleStart);
                }
                x.clone()
            }
            None => problem.default_start(),
        };

        Ok(Experiment {
            problem,
            noise: self.noise,
            schedule: self.schedule.clone(),
            confidence,
            mixture,
            x1,
            t_cap: self.run.t_cap,
            trace_stride: self.run.trace_stride,
        })
    }
}
