//! Projected stochastic gradient descent with anytime-valid suboptimality
//! certificates.
//!
//! The library runs the classical projected SGD recursion on compact convex
//! problems while maintaining a time-uniform upper confidence sequence on
//! the weighted average suboptimality
//! `F̄_t = Σ η_s (f(x_s) - f*) / S_t`. Because the sequence is valid
//! simultaneously over all times, `inf{t : U_t ≤ ε}` is a legitimate
//! stopping rule: the averaged iterate it returns is ε-optimal with
//! probability at least `1 - α`, under arbitrary monitoring.
//!
//! Module map:
//!
//! - [`schedules`]: stepsize laws with exact cumulative sums and certified
//!   tail bounds;
//! - [`problems`]: quadratic test problems, projections, noise oracles;
//! - [`engine`]: the recursion and its accumulators;
//! - [`confseq`]: the confidence boundaries, their constants, and the
//!   mixture-supermartingale diagnostics;
//! - [`stopping`]: the certified stopping rule and complexity bounds;
//! - [`harness`]: Monte Carlo validation of every probabilistic guarantee;
//! - [`config`] / [`cli`]: file format and command-line interface.
//!
//! ```
//! use anytime_sgd::{make_quadratic, run_until_certified, ConfidenceConfig,
//!                   NoiseModel, Region, StepSchedule};
//! use anytime_sgd::problems::trajectory_rng;
//! use anytime_sgd::stopping::{CertifyOutcome, RunOptions};
//!
//! let problem = make_quadratic(
//!     &[1.0, 1.0],
//!     &[0.0, 0.0],
//!     Region::Ball { center: vec![0.0, 0.0], radius: 1.0 },
//! )?;
//! let noise = NoiseModel::Gaussian { sigma: 1.0 };
//! let schedule = StepSchedule::harmonic(1.0)?;
//! let config = ConfidenceConfig::new(
//!     0.1,
//!     noise.sigma2_proxy(problem.g_bound()),
//!     problem.r_x2(),
//!     schedule.v_infinity_upper(1e-10)?,
//! )?;
//! let mut rng = trajectory_rng(7);
//! let run = run_until_certified(
//!     &problem, &noise, &schedule, &config,
//!     15.0, &[0.6, 0.0], &mut rng, 100_000, &RunOptions::default(),
//! )?;
//! match run.outcome {
//!     CertifyOutcome::Certified(cert) => {
//!         assert!(cert.u_at_tau <= 15.0);
//!         assert_eq!(cert.x_bar_tau.len(), 2);
//!     }
//!     CertifyOutcome::CapReached { .. } => unreachable!("epsilon is generous"),
//! }
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod cli;
pub mod config;
pub mod confseq;
pub mod engine;
pub mod harness;
pub mod numeric;
pub mod problems;
pub mod schedules;
pub mod stopping;

pub use config::{Experiment, ExperimentConfig};
pub use confseq::{ConfidenceConfig, MixtureConfig};
pub use engine::{init_run, sgd_step, RunState};
pub use harness::{coverage_experiment, CoverageReport, CoverageSpec};
pub use problems::{make_quadratic, ConvexProblem, NoiseModel, Region};
pub use schedules::StepSchedule;
pub use stopping::{k_alpha, run_until_certified, StopCertificate};
