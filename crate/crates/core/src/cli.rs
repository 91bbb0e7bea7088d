//! Command-line entry points wiring configs, problems, schedules, and the
//! harness together.
//!
//! Exit codes: `0` success (or certified stop), `1` configuration/usage
//! error, `2` certify hit its iteration cap, `3` a statistical or numeric
//! check failed (report still written).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::confseq::{
    boundary_dominance_violations, verify_appendix_lemmas, ConfidenceConfig, ALPHA_SUP,
};
use crate::engine::{fmt_f64, Trace};
use crate::harness::{coverage_experiment, lower_bound_demo, CoverageReport, CoverageSpec};
use crate::problems::trajectory_rng;
use crate::schedules::StepSchedule;
use crate::stopping::{k_alpha, run_until_certified, CertifyOutcome, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CAP: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "anytime-sgd",
    version,
    about = "Projected SGD with anytime-valid suboptimality certificates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed for the random streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel experiments (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trajectory until the boundary certifies epsilon-optimality.
    Certify {
        /// Target accuracy for the certificate.
        #[arg(long)]
        epsilon: f64,
        /// Override the config's confidence level.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the config's iteration cap.
        #[arg(long = "t-cap")]
        t_cap: Option<u64>,
        /// Write the (strided) trajectory trace CSV here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Write the certificate summary JSON here.
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Monte Carlo validation of the coverage / crossing / stopping
    /// guarantees over many seeded trajectories.
    Coverage {
        #[arg(long, default_value_t = 500)]
        runs: u32,
        #[arg(long, default_value_t = 10_000)]
        horizon: u64,
        /// Stopping target; default is 2 K_alpha / S_horizon.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Override the config's confidence level.
        #[arg(long)]
        alpha: Option<f64>,
        /// Write the aggregated report JSON here.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Write a per-run CSV here.
        #[arg(long)]
        per_run_out: Option<PathBuf>,
        /// Self-test knob: multiply the boundaries by this factor before the
        /// violation comparisons (1.0 = real experiment).
        #[arg(long, default_value_t = 1.0)]
        boundary_scale: f64,
    },
    /// Numeric sweeps of the supporting inequalities (exit 0 iff clean).
    VerifyLemmas {
        /// Confidence levels to sweep, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.05, 0.1, 0.5])]
        alpha: Vec<f64>,
        /// Polynomial decays to sweep, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.6, 0.75, 0.9])]
        gamma: Vec<f64>,
        /// Largest iteration for the cumulative-sum sweeps.
        #[arg(long, default_value_t = 10_000)]
        tmax: u64,
        /// Grid resolution per sweep.
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Deterministic 1-d quadratic showing S_t U_t cannot shrink below A_1.
    DemoLowerBound {
        #[arg(long, default_value_t = 0.5)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        x1: f64,
        #[arg(long, default_value_t = 1.0)]
        eta0: f64,
        #[arg(long, default_value_t = 100_000)]
        tmax: u64,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Record every n-th step into the trace.
        #[arg(long, default_value_t = 1)]
        trace_stride: u64,
    },
}

/// Dispatch a parsed invocation; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        // A failure here means a pool already exists (tests); keep going.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match &cli.command {
        Command::Certify {
            epsilon,
            alpha,
            t_cap,
            trace_out,
            summary_out,
        } => cmd_certify(
            &cli,
            *epsilon,
            *alpha,
            *t_cap,
            trace_out.as_deref(),
            summary_out.as_deref(),
        ),
        Command::Coverage {
            runs,
            horizon,
            epsilon,
            alpha,
            report_out,
            per_run_out,
            boundary_scale,
        } => cmd_coverage(
            &cli,
            *runs,
            *horizon,
            *epsilon,
            *alpha,
            report_out.as_deref(),
            per_run_out.as_deref(),
            *boundary_scale,
        ),
        Command::VerifyLemmas {
            alpha,
            gamma,
            tmax,
            points,
        } => cmd_verify_lemmas(alpha, gamma, *tmax, *points),
        Command::DemoLowerBound {
            mu,
            x1,
            eta0,
            tmax,
            trace_out,
            trace_stride,
        } => cmd_demo_lower_bound(*mu, *x1, *eta0, *tmax, trace_out.as_deref(), *trace_stride),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
    }
}

fn load_experiment(cli: &Cli, alpha_override: Option<f64>) -> Result<Experiment, String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| "--config <file> is required for this command".to_string())?;
    let mut config = ExperimentConfig::from_path(path).map_err(|e| e.to_string())?;
    if let Some(alpha) = alpha_override {
        config.confidence.alpha = alpha;
    }
    config.build().map_err(|e| e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), String> {
    let mut buf = Vec::new();
    trace
        .write_csv(&mut buf)
        .map_err(|e| format!("trace serialization failed: {e}"))?;
    write_file(path, &buf)
}

#[derive(Debug, Serialize)]
struct CertifySummary {
    tau: Option<u64>,
    u_at_tau: f64,
    epsilon: f64,
    alpha: f64,
    f_gap_at_tau: Option<f64>,
    theoretical_bound: Option<f64>,
    cap_reached: bool,
}

fn cmd_certify(
    cli: &Cli,
    epsilon: f64,
    alpha: Option<f64>,
    t_cap: Option<u64>,
    trace_out: Option<&Path>,
    summary_out: Option<&Path>,
) -> Result<i32, String> {
    let exp = load_experiment(cli, alpha)?;
    let t_cap = t_cap.unwrap_or(exp.t_cap);
    let mut rng = trajectory_rng(cli.seed.unwrap_or(0));
    let opts = RunOptions {
        trace_stride: trace_out.map(|_| exp.trace_stride.max(1)),
        with_mixture: trace_out.is_some(),
    };
    let run = run_until_certified(
        &exp.problem,
        &exp.noise,
        &exp.schedule,
        &exp.confidence,
        epsilon,
        &exp.x1,
        &mut rng,
        t_cap,
        &opts,
    )
    .map_err(|e| e.to_string())?;

    if let Some(path) = trace_out {
        write_trace(path, &run.trace)?;
    }

    let (summary, code) = match &run.outcome {
        CertifyOutcome::Certified(cert) => {
            println!(
                "certified: tau={} U_obs={:.6e} <= epsilon={:.6e} (alpha={})",
                cert.tau, cert.u_at_tau, cert.epsilon, cert.alpha
            );
            (
                CertifySummary {
                    tau: Some(cert.tau),
                    u_at_tau: cert.u_at_tau,
                    epsilon: cert.epsilon,
                    alpha: cert.alpha,
                    f_gap_at_tau: cert.f_gap_at_tau,
                    theoretical_bound: cert.theoretical_tau_bound,
                    cap_reached: false,
                },
                EXIT_OK,
            )
        }
        CertifyOutcome::CapReached {
            t_cap,
            final_u_obs,
            ..
        } => {
            println!(
                "cap reached: t_cap={t_cap} U_obs={final_u_obs:.6e} still above epsilon={epsilon:.6e}"
            );
            (
                CertifySummary {
                    tau: None,
                    u_at_tau: *final_u_obs,
                    epsilon,
                    alpha: exp.confidence.alpha(),
                    f_gap_at_tau: None,
                    theoretical_bound: None,
                    cap_reached: true,
                },
                EXIT_CAP,
            )
        }
    };
    if let Some(path) = summary_out {
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| format!("summary serialization failed: {e}"))?;
        write_file(path, json.as_bytes())?;
    }
    Ok(code)
}

/// Default coverage epsilon: `2 K_alpha / S_horizon`, using the noise
/// model's gradient bound when it has one and `sup‖∇f‖` otherwise.
fn default_epsilon(exp: &Experiment, horizon: u64) -> Result<f64, String> {
    let g = exp
        .noise
        .gradient_bound(exp.problem.g_bound())
        .unwrap_or_else(|| exp.problem.g_bound());
    let k = k_alpha(&exp.confidence, g, exp.confidence.v_inf_upper());
    let s_t = exp
        .schedule
        .cumulative(horizon)
        .map_err(|e| e.to_string())?
        .s_t;
    Ok(2.0 * k / s_t)
}

fn write_per_run_csv(path: &Path, report: &CoverageReport) -> Result<(), String> {
    let mut buf = Vec::new();
    let mut emit = |line: String| buf.extend_from_slice(line.as_bytes());
    emit("seed,violated_obs,violated_adaptive,ville_exceeded,tau,u_at_tau,f_gap_at_tau,max_st_uobs\n".to_string());
    for r in &report.per_seed {
        emit(format!(
            "{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.violated_obs as u8,
            r.violated_adaptive as u8,
            r.ville_exceeded as u8,
            r.tau.map(|t| t.to_string()).unwrap_or_default(),
            r.u_at_tau.map(fmt_f64).unwrap_or_default(),
            r.f_gap_at_tau.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.max_st_uobs),
        ));
    }
    write_file(path, &buf)
}

#[allow(clippy::too_many_arguments)]
fn cmd_coverage(
    cli: &Cli,
    runs: u32,
    horizon: u64,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    report_out: Option<&Path>,
    per_run_out: Option<&Path>,
    boundary_scale: f64,
) -> Result<i32, String> {
    let exp = load_experiment(cli, alpha)?;
    if exp.problem.optimum().is_none() {
        return Err("coverage requires a problem with an exact optimum".to_string());
    }
    let epsilon = match epsilon {
        Some(e) => e,
        None => default_epsilon(&exp, horizon)?,
    };
    let spec = CoverageSpec {
        n_runs: runs,
        horizon,
        epsilon,
        base_seed: cli.seed.unwrap_or(0),
        x1: Some(exp.x1.clone()),
        boundary_scale,
    };
    let report = coverage_experiment(
        &exp.problem,
        &exp.noise,
        &exp.schedule,
        &exp.confidence,
        &exp.mixture,
        &spec,
    )
    .map_err(|e| e.to_string())?;

    if let Some(path) = report_out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| format!("report serialization failed: {e}"))?;
        write_file(path, json.as_bytes())?;
    }
    if let Some(path) = per_run_out {
        write_per_run_csv(path, &report)?;
    }

    let margin = report.binomial_margin();
    let n = report.n_runs as f64;
    let frac_obs = report.violations_obs as f64 / n;
    let frac_adapt = report.violations_adaptive as f64 / n;
    let frac_ville = report.ville_exceed as f64 / n;
    let stopped = (report.n_runs - report.capped_runs).max(1) as f64;
    let frac_eps = report.eps_opt_failures as f64 / stopped;
    let checks = [
        ("coverage_obs", frac_obs),
        ("coverage_adaptive", frac_adapt),
        ("ville_crossing", frac_ville),
        ("eps_optimality", frac_eps),
    ];
    let mut failed = false;
    for (name, frac) in checks {
        let ok = frac <= margin;
        failed |= !ok;
        println!(
            "{} {name}: frequency {frac:.4} vs margin {margin:.4}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "runs={} horizon={} epsilon={:.6e} alpha={} stops: mean={:.1} q50={} q90={} q99={} max={}",
        report.n_runs,
        report.horizon,
        report.epsilon,
        report.alpha,
        report.stop_stats.mean,
        report.stop_stats.q50,
        report.stop_stats.q90,
        report.stop_stats.q99,
        report.stop_stats.max
    );
    Ok(if failed { EXIT_CHECK_FAILED } else { EXIT_OK })
}

fn cmd_verify_lemmas(
    alphas: &[f64],
    gammas: &[f64],
    tmax: u64,
    points: usize,
) -> Result<i32, String> {
    for &alpha in alphas {
        if !(alpha.is_finite() && alpha > 0.0 && alpha < ALPHA_SUP) {
            return Err(format!(
                "alpha must lie strictly inside (0, 2/e): got {alpha}"
            ));
        }
    }
    let mut violations = 0usize;

    // Scalar inequality sweeps (log-log domination and explicit threshold).
    let v_grid: Vec<f64> = (0..points)
        .map(|i| {
            let frac = i as f64 / (points.max(2) - 1) as f64;
            1.0 * (1e12f64).powf(frac)
        })
        .collect();
    let report = verify_appendix_lemmas(alphas, &v_grid).map_err(|e| e.to_string())?;
    println!(
        "lemma sweeps: {} points checked, {} violations",
        report.points_checked,
        report.violations.len()
    );
    for v in &report.violations {
        println!("  VIOLATION {:?} alpha={} v={} lhs={} rhs={}", v.lemma, v.alpha, v.v, v.lhs, v.rhs);
    }
    violations += report.violations.len();

    // Cumulative-sum lower bounds along real schedules.
    let mut schedules: Vec<StepSchedule> = Vec::new();
    for &gamma in gammas {
        schedules.push(StepSchedule::polynomial(1.0, gamma).map_err(|e| e.to_string())?);
    }
    schedules.push(StepSchedule::harmonic(1.0).map_err(|e| e.to_string())?);
    for schedule in &schedules {
        let mut acc = crate::schedules::CumulativeAccumulator::new();
        let v_inf = schedule
            .v_infinity_upper(1e-10)
            .map_err(|e| e.to_string())?;
        let mut bad = 0usize;
        for t in 1..=tmax {
            acc.push(schedule.eta(t).map_err(|e| e.to_string())?);
            let s_t = acc.s_t();
            let lb = schedule.s_lower_bound(t).map_err(|e| e.to_string())?;
            if lb > s_t + 1e-12 * (1.0 + s_t) {
                bad += 1;
            }
            if acc.v_t() > v_inf * (1.0 + 1e-12) {
                bad += 1;
            }
        }
        println!("cumulative sweep {schedule:?}: t <= {tmax}, {bad} violations");
        violations += bad;
    }

    // Grid index nonnegativity and boundary dominance per alpha.
    for &alpha in alphas {
        let config = ConfidenceConfig::new(alpha, 1.0, 1.0, 1e6).map_err(|e| e.to_string())?;
        let lo = 2.0 * (config.l_alpha() + 1.0);
        let hi = config.sigma_inf_eff2();
        let mut bad = 0usize;
        for i in 0..points {
            let frac = i as f64 / (points.max(2) - 1) as f64;
            let v = lo * (hi / lo).powf(frac);
            if config.grid_index(v).is_err() {
                bad += 1;
            }
        }
        let dominance = boundary_dominance_violations(&config, points, 200);
        println!(
            "alpha={alpha}: grid-index violations {bad}, dominance violations {}",
            dominance.len()
        );
        violations += bad + dominance.len();
    }

    if violations == 0 {
        println!("all sweeps clean");
        Ok(EXIT_OK)
    } else {
        println!("{violations} total violations");
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_demo_lower_bound(
    mu: f64,
    x1: f64,
    eta0: f64,
    tmax: u64,
    trace_out: Option<&Path>,
    trace_stride: u64,
) -> Result<i32, String> {
    let schedule = StepSchedule::harmonic(eta0).map_err(|e| e.to_string())?;
    let stride = trace_out.map(|_| trace_stride.max(1));
    let (report, trace) =
        lower_bound_demo(mu, x1, &schedule, tmax, stride).map_err(|e| e.to_string())?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "A_1 = {}", report.a_1);
    let _ = writeln!(out, "min_t S_t*U_obs = {}", report.min_st_uobs);
    let _ = writeln!(out, "min slack = {}", report.min_slack);
    let _ = writeln!(
        out,
        "steps = {}, monotone = {}, violations = {}",
        report.steps, report.monotone, report.violations
    );
    if let Some(path) = trace_out {
        write_trace(path, &trace)?;
    }
    Ok(if report.violations == 0 && report.monotone {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}
