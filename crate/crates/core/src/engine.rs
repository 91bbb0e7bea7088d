//! The projected SGD recursion `x_{t+1} = Π_X(x_t - η_t g_t)` with
//! incremental maintenance of every cumulative statistic the confidence
//! sequence and the diagnostics consume.
//!
//! Observable accumulators (always available):
//!
//! - `S_t = Σ η_s`, `V_t = Σ η_s²`,
//! - `Σ η_s² ‖g_s‖²` (the squared-gradient-step mass),
//! - `Σ η_s x_s` (numerator of the weighted average iterate).
//!
//! Oracle accumulators, maintained only when the problem carries an exact
//! optimum `(x*, f*)`:
//!
//! - the squared-distance process `Z_t = ‖x_t - x*‖²`,
//! - the cumulative weighted gap `Σ η_s (f(x_s) - f*)`,
//! - the drift process sum `X̄_t = Σ X_s` with
//!   `X_s = 2η_s(f(x_s) - f*) - (Z_s - Z_{s+1}) - η_s²‖g_s‖²`,
//! - the adaptive variance mass `Σ σ² η_s² Z_s`.
//!
//! All sums are compensated; the telescoping identity
//! `2 Σ η_s gap_s = X̄_t + (Z_1 - Z_{t+1}) + Σ η_s²‖g_s‖²` is required to
//! hold at 1e-9 relative tolerance over 10⁶-step runs and is exercised in
//! the tests.

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

use crate::numeric::CompensatedSum;
use crate::problems::{ConvexProblem, NoiseModel, TrajectoryRng};
use crate::schedules::{ScheduleError, StepSchedule};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("start point is not feasible for the problem region")]
    InfeasibleStart,
    #[error("start point has dimension {got}, problem has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered at iteration {t}; trajectory aborted")]
    NumericalFailure { t: u64 },
    #[error("no steps have been taken yet")]
    EmptyRun,
    #[error("operation requires an exact optimum (oracle mode)")]
    OracleUnavailable,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Oracle-side state, present when `(x*, f*)` is known exactly.
#[derive(Debug, Clone)]
pub struct OracleState {
    z_1: f64,
    z_curr: f64,
    cum_weighted_gap: CompensatedSum,
    xbar_sum: CompensatedSum,
    sigma2_sum: CompensatedSum,
}

impl OracleState {
    /// `Z_1 = ‖x_1 - x*‖²`.
    pub fn z_1(&self) -> f64 {
        self.z_1
    }

    /// Squared distance of the current iterate to the optimum.
    pub fn z_curr(&self) -> f64 {
        self.z_curr
    }

    /// `Σ_{s≤t} η_s (f(x_s) - f*)`.
    pub fn cum_weighted_gap(&self) -> f64 {
        self.cum_weighted_gap.value()
    }

    /// `X̄_t = Σ_{s≤t} X_s`.
    pub fn xbar_sum(&self) -> f64 {
        self.xbar_sum.value()
    }

    /// `Σ_{s≤t} σ² η_s² Z_s`.
    pub fn sigma2_sum(&self) -> f64 {
        self.sigma2_sum.value()
    }
}

/// Mutable per-trajectory state of the recursion.
#[derive(Debug, Clone)]
pub struct RunState {
    t: u64,
    x: Vec<f64>,
    weighted_sum_x: Vec<CompensatedSum>,
    s_t: CompensatedSum,
    v_t: CompensatedSum,
    sum_eta2_g2: CompensatedSum,
    oracle: Option<OracleState>,
    grad_buf: Vec<f64>,
    noise_buf: Vec<f64>,
}

/// Everything observed during one step, for tracing and diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub t: u64,
    pub eta: f64,
    pub g_norm2: f64,
    pub s_t: f64,
    pub v_t: f64,
    pub sum_eta2_g2: f64,
    pub oracle: Option<OracleStepRecord>,
}

/// Oracle quantities attached to a step.
#[derive(Debug, Clone, Copy)]
pub struct OracleStepRecord {
    /// `f(x_t) - f*` at the pre-step iterate.
    pub f_gap: f64,
    /// Drift increment `X_t`.
    pub x_t: f64,
    /// `Z_{t+1}` after projection.
    pub z_next: f64,
    /// `F̄_t`, the weighted average suboptimality.
    pub f_bar: f64,
    /// Running `X̄_t`.
    pub xbar_sum: f64,
    /// Running `Σ σ² η_s² Z_s`.
    pub sigma2_sum: f64,
}

/// Start a trajectory at the feasible point `x1`. Accumulators are zero;
/// the first call to [`sgd_step`] performs iteration `t = 1`.
pub fn init_run(problem: &ConvexProblem, x1: &[f64]) -> Result<RunState, EngineError> {
    if x1.len() != problem.dim() {
        return Err(EngineError::DimensionMismatch {
            expected: problem.dim(),
            got: x1.len(),
        });
    }
    if !problem.is_feasible(x1) {
        return Err(EngineError::InfeasibleStart);
    }
    let oracle = problem.optimum().map(|opt| {
        let z = squared_dist(x1, &opt.x_star);
        OracleState {
            z_1: z,
            z_curr: z,
            cum_weighted_gap: CompensatedSum::new(),
            xbar_sum: CompensatedSum::new(),
            sigma2_sum: CompensatedSum::new(),
        }
    });
    Ok(RunState {
        t: 0,
        x: x1.to_vec(),
        weighted_sum_x: vec![CompensatedSum::new(); x1.len()],
        s_t: CompensatedSum::new(),
        v_t: CompensatedSum::new(),
        sum_eta2_g2: CompensatedSum::new(),
        oracle,
        grad_buf: vec![0.0; x1.len()],
        noise_buf: vec![0.0; x1.len()],
    })
}

fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}

impl RunState {
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn s_t(&self) -> f64 {
        self.s_t.value()
    }

    pub fn v_t(&self) -> f64 {
        self.v_t.value()
    }

    pub fn sum_eta2_g2(&self) -> f64 {
        self.sum_eta2_g2.value()
    }

    pub fn oracle(&self) -> Option<&OracleState> {
        self.oracle.as_ref()
    }
}

/// Advance one iteration: draw `g_t`, move, project, update accumulators.
pub fn sgd_step(
    state: &mut RunState,
    problem: &ConvexProblem,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    rng: &mut TrajectoryRng,
) -> Result<StepRecord, EngineError> {
    let t = state.t + 1;
    let eta = schedule.eta(t)?;

    // Gradient draw at the current iterate.
    problem.gradient_into(&state.x, &mut state.grad_buf);
    noise.sample_into(rng, &mut state.noise_buf);
    let mut g_norm2 = 0.0;
    for (g, n) in state.grad_buf.iter_mut().zip(&state.noise_buf) {
        *g += n;
        g_norm2 += *g * *g;
    }

    let weighted_step = eta * eta * g_norm2;
    if !g_norm2.is_finite() || !weighted_step.is_finite() {
        return Err(EngineError::NumericalFailure { t });
    }

    // Oracle values at the pre-step iterate.
    let oracle_pre = if state.oracle.is_some() {
        let opt = problem.optimum().expect("oracle state implies optimum");
        let f_gap = problem.objective(&state.x) - opt.f_star;
        if !f_gap.is_finite() {
            return Err(EngineError::NumericalFailure { t });
        }
        Some(f_gap)
    } else {
        None
    };

    // Contribution of x_t to the weighted iterate before moving.
    for (acc, &xi) in state.weighted_sum_x.iter_mut().zip(&state.x) {
        acc.add(eta * xi);
    }

    // Move and project.
    for (xi, g) in state.x.iter_mut().zip(&state.grad_buf) {
        *xi -= eta * g;
    }
    let projected = problem
        .project(&state.x)
        .map_err(|_| EngineError::NumericalFailure { t })?;
    state.x.copy_from_slice(&projected);
    if state.x.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::NumericalFailure { t });
    }

    state.s_t.add(eta);
    state.v_t.add(eta * eta);
    state.sum_eta2_g2.add(weighted_step);

    let oracle_record = if let Some(f_gap) = oracle_pre {
        let opt = problem.optimum().expect("oracle state implies optimum");
        let z_next = squared_dist(&state.x, &opt.x_star);
        let oracle = state.oracle.as_mut().expect("oracle state present");
        let z_t = oracle.z_curr;
        let x_incr = 2.0 * eta * f_gap - (z_t - z_next) - weighted_step;
        oracle.cum_weighted_gap.add(eta * f_gap);
        oracle.xbar_sum.add(x_incr);
        oracle
            .sigma2_sum
            .add(noise.sigma2_proxy(problem.g_bound()) * eta * eta * z_t);
        oracle.z_curr = z_next;
        Some(OracleStepRecord {
            f_gap,
            x_t: x_incr,
            z_next,
            f_bar: oracle.cum_weighted_gap.value() / state.s_t.value(),
            xbar_sum: oracle.xbar_sum.value(),
            sigma2_sum: oracle.sigma2_sum.value(),
        })
    } else {
        None
    };

    state.t = t;

    Ok(StepRecord {
        t,
        eta,
        g_norm2,
        s_t: state.s_t.value(),
        v_t: state.v_t.value(),
        sum_eta2_g2: state.sum_eta2_g2.value(),
        oracle: oracle_record,
    })
}

/// Weighted average iterate `x̄_t = (Σ η_s x_s) / S_t`; feasible because it
/// is a convex combination of feasible points.
pub fn averaged_iterate(state: &RunState) -> Result<Vec<f64>, EngineError> {
    if state.t == 0 {
        return Err(EngineError::EmptyRun);
    }
    let s = state.s_t.value();
    Ok(state.weighted_sum_x.iter().map(|c| c.value() / s).collect())
}

/// `F̄_t = (Σ η_s (f(x_s) - f*)) / S_t`. Oracle mode only.
pub fn weighted_suboptimality(state: &RunState) -> Result<f64, EngineError> {
    let oracle = state.oracle.as_ref().ok_or(EngineError::OracleUnavailable)?;
    if state.t == 0 {
        return Err(EngineError::EmptyRun);
    }
    Ok(oracle.cum_weighted_gap() / state.s_t.value())
}

/// One recorded trace line.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub eta: f64,
    pub s_t: f64,
    pub v_t: f64,
    pub g_norm2: f64,
    pub sum_eta2_g2: f64,
    pub u_obs: f64,
    pub f_bar: Option<f64>,
    pub z: Option<f64>,
    pub x_bar: Option<f64>,
    pub log_mixture: Option<f64>,
}

/// A (possibly thinned) per-iteration record of a trajectory.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "t,eta_t,S_t,V_t,g_norm2,sum_eta2_g2,U_obs,F_bar,Z_t,X_bar,log_mixture";

/// Render an f64 with 17 significant digits so the value round-trips
/// losslessly through the CSV.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                fmt_f64(r.eta),
                fmt_f64(r.s_t),
                fmt_f64(r.v_t),
                fmt_f64(r.g_norm2),
                fmt_f64(r.sum_eta2_g2),
                fmt_f64(r.u_obs),
                fmt_opt(r.f_bar),
                fmt_opt(r.z),
                fmt_opt(r.x_bar),
                fmt_opt(r.log_mixture),
            )?;
        }
        Ok(())
    }
}

/// Fixed-capacity buffer holding the most recent trace rows, used to attach
/// a tail to cap-reached reports without recording whole trajectories.
#[derive(Debug, Clone)]
pub struct TailBuffer {
    cap: usize,
    rows: VecDeque<TraceRow>,
}

impl TailBuffer {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            rows: VecDeque::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        if self.rows.len() == self.cap {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
    }

    pub fn into_rows(self) -> Vec<TraceRow> {
        self.rows.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, trajectory_rng, Region};
    use crate::schedules::StepSchedule;

    fn quadratic_1d() -> ConvexProblem {
        make_quadratic(
            &[0.5],
            &[0.0],
            Region::Box {
                lo: vec![-2.0],
                hi: vec![2.0],
            },
        )
        .unwrap()
    }

    #[test]
    fn hand_recursion_first_step() {
        // mu = 0.5, eta_1 = 0.1, x_1 = 1, zero noise:
        // g = 0.5, x_2 = 0.95, X_1 = 0.05 - 0.0975 - 0.0025 = -0.05.
        let problem = quadratic_1d();
        let schedule = StepSchedule::harmonic(0.1).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.0 };
        let mut rng = trajectory_rng(0);
        let mut state = init_run(&problem, &[1.0]).unwrap();
        let rec = sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
        assert_eq!(state.x(), &[0.95]);
        let orc = rec.oracle.unwrap();
        assert!((orc.x_t + 0.05).abs() < 1e-15);
        assert!((orc.f_bar - 0.25).abs() < 1e-15);
        assert!((weighted_suboptimality(&state).unwrap() - 0.25).abs() < 1e-15);
        assert!(orc.x_t <= 0.0);
    }

    #[test]
    fn init_rejects_infeasible_start() {
        let problem = quadratic_1d();
        assert!(matches!(
            init_run(&problem, &[3.0]),
            Err(EngineError::InfeasibleStart)
        ));
        assert!(matches!(
            init_run(&problem, &[1.0, 2.0]),
            Err(EngineError::DimensionMismatch { .. })
        ));
        // boundary point accepted
        let ball = make_quadratic(
            &[1.0, 1.0],
            &[0.0, 0.0],
            Region::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
        )
        .unwrap();
        assert!(init_run(&ball, &[0.6, 0.8]).is_ok());
    }

    #[test]
    fn averaged_iterate_basics() {
        let problem = quadratic_1d();
        let schedule = StepSchedule::harmonic(0.1).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.0 };
        let mut rng = trajectory_rng(0);
        let mut state = init_run(&problem, &[1.0]).unwrap();
        assert!(matches!(
            averaged_iterate(&state),
            Err(EngineError::EmptyRun)
        ));
        sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
        assert_eq!(averaged_iterate(&state).unwrap(), vec![1.0]);
    }

    #[test]
    fn averaged_iterate_equal_weights_is_arithmetic_mean() {
        // Arrange iterates x_1 = 0, x_2 = 2 with unit stepsizes.
        let problem = make_quadratic(
            &[1.0],
            &[2.0],
            Region::Box {
                lo: vec![-4.0],
                hi: vec![4.0],
            },
        )
        .unwrap();
        let schedule = StepSchedule::explicit(vec![1.0, 1.0], Some(2.0)).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.0 };
        let mut rng = trajectory_rng(0);
        let mut state = init_run(&problem, &[0.0]).unwrap();
        sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
        assert_eq!(state.x(), &[2.0]); // 0 - 1*(0-2) = 2
        sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
        assert_eq!(averaged_iterate(&state).unwrap(), vec![1.0]);
    }

    #[test]
    fn averaged_iterate_matches_replay() {
        let problem = quadratic_1d();
        let schedule = StepSchedule::polynomial(0.5, 0.75).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.3 };
        let mut rng = trajectory_rng(5);
        let mut state = init_run(&problem, &[1.5]).unwrap();
        let mut etas = Vec::new();
        let mut xs = Vec::new();
        for _ in 0..100 {
            xs.push(state.x()[0]);
            let rec = sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
            etas.push(rec.eta);
        }
        let s: f64 = etas.iter().sum();
        let weighted: f64 = etas.iter().zip(&xs).map(|(e, x)| e * x).sum();
        let replay = weighted / s;
        assert!((averaged_iterate(&state).unwrap()[0] - replay).abs() < 1e-12);
    }

    #[test]
    fn starting_at_the_optimum_gives_zero_suboptimality() {
        let problem = quadratic_1d();
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.0 };
        let mut rng = trajectory_rng(0);
        let mut state = init_run(&problem, &[0.0]).unwrap();
        sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
        assert_eq!(weighted_suboptimality(&state).unwrap(), 0.0);
    }

    #[test]
    fn averaged_iterate_gap_dominated_by_weighted_suboptimality() {
        // Convexity: f(x_bar_t) - f* <= F_bar_t at every step.
        let problem = make_quadratic(
            &[1.0, 2.0],
            &[0.1, -0.2],
            Region::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
        )
        .unwrap();
        let schedule = StepSchedule::polynomial(1.0, 0.75).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.7 };
        let f_star = problem.optimum().unwrap().f_star;
        let mut rng = trajectory_rng(21);
        let mut state = init_run(&problem, &[0.5, 0.5]).unwrap();
        for _ in 0..500 {
            sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
            let x_bar = averaged_iterate(&state).unwrap();
            let gap = problem.objective(&x_bar) - f_star;
            let f_bar = weighted_suboptimality(&state).unwrap();
            assert!(gap <= f_bar + 1e-12 * (1.0 + f_bar.abs()));
        }
    }

    #[test]
    fn zero_noise_drift_increments_are_nonpositive() {
        let problem = quadratic_1d();
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.0 };
        let mut rng = trajectory_rng(0);
        let mut state = init_run(&problem, &[1.7]).unwrap();
        for _ in 0..1000 {
            let rec = sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
            let orc = rec.oracle.unwrap();
            assert!(orc.x_t <= 1e-15);
            assert!(orc.xbar_sum <= 1e-12);
        }
    }

    #[test]
    fn telescoping_identity_holds_pathwise() {
        let problem = make_quadratic(
            &[1.0, 2.0],
            &[0.1, -0.2],
            Region::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
        )
        .unwrap();
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 1.0 };
        let mut rng = trajectory_rng(77);
        let mut state = init_run(&problem, &[0.5, 0.5]).unwrap();
        let mut prev_s = 0.0;
        let mut prev_mass = 0.0;
        for _ in 0..10_000 {
            let rec = sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
            let orc = rec.oracle.unwrap();
            let oracle = state.oracle().unwrap();
            let lhs = 2.0 * oracle.cum_weighted_gap();
            let rhs = orc.xbar_sum + (oracle.z_1() - orc.z_next) + rec.sum_eta2_g2;
            let scale = lhs
                .abs()
                .max(orc.xbar_sum.abs())
                .max(rec.sum_eta2_g2)
                .max(1.0);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * scale,
                "t={}: lhs={lhs} rhs={rhs}",
                rec.t
            );
            // exact f* makes the weighted gap nonnegative; the accumulators
            // are monotone
            assert!(oracle.cum_weighted_gap() >= 0.0);
            assert!(rec.s_t > prev_s);
            assert!(rec.sum_eta2_g2 >= prev_mass);
            prev_s = rec.s_t;
            prev_mass = rec.sum_eta2_g2;
        }
    }

    #[test]
    fn iterates_stay_feasible_and_z_bounded() {
        let problem = make_quadratic(
            &[1.0, 1.0],
            &[0.3, 0.0],
            Region::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
        )
        .unwrap();
        // Large stepsizes force the projection to activate.
        let schedule = StepSchedule::explicit(vec![5.0; 50], Some(1250.0)).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 2.0 };
        let mut rng = trajectory_rng(13);
        let mut state = init_run(&problem, &[0.0, 0.0]).unwrap();
        let r2 = problem.r_x2();
        for _ in 0..50 {
            let rec = sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
            let n: f64 = state.x().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 1.0 + 1e-9);
            assert!(rec.oracle.unwrap().z_next <= r2 + 1e-9);
        }
    }

    #[test]
    fn projection_activates_on_large_step() {
        let problem = make_quadratic(
            &[1.0, 1.0],
            &[0.5, 0.0],
            Region::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
        )
        .unwrap();
        let schedule = StepSchedule::explicit(vec![10.0], Some(100.0)).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.0 };
        let mut rng = trajectory_rng(0);
        let mut state = init_run(&problem, &[-0.9, 0.0]).unwrap();
        sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
        let n: f64 = state.x().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonfinite_step_aborts_trajectory() {
        let problem = quadratic_1d();
        // eta^2 overflows f64, so eta^2 ||g||^2 comes out non-finite.
        let schedule = StepSchedule::explicit(vec![1e200], None).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 1.0 };
        let mut rng = trajectory_rng(1);
        let mut state = init_run(&problem, &[1.0]).unwrap();
        assert!(matches!(
            sgd_step(&mut state, &problem, &noise, &schedule, &mut rng),
            Err(EngineError::NumericalFailure { t: 1 })
        ));
    }

    #[test]
    fn squared_gradient_mass_stays_under_certified_cap() {
        // Harmonic steps, bounded noise, 10^6 iterations: the accumulated
        // Σ η_s²‖g_s‖² must stay below G² V_inf.
        let problem = quadratic_1d();
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let noise = NoiseModel::BoundedUniform { nu: 0.5 };
        let g_total = noise.gradient_bound(problem.g_bound()).unwrap();
        let v_inf = schedule.v_infinity_upper(1e-10).unwrap();
        let mut rng = trajectory_rng(29);
        let mut state = init_run(&problem, &[2.0]).unwrap();
        for _ in 0..1_000_000u64 {
            sgd_step(&mut state, &problem, &noise, &schedule, &mut rng).unwrap();
        }
        assert!(state.sum_eta2_g2() <= g_total * g_total * v_inf);
    }

    #[test]
    fn trace_csv_round_trips_f64() {
        let row = TraceRow {
            t: 3,
            eta: 1.0 / 3.0,
            s_t: 11.0 / 6.0,
            v_t: 49.0 / 36.0,
            g_norm2: 0.12345678912345678,
            sum_eta2_g2: 1e-17,
            u_obs: 41.25,
            f_bar: Some(0.1),
            z: None,
            x_bar: Some(-0.25),
            log_mixture: None,
        };
        let trace = Trace {
            rows: vec![row.clone()],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER);
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[1].parse::<f64>().unwrap(), row.eta);
        assert_eq!(fields[3].parse::<f64>().unwrap(), row.v_t);
        assert_eq!(fields[8], "");
        assert_eq!(fields[9].parse::<f64>().unwrap(), -0.25);
    }
}
