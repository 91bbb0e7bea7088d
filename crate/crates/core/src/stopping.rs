//! The certified stopping rule `τ_ε = inf{t ≥ 1 : U_t^obs ≤ ε}`, the
//! constant `K_α` that controls it under almost-surely bounded gradients,
//! and closed-form complexity bounds for the standard stepsize laws.
//!
//! When `‖g_t‖ ≤ G` holds almost surely, every term in `2 S_t U_t^obs` is
//! dominated by its infinite-horizon counterpart, so
//! `S_t U_t^obs ≤ K_α` pathwise and the rule must fire no later than the
//! first `t` with `S_t ≥ K_α/ε`. Feeding the closed-form lower bounds on
//! `S_t` into that threshold gives
//!
//! - `τ_ε ≤ (1 + (1-γ) K_α/(η_0 ε))^{1/(1-γ)}` for `η_t = η_0 t^{-γ}`,
//! - `τ_ε ≤ exp(K_α/(η_0 ε))` for `η_t = η_0/t`.

use thiserror::Error;

use crate::confseq::{constant_c, constant_c1, variance_floor, ConfidenceConfig, MixtureConfig};
use crate::engine::{
    averaged_iterate, init_run, sgd_step, EngineError, TailBuffer, Trace, TraceRow,
};
use crate::problems::{ConvexProblem, NoiseModel, TrajectoryRng};
use crate::schedules::{CumulativeAccumulator, ScheduleError, StepSchedule};

#[derive(Debug, Error)]
pub enum StoppingError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("t_cap must be at least 1")]
    ZeroCap,
    #[error(
        "S_t reached only {s_reached} after {scanned} iterations; threshold {threshold} is unreachable within the cap"
    )]
    ThresholdUnreachable {
        scanned: u64,
        s_reached: f64,
        threshold: f64,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Outcome of a certified run: the first boundary crossing, with the
/// averaged iterate it certifies.
#[derive(Debug, Clone)]
pub struct StopCertificate {
    pub epsilon: f64,
    pub alpha: f64,
    /// First `t` with `U_t^obs ≤ ε` (non-strict, matching the infimum).
    pub tau: u64,
    /// Weighted average iterate at `τ`.
    pub x_bar_tau: Vec<f64>,
    /// Boundary value at `τ`; at most `epsilon` by construction.
    pub u_at_tau: f64,
    /// `f(x̄_τ) - f*` when the problem carries an exact optimum.
    pub f_gap_at_tau: Option<f64>,
    /// Closed-form almost-sure bound on `τ`, available in the
    /// bounded-gradient regime for polynomial/harmonic schedules.
    pub theoretical_tau_bound: Option<f64>,
}

/// Why a run ended.
#[derive(Debug, Clone)]
pub enum CertifyOutcome {
    Certified(StopCertificate),
    /// The safety cap fired before the boundary crossed `ε`. Carries the
    /// final boundary value and the last few trace rows for inspection.
    CapReached {
        t_cap: u64,
        final_u_obs: f64,
        tail: Vec<TraceRow>,
    },
}

/// A certified run plus whatever trace was recorded along the way.
#[derive(Debug, Clone)]
pub struct CertifyRun {
    pub outcome: CertifyOutcome,
    pub trace: Trace,
}

/// Options for [`run_until_certified`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record every `stride`-th step (plus the final one) into the returned
    /// trace; `None` keeps only the rolling tail.
    pub trace_stride: Option<u64>,
    /// Attach the oracle-mode mixture diagnostic to recorded rows.
    pub with_mixture: bool,
}

const TAIL_ROWS: usize = 16;

/// Iterate projected SGD until the observable boundary drops to `ε`, or
/// until `t_cap` iterations have been spent.
#[allow(clippy::too_many_arguments)]
pub fn run_until_certified(
    problem: &ConvexProblem,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    config: &ConfidenceConfig,
    epsilon: f64,
    x1: &[f64],
    rng: &mut TrajectoryRng,
    t_cap: u64,
    opts: &RunOptions,
) -> Result<CertifyRun, StoppingError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(StoppingError::InvalidEpsilon(epsilon));
    }
    if t_cap == 0 {
        return Err(StoppingError::ZeroCap);
    }

    let mixture = if opts.with_mixture && problem.optimum().is_some() {
        Some(MixtureConfig::new(config, 200))
    } else {
        None
    };

    let theoretical = theoretical_tau_bound(problem, noise, schedule, config, epsilon);

    let mut state = init_run(problem, x1)?;
    let mut trace = Trace::default();
    let mut tail = TailBuffer::new(TAIL_ROWS);
    let mut final_u = f64::INFINITY;

    for t in 1..=t_cap {
        let rec = sgd_step(&mut state, problem, noise, schedule, rng)?;
        let u_obs = config.u_obs(rec.s_t, rec.v_t, rec.sum_eta2_g2);
        final_u = u_obs;
        let stopped = u_obs <= epsilon;

        let recorded = opts
            .trace_stride
            .map(|stride| stride > 0 && (t % stride == 0 || stopped))
            .unwrap_or(false);
        let row = TraceRow {
            t,
            eta: rec.eta,
            s_t: rec.s_t,
            v_t: rec.v_t,
            g_norm2: rec.g_norm2,
            sum_eta2_g2: rec.sum_eta2_g2,
            u_obs,
            f_bar: rec.oracle.map(|o| o.f_bar),
            z: rec.oracle.map(|o| o.z_next),
            x_bar: rec.oracle.map(|o| o.xbar_sum),
            log_mixture: mixture
                .as_ref()
                .zip(rec.oracle)
                .map(|(mix, o)| crate::confseq::log_mixture(o.xbar_sum, o.sigma2_sum, mix)),
        };
        if recorded {
            trace.rows.push(row.clone());
        }
        tail.push(row);

        if stopped {
            let x_bar_tau = averaged_iterate(&state)?;
            let f_gap_at_tau = problem
                .optimum()
                .map(|opt| problem.objective(&x_bar_tau) - opt.f_star);
            return Ok(CertifyRun {
                outcome: CertifyOutcome::Certified(StopCertificate {
                    epsilon,
                    alpha: config.alpha(),
                    tau: t,
                    x_bar_tau,
                    u_at_tau: u_obs,
                    f_gap_at_tau,
                    theoretical_tau_bound: theoretical,
                }),
                trace,
            });
        }
    }

    Ok(CertifyRun {
        outcome: CertifyOutcome::CapReached {
            t_cap,
            final_u_obs: final_u,
            tail: tail.into_rows(),
        },
        trace,
    })
}

fn theoretical_tau_bound(
    problem: &ConvexProblem,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    config: &ConfidenceConfig,
    epsilon: f64,
) -> Option<f64> {
    let g_total = noise.gradient_bound(problem.g_bound())?;
    let k = k_alpha(config, g_total, config.v_inf_upper());
    match schedule {
        StepSchedule::Polynomial { eta0, gamma } => {
            Some(tau_bound_poly(epsilon, *gamma, *eta0, k))
        }
        StepSchedule::Harmonic { eta0 } => Some(tau_bound_harmonic(epsilon, *eta0, k).value),
        StepSchedule::Explicit { .. } => None,
    }
}

/// The deterministic stopping constant
/// `K_α = ½ (C sqrt(Σ̃²_{∞,eff}(L_α + log log(e + Σ̃²_{∞,eff}))) + R_x² + G² V_∞)`
/// with `Σ̃²_{∞,eff} = max{4G²R_x²V_∞, 2(L_α+1)}`.
///
/// This always uses the Hoeffding proxy `σ² = 4G²`, even when the
/// configured noise model declares something smaller: the bound is stated
/// for the almost-surely-bounded regime and nothing sharper is claimed.
pub fn k_alpha(config: &ConfidenceConfig, g_bound: f64, v_inf_upper: f64) -> f64 {
    let l = config.l_alpha();
    let r_x2 = config.r_x2();
    let g2 = g_bound * g_bound;
    let sigma_inf_eff2 = (4.0 * g2 * r_x2 * v_inf_upper).max(variance_floor(l));
    let c = constant_c(constant_c1(sigma_inf_eff2));
    let radius = c * (sigma_inf_eff2 * (l + (std::f64::consts::E + sigma_inf_eff2).ln().ln())).sqrt();
    0.5 * (radius + r_x2 + g2 * v_inf_upper)
}

/// `(1 + (1-γ) K_α / (η_0 ε))^{1/(1-γ)}`, the almost-sure stopping bound
/// for polynomial stepsizes.
pub fn tau_bound_poly(epsilon: f64, gamma: f64, eta0: f64, k_alpha_val: f64) -> f64 {
    (1.0 + (1.0 - gamma) * k_alpha_val / (eta0 * epsilon)).powf(1.0 / (1.0 - gamma))
}

/// Result of the harmonic-schedule bound `exp(K_α/(η_0 ε))`, which
/// overflows to infinity for tiny `ε` instead of failing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicTauBound {
    pub value: f64,
    pub overflowed: bool,
}

/// `exp(K_α / (η_0 ε))`, the almost-sure stopping bound for harmonic
/// stepsizes. Flags overflow rather than crashing.
pub fn tau_bound_harmonic(epsilon: f64, eta0: f64, k_alpha_val: f64) -> HarmonicTauBound {
    let exponent = k_alpha_val / (eta0 * epsilon);
    let value = exponent.exp();
    HarmonicTauBound {
        value,
        overflowed: !value.is_finite(),
    }
}

/// Smallest `t` with `S_t ≥ K_α/ε`, found by scanning the exact compensated
/// partial sums (the closed-form lemma bounds are kept as cross-checks in
/// the tests). This integer dominates `τ_ε` almost surely in the
/// bounded-gradient regime.
pub fn st_threshold_time(
    schedule: &StepSchedule,
    k_alpha_val: f64,
    epsilon: f64,
    t_cap: u64,
) -> Result<u64, StoppingError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(StoppingError::InvalidEpsilon(epsilon));
    }
    if t_cap == 0 {
        return Err(StoppingError::ZeroCap);
    }
    let threshold = k_alpha_val / epsilon;
    let mut acc = CumulativeAccumulator::new();
    for t in 1..=t_cap {
        acc.push(schedule.eta(t)?);
        if acc.s_t() >= threshold {
            return Ok(t);
        }
    }
    Err(StoppingError::ThresholdUnreachable {
        scanned: t_cap,
        s_reached: acc.s_t(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, trajectory_rng, Region};

    const PI2_OVER_6: f64 = 1.6449340668482264;

    fn box_problem_1d() -> ConvexProblem {
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
    fn k_alpha_frozen_value() {
        // alpha = 0.1, G = 1, R_x = 4, harmonic eta0 = 1 (V_inf = pi^2/6).
        let config = ConfidenceConfig::new(0.1, 4.0, 16.0, PI2_OVER_6).unwrap();
        let k = k_alpha(&config, 1.0, PI2_OVER_6);
        assert!((k - 174.19777756704346).abs() < 1e-9, "{k}");
    }

    #[test]
    fn k_alpha_vanishing_gradient_limit() {
        // G -> 0 with the threshold flooring the effective variance.
        let config = ConfidenceConfig::new(0.1, 4.0e-24, 16.0, PI2_OVER_6).unwrap();
        let k = k_alpha(&config, 1e-12, PI2_OVER_6);
        assert!((k - 41.84109257700191).abs() < 1e-9, "{k}");
    }

    #[test]
    fn k_alpha_monotonicity() {
        let base = ConfidenceConfig::new(0.1, 4.0, 16.0, PI2_OVER_6).unwrap();
        let k = k_alpha(&base, 1.0, PI2_OVER_6);
        assert!(k_alpha(&base, 2.0, PI2_OVER_6) > k);
        assert!(k_alpha(&base, 1.0, 2.0 * PI2_OVER_6) > k);
        let bigger_r = ConfidenceConfig::new(0.1, 4.0, 25.0, PI2_OVER_6).unwrap();
        assert!(k_alpha(&bigger_r, 1.0, PI2_OVER_6) > k);
        let smaller_alpha = ConfidenceConfig::new(0.01, 4.0, 16.0, PI2_OVER_6).unwrap();
        assert!(k_alpha(&smaller_alpha, 1.0, PI2_OVER_6) > k);
    }

    #[test]
    fn tau_bound_poly_examples() {
        assert!((tau_bound_poly(0.25, 0.75, 1.0, 1.0) - 16.0).abs() < 1e-12);
        assert!((tau_bound_poly(1e12, 0.75, 1.0, 1.0) - 1.0).abs() < 1e-9);
        // epsilon -> epsilon/2 multiplies the bound by ~2^{1/(1-gamma)} = 16
        let small = tau_bound_poly(1e-6, 0.75, 1.0, 1.0);
        let smaller = tau_bound_poly(5e-7, 0.75, 1.0, 1.0);
        assert!((smaller / small - 16.0).abs() < 0.01);
    }

    #[test]
    fn tau_bound_harmonic_examples() {
        let b = tau_bound_harmonic(1.0, 1.0, 1.0);
        assert!((b.value - std::f64::consts::E).abs() < 1e-12);
        assert!(!b.overflowed);
        let b2 = tau_bound_harmonic(1.0, 1.0, 2.0);
        assert!((b2.value - std::f64::consts::E.powi(2)).abs() < 1e-11);
        let overflow = tau_bound_harmonic(0.001, 1.0, 1.0);
        assert!(overflow.overflowed);
        assert_eq!(overflow.value, f64::INFINITY);
    }

    #[test]
    fn st_threshold_exact_hit_is_non_strict() {
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let s5 = schedule.cumulative(5).unwrap().s_t;
        // K/eps equal to S_5 bit-for-bit: the scan accumulates identically.
        assert_eq!(st_threshold_time(&schedule, s5, 1.0, 100).unwrap(), 5);
    }

    #[test]
    fn st_threshold_first_step_suffices() {
        let schedule = StepSchedule::harmonic(2.0).unwrap();
        assert_eq!(st_threshold_time(&schedule, 1.5, 1.0, 100).unwrap(), 1);
    }

    #[test]
    fn st_threshold_poly_matches_linear_scan_oracle() {
        let schedule = StepSchedule::polynomial(1.0, 0.75).unwrap();
        let t = st_threshold_time(&schedule, 4.0, 1.0, 1000).unwrap();
        // brute-force scan as the oracle
        let mut s = 0.0;
        let mut expected = 0;
        for i in 1..=1000u64 {
            s += (i as f64).powf(-0.75);
            if s >= 4.0 {
                expected = i;
                break;
            }
        }
        assert_eq!(t, expected);
        assert!(t <= 16); // closed-form lemma bound crosses 4 at t = 16
    }

    #[test]
    fn st_threshold_unreachable_is_reported() {
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let err = st_threshold_time(&schedule, 1000.0, 1.0, 10_000).unwrap_err();
        assert!(matches!(err, StoppingError::ThresholdUnreachable { .. }));
    }

    #[test]
    fn st_threshold_dominated_by_closed_form_bounds() {
        for (gamma, eta0) in [(0.6, 1.0), (0.75, 0.5), (0.9, 2.0)] {
            let schedule = StepSchedule::polynomial(eta0, gamma).unwrap();
            for k in [1.0, 5.0, 20.0] {
                for eps in [0.5, 1.0, 4.0] {
                    let t = st_threshold_time(&schedule, k, eps, 5_000_000).unwrap();
                    let bound = tau_bound_poly(eps, gamma, eta0, k).ceil();
                    assert!(
                        (t as f64) <= bound,
                        "gamma={gamma} eta0={eta0} k={k} eps={eps}: {t} > {bound}"
                    );
                }
            }
        }
        let harm = StepSchedule::harmonic(1.0).unwrap();
        for k in [1.0, 3.0] {
            for eps in [0.5, 1.0] {
                let t = st_threshold_time(&harm, k, eps, 5_000_000).unwrap();
                let bound = tau_bound_harmonic(eps, 1.0, k);
                assert!(!bound.overflowed);
                assert!((t as f64) <= bound.value.ceil());
            }
        }
    }

    #[test]
    fn generous_epsilon_stops_immediately() {
        let problem = box_problem_1d();
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let noise = NoiseModel::BoundedUniform { nu: 0.1 };
        let config =
            ConfidenceConfig::new(0.1, noise.sigma2_proxy(problem.g_bound()), problem.r_x2(),
                schedule.v_infinity_upper(1e-10).unwrap())
            .unwrap();
        let mut rng = trajectory_rng(1);
        let run = run_until_certified(
            &problem,
            &noise,
            &schedule,
            &config,
            1e9,
            &[1.0],
            &mut rng,
            100,
            &RunOptions::default(),
        )
        .unwrap();
        match run.outcome {
            CertifyOutcome::Certified(cert) => {
                assert_eq!(cert.tau, 1);
                assert!(cert.u_at_tau <= 1e9);
                assert!(cert.theoretical_tau_bound.is_some());
            }
            CertifyOutcome::CapReached { .. } => panic!("should certify at t = 1"),
        }
    }

    #[test]
    fn unreachable_epsilon_hits_cap() {
        let problem = box_problem_1d();
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let noise = NoiseModel::BoundedUniform { nu: 0.1 };
        let config =
            ConfidenceConfig::new(0.1, noise.sigma2_proxy(problem.g_bound()), problem.r_x2(),
                schedule.v_infinity_upper(1e-10).unwrap())
            .unwrap();
        // Below K_alpha / S_{t_cap}: the boundary cannot cross by the
        // termwise domination, so the cap must fire.
        let g_total = noise.gradient_bound(problem.g_bound()).unwrap();
        let k = k_alpha(&config, g_total, config.v_inf_upper());
        let t_cap = 500;
        let s_cap = schedule.cumulative(t_cap).unwrap().s_t;
        let epsilon = 0.5 * k / s_cap / 2.0;
        let mut rng = trajectory_rng(2);
        let run = run_until_certified(
            &problem,
            &noise,
            &schedule,
            &config,
            epsilon,
            &[1.0],
            &mut rng,
            t_cap,
            &RunOptions::default(),
        )
        .unwrap();
        match run.outcome {
            CertifyOutcome::CapReached {
                t_cap: cap,
                final_u_obs,
                tail,
            } => {
                assert_eq!(cap, t_cap);
                assert!(final_u_obs > epsilon);
                assert!(!tail.is_empty());
            }
            CertifyOutcome::Certified(c) => panic!("unexpected certificate at tau={}", c.tau),
        }
    }

    #[test]
    fn threshold_is_non_strict_on_exact_equality() {
        let problem = box_problem_1d();
        let schedule = StepSchedule::harmonic(1.0).unwrap();
        let noise = NoiseModel::BoundedUniform { nu: 0.1 };
        let config = ConfidenceConfig::new(
            0.1,
            noise.sigma2_proxy(problem.g_bound()),
            problem.r_x2(),
            schedule.v_infinity_upper(1e-10).unwrap(),
        )
        .unwrap();
        // First pass: learn U_1 on this seed. Second pass: epsilon = U_1
        // bit-for-bit must stop at t = 1.
        let probe = |eps: f64| {
            let mut rng = trajectory_rng(11);
            run_until_certified(
                &problem,
                &noise,
                &schedule,
                &config,
                eps,
                &[1.0],
                &mut rng,
                10,
                &RunOptions::default(),
            )
            .unwrap()
        };
        let u1 = match probe(1e9).outcome {
            CertifyOutcome::Certified(c) => c.u_at_tau,
            _ => unreachable!(),
        };
        match probe(u1).outcome {
            CertifyOutcome::Certified(c) => {
                assert_eq!(c.tau, 1);
                assert_eq!(c.u_at_tau, u1);
            }
            CertifyOutcome::CapReached { .. } => panic!("equality must stop the rule"),
        }
    }

    #[test]
    fn stopping_rule_fires_at_first_crossing() {
        let problem = box_problem_1d();
        let schedule = StepSchedule::polynomial(1.0, 0.75).unwrap();
        let noise = NoiseModel::BoundedUniform { nu: 0.2 };
        let config =
            ConfidenceConfig::new(0.1, noise.sigma2_proxy(problem.g_bound()), problem.r_x2(),
                schedule.v_infinity_upper(1e-10).unwrap())
            .unwrap();
        let g_total = noise.gradient_bound(problem.g_bound()).unwrap();
        let k = k_alpha(&config, g_total, config.v_inf_upper());
        let s_target = schedule.cumulative(400).unwrap().s_t;
        let epsilon = 2.0 * k / s_target;
        let mut rng = trajectory_rng(3);
        let run = run_until_certified(
            &problem,
            &noise,
            &schedule,
            &config,
            epsilon,
            &[1.0],
            &mut rng,
            10_000,
            &RunOptions {
                trace_stride: Some(1),
                with_mixture: false,
            },
        )
        .unwrap();
        match run.outcome {
            CertifyOutcome::Certified(cert) => {
                assert!(cert.u_at_tau <= epsilon);
                for row in &run.trace.rows {
                    if row.t < cert.tau {
                        assert!(row.u_obs > epsilon, "premature crossing at t={}", row.t);
                    }
                }
                let bound = cert.theoretical_tau_bound.unwrap();
                assert!((cert.tau as f64) <= bound.ceil());
                // certified stop implies S_tau >= ... within the threshold scan
                let st = st_threshold_time(&schedule, k, epsilon, 100_000).unwrap();
                assert!(cert.tau <= st);
            }
            CertifyOutcome::CapReached { .. } => panic!("expected certification"),
        }
    }
}
