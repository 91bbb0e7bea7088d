//! Anytime-valid confidence boundaries for the weighted average
//! suboptimality of projected SGD, plus the mixture-supermartingale
//! diagnostics behind them.
//!
//! # The boundary
//!
//! With `L_α = log(2/α)` and an effective cumulative variance proxy
//! `Σ²_eff = max{Σ², 2(L_α + 1)}`, the upper boundary at time `t` is
//!
//! ```text
//! U_t = (1 / 2S_t) · ( C·sqrt(Σ²_eff (L_α + log log(e + Σ²_eff)))
//!                      + initial_distance² + Σ η_s²‖g_s‖² )
//! ```
//!
//! Two instantiations share this shape:
//!
//! - the **observable** boundary uses `Σ̃_t² = σ² R_x² V_t` and `R_x²`,
//!   computable online from the stepsizes and gradient norms alone;
//! - the **adaptive** boundary uses the trajectory quantities
//!   `Σ_t² = Σ σ² η_s² Z_s` and `Z_1 = ‖x_1 - x*‖²`; it is pointwise no
//!   larger than the observable one since `Z_s ≤ R_x²`.
//!
//! The constant `C = 6 sqrt(c_1)` is pinned a priori from an upper bound
//! `Σ̃²_{∞,eff}` on the variance proxy at infinity, which is finite because
//! the stepsizes are square-summable. All logarithms are natural.
//!
//! # The diagnostic mixture
//!
//! The time-uniform guarantee comes from mixing exponential supermartingales
//! `exp(λ_k X̄_t - 2λ_k² Σ_t²)` over a geometric grid `λ_k = λ_0 e^{-k/2}`
//! with weights `w_k = 6/(π²(k+1)²)`; Ville's inequality bounds the
//! probability that the mixture ever reaches `1/α`. [`log_mixture`]
//! evaluates the (truncated) mixture in log space so the harness can check
//! the crossing frequency empirically. Truncation keeps the process a
//! supermartingale with initial value below one, so the `1/α` threshold
//! stays valid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Supremum of admissible confidence levels (exclusive): `2/e`.
pub const ALPHA_SUP: f64 = 2.0 / std::f64::consts::E;

const E: f64 = std::f64::consts::E;

#[derive(Debug, Error, PartialEq)]
pub enum ConfSeqError {
    #[error("alpha must lie strictly inside (0, 2/e), got {0}")]
    AlphaOutOfRange(f64),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("variance argument {v} is below the admissible threshold {threshold}")]
    BelowThreshold { v: f64, threshold: f64 },
}

/// `L_α = log(2/α)`; at least 1 on the admissible domain.
pub fn l_alpha(alpha: f64) -> f64 {
    (2.0 / alpha).ln()
}

/// Floor for the effective variance proxy: `2(L_α + 1)`.
pub fn variance_floor(l_alpha: f64) -> f64 {
    2.0 * (l_alpha + 1.0)
}

/// `c_1 = max{1, log(log Σ̃²_{∞,eff} + 1) / log(log(e + 1))}`.
pub fn constant_c1(sigma_inf_eff2: f64) -> f64 {
    let ratio = (sigma_inf_eff2.ln() + 1.0).ln() / (E + 1.0).ln().ln();
    ratio.max(1.0)
}

/// `C = 6 sqrt(c_1)`.
pub fn constant_c(c1: f64) -> f64 {
    6.0 * c1.sqrt()
}

/// `λ_0 = sqrt(c_1 / sqrt(e))`, the top of the geometric grid.
pub fn lambda0(c1: f64) -> f64 {
    (c1 / E.sqrt()).sqrt()
}

/// `log log(e + v)`, the iterated-logarithm correction.
fn log_log_e(v: f64) -> f64 {
    (E + v).ln().ln()
}

/// The concentration radius `C sqrt(v (L_α + log log(e + v)))`.
fn radius(c: f64, l_alpha: f64, v: f64) -> f64 {
    c * (v * (l_alpha + log_log_e(v))).sqrt()
}

/// Confidence level plus every constant derived from it and from the
/// problem/schedule parameters. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    alpha: f64,
    sigma2: f64,
    r_x2: f64,
    v_inf_upper: f64,
    l_alpha: f64,
    sigma_inf_eff2: f64,
    c1: f64,
    c: f64,
    lambda0: f64,
}

impl ConfidenceConfig {
    /// Derive all constants from the confidence level `alpha`, the noise
    /// proxy `sigma2`, the squared region diameter `r_x2`, and a certified
    /// upper bound `v_inf_upper` on `Σ η_t²`.
    ///
    /// `v_inf_upper` may overestimate the true series: every derived
    /// constant is monotone in it, so the boundary only widens.
    pub fn new(
        alpha: f64,
        sigma2: f64,
        r_x2: f64,
        v_inf_upper: f64,
    ) -> Result<Self, ConfSeqError> {
        if !(alpha.is_finite() && alpha > 0.0 && alpha < ALPHA_SUP) {
            return Err(ConfSeqError::AlphaOutOfRange(alpha));
        }
        for (name, value) in [
            ("sigma2", sigma2),
            ("r_x2", r_x2),
            ("v_inf_upper", v_inf_upper),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfSeqError::NonPositive { name, value });
            }
        }
        let l = l_alpha(alpha);
        let sigma_inf_eff2 = (sigma2 * r_x2 * v_inf_upper).max(variance_floor(l));
        let c1 = constant_c1(sigma_inf_eff2);
        Ok(Self {
            alpha,
            sigma2,
            r_x2,
            v_inf_upper,
            l_alpha: l,
            sigma_inf_eff2,
            c1,
            c: constant_c(c1),
            lambda0: lambda0(c1),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn r_x2(&self) -> f64 {
        self.r_x2
    }

    pub fn v_inf_upper(&self) -> f64 {
        self.v_inf_upper
    }

    pub fn l_alpha(&self) -> f64 {
        self.l_alpha
    }

    /// `Σ̃²_{∞,eff} = max{σ² R_x² V_∞, 2(L_α + 1)}`.
    pub fn sigma_inf_eff2(&self) -> f64 {
        self.sigma_inf_eff2
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// The boundary constant `C`.
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    /// `max{Σ², 2(L_α + 1)}`, the small-variance floor.
    pub fn effective_variance(&self, sigma2_cum: f64) -> f64 {
        sigma2_cum.max(variance_floor(self.l_alpha))
    }

    /// Observable anytime-valid boundary `U_t^obs`, computable from the
    /// stepsize sums and realized gradient norms alone.
    pub fn u_obs(&self, s_t: f64, v_t: f64, sum_eta2_g2: f64) -> f64 {
        let eff = self.effective_variance(self.sigma2 * self.r_x2 * v_t);
        (radius(self.c, self.l_alpha, eff) + self.r_x2 + sum_eta2_g2) / (2.0 * s_t)
    }

    /// Adaptive boundary: `Σ̃_t²` replaced by the trajectory mass
    /// `Σ_t² = Σ σ²η_s²Z_s` and `R_x²` by `Z_1`. Requires oracle state.
    pub fn u_adaptive(&self, s_t: f64, sigma2_sum: f64, z_1: f64, sum_eta2_g2: f64) -> f64 {
        let eff = self.effective_variance(sigma2_sum);
        (radius(self.c, self.l_alpha, eff) + z_1 + sum_eta2_g2) / (2.0 * s_t)
    }

    /// Grid boundary `B_k(v) = log(1/(α w_k))/λ_k + 2 λ_k v`.
    pub fn boundary_bk(&self, k: u32, v: f64) -> f64 {
        let lam = self.lambda0 * (-(k as f64) / 2.0).exp();
        let w = mixture_weight(k as usize);
        (1.0 / (self.alpha * w)).ln() / lam + 2.0 * lam * v
    }

    /// The grid index `k(v) = ⌊log(v / (L_α + log log(e + v)))⌋`,
    /// nonnegative whenever `v ≥ 2(L_α + 1)`.
    pub fn grid_index(&self, v: f64) -> Result<u32, ConfSeqError> {
        let threshold = variance_floor(self.l_alpha);
        if v < threshold {
            return Err(ConfSeqError::BelowThreshold { v, threshold });
        }
        let k = (v / (self.l_alpha + log_log_e(v))).ln().floor();
        debug_assert!(k >= 0.0);
        Ok(k as u32)
    }
}

/// `w_k = 6 / (π² (k+1)²)`; the full series sums to one.
pub fn mixture_weight(k: usize) -> f64 {
    let kp1 = (k + 1) as f64;
    6.0 / (std::f64::consts::PI * std::f64::consts::PI * kp1 * kp1)
}

/// Truncated geometric grid of mixture components, precomputed.
#[derive(Debug, Clone)]
pub struct MixtureConfig {
    k_max: usize,
    lambdas: Vec<f64>,
    log_weights: Vec<f64>,
}

impl MixtureConfig {
    pub fn new(config: &ConfidenceConfig, k_max: usize) -> Self {
        let lambdas: Vec<f64> = (0..=k_max)
            .map(|k| config.lambda0() * (-(k as f64) / 2.0).exp())
            .collect();
        let log_weights: Vec<f64> = (0..=k_max).map(|k| mixture_weight(k).ln()).collect();
        Self {
            k_max,
            lambdas,
            log_weights,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `Σ_{k≤k_max} w_k`, strictly below one.
    pub fn truncated_mass(&self) -> f64 {
        (0..=self.k_max).map(mixture_weight).sum()
    }
}

/// `log Σ_{k≤k_max} w_k exp(λ_k·xbar - 2λ_k²·sigma2_cum)`, evaluated with a
/// max shift so no intermediate overflows for |xbar| up to ~1e8.
pub fn log_mixture(xbar: f64, sigma2_cum: f64, mix: &MixtureConfig) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for k in 0..=mix.k_max {
        let lam = mix.lambdas[k];
        let a = mix.log_weights[k] + lam * xbar - 2.0 * lam * lam * sigma2_cum;
        if a > max {
            max = a;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for k in 0..=mix.k_max {
        let lam = mix.lambdas[k];
        let a = mix.log_weights[k] + lam * xbar - 2.0 * lam * lam * sigma2_cum;
        sum += (a - max).exp();
    }
    max + sum.ln()
}

/// Exact test `log_mixture(...) ≥ log_threshold` with a cheap bracket
/// shortcut: the log-sum-exp lies in `[max_k a_k, max_k a_k + ln(n)]`, so
/// most calls decide without any `exp`. Same decision as evaluating
/// [`log_mixture`] in full.
pub fn log_mixture_exceeds(
    xbar: f64,
    sigma2_cum: f64,
    mix: &MixtureConfig,
    log_threshold: f64,
) -> bool {
    let mut max = f64::NEG_INFINITY;
    for k in 0..=mix.k_max {
        let lam = mix.lambdas[k];
        let a = mix.log_weights[k] + lam * xbar - 2.0 * lam * lam * sigma2_cum;
        if a > max {
            max = a;
        }
    }
    if max >= log_threshold {
        return true;
    }
    if max + ((mix.k_max + 1) as f64).ln() < log_threshold {
        return false;
    }
    log_mixture(xbar, sigma2_cum, mix) >= log_threshold
}

/// Identifier of one supporting inequality checked by the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    /// `log(log(v/L_α) + 1) ≤ c_1 log(log(v + e))` on `L_α < v ≤ Σ̃²_{∞,eff}`.
    LogLogDomination,
    /// `v > L_α + log log(e + v)` for `v ≥ 2(L_α + 1)`.
    ExplicitThreshold,
}

/// A pointwise failure found by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaViolation {
    pub lemma: LemmaId,
    pub alpha: f64,
    pub v: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub points_checked: usize,
    pub violations: Vec<LemmaViolation>,
}

impl LemmaReport {
    pub fn all_hold(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluate the two scalar supporting inequalities pointwise over the
/// supplied grids. Points outside a lemma's stated domain are skipped.
/// Violations are report content, not errors.
pub fn verify_appendix_lemmas(
    alpha_grid: &[f64],
    v_grid: &[f64],
) -> Result<LemmaReport, ConfSeqError> {
    let mut report = LemmaReport::default();
    for &alpha in alpha_grid {
        if !(alpha.is_finite() && alpha > 0.0 && alpha < ALPHA_SUP) {
            return Err(ConfSeqError::AlphaOutOfRange(alpha));
        }
        let l = l_alpha(alpha);
        let v_hi = v_grid
            .iter()
            .copied()
            .fold(variance_floor(l), f64::max);
        let c1 = constant_c1(v_hi);
        for &v in v_grid {
            if v > l && v <= v_hi {
                let lhs = ((v / l).ln() + 1.0).ln();
                let rhs = c1 * (v + E).ln().ln();
                report.points_checked += 1;
                if lhs > rhs {
                    report.violations.push(LemmaViolation {
                        lemma: LemmaId::LogLogDomination,
                        alpha,
                        v,
                        lhs,
                        rhs,
                    });
                }
            }
            if v >= variance_floor(l) {
                let lhs = l + log_log_e(v);
                report.points_checked += 1;
                if v <= lhs {
                    report.violations.push(LemmaViolation {
                        lemma: LemmaId::ExplicitThreshold,
                        alpha,
                        v,
                        lhs,
                        rhs: v,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// One point where the grid boundary failed to stay under the closed-form
/// radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceViolation {
    pub v: f64,
    pub boundary: f64,
    pub radius: f64,
}

/// Sweep `v` log-spaced over `[2(L_α+1), Σ̃²_{∞,eff}]` and check that the
/// mixture-grid boundary is dominated by `C sqrt(v (L_α + log log(e+v)))`,
/// both at the pinned index `k(v)` and as the minimum over `k ≤ k_sweep`.
pub fn boundary_dominance_violations(
    config: &ConfidenceConfig,
    n_points: usize,
    k_sweep: u32,
) -> Vec<DominanceViolation> {
    let lo = variance_floor(config.l_alpha());
    let hi = config.sigma_inf_eff2();
    let mut out = Vec::new();
    for i in 0..n_points {
        let frac = if n_points > 1 {
            i as f64 / (n_points - 1) as f64
        } else {
            0.0
        };
        let v = lo * (hi / lo).powf(frac);
        let rhs = radius(config.c(), config.l_alpha(), v);
        let k_pinned = config
            .grid_index(v.min(hi).max(lo))
            .expect("v inside [floor, sigma_inf_eff2]");
        let pinned = config.boundary_bk(k_pinned, v);
        let swept = (0..=k_sweep)
            .map(|k| config.boundary_bk(k, v))
            .fold(f64::INFINITY, f64::min);
        let boundary = pinned.max(swept); // both routes must be dominated
        if boundary > rhs {
            out.push(DominanceViolation {
                v,
                boundary,
                radius: rhs,
            });
        }
    }
    out
}
