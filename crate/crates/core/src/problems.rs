//! Convex test problems with exact optima, projection operators, and
//! stochastic gradient oracles.
//!
//! The workhorse is a separable quadratic `f(x) = ½ Σ μ_i (x_i - a_i)²`
//! over a box or a Euclidean ball. The anchor `a` is required to be feasible,
//! which makes the optimum `(x*, f*) = (a, 0)` exact rather than numerically
//! solved; the diagnostics downstream compare against these values at
//! machine precision, so they must not be approximations.
//!
//! Gradient oracles return `∇f(x) + ξ` where the noise `ξ` is either
//! per-coordinate Gaussian or uniform on a ball of radius `ν`. Each model
//! carries a certified sub-Gaussian variance proxy: `σ²` for the Gaussian
//! case, and `4G²` (with `G` the almost-sure gradient bound) for the bounded
//! case via Hoeffding's lemma.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-trajectory random stream: a named, counter-based generator so runs
/// are reproducible regardless of execution order or thread count.
pub type TrajectoryRng = ChaCha8Rng;

/// Build the stream for one trajectory from a 64-bit seed.
pub fn trajectory_rng(seed: u64) -> TrajectoryRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative tolerance used for feasibility checks (`‖P(x) - x‖` scaled).
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("box bounds must satisfy lo <= hi coordinatewise (violated at index {index})")]
    InvalidBox { index: usize },
    #[error("ball radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("curvature entries must be positive and finite (violated at index {index})")]
    InvalidCurvature { index: usize },
    #[error("anchor lies outside the region (distance to projection {dist})")]
    AnchorInfeasible { dist: f64 },
    #[error("noise parameter must be nonnegative and finite, got {0}")]
    InvalidNoiseParam(f64),
    #[error("region coordinates must be finite")]
    NonFiniteRegion,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Coordinatewise clamp of `z` to `[lo, hi]`.
pub fn project_box(z: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>, ProblemError> {
    if z.len() != lo.len() || z.len() != hi.len() {
        return Err(ProblemError::DimensionMismatch {
            expected: lo.len(),
            got: z.len(),
        });
    }
    for (index, (l, h)) in lo.iter().zip(hi).enumerate() {
        if l > h {
            return Err(ProblemError::InvalidBox { index });
        }
    }
    Ok(z.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &h))| v.clamp(l, h))
        .collect())
}

/// Euclidean projection onto the ball `{x : ‖x - center‖ ≤ radius}`.
pub fn project_ball(z: &[f64], center: &[f64], radius: f64) -> Result<Vec<f64>, ProblemError> {
    if z.len() != center.len() {
        return Err(ProblemError::DimensionMismatch {
            expected: center.len(),
            got: z.len(),
        });
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(ProblemError::InvalidRadius(radius));
    }
    let d = dist(z, center);
    if d <= radius {
        return Ok(z.to_vec());
    }
    let scale = radius / d;
    Ok(z.iter()
        .zip(center)
        .map(|(&v, &c)| c + scale * (v - c))
        .collect())
}

/// Feasible region: an axis-aligned box or a Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lo, .. } => lo.len(),
            Region::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        match self {
            Region::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(ProblemError::DimensionMismatch {
                        expected: lo.len(),
                        got: hi.len(),
                    });
                }
                if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
                    return Err(ProblemError::NonFiniteRegion);
                }
                for (index, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if l > h {
                        return Err(ProblemError::InvalidBox { index });
                    }
                }
                Ok(())
            }
            Region::Ball { center, radius } => {
                if center.iter().any(|v| !v.is_finite()) {
                    return Err(ProblemError::NonFiniteRegion);
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(ProblemError::InvalidRadius(*radius));
                }
                Ok(())
            }
        }
    }

    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>, ProblemError> {
        match self {
            Region::Box { lo, hi } => project_box(z, lo, hi),
            Region::Ball { center, radius } => project_ball(z, center, *radius),
        }
    }

    /// Euclidean diameter of the region.
    pub fn diameter(&self) -> f64 {
        match self {
            Region::Box { lo, hi } => dist(hi, lo),
            Region::Ball { radius, .. } => 2.0 * radius,
        }
    }
}

/// Exactly known minimizer of a test problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x_star: Vec<f64>,
    pub f_star: f64,
}

type ObjectiveFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A convex objective over a compact region, with oracles and the global
/// constants (`R_x`, `G`) the confidence machinery needs.
#[derive(Clone)]
pub struct ConvexProblem {
    dim: usize,
    region: Region,
    objective: ObjectiveFn,
    gradient: GradientFn,
    r_x: f64,
    g_bound: f64,
    optimum: Option<Optimum>,
}

impl std::fmt::Debug for ConvexProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvexProblem")
            .field("dim", &self.dim)
            .field("region", &self.region)
            .field("r_x", &self.r_x)
            .field("g_bound", &self.g_bound)
            .field("optimum", &self.optimum)
            .finish_non_exhaustive()
    }
}

impl ConvexProblem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        (self.objective)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.gradient_into(x, &mut out);
        out
    }

    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.region.project(z)
    }

    /// Diameter of the feasible region, `R_x`.
    pub fn r_x(&self) -> f64 {
        self.r_x
    }

    pub fn r_x2(&self) -> f64 {
        self.r_x * self.r_x
    }

    /// Supremum of `‖∇f‖` over the region.
    pub fn g_bound(&self) -> f64 {
        self.g_bound
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    /// Default start point: the projection of the origin.
    pub fn default_start(&self) -> Vec<f64> {
        self.project(&vec![0.0; self.dim])
            .expect("projection of the origin cannot fail on a validated region")
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        if x.len() != self.dim {
            return false;
        }
        match self.project(x) {
            Ok(p) => dist(&p, x) <= FEASIBILITY_TOL * (1.0 + norm(x)),
            Err(_) => false,
        }
    }
}

/// Separable quadratic `f(x) = ½ Σ μ_i (x_i - a_i)²` over `region`.
///
/// The anchor must be feasible so the optimum `(a, 0)` is exact. `g_bound`
/// is the supremum of `‖∇f‖` over the region: exact for boxes (attained at
/// a vertex, coordinates separate) and for balls the certified bound
/// `‖diag(μ)(c - a)‖ + r·max μ`, which is exact when the anchor sits at the
/// center.
pub fn make_quadratic(
    mu: &[f64],
    anchor: &[f64],
    region: Region,
) -> Result<ConvexProblem, ProblemError> {
    region.validate()?;
    let dim = region.dim();
    if mu.len() != dim {
        return Err(ProblemError::DimensionMismatch {
            expected: dim,
            got: mu.len(),
        });
    }
    if anchor.len() != dim {
        return Err(ProblemError::DimensionMismatch {
            expected: dim,
            got: anchor.len(),
        });
    }
    for (index, &m) in mu.iter().enumerate() {
        if !(m.is_finite() && m > 0.0) {
            return Err(ProblemError::InvalidCurvature { index });
        }
    }
    let projected = region.project(anchor)?;
    let gap = dist(&projected, anchor);
    if gap > FEASIBILITY_TOL * (1.0 + norm(anchor)) {
        return Err(ProblemError::AnchorInfeasible { dist: gap });
    }

    let g_bound = match &region {
        Region::Box { lo, hi } => {
            let mut sq = 0.0;
            for i in 0..dim {
                let reach = (hi[i] - anchor[i]).max(anchor[i] - lo[i]).max(0.0);
                let gi = mu[i] * reach;
                sq += gi * gi;
            }
            sq.sqrt()
        }
        Region::Ball { center, radius } => {
            let off = center
                .iter()
                .zip(anchor)
                .zip(mu)
                .map(|((c, a), m)| {
                    let d = m * (c - a);
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            let mu_max = mu.iter().copied().fold(0.0, f64::max);
            off + radius * mu_max
        }
    };

    let mu_obj: Arc<[f64]> = mu.into();
    let anchor_obj: Arc<[f64]> = anchor.into();
    let mu_grad = Arc::clone(&mu_obj);
    let anchor_grad = Arc::clone(&anchor_obj);

    Ok(ConvexProblem {
        dim,
        r_x: region.diameter(),
        region,
        objective: Arc::new(move |x: &[f64]| {
            0.5 * x
                .iter()
                .zip(anchor_obj.iter())
                .zip(mu_obj.iter())
                .map(|((xi, ai), mi)| mi * (xi - ai) * (xi - ai))
                .sum::<f64>()
        }),
        gradient: Arc::new(move |x: &[f64], out: &mut [f64]| {
            for i in 0..x.len() {
                out[i] = mu_grad[i] * (x[i] - anchor_grad[i]);
            }
        }),
        g_bound,
        optimum: Some(Optimum {
            x_star: anchor.to_vec(),
            f_star: 0.0,
        }),
    })
}

/// Gradient noise model and its certified sub-Gaussian proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// i.i.d. per-coordinate `N(0, σ²)`; `σ = 0` degenerates to the exact
    /// gradient oracle.
    Gaussian { sigma: f64 },
    /// ξ uniform on the ball of radius `ν`; keeps `‖g‖ ≤ sup‖∇f‖ + ν`.
    BoundedUniform { nu: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), ProblemError> {
        match self {
            NoiseModel::Gaussian { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(ProblemError::InvalidNoiseParam(*sigma));
                }
            }
            NoiseModel::BoundedUniform { nu } => {
                if !(nu.is_finite() && *nu > 0.0) {
                    return Err(ProblemError::InvalidNoiseParam(*nu));
                }
            }
        }
        Ok(())
    }

    /// The declared sub-Gaussian variance proxy σ².
    ///
    /// Gaussian noise satisfies the moment-generating-function bound with
    /// σ² exactly. The bounded model declares `4G²` with `G = sup‖∇f‖ + ν`,
    /// the Hoeffding proxy for an almost-surely bounded gradient; nothing
    /// sharper is claimed.
    pub fn sigma2_proxy(&self, grad_sup: f64) -> f64 {
        match self {
            NoiseModel::Gaussian { sigma } => sigma * sigma,
            NoiseModel::BoundedUniform { nu } => {
                let g = grad_sup + nu;
                4.0 * g * g
            }
        }
    }

    /// Almost-sure bound on `‖g_t‖`, when the model provides one.
    pub fn gradient_bound(&self, grad_sup: f64) -> Option<f64> {
        match self {
            NoiseModel::Gaussian { .. } => None,
            NoiseModel::BoundedUniform { nu } => Some(grad_sup + nu),
        }
    }

    /// Draw one noise vector into `out`.
    pub fn sample_into(&self, rng: &mut TrajectoryRng, out: &mut [f64]) {
        match self {
            NoiseModel::Gaussian { sigma } => {
                if *sigma == 0.0 {
                    out.fill(0.0);
                    return;
                }
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sigma * z;
                }
            }
            NoiseModel::BoundedUniform { nu } => {
                // Uniform on the ball: Gaussian direction, radius nu*U^(1/d).
                let d = out.len();
                loop {
                    let mut sq = 0.0;
                    for v in out.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = z;
                        sq += z * z;
                    }
                    if sq > 0.0 {
                        let u: f64 = rng.random();
                        let scale = nu * u.powf(1.0 / d as f64) / sq.sqrt();
                        for v in out.iter_mut() {
                            *v *= scale;
                        }
                        return;
                    }
                }
            }
        }
    }
}

/// One stochastic gradient draw `g = ∇f(x) + ξ` at a feasible `x`.
pub fn sample_gradient(
    problem: &ConvexProblem,
    noise: &NoiseModel,
    x: &[f64],
    rng: &mut TrajectoryRng,
) -> Vec<f64> {
    let mut g = problem.gradient(x);
    let mut xi = vec![0.0; g.len()];
    noise.sample_into(rng, &mut xi);
    for (gi, ni) in g.iter_mut().zip(&xi) {
        *gi += ni;
    }
    g
}
