//! Small numerical utilities shared across the crate.

/// Kahan–Babuška–Neumaier compensated accumulator.
///
/// Long runs accumulate millions of terms into the cumulative statistics
/// (`S_t`, `V_t`, weighted iterate sums, ...), and several identity checks
/// assert agreement at `1e-9` relative tolerance after 10⁶ steps. Plain
/// summation drifts past that; the Neumaier variant keeps the error at a few
/// ulps independent of length.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start from an already-known value.
    pub fn from_value(value: f64) -> Self {
        Self {
            sum: value,
            comp: 0.0,
        }
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn is_finite(&self) -> bool {
        self.value().is_finite()
    }
}

/// Numerically stable `log(Σ exp(a_i))` over a slice.
///
/// Returns `-inf` for an empty slice or when every term is `-inf`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All -inf (or empty): the sum is 0. A +inf term propagates.
        return max;
    }
    let sum: f64 = terms.iter().map(|a| (a - max).exp()).sum();
    max + sum.ln()
}
