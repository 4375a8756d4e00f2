use serde::{Deserialize, Serialize};

use super::exptable::{exp_direct, exp_lookup, Branch, ExpTable};
use super::WorkloadError;

/// Pair-based STDP with multiplicative bounds:
/// potentiation adds `lambda (w_max - w) K+`, depression subtracts
/// `lambda alpha w K-`, with `K = exp(-|dt| / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdpParams {
    pub lambda: f64,
    pub alpha: f64,
    pub w_max: f64,
    /// Milliseconds.
    pub tau_plus: f64,
    /// Milliseconds. One value shared by all synapses.
    pub tau_minus: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        StdpParams { lambda: 0.01, alpha: 1.0, w_max: 1.0, tau_plus: 20.0, tau_minus: 20.0 }
    }
}

impl StdpParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.lambda) && ok(self.w_max) && ok(self.tau_plus) && ok(self.tau_minus)) {
            return Err(WorkloadError::Invalid("lambda, w_max, tau_plus and tau_minus must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(WorkloadError::Invalid("alpha must be non-negative".into()));
        }
        Ok(())
    }
}

/// Applies one spike pair. `delta_steps > 0` means post after pre.
///
/// `h` is the resolution in milliseconds. A table, if given, must have been
/// built for the same time constants and resolution.
pub fn stdp_update(w: f64, delta_steps: i64, p: &StdpParams, h: f64, table: Option<&ExpTable>) -> Result<f64, WorkloadError> {
    if !(0.0..=p.w_max).contains(&w) {
        return Err(WorkloadError::WeightOutOfRange { w, w_max: p.w_max });
    }
    if let Some(t) = table {
        if t.tau_plus != p.tau_plus || t.tau_minus != p.tau_minus || t.h != h {
            return Err(WorkloadError::Invalid("lookup table was built for other time constants".into()));
        }
    }
    let steps = delta_steps.unsigned_abs();
    let kernel = |branch: Branch, tau: f64| match table {
        Some(t) => exp_lookup(t, branch, steps),
        None => exp_direct(tau, h, steps),
    };
    let next = match delta_steps.signum() {
        1 => w + p.lambda * (p.w_max - w) * kernel(Branch::Plus, p.tau_plus),
        -1 => w - p.lambda * p.alpha * w * kernel(Branch::Minus, p.tau_minus),
        _ => w,
    };
    Ok(next.clamp(0.0, p.w_max))
}
