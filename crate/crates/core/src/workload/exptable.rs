use serde::{Deserialize, Serialize};

use super::WorkloadError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

/// Precomputed `exp(-k h / tau)` for both STDP time constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTable {
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub h: f64,
    values_plus: Vec<f64>,
    values_minus: Vec<f64>,
}

fn positive(name: &str, v: f64) -> Result<(), WorkloadError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(WorkloadError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

/// Same expression for table entries and the out-of-range fallback, so the
/// two paths agree bit for bit.
#[inline]
fn decay(steps: u64, h: f64, tau: f64) -> f64 {
    (-(steps as f64) * h / tau).exp()
}

/// Enough entries to cover ten of the longer time constant.
pub fn default_length(tau_plus: f64, tau_minus: f64, h: f64) -> usize {
    ((10.0 * tau_plus.max(tau_minus) / h).ceil() as usize).max(1)
}

pub fn build_table(tau_plus: f64, tau_minus: f64, h: f64, len: usize) -> Result<ExpTable, WorkloadError> {
    positive("tau_plus", tau_plus)?;
    positive("tau_minus", tau_minus)?;
    positive("h", h)?;
    if len == 0 {
        return Err(WorkloadError::Invalid("table length must be at least 1".into()));
    }
    let fill = |tau: f64| -> Result<Vec<f64>, WorkloadError> {
        let v: Vec<f64> = (0..len as u64).map(|k| decay(k, h, tau)).collect();
        if v.windows(2).any(|w| w[1] >= w[0]) {
            return Err(WorkloadError::Invalid(format!(
                "table of {len} entries with h = {h}, tau = {tau} is not strictly decreasing; shorten it"
            )));
        }
        Ok(v)
    };
    Ok(ExpTable { tau_plus, tau_minus, h, values_plus: fill(tau_plus)?, values_minus: fill(tau_minus)? })
}

impl ExpTable {
    pub fn len(&self) -> usize {
        self.values_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_plus.is_empty()
    }

    fn tau(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Plus => self.tau_plus,
            Branch::Minus => self.tau_minus,
        }
    }

    pub fn values(&self, branch: Branch) -> &[f64] {
        match branch {
            Branch::Plus => &self.values_plus,
            Branch::Minus => &self.values_minus,
        }
    }

    pub fn direct(&self, branch: Branch, delta_steps: u64) -> f64 {
        decay(delta_steps, self.h, self.tau(branch))
    }
}

/// Table entry when in range, direct evaluation beyond it.
pub fn exp_lookup(t: &ExpTable, branch: Branch, delta_steps: u64) -> f64 {
    match t.values(branch).get(delta_steps as usize) {
        Some(v) => *v,
        None => t.direct(branch, delta_steps),
    }
}

/// Direct evaluation without a table.
pub fn exp_direct(tau: f64, h: f64, delta_steps: u64) -> f64 {
    decay(delta_steps, h, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries() {
        let t = build_table(20.0, 20.0, 0.1, default_length(20.0, 20.0, 0.1)).unwrap();
        assert_eq!(t.len(), 2000);
        assert_eq!(exp_lookup(&t, Branch::Plus, 0), 1.0);
        assert!((exp_lookup(&t, Branch::Plus, 20) - (-0.1f64).exp()).abs() < 1e-15);
        assert!((exp_lookup(&t, Branch::Plus, 20) - 0.9048374).abs() < 1e-7);
        assert_eq!(exp_lookup(&t, Branch::Minus, 2000), (-2000.0f64 * 0.1 / 20.0).exp());
        let one = build_table(20.0, 10.0, 0.1, 1).unwrap();
        assert_eq!(one.values(Branch::Plus), &[1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_table(0.0, 1.0, 0.1, 10).is_err());
        assert!(build_table(1.0, -1.0, 0.1, 10).is_err());
        assert!(build_table(1.0, 1.0, f64::NAN, 10).is_err());
        assert!(build_table(1.0, 1.0, 0.1, 0).is_err());
        // Far enough out every entry underflows to zero.
        assert!(build_table(1.0, 1.0, 1.0, 2000).is_err());
    }
}
