use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::error::ConfigError;
use super::resolve::ResolvedConfig;
use super::value::{Entry, Scalar};

/// Section whose list-valued keys span the experiment's parameter space.
pub const AXES_PREFIX: &str = "experiment.axes";
pub const DEFAULT_MAX_AXES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterAxis {
    /// Key path the axis assigns, with the axes prefix stripped.
    pub key_path: String,
    pub values: Vec<Scalar>,
}

/// One point of the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCombination {
    pub assignments: BTreeMap<String, Scalar>,
    pub ordinal: usize,
}

impl ParameterCombination {
    pub fn empty() -> Self {
        ParameterCombination { assignments: BTreeMap::new(), ordinal: 0 }
    }

    pub fn get(&self, key: &str) -> Option<&Scalar> {
        self.assignments.get(key)
    }
}

/// Collects the axes declared under `experiment.axes`, ordered by key path.
/// Scalar entries in that section are ordinary values, not axes.
pub fn axes(rc: &ResolvedConfig) -> Result<Vec<ParameterAxis>, ConfigError> {
    let prefix = format!("{AXES_PREFIX}.");
    let mut out = Vec::new();
    for (key, entry) in rc.entries.range(prefix.clone()..) {
        let Some(axis_key) = key.strip_prefix(&prefix) else { break };
        let Entry::List(values) = entry else { continue };
        if values.is_empty() {
            return Err(ConfigError::EmptyAxis { key: axis_key.to_string() });
        }
        if values.iter().any(|v| v.kind() != values[0].kind()) {
            return Err(ConfigError::HeterogeneousAxis { key: axis_key.to_string() });
        }
        out.push(ParameterAxis { key_path: axis_key.to_string(), values: values.clone() });
    }
    out.sort_by(|a, b| a.key_path.cmp(&b.key_path));
    Ok(out)
}

pub fn expand_parameter_space(rc: &ResolvedConfig) -> Result<Vec<ParameterCombination>, ConfigError> {
    expand_with_limit(rc, DEFAULT_MAX_AXES)
}

pub fn expand_with_limit(rc: &ResolvedConfig, max_axes: usize) -> Result<Vec<ParameterCombination>, ConfigError> {
    let axes = axes(rc)?;
    if axes.len() > max_axes {
        return Err(ConfigError::TooManyAxes { count: axes.len(), limit: max_axes });
    }
    Ok(cartesian(&axes))
}

/// Full Cartesian product of `axes` in their given order, last axis varying
/// fastest. No axes yield the single empty combination.
pub fn cartesian(axes: &[ParameterAxis]) -> Vec<ParameterCombination> {
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; axes.len()];
    for ordinal in 0..total {
        let assignments = axes
            .iter()
            .zip(&digits)
            .map(|(axis, &d)| (axis.key_path.clone(), axis.values[d].clone()))
            .collect();
        out.push(ParameterCombination { assignments, ordinal });
        for pos in (0..axes.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < axes[pos].values.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
    out
}
