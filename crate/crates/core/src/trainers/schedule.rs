use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Step sizes `a(n)`.
///
/// The polynomial form `a₀ / (1 + n/n₀)^κ` with `κ ∈ (0.5, 1]` satisfies the
/// Robbins-Monro conditions `Σ a(n) = ∞`, `Σ a(n)² < ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSizeSchedule {
    Constant { base: f64 },
    Polynomial { base: f64, exponent: f64, offset: f64 },
}

impl StepSizeSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSizeSchedule::Constant { base } => {
                if !(base > 0.0) {
                    return Err(Error::InvalidConfig("step size must be positive".into()));
                }
            }
            StepSizeSchedule::Polynomial { base, exponent, offset } => {
                if !(base > 0.0) || !(offset > 0.0) {
                    return Err(Error::InvalidConfig(
                        "polynomial schedule needs positive base and offset".into(),
                    ));
                }
                if !(exponent > 0.5 && exponent <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "polynomial exponent {exponent} outside (0.5, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the schedule meets the Robbins-Monro conditions.
    pub fn is_robbins_monro(&self) -> bool {
        matches!(self, StepSizeSchedule::Polynomial { .. }) && self.validate().is_ok()
    }

    pub fn step_size(&self, n: u64) -> f64 {
        match *self {
            StepSizeSchedule::Constant { base } => base,
            StepSizeSchedule::Polynomial { base, exponent, offset } => base / (1.0 + n as f64 / offset).powf(exponent),
        }
    }
}
