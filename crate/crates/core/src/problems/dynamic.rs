use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Change schedule of a dynamic problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicSpec {
    /// Severity of change `n_t`.
    pub severity: usize,
    /// Change frequency `τ_t` in generations.
    pub frequency: usize,
    /// Total number of generations `T_max`.
    pub max_generations: usize,
}

impl DynamicSpec {
    pub fn new(severity: usize, frequency: usize, max_generations: usize) -> Result<Self> {
        let s = Self { severity, frequency, max_generations };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.severity < 1 || self.frequency < 1 {
            return Err(Error::Config("severity and frequency must be at least 1".into()));
        }
        if self.max_generations < self.frequency {
            return Err(Error::Config(format!(
                "max_generations ({}) must be at least the change frequency ({})",
                self.max_generations, self.frequency
            )));
        }
        Ok(())
    }

    /// Number of distinct environments visited over generations `0..T_max`.
    pub fn environments(&self) -> usize {
        (self.max_generations - 1) / self.frequency + 1
    }
}

/// Benchmark clock `t = ⌊τ / τ_t⌋ / n_t`.
pub fn time_index(spec: &DynamicSpec, generation: usize) -> f64 {
    (generation / spec.frequency) as f64 / spec.severity as f64
}

/// Online clock `t = τ / T_max`.
pub fn online_time(spec: &DynamicSpec, generation: usize) -> f64 {
    generation as f64 / spec.max_generations as f64
}
