//! Runtime profiling: per-category execution time estimates.
//!
//! Observed task runtimes are normalized to a reference machine of speed 1.0
//! before they are stored, so samples from machines of different speeds mix.
//! The estimator is the sample mean. Categories without samples fall back to
//! the task's nominal work.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cloud::InstanceType;
use crate::workflow::TaskSpec;

/// Speed of the reference machine that normalized samples refer to.
pub const REFERENCE_SPEED: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("observation for category {category:?} must be positive, got {value}")]
    NonPositiveObservation { category: String, value: f64 },
}

/// Collected runtime samples per task category, at reference speed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuntimeProfile {
    samples: BTreeMap<String, Vec<f64>>,
}

impl RuntimeProfile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a runtime observed on a machine of the given speed. A task that
    /// ran for `seconds` at `speed_factor` 2.0 is stored as a sample of
    /// `2 * seconds` at the reference speed.
    pub fn record(
        &mut self,
        category: &str,
        seconds: f64,
        speed_factor: f64,
    ) -> Result<(), ProfileError> {
        let normalized = seconds * speed_factor / REFERENCE_SPEED;
        if !(normalized > 0.0) {
            return Err(ProfileError::NonPositiveObservation {
                category: category.to_string(),
                value: normalized,
            });
        }
        self.samples
            .entry(category.to_string())
            .or_default()
            .push(normalized);
        Ok(())
    }

    /// Sample-mean runtime of a category at reference speed, if observed.
    pub fn mean(&self, category: &str) -> Option<f64> {
        let samples = self.samples.get(category)?;
        let sum: f64 = samples.iter().sum();
        Some(sum / samples.len() as f64)
    }

    pub fn sample_count(&self, category: &str) -> usize {
        self.samples.get(category).map_or(0, Vec::len)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }

    /// Estimated runtime of `task` at reference speed: the profiled mean when
    /// the category has samples, the nominal work otherwise.
    pub fn reference_estimate(&self, task: &TaskSpec) -> f64 {
        self.mean(&task.category).unwrap_or(task.nominal_work)
    }
}

/// Estimated runtime of `task` on one core of `instance_type`.
pub fn estimate_runtime(
    task: &TaskSpec,
    instance_type: &InstanceType,
    profile: &RuntimeProfile,
) -> f64 {
    profile.reference_estimate(task) * REFERENCE_SPEED / instance_type.speed_factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Venue;
    use crate::workflow::TaskId;

    fn task(category: &str, work: f64) -> TaskSpec {
        TaskSpec {
            id: TaskId::new("t"),
            category: category.into(),
            nominal_work: work,
            output_data: 0.0,
        }
    }

    fn itype(speed: f64) -> InstanceType {
        InstanceType {
            name: "ty".into(),
            venue: Venue::Private,
            cores: 1,
            speed_factor: speed,
            price_per_quantum: 0.0,
            capacity_limit: None,
        }
    }

    #[test]
    fn empty_profile_falls_back_to_nominal_work() {
        let profile = RuntimeProfile::new();
        assert_eq!(estimate_runtime(&task("model", 100.0), &itype(2.0), &profile), 50.0);
        assert_eq!(estimate_runtime(&task("model", 100.0), &itype(0.5), &profile), 200.0);
    }

    #[test]
    fn samples_are_normalized_by_machine_speed() {
        let mut profile = RuntimeProfile::new();
        profile.record("model", 30.0, 2.0).unwrap();
        assert_eq!(profile.mean("model"), Some(60.0));
    }

    #[test]
    fn estimator_is_the_sample_mean() {
        let mut profile = RuntimeProfile::new();
        profile.record("model", 70.0, 1.0).unwrap();
        profile.record("model", 90.0, 1.0).unwrap();
        assert_eq!(profile.mean("model"), Some(80.0));
        assert_eq!(estimate_runtime(&task("model", 1000.0), &itype(2.0), &profile), 40.0);
        // Other categories still use their nominal work.
        assert_eq!(estimate_runtime(&task("render", 10.0), &itype(1.0), &profile), 10.0);
    }

    #[test]
    fn observations_must_be_positive() {
        let mut profile = RuntimeProfile::new();
        assert!(matches!(
            profile.record("model", 0.0, 1.0),
            Err(ProfileError::NonPositiveObservation { .. })
        ));
        assert!(matches!(
            profile.record("model", -5.0, 1.0),
            Err(ProfileError::NonPositiveObservation { .. })
        ));
    }
}
