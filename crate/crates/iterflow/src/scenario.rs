//! Scenario files: one TOML document describing a complete run.
//!
//! A scenario names the workflow (the built-in `dengue` study or a path to a
//! workflow file), picks the execution mode, and optionally overrides noise,
//! pricing, replan thresholds, energy accounting, and the machine catalog.
//! Loading and building are separate steps so a caller can override fields
//! (say, from command-line flags) between them.
//!
//! Errors distinguish problems reading or parsing the files from problems
//! with what they say, so callers can exit differently for each.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::cloud::{default_catalog, InstanceType, PricingPolicy, ResourcePool, Venue};
use crate::optimizer::ReplanThresholds;
use crate::sim::{EnergyModel, NoiseModel};
use crate::workflow::{builtin_dengue_workflow, parse_workflow, WorkflowError, WorkflowGraph};

/// Which driver(s) a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Greedy,
    Iterative,
    Both,
}

impl Mode {
    pub fn runs_greedy(self) -> bool {
        matches!(self, Mode::Greedy | Mode::Both)
    }

    pub fn runs_iterative(self) -> bool {
        matches!(self, Mode::Iterative | Mode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Greedy => "greedy",
            Mode::Iterative => "iterative",
            Mode::Both => "both",
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Toml {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("workflow file {path}: {source}")]
    WorkflowSyntax {
        path: PathBuf,
        source: WorkflowError,
    },
    #[error("workflow {path}: {source}")]
    WorkflowInvalid {
        path: PathBuf,
        source: WorkflowError,
    },
    #[error("{0}")]
    Invalid(String),
}

impl ScenarioError {
    /// True for problems locating or reading configuration rather than
    /// problems with its meaning.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ScenarioError::Unreadable { .. }
                | ScenarioError::Toml { .. }
                | ScenarioError::WorkflowSyntax { .. }
        )
    }
}

/// A scenario file as written, before defaults and validation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `dengue` for the built-in workflow, or a workflow file path resolved
    /// against the scenario file's directory.
    pub workflow: String,
    pub mode: Option<Mode>,
    /// Defaults to the workflow's declared iteration count.
    pub iterations: Option<u32>,
    /// Required whenever noise is enabled.
    pub seed: Option<u64>,
    pub noise: Option<NoiseSection>,
    pub pricing: Option<PricingSection>,
    pub thresholds: Option<ThresholdsSection>,
    pub energy: Option<EnergySection>,
    /// Machine catalog; omitted means the default catalog.
    pub instance_types: Option<Vec<InstanceTypeSection>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindName {
    None,
    UniformFactor,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKindName,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    pub quantum_seconds: Option<f64>,
    pub min_quanta: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSection {
    pub min_relative_gain: Option<f64>,
    pub weight_time: Option<f64>,
    pub weight_cost: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub unit_power: Option<f64>,
    pub include_idle: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceTypeSection {
    pub name: String,
    pub venue: Venue,
    pub cores: u32,
    pub speed_factor: f64,
    #[serde(default)]
    pub price_per_quantum: f64,
    pub capacity_limit: Option<u32>,
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: WorkflowGraph,
    pub mode: Mode,
    pub iterations: u32,
    pub noise: NoiseModel,
    pub policy: PricingPolicy,
    pub thresholds: ReplanThresholds,
    pub energy: EnergyModel,
    pub catalog: Vec<InstanceType>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ScenarioError::Toml {
            path: path.to_path_buf(),
            source: Box::new(source),
        })
    }

    /// Resolves defaults, loads the workflow, and validates everything.
    /// Relative workflow paths resolve against `base`, the directory the
    /// scenario file came from.
    pub fn build(&self, base: &Path) -> Result<Scenario, ScenarioError> {
        let graph = if self.workflow == "dengue" {
            builtin_dengue_workflow()
        } else {
            let path = base.join(&self.workflow);
            let text =
                std::fs::read_to_string(&path).map_err(|source| ScenarioError::Unreadable {
                    path: path.clone(),
                    source,
                })?;
            parse_workflow(&text).map_err(|source| match source {
                WorkflowError::Syntax { .. } => ScenarioError::WorkflowSyntax { path, source },
                _ => ScenarioError::WorkflowInvalid { path, source },
            })?
        };

        let iterations = self.iterations.unwrap_or_else(|| graph.max_iterations());
        if iterations == 0 || iterations > graph.max_iterations() {
            return Err(ScenarioError::Invalid(format!(
                "iterations must be between 1 and {}, got {iterations}",
                graph.max_iterations()
            )));
        }

        let noise = self.build_noise()?;

        let defaults = PricingPolicy::default();
        let pricing = self.pricing.clone().unwrap_or(PricingSection {
            quantum_seconds: None,
            min_quanta: None,
        });
        let policy = PricingPolicy {
            quantum_seconds: pricing.quantum_seconds.unwrap_or(defaults.quantum_seconds),
            min_quanta: pricing.min_quanta.unwrap_or(defaults.min_quanta),
        };
        policy
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        let td = ReplanThresholds::default();
        let ts = self.thresholds.clone().unwrap_or(ThresholdsSection {
            min_relative_gain: None,
            weight_time: None,
            weight_cost: None,
        });
        let thresholds = ReplanThresholds {
            min_relative_gain: ts.min_relative_gain.unwrap_or(td.min_relative_gain),
            weight_time: ts.weight_time.unwrap_or(td.weight_time),
            weight_cost: ts.weight_cost.unwrap_or(td.weight_cost),
        };
        thresholds
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        let ed = EnergyModel::default();
        let es = self.energy.clone().unwrap_or(EnergySection {
            unit_power: None,
            include_idle: None,
        });
        let energy = EnergyModel {
            unit_power: es.unit_power.unwrap_or(ed.unit_power),
            include_idle: es.include_idle.unwrap_or(ed.include_idle),
        };
        if !(energy.unit_power >= 0.0 && energy.unit_power.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "energy unit_power must be finite and nonnegative, got {}",
                energy.unit_power
            )));
        }

        let catalog: Vec<InstanceType> = match &self.instance_types {
            None => default_catalog(),
            Some(sections) => sections
                .iter()
                .map(|s| InstanceType {
                    name: s.name.clone(),
                    venue: s.venue,
                    cores: s.cores,
                    speed_factor: s.speed_factor,
                    price_per_quantum: s.price_per_quantum,
                    capacity_limit: s.capacity_limit,
                })
                .collect(),
        };
        // The pool constructor owns catalog validation; a dry run surfaces
        // problems now instead of at execution time.
        ResourcePool::new(catalog.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        Ok(Scenario {
            graph,
            mode: self.mode.unwrap_or(Mode::Both),
            iterations,
            noise,
            policy,
            thresholds,
            energy,
            catalog,
        })
    }

    fn build_noise(&self) -> Result<NoiseModel, ScenarioError> {
        let Some(section) = &self.noise else {
            return Ok(NoiseModel::none());
        };
        match section.kind {
            NoiseKindName::None => {
                if section.low.is_some() || section.high.is_some() {
                    return Err(ScenarioError::Invalid(
                        "noise low/high only apply to kind uniform_factor".into(),
                    ));
                }
                Ok(NoiseModel::none())
            }
            NoiseKindName::UniformFactor => {
                let low = section.low.ok_or_else(|| {
                    ScenarioError::Invalid("noise.low is required for uniform_factor".into())
                })?;
                let high = section.high.ok_or_else(|| {
                    ScenarioError::Invalid("noise.high is required for uniform_factor".into())
                })?;
                let seed = self.seed.ok_or_else(|| {
                    ScenarioError::Invalid("seed is required when noise is enabled".into())
                })?;
                let model = NoiseModel::uniform(low, high, seed);
                model
                    .validate()
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                Ok(model)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::NoiseKind;
    use std::io::Write;

    const DENGUE_TOML: &str = r#"
workflow = "dengue"
mode = "both"
seed = 42

[noise]
kind = "uniform_factor"
low = 0.45
high = 0.55

[[instance_types]]
name = "cluster"
venue = "private"
cores = 2
speed_factor = 1.0
capacity_limit = 2

[[instance_types]]
name = "rented"
venue = "public"
cores = 2
speed_factor = 0.8
price_per_quantum = 0.48
"#;

    fn parse(text: &str) -> ScenarioConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn full_scenario_builds_with_defaults_filled_in() {
        let config = parse(DENGUE_TOML);
        let scenario = config.build(Path::new(".")).unwrap();
        assert_eq!(scenario.mode, Mode::Both);
        assert_eq!(scenario.iterations, 5);
        assert_eq!(
            scenario.noise,
            NoiseModel::uniform(0.45, 0.55, 42),
        );
        assert_eq!(scenario.policy, PricingPolicy::default());
        assert_eq!(scenario.thresholds, ReplanThresholds::default());
        assert_eq!(scenario.catalog.len(), 2);
        assert_eq!(scenario.catalog[0].name, "cluster");
        assert_eq!(scenario.catalog[1].price_per_quantum, 0.48);
        assert_eq!(scenario.graph.task_count(), 8);
    }

    #[test]
    fn omitted_sections_mean_quiet_defaults() {
        let scenario = parse("workflow = \"dengue\"").build(Path::new(".")).unwrap();
        assert_eq!(scenario.noise.kind, NoiseKind::None);
        assert_eq!(scenario.mode, Mode::Both);
        assert_eq!(scenario.catalog, default_catalog());
        assert_eq!(scenario.energy, EnergyModel::default());
    }

    #[test]
    fn unknown_keys_are_rejected_at_parse_time() {
        let err = toml::from_str::<ScenarioConfig>("workflow = \"dengue\"\ntypo_key = 1")
            .unwrap_err();
        assert!(err.to_string().contains("typo_key"));
    }

    #[test]
    fn noisy_scenario_without_seed_is_invalid() {
        let text = r#"
workflow = "dengue"
[noise]
kind = "uniform_factor"
low = 0.9
high = 1.1
"#;
        let err = parse(text).build(Path::new(".")).unwrap_err();
        assert!(!err.is_config());
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn stray_noise_bounds_without_the_kind_are_invalid() {
        let text = r#"
workflow = "dengue"
[noise]
kind = "none"
low = 0.9
"#;
        let err = parse(text).build(Path::new(".")).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid(_)));
    }

    #[test]
    fn iteration_override_is_bounded_by_the_workflow() {
        for (text, ok) in [
            ("workflow = \"dengue\"\niterations = 3", true),
            ("workflow = \"dengue\"\niterations = 0", false),
            ("workflow = \"dengue\"\niterations = 9", false),
        ] {
            let result = parse(text).build(Path::new("."));
            assert_eq!(result.is_ok(), ok, "{text}");
        }
    }

    #[test]
    fn bad_catalogs_and_policies_are_validation_errors() {
        let dup = r#"
workflow = "dengue"
[[instance_types]]
name = "x"
venue = "private"
cores = 1
speed_factor = 1.0
[[instance_types]]
name = "x"
venue = "private"
cores = 1
speed_factor = 1.0
"#;
        let err = parse(dup).build(Path::new(".")).unwrap_err();
        assert!(!err.is_config());

        let bad_quantum = "workflow = \"dengue\"\n[pricing]\nquantum_seconds = 0.0";
        let err = parse(bad_quantum).build(Path::new(".")).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid(_)));
    }

    #[test]
    fn workflow_paths_resolve_against_the_scenario_directory() {
        let dir = tempfile::tempdir().unwrap();
        let wf_path = dir.path().join("tiny.wf");
        let mut f = std::fs::File::create(&wf_path).unwrap();
        writeln!(f, "task a ca 100 0").unwrap();
        writeln!(f, "task b cb 200 0").unwrap();
        writeln!(f, "edge a b").unwrap();
        drop(f);

        let config = parse("workflow = \"tiny.wf\"");
        let scenario = config.build(dir.path()).unwrap();
        assert_eq!(scenario.graph.task_count(), 2);
        assert_eq!(scenario.iterations, 1);

        let missing = parse("workflow = \"absent.wf\"");
        let err = missing.build(dir.path()).unwrap_err();
        assert!(err.is_config(), "missing workflow file reads as config error");
    }

    #[test]
    fn workflow_file_problems_split_into_syntax_and_semantics() {
        let dir = tempfile::tempdir().unwrap();

        let garbled = dir.path().join("garbled.wf");
        std::fs::write(&garbled, "task only-three-fields\n").unwrap();
        let err = parse("workflow = \"garbled.wf\"")
            .build(dir.path())
            .unwrap_err();
        assert!(err.is_config());

        let cyclic = dir.path().join("cyclic.wf");
        std::fs::write(&cyclic, "task a c 1 0\ntask b c 1 0\nedge a b\nedge b a\n").unwrap();
        let err = parse("workflow = \"cyclic.wf\"")
            .build(dir.path())
            .unwrap_err();
        assert!(!err.is_config(), "a cycle is a semantic problem");
    }
}
