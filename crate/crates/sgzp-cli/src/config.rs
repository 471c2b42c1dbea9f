//! Scenario configuration: one JSON file holding the model, numerical
//! settings, and the experiment to run.

use serde::{Deserialize, Serialize};
use sgzp::{ModelSpec, NoiseModel, PerturbationSpec, Variant};

fn default_coarse_points() -> usize {
    33
}

fn default_refine_iters() -> usize {
    40
}

fn default_tol() -> f64 {
    1e-4
}

/// Numerical settings; `step` defaults to T/2000 when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default = "default_coarse_points")]
    pub coarse_points: usize,
    #[serde(default = "default_refine_iters")]
    pub refine_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            step: None,
            coarse_points: default_coarse_points(),
            refine_iters: default_refine_iters(),
            tol: default_tol(),
        }
    }
}

/// One (variant, pi) combination in a gamma sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantEntry {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
}

/// The experiment a scenario runs. Seeds are mandatory wherever randomness
/// is involved; there is no wall-clock default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Solve for the optimal switch time and emit the optimal trajectory.
    Solve,
    /// Optimal t* and J per (gamma, variant, pi) combination.
    SweepGamma {
        gammas: Vec<f64>,
        variants: Vec<VariantEntry>,
    },
    /// Optimal threshold against the baseline heuristics.
    Heuristics {
        #[serde(default = "default_mix_points")]
        mix_points: usize,
    },
    /// Mean-field runs with defender estimation noise injected per step.
    RobustEstimation {
        ranges: Vec<f64>,
        runs: usize,
        #[serde(default)]
        noise: NoiseModel,
        seed: u64,
    },
    /// Finite-N runs with per-germinator switch-time jitter.
    RobustSync {
        ranges: Vec<f64>,
        runs: usize,
        n: usize,
        seed: u64,
    },
    /// Verify the solved optimum against the maximum-principle conditions.
    Verify,
    /// Finite-N event simulations at the solved optimum.
    Simulate {
        n: usize,
        runs: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturb: Option<PerturbationSpec>,
    },
    /// Brute-force piecewise-constant policy search.
    Oracle { k: usize, levels: Vec<f64> },
}

fn default_mix_points() -> usize {
    21
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub numerics: Numerics,
    pub experiment: Experiment,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    #[cfg(test)]
    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate().map_err(|e| anyhow::anyhow!("model: {e}"))?;
        if let Some(step) = self.numerics.step {
            anyhow::ensure!(step > 0.0, "numerics.step must be positive");
        }
        anyhow::ensure!(self.numerics.tol > 0.0, "numerics.tol must be positive");
        match &self.experiment {
            Experiment::SweepGamma { gammas, variants } => {
                anyhow::ensure!(!gammas.is_empty(), "sweep_gamma needs gammas");
                anyhow::ensure!(!variants.is_empty(), "sweep_gamma needs variants");
                for v in variants {
                    anyhow::ensure!(
                        (v.variant == Variant::Halting) == v.pi.is_some(),
                        "pi must be present exactly for halting entries"
                    );
                }
            }
            Experiment::RobustEstimation { ranges, runs, .. } => {
                anyhow::ensure!(!ranges.is_empty() && *runs > 0, "empty estimation sweep");
                anyhow::ensure!(
                    self.model.variant == Variant::Adaptive,
                    "robust_estimation requires the adaptive variant"
                );
            }
            Experiment::RobustSync { ranges, runs, n, .. } => {
                anyhow::ensure!(!ranges.is_empty() && *runs > 0, "empty sync sweep");
                anyhow::ensure!(*n >= 2, "robust_sync needs a finite N >= 2");
            }
            Experiment::Simulate { n, runs, .. } => {
                anyhow::ensure!(*n >= 2 && *runs > 0, "simulate needs N >= 2 and runs > 0");
            }
            Experiment::Oracle { k, levels } => {
                anyhow::ensure!(*k > 0, "oracle needs at least one segment");
                anyhow::ensure!(
                    levels.contains(&0.0) && levels.contains(&1.0),
                    "oracle levels must include 0 and 1"
                );
            }
            Experiment::Solve | Experiment::Heuristics { .. } | Experiment::Verify => {}
        }
        Ok(())
    }

    /// Integration step, defaulting to T/2000.
    pub fn step(&self) -> f64 {
        self.numerics.step.unwrap_or_else(|| sgzp::default_step(&self.model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> &'static str {
        r#"{
          "model": {
            "variant": "no_halting",
            "beta": {"kind": "constant", "beta": 2.0},
            "gamma": 0.5,
            "t": 5.0,
            "init": {"s": 0.99, "g": 0.01, "z": 0.0, "p": 0.0},
            "damage": {
              "f": {"kind": "power", "p": 0.5},
              "g": {"kind": "linear", "k_g": 0.7}
            }
          },
          "experiment": {"kind": "solve"}
        }"#
    }

    #[test]
    fn parses_with_defaults_and_round_trips() {
        let config = ScenarioConfig::from_json(sample()).unwrap();
        assert_eq!(config.numerics, Numerics::default());
        assert!((config.step() - 5.0 / 2000.0).abs() < 1e-15);
        let json = config.to_json().unwrap();
        let back = ScenarioConfig::from_json(&json).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn rejects_zero_horizon() {
        let bad = sample().replace("\"t\": 5.0", "\"t\": 0.0");
        assert!(ScenarioConfig::from_json(&bad).is_err());
    }

    #[test]
    fn rejects_estimation_outside_adaptive() {
        let bad = sample().replace(
            r#"{"kind": "solve"}"#,
            r#"{"kind": "robust_estimation", "ranges": [0.1], "runs": 5, "seed": 1}"#,
        );
        assert!(ScenarioConfig::from_json(&bad).is_err());
    }

    #[test]
    fn seed_is_mandatory_for_stochastic_experiments() {
        let bad = sample().replace(
            r#"{"kind": "solve"}"#,
            r#"{"kind": "robust_sync", "ranges": [0.1], "runs": 5, "n": 100}"#,
        );
        assert!(ScenarioConfig::from_json(&bad).is_err());
    }
}
