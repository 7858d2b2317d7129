use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adjoint::NormMode;
use crate::field::FieldSpec;
use crate::solver::Tolerances;

use super::HarnessError;

/// Loss applied to the forward trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum LossSpec {
    /// `L = Σⱼ zⱼ(T)`.
    #[default]
    TerminalSum,
    /// `L = Σᵢ ‖z(tᵢ) − target(tᵢ)‖²`, averaged over the batch when training.
    /// Targets are zero outside training. The last time must equal the span end.
    TrajectoryL2 { times: Vec<f64> },
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub ground_truth: FieldSpec,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Number of initial conditions in the (full) batch.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Tolerances for generating the synthetic observations.
    #[serde(default = "default_data_tol")]
    pub data_tolerance: [f64; 2],
}

fn default_lr() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    8
}
fn default_data_tol() -> [f64; 2] {
    [1e-10, 1e-12]
}
fn default_span() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_tolerances() -> Vec<[f64; 2]> {
    vec![[1e-3, 1e-6], [1e-4, 1e-7], [1e-5, 1e-8]]
}
fn default_modes() -> Vec<NormMode> {
    vec![NormMode::Default, NormMode::Seminorm]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub field: FieldSpec,
    /// Further fields checked by `gradcheck` after `field`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_fields: Vec<FieldSpec>,
    #[serde(default = "default_span")]
    pub t_span: [f64; 2],
    /// `(rtol, atol)` pairs.
    #[serde(default = "default_tolerances")]
    pub tolerances: Vec<[f64; 2]>,
    #[serde(default = "default_modes")]
    pub norm_modes: Vec<NormMode>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub loss: LossSpec,
    /// Drawn from uniform(−1, 1) with the cell seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.tolerances.is_empty() {
            return bad("at least one tolerance pair is required");
        }
        if self.norm_modes.is_empty() {
            return bad("at least one norm mode is required");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        for t in &self.tolerances {
            Tolerances::new(t[0], t[1]).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        let [t0, t1] = self.t_span;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return bad("t_span must be finite with t_span[1] > t_span[0]");
        }
        if let LossSpec::TrajectoryL2 { times } = &self.loss {
            if times.is_empty() {
                return bad("trajectory_l2 needs observation times");
            }
            if times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= t0 {
                return bad("observation times must be strictly increasing and after t_span[0]");
            }
            if *times.last().expect("non-empty") != t1 {
                return bad("the last observation time must equal t_span[1]");
            }
        }
        if let Some(z0) = &self.initial_state {
            if z0.len() != self.field.state_dim {
                return bad("initial_state length must equal field.state_dim");
            }
        }
        for spec in std::iter::once(&self.field).chain(&self.extra_fields) {
            spec.build(None)
                .map_err(|e| HarnessError::Config(format!("field: {e}")))?;
        }
        if let Some(train) = &self.train {
            if train.ground_truth.state_dim != self.field.state_dim {
                return bad("ground truth and learner must share state_dim");
            }
            if train.batch_size == 0 {
                return bad("batch_size must be >= 1");
            }
            if !(train.learning_rate.is_finite() && train.learning_rate > 0.0) {
                return bad("learning_rate must be positive");
            }
            train
                .ground_truth
                .build(None)
                .map_err(|e| HarnessError::Config(format!("ground_truth: {e}")))?;
        }
        Ok(())
    }

    pub fn tolerance_pairs(&self) -> Vec<Tolerances> {
        self.tolerances
            .iter()
            .map(|t| Tolerances::new(t[0], t[1]).expect("validated"))
            .collect()
    }

    /// Observation times of the loss; the span end for a terminal loss.
    pub fn observation_times(&self) -> Vec<f64> {
        match &self.loss {
            LossSpec::TerminalSum => vec![self.t_span[1]],
            LossSpec::TrajectoryL2 { times } => times.clone(),
        }
    }

    pub fn apply_seed_override(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"field": {"kind": "linear", "state_dim": 1, "params": [-1.0]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.tolerances.len(), 3);
        assert_eq!(cfg.norm_modes, vec![NormMode::Default, NormMode::Seminorm]);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.loss, LossSpec::TerminalSum);
        assert_eq!(cfg.observation_times(), vec![1.0]);
    }

    #[test]
    fn rejects_empty_lists() {
        let base = r#""field": {"kind": "linear", "state_dim": 1, "params": [-1.0]}"#;
        for extra in [
            r#""tolerances": []"#,
            r#""norm_modes": []"#,
            r#""seeds": []"#,
        ] {
            let text = format!("{{{base}, {extra}}}");
            assert!(matches!(
                ExperimentConfig::from_json(&text),
                Err(HarnessError::Config(_))
            ));
        }
    }

    #[test]
    fn trajectory_times_must_end_at_span_end() {
        let text = r#"{"field": {"kind": "linear", "state_dim": 1, "params": [-1.0]},
                       "loss": {"kind": "trajectory_l2", "times": [0.5, 0.9]}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let text = text.replace("0.9", "1.0");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg.observation_times(), vec![0.5, 1.0]);
    }

    #[test]
    fn seed_override_replaces_seed_list() {
        let mut cfg = ExperimentConfig::from_json(
            r#"{"field": {"kind": "linear", "state_dim": 1, "params": [-1.0]}, "seeds": [1, 2, 3]}"#,
        )
        .unwrap();
        cfg.apply_seed_override(Some(9));
        assert_eq!(cfg.seeds, vec![9]);
    }
}
