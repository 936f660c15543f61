//! Run configuration: one TOML file with a section per subsystem. Unknown
//! keys are errors. The hash covers the canonical JSON form, so key order
//! and formatting in the file do not change it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{MctsConfig, RewardConfig, SacConfig, T_MAX};
use crate::gnn::Aggregation;
use crate::graph::CycleThresholds;
use crate::real17;
use crate::sim::{ops_catalog, DqnConfig, ScenarioKind, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    /// Provider vector width.
    pub d_g: usize,
    pub d_m: usize,
    pub d_s: usize,
    /// Width of the latent topics behind the simulated world.
    pub d_topic: usize,
    /// Alignment space width for fusion and pretraining heads.
    pub d_a: usize,
    pub d_h: usize,
    pub d_r: usize,
    pub d_z: usize,
    /// Action embedding width; must match the operations catalog.
    pub d_act: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            d_g: 32,
            d_m: 16,
            d_s: 32,
            d_topic: 16,
            d_a: 16,
            d_h: 16,
            d_r: 16,
            d_z: 8,
            d_act: ops_catalog().dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    #[serde(with = "real17")]
    pub dynamic_edge: f64,
    #[serde(with = "real17")]
    pub merge: f64,
    pub evict_min_visits: u64,
    /// Cap on the semantic-neighbor gate.
    #[serde(with = "real17")]
    pub beta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            dynamic_edge: 0.7,
            merge: 0.9,
            evict_min_visits: 5,
            beta: 0.8,
        }
    }
}

impl Thresholds {
    pub fn cycle(&self) -> CycleThresholds {
        CycleThresholds {
            dynamic_edge: self.dynamic_edge,
            merge: self.merge,
            evict_min_visits: self.evict_min_visits,
        }
    }
}

/// Simulated factory shape and signal levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub lines: usize,
    pub equipment_per_line: usize,
    pub suppliers: usize,
    pub products: usize,
    #[serde(with = "real17")]
    pub meta_signal: f64,
    #[serde(with = "real17")]
    pub meta_noise: f64,
    #[serde(with = "real17")]
    pub provider_noise: f64,
    #[serde(with = "real17")]
    pub report_signal: f64,
    #[serde(with = "real17")]
    pub report_noise: f64,
    pub backlog_max: u32,
    #[serde(with = "real17")]
    pub budget: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            lines: w.lines,
            equipment_per_line: w.equipment_per_line,
            suppliers: w.suppliers,
            products: w.products,
            meta_signal: w.meta_signal,
            meta_noise: w.meta_noise,
            provider_noise: w.provider_noise,
            report_signal: w.report_signal,
            report_noise: w.report_noise,
            backlog_max: w.backlog_max,
            budget: w.budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    #[serde(with = "real17")]
    pub lr: f64,
    pub epochs: usize,
    /// Categories and documents per category in the alignment corpus; the
    /// evaluation corpus has the same shape.
    pub corpus_classes: usize,
    pub corpus_per_class: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 200,
            corpus_classes: 8,
            corpus_per_class: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnSection {
    pub layers: usize,
    pub aggregation: Aggregation,
    #[serde(with = "real17")]
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
}

impl Default for GnnSection {
    fn default() -> Self {
        Self {
            layers: 2,
            aggregation: Aggregation::Attn,
            pretrain_lr: 0.05,
            pretrain_epochs: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MctsSection {
    pub budget: usize,
    #[serde(with = "real17")]
    pub c_uct: f64,
}

impl Default for MctsSection {
    fn default() -> Self {
        let d = MctsConfig::default();
        Self {
            budget: d.budget,
            c_uct: d.c_uct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Repetitions per configuration.
    pub seeds: usize,
    /// Decision steps per episode.
    pub t_max: usize,
    pub sac_episodes: usize,
    pub dqn_episodes: usize,
    /// Prepared scenarios the training environment samples from.
    pub train_pool: usize,
    pub eval_episodes: usize,
    /// Relative frequency of each scenario kind, in kind order.
    #[serde(with = "real17::vec")]
    pub kind_weights: Vec<f64>,
    pub trigger_episodes: usize,
    /// Worker threads for independent cells; 0 picks the machine default.
    pub threads: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: 10,
            t_max: T_MAX,
            sac_episodes: 2000,
            dqn_episodes: 1500,
            train_pool: 160,
            eval_episodes: 80,
            kind_weights: vec![1.0; ScenarioKind::ALL.len()],
            trigger_episodes: 200,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: Dims,
    pub thresholds: Thresholds,
    pub world: WorldSection,
    pub fusion: FusionSection,
    pub gnn: GnnSection,
    pub reward: RewardConfig,
    pub sac: SacConfig,
    pub mcts: MctsSection,
    pub dqn: DqnConfig,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: Dims::default(),
            thresholds: Thresholds::default(),
            world: WorldSection::default(),
            fusion: FusionSection::default(),
            gnn: GnnSection::default(),
            reward: RewardConfig::default(),
            sac: SacConfig::default(),
            mcts: MctsSection::default(),
            dqn: DqnConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn check(ok: bool, what: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(what.to_owned()))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        // the real17 fields only format directly under serde_json
        let value = serde_json::to_value(self).expect("config is always serializable");
        toml::to_string_pretty(&value).expect("config maps onto TOML")
    }

    /// sha256 of the canonical JSON form, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is always serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dims;
        check(
            [d.d_g, d.d_m, d.d_s, d.d_topic, d.d_a, d.d_h, d.d_r, d.d_z].iter().all(|&x| x > 0),
            "dimensions must be positive",
        )?;
        check(d.d_act == ops_catalog().dim(), "dims.d_act must match the action catalog width")?;
        let t = &self.thresholds;
        check(t.dynamic_edge > 0.0 && t.dynamic_edge < 1.0, "thresholds.dynamic_edge must be in (0, 1)")?;
        check(t.merge > 0.0 && t.merge <= 1.0, "thresholds.merge must be in (0, 1]")?;
        check(t.merge > t.dynamic_edge, "thresholds.merge must exceed thresholds.dynamic_edge")?;
        check(t.beta > 0.0 && t.beta <= 1.0, "thresholds.beta must be in (0, 1]")?;
        let w = &self.world;
        check(w.lines > 0 && w.equipment_per_line > 0, "world needs lines and equipment")?;
        check(w.suppliers > 0 && w.products > 0, "world needs suppliers and products")?;
        check(w.budget > 0.0 && w.budget.is_finite(), "world.budget must be positive")?;
        check(
            [w.meta_signal, w.meta_noise, w.provider_noise, w.report_signal, w.report_noise]
                .iter()
                .all(|x| x.is_finite() && *x >= 0.0),
            "world signal and noise levels must be finite and non-negative",
        )?;
        check(self.fusion.lr.is_finite() && self.fusion.lr >= 0.0, "fusion.lr must be non-negative")?;
        check(
            self.fusion.corpus_classes >= 2 && self.fusion.corpus_per_class >= 1,
            "fusion corpus needs at least 2 classes",
        )?;
        check((1..=8).contains(&self.gnn.layers), "gnn.layers must be in 1..=8")?;
        check(
            self.gnn.pretrain_lr.is_finite() && self.gnn.pretrain_lr >= 0.0,
            "gnn.pretrain_lr must be non-negative",
        )?;
        self.reward.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.sac;
        check(s.gamma >= 0.0 && s.gamma <= 1.0, "sac.gamma must be in [0, 1]")?;
        check(s.tau > 0.0 && s.tau <= 1.0, "sac.tau must be in (0, 1]")?;
        check(s.lambda >= 0.0 && s.lambda.is_finite(), "sac.lambda must be non-negative")?;
        check(s.batch_size > 0 && s.replay_capacity >= s.batch_size, "sac batch must fit in replay")?;
        check(s.hidden > 0 && s.sync_period > 0, "sac.hidden and sac.sync_period must be positive")?;
        check(self.mcts.budget > 0, "mcts.budget must be positive")?;
        check(self.mcts.c_uct >= 0.0, "mcts.c_uct must be non-negative")?;
        check(self.dqn.gamma >= 0.0 && self.dqn.gamma <= 1.0, "dqn.gamma must be in [0, 1]")?;
        check(self.dqn.resolution > 0.0, "dqn.resolution must be positive")?;
        let e = &self.experiment;
        check(e.seeds > 0, "experiment.seeds must be positive")?;
        check((1..=T_MAX).contains(&e.t_max), "experiment.t_max must be in 1..=5")?;
        check(e.train_pool > 0 && e.eval_episodes > 0, "experiment pools must be non-empty")?;
        check(
            e.kind_weights.len() == ScenarioKind::ALL.len()
                && e.kind_weights.iter().all(|w| w.is_finite() && *w >= 0.0)
                && e.kind_weights.iter().sum::<f64>() > 0.0,
            "experiment.kind_weights needs 8 non-negative weights with a positive sum",
        )?;
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        let w = &self.world;
        WorldConfig {
            lines: w.lines,
            equipment_per_line: w.equipment_per_line,
            suppliers: w.suppliers,
            products: w.products,
            d_topic: self.dims.d_topic,
            d_g: self.dims.d_g,
            d_m: self.dims.d_m,
            d_s: self.dims.d_s,
            meta_signal: w.meta_signal,
            meta_noise: w.meta_noise,
            provider_noise: w.provider_noise,
            report_signal: w.report_signal,
            report_noise: w.report_noise,
            dynamic_threshold: self.thresholds.dynamic_edge,
            backlog_max: w.backlog_max,
            budget: w.budget,
        }
    }

    pub fn mcts_config(&self) -> MctsConfig {
        MctsConfig {
            budget: self.mcts.budget,
            max_depth: self.experiment.t_max,
            c_uct: self.mcts.c_uct,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 4\n[thresholds]\nbeta = 0.5\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.thresholds.beta, 0.5);
        assert_eq!(cfg.thresholds.dynamic_edge, 0.7);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sede = 4\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_toml("[sac]\ngama = 0.9\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[reward]\nalpha = 0.9\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn out_of_range_values_are_invalid() {
        for text in [
            "[thresholds]\ndynamic_edge = 1.5\n",
            "[thresholds]\nmerge = 0.6\n",
            "[experiment]\nt_max = 9\n",
            "[dims]\nd_act = 3\n",
            "[experiment]\nkind_weights = [1.0]\n",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(ConfigError::Invalid(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = RunConfig::from_toml("seed = 4\n[sac]\ngamma = 0.9\n").unwrap();
        let b = RunConfig::from_toml("[sac]\n  gamma   = 0.90\n\n# note\n[thresholds]\nbeta = 0.8\n\nseed = 4\n");
        // `seed` after a table header belongs to that table
        assert!(b.is_err());
        let b = RunConfig::from_toml("seed = 4 # note\n\n[sac]\n  gamma   = 0.90\n").unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
