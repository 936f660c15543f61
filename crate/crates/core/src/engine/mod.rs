//! Decision layer: business reward, action catalog, soft actor-critic over
//! graph state features, tree-search refinement of decision paths, and
//! decision-history write-back with explanations.

mod checkpoint;
mod history;
mod mcts;
pub mod nn;
mod sac;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::real17;

pub use checkpoint::{CheckpointError, EngineCheckpoint, CHECKPOINT_FORMAT_VERSION};
pub use history::{
    explain_decision, write_decision_history, CounterfactualStep, DecisionOutcome, ExplainError, Explanation,
    HeatMap, HISTORY_RELATION,
};
pub use mcts::{mcts_refine, path_return, MctsConfig, MctsError, MctsOutcome, PlanningModel};
pub use sac::{
    actor_objective, critic_loss, critic_regression, critic_targets, policy_features, sample_action, sync_target, train, ActionSample, Actor,
    Critic, GatBranch, ReplayBuffer, SacConfig, SacError, SacParams, TrainTrace, Transition,
    LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};

/// Upper bound on decision path length.
pub const T_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum WeightMode {
    Adaptive,
    Fixed {
        #[serde(with = "real17")]
        alpha: f64,
        #[serde(with = "real17")]
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Overflow penalty weight η.
    #[serde(with = "real17")]
    pub eta: f64,
    /// Hours.
    #[serde(with = "real17")]
    pub t_baseline: f64,
    #[serde(with = "real17")]
    pub budget_allocated: f64,
    /// Backlog normalization window N.
    pub backlog_window: u32,
    /// Budget value mapped to 1.0 before it enters the β weight.
    #[serde(with = "real17")]
    pub budget_max: f64,
    pub weight_mode: WeightMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            t_baseline: 7.8,
            budget_allocated: 10_000.0,
            backlog_window: 10,
            budget_max: 20_000.0,
            weight_mode: WeightMode::Adaptive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("non-finite reward input `{0}`")]
    NonFinite(&'static str),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::InvalidConfig(m.to_owned()));
        if !(self.eta >= 0.0) {
            return bad("eta must be >= 0");
        }
        if !(self.t_baseline > 0.0) || !(self.budget_allocated > 0.0) || !(self.budget_max > 0.0) {
            return bad("t_baseline, budget_allocated and budget_max must be > 0");
        }
        if self.backlog_window == 0 {
            return bad("backlog_window must be positive");
        }
        if let WeightMode::Fixed { alpha, beta } = self.weight_mode {
            if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
                return bad("fixed weights must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// (α, β) for an episode under this config.
    pub fn weights(&self, backlog: u32, budget: f64) -> (f64, f64) {
        match self.weight_mode {
            WeightMode::Adaptive => adaptive_weights(backlog, self.backlog_window, budget / self.budget_max),
            WeightMode::Fixed { alpha, beta } => (alpha, beta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Hours.
    pub t_execute: f64,
    pub cost_actual: f64,
    pub resource_overflow: f64,
}

/// `R = α(1 − t/t_b) + β(1 − cost/budget) − η·overflow`.
pub fn compute_reward(outcome: &Outcome, weights: (f64, f64), cfg: &RewardConfig) -> Result<f64, RewardError> {
    for (name, v) in [
        ("t_execute", outcome.t_execute),
        ("cost_actual", outcome.cost_actual),
        ("resource_overflow", outcome.resource_overflow),
        ("alpha", weights.0),
        ("beta", weights.1),
    ] {
        if !v.is_finite() {
            return Err(RewardError::NonFinite(name));
        }
    }
    let (alpha, beta) = weights;
    Ok(alpha * (1.0 - outcome.t_execute / cfg.t_baseline)
        + beta * (1.0 - outcome.cost_actual / cfg.budget_allocated)
        - cfg.eta * outcome.resource_overflow)
}

/// `α = 0.7 − 0.2·σ(backlog/N)`, `β = 0.3 + 0.4·tanh(0.5·budget_norm)`.
pub fn adaptive_weights(backlog: u32, window: u32, budget_norm: f64) -> (f64, f64) {
    let alpha = 0.7 - 0.2 * linalg::sigmoid(backlog as f64 / window as f64);
    let beta = 0.3 + 0.4 * (0.5 * budget_norm).tanh();
    (alpha, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub id: String,
    pub label: String,
    #[serde(with = "real17::vec")]
    pub embedding: Vec<f64>,
    #[serde(with = "real17")]
    pub resource_demand: f64,
    /// Hours.
    #[serde(with = "real17")]
    pub nominal_duration: f64,
    #[serde(with = "real17")]
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCatalog {
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog is empty")]
    Empty,
    #[error("duplicate action id `{0}`")]
    DuplicateId(String),
    #[error("action `{0}` embedding is not unit length or has the wrong width")]
    BadEmbedding(String),
    #[error("unknown action id `{0}`")]
    UnknownAction(String),
    #[error("decision path length {0} outside 1..={T_MAX}")]
    PathLength(usize),
}

impl ActionCatalog {
    pub fn new(actions: Vec<Action>) -> Result<Self, CatalogError> {
        let c = Self { actions };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let first = self.actions.first().ok_or(CatalogError::Empty)?;
        let d = first.embedding.len();
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.actions {
            if !seen.insert(a.id.as_str()) {
                return Err(CatalogError::DuplicateId(a.id.clone()));
            }
            if a.embedding.len() != d || (linalg::norm(&a.embedding) - 1.0).abs() > 1e-9 {
                return Err(CatalogError::BadEmbedding(a.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.actions.first().map_or(0, |a| a.embedding.len())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.id == id)
    }

    /// Embeddings `+e_k, −e_k` for k = 0, 1, ..., giving `n` actions equal
    /// decode regions in ⌈n/2⌉ dimensions.
    pub fn signed_basis_embedding(index: usize, n: usize) -> Vec<f64> {
        let d = n.div_ceil(2);
        let mut e = vec![0.0; d];
        e[index / 2] = if index % 2 == 0 { 1.0 } else { -1.0 };
        e
    }
}

/// Index of the catalog action whose embedding has the largest cosine with
/// `u`; ties go to the earlier action.
pub fn decode_action(catalog: &ActionCatalog, u: &[f64]) -> usize {
    let sims: Vec<f64> = catalog.actions.iter().map(|a| linalg::cosine(u, &a.embedding)).collect();
    linalg::argmax(&sims).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionPath {
    steps: Vec<String>,
}

impl DecisionPath {
    pub fn new(steps: Vec<String>, catalog: &ActionCatalog) -> Result<Self, CatalogError> {
        if steps.is_empty() || steps.len() > T_MAX {
            return Err(CatalogError::PathLength(steps.len()));
        }
        if let Some(bad) = steps.iter().find(|s| catalog.index_of(s).is_none()) {
            return Err(CatalogError::UnknownAction(bad.clone()));
        }
        Ok(Self { steps })
    }

    pub fn from_indices(indices: &[usize], catalog: &ActionCatalog) -> Result<Self, CatalogError> {
        let steps = indices
            .iter()
            .map(|&i| {
                catalog
                    .actions
                    .get(i)
                    .map(|a| a.id.clone())
                    .ok_or_else(|| CatalogError::UnknownAction(format!("#{i}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(steps, catalog)
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn indices(&self, catalog: &ActionCatalog) -> Vec<usize> {
        self.steps.iter().filter_map(|s| catalog.index_of(s)).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown action index {0}")]
    UnknownAction(usize),
    #[error("episode already finished")]
    Finished,
}

/// Episodic environment over a discrete action set, observed through
/// fixed-width state feature vectors.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<Step, EnvError>;
}
