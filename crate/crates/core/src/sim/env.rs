//! Incident-response environment. Diagnosis takes longer the further down
//! the candidate ranking the true root cause sits; remediation counts only
//! after diagnosis; an episode ends when every remedy group is satisfied
//! or the step limit is reached.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{act, EpisodeMetrics, ScenarioEvent, ScenarioKind, ACTION_TABLE};
use crate::engine::{Environment, EnvError, PlanningModel, RewardConfig, Step, T_MAX};

/// Simulated hours charged per step when an episode times out.
pub const STEP_HOURS: f64 = 4.0;
/// Hours of a diagnosis that finds the root cause first.
pub const DIAGNOSE_BASE_HOURS: f64 = 1.0;
/// Extra hours per candidate examined before the root cause.
pub const DIAGNOSE_HOURS_PER_RANK: f64 = 0.4;
const CAPACITY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OpsState {
    pub kind: ScenarioKind,
    pub severity: f64,
    pub diagnose_hours: f64,
    pub weights: (f64, f64),
    pub eta: f64,
    pub t_baseline: f64,
    pub budget: f64,
    pub base_load: f64,
    /// Pooled graph features placed at the front of every observation.
    pub features: Vec<f64>,
    pub horizon: usize,
    pub step: usize,
    pub diagnosed: bool,
    pub satisfied: Vec<bool>,
    pub elapsed: f64,
    pub cost: f64,
    pub overflow: f64,
    pub done: bool,
    pub resolved: bool,
    pub actions: Vec<usize>,
}

impl OpsState {
    /// Initial state for `event` whose root cause sits at `rank` (1-based).
    pub fn new(event: &ScenarioEvent, rank: usize, features: Vec<f64>, reward: &RewardConfig, horizon: usize) -> Self {
        let spec = event.kind.spec();
        Self {
            kind: event.kind,
            severity: event.severity,
            diagnose_hours: DIAGNOSE_BASE_HOURS + DIAGNOSE_HOURS_PER_RANK * (rank.max(1) - 1) as f64,
            weights: reward.weights(event.backlog, event.budget),
            eta: reward.eta,
            t_baseline: event.t_baseline,
            budget: event.budget,
            base_load: 0.2 + 0.3 * event.severity,
            features,
            horizon: horizon.clamp(1, T_MAX),
            step: 0,
            diagnosed: false,
            satisfied: vec![false; spec.groups.len()],
            elapsed: 0.0,
            cost: 0.0,
            overflow: 0.0,
            done: false,
            resolved: false,
            actions: Vec::new(),
        }
    }

    pub fn obs_dim(feature_dim: usize) -> usize {
        feature_dim + ScenarioKind::ALL.len() + 5
    }

    /// `[features ‖ kind one-hot ‖ severity, diagnosed, group 1 done,
    /// group 2 done, step fraction]`; a kind with one remedy group reports
    /// its absent second group as done.
    pub fn observation(&self) -> Vec<f64> {
        let mut o = self.features.clone();
        let mut kind = vec![0.0; ScenarioKind::ALL.len()];
        kind[self.kind.index()] = 1.0;
        o.extend(kind);
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        o.push(self.severity);
        o.push(flag(self.diagnosed));
        o.push(flag(self.satisfied.first().copied().unwrap_or(true)));
        o.push(flag(self.satisfied.get(1).copied().unwrap_or(true)));
        o.push(self.step as f64 / self.horizon as f64);
        o
    }

    /// Pure transition; a finished state is returned unchanged with zero
    /// reward.
    pub fn transition(&self, action: usize) -> (OpsState, f64, bool) {
        let mut s = self.clone();
        if s.done {
            return (s, 0.0, true);
        }
        let (_, hours, cost, demand) = ACTION_TABLE[action];
        let mut duration = if action == act::DIAGNOSE { s.diagnose_hours } else { hours };
        if action == act::DIAGNOSE {
            s.diagnosed = true;
        } else if s.diagnosed {
            let groups = s.kind.spec().groups;
            for (g, sat) in groups.iter().zip(s.satisfied.iter_mut()) {
                if g.contains(&action) {
                    *sat = true;
                }
            }
        }
        s.step += 1;
        s.actions.push(action);
        s.resolved = s.satisfied.iter().all(|&x| x);
        s.done = s.resolved || s.step >= s.horizon;
        if s.done && !s.resolved {
            // a timed-out episode is charged the full window
            duration = (T_MAX as f64 * STEP_HOURS - s.elapsed).max(duration);
        }
        let ov = (s.base_load + demand - CAPACITY).max(0.0) / CAPACITY;
        s.elapsed += duration;
        s.cost += cost;
        s.overflow += ov;
        let (alpha, beta) = s.weights;
        let mut r = -alpha * duration / s.t_baseline - beta * cost / s.budget - s.eta * ov;
        if s.resolved {
            r += alpha + beta;
        }
        let done = s.done;
        (s, r, done)
    }

    pub fn metrics(&self, reference_cost: f64, episode_return: f64) -> EpisodeMetrics {
        EpisodeMetrics {
            response_time: self.elapsed,
            cost_actual: self.cost,
            cost_reduction_pct: if reference_cost > 0.0 {
                100.0 * (reference_cost - self.cost) / reference_cost
            } else {
                0.0
            },
            resolved: self.resolved,
            steps_taken: self.step,
            resource_overflow: self.overflow,
            episode_return,
        }
    }
}

/// Runs `path` from `start` until it ends or the episode finishes.
pub fn replay(start: &OpsState, path: &[usize]) -> (OpsState, f64) {
    let mut s = start.clone();
    let mut total = 0.0;
    for &a in path {
        if s.done {
            break;
        }
        let (next, r, _) = s.transition(a);
        total += r;
        s = next;
    }
    (s, total)
}

/// Environment drawing each episode uniformly from a pool of prepared
/// initial states.
#[derive(Debug, Clone)]
pub struct OpsEnv {
    pool: Vec<OpsState>,
    current: Option<OpsState>,
}

impl OpsEnv {
    pub fn new(pool: Vec<OpsState>) -> Self {
        assert!(!pool.is_empty(), "scenario pool must not be empty");
        Self { pool, current: None }
    }

    pub fn pool(&self) -> &[OpsState] {
        &self.pool
    }

    pub fn current(&self) -> Option<&OpsState> {
        self.current.as_ref()
    }

    /// Starts an episode from a given state instead of sampling one.
    pub fn reset_to(&mut self, state: OpsState) -> Vec<f64> {
        let obs = state.observation();
        self.current = Some(state);
        obs
    }
}

impl Environment for OpsEnv {
    fn state_dim(&self) -> usize {
        self.pool[0].observation().len()
    }

    fn num_actions(&self) -> usize {
        act::COUNT
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let i = rng.random_range(0..self.pool.len());
        self.reset_to(self.pool[i].clone())
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        if action >= act::COUNT {
            return Err(EnvError::UnknownAction(action));
        }
        let cur = self.current.as_mut().ok_or(EnvError::Finished)?;
        if cur.done {
            return Err(EnvError::Finished);
        }
        let (next, reward, done) = cur.transition(action);
        *cur = next;
        Ok(Step {
            state: cur.observation(),
            reward,
            done,
        })
    }
}

impl PlanningModel for OpsEnv {
    type State = OpsState;

    fn legal_actions(&self, state: &OpsState) -> Vec<usize> {
        if state.done {
            Vec::new()
        } else {
            (0..act::COUNT).collect()
        }
    }

    fn transition(&self, state: &OpsState, action: usize) -> (OpsState, f64, bool) {
        state.transition(action)
    }
}
