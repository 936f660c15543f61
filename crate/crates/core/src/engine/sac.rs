//! Soft actor-critic with a tanh-squashed Gaussian policy, a single critic
//! (optionally twin) and a soft-synchronized target critic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{tanh_vec, Adam, Dense};
use super::{decode_action, ActionCatalog, EnvError, Environment};
use crate::linalg::{self, Matrix};
use crate::real17;

/// Policy standard deviation floor is `exp(LOG_SIGMA_MIN)` = 1e-3.
pub const LOG_SIGMA_MIN: f64 = -6.907_755_278_982_137;
pub const LOG_SIGMA_MAX: f64 = 1.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    #[serde(with = "real17")]
    pub gamma: f64,
    /// Entropy temperature λ.
    #[serde(with = "real17")]
    pub lambda: f64,
    #[serde(with = "real17")]
    pub tau: f64,
    pub sync_period: u64,
    #[serde(with = "real17")]
    pub lr_actor: f64,
    #[serde(with = "real17")]
    pub lr_critic: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub hidden: usize,
    /// Multiplier applied to environment rewards before they enter the
    /// replay buffer; sets the return scale relative to the entropy term.
    #[serde(with = "real17")]
    pub reward_scale: f64,
    pub twin_critics: bool,
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lambda: 1.0,
            tau: 0.005,
            sync_period: 1,
            lr_actor: 5e-3,
            lr_critic: 5e-3,
            batch_size: 32,
            replay_capacity: 10_000,
            hidden: 32,
            reward_scale: 30.0,
            twin_critics: false,
            updates_per_step: 1,
        }
    }
}

/// Single graph-attention layer over the joint embedding, mean pooled into
/// the state feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatBranch {
    /// d_z × d_H
    pub w: Matrix,
    #[serde(with = "real17::vec")]
    pub a: Vec<f64>,
}

impl GatBranch {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_z: usize, rng: &mut R) -> Self {
        let s = 1.0 / (2.0 * d_z as f64).sqrt();
        Self {
            w: Matrix::init_uniform(d_z, d_in, rng),
            a: (0..2 * d_z).map(|_| rng.random_range(-s..s)).collect(),
        }
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    /// Attention rows over the nonzero entries of `adj`, as a dense matrix.
    pub fn attention(&self, h: &[Vec<f64>], adj: &Matrix) -> Matrix {
        let n = h.len();
        let d = self.w.rows();
        let z: Vec<Vec<f64>> = h.iter().map(|x| self.w.matvec(x)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&j| adj.get(i, j) != 0.0).collect();
            let logits: Vec<f64> = nbrs
                .iter()
                .map(|&j| linalg::dot(&self.a[..d], &z[i]) + linalg::dot(&self.a[d..], &z[j]))
                .collect();
            for (&j, w) in nbrs.iter().zip(linalg::softmax(&logits)) {
                out.set(i, j, w);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SacError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("policy produced a non-finite output")]
    NonFinite,
    #[error("training diverged in episode {episode}")]
    Divergence { episode: usize, trace: TrainTrace },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// `z_s = mean_i tanh(Σ_j α_ij W H_j)` with α the attention over `adj`.
pub fn policy_features(h: &[Vec<f64>], adj: &Matrix, gat: &GatBranch) -> Result<Vec<f64>, SacError> {
    let n = h.len();
    if n == 0 || adj.shape() != (n, n) || h.iter().any(|r| r.len() != gat.w.cols()) {
        return Err(SacError::Shape(format!(
            "{} rows against adjacency {:?} and branch width {}",
            n,
            adj.shape(),
            gat.w.cols()
        )));
    }
    let alpha = gat.attention(h, adj);
    let z: Vec<Vec<f64>> = h.iter().map(|x| gat.w.matvec(x)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut acc = vec![0.0; gat.d_out()];
            for (j, zj) in z.iter().enumerate() {
                let a = alpha.get(i, j);
                if a != 0.0 {
                    linalg::axpy(&mut acc, a, zj);
                }
            }
            tanh_vec(&acc)
        })
        .collect();
    Ok(linalg::mean_rows(&rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub l1: Dense,
    pub mu: Dense,
    pub log_sigma: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub clamped: Vec<bool>,
    pub xi: Vec<f64>,
    pub hidden: Vec<f64>,
    pub log_prob: f64,
}

/// `log(1 − tanh²x)` without cancellation.
fn log_one_minus_tanh_sq(x: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - x - linalg::softplus(-2.0 * x))
}

impl Actor {
    pub fn init<R: Rng + ?Sized>(d_s: usize, hidden: usize, d_act: usize, rng: &mut R) -> Self {
        Self {
            l1: Dense::init(d_s, hidden, rng),
            mu: Dense::init(hidden, d_act, rng),
            log_sigma: Dense::init(hidden, d_act, rng),
        }
    }

    pub fn d_state(&self) -> usize {
        self.l1.w.cols()
    }

    pub fn d_act(&self) -> usize {
        self.mu.b.len()
    }

    /// Reparameterized sample `u = tanh(μ + σ ξ)` for given noise.
    pub fn rsample(&self, s: &[f64], xi: &[f64]) -> ActionSample {
        let hidden = tanh_vec(&self.l1.forward(s));
        let mu = self.mu.forward(&hidden);
        let raw = self.log_sigma.forward(&hidden);
        let clamped: Vec<bool> = raw.iter().map(|&l| !(LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&l)).collect();
        let log_sigma: Vec<f64> = raw.iter().map(|l| l.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)).collect();
        let x: Vec<f64> = mu
            .iter()
            .zip(&log_sigma)
            .zip(xi)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect();
        let u = tanh_vec(&x);
        let log_prob = (0..x.len())
            .map(|k| -0.5 * xi[k] * xi[k] - log_sigma[k] - HALF_LN_2PI - log_one_minus_tanh_sq(x[k]))
            .sum();
        ActionSample {
            u,
            x,
            mu,
            log_sigma,
            clamped,
            xi: xi.to_vec(),
            hidden,
            log_prob,
        }
    }

    /// Mode of the squashed policy, `tanh(μ)`.
    pub fn greedy(&self, s: &[f64]) -> Vec<f64> {
        tanh_vec(&self.mu.forward(&tanh_vec(&self.l1.forward(s))))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            mu: self.mu.zeros_like(),
            log_sigma: self.log_sigma.zeros_like(),
        }
    }

    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::new();
        self.l1.push_flat(&mut out);
        self.mu.push_flat(&mut out);
        self.log_sigma.push_flat(&mut out);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.l1.extend_flat(&mut out);
        self.mu.extend_flat(&mut out);
        self.log_sigma.extend_flat(&mut out);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.mu.is_finite() && self.log_sigma.is_finite()
    }
}

pub fn sample_action(actor: &Actor, s: &[f64], rng: &mut ChaCha8Rng) -> Result<ActionSample, SacError> {
    if s.len() != actor.d_state() || !s.iter().all(|x| x.is_finite()) {
        return Err(SacError::Shape(format!("state width {} (expected {})", s.len(), actor.d_state())));
    }
    let xi: Vec<f64> = (0..actor.d_act()).map(|_| StandardNormal.sample(rng)).collect();
    let out = actor.rsample(s, &xi);
    if !out.u.iter().all(|x| x.is_finite()) || !out.log_prob.is_finite() {
        return Err(SacError::NonFinite);
    }
    Ok(out)
}

/// `Q(s, a) = w₂·tanh(W₁[s ‖ a] + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub l1: Dense,
    pub out: Dense,
}

impl Critic {
    pub fn init<R: Rng + ?Sized>(d_s: usize, d_act: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            l1: Dense::init(d_s + d_act, hidden, rng),
            out: Dense::init(hidden, 1, rng),
        }
    }

    pub fn q(&self, s: &[f64], a: &[f64]) -> f64 {
        let h = tanh_vec(&self.l1.forward(&linalg::concat(s, a)));
        self.out.forward(&h)[0]
    }

    /// Accumulates `dq · ∂Q/∂θ` into `grad` and returns `dq · ∂Q/∂a`.
    pub fn backward(&self, s: &[f64], a: &[f64], dq: f64, grad: &mut Critic) -> Vec<f64> {
        let x = linalg::concat(s, a);
        let h = tanh_vec(&self.l1.forward(&x));
        let dh = self.out.backward(&h, &[dq], &mut grad.out);
        let dpre: Vec<f64> = dh.iter().zip(&h).map(|(d, t)| d * (1.0 - t * t)).collect();
        let dx = self.l1.backward(&x, &dpre, &mut grad.l1);
        dx[s.len()..].to_vec()
    }

    /// `∂Q/∂a` without touching any gradient buffer.
    pub fn action_gradient(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let x = linalg::concat(s, a);
        let h = tanh_vec(&self.l1.forward(&x));
        let dpre: Vec<f64> = h.iter().zip(&self.out.w.as_slice()[..h.len()]).map(|(t, w)| w * (1.0 - t * t)).collect();
        self.l1.w.t_matvec(&dpre)[s.len()..].to_vec()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::new();
        self.l1.push_flat(&mut out);
        self.out.push_flat(&mut out);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.l1.extend_flat(&mut out);
        self.out.extend_flat(&mut out);
        out
    }

    pub fn blend(&mut self, other: &Critic, tau: f64) {
        self.l1.blend(&other.l1, tau);
        self.out.blend(&other.out, tau);
    }

    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.out.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacParams {
    pub gat: GatBranch,
    pub actor: Actor,
    pub critic: Critic,
    pub target: Critic,
    pub critic2: Option<Critic>,
    pub target2: Option<Critic>,
    pub config: SacConfig,
}

impl SacParams {
    /// `d_state` is the full state width fed to actor and critic; `d_h` is
    /// the joint-embedding width seen by the attention branch.
    pub fn init(d_state: usize, d_act: usize, d_h: usize, d_z: usize, config: SacConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gat = GatBranch::init(d_h, d_z, &mut rng);
        let actor = Actor::init(d_state, config.hidden, d_act, &mut rng);
        let critic = Critic::init(d_state, d_act, config.hidden, &mut rng);
        let (critic2, target2) = if config.twin_critics {
            let c = Critic::init(d_state, d_act, config.hidden, &mut rng);
            (Some(c.clone()), Some(c))
        } else {
            (None, None)
        };
        Self {
            gat,
            actor,
            target: critic.clone(),
            critic,
            critic2,
            target2,
            config,
        }
    }

    fn target_q(&self, s: &[f64], a: &[f64]) -> f64 {
        let q = self.target.q(s, a);
        match &self.target2 {
            Some(t2) => q.min(t2.q(s, a)),
            None => q,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.critic.is_finite()
            && self.target.is_finite()
            && self.critic2.as_ref().is_none_or(Critic::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(with = "real17::vec")]
    pub s: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub a: Vec<f64>,
    #[serde(with = "real17")]
    pub r: f64,
    #[serde(with = "real17::vec")]
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Bootstrap targets `y = r + γ·(1 − done)·Q̄(s', ã)` with `ã = tanh(μ + σ ξ)`
/// at `s'` for the supplied noise. No entropy bonus enters the target.
pub fn critic_targets(batch: &[Transition], params: &SacParams, next_noise: &[Vec<f64>]) -> Vec<f64> {
    batch
        .iter()
        .zip(next_noise)
        .map(|(t, xi)| {
            if t.done {
                t.r
            } else {
                let a = params.actor.rsample(&t.s_next, xi).u;
                t.r + params.config.gamma * params.target_q(&t.s_next, &a)
            }
        })
        .collect()
}

/// Mean squared error of `critic` against fixed targets, with its gradient.
pub fn critic_regression(critic: &Critic, batch: &[Transition], targets: &[f64]) -> (f64, Critic) {
    let mut grad = critic.zeros_like();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let err = critic.q(&t.s, &t.a) - y;
        loss += err * err / n;
        critic.backward(&t.s, &t.a, 2.0 * err / n, &mut grad);
    }
    (loss, grad)
}

/// Critic loss on a batch with next actions drawn from the current policy.
pub fn critic_loss(batch: &[Transition], params: &SacParams, rng: &mut ChaCha8Rng) -> Result<f64, SacError> {
    if batch.is_empty() {
        return Err(SacError::EmptyBatch);
    }
    let noise = draw_noise(batch.len(), params.actor.d_act(), rng);
    let targets = critic_targets(batch, params, &noise);
    Ok(critic_regression(&params.critic, batch, &targets).0)
}

fn draw_noise(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// `J = mean[Q(s, u_θ) − λ log π(u_θ|s)]` over reparameterized samples and
/// its gradient with respect to the actor (ascent direction).
pub fn actor_objective(
    states: &[Vec<f64>],
    noise: &[Vec<f64>],
    actor: &Actor,
    critic: &Critic,
    lambda: f64,
) -> Result<(f64, Actor), SacError> {
    if states.is_empty() {
        return Err(SacError::EmptyBatch);
    }
    let n = states.len() as f64;
    let mut grad = actor.zeros_like();
    let mut total = 0.0;
    for (s, xi) in states.iter().zip(noise) {
        let smp = actor.rsample(s, xi);
        total += (critic.q(s, &smp.u) - lambda * smp.log_prob) / n;
        let qu = critic.action_gradient(s, &smp.u);
        let d = smp.u.len();
        let mut dmu = vec![0.0; d];
        let mut dls = vec![0.0; d];
        for k in 0..d {
            let u = smp.u[k];
            let dx = qu[k] * (1.0 - u * u) - 2.0 * lambda * u;
            dmu[k] = dx / n;
            if !smp.clamped[k] {
                dls[k] = (dx * smp.log_sigma[k].exp() * smp.xi[k] + lambda) / n;
            }
        }
        let mut dh = actor.mu.backward(&smp.hidden, &dmu, &mut grad.mu);
        linalg::axpy(&mut dh, 1.0, &actor.log_sigma.backward(&smp.hidden, &dls, &mut grad.log_sigma));
        let dpre: Vec<f64> = dh.iter().zip(&smp.hidden).map(|(d, h)| d * (1.0 - h * h)).collect();
        actor.l1.backward(s, &dpre, &mut grad.l1);
    }
    Ok((total, grad))
}

/// Soft target update, applied when `step` is a multiple of the period.
pub fn sync_target(params: &mut SacParams, step: u64) {
    let period = params.config.sync_period.max(1);
    if step % period != 0 {
        return;
    }
    let tau = params.config.tau;
    params.target.blend(&params.critic, tau);
    if let (Some(t2), Some(c2)) = (params.target2.as_mut(), params.critic2.as_ref()) {
        t2.blend(c2, tau);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Undiscounted, unscaled return per episode.
    #[serde(with = "real17::vec")]
    pub returns: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub critic_losses: Vec<f64>,
}

struct Optimizers {
    actor: Adam,
    critic: Adam,
    critic2: Option<Adam>,
}

fn update(
    params: &mut SacParams,
    opt: &mut Optimizers,
    batch: &[Transition],
    rng: &mut ChaCha8Rng,
) -> Result<f64, SacError> {
    let d_act = params.actor.d_act();
    let noise = draw_noise(batch.len(), d_act, rng);
    let targets = critic_targets(batch, params, &noise);
    let (loss, g) = critic_regression(&params.critic, batch, &targets);
    opt.critic.step(params.critic.flat_mut(), &g.flatten());
    if let (Some(c2), Some(o2)) = (params.critic2.as_mut(), opt.critic2.as_mut()) {
        let (_, g2) = critic_regression(c2, batch, &targets);
        o2.step(c2.flat_mut(), &g2.flatten());
    }
    let states: Vec<Vec<f64>> = batch.iter().map(|t| t.s.clone()).collect();
    let noise = draw_noise(batch.len(), d_act, rng);
    let (j, ga) = actor_objective(&states, &noise, &params.actor, &params.critic, params.config.lambda)?;
    let ascent: Vec<f64> = ga.flatten().iter().map(|g| -g).collect();
    opt.actor.step(params.actor.flat_mut(), &ascent);
    if !loss.is_finite() || !j.is_finite() || !params.is_finite() {
        return Err(SacError::NonFinite);
    }
    Ok(loss)
}

/// Off-policy training loop: act, store, sample a minibatch, critic step,
/// actor step, target sync. Fully determined by `seed`.
pub fn train(
    env: &mut dyn Environment,
    catalog: &ActionCatalog,
    episodes: usize,
    mut params: SacParams,
    seed: u64,
) -> Result<(SacParams, TrainTrace), SacError> {
    if env.state_dim() != params.actor.d_state() || catalog.dim() != params.actor.d_act() {
        return Err(SacError::Shape(format!(
            "env state {} / catalog width {} vs actor {} / {}",
            env.state_dim(),
            catalog.dim(),
            params.actor.d_state(),
            params.actor.d_act()
        )));
    }
    let cfg = params.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Optimizers {
        actor: Adam::new(params.actor.flatten().len(), cfg.lr_actor),
        critic: Adam::new(params.critic.flatten().len(), cfg.lr_critic),
        critic2: params.critic2.as_ref().map(|c| Adam::new(c.flatten().len(), cfg.lr_critic)),
    };
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut trace = TrainTrace::default();
    let mut step_count: u64 = 0;
    for episode in 0..episodes {
        let mut s = env.reset(&mut rng);
        let mut ret = 0.0;
        let mut last_loss = f64::NAN;
        loop {
            let smp = sample_action(&params.actor, &s, &mut rng).map_err(|_| SacError::Divergence {
                episode,
                trace: trace.clone(),
            })?;
            let step = env.step(decode_action(catalog, &smp.u))?;
            ret += step.reward;
            buffer.push(Transition {
                s: s.clone(),
                a: smp.u,
                r: step.reward * cfg.reward_scale,
                s_next: step.state.clone(),
                done: step.done,
            });
            step_count += 1;
            if buffer.len() >= cfg.batch_size {
                for _ in 0..cfg.updates_per_step.max(1) {
                    let batch = buffer.sample(cfg.batch_size, &mut rng);
                    last_loss = update(&mut params, &mut opt, &batch, &mut rng).map_err(|_| SacError::Divergence {
                        episode,
                        trace: trace.clone(),
                    })?;
                }
                sync_target(&mut params, step_count);
            }
            s = step.state;
            if step.done {
                break;
            }
        }
        trace.returns.push(ret);
        trace.critic_losses.push(last_loss);
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> SacParams {
        SacParams::init(3, 2, 4, 3, SacConfig { hidden: 5, ..SacConfig::default() }, seed)
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                s: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a: (0..2).map(|_| rng.random_range(-0.9..0.9)).collect(),
                r: rng.random_range(-1.0..1.0),
                s_next: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: i % 4 == 3,
            })
            .collect()
    }

    #[test]
    fn sample_stays_in_open_cube_and_is_seeded() {
        let p = params(1);
        let s = [0.2, -0.4, 0.9];
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = sample_action(&p.actor, &s, &mut r1).unwrap();
            let b = sample_action(&p.actor, &s, &mut r2).unwrap();
            assert_eq!(a, b);
            assert!(a.u.iter().all(|u| u.abs() < 1.0));
        }
    }

    #[test]
    fn sigma_floor_gives_tanh_mu() {
        let mut p = params(2);
        p.actor.log_sigma.w = Matrix::zeros(2, 5);
        p.actor.log_sigma.b = vec![-50.0; 2];
        let s = [0.1, 0.2, 0.3];
        let smp = p.actor.rsample(&s, &[0.5, -0.5]);
        let greedy = p.actor.greedy(&s);
        for k in 0..2 {
            assert!((smp.u[k] - greedy[k]).abs() < 1e-3);
        }
        assert!(smp.log_prob.is_finite());
    }

    #[test]
    fn zero_critics_give_zero_loss() {
        let mut p = params(3);
        for c in [&mut p.critic, &mut p.target] {
            c.out = c.out.zeros_like();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = batch(&mut rng, 8);
        b.iter_mut().for_each(|t| t.r = 0.0);
        assert_eq!(critic_loss(&b, &p, &mut rng).unwrap(), 0.0);
        assert_eq!(critic_loss(&[], &p, &mut rng).unwrap_err(), SacError::EmptyBatch);
    }

    #[test]
    fn critic_gradient_matches_differences() {
        let p = params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = batch(&mut rng, 6);
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = critic_regression(&p.critic, &b, &y);
        let analytic = g.flatten();
        for k in 0..analytic.len() {
            let mut plus = p.critic.clone();
            *plus.flat_mut()[k] += 1e-5;
            let mut minus = p.critic.clone();
            *minus.flat_mut()[k] -= 1e-5;
            let fd = (critic_regression(&plus, &b, &y).0 - critic_regression(&minus, &b, &y).0) / 2e-5;
            let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
            assert!(err < 1e-4, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn actor_gradient_matches_differences() {
        let p = params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let noise = draw_noise(4, 2, &mut rng);
        let (_, g) = actor_objective(&states, &noise, &p.actor, &p.critic, 0.9).unwrap();
        let analytic = g.flatten();
        for k in 0..analytic.len() {
            let mut plus = p.actor.clone();
            *plus.flat_mut()[k] += 1e-5;
            let mut minus = p.actor.clone();
            *minus.flat_mut()[k] -= 1e-5;
            let fd = (actor_objective(&states, &noise, &plus, &p.critic, 0.9).unwrap().0
                - actor_objective(&states, &noise, &minus, &p.critic, 0.9).unwrap().0)
                / 2e-5;
            let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
            assert!(err < 1e-4, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn target_sync_recurrence() {
        let mut p = params(6);
        p.critic.out.b = vec![1.0];
        p.target.out.b = vec![0.0];
        p.config.tau = 0.5;
        sync_target(&mut p, 1);
        sync_target(&mut p, 2);
        assert_eq!(p.target.out.b, vec![0.75]);
        p.config.tau = 1.0;
        sync_target(&mut p, 3);
        assert_eq!(p.target, p.critic);
        let before = p.target.clone();
        p.critic.out.b = vec![9.0];
        p.config.tau = 0.0;
        sync_target(&mut p, 4);
        assert_eq!(p.target, before);
    }

    #[test]
    fn replay_buffer_wraps_at_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut buf = ReplayBuffer::new(3);
        for t in batch(&mut rng, 5) {
            buf.push(t);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.sample(10, &mut rng).len(), 10);
    }

    #[test]
    fn single_node_features_are_that_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gat = GatBranch::init(4, 3, &mut rng);
        let h = vec![vec![0.1, -0.2, 0.3, 0.4]];
        let z = policy_features(&h, &Matrix::identity(1), &gat).unwrap();
        assert_eq!(z, tanh_vec(&gat.w.matvec(&h[0])));
    }

    /// One-step episodes: a random state out of two, four actions with a
    /// fixed payoff table.
    struct Bandit {
        state: usize,
    }

    const PAYOFF: [[f64; 4]; 2] = [[0.1, 0.2, 1.0, 0.0], [0.9, 0.1, 0.0, 0.3]];

    impl Environment for Bandit {
        fn state_dim(&self) -> usize {
            2
        }

        fn num_actions(&self) -> usize {
            4
        }

        fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
            self.state = rng.random_range(0..2);
            let mut s = vec![0.0; 2];
            s[self.state] = 1.0;
            s
        }

        fn step(&mut self, action: usize) -> Result<super::super::Step, EnvError> {
            Ok(super::super::Step {
                state: vec![0.0; 2],
                reward: PAYOFF[self.state][action],
                done: true,
            })
        }
    }

    fn bandit_catalog() -> ActionCatalog {
        ActionCatalog::new(
            (0..4)
                .map(|i| super::super::Action {
                    id: format!("a{i}"),
                    label: format!("a{i}"),
                    embedding: ActionCatalog::signed_basis_embedding(i, 4),
                    resource_demand: 0.0,
                    nominal_duration: 1.0,
                    cost: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_episodes_leave_params_unchanged() {
        let cat = bandit_catalog();
        let p = SacParams::init(2, cat.dim(), 4, 3, SacConfig::default(), 3);
        let (out, trace) = train(&mut Bandit { state: 0 }, &cat, 0, p.clone(), 9).unwrap();
        assert_eq!(out, p);
        assert!(trace.returns.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cat = bandit_catalog();
        let run = || {
            let p = SacParams::init(2, cat.dim(), 4, 3, SacConfig::default(), 3);
            train(&mut Bandit { state: 0 }, &cat, 60, p, 9).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta.returns, tb.returns);
    }

    #[test]
    fn bandit_return_approaches_enumerated_optimum() {
        let optimum = PAYOFF.iter().map(|row| row.iter().cloned().fold(f64::MIN, f64::max)).sum::<f64>() / 2.0;
        let cat = bandit_catalog();
        let p = SacParams::init(2, cat.dim(), 4, 3, SacConfig::default(), 3);
        let (_, trace) = train(&mut Bandit { state: 0 }, &cat, 500, p, 21).unwrap();
        let tail = &trace.returns[400..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean >= 0.9 * optimum, "mean {mean} optimum {optimum}");
    }
}
