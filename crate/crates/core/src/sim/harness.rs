//! Engine construction on the simulated world, single-episode runs, and
//! the ablation / sensitivity / per-scenario / trigger experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{replay, OpsEnv, OpsState};
use super::{
    act, build_world, generate_scenario, heuristic_path, ops_catalog, predicted_root, root_cause_rank,
    semantic_corpus, semantic_eval, train_dqn, DqnError, DqnPolicy, EpisodeMetrics, FeatureMode, ScenarioError,
    ScenarioEvent, ScenarioKind, World,
};
use crate::config::RunConfig;
use crate::engine::{
    decode_action, explain_decision, mcts_refine, policy_features, sample_action, train, write_decision_history,
    CatalogError, DecisionOutcome, DecisionPath, EngineCheckpoint, ExplainError, Explanation, MctsError, RewardConfig, SacError, SacParams, WeightMode,
};
use crate::fusion::{
    node_triple, train_alignment, EmbeddingProvider, FusionDims, FusionEmbedder, FusionParams, FusionTrainError,
    ProviderError, StubProvider,
};
use crate::gnn::{self, Aggregation, GnnDims, GnnError, GnnParams, PretrainHead, Topology};
use crate::graph::{GraphError, KnowledgeGraph, NodeId, NodeKind};
use crate::linalg::Matrix;
use crate::real17;

/// Engine configuration compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Provider vectors carry no domain signal and the fusion layer ignores
    /// metadata; nothing is trained.
    NoFusion,
    /// Static rule-graph features replace the encoder.
    NoGnn,
    /// The per-kind script replaces the learned policy and search.
    NoSac,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoFusion, Variant::NoGnn, Variant::NoSac];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFusion => "w/o-fusion",
            Variant::NoGnn => "w/o-gnn",
            Variant::NoSac => "w/o-sac",
        }
    }

    pub fn feature_mode(self) -> FeatureMode {
        match self {
            Variant::NoGnn => FeatureMode::Static,
            _ => FeatureMode::Gnn,
        }
    }

    /// Policy that drives decisions under this variant.
    pub fn policy(self) -> PolicyKind {
        match self {
            Variant::NoSac => PolicyKind::Heuristic,
            _ => PolicyKind::SacGnn,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    SacGnn,
    Dqn,
    Heuristic,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::SacGnn, PolicyKind::Dqn, PolicyKind::Heuristic];

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::SacGnn => "sac-gnn",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Heuristic => "heuristic",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Fusion(#[from] FusionTrainError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("{0} policy has not been trained for this engine")]
    Untrained(PolicyKind),
    #[error("checkpoint does not fit the configuration: {0}")]
    Mismatch(String),
}

/// Which learned policies [`build_engine`] trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub sac: bool,
    pub dqn: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { sac: true, dqn: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EngineTraces {
    #[serde(with = "real17::vec")]
    pub alignment: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub pretrain: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub sac_returns: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub critic_losses: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub dqn_returns: Vec<f64>,
}

/// A trained engine bound to its simulated world.
#[derive(Debug, Clone)]
pub struct Engine {
    pub variant: Variant,
    pub world: World,
    /// Base graph with fused semantic vectors and dynamic edges.
    pub graph: KnowledgeGraph,
    pub checkpoint: EngineCheckpoint,
    pub sac_trained: bool,
    pub dqn: Option<DqnPolicy>,
    pub traces: EngineTraces,
    pub horizon: usize,
    pub mcts: crate::engine::MctsConfig,
}

impl Engine {
    pub fn provider(&self) -> Box<dyn EmbeddingProvider> {
        provider_for(&self.world, self.variant)
    }

    pub fn reward(&self) -> &RewardConfig {
        &self.checkpoint.reward
    }
}

fn provider_for(world: &World, variant: Variant) -> Box<dyn EmbeddingProvider> {
    match variant {
        Variant::NoFusion => Box::new(StubProvider::new(world.seed, world.config.d_g)),
        _ => Box::new(world.provider()),
    }
}

/// splitmix64 over `(base, stream, index)`; independent seeds for the
/// sub-streams of one run.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_CORPUS: u64 = 3;
const STREAM_EPISODE: u64 = 4;
const STREAM_INIT: u64 = 5;

/// `n` scenario kinds drawn from `weights` (kind order).
pub fn draw_kinds(weights: &[f64], n: usize, seed: u64) -> Vec<ScenarioKind> {
    let dist = WeightedIndex::new(weights).expect("validated kind weights");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| ScenarioKind::ALL[dist.sample(&mut rng)]).collect()
}

fn feature_width(cfg: &RunConfig, mode: FeatureMode) -> usize {
    match mode {
        FeatureMode::Gnn => 2 * cfg.dims.d_r,
        FeatureMode::Static => 2 * (cfg.dims.d_m + NodeKind::COUNT),
    }
}

/// Trains fusion (unless ablated), builds the world graph, pretrains the
/// encoder (unless ablated) and trains the requested policies on a pool of
/// prepared scenarios. Deterministic in `(cfg, variant, seed)`.
pub fn build_engine(cfg: &RunConfig, variant: Variant, seed: u64, opts: BuildOptions) -> Result<Engine, HarnessError> {
    let world = World::new(cfg.world_config(), seed);
    let d = &cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT, 0));
    let fdims = FusionDims {
        d_g: d.d_g,
        d_m: d.d_m,
        d_s: d.d_s,
        d_a: d.d_a,
    };
    let mut traces = EngineTraces::default();
    let mut provider = provider_for(&world, variant);
    let fusion = if variant == Variant::NoFusion {
        let mut p = FusionParams::init(fdims, &mut rng);
        p.w_m = Matrix::zeros(d.d_s, d.d_m);
        p
    } else {
        let base = world.base_graph();
        let mut dataset: Vec<_> = base
            .nodes()
            .map(|n| (node_triple(n), n.metadata_embedding.clone().expect("world nodes carry metadata")))
            .collect();
        let corpus = semantic_corpus(
            &world,
            cfg.fusion.corpus_classes,
            cfg.fusion.corpus_per_class,
            cfg.world.meta_signal,
            derive_seed(seed, STREAM_CORPUS, 0),
        );
        dataset.extend(corpus.items.into_iter().map(|i| (i.triple, i.metadata)));
        let (p, trace) = train_alignment(
            &dataset,
            provider.as_mut(),
            fdims,
            cfg.fusion.lr,
            cfg.fusion.epochs,
            derive_seed(seed, STREAM_INIT, 1),
        )?;
        traces.alignment = trace.losses;
        p
    };
    let graph = {
        let mut embedder = FusionEmbedder {
            provider: provider.as_mut(),
            params: &fusion,
        };
        build_world(&world, &mut embedder)?
    };

    let gdims = GnnDims::for_metadata(d.d_m, d.d_h, d.d_r, cfg.gnn.layers);
    let mut gnn_params = GnnParams::init(gdims, cfg.gnn.aggregation, &mut rng);
    gnn_params.beta = cfg.thresholds.beta;
    if variant != Variant::NoGnn {
        let topo = Topology::of(&graph);
        let h0 = gnn::init_node_features(&graph)?;
        let meta: Vec<Vec<f64>> = graph
            .nodes()
            .map(|n| n.metadata_embedding.clone().expect("world nodes carry metadata"))
            .collect();
        let head = PretrainHead::init(d.d_a, d.d_r, d.d_m, &mut rng);
        let (p, _, trace) = gnn::pretrain(
            &topo,
            &h0,
            &meta,
            gnn_params,
            head,
            cfg.gnn.pretrain_lr,
            cfg.gnn.pretrain_epochs,
        )?;
        gnn_params = p;
        traces.pretrain = trace.losses;
    }

    let catalog = ops_catalog();
    let mode = variant.feature_mode();
    let d_state = OpsState::obs_dim(d.d_z);
    let sac = SacParams::init(
        d_state,
        catalog.dim(),
        feature_width(cfg, mode),
        d.d_z,
        cfg.sac.clone(),
        derive_seed(seed, STREAM_INIT, 2),
    );
    let mut engine = Engine {
        variant,
        world,
        graph,
        checkpoint: EngineCheckpoint::new(seed, fusion, gnn_params, sac, catalog, cfg.reward.clone()),
        sac_trained: false,
        dqn: None,
        traces,
        horizon: cfg.experiment.t_max,
        mcts: cfg.mcts_config(),
    };

    let train_sac = opts.sac && variant.policy() == PolicyKind::SacGnn;
    if train_sac || opts.dqn {
        let kinds = draw_kinds(&cfg.experiment.kind_weights, cfg.experiment.train_pool, derive_seed(seed, STREAM_TRAIN, 0));
        let pool = kinds
            .iter()
            .enumerate()
            .map(|(i, &k)| prepare_scenario(&engine, k, derive_seed(seed, STREAM_TRAIN, 1 + i as u64)).map(|p| p.start))
            .collect::<Result<Vec<_>, _>>()?;
        let mut env = OpsEnv::new(pool);
        if train_sac {
            let (params, trace) = train(
                &mut env,
                &engine.checkpoint.catalog,
                cfg.experiment.sac_episodes,
                engine.checkpoint.sac.clone(),
                derive_seed(seed, STREAM_TRAIN, u64::MAX),
            )?;
            engine.checkpoint.sac = params;
            engine.sac_trained = true;
            engine.traces.sac_returns = trace.returns;
            engine.traces.critic_losses = trace.critic_losses;
        }
        if opts.dqn {
            let dcfg = crate::sim::DqnConfig {
                skip_prefix: d.d_z,
                ..cfg.dqn.clone()
            };
            let (policy, trace) = train_dqn(&mut env, cfg.experiment.dqn_episodes, &dcfg, derive_seed(seed, STREAM_TRAIN, u64::MAX - 1))?;
            engine.dqn = Some(policy);
            engine.traces.dqn_returns = trace.returns;
        }
    }
    Ok(engine)
}

/// A scenario planted in a copy of the engine's graph, with the initial
/// environment state it induces.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub event: ScenarioEvent,
    pub graph: KnowledgeGraph,
    pub rank: usize,
    /// Graph index of the top-ranked candidate.
    pub predicted: Option<usize>,
    pub start: OpsState,
}

pub fn prepare_scenario(engine: &Engine, kind: ScenarioKind, seed: u64) -> Result<PreparedScenario, HarnessError> {
    let mut graph = engine.graph.clone();
    let mut provider = engine.provider();
    let event = {
        let mut embedder = FusionEmbedder {
            provider: provider.as_mut(),
            params: &engine.checkpoint.fusion,
        };
        generate_scenario(&engine.world, kind, &mut graph, seed, &mut embedder)?
    };
    let (ranking, features) = match engine.variant.feature_mode() {
        FeatureMode::Gnn => {
            let e = gnn::encode(&graph, &engine.checkpoint.gnn)?;
            (e.h_dyn, e.h_joint)
        }
        FeatureMode::Static => {
            let f = super::node_features(&graph, FeatureMode::Static, &engine.checkpoint.gnn)?;
            (f.clone(), f)
        }
    };
    let rank = root_cause_rank(&graph, &event, &ranking);
    let predicted = predicted_root(&graph, &event, &ranking);
    let adj = graph.adjacency_matrix(true)?;
    let z = policy_features(&features, &adj, &engine.checkpoint.sac.gat)?;
    let start = OpsState::new(&event, rank, z, engine.reward(), engine.horizon);
    Ok(PreparedScenario {
        event,
        graph,
        rank,
        predicted,
        start,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub kind: ScenarioKind,
    pub policy: PolicyKind,
    pub seed: u64,
    pub root_rank: usize,
    pub path: Vec<String>,
    /// MCTS replaced part of the policy's path with a rollout suffix.
    pub flagged: bool,
    pub metrics: EpisodeMetrics,
    pub history_node: NodeId,
}

fn greedy_path(engine: &Engine, start: &OpsState) -> Vec<usize> {
    let mut s = start.clone();
    let mut path = Vec::new();
    while !s.done {
        let u = engine.checkpoint.sac.actor.greedy(&s.observation());
        let a = decode_action(&engine.checkpoint.catalog, &u);
        path.push(a);
        s = s.transition(a).0;
    }
    path
}

fn dqn_path(policy: &DqnPolicy, start: &OpsState) -> Vec<usize> {
    let mut s = start.clone();
    let mut path = Vec::new();
    while !s.done {
        let a = policy.act(&s.observation());
        path.push(a);
        s = s.transition(a).0;
    }
    path
}

/// Plays one episode of `policy` on `scenario` and writes the decision back
/// into the scenario's graph. `sac-gnn` paths are refined by MCTS.
pub fn run_episode(
    engine: &Engine,
    policy: PolicyKind,
    scenario: &mut PreparedScenario,
    seed: u64,
) -> Result<EpisodeRecord, HarnessError> {
    let start = &scenario.start;
    let mut flagged = false;
    let path = match policy {
        PolicyKind::SacGnn => {
            if !engine.sac_trained {
                return Err(HarnessError::Untrained(policy));
            }
            let initial = greedy_path(engine, start);
            let env = OpsEnv::new(vec![start.clone()]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = mcts_refine(&env, start, &initial, &engine.mcts, &mut rng)?;
            flagged = out.flagged;
            out.path
        }
        PolicyKind::Dqn => dqn_path(engine.dqn.as_ref().ok_or(HarnessError::Untrained(policy))?, start),
        PolicyKind::Heuristic => heuristic_path(start.kind),
    };
    let (end, ret) = replay(start, &path);
    let (reference, _) = replay(start, &heuristic_path(start.kind));
    let metrics = end.metrics(reference.cost, ret);
    let taken = DecisionPath::from_indices(&end.actions, &engine.checkpoint.catalog)?;
    let mut touched = scenario.event.affected_nodes.clone();
    touched.push(scenario.event.report.clone());
    let history_node = write_decision_history(
        &mut scenario.graph,
        &taken,
        &touched,
        &DecisionOutcome {
            response_time_h: metrics.response_time,
            cost: metrics.cost_actual,
            resource_overflow: metrics.resource_overflow,
            reward: ret,
            resolved: metrics.resolved,
        },
    )?;
    Ok(EpisodeRecord {
        kind: start.kind,
        policy,
        seed,
        root_rank: scenario.rank,
        path: taken.steps().to_vec(),
        flagged,
        metrics,
        history_node,
    })
}

/// Evaluation scenarios of a run: kinds cycle through all eight so every
/// configuration sees the same balanced mix.
pub fn eval_scenarios(engine: &Engine, n: usize) -> Result<Vec<PreparedScenario>, HarnessError> {
    (0..n)
        .map(|i| {
            let kind = ScenarioKind::ALL[i % ScenarioKind::ALL.len()];
            prepare_scenario(engine, kind, derive_seed(engine.checkpoint.seed, STREAM_EVAL, i as u64))
        })
        .collect()
}

/// Plays every scenario under `policy`; returns the records in order.
pub fn evaluate(
    engine: &Engine,
    policy: PolicyKind,
    scenarios: &mut [PreparedScenario],
) -> Result<Vec<EpisodeRecord>, HarnessError> {
    scenarios
        .iter_mut()
        .enumerate()
        .map(|(i, sc)| run_episode(engine, policy, sc, derive_seed(engine.checkpoint.seed, STREAM_EPISODE, i as u64)))
        .collect()
}

impl Engine {
    /// Rebuilds a full engine around a saved checkpoint. The world and its
    /// graph are regenerated from `(cfg, checkpoint.seed)` with the stored
    /// fusion parameters; nothing is retrained.
    pub fn restore(cfg: &RunConfig, checkpoint: EngineCheckpoint) -> Result<Engine, HarnessError> {
        let d_state = OpsState::obs_dim(cfg.dims.d_z);
        if checkpoint.sac.actor.d_state() != d_state || checkpoint.catalog.dim() != checkpoint.sac.actor.d_act() {
            return Err(HarnessError::Mismatch(format!(
                "actor takes {} state features and {} action dims, configuration gives {} and {}",
                checkpoint.sac.actor.d_state(),
                checkpoint.sac.actor.d_act(),
                d_state,
                checkpoint.catalog.dim()
            )));
        }
        let f = checkpoint.fusion.dims();
        if (f.d_g, f.d_m, f.d_s) != (cfg.dims.d_g, cfg.dims.d_m, cfg.dims.d_s) {
            return Err(HarnessError::Mismatch(format!(
                "fusion dims {}/{}/{} vs configured {}/{}/{}",
                f.d_g, f.d_m, f.d_s, cfg.dims.d_g, cfg.dims.d_m, cfg.dims.d_s
            )));
        }
        let world = World::new(cfg.world_config(), checkpoint.seed);
        let graph = {
            let mut provider = provider_for(&world, Variant::Full);
            let mut embedder = FusionEmbedder {
                provider: provider.as_mut(),
                params: &checkpoint.fusion,
            };
            build_world(&world, &mut embedder)?
        };
        Ok(Engine {
            variant: Variant::Full,
            world,
            graph,
            checkpoint,
            sac_trained: true,
            dqn: None,
            traces: EngineTraces::default(),
            horizon: cfg.experiment.t_max,
            mcts: cfg.mcts_config(),
        })
    }
}

/// The scalarized reward of an episode split into its three terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    #[serde(with = "real17")]
    pub alpha: f64,
    #[serde(with = "real17")]
    pub beta: f64,
    #[serde(with = "real17")]
    pub eta: f64,
    /// `α·(1 − t/t_baseline)`
    #[serde(with = "real17")]
    pub time_term: f64,
    /// `β·(1 − cost/budget)`
    #[serde(with = "real17")]
    pub cost_term: f64,
    /// `−η·overflow`
    #[serde(with = "real17")]
    pub overflow_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub kind: ScenarioKind,
    pub scenario_seed: u64,
    pub event: ScenarioEvent,
    /// The actor's own path before tree search.
    pub policy_path: Vec<String>,
    pub record: EpisodeRecord,
    pub objectives: ObjectiveBreakdown,
    pub explanation: Explanation,
}

/// Plants a `kind` incident (seeded by `scenario_seed`), decides it with
/// the SAC policy plus tree search, explains the taken path and writes the
/// decision into the scenario graph, which is returned alongside.
pub fn decide(
    engine: &Engine,
    kind: ScenarioKind,
    scenario_seed: u64,
) -> Result<(DecisionReport, KnowledgeGraph), HarnessError> {
    let mut sc = prepare_scenario(engine, kind, scenario_seed)?;
    let before = sc.graph.clone();
    let start = sc.start.clone();
    let policy_path = greedy_path(engine, &start)
        .into_iter()
        .map(|a| engine.checkpoint.catalog.actions[a].id.clone())
        .collect();
    let record = run_episode(
        engine,
        PolicyKind::SacGnn,
        &mut sc,
        derive_seed(engine.checkpoint.seed, STREAM_EPISODE, scenario_seed),
    )?;
    let taken = DecisionPath::new(record.path.clone(), &engine.checkpoint.catalog)?;
    let mut states = Vec::with_capacity(taken.len());
    let mut s = start.clone();
    for a in taken.indices(&engine.checkpoint.catalog) {
        states.push(s.observation());
        s = s.transition(a).0;
    }
    let mut touched = sc.event.affected_nodes.clone();
    touched.push(sc.event.report.clone());
    let explanation = explain_decision(
        &before,
        &engine.checkpoint.gnn,
        &touched,
        &taken,
        &states,
        &engine.checkpoint.sac.critic,
        &engine.checkpoint.catalog,
    )?;
    let m = &record.metrics;
    let (alpha, beta) = start.weights;
    let objectives = ObjectiveBreakdown {
        alpha,
        beta,
        eta: start.eta,
        time_term: alpha * (1.0 - m.response_time / start.t_baseline),
        cost_term: beta * (1.0 - m.cost_actual / start.budget),
        overflow_term: -start.eta * m.resource_overflow,
    };
    Ok((
        DecisionReport {
            kind,
            scenario_seed,
            event: sc.event.clone(),
            policy_path,
            record,
            objectives,
            explanation,
        },
        sc.graph,
    ))
}

// ---------------------------------------------------------------------------
// tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub label: String,
    pub seed: u64,
    #[serde(with = "real17::vec")]
    pub values: Vec<f64>,
    /// Set when this cell failed; `values` is then empty.
    pub error: Option<String>,
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    /// Seeds that produced values.
    pub n: usize,
    pub failed: usize,
    #[serde(with = "real17::vec")]
    pub mean: Vec<f64>,
    /// Sample standard deviation; zero for a single seed.
    #[serde(with = "real17::vec")]
    pub sd: Vec<f64>,
    /// `mean − mean of the baseline row`.
    #[serde(with = "real17::vec")]
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub suite: String,
    pub metrics: Vec<String>,
    pub baseline: String,
    pub seed_rows: Vec<SeedRow>,
    pub rows: Vec<ExperimentRow>,
}

/// Groups `seed_rows` by label (first-appearance order), sorts each group by
/// seed and reduces it to mean, SD and delta against `baseline`.
pub fn aggregate(suite: &str, metrics: &[&str], baseline: &str, mut seed_rows: Vec<SeedRow>) -> ExperimentTable {
    let mut order: Vec<String> = Vec::new();
    for r in &seed_rows {
        if !order.contains(&r.label) {
            order.push(r.label.clone());
        }
    }
    seed_rows.sort_by(|a, b| {
        let ia = order.iter().position(|l| *l == a.label);
        let ib = order.iter().position(|l| *l == b.label);
        ia.cmp(&ib).then(a.seed.cmp(&b.seed))
    });
    let k = metrics.len();
    let mut rows: Vec<ExperimentRow> = order
        .iter()
        .map(|label| {
            let ok: Vec<&SeedRow> = seed_rows
                .iter()
                .filter(|r| &r.label == label && r.error.is_none())
                .collect();
            let failed = seed_rows.iter().filter(|r| &r.label == label && r.error.is_some()).count();
            let n = ok.len();
            let mean: Vec<f64> = (0..k)
                .map(|m| if n == 0 { f64::NAN } else { ok.iter().map(|r| r.values[m]).sum::<f64>() / n as f64 })
                .collect();
            let sd: Vec<f64> = (0..k)
                .map(|m| {
                    if n < 2 {
                        0.0
                    } else {
                        let ss: f64 = ok.iter().map(|r| (r.values[m] - mean[m]).powi(2)).sum();
                        (ss / (n - 1) as f64).sqrt()
                    }
                })
                .collect();
            ExperimentRow {
                label: label.clone(),
                n,
                failed,
                mean,
                sd,
                delta: vec![0.0; k],
            }
        })
        .collect();
    if let Some(base) = rows.iter().find(|r| r.label == baseline).map(|r| r.mean.clone()) {
        for r in &mut rows {
            r.delta = r.mean.iter().zip(&base).map(|(a, b)| a - b).collect();
        }
    }
    ExperimentTable {
        suite: suite.to_owned(),
        metrics: metrics.iter().map(|m| m.to_string()).collect(),
        baseline: baseline.to_owned(),
        seed_rows,
        rows,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn csv_real(x: f64) -> String {
    real17::format(x).unwrap_or_else(|| "nan".to_owned())
}

impl ExperimentTable {
    pub fn row(&self, label: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == name)
    }

    pub fn mean(&self, label: &str, metric: &str) -> Option<f64> {
        Some(self.row(label)?.mean[self.metric_index(metric)?])
    }

    pub fn has_failures(&self) -> bool {
        self.seed_rows.iter().any(|r| r.error.is_some())
    }

    /// One line per configuration × seed, then `mean`, `sd` and `delta`
    /// lines per configuration. Failed cells carry their error in the last
    /// column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("configuration,seed");
        for m in &self.metrics {
            out.push(',');
            out.push_str(&csv_field(m));
        }
        out.push_str(",error\n");
        let blank = vec![String::new(); self.metrics.len()];
        for r in &self.seed_rows {
            let vals: Vec<String> = if r.error.is_some() {
                blank.clone()
            } else {
                r.values.iter().map(|&x| csv_real(x)).collect()
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&r.label),
                r.seed,
                vals.join(","),
                csv_field(r.error.as_deref().unwrap_or(""))
            ));
        }
        for r in &self.rows {
            for (tag, vals) in [("mean", &r.mean), ("sd", &r.sd), ("delta", &r.delta)] {
                let v: Vec<String> = vals.iter().map(|&x| csv_real(x)).collect();
                out.push_str(&format!("{},{},{},\n", csv_field(&r.label), tag, v.join(",")));
            }
        }
        out
    }

    /// `{x: labels, y: means, err: sds}` for one metric.
    pub fn series(&self, metric: &str) -> Option<PlotSeries> {
        let m = self.metric_index(metric)?;
        Some(PlotSeries {
            metric: metric.to_owned(),
            x: self.rows.iter().map(|r| r.label.clone()).collect(),
            y: self.rows.iter().map(|r| r.mean[m]).collect(),
            err: self.rows.iter().map(|r| r.sd[m]).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub metric: String,
    pub x: Vec<String>,
    #[serde(with = "real17::vec")]
    pub y: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub err: Vec<f64>,
}

/// Maps `f` over independent cells, in parallel when enabled; output order
/// follows `cells`.
fn run_cells<T, R, F>(cfg: &RunConfig, cells: Vec<T>, f: F) -> Vec<R>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || cells.par_iter().map(&f).collect::<Vec<_>>();
        if cfg.experiment.threads > 0 {
            match rayon::ThreadPoolBuilder::new().num_threads(cfg.experiment.threads).build() {
                Ok(pool) => pool.install(run),
                Err(_) => run(),
            }
        } else {
            run()
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = cfg;
        cells.iter().map(f).collect()
    }
}

fn run_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.experiment.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect()
}

fn cell_error(label: &str, seed: u64, e: HarnessError) -> SeedRow {
    SeedRow {
        label: label.to_owned(),
        seed,
        values: Vec::new(),
        error: Some(e.to_string()),
        checkpoint_hash: None,
    }
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub const ABLATION_METRICS: [&str; 4] = ["response_time_h", "retrieval_f1", "cost_reduction_pct", "resolved_rate"];

fn ablation_cell(cfg: &RunConfig, variant: Variant, seed: u64) -> Result<SeedRow, HarnessError> {
    let engine = build_engine(cfg, variant, seed, BuildOptions::default())?;
    let mut scenarios = eval_scenarios(&engine, cfg.experiment.eval_episodes)?;
    let records = evaluate(&engine, variant.policy(), &mut scenarios)?;
    let corpus = semantic_corpus(
        &engine.world,
        cfg.fusion.corpus_classes,
        cfg.fusion.corpus_per_class,
        cfg.world.meta_signal,
        derive_seed(seed, STREAM_CORPUS, 1),
    );
    let f1 = semantic_eval(&corpus, engine.provider().as_mut(), &engine.checkpoint.fusion)?;
    Ok(SeedRow {
        label: variant.label().to_owned(),
        seed,
        values: vec![
            mean_of(records.iter().map(|r| r.metrics.response_time)),
            f1,
            mean_of(records.iter().map(|r| r.metrics.cost_reduction_pct)),
            mean_of(records.iter().map(|r| if r.metrics.resolved { 1.0 } else { 0.0 })),
        ],
        error: None,
        checkpoint_hash: Some(engine.checkpoint.hash()),
    })
}

/// Full engine and the three single-module removals over the configured
/// seeds. Failing cells are recorded and the suite carries on.
pub fn ablation_suite(cfg: &RunConfig) -> ExperimentTable {
    let cells: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| run_seeds(cfg).into_iter().map(move |s| (v, s)))
        .collect();
    let rows = run_cells(cfg, cells, |&(v, s)| {
        ablation_cell(cfg, v, s).unwrap_or_else(|e| cell_error(v.label(), s, e))
    });
    aggregate("ablate", &ABLATION_METRICS, Variant::Full.label(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub label: String,
    pub layers: usize,
    pub aggregation: Aggregation,
    pub weight_mode: WeightMode,
    #[serde(with = "real17")]
    pub lambda: f64,
}

pub const SENSITIVITY_BASELINE: &str = "baseline";

/// One-at-a-time grid around the baseline (2 layers, attention,
/// adaptive weights, λ = 1): layers 1 to 4, each aggregation, fixed α from
/// 0.3 to 0.9 with β = 1 − α, and λ from 0.8 to 1.2.
pub fn sensitivity_cells(cfg: &RunConfig) -> Vec<SensitivityCell> {
    let base = SensitivityCell {
        label: SENSITIVITY_BASELINE.to_owned(),
        layers: cfg.gnn.layers,
        aggregation: cfg.gnn.aggregation,
        weight_mode: cfg.reward.weight_mode,
        lambda: cfg.sac.lambda,
    };
    let mut cells = vec![base.clone()];
    for layers in 1..=4 {
        if layers != base.layers {
            cells.push(SensitivityCell {
                label: format!("layers={layers}"),
                layers,
                ..base.clone()
            });
        }
    }
    for aggregation in [Aggregation::Attn, Aggregation::Mean, Aggregation::Sum] {
        if aggregation != base.aggregation {
            cells.push(SensitivityCell {
                label: format!("aggregation={}", aggregation_label(aggregation)),
                aggregation,
                ..base.clone()
            });
        }
    }
    for alpha in [0.3, 0.45, 0.6, 0.75, 0.9] {
        cells.push(SensitivityCell {
            label: format!("alpha={alpha}"),
            weight_mode: WeightMode::Fixed { alpha, beta: 1.0 - alpha },
            ..base.clone()
        });
    }
    for lambda in [0.8, 0.9, 1.1, 1.2] {
        cells.push(SensitivityCell {
            label: format!("lambda={lambda}"),
            lambda,
            ..base.clone()
        });
    }
    cells
}

fn aggregation_label(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Attn => "attn",
        Aggregation::Mean => "mean",
        Aggregation::Sum => "sum",
    }
}

pub const SENSITIVITY_METRICS: [&str; 4] = ["response_time_h", "retrieval_f1", "over_smoothing", "latency_ops"];

fn sensitivity_run(cfg: &RunConfig, cell: &SensitivityCell, seed: u64) -> Result<SeedRow, HarnessError> {
    let mut c = cfg.clone();
    c.gnn.layers = cell.layers;
    c.gnn.aggregation = cell.aggregation;
    c.reward.weight_mode = cell.weight_mode;
    c.sac.lambda = cell.lambda;
    let engine = build_engine(&c, Variant::Full, seed, BuildOptions::default())?;
    let mut scenarios = eval_scenarios(&engine, c.experiment.eval_episodes)?;
    let truth: Vec<usize> = scenarios
        .iter()
        .map(|s| s.graph.index_of(&s.event.hidden_root_cause).expect("root in graph"))
        .collect();
    let pred: Vec<usize> = scenarios.iter().map(|s| s.predicted.unwrap_or(usize::MAX - 1)).collect();
    let f1 = super::macro_f1(&truth, &pred);
    let records = evaluate(&engine, PolicyKind::SacGnn, &mut scenarios)?;
    let enc = gnn::encode(&engine.graph, &engine.checkpoint.gnn)?;
    let topo = Topology::of(&engine.graph);
    Ok(SeedRow {
        label: cell.label.clone(),
        seed,
        values: vec![
            mean_of(records.iter().map(|r| r.metrics.response_time)),
            f1,
            gnn::over_smoothing(&enc.h_rule),
            gnn::encode_cost(&topo, &engine.checkpoint.gnn) as f64,
        ],
        error: None,
        checkpoint_hash: Some(engine.checkpoint.hash()),
    })
}

/// Every sensitivity cell over the configured seeds.
pub fn sensitivity_grid(cfg: &RunConfig) -> ExperimentTable {
    sensitivity_table(cfg, sensitivity_cells(cfg))
}

/// A chosen subset of cells over the configured seeds. Include the
/// baseline cell or the delta rows are zero.
pub fn sensitivity_table(cfg: &RunConfig, cells: Vec<SensitivityCell>) -> ExperimentTable {
    let cells: Vec<(SensitivityCell, u64)> = cells
        .into_iter()
        .flat_map(|c| run_seeds(cfg).into_iter().map(move |s| (c.clone(), s)))
        .collect();
    let rows = run_cells(cfg, cells, |(c, s)| {
        sensitivity_run(cfg, c, *s).unwrap_or_else(|e| cell_error(&c.label, *s, e))
    });
    aggregate("sweep", &SENSITIVITY_METRICS, SENSITIVITY_BASELINE, rows)
}

pub const SCENARIO_METRICS: [&str; 3] = ["response_time_h", "cost_reduction_pct", "resolved_rate"];

fn scenario_seed_rows(cfg: &RunConfig, seed: u64) -> Result<Vec<SeedRow>, HarnessError> {
    let engine = build_engine(cfg, Variant::Full, seed, BuildOptions { sac: true, dqn: true })?;
    let scenarios = eval_scenarios(&engine, cfg.experiment.eval_episodes.max(ScenarioKind::ALL.len()))?;
    let hash = engine.checkpoint.hash();
    let mut by_label: BTreeMap<(PolicyKind, ScenarioKind), Vec<EpisodeRecord>> = BTreeMap::new();
    for policy in PolicyKind::ALL {
        let mut sc = scenarios.clone();
        for r in evaluate(&engine, policy, &mut sc)? {
            by_label.entry((policy, r.kind)).or_default().push(r);
        }
    }
    Ok(by_label
        .into_iter()
        .map(|((p, k), recs)| SeedRow {
            label: format!("{p}/{k}"),
            seed,
            values: vec![
                mean_of(recs.iter().map(|r| r.metrics.response_time)),
                mean_of(recs.iter().map(|r| r.metrics.cost_reduction_pct)),
                mean_of(recs.iter().map(|r| if r.metrics.resolved { 1.0 } else { 0.0 })),
            ],
            error: None,
            checkpoint_hash: Some(hash.clone()),
        })
        .collect())
}

/// Per-kind response of each policy: eight rows per policy.
pub fn scenario_suite(cfg: &RunConfig) -> ExperimentTable {
    let batches = run_cells(cfg, run_seeds(cfg), |&s| (s, scenario_seed_rows(cfg, s)));
    let mut flat = Vec::new();
    for (seed, batch) in batches {
        match batch {
            Ok(rows) => flat.extend(rows),
            Err(e) => {
                // a failed seed fails every row label
                let msg = e.to_string();
                for p in PolicyKind::ALL {
                    for k in ScenarioKind::ALL {
                        flat.push(SeedRow {
                            label: format!("{p}/{k}"),
                            seed,
                            values: Vec::new(),
                            error: Some(msg.clone()),
                            checkpoint_hash: None,
                        });
                    }
                }
            }
        }
    }
    let baseline = format!("{}/{}", PolicyKind::SacGnn, ScenarioKind::ALL[0]);
    aggregate("scenarios", &SCENARIO_METRICS, &baseline, flat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerReport {
    pub episodes: usize,
    /// Episodes whose degraded equipment had health below 0.4.
    pub triggered: usize,
    /// Episodes where the deployed (mean-action) policy opened with
    /// diagnosis followed by spare-part pre-scheduling.
    pub hits: usize,
    #[serde(with = "real17")]
    pub probability: f64,
    /// The same count with actions sampled from the stochastic policy.
    pub sampled_hits: usize,
    #[serde(with = "real17")]
    pub sampled_probability: f64,
}

fn opening(engine: &Engine, start: &OpsState, mut rng: Option<&mut ChaCha8Rng>) -> Result<Vec<usize>, HarnessError> {
    let mut s = start.clone();
    let mut out = Vec::new();
    for _ in 0..2 {
        if s.done {
            break;
        }
        let obs = s.observation();
        let u = match rng.as_deref_mut() {
            Some(r) => sample_action(&engine.checkpoint.sac.actor, &obs, r)?.u,
            None => engine.checkpoint.sac.actor.greedy(&obs),
        };
        let a = decode_action(&engine.checkpoint.catalog, &u);
        out.push(a);
        s = s.transition(a).0;
    }
    Ok(out)
}

/// Trains on equipment failures only, then plays the actor (without tree
/// search) on fresh equipment failures and counts how often it opens with
/// diagnosis followed by spare-part pre-scheduling.
pub fn evaluate_trigger(cfg: &RunConfig, seed: u64) -> Result<TriggerReport, HarnessError> {
    let mut c = cfg.clone();
    let mut weights = vec![0.0; ScenarioKind::ALL.len()];
    weights[ScenarioKind::EquipmentFailure.index()] = 1.0;
    c.experiment.kind_weights = weights;
    let engine = build_engine(&c, Variant::Full, seed, BuildOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EPISODE, u64::MAX));
    let n = c.experiment.trigger_episodes;
    let target = [act::DIAGNOSE, act::PRESCHEDULE];
    let (mut hits, mut sampled_hits, mut triggered) = (0, 0, 0);
    for i in 0..n {
        let sc = prepare_scenario(&engine, ScenarioKind::EquipmentFailure, derive_seed(seed, STREAM_EVAL, 1_000_000 + i as u64))?;
        if sc
            .graph
            .node(&sc.event.hidden_root_cause)
            .and_then(|n| n.health_score())
            .is_some_and(|h| h < 0.4)
        {
            triggered += 1;
        }
        if opening(&engine, &sc.start, None)? == target {
            hits += 1;
        }
        if opening(&engine, &sc.start, Some(&mut rng))? == target {
            sampled_hits += 1;
        }
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(TriggerReport {
        episodes: n,
        triggered,
        hits,
        probability: frac(hits),
        sampled_hits,
        sampled_probability: frac(sampled_hits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.experiment.seeds = 2;
        c.experiment.sac_episodes = 60;
        c.experiment.dqn_episodes = 60;
        c.experiment.train_pool = 16;
        c.experiment.eval_episodes = 8;
        c.experiment.trigger_episodes = 10;
        c.experiment.threads = 1;
        c.fusion.epochs = 20;
        c.gnn.pretrain_epochs = 20;
        c
    }

    fn row(label: &str, seed: u64, values: Vec<f64>) -> SeedRow {
        SeedRow {
            label: label.into(),
            seed,
            values,
            error: None,
            checkpoint_hash: None,
        }
    }

    #[test]
    fn equipment_failures_fall_below_the_health_trigger() {
        let engine = build_engine(&small(), Variant::Full, 3, BuildOptions { sac: false, dqn: false }).unwrap();
        for i in 0..40 {
            let sc = prepare_scenario(&engine, ScenarioKind::EquipmentFailure, i).unwrap();
            let h = sc.graph.node(&sc.event.hidden_root_cause).and_then(|n| n.health_score()).unwrap();
            assert!(h < 0.4, "{h}");
        }
    }

    #[test]
    fn kind_draws_fit_uniform_weights() {
        // chi-square, 7 dof, 5% critical value 18.475; about 1 in 20 seeds
        // may exceed it by chance
        let mut over = 0;
        for seed in 0..20 {
            let kinds = draw_kinds(&[1.0; 8], 100, seed);
            let mut counts = [0f64; 8];
            for k in kinds {
                counts[k.index()] += 1.0;
            }
            let chi: f64 = counts.iter().map(|c| (c - 12.5).powi(2) / 12.5).sum();
            if chi > 18.475 {
                over += 1;
            }
        }
        assert!(over <= 3, "{over}");
        let mut w = [1.0; 8];
        w[2] = 0.0;
        assert!(draw_kinds(&w, 500, 1).iter().all(|k| *k != ScenarioKind::EmergencyOrder));
    }

    #[test]
    fn derived_seeds_separate_streams() {
        let a: Vec<u64> = (0..50).map(|i| derive_seed(7, STREAM_TRAIN, i)).collect();
        let b: Vec<u64> = (0..50).map(|i| derive_seed(7, STREAM_EVAL, i)).collect();
        assert!(a.iter().all(|x| !b.contains(x)));
        assert_eq!(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
    }

    #[test]
    fn aggregate_matches_hand_statistics() {
        let mut failed = row("b", 9, Vec::new());
        failed.error = Some("boom".into());
        let t = aggregate(
            "x",
            &["m0", "m1"],
            "a",
            vec![
                row("b", 2, vec![4.0, 0.0]),
                row("a", 1, vec![3.0, 10.0]),
                failed,
                row("a", 0, vec![1.0, 2.0]),
                row("b", 1, vec![6.0, 0.0]),
            ],
        );
        assert_eq!(t.rows.len(), 2);
        let a = t.row("a").unwrap();
        assert_eq!((a.n, a.failed), (2, 0));
        assert_eq!(a.mean, vec![2.0, 6.0]);
        assert!((a.sd[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!((a.sd[1] - 32f64.sqrt()).abs() < 1e-12);
        let b = t.row("b").unwrap();
        assert_eq!((b.n, b.failed), (2, 1));
        assert_eq!(b.delta, vec![3.0, -6.0]);
        assert_eq!(a.delta, vec![0.0, 0.0]);
        // grouped in first-appearance order, then by seed
        let order: Vec<(String, u64)> = t.seed_rows.iter().map(|r| (r.label.clone(), r.seed)).collect();
        let want = [("b", 1), ("b", 2), ("b", 9), ("a", 0), ("a", 1)];
        assert_eq!(order, want.map(|(l, s)| (l.to_owned(), s)).to_vec());
        assert!(t.has_failures());
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 1 + 5 + 2 * 3);
        assert!(csv.lines().any(|l| l == "b,9,,,boom"));
        let s = t.series("m1").unwrap();
        assert_eq!(s.x, vec!["b", "a"]);
        assert_eq!(s.y, vec![0.0, 6.0]);
    }

    #[test]
    fn engine_build_is_deterministic() {
        let cfg = small();
        let opts = BuildOptions { sac: true, dqn: true };
        let a = build_engine(&cfg, Variant::Full, 11, opts).unwrap();
        let b = build_engine(&cfg, Variant::Full, 11, opts).unwrap();
        let c = build_engine(&cfg, Variant::Full, 12, opts).unwrap();
        assert_eq!(a.checkpoint.hash(), b.checkpoint.hash());
        assert_eq!(a.dqn, b.dqn);
        assert_ne!(a.checkpoint.hash(), c.checkpoint.hash());
        let mut sa = eval_scenarios(&a, 8).unwrap();
        let mut sb = eval_scenarios(&b, 8).unwrap();
        assert_eq!(
            evaluate(&a, PolicyKind::SacGnn, &mut sa).unwrap(),
            evaluate(&b, PolicyKind::SacGnn, &mut sb).unwrap()
        );
    }

    #[test]
    fn heuristic_episodes_resolve_and_are_recorded() {
        let engine = build_engine(&small(), Variant::NoSac, 5, BuildOptions::default()).unwrap();
        assert!(!engine.sac_trained);
        let mut scenarios = eval_scenarios(&engine, 8).unwrap();
        let kinds: Vec<ScenarioKind> = scenarios.iter().map(|s| s.event.kind).collect();
        assert_eq!(kinds, ScenarioKind::ALL.to_vec());
        let before = scenarios[0].graph.node_count();
        let recs = evaluate(&engine, PolicyKind::Heuristic, &mut scenarios).unwrap();
        for (r, sc) in recs.iter().zip(&scenarios) {
            assert!(r.metrics.resolved, "{:?}", r.kind);
            assert_eq!(r.metrics.cost_reduction_pct, 0.0);
            assert_eq!(r.path.len(), 3);
            assert!(sc.graph.node(&r.history_node).is_some());
        }
        assert!(scenarios[0].graph.node_count() > before);
        assert!(matches!(
            run_episode(&engine, PolicyKind::SacGnn, &mut scenarios[0], 0),
            Err(HarnessError::Untrained(PolicyKind::SacGnn))
        ));
        assert!(matches!(
            run_episode(&engine, PolicyKind::Dqn, &mut scenarios[0], 0),
            Err(HarnessError::Untrained(PolicyKind::Dqn))
        ));
    }

    #[test]
    fn suites_have_the_expected_shape() {
        let mut cfg = small();
        cfg.experiment.seeds = 1;
        let t = ablation_suite(&cfg);
        assert!(!t.has_failures());
        let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["full", "w/o-fusion", "w/o-gnn", "w/o-sac"]);
        assert_eq!(t.metrics.len(), ABLATION_METRICS.len());

        let t = scenario_suite(&cfg);
        assert!(!t.has_failures());
        assert_eq!(t.rows.len(), 3 * 8);
        for p in PolicyKind::ALL {
            assert_eq!(t.rows.iter().filter(|r| r.label.starts_with(&format!("{p}/"))).count(), 8);
        }

        let cells: Vec<SensitivityCell> = sensitivity_cells(&cfg)
            .into_iter()
            .filter(|c| c.label == SENSITIVITY_BASELINE || c.label == "layers=4")
            .collect();
        let t = sensitivity_table(&cfg, cells);
        assert_eq!(t.rows.len(), 2);
        let l4 = t.mean("layers=4", "latency_ops").unwrap();
        let l2 = t.mean(SENSITIVITY_BASELINE, "latency_ops").unwrap();
        assert!(l4 > l2);
    }

    #[test]
    fn sensitivity_grid_varies_one_factor_at_a_time() {
        let cells = sensitivity_cells(&RunConfig::default());
        assert_eq!(cells.len(), 1 + 3 + 2 + 5 + 4);
        let base = &cells[0];
        for c in &cells[1..] {
            let diffs = [
                c.layers != base.layers,
                c.aggregation != base.aggregation,
                c.weight_mode != base.weight_mode,
                c.lambda != base.lambda,
            ];
            assert_eq!(diffs.iter().filter(|d| **d).count(), 1, "{}", c.label);
        }
    }

    #[test]
    fn trigger_report_is_consistent() {
        let r = evaluate_trigger(&small(), 2).unwrap();
        assert_eq!(r.episodes, 10);
        assert_eq!(r.triggered, 10);
        assert!(r.hits <= 10 && r.sampled_hits <= 10);
        assert_eq!(r.probability, r.hits as f64 / 10.0);
    }

    #[test]
    fn restored_engine_decides_like_the_original() {
        let mut cfg = small();
        cfg.experiment.sac_episodes = 20;
        let engine = build_engine(&cfg, Variant::Full, 21, BuildOptions::default()).unwrap();
        let restored = Engine::restore(&cfg, EngineCheckpoint::from_json(&engine.checkpoint.to_json()).unwrap()).unwrap();
        assert_eq!(restored.graph.snapshot_hash().unwrap(), engine.graph.snapshot_hash().unwrap());
        let (a, ga) = decide(&engine, ScenarioKind::SystemFailure, 4).unwrap();
        let (b, gb) = decide(&restored, ScenarioKind::SystemFailure, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga.snapshot_hash().unwrap(), gb.snapshot_hash().unwrap());
        let o = &a.objectives;
        let total = o.time_term + o.cost_term + o.overflow_term;
        assert!((total - a.record.metrics.episode_return).abs() < 1e-9, "{total} vs {}", a.record.metrics.episode_return);
        for row in &a.explanation.heat_map.grid {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(a.explanation.chain.len(), a.record.path.len());

        let mut other = cfg.clone();
        other.dims.d_z += 1;
        assert!(matches!(Engine::restore(&other, engine.checkpoint.clone()), Err(HarnessError::Mismatch(_))));
    }
}
