//! Factory world: lines, equipment, suppliers and products with their
//! documents, each carrying a latent topic. The provider sees topics
//! clearly, node metadata only faintly, which is what makes semantic
//! fusion and dynamic edges matter for locating a root cause.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ScenarioEvent, ScenarioKind};
use crate::fusion::{EmbeddingProvider, EmbeddingResponse, ProviderError, TripleRecord};
use crate::gnn::{self, GnnError, GnnParams};
use crate::graph::{EntityNode, GraphDims, GraphError, KnowledgeGraph, NodeEmbedder, NodeId, NodeKind};
use crate::linalg::{self, Matrix};
use crate::real17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub lines: usize,
    pub equipment_per_line: usize,
    pub suppliers: usize,
    pub products: usize,
    pub d_topic: usize,
    pub d_g: usize,
    pub d_m: usize,
    pub d_s: usize,
    /// Scale of the topic component in node metadata.
    #[serde(with = "real17")]
    pub meta_signal: f64,
    #[serde(with = "real17")]
    pub meta_noise: f64,
    /// Per-triple noise added to provider vectors.
    #[serde(with = "real17")]
    pub provider_noise: f64,
    /// Topic scale in incident-report metadata, as a fraction of
    /// `meta_signal`; reports are free text whose structured fields say
    /// little about the cause.
    #[serde(with = "real17")]
    pub report_signal: f64,
    #[serde(with = "real17")]
    pub report_noise: f64,
    #[serde(with = "real17")]
    pub dynamic_threshold: f64,
    pub backlog_max: u32,
    #[serde(with = "real17")]
    pub budget: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            lines: 3,
            equipment_per_line: 3,
            suppliers: 4,
            products: 4,
            d_topic: 16,
            d_g: 32,
            d_m: 16,
            d_s: 32,
            meta_signal: 0.3,
            meta_noise: 0.03,
            provider_noise: 0.03,
            report_signal: 0.1,
            report_noise: 0.06,
            dynamic_threshold: 0.7,
            backlog_max: 10,
            budget: 6000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("graph has no {0} node for this scenario")]
    MissingKind(&'static str),
    #[error("scenario needs {needed} affected nodes, graph offers {found}")]
    TooFewAffected { needed: usize, found: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

/// Unit topic vector `k` of the world seeded by `seed`.
pub fn topic_vector(seed: u64, k: usize, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15 ^ (k as u64).wrapping_mul(0x2545_f491));
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    if !linalg::normalize(&mut v) {
        v[0] = 1.0;
    }
    v
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let scale = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| scale * { let z: f64 = StandardNormal.sample(rng); z })
}

/// Latent structure shared by graph construction and the provider.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    meta_proj: Matrix,
}

impl World {
    pub fn new(config: WorldConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let meta_proj = gaussian_matrix(config.d_m, config.d_topic, &mut rng);
        Self { config, seed, meta_proj }
    }

    pub fn topic(&self, k: usize) -> Vec<f64> {
        topic_vector(self.seed, k, self.config.d_topic)
    }

    /// `signal·Q·t_k + noise·ε`.
    pub fn metadata(&self, k: usize, signal: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let clean = self.meta_proj.matvec(&self.topic(k));
        clean
            .iter()
            .map(|x| signal * x + noise * { let z: f64 = StandardNormal.sample(rng); z })
            .collect()
    }

    /// Noise-free metadata of topic `k`.
    pub fn metadata_anchor(&self, k: usize) -> Vec<f64> {
        self.meta_proj
            .matvec(&self.topic(k))
            .iter()
            .map(|x| self.config.meta_signal * x)
            .collect()
    }

    /// Number of topics used by graph entities; later indices are free for
    /// corpora.
    pub fn entity_topics(&self) -> usize {
        let c = &self.config;
        c.lines * c.equipment_per_line + c.lines + c.suppliers + c.products
    }

    pub fn provider(&self) -> WorldProvider {
        WorldProvider::new(self.seed, self.config.d_g, self.config.d_topic, self.config.provider_noise)
    }

    /// Graph structure with metadata and `topic` attributes, no semantic
    /// vectors yet.
    pub fn base_graph(&self) -> KnowledgeGraph {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(2));
        let mut g = KnowledgeGraph::new(GraphDims { d_m: c.d_m, d_s: c.d_s });
        let mut topic = 0usize;
        let add = |g: &mut KnowledgeGraph, node: EntityNode, t: usize, rng: &mut ChaCha8Rng| {
            let m = self.metadata(t, c.meta_signal, c.meta_noise, rng);
            g.add_entity(node.with_attribute("topic", t as f64).with_metadata(m))
                .expect("generated ids are unique")
        };
        let mut lines = Vec::new();
        for l in 0..c.lines {
            lines.push(add(&mut g, EntityNode::new(format!("line-{l}"), NodeKind::ProductionLine), topic, &mut rng));
            topic += 1;
        }
        for (l, line) in lines.iter().enumerate() {
            for e in 0..c.equipment_per_line {
                let health = rng.random_range(0.6..1.0);
                let eq = add(
                    &mut g,
                    EntityNode::new(format!("equipment-{l}-{e}"), NodeKind::Equipment).with_attribute("health_score", health),
                    topic,
                    &mut rng,
                );
                g.add_rule_edge(&eq, line, "part-of").expect("nodes exist");
                let doc = add(&mut g, EntityNode::new(format!("manual-{l}-{e}"), NodeKind::Document), topic, &mut rng);
                g.add_rule_edge(&doc, &eq, "describes").expect("nodes exist");
                let wo = add(&mut g, EntityNode::new(format!("work-order-{l}-{e}"), NodeKind::WorkOrder), topic, &mut rng);
                g.add_rule_edge(&wo, &eq, "targets").expect("nodes exist");
                topic += 1;
            }
        }
        let mut products = Vec::new();
        for p in 0..c.products {
            let id = add(&mut g, EntityNode::new(format!("product-{p}"), NodeKind::Product), topic, &mut rng);
            topic += 1;
            g.add_rule_edge(&lines[p % lines.len().max(1)], &id, "produces").ok();
            if lines.len() > 1 && rng.random_bool(0.5) {
                g.add_rule_edge(&lines[(p + 1) % lines.len()], &id, "produces").ok();
            }
            products.push(id);
        }
        for s in 0..c.suppliers {
            let id = add(&mut g, EntityNode::new(format!("supplier-{s}"), NodeKind::Supplier), topic, &mut rng);
            topic += 1;
            if !products.is_empty() {
                g.add_rule_edge(&id, &products[s % products.len()], "supplies").ok();
                g.add_rule_edge(&id, &products[(s + 1) % products.len()], "supplies").ok();
            }
        }
        g
    }
}

/// Offline provider for the simulated world: a triple whose context names
/// `topic=<k>` maps to `P·t_k` plus small per-triple noise; anything else
/// maps to a hashed direction.
#[derive(Debug, Clone)]
pub struct WorldProvider {
    seed: u64,
    d_topic: usize,
    noise: f64,
    proj: Matrix,
}

impl WorldProvider {
    pub fn new(seed: u64, d_g: usize, d_topic: usize, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        Self {
            seed,
            d_topic,
            noise,
            proj: gaussian_matrix(d_g, d_topic, &mut rng),
        }
    }

    fn triple_rng(&self, t: &TripleRecord) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for field in [&t.subject, &t.relation, &t.object, &t.context] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    pub fn vector_for(&self, t: &TripleRecord) -> Vec<f64> {
        let mut rng = self.triple_rng(t);
        let topic = parse_topic(&t.context).map(|k| topic_vector(self.seed, k, self.d_topic));
        let mut v = match topic {
            Some(tv) => {
                let mut v = self.proj.matvec(&tv);
                for x in &mut v {
                    *x += self.noise * { let z: f64 = StandardNormal.sample(&mut rng); z };
                }
                v
            }
            None => (0..self.proj.rows()).map(|_| StandardNormal.sample(&mut rng)).collect(),
        };
        if !linalg::normalize(&mut v) {
            v[0] = 1.0;
        }
        v
    }
}

fn parse_topic(context: &str) -> Option<usize> {
    context
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("topic="))
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| *v >= 0.0 && v.fract() == 0.0)
        .map(|v| v as usize)
}

impl EmbeddingProvider for WorldProvider {
    fn dim(&self) -> usize {
        self.proj.rows()
    }

    fn embed_batch(&mut self, triples: &[TripleRecord]) -> Result<Vec<EmbeddingResponse>, ProviderError> {
        Ok(triples
            .iter()
            .map(|t| EmbeddingResponse {
                explanation: format!("{} {} {}", t.subject, t.relation, t.object),
                vector: self.vector_for(t),
            })
            .collect())
    }
}

/// Base graph with semantic vectors from `embedder` and dynamic edges.
pub fn build_world(world: &World, embedder: &mut dyn NodeEmbedder) -> Result<KnowledgeGraph, ScenarioError> {
    let mut g = world.base_graph();
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id.clone()).collect();
    for id in ids {
        let v = embedder.embed_node(g.node(&id).expect("listed id"))?;
        g.node_mut(&id).expect("listed id").semantic_vector = Some(v);
    }
    g.create_dynamic_edges(world.config.dynamic_threshold);
    Ok(g)
}

fn is_operational(kind: NodeKind) -> bool {
    matches!(
        kind,
        NodeKind::Equipment | NodeKind::ProductionLine | NodeKind::Product | NodeKind::Supplier
    )
}

fn rule_neighbors_of(graph: &KnowledgeGraph, id: &NodeId) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = graph
        .rule_edges()
        .filter_map(|e| {
            if &e.src == id {
                Some(e.dst.clone())
            } else if &e.dst == id {
                Some(e.src.clone())
            } else {
                None
            }
        })
        .filter(|n| graph.node(n).is_some_and(|x| is_operational(x.kind)))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Plants an incident of `kind` in `graph`: picks a hidden root cause,
/// degrades it, and adds an incident-report document linked to one of the
/// affected entities (not the root, when another is available).
pub fn generate_scenario(
    world: &World,
    kind: ScenarioKind,
    graph: &mut KnowledgeGraph,
    seed: u64,
    embedder: &mut dyn NodeEmbedder,
) -> Result<ScenarioEvent, ScenarioError> {
    let spec = kind.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<NodeId> = graph.nodes().filter(|n| n.kind == spec.root).map(|n| n.id.clone()).collect();
    let root = candidates
        .choose(&mut rng)
        .cloned()
        .ok_or(ScenarioError::MissingKind(spec.root.label()))?;
    let severity: f64 = rng.random_range(0.0..1.0);
    let backlog = rng.random_range(0..=world.config.backlog_max);

    let mut affected = vec![root.clone()];
    let mut frontier = vec![root.clone()];
    while affected.len() < spec.min_affected && !frontier.is_empty() {
        let mut next = Vec::new();
        for id in &frontier {
            for n in rule_neighbors_of(graph, id) {
                if !affected.contains(&n) {
                    affected.push(n.clone());
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    if spec.min_affected > 2 && affected.len() < spec.min_affected {
        return Err(ScenarioError::TooFewAffected {
            needed: spec.min_affected,
            found: affected.len(),
        });
    }

    let root_node = graph.node_mut(&root).expect("root exists");
    let topic = root_node.attributes.get("topic").copied();
    match kind {
        ScenarioKind::EquipmentFailure => {
            root_node
                .attributes
                .insert("health_score".into(), 0.35 * (1.0 - severity));
        }
        ScenarioKind::SystemFailure => {
            root_node.attributes.insert("health_score".into(), 0.6 - 0.2 * severity);
        }
        _ => {}
    }

    let mut report_id = NodeId::new(format!("incident-{seed}"));
    let mut bump = 0;
    while graph.node(&report_id).is_some() {
        bump += 1;
        report_id = NodeId::new(format!("incident-{seed}-{bump}"));
    }
    let mut report = EntityNode::new(report_id.clone(), NodeKind::Document).with_attribute("severity", severity);
    let meta = match topic {
        Some(t) => {
            report = report.with_attribute("topic", t);
            world.metadata(
                t as usize,
                world.config.report_signal * world.config.meta_signal,
                world.config.report_noise,
                &mut rng,
            )
        }
        None => (0..world.config.d_m)
            .map(|_| world.config.report_noise * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect(),
    };
    report = report.with_metadata(meta);
    let v = embedder.embed_node(&report)?;
    report = report.with_semantic(v);
    graph.add_entity(report)?;
    let link = affected[1..].choose(&mut rng).unwrap_or(&root).clone();
    graph.add_rule_edge(&report_id, &link, "reports-on")?;
    graph.create_dynamic_edges(world.config.dynamic_threshold);

    Ok(ScenarioEvent {
        kind,
        severity,
        t_baseline: spec.t_baseline,
        budget: world.config.budget * (0.8 + 0.4 * severity),
        backlog,
        affected_nodes: affected,
        hidden_root_cause: root,
        report: report_id,
    })
}

/// Where node representations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Trained encoder.
    Gnn,
    /// Initial features next to their rule-neighborhood mean; no learned
    /// layers, no semantic edges.
    Static,
}

/// Decision-layer node features under `mode`, one row per node in graph
/// order: the joint embedding, or the static stand-in.
pub fn node_features(graph: &KnowledgeGraph, mode: FeatureMode, params: &GnnParams) -> Result<Vec<Vec<f64>>, GnnError> {
    match mode {
        FeatureMode::Gnn => Ok(gnn::encode(graph, params)?.h_joint),
        FeatureMode::Static => static_features(graph),
    }
}

/// Features used to rank root-cause candidates. With the encoder this is
/// the semantic-edge layer output, which carries evidence across documents
/// linked by similarity; the rule half of the joint embedding mostly adds
/// neighborhood averages that blur candidates of one kind together.
pub fn ranking_features(graph: &KnowledgeGraph, mode: FeatureMode, params: &GnnParams) -> Result<Vec<Vec<f64>>, GnnError> {
    match mode {
        FeatureMode::Gnn => Ok(gnn::encode(graph, params)?.h_dyn),
        FeatureMode::Static => static_features(graph),
    }
}

fn static_features(graph: &KnowledgeGraph) -> Result<Vec<Vec<f64>>, GnnError> {
    let h0 = gnn::init_node_features(graph)?;
    Ok(graph
        .rule_neighbors()
        .iter()
        .zip(&h0)
        .map(|(nbrs, own)| {
            let rows: Vec<Vec<f64>> = nbrs.iter().map(|&j| h0[j].clone()).collect();
            let mean = if rows.is_empty() { vec![0.0; own.len()] } else { linalg::mean_rows(&rows) };
            linalg::concat(own, &mean)
        })
        .collect())
}

/// Candidates of the root cause's kind with their centered cosine to the
/// incident report, in graph order.
pub fn candidate_scores(graph: &KnowledgeGraph, event: &ScenarioEvent, features: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let root_kind = graph.node(&event.hidden_root_cause).map(|n| n.kind);
    let cands: Vec<usize> = graph
        .nodes()
        .enumerate()
        .filter(|(_, n)| Some(n.kind) == root_kind)
        .map(|(i, _)| i)
        .collect();
    let Some(report) = graph.index_of(&event.report) else {
        return cands.into_iter().map(|i| (i, 0.0)).collect();
    };
    let rows: Vec<Vec<f64>> = cands.iter().map(|&i| features[i].clone()).collect();
    let center = linalg::mean_rows(&rows);
    let q = linalg::sub(&features[report], &center);
    cands
        .iter()
        .zip(&rows)
        .map(|(&i, r)| (i, linalg::cosine(&q, &linalg::sub(r, &center))))
        .collect()
}

/// Highest-scoring candidate; the earliest wins ties.
pub fn predicted_root(graph: &KnowledgeGraph, event: &ScenarioEvent, features: &[Vec<f64>]) -> Option<usize> {
    candidate_scores(graph, event, features)
        .into_iter()
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

/// 1-based position of the hidden root cause among all nodes of its kind,
/// ordered by centered cosine to the incident report (ties count against
/// the root).
pub fn root_cause_rank(graph: &KnowledgeGraph, event: &ScenarioEvent, features: &[Vec<f64>]) -> usize {
    let scores = candidate_scores(graph, event, features);
    let Some(root) = graph.index_of(&event.hidden_root_cause) else {
        return scores.len().max(1);
    };
    let Some(&(_, own)) = scores.iter().find(|(i, _)| *i == root) else {
        return scores.len().max(1);
    };
    1 + scores.iter().filter(|&&(i, s)| i != root && s >= own).count()
}
