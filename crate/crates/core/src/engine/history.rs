//! Decision-history write-back and per-decision explanations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ActionCatalog, Critic, DecisionPath};
use crate::gnn::{self, GnnError, GnnParams, Topology};
use crate::graph::{EntityNode, GraphError, KnowledgeGraph, NodeId, NodeKind};
use crate::linalg;

pub const HISTORY_RELATION: &str = "decided-on";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub response_time_h: f64,
    pub cost: f64,
    pub resource_overflow: f64,
    pub reward: f64,
    pub resolved: bool,
}

/// Appends a decision-history node recording `outcome` for `path`, with a
/// rule edge to every entity in `touched`. Nodes are numbered by a
/// `sequence` attribute so decisions within one epoch stay ordered.
pub fn write_decision_history(
    graph: &mut KnowledgeGraph,
    path: &DecisionPath,
    touched: &[NodeId],
    outcome: &DecisionOutcome,
) -> Result<NodeId, GraphError> {
    let targets: Vec<&NodeId> = {
        let mut seen = BTreeSet::new();
        touched.iter().filter(|id| seen.insert(*id)).collect()
    };
    let d_m = graph.dims().d_m;
    let mut meta = vec![0.0; d_m];
    let mut with_meta = 0usize;
    for id in &targets {
        let node = graph.node(id).ok_or_else(|| GraphError::MissingNode((*id).clone()))?;
        if let Some(m) = &node.metadata_embedding {
            linalg::axpy(&mut meta, 1.0, m);
            with_meta += 1;
        }
    }
    if with_meta > 0 {
        meta.iter_mut().for_each(|x| *x /= with_meta as f64);
    }
    let sequence = graph.nodes().filter(|n| n.kind == NodeKind::DecisionHistory).count();
    let node = EntityNode::new(format!("decision-{sequence}"), NodeKind::DecisionHistory)
        .with_metadata(meta)
        .with_attribute("sequence", sequence as f64)
        .with_attribute("path_length", path.len() as f64)
        .with_attribute("response_time_h", outcome.response_time_h)
        .with_attribute("cost", outcome.cost)
        .with_attribute("resource_overflow", outcome.resource_overflow)
        .with_attribute("reward", outcome.reward)
        .with_attribute("resolved", if outcome.resolved { 1.0 } else { 0.0 });
    let id = graph.add_entity(node)?;
    for target in targets {
        graph.add_rule_edge(&id, target, HISTORY_RELATION)?;
    }
    Ok(id)
}

/// Attention among the entities a decision touched, from the last rule
/// layer, with each row renormalized over those entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    pub entities: Vec<NodeId>,
    pub grid: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualStep {
    pub step: usize,
    pub chosen: String,
    pub chosen_q: f64,
    /// `None` for a single-action catalog.
    pub best_alternative: Option<String>,
    pub alternative_q: f64,
    /// `chosen_q − alternative_q`; zero without an alternative.
    pub q_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub heat_map: HeatMap,
    pub chain: Vec<CounterfactualStep>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error("unknown entity `{0}`")]
    MissingEntity(NodeId),
    #[error("path has {path} steps but {states} states were given")]
    StateCount { path: usize, states: usize },
    #[error("critic expects state width {expected}, got {actual}")]
    StateWidth { expected: usize, actual: usize },
}

/// Builds the heat map over `touched` and the per-step Q comparison of the
/// chosen action against the best other catalog action, evaluated by
/// `critic` at `states[t]`.
pub fn explain_decision(
    graph: &KnowledgeGraph,
    gnn_params: &GnnParams,
    touched: &[NodeId],
    path: &DecisionPath,
    states: &[Vec<f64>],
    critic: &Critic,
    catalog: &ActionCatalog,
) -> Result<Explanation, ExplainError> {
    let heat_map = heat_map(graph, gnn_params, touched)?;
    if states.len() != path.len() {
        return Err(ExplainError::StateCount {
            path: path.len(),
            states: states.len(),
        });
    }
    let d_s = critic.l1.w.cols() - catalog.dim();
    let mut chain = Vec::with_capacity(path.len());
    for (t, (id, s)) in path.steps().iter().zip(states).enumerate() {
        if s.len() != d_s {
            return Err(ExplainError::StateWidth {
                expected: d_s,
                actual: s.len(),
            });
        }
        let chosen = catalog.index_of(id).expect("path ids come from the catalog");
        let q: Vec<f64> = catalog.actions.iter().map(|a| critic.q(s, &a.embedding)).collect();
        let alt = (0..q.len())
            .filter(|&k| k != chosen)
            .fold(None::<usize>, |best, k| match best {
                Some(b) if q[b] >= q[k] => Some(b),
                _ => Some(k),
            });
        let (best_alternative, alternative_q, q_gap) = match alt {
            Some(k) => (Some(catalog.actions[k].id.clone()), q[k], q[chosen] - q[k]),
            None => (None, q[chosen], 0.0),
        };
        chain.push(CounterfactualStep {
            step: t,
            chosen: id.clone(),
            chosen_q: q[chosen],
            best_alternative,
            alternative_q,
            q_gap,
        });
    }
    Ok(Explanation { heat_map, chain })
}

fn heat_map(graph: &KnowledgeGraph, params: &GnnParams, touched: &[NodeId]) -> Result<HeatMap, ExplainError> {
    let mut seen = BTreeSet::new();
    let entities: Vec<NodeId> = touched.iter().filter(|id| seen.insert(*id)).cloned().collect();
    let idx = entities
        .iter()
        .map(|id| graph.index_of(id).ok_or_else(|| ExplainError::MissingEntity(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    params.validate()?;
    let topo = Topology::of(graph);
    let mut h = gnn::init_node_features(graph)?;
    let (last, earlier) = params.layers.split_last().ok_or(GnnError::InvalidParams("no rule layers".into()))?;
    for layer in earlier {
        h = gnn::rule_layer_topo(&topo, &h, layer, params.aggregation);
    }
    let alpha = gnn::rule_attention(graph, &h, last);
    let grid = idx
        .iter()
        .map(|&i| {
            let row: Vec<f64> = idx.iter().map(|&j| alpha.get(i, j)).collect();
            let total: f64 = row.iter().sum();
            // the diagonal is always a neighbor, so total > 0
            row.iter().map(|x| x / total).collect()
        })
        .collect();
    Ok(HeatMap { entities, grid })
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::engine::{decode_action, Action};
    use crate::gnn::{Aggregation, GnnDims};
    use crate::graph::GraphDims;

    fn graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new(GraphDims { d_m: 3, d_s: 4 });
        let kinds = [NodeKind::Equipment, NodeKind::ProductionLine, NodeKind::Supplier, NodeKind::Product];
        for (i, k) in kinds.iter().enumerate() {
            let m = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            g.add_entity(EntityNode::new(format!("n{i}"), *k).with_metadata(m)).unwrap();
        }
        for (a, b) in [(0, 1), (1, 2), (1, 3), (0, 3)] {
            g.add_rule_edge(&NodeId::new(format!("n{a}")), &NodeId::new(format!("n{b}")), "link")
                .unwrap();
        }
        g
    }

    fn catalog(n: usize) -> ActionCatalog {
        ActionCatalog::new(
            (0..n)
                .map(|i| Action {
                    id: format!("a{i}"),
                    label: format!("action {i}"),
                    embedding: ActionCatalog::signed_basis_embedding(i, n),
                    resource_demand: 0.1,
                    nominal_duration: 1.0,
                    cost: 100.0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn outcome(k: usize) -> DecisionOutcome {
        DecisionOutcome {
            response_time_h: 5.0 + k as f64,
            cost: 1000.0,
            resource_overflow: 0.0,
            reward: 0.2,
            resolved: true,
        }
    }

    #[test]
    fn history_node_links_every_touched_entity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = graph(&mut rng);
        let cat = catalog(2);
        let path = DecisionPath::from_indices(&[0, 1], &cat).unwrap();
        let (nodes, edges) = (g.node_count(), g.rule_edge_count());
        let touched = [NodeId::new("n0"), NodeId::new("n2")];
        let id = write_decision_history(&mut g, &path, &touched, &outcome(0)).unwrap();
        assert_eq!(g.node_count(), nodes + 1);
        assert_eq!(g.rule_edge_count(), edges + 2);
        let node = g.node(&id).unwrap();
        assert_eq!(node.kind, NodeKind::DecisionHistory);
        assert_eq!(node.attributes["response_time_h"], 5.0);
        assert_eq!(node.attributes["path_length"], 2.0);
    }

    #[test]
    fn unknown_touched_entity_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = graph(&mut rng);
        let cat = catalog(2);
        let path = DecisionPath::from_indices(&[0], &cat).unwrap();
        let err = write_decision_history(&mut g, &path, &[NodeId::new("ghost")], &outcome(0)).unwrap_err();
        assert!(matches!(err, GraphError::MissingNode(_)));
    }

    #[test]
    fn sequential_decisions_replay_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = graph(&mut rng);
        let cat = catalog(3);
        let mut log = Vec::new();
        for k in 0..10 {
            if k % 3 == 0 {
                g.set_epoch(g.epoch() + 1);
            }
            let path = DecisionPath::from_indices(&[k % 3], &cat).unwrap();
            let id = write_decision_history(&mut g, &path, &[NodeId::new("n1")], &outcome(k)).unwrap();
            log.push(id);
        }
        let mut hist: Vec<&EntityNode> = g.nodes().filter(|n| n.kind == NodeKind::DecisionHistory).collect();
        hist.shuffle(&mut rng);
        hist.sort_by(|a, b| {
            (a.created_epoch, a.attributes["sequence"] as u64).cmp(&(b.created_epoch, b.attributes["sequence"] as u64))
        });
        let replay: Vec<NodeId> = hist.iter().map(|n| n.id.clone()).collect();
        assert_eq!(replay, log);
        assert!(hist.windows(2).all(|w| w[0].created_epoch <= w[1].created_epoch));
    }

    fn setup(seed: u64, n_actions: usize) -> (KnowledgeGraph, GnnParams, Critic, ActionCatalog) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = graph(&mut rng);
        let mut p = GnnParams::init(GnnDims::for_metadata(3, 4, 4, 2), Aggregation::Attn, &mut rng);
        for l in &mut p.layers {
            l.a.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let cat = catalog(n_actions);
        let critic = Critic::init(5, cat.dim(), 8, &mut rng);
        (g, p, critic, cat)
    }

    #[test]
    fn heat_map_rows_are_distributions() {
        let (g, p, critic, cat) = setup(3, 2);
        let path = DecisionPath::from_indices(&[0], &cat).unwrap();
        let touched: Vec<NodeId> = ["n0", "n1", "n3"].iter().map(|s| NodeId::new(*s)).collect();
        let ex = explain_decision(&g, &p, &touched, &path, &[vec![0.1; 5]], &critic, &cat).unwrap();
        assert_eq!(ex.heat_map.grid.len(), 3);
        for row in &ex.heat_map.grid {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_single_step_has_nonnegative_gap() {
        for seed in 0..20 {
            let (g, p, critic, cat) = setup(seed, 2);
            let s = vec![0.3, -0.2, 0.5, 0.0, 1.0];
            let q: Vec<f64> = cat.actions.iter().map(|a| critic.q(&s, &a.embedding)).collect();
            let greedy = linalg::argmax(&q).unwrap();
            let path = DecisionPath::from_indices(&[greedy], &cat).unwrap();
            let ex = explain_decision(&g, &p, &[NodeId::new("n0")], &path, &[s], &critic, &cat).unwrap();
            assert_eq!(ex.chain.len(), 1);
            assert!(ex.chain[0].q_gap >= 0.0);
        }
    }

    #[test]
    fn gaps_match_enumeration() {
        let (g, p, critic, cat) = setup(7, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let states: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let chosen: Vec<usize> = states
            .iter()
            .map(|s| decode_action(&cat, &s[..cat.dim()]))
            .collect();
        let path = DecisionPath::from_indices(&chosen, &cat).unwrap();
        let ex = explain_decision(&g, &p, &[NodeId::new("n1")], &path, &states, &critic, &cat).unwrap();
        for (t, s) in states.iter().enumerate() {
            let mut best_other = f64::NEG_INFINITY;
            for k in 0..4 {
                if k != chosen[t] {
                    let mut x = s.clone();
                    x.extend_from_slice(&cat.actions[k].embedding);
                    let h: Vec<f64> = (0..critic.l1.w.rows())
                        .map(|r| (linalg::dot(critic.l1.w.row(r), &x) + critic.l1.b[r]).tanh())
                        .collect();
                    best_other = best_other.max(linalg::dot(critic.out.w.row(0), &h) + critic.out.b[0]);
                }
            }
            let own = critic.q(s, &cat.actions[chosen[t]].embedding);
            assert!((ex.chain[t].q_gap - (own - best_other)).abs() < 1e-12);
        }
    }
}
