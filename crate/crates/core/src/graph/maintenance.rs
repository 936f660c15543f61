use serde::{Deserialize, Serialize};

use super::{
    DynamicEdge, DynamicEdgeKey, EntityNode, GraphError, KnowledgeGraph, NodeId, RuleEdge,
    DYNAMIC_EDGE_THRESHOLD, EVICT_MIN_VISITS, MERGE_THRESHOLD,
};
use crate::fusion::ProviderError;
use crate::linalg;

/// Source of semantic vectors for nodes entering the graph during a cycle.
pub trait NodeEmbedder {
    fn embed_node(&mut self, node: &EntityNode) -> Result<Vec<f64>, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CycleReport {
    pub added: usize,
    pub dynamic_created: usize,
    pub evicted: usize,
    pub merged: usize,
    pub epoch: u64,
}

impl CycleReport {
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (self.added, self.dynamic_created, self.evicted, self.merged)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CycleError {
    #[error("embedding `{node}` failed: {source}")]
    Provider {
        node: NodeId,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Cut-offs used by [`KnowledgeGraph::run_update_cycle_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleThresholds {
    pub dynamic_edge: f64,
    pub merge: f64,
    pub evict_min_visits: u64,
}

impl Default for CycleThresholds {
    fn default() -> Self {
        Self {
            dynamic_edge: DYNAMIC_EDGE_THRESHOLD,
            merge: MERGE_THRESHOLD,
            evict_min_visits: EVICT_MIN_VISITS,
        }
    }
}

impl KnowledgeGraph {
    /// [`run_update_cycle_with`](Self::run_update_cycle_with) at the default thresholds.
    pub fn run_update_cycle(
        &mut self,
        new_nodes: Vec<EntityNode>,
        embedder: &mut dyn NodeEmbedder,
    ) -> Result<CycleReport, CycleError> {
        self.run_update_cycle_with(new_nodes, embedder, CycleThresholds::default())
    }

    /// One maintenance cycle: add and embed `new_nodes`, create dynamic
    /// edges, evict low-frequency edges, merge redundant nodes, then advance
    /// the epoch. On any error the graph is left exactly as it was.
    pub fn run_update_cycle_with(
        &mut self,
        new_nodes: Vec<EntityNode>,
        embedder: &mut dyn NodeEmbedder,
        t: CycleThresholds,
    ) -> Result<CycleReport, CycleError> {
        let mut work = self.clone();
        let mut report = CycleReport::default();
        for mut node in new_nodes {
            if node.semantic_vector.is_none() {
                let v = embedder
                    .embed_node(&node)
                    .map_err(|source| CycleError::Provider {
                        node: node.id.clone(),
                        source,
                    })?;
                node.semantic_vector = Some(v);
            }
            work.add_entity(node)?;
            report.added += 1;
        }
        report.dynamic_created = work.create_dynamic_edges(t.dynamic_edge);
        report.evicted = work.evict_low_frequency_edges(t.evict_min_visits);
        report.merged = work.merge_redundant_nodes(t.merge);
        work.advance_epoch();
        report.epoch = work.epoch;
        *self = work;
        Ok(report)
    }

    /// Greedily merges node pairs whose semantic cosine exceeds `threshold`,
    /// most similar pair first (ties by id pair). The survivor takes the
    /// access-count weighted average of both vectors, the summed access
    /// count and every edge of the absorbed node. Runs until no pair is
    /// above the threshold.
    pub fn merge_redundant_nodes(&mut self, threshold: f64) -> usize {
        let ids: Vec<NodeId> = self
            .nodes
            .values()
            .filter(|n| n.semantic_vector.is_some())
            .map(|n| n.id.clone())
            .collect();
        let n = ids.len();
        let vecs: Vec<Vec<f64>> = ids
            .iter()
            .map(|id| self.nodes[id].semantic_vector.clone().unwrap_or_default())
            .collect();
        let mut sim = vec![vec![f64::NEG_INFINITY; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let s = linalg::cosine(&vecs[i], &vecs[j]);
                sim[i][j] = s;
                sim[j][i] = s;
            }
        }
        let mut alive = vec![true; n];
        let mut merges = 0;
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..n {
                if !alive[i] {
                    continue;
                }
                for j in i + 1..n {
                    if !alive[j] || sim[i][j] <= threshold {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bi, bj, bs)) => {
                            sim[i][j] > bs
                                || (sim[i][j] == bs && pair_key(&ids, i, j) < pair_key(&ids, bi, bj))
                        }
                    };
                    if better {
                        best = Some((i, j, sim[i][j]));
                    }
                }
            }
            let Some((i, j, _)) = best else { break };
            let (keep, gone) = self.survivor_order(&ids[i], &ids[j]);
            let (ki, gi) = if keep == ids[i] { (i, j) } else { (j, i) };
            self.absorb(&keep, &gone);
            merges += 1;
            alive[gi] = false;
            let v = self.nodes[&keep].semantic_vector.clone().unwrap_or_default();
            for k in 0..n {
                if k != ki && alive[k] {
                    let s = linalg::cosine(&v, &self.nodes[&ids[k]].semantic_vector.clone().unwrap_or_default());
                    sim[ki][k] = s;
                    sim[k][ki] = s;
                }
            }
        }
        merges
    }

    /// Higher access count survives; ties go to the smaller id.
    fn survivor_order(&self, a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
        let (ca, cb) = (self.nodes[a].access_count, self.nodes[b].access_count);
        if ca > cb || (ca == cb && a < b) {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }

    fn absorb(&mut self, keep: &NodeId, gone: &NodeId) {
        let Some(absorbed) = self.nodes.shift_remove(gone) else {
            return;
        };
        let survivor = self.nodes.get_mut(keep).expect("survivor present");
        let (wk, wg) = match (survivor.access_count, absorbed.access_count) {
            (0, 0) => (0.5, 0.5),
            (a, b) => {
                let t = (a + b) as f64;
                (a as f64 / t, b as f64 / t)
            }
        };
        survivor.semantic_vector = blend(&survivor.semantic_vector, &absorbed.semantic_vector, wk, wg)
            .map(|mut v| {
                if !linalg::normalize(&mut v) {
                    v = survivor.semantic_vector.clone().unwrap_or(v);
                }
                v
            });
        survivor.metadata_embedding =
            blend(&survivor.metadata_embedding, &absorbed.metadata_embedding, wk, wg);
        for (k, v) in absorbed.attributes {
            survivor.attributes.entry(k).or_insert(v);
        }
        survivor.access_count += absorbed.access_count;
        survivor.created_epoch = survivor.created_epoch.min(absorbed.created_epoch);

        let rules: Vec<RuleEdge> = self.rule_edges.drain(..).map(|(_, e)| e).collect();
        for mut e in rules {
            if &e.src == gone {
                e.src = keep.clone();
            }
            if &e.dst == gone {
                e.dst = keep.clone();
            }
            if e.src == e.dst {
                continue;
            }
            self.rule_edges
                .entry((e.src.clone(), e.dst.clone(), e.relation.clone()))
                .or_insert(e);
        }

        let dynamic: Vec<DynamicEdge> = std::mem::take(&mut self.dynamic_edges).into_values().collect();
        for e in dynamic {
            let mut src = e.src.clone();
            let mut dst = e.dst.clone();
            if &src == gone {
                src = keep.clone();
            }
            if &dst == gone {
                dst = keep.clone();
            }
            if src == dst {
                continue;
            }
            let key = DynamicEdgeKey::new(src, dst);
            let (s, d) = key.endpoints();
            let rerouted = DynamicEdge {
                src: s.clone(),
                dst: d.clone(),
                ..e
            };
            self.dynamic_edges
                .entry(key)
                .and_modify(|cur| {
                    cur.similarity = cur.similarity.max(rerouted.similarity);
                    cur.access_count += rerouted.access_count;
                    cur.last_access_epoch = cur.last_access_epoch.max(rerouted.last_access_epoch);
                })
                .or_insert(rerouted);
        }
    }
}

fn pair_key<'a>(ids: &'a [NodeId], i: usize, j: usize) -> (&'a NodeId, &'a NodeId) {
    let (a, b) = (&ids[i], &ids[j]);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn blend(a: &Option<Vec<f64>>, b: &Option<Vec<f64>>, wa: f64, wb: f64) -> Option<Vec<f64>> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()),
        (Some(a), None) => Some(a.clone()),
        (None, Some(b)) => Some(b.clone()),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphDims, NodeKind};

    struct FailOn {
        calls: usize,
        fail_at: usize,
    }

    impl NodeEmbedder for FailOn {
        fn embed_node(&mut self, _node: &EntityNode) -> Result<Vec<f64>, ProviderError> {
            self.calls += 1;
            if self.calls == self.fail_at {
                Err(ProviderError::Transport("connection reset".into()))
            } else {
                let mut v = vec![0.0; 4];
                v[self.calls % 4] = 1.0;
                Ok(v)
            }
        }
    }

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::new(GraphDims { d_m: 2, d_s: 4 })
    }

    #[test]
    fn merging_identical_vectors_sums_access() {
        let mut g = graph();
        g.add_entity(
            EntityNode::new("a", NodeKind::Equipment)
                .with_semantic(vec![0.5, 0.5, 0.5, 0.5])
                .with_access_count(3),
        )
        .unwrap();
        g.add_entity(
            EntityNode::new("b", NodeKind::Equipment)
                .with_semantic(vec![0.5, 0.5, 0.5, 0.5])
                .with_access_count(1),
        )
        .unwrap();
        assert_eq!(g.merge_redundant_nodes(MERGE_THRESHOLD), 1);
        assert_eq!(g.node_count(), 1);
        let n = g.node(&"a".into()).unwrap();
        assert_eq!(n.access_count, 4);
        for x in n.semantic_vector.as_ref().unwrap() {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn no_merge_below_threshold() {
        let mut g = graph();
        g.add_entity(EntityNode::new("a", NodeKind::Product).with_semantic(vec![1.0, 0.0, 0.0, 0.0]))
            .unwrap();
        g.add_entity(EntityNode::new("b", NodeKind::Product).with_semantic(vec![0.9, 0.43589, 0.0, 0.0]))
            .unwrap();
        let before = g.clone();
        assert_eq!(g.merge_redundant_nodes(0.9), 0);
        assert_eq!(g, before);
    }

    #[test]
    fn absorbed_edges_are_rerouted() {
        let mut g = graph();
        for (id, v) in [("a", [1.0, 0.0, 0.0, 0.0]), ("b", [1.0, 0.0, 0.0, 0.0]), ("c", [0.0, 1.0, 0.0, 0.0])] {
            g.add_entity(EntityNode::new(id, NodeKind::Product).with_semantic(v.to_vec()))
                .unwrap();
        }
        g.add_rule_edge(&"b".into(), &"c".into(), "feeds").unwrap();
        g.add_rule_edge(&"a".into(), &"b".into(), "near").unwrap();
        g.merge_redundant_nodes(0.9);
        let edges: Vec<_> = g.rule_edges().map(|e| (e.src.as_str().to_owned(), e.dst.as_str().to_owned())).collect();
        assert_eq!(edges, vec![("a".to_owned(), "c".to_owned())]);
    }

    #[test]
    fn stable_graph_cycle_is_a_fixed_point() {
        let mut g = graph();
        g.add_entity(EntityNode::new("a", NodeKind::Product).with_semantic(vec![1.0, 0.0, 0.0, 0.0]))
            .unwrap();
        g.add_entity(EntityNode::new("b", NodeKind::Product).with_semantic(vec![0.0, 1.0, 0.0, 0.0]))
            .unwrap();
        let mut emb = FailOn { calls: 0, fail_at: usize::MAX };
        let r = g.run_update_cycle(vec![], &mut emb).unwrap();
        assert_eq!(r.counts(), (0, 0, 0, 0));
        assert_eq!(g.epoch(), 1);
    }

    #[test]
    fn duplicate_newcomer_is_linked_then_merged() {
        let mut g = graph();
        g.add_entity(EntityNode::new("a", NodeKind::Product).with_semantic(vec![0.0, 0.0, 1.0, 0.0]))
            .unwrap();
        let mut emb = FailOn { calls: 0, fail_at: usize::MAX };
        let dup = EntityNode::new("a2", NodeKind::Product).with_semantic(vec![0.0, 0.0, 1.0, 0.0]);
        let r = g.run_update_cycle(vec![dup], &mut emb).unwrap();
        assert_eq!(r.added, 1);
        assert_eq!(r.dynamic_created, 1);
        assert_eq!(r.evicted, 1);
        assert_eq!(r.merged, 1);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn provider_failure_leaves_graph_untouched() {
        let mut g = graph();
        g.add_entity(EntityNode::new("seed", NodeKind::Product).with_semantic(vec![1.0, 0.0, 0.0, 0.0]))
            .unwrap();
        let before = g.clone();
        let fresh: Vec<EntityNode> = (0..5)
            .map(|i| EntityNode::new(format!("new{i}"), NodeKind::WorkOrder))
            .collect();
        let mut emb = FailOn { calls: 0, fail_at: 3 };
        let err = g.run_update_cycle(fresh, &mut emb).unwrap_err();
        assert!(matches!(err, CycleError::Provider { ref node, .. } if node.as_str() == "new2"));
        assert_eq!(g, before);
        assert_eq!(g.epoch(), 0);
        assert_eq!(g.node_count(), 1);
    }
}
