//! Enterprise knowledge graph: entity nodes, rule edges asserted by business
//! rules, dynamic edges created from semantic similarity, and the periodic
//! maintenance cycle that adds, links, evicts and merges.
//!
//! Node order is insertion order and is the row order of every matrix the
//! encoder produces. Dynamic edges are undirected and keyed by the ordered
//! id pair.

mod maintenance;
mod snapshot;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};
use crate::real17;

pub use maintenance::{CycleError, CycleReport, CycleThresholds, NodeEmbedder};
pub use snapshot::{SnapshotError, SNAPSHOT_FORMAT_VERSION};

/// Default cosine threshold above which a dynamic edge is created.
pub const DYNAMIC_EDGE_THRESHOLD: f64 = 0.7;
/// Default cosine threshold above which two nodes are merged.
pub const MERGE_THRESHOLD: f64 = 0.9;
/// Dynamic edges with fewer visits than this are evicted.
pub const EVICT_MIN_VISITS: u64 = 5;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Equipment,
    WorkOrder,
    Product,
    ProductionLine,
    Supplier,
    Document,
    DecisionHistory,
}

impl NodeKind {
    pub const ALL: [NodeKind; 7] = [
        NodeKind::Equipment,
        NodeKind::WorkOrder,
        NodeKind::Product,
        NodeKind::ProductionLine,
        NodeKind::Supplier,
        NodeKind::Document,
        NodeKind::DecisionHistory,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeKind::Equipment => "equipment",
            NodeKind::WorkOrder => "work-order",
            NodeKind::Product => "product",
            NodeKind::ProductionLine => "production-line",
            NodeKind::Supplier => "supplier",
            NodeKind::Document => "document",
            NodeKind::DecisionHistory => "decision-history",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| format!("unknown node kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(with = "real17::map")]
    pub attributes: BTreeMap<String, f64>,
    #[serde(with = "real17::opt_vec")]
    pub metadata_embedding: Option<Vec<f64>>,
    #[serde(with = "real17::opt_vec")]
    pub semantic_vector: Option<Vec<f64>>,
    pub access_count: u64,
    pub created_epoch: u64,
}

impl EntityNode {
    pub fn new(id: impl Into<NodeId>, kind: NodeKind) -> Self {
        Self {
            id: id.into(),
            kind,
            attributes: BTreeMap::new(),
            metadata_embedding: None,
            semantic_vector: None,
            access_count: 0,
            created_epoch: 0,
        }
    }

    pub fn with_metadata(mut self, m: Vec<f64>) -> Self {
        self.metadata_embedding = Some(m);
        self
    }

    /// Sets the semantic vector; it is unit-normalized on insertion.
    pub fn with_semantic(mut self, v: Vec<f64>) -> Self {
        self.semantic_vector = Some(v);
        self
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: f64) -> Self {
        self.attributes.insert(key.into(), value);
        self
    }

    pub fn with_access_count(mut self, n: u64) -> Self {
        self.access_count = n;
        self
    }

    pub fn health_score(&self) -> Option<f64> {
        self.attributes.get("health_score").copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: String,
    #[serde(with = "real17")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicEdge {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(with = "real17")]
    pub similarity: f64,
    pub access_count: u64,
    pub last_access_epoch: u64,
}

impl DynamicEdge {
    pub fn key(&self) -> DynamicEdgeKey {
        DynamicEdgeKey::new(self.src.clone(), self.dst.clone())
    }
}

/// Handle to a dynamic edge: the unordered endpoint pair, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DynamicEdgeKey(NodeId, NodeId);

impl DynamicEdgeKey {
    pub fn new(p: impl Into<NodeId>, q: impl Into<NodeId>) -> Self {
        let (p, q) = (p.into(), q.into());
        if p <= q {
            Self(p, q)
        } else {
            Self(q, p)
        }
    }

    pub fn endpoints(&self) -> (&NodeId, &NodeId) {
        (&self.0, &self.1)
    }
}

type RuleKey = (NodeId, NodeId, String);

/// Outcome of [`KnowledgeGraph::add_rule_edge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeInsert {
    Added,
    AlreadyPresent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDims {
    pub d_m: usize,
    pub d_s: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node `{0}` already exists")]
    DuplicateNode(NodeId),
    #[error("unknown node `{0}`")]
    MissingNode(NodeId),
    #[error("{field} of `{node}` has length {actual}, expected {expected}")]
    Dimension {
        node: NodeId,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("semantic vector of `{0}` cannot be unit-normalized")]
    DegenerateSemantic(NodeId),
    #[error("edge endpoints must differ (`{0}`)")]
    SelfEdge(NodeId),
    #[error("no dynamic edge between `{0}` and `{1}`")]
    StaleEdge(NodeId, NodeId),
    #[error("graph has no nodes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    dims: GraphDims,
    nodes: IndexMap<NodeId, EntityNode>,
    rule_edges: IndexMap<RuleKey, RuleEdge>,
    dynamic_edges: BTreeMap<DynamicEdgeKey, DynamicEdge>,
    epoch: u64,
}

impl KnowledgeGraph {
    pub fn new(dims: GraphDims) -> Self {
        Self {
            dims,
            nodes: IndexMap::new(),
            rule_edges: IndexMap::new(),
            dynamic_edges: BTreeMap::new(),
            epoch: 0,
        }
    }

    pub fn dims(&self) -> GraphDims {
        self.dims
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &NodeId) -> Option<&EntityNode> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut EntityNode> {
        self.nodes.get_mut(id)
    }

    pub fn node_at(&self, index: usize) -> Option<&EntityNode> {
        self.nodes.get_index(index).map(|(_, n)| n)
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.nodes.get_index_of(id)
    }

    /// Nodes in index order.
    pub fn nodes(&self) -> impl Iterator<Item = &EntityNode> {
        self.nodes.values()
    }

    pub fn rule_edges(&self) -> impl Iterator<Item = &RuleEdge> {
        self.rule_edges.values()
    }

    pub fn rule_edge_count(&self) -> usize {
        self.rule_edges.len()
    }

    pub fn dynamic_edges(&self) -> impl Iterator<Item = &DynamicEdge> {
        self.dynamic_edges.values()
    }

    pub fn dynamic_edge(&self, key: &DynamicEdgeKey) -> Option<&DynamicEdge> {
        self.dynamic_edges.get(key)
    }

    pub fn dynamic_edge_count(&self) -> usize {
        self.dynamic_edges.len()
    }

    fn validate(&self, node: &mut EntityNode) -> Result<(), GraphError> {
        if let Some(m) = &node.metadata_embedding {
            if m.len() != self.dims.d_m {
                return Err(GraphError::Dimension {
                    node: node.id.clone(),
                    field: "metadata_embedding",
                    expected: self.dims.d_m,
                    actual: m.len(),
                });
            }
        }
        if let Some(v) = &mut node.semantic_vector {
            if v.len() != self.dims.d_s {
                return Err(GraphError::Dimension {
                    node: node.id.clone(),
                    field: "semantic_vector",
                    expected: self.dims.d_s,
                    actual: v.len(),
                });
            }
            if (linalg::norm(v) - 1.0).abs() > UNIT_NORM_TOLERANCE && !linalg::normalize(v) {
                return Err(GraphError::DegenerateSemantic(node.id.clone()));
            }
        }
        Ok(())
    }

    /// Inserts a node, stamping it with the current epoch.
    pub fn add_entity(&mut self, mut node: EntityNode) -> Result<NodeId, GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode(node.id));
        }
        self.validate(&mut node)?;
        node.created_epoch = self.epoch;
        let id = node.id.clone();
        self.nodes.insert(id.clone(), node);
        Ok(id)
    }

    /// Inserts a node keeping its own `created_epoch` (snapshot loading).
    fn restore_entity(&mut self, mut node: EntityNode) -> Result<(), GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode(node.id));
        }
        self.validate(&mut node)?;
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn add_rule_edge(
        &mut self,
        src: &NodeId,
        dst: &NodeId,
        relation: impl Into<String>,
    ) -> Result<EdgeInsert, GraphError> {
        self.add_weighted_rule_edge(src, dst, relation, 1.0)
    }

    pub fn add_weighted_rule_edge(
        &mut self,
        src: &NodeId,
        dst: &NodeId,
        relation: impl Into<String>,
        weight: f64,
    ) -> Result<EdgeInsert, GraphError> {
        for id in [src, dst] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::MissingNode(id.clone()));
            }
        }
        if src == dst {
            return Err(GraphError::SelfEdge(src.clone()));
        }
        let relation = relation.into();
        let key = (src.clone(), dst.clone(), relation.clone());
        if self.rule_edges.contains_key(&key) {
            return Ok(EdgeInsert::AlreadyPresent);
        }
        self.rule_edges.insert(
            key,
            RuleEdge {
                src: src.clone(),
                dst: dst.clone(),
                relation,
                weight,
            },
        );
        Ok(EdgeInsert::Added)
    }

    fn insert_dynamic_edge(&mut self, edge: DynamicEdge) -> Result<(), GraphError> {
        for id in [&edge.src, &edge.dst] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::MissingNode(id.clone()));
            }
        }
        if edge.src == edge.dst {
            return Err(GraphError::SelfEdge(edge.src));
        }
        self.dynamic_edges.insert(edge.key(), edge);
        Ok(())
    }

    /// Links every unordered pair whose semantic cosine exceeds `threshold`
    /// and that has no dynamic edge yet. Stored similarities of existing
    /// edges are refreshed. Returns the number of edges created.
    pub fn create_dynamic_edges(&mut self, threshold: f64) -> usize {
        let with_vec: Vec<(usize, &NodeId, &[f64])> = self
            .nodes
            .values()
            .enumerate()
            .filter_map(|(i, n)| n.semantic_vector.as_deref().map(|v| (i, &n.id, v)))
            .collect();
        let mut created = Vec::new();
        let mut refreshed = Vec::new();
        for (a, &(_, p, vp)) in with_vec.iter().enumerate() {
            for &(_, q, vq) in &with_vec[a + 1..] {
                let sim = linalg::cosine(vp, vq).min(1.0);
                let key = DynamicEdgeKey::new(p.clone(), q.clone());
                if self.dynamic_edges.contains_key(&key) {
                    refreshed.push((key, sim));
                } else if sim > threshold {
                    created.push((key, sim));
                }
            }
        }
        for (key, sim) in refreshed {
            if let Some(e) = self.dynamic_edges.get_mut(&key) {
                e.similarity = sim;
            }
        }
        let count = created.len();
        for (DynamicEdgeKey(src, dst), similarity) in created {
            self.dynamic_edges.insert(
                DynamicEdgeKey(src.clone(), dst.clone()),
                DynamicEdge {
                    src,
                    dst,
                    similarity,
                    access_count: 0,
                    last_access_epoch: self.epoch,
                },
            );
        }
        count
    }

    /// Removes every dynamic edge visited fewer than `min_visits` times.
    /// Rule edges are never evicted.
    pub fn evict_low_frequency_edges(&mut self, min_visits: u64) -> usize {
        let before = self.dynamic_edges.len();
        self.dynamic_edges.retain(|_, e| e.access_count >= min_visits);
        before - self.dynamic_edges.len()
    }

    pub fn record_access(&mut self, key: &DynamicEdgeKey) -> Result<(), GraphError> {
        let epoch = self.epoch;
        let edge = self
            .dynamic_edges
            .get_mut(key)
            .ok_or_else(|| GraphError::StaleEdge(key.0.clone(), key.1.clone()))?;
        edge.access_count += 1;
        edge.last_access_epoch = epoch;
        Ok(())
    }

    pub fn record_node_access(&mut self, id: &NodeId) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| GraphError::MissingNode(id.clone()))?;
        node.access_count += 1;
        Ok(())
    }

    /// Rule neighborhoods N(i) by node index, undirected, sorted, each
    /// including the node itself.
    pub fn rule_neighbors(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for e in self.rule_edges.values() {
            let (Some(a), Some(b)) = (self.index_of(&e.src), self.index_of(&e.dst)) else {
                continue;
            };
            sets[a].push(b);
            sets[b].push(a);
        }
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        sets
    }

    /// Semantic neighborhoods D(i) by node index with the stored edge
    /// similarity, sorted by neighbor index.
    pub fn dynamic_neighbors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut sets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nodes.len()];
        for e in self.dynamic_edges.values() {
            let (Some(a), Some(b)) = (self.index_of(&e.src), self.index_of(&e.dst)) else {
                continue;
            };
            sets[a].push((b, e.similarity));
            sets[b].push((a, e.similarity));
        }
        for s in &mut sets {
            s.sort_unstable_by_key(|&(j, _)| j);
        }
        sets
    }

    /// Symmetric 0/1 adjacency over node index order with unit diagonal.
    pub fn adjacency_matrix(&self, include_dynamic: bool) -> Result<Matrix, GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let n = self.nodes.len();
        let mut adj = Matrix::identity(n);
        for (i, nbrs) in self.rule_neighbors().iter().enumerate() {
            for &j in nbrs {
                adj.set(i, j, 1.0);
            }
        }
        if include_dynamic {
            for (i, nbrs) in self.dynamic_neighbors().iter().enumerate() {
                for &(j, _) in nbrs {
                    adj.set(i, j, 1.0);
                }
            }
        }
        Ok(adj)
    }

    /// Ids of every node linked to `id` by a rule or dynamic edge.
    pub fn neighbors_of(&self, id: &NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .rule_edges
            .values()
            .filter_map(|e| {
                if &e.src == id {
                    Some(e.dst.clone())
                } else if &e.dst == id {
                    Some(e.src.clone())
                } else {
                    None
                }
            })
            .chain(self.dynamic_edges.values().filter_map(|e| {
                if &e.src == id {
                    Some(e.dst.clone())
                } else if &e.dst == id {
                    Some(e.src.clone())
                } else {
                    None
                }
            }))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Dynamic edges incident to `id`.
    pub fn dynamic_edges_of(&self, id: &NodeId) -> Vec<DynamicEdgeKey> {
        self.dynamic_edges
            .iter()
            .filter(|(_, e)| &e.src == id || &e.dst == id)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn total_node_access(&self) -> u64 {
        self.nodes.values().map(|n| n.access_count).sum()
    }

    pub(crate) fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = self.epoch.max(epoch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> GraphDims {
        GraphDims { d_m: 2, d_s: 3 }
    }

    #[test]
    fn empty_graph_plus_one_node() {
        let mut g = KnowledgeGraph::new(dims());
        let id = g.add_entity(EntityNode::new("pump-7", NodeKind::Equipment)).unwrap();
        assert_eq!(id.as_str(), "pump-7");
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.rule_edge_count() + g.dynamic_edge_count(), 0);
    }

    #[test]
    fn dimension_mismatch_names_lengths() {
        let mut g = KnowledgeGraph::new(GraphDims { d_m: 2, d_s: 16 });
        let err = g
            .add_entity(EntityNode::new("x", NodeKind::Equipment).with_semantic(vec![1.0; 8]))
            .unwrap_err();
        assert_eq!(
            err,
            GraphError::Dimension {
                node: "x".into(),
                field: "semantic_vector",
                expected: 16,
                actual: 8
            }
        );
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let mut g = KnowledgeGraph::new(dims());
        g.add_entity(EntityNode::new("a", NodeKind::Product)).unwrap();
        let err = g.add_entity(EntityNode::new("a", NodeKind::Supplier)).unwrap_err();
        assert_eq!(err, GraphError::DuplicateNode("a".into()));
    }

    #[test]
    fn hundred_sequential_adds() {
        let mut g = KnowledgeGraph::new(dims());
        let log: Vec<String> = (0..100).map(|i| format!("n{i}")).collect();
        for id in &log {
            g.add_entity(EntityNode::new(id.as_str(), NodeKind::WorkOrder)).unwrap();
        }
        assert_eq!(g.node_count(), log.len());
        for (i, id) in log.iter().enumerate() {
            assert_eq!(g.index_of(&id.as_str().into()), Some(i));
        }
    }

    #[test]
    fn semantic_vectors_are_normalized_on_insert() {
        let mut g = KnowledgeGraph::new(dims());
        g.add_entity(EntityNode::new("a", NodeKind::Product).with_semantic(vec![3.0, 4.0, 0.0]))
            .unwrap();
        let v = g.node(&"a".into()).unwrap().semantic_vector.clone().unwrap();
        assert!((linalg::norm(&v) - 1.0).abs() < 1e-12);
        let err = g
            .add_entity(EntityNode::new("z", NodeKind::Product).with_semantic(vec![0.0; 3]))
            .unwrap_err();
        assert_eq!(err, GraphError::DegenerateSemantic("z".into()));
    }

    #[test]
    fn rule_edge_neighbors_and_idempotence() {
        let mut g = KnowledgeGraph::new(dims());
        g.add_entity(EntityNode::new("equipA", NodeKind::Equipment)).unwrap();
        g.add_entity(EntityNode::new("lineB", NodeKind::ProductionLine)).unwrap();
        let (a, b) = (NodeId::from("equipA"), NodeId::from("lineB"));
        assert_eq!(g.add_rule_edge(&a, &b, "belongs-to").unwrap(), EdgeInsert::Added);
        assert_eq!(g.rule_edge_count(), 1);
        assert_eq!(g.neighbors_of(&a), vec![b.clone()]);
        assert_eq!(
            g.add_rule_edge(&a, &b, "belongs-to").unwrap(),
            EdgeInsert::AlreadyPresent
        );
        assert_eq!(g.rule_edge_count(), 1);
        let err = g.add_rule_edge(&a, &"ghost".into(), "x").unwrap_err();
        assert_eq!(err, GraphError::MissingNode("ghost".into()));
    }

    #[test]
    fn dynamic_edges_from_identical_and_orthogonal_vectors() {
        let mut g = KnowledgeGraph::new(dims());
        g.add_entity(EntityNode::new("a", NodeKind::Document).with_semantic(vec![1.0, 0.0, 0.0]))
            .unwrap();
        g.add_entity(EntityNode::new("b", NodeKind::Document).with_semantic(vec![1.0, 0.0, 0.0]))
            .unwrap();
        g.add_entity(EntityNode::new("c", NodeKind::Document).with_semantic(vec![0.0, 1.0, 0.0]))
            .unwrap();
        g.add_entity(EntityNode::new("novec", NodeKind::Document)).unwrap();
        assert_eq!(g.create_dynamic_edges(DYNAMIC_EDGE_THRESHOLD), 1);
        let e = g.dynamic_edge(&DynamicEdgeKey::new("b", "a")).unwrap();
        assert_eq!(e.similarity, 1.0);
        assert_eq!(g.create_dynamic_edges(DYNAMIC_EDGE_THRESHOLD), 0);
    }

    #[test]
    fn eviction_uses_strict_less_than() {
        let mut g = KnowledgeGraph::new(dims());
        for id in ["a", "b", "c", "d"] {
            g.add_entity(EntityNode::new(id, NodeKind::Product).with_semantic(vec![1.0, 0.0, 0.0]))
                .unwrap();
        }
        let keys = [
            DynamicEdgeKey::new("a", "b"),
            DynamicEdgeKey::new("a", "c"),
            DynamicEdgeKey::new("a", "d"),
        ];
        for (k, visits) in keys.iter().zip([2u64, 5, 7]) {
            g.insert_dynamic_edge(DynamicEdge {
                src: k.0.clone(),
                dst: k.1.clone(),
                similarity: 1.0,
                access_count: visits,
                last_access_epoch: 0,
            })
            .unwrap();
        }
        g.add_rule_edge(&"b".into(), &"c".into(), "r").unwrap();
        assert_eq!(g.evict_low_frequency_edges(EVICT_MIN_VISITS), 1);
        assert!(g.dynamic_edge(&keys[0]).is_none());
        assert!(g.dynamic_edge(&keys[1]).is_some());
        assert!(g.dynamic_edge(&keys[2]).is_some());
        assert_eq!(g.rule_edge_count(), 1);
        assert_eq!(g.evict_low_frequency_edges(EVICT_MIN_VISITS), 0);
    }

    #[test]
    fn record_access_counts_and_stale_handles() {
        let mut g = KnowledgeGraph::new(dims());
        for id in ["a", "b"] {
            g.add_entity(EntityNode::new(id, NodeKind::Product).with_semantic(vec![0.0, 1.0, 0.0]))
                .unwrap();
        }
        g.create_dynamic_edges(0.7);
        let k = DynamicEdgeKey::new("a", "b");
        for _ in 0..5 {
            g.record_access(&k).unwrap();
        }
        assert_eq!(g.dynamic_edge(&k).unwrap().access_count, 5);
        assert_eq!(g.evict_low_frequency_edges(5), 0);
        let stale = DynamicEdgeKey::new("a", "zzz");
        assert!(matches!(g.record_access(&stale), Err(GraphError::StaleEdge(..))));
    }

    #[test]
    fn adjacency_with_self_loops() {
        let mut g = KnowledgeGraph::new(dims());
        assert_eq!(g.adjacency_matrix(true).unwrap_err(), GraphError::Empty);
        g.add_entity(EntityNode::new("a", NodeKind::Product)).unwrap();
        g.add_entity(EntityNode::new("b", NodeKind::Product)).unwrap();
        g.add_rule_edge(&"a".into(), &"b".into(), "r").unwrap();
        let adj = g.adjacency_matrix(false).unwrap();
        assert_eq!(adj.to_rows(), vec![vec![1.0, 1.0], vec![1.0, 1.0]]);

        let mut h = KnowledgeGraph::new(dims());
        for id in ["x", "y", "z"] {
            h.add_entity(EntityNode::new(id, NodeKind::Product)).unwrap();
        }
        assert_eq!(h.adjacency_matrix(true).unwrap(), Matrix::identity(3));
    }
}
