//! Two-level graph encoder. A stack of rule-topology attention layers
//! produces `h_rule`; a gated layer over the semantic (dynamic) edges adds
//! similarity-weighted neighbor signal on top to give `h_dyn`. The joint
//! embedding is `[h_rule ‖ h_dyn]`.

mod pretrain;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{KnowledgeGraph, NodeId, NodeKind};
use crate::linalg::{self, Matrix};
use crate::real17;

pub use pretrain::{pretrain, pretrain_objective, PretrainHead, PretrainTrace};

/// Decay factor on the semantic-neighbor term.
pub const DEFAULT_BETA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Attn,
    Mean,
    Sum,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attn" => Ok(Self::Attn),
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnDims {
    pub d_in: usize,
    pub d_h: usize,
    pub d_r: usize,
    pub layers: usize,
}

impl GnnDims {
    /// Input width for a graph with metadata width `d_m`.
    pub fn for_metadata(d_m: usize, d_h: usize, d_r: usize, layers: usize) -> Self {
        Self {
            d_in: d_m + NodeKind::COUNT,
            d_h,
            d_r,
            layers,
        }
    }
}

/// One rule-topology layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleLayer {
    /// d_h × d_in shared transform.
    pub w: Matrix,
    /// Attention vector over `[W h_i ‖ W h_j]`, length 2·d_h.
    #[serde(with = "real17::vec")]
    pub a: Vec<f64>,
    /// d_r × 2·d_in, applied to `[h_i ‖ Σ α_ij h_j]`.
    pub w_rule: Matrix,
}

impl RuleLayer {
    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w_rule.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub layers: Vec<RuleLayer>,
    /// Gate vector over `[h_rule_i ‖ ē_i]`, length d_r + 1.
    #[serde(with = "real17::vec")]
    pub u: Vec<f64>,
    #[serde(with = "real17")]
    pub beta: f64,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnnError {
    #[error("node `{0}` has no metadata embedding")]
    MissingMetadata(NodeId),
    #[error("graph is empty")]
    EmptyGraph,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl GnnParams {
    /// Uniform ±1/√fan_in weights; the attention vector starts at zero so
    /// attention begins as a plain neighborhood mean.
    pub fn init<R: Rng + ?Sized>(dims: GnnDims, aggregation: Aggregation, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(dims.layers);
        let mut d_in = dims.d_in;
        for _ in 0..dims.layers.max(1) {
            layers.push(RuleLayer {
                w: Matrix::init_uniform(dims.d_h, d_in, rng),
                a: vec![0.0; 2 * dims.d_h],
                w_rule: Matrix::init_uniform(dims.d_r, 2 * d_in, rng),
            });
            d_in = dims.d_r;
        }
        let scale = 1.0 / ((dims.d_r + 1) as f64).sqrt();
        let u = (0..dims.d_r + 1).map(|_| rng.random_range(-scale..scale)).collect();
        Self {
            layers,
            u,
            beta: DEFAULT_BETA,
            aggregation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| RuleLayer {
                    w: Matrix::zeros(l.w.rows(), l.w.cols()),
                    a: vec![0.0; l.a.len()],
                    w_rule: Matrix::zeros(l.w_rule.rows(), l.w_rule.cols()),
                })
                .collect(),
            u: vec![0.0; self.u.len()],
            beta: self.beta,
            aggregation: self.aggregation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_r(&self) -> usize {
        self.layers.last().map_or(0, RuleLayer::d_out)
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: String| Err(GnnError::InvalidParams(m));
        if self.layers.is_empty() {
            return bad("no rule layers".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} outside (0, 1]", self.beta));
        }
        let mut d_in = self.d_in();
        for (k, l) in self.layers.iter().enumerate() {
            let d_h = l.w.rows();
            if l.w.cols() != d_in || l.a.len() != 2 * d_h || l.w_rule.cols() != 2 * d_in {
                return bad(format!("layer {k} shapes inconsistent"));
            }
            d_in = l.d_out();
        }
        if self.u.len() != self.d_r() + 1 {
            return bad(format!("gate vector length {} != d_r + 1", self.u.len()));
        }
        if !self.is_finite() {
            return bad("non-finite entry".into());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.is_finite() && l.w_rule.is_finite() && l.a.iter().all(|x| x.is_finite()))
            && self.u.iter().all(|x| x.is_finite())
    }

    /// Mutable views of every trainable entry, in a fixed order.
    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        for l in &mut self.layers {
            out.extend(l.w.as_mut_slice().iter_mut());
            out.extend(l.a.iter_mut());
            out.extend(l.w_rule.as_mut_slice().iter_mut());
        }
        out.extend(self.u.iter_mut());
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.clone().flat_mut().into_iter().map(|x| *x).collect()
    }

    pub fn axpy(&mut self, scale: f64, other: &GnnParams) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.w.axpy(scale, &o.w);
            linalg::axpy(&mut l.a, scale, &o.a);
            l.w_rule.axpy(scale, &o.w_rule);
        }
        linalg::axpy(&mut self.u, scale, &other.u);
    }
}

/// Neighborhood structure in node index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// N(i), including i itself.
    pub rule: Vec<Vec<usize>>,
    /// D(i) with stored similarity.
    pub dynamic: Vec<Vec<(usize, f64)>>,
}

impl Topology {
    pub fn of(graph: &KnowledgeGraph) -> Self {
        Self {
            rule: graph.rule_neighbors(),
            dynamic: graph.dynamic_neighbors(),
        }
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub h0: Vec<Vec<f64>>,
    pub h_rule: Vec<Vec<f64>>,
    pub h_dyn: Vec<Vec<f64>>,
    pub h_joint: Vec<Vec<f64>>,
}

/// `h0_i = metadata_i ‖ onehot(kind_i)` in node index order.
pub fn init_node_features(graph: &KnowledgeGraph) -> Result<Vec<Vec<f64>>, GnnError> {
    graph
        .nodes()
        .map(|n| {
            let m = n
                .metadata_embedding
                .as_ref()
                .ok_or_else(|| GnnError::MissingMetadata(n.id.clone()))?;
            let mut onehot = vec![0.0; NodeKind::COUNT];
            onehot[n.kind.index()] = 1.0;
            Ok(linalg::concat(m, &onehot))
        })
        .collect()
}

/// Per-node attention weights over N(i), aligned with `topo.rule[i]`.
pub(crate) fn attention_rows(topo: &Topology, h: &[Vec<f64>], layer: &RuleLayer) -> Vec<Vec<f64>> {
    let d_h = layer.w.rows();
    let (a1, a2) = layer.a.split_at(d_h);
    let z: Vec<Vec<f64>> = h.iter().map(|x| layer.w.matvec(x)).collect();
    let src: Vec<f64> = z.iter().map(|zi| linalg::dot(a1, zi)).collect();
    let dst: Vec<f64> = z.iter().map(|zj| linalg::dot(a2, zj)).collect();
    topo.rule
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let logits: Vec<f64> = nbrs.iter().map(|&j| src[i] + dst[j]).collect();
            linalg::softmax(&logits)
        })
        .collect()
}

fn dense(topo: &Topology, rows: &[Vec<f64>]) -> Matrix {
    let n = topo.len();
    let mut m = Matrix::zeros(n, n);
    for (i, (nbrs, w)) in topo.rule.iter().zip(rows).enumerate() {
        for (&j, &a) in nbrs.iter().zip(w) {
            m.set(i, j, a);
        }
    }
    m
}

/// Rule-neighbor attention matrix α (n × n); each row sums to one over
/// N(i) and is zero elsewhere.
pub fn rule_attention(graph: &KnowledgeGraph, h: &[Vec<f64>], layer: &RuleLayer) -> Matrix {
    let topo = Topology::of(graph);
    dense(&topo, &attention_rows(&topo, h, layer))
}

pub(crate) fn aggregation_weights(
    topo: &Topology,
    h: &[Vec<f64>],
    layer: &RuleLayer,
    aggregation: Aggregation,
) -> Vec<Vec<f64>> {
    match aggregation {
        Aggregation::Attn => attention_rows(topo, h, layer),
        Aggregation::Mean => topo
            .rule
            .iter()
            .map(|n| vec![1.0 / n.len() as f64; n.len()])
            .collect(),
        Aggregation::Sum => topo.rule.iter().map(|n| vec![1.0; n.len()]).collect(),
    }
}

pub(crate) fn rule_layer_topo(
    topo: &Topology,
    h: &[Vec<f64>],
    layer: &RuleLayer,
    aggregation: Aggregation,
) -> Vec<Vec<f64>> {
    let weights = aggregation_weights(topo, h, layer, aggregation);
    topo.rule
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut agg = vec![0.0; h[i].len()];
            for (&j, &w) in nbrs.iter().zip(&weights[i]) {
                linalg::axpy(&mut agg, w, &h[j]);
            }
            relu(layer.w_rule.matvec(&linalg::concat(&h[i], &agg)))
        })
        .collect()
}

fn relu(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    v
}

/// `h_rule_i = ReLU(W_rule · [h_i ‖ agg_{j∈N(i)} h_j])`.
pub fn rule_layer(
    graph: &KnowledgeGraph,
    h: &[Vec<f64>],
    layer: &RuleLayer,
    aggregation: Aggregation,
) -> Vec<Vec<f64>> {
    rule_layer_topo(&Topology::of(graph), h, layer, aggregation)
}

/// Gate value `σ(uᵀ[h_i ‖ ē_i])` for a node with non-empty D(i).
pub(crate) fn gate(u: &[f64], h_i: &[f64], mean_sim: f64) -> f64 {
    let d = h_i.len();
    linalg::sigmoid(linalg::dot(&u[..d], h_i) + u[d] * mean_sim)
}

pub(crate) fn dynamic_layer_topo(topo: &Topology, h_rule: &[Vec<f64>], params: &GnnParams) -> Vec<Vec<f64>> {
    topo.dynamic
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut out = h_rule[i].clone();
            if nbrs.is_empty() {
                return out;
            }
            let mean_sim = nbrs.iter().map(|&(_, s)| s).sum::<f64>() / nbrs.len() as f64;
            let mut msg = vec![0.0; out.len()];
            for &(q, s) in nbrs {
                linalg::axpy(&mut msg, s, &h_rule[q]);
            }
            let g = gate(&params.u, &h_rule[i], mean_sim);
            linalg::axpy(&mut out, params.beta * g, &msg);
            out
        })
        .collect()
}

/// `h_dyn_i = h_rule_i + β·σ(uᵀ[h_rule_i ‖ ē_i])·Σ_{q∈D(i)} s_iq h_rule_q`;
/// nodes without semantic neighbors keep `h_rule_i` exactly.
pub fn dynamic_layer(graph: &KnowledgeGraph, h_rule: &[Vec<f64>], params: &GnnParams) -> Vec<Vec<f64>> {
    dynamic_layer_topo(&Topology::of(graph), h_rule, params)
}

pub fn joint_embedding(h_rule: &[Vec<f64>], h_dyn: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GnnError> {
    if h_rule.len() != h_dyn.len() {
        return Err(GnnError::Shape(format!(
            "{} rule rows vs {} dynamic rows",
            h_rule.len(),
            h_dyn.len()
        )));
    }
    h_rule
        .iter()
        .zip(h_dyn)
        .map(|(r, d)| {
            if r.len() != d.len() {
                return Err(GnnError::Shape(format!("row widths {} and {}", r.len(), d.len())));
            }
            Ok(linalg::concat(r, d))
        })
        .collect()
}

/// Forward pass from given input features over a precomputed topology.
pub fn encode_features(topo: &Topology, h0: Vec<Vec<f64>>, params: &GnnParams) -> Result<NodeEmbeddings, GnnError> {
    if topo.is_empty() {
        return Err(GnnError::EmptyGraph);
    }
    params.validate()?;
    if h0.len() != topo.len() || h0.iter().any(|r| r.len() != params.d_in()) {
        return Err(GnnError::Shape(format!(
            "features must be {} rows of width {}",
            topo.len(),
            params.d_in()
        )));
    }
    let mut h = h0.clone();
    for layer in &params.layers {
        h = rule_layer_topo(topo, &h, layer, params.aggregation);
    }
    let h_dyn = dynamic_layer_topo(topo, &h, params);
    let h_joint = joint_embedding(&h, &h_dyn)?;
    Ok(NodeEmbeddings {
        h0,
        h_rule: h,
        h_dyn,
        h_joint,
    })
}

pub fn encode(graph: &KnowledgeGraph, params: &GnnParams) -> Result<NodeEmbeddings, GnnError> {
    if graph.is_empty() {
        return Err(GnnError::EmptyGraph);
    }
    encode_features(&Topology::of(graph), init_node_features(graph)?, params)
}

/// Mean pairwise cosine similarity between rows; higher means node
/// representations are less distinguishable.
pub fn over_smoothing(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += linalg::cosine(&rows[i], &rows[j]);
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Multiply-add count of one forward pass; the deterministic latency proxy
/// used when comparing encoder depths.
pub fn encode_cost(topo: &Topology, params: &GnnParams) -> u64 {
    let n = topo.len() as u64;
    let edges: u64 = topo.rule.iter().map(|r| r.len() as u64).sum();
    let dyn_edges: u64 = topo.dynamic.iter().map(|d| d.len() as u64).sum();
    let mut ops = 0;
    for l in &params.layers {
        let (d_in, d_h, d_r) = (l.d_in() as u64, l.w.rows() as u64, l.d_out() as u64);
        if params.aggregation == Aggregation::Attn {
            ops += n * d_h * d_in + 2 * n * d_h + edges;
        }
        ops += edges * d_in + n * d_r * 2 * d_in;
    }
    let d_r = params.d_r() as u64;
    ops + dyn_edges * d_r + n * (d_r + 1)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::{EntityNode, GraphDims};

    fn graph(n: usize, d_m: usize, rng: &mut ChaCha8Rng) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new(GraphDims { d_m, d_s: 4 });
        for i in 0..n {
            let m = (0..d_m).map(|_| rng.random_range(-1.0..1.0)).collect();
            g.add_entity(EntityNode::new(format!("n{i}"), NodeKind::ALL[i % 7]).with_metadata(m))
                .unwrap();
        }
        g
    }

    #[test]
    fn features_are_metadata_then_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = KnowledgeGraph::new(GraphDims { d_m: 2, d_s: 4 });
        g.add_entity(EntityNode::new("pump", NodeKind::Equipment).with_metadata(vec![0.5, -1.0]))
            .unwrap();
        g.add_entity(EntityNode::new("line", NodeKind::ProductionLine).with_metadata(vec![0.5, -1.0]))
            .unwrap();
        let h0 = init_node_features(&g).unwrap();
        let mut expect = vec![0.5, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        expect[2 + NodeKind::Equipment.index()] = 1.0;
        assert_eq!(h0[0], expect);
        assert_eq!(h0[0][..2], h0[1][..2]);
        assert_ne!(h0[0][2..], h0[1][2..]);
        let big = graph(20, 3, &mut rng);
        let h = init_node_features(&big).unwrap();
        assert_eq!((h.len(), h[0].len()), (20, 10));
        assert_eq!(h[7][..3], big.node_at(7).unwrap().metadata_embedding.as_ref().unwrap()[..]);
    }

    #[test]
    fn missing_metadata_names_node() {
        let mut g = KnowledgeGraph::new(GraphDims { d_m: 2, d_s: 4 });
        g.add_entity(EntityNode::new("bare", NodeKind::Document)).unwrap();
        assert_eq!(
            init_node_features(&g).unwrap_err(),
            GnnError::MissingMetadata("bare".into())
        );
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = graph(1, 3, &mut rng);
        let mut p = GnnParams::init(GnnDims::for_metadata(3, 4, 5, 1), Aggregation::Attn, &mut rng);
        p.layers[0].a = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0 = init_node_features(&g).unwrap();
        assert_eq!(rule_attention(&g, &h0, &p.layers[0]).get(0, 0), 1.0);
        let out = rule_layer(&g, &h0, &p.layers[0], Aggregation::Attn);
        assert_eq!(out[0], relu(p.layers[0].w_rule.matvec(&linalg::concat(&h0[0], &h0[0]))));
    }

    #[test]
    fn zero_rule_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = graph(5, 3, &mut rng);
        g.add_rule_edge(&"n0".into(), &"n1".into(), "r").unwrap();
        let mut p = GnnParams::init(GnnDims::for_metadata(3, 4, 5, 1), Aggregation::Attn, &mut rng);
        p.layers[0].w_rule = Matrix::zeros(5, 20);
        let h0 = init_node_features(&g).unwrap();
        for row in rule_layer(&g, &h0, &p.layers[0], Aggregation::Attn) {
            assert!(row.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn no_dynamic_edges_means_identity_upper_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = graph(6, 3, &mut rng);
        let p = GnnParams::init(GnnDims::for_metadata(3, 4, 3, 2), Aggregation::Attn, &mut rng);
        let e = encode(&g, &p).unwrap();
        assert_eq!(e.h_dyn, e.h_rule);
        for (j, r) in e.h_joint.iter().zip(&e.h_rule) {
            assert_eq!(j.len(), 6);
            assert_eq!(&j[..3], &r[..]);
            assert_eq!(&j[3..], &r[..]);
        }
    }

    #[test]
    fn joint_embedding_rejects_mismatch() {
        assert!(joint_embedding(&[vec![1.0]], &[]).is_err());
        assert!(joint_embedding(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn cost_grows_with_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = graph(10, 3, &mut rng);
        let topo = Topology::of(&g);
        let p2 = GnnParams::init(GnnDims::for_metadata(3, 4, 4, 2), Aggregation::Attn, &mut rng);
        let p4 = GnnParams::init(GnnDims::for_metadata(3, 4, 4, 4), Aggregation::Attn, &mut rng);
        assert!(encode_cost(&topo, &p4) > encode_cost(&topo, &p2));
    }

    #[test]
    fn params_round_trip_through_json() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = GnnParams::init(GnnDims::for_metadata(3, 4, 4, 2), Aggregation::Mean, &mut rng);
        let back: GnnParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
        let mut bad = p.clone();
        bad.beta = 0.0;
        assert!(bad.validate().is_err());
    }
}
