//! Semantic fusion: triple embeddings from a pluggable provider are fused
//! with business metadata through a layer-normalized linear map, and the
//! fusion is trained against an alignment loss between the semantic and
//! metadata views.

mod ingest;
mod provider;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{EntityNode, NodeEmbedder};
use crate::linalg::{self, check_len, Matrix, ShapeError};
use crate::real17;

pub use ingest::{ingest_triples, IngestReport, SkippedLine};
#[cfg(feature = "http")]
pub use provider::HttpProvider;
pub use provider::{embed_triple, EmbeddingProvider, ProviderError, StubProvider};
pub use train::{alignment_objective, train_alignment, AlignmentTrace, FusionTrainError};

/// Variance floor applied before the square root in layer normalization.
pub const LAYER_NORM_VAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub subject: String,
    pub relation: String,
    pub object: String,
    #[serde(default)]
    pub source_doc: String,
    #[serde(default)]
    pub context: String,
}

impl TripleRecord {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Self {
            subject: subject.to_owned(),
            relation: relation.to_owned(),
            object: object.to_owned(),
            source_doc: String::new(),
            context: String::new(),
        }
    }

    pub fn with_context(mut self, context: &str) -> Self {
        self.context = context.to_owned();
        self
    }

    /// Which mandatory field is empty, if any.
    pub fn missing_field(&self) -> Option<&'static str> {
        [
            ("subject", &self.subject),
            ("relation", &self.relation),
            ("object", &self.object),
        ]
        .into_iter()
        .find(|(_, v)| v.trim().is_empty())
        .map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub explanation: String,
    #[serde(with = "real17::vec")]
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub d_g: usize,
    pub d_m: usize,
    pub d_s: usize,
    pub d_a: usize,
}

impl Default for FusionDims {
    fn default() -> Self {
        Self {
            d_g: 64,
            d_m: 16,
            d_s: 32,
            d_a: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// d_s × d_g
    pub w_g: Matrix,
    /// d_s × d_m
    pub w_m: Matrix,
    #[serde(with = "real17::vec")]
    pub gain: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub bias: Vec<f64>,
    /// d_a × d_s
    pub phi: Matrix,
    /// d_a × d_m
    pub psi: Matrix,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(dims: FusionDims, rng: &mut R) -> Self {
        Self {
            w_g: Matrix::init_uniform(dims.d_s, dims.d_g, rng),
            w_m: Matrix::init_uniform(dims.d_s, dims.d_m, rng),
            gain: vec![1.0; dims.d_s],
            bias: vec![0.0; dims.d_s],
            phi: Matrix::init_uniform(dims.d_a, dims.d_s, rng),
            psi: Matrix::init_uniform(dims.d_a, dims.d_m, rng),
        }
    }

    pub fn zeros(dims: FusionDims) -> Self {
        Self {
            w_g: Matrix::zeros(dims.d_s, dims.d_g),
            w_m: Matrix::zeros(dims.d_s, dims.d_m),
            gain: vec![0.0; dims.d_s],
            bias: vec![0.0; dims.d_s],
            phi: Matrix::zeros(dims.d_a, dims.d_s),
            psi: Matrix::zeros(dims.d_a, dims.d_m),
        }
    }

    pub fn dims(&self) -> FusionDims {
        FusionDims {
            d_g: self.w_g.cols(),
            d_m: self.w_m.cols(),
            d_s: self.w_g.rows(),
            d_a: self.phi.rows(),
        }
    }

    /// Checks mutual consistency of every block.
    pub fn validate(&self) -> Result<(), ShapeError> {
        let d = self.dims();
        check_len(d.d_s, self.w_m.rows())?;
        check_len(d.d_s, self.gain.len())?;
        check_len(d.d_s, self.bias.len())?;
        check_len(d.d_s, self.phi.cols())?;
        check_len(d.d_a, self.psi.rows())?;
        check_len(d.d_m, self.psi.cols())?;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w_g.is_finite()
            && self.w_m.is_finite()
            && self.phi.is_finite()
            && self.psi.is_finite()
            && self.gain.iter().chain(&self.bias).all(|x| x.is_finite())
    }

    /// `self += scale · other`, block by block.
    pub fn axpy(&mut self, scale: f64, other: &FusionParams) {
        self.w_g.axpy(scale, &other.w_g);
        self.w_m.axpy(scale, &other.w_m);
        linalg::axpy(&mut self.gain, scale, &other.gain);
        linalg::axpy(&mut self.bias, scale, &other.bias);
        self.phi.axpy(scale, &other.phi);
        self.psi.axpy(scale, &other.psi);
    }

    /// All parameters as one flat vector, in block order.
    pub fn flatten(&self) -> Vec<f64> {
        [
            self.w_g.as_slice(),
            self.w_m.as_slice(),
            &self.gain,
            &self.bias,
            self.phi.as_slice(),
            self.psi.as_slice(),
        ]
        .concat()
    }

    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        self.w_g
            .as_mut_slice()
            .iter_mut()
            .chain(self.w_m.as_mut_slice())
            .chain(self.gain.iter_mut())
            .chain(self.bias.iter_mut())
            .chain(self.phi.as_mut_slice())
            .chain(self.psi.as_mut_slice())
            .collect()
    }
}

/// Intermediate values of one fusion forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct FuseTrace {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
    pub floored: bool,
    pub output: Vec<f64>,
}

pub(crate) fn fuse_traced(g: &[f64], m: &[f64], p: &FusionParams) -> FuseTrace {
    let mut pre = p.w_g.matvec(g);
    linalg::axpy(&mut pre, 1.0, &p.w_m.matvec(m));
    let n = pre.len() as f64;
    let mean = pre.iter().sum::<f64>() / n;
    let centered: Vec<f64> = pre.iter().map(|x| x - mean).collect();
    let var = centered.iter().map(|c| c * c).sum::<f64>() / n;
    let floored = var < LAYER_NORM_VAR_FLOOR;
    let inv_std = 1.0 / var.max(LAYER_NORM_VAR_FLOOR).sqrt();
    let normalized: Vec<f64> = centered.iter().map(|c| c * inv_std).collect();
    let output = normalized
        .iter()
        .zip(&p.gain)
        .zip(&p.bias)
        .map(|((x, g), b)| g * x + b)
        .collect();
    FuseTrace {
        normalized,
        inv_std,
        floored,
        output,
    }
}

/// `LayerNorm(W_g·g + W_m·m)` on a raw provider vector.
pub fn fuse_vector(g: &[f64], m: &[f64], params: &FusionParams) -> Result<Vec<f64>, ShapeError> {
    let d = params.dims();
    check_len(d.d_g, g.len())?;
    check_len(d.d_m, m.len())?;
    Ok(fuse_traced(g, m, params).output)
}

pub fn fuse(raw: &EmbeddingResponse, m: &[f64], params: &FusionParams) -> Result<Vec<f64>, ShapeError> {
    fuse_vector(&raw.vector, m, params)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignmentError {
    #[error("alignment batch is empty")]
    EmptyBatch,
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// `Σ_k ‖φ·v_k − ψ·m_k‖²` over already-fused vectors.
pub fn alignment_loss(batch: &[(Vec<f64>, Vec<f64>)], params: &FusionParams) -> Result<f64, AlignmentError> {
    if batch.is_empty() {
        return Err(AlignmentError::EmptyBatch);
    }
    let d = params.dims();
    let mut total = 0.0;
    for (v, m) in batch {
        check_len(d.d_s, v.len())?;
        check_len(d.d_m, m.len())?;
        let r = linalg::sub(&params.phi.matvec(v), &params.psi.matvec(m));
        total += linalg::dot(&r, &r);
    }
    Ok(total)
}

/// Builds the triple a node is described by when asking a provider for its
/// embedding.
pub fn node_triple(node: &EntityNode) -> TripleRecord {
    let context = node
        .attributes
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    TripleRecord {
        subject: node.id.as_str().to_owned(),
        relation: "is-a".to_owned(),
        object: node.kind.label().to_owned(),
        source_doc: String::new(),
        context,
    }
}

/// Node embedder that asks a provider for the node's triple, fuses it with
/// the node metadata (zeros when absent) and unit-normalizes the result.
pub struct FusionEmbedder<'a> {
    pub provider: &'a mut dyn EmbeddingProvider,
    pub params: &'a FusionParams,
}

impl NodeEmbedder for FusionEmbedder<'_> {
    fn embed_node(&mut self, node: &EntityNode) -> Result<Vec<f64>, ProviderError> {
        let resp = embed_triple(self.provider, &node_triple(node))?;
        let d = self.params.dims();
        let m = node
            .metadata_embedding
            .clone()
            .unwrap_or_else(|| vec![0.0; d.d_m]);
        let mut v = fuse(&resp, &m, self.params)
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        if !linalg::normalize(&mut v) {
            v = vec![0.0; d.d_s];
            v[0] = 1.0;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn dims() -> FusionDims {
        FusionDims {
            d_g: 5,
            d_m: 3,
            d_s: 8,
            d_a: 8,
        }
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_metadata_weight_gives_standardized_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = FusionParams::init(dims(), &mut rng);
        p.w_m = Matrix::zeros(8, 3);
        let v = fuse_vector(&rand_vec(5, &mut rng), &rand_vec(3, &mut rng), &p).unwrap();
        let mean = v.iter().sum::<f64>() / 8.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_input_returns_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = FusionParams::init(dims(), &mut rng);
        p.bias = rand_vec(8, &mut rng);
        let v = fuse_vector(&[0.0; 5], &[0.0; 3], &p).unwrap();
        assert_eq!(v, p.bias);
    }

    #[test]
    fn fuse_rejects_wrong_lengths() {
        let p = FusionParams::zeros(dims());
        assert_eq!(
            fuse_vector(&[0.0; 4], &[0.0; 3], &p).unwrap_err(),
            ShapeError { expected: 5, actual: 4 }
        );
    }

    #[test]
    fn alignment_loss_edge_cases() {
        let d = FusionDims { d_g: 2, d_m: 2, d_s: 2, d_a: 2 };
        let mut p = FusionParams::zeros(d);
        p.phi = Matrix::identity(2);
        p.psi = Matrix::identity(2);
        let coincide = vec![(vec![0.3, -1.0], vec![0.3, -1.0]), (vec![2.0, 0.0], vec![2.0, 0.0])];
        assert_eq!(alignment_loss(&coincide, &p).unwrap(), 0.0);
        let pythagoras = vec![(vec![3.0, 4.0], vec![0.0, 0.0])];
        assert_eq!(alignment_loss(&pythagoras, &p).unwrap(), 25.0);
        assert_eq!(alignment_loss(&[], &p).unwrap_err(), AlignmentError::EmptyBatch);
    }

    #[test]
    fn params_validate_catches_inconsistent_blocks() {
        let mut p = FusionParams::zeros(dims());
        assert!(p.validate().is_ok());
        p.bias.pop();
        assert!(p.validate().is_err());
    }
}
