//! Category-retrieval check for the fusion layer: documents whose provider
//! vectors carry their category clearly and whose metadata carries it
//! noisily are matched to clean category anchors in the shared alignment
//! space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::World;
use crate::fusion::{embed_triple, fuse, EmbeddingProvider, FusionParams, ProviderError, TripleRecord};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub triple: TripleRecord,
    pub metadata: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCorpus {
    pub items: Vec<CorpusItem>,
    /// Noise-free metadata per class.
    pub anchors: Vec<Vec<f64>>,
}

/// `per_class` documents for each of `classes` categories. Category topics
/// sit after the entity topics so they never collide with graph nodes.
pub fn semantic_corpus(world: &World, classes: usize, per_class: usize, noise: f64, seed: u64) -> SemanticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = world.entity_topics();
    let mut items = Vec::with_capacity(classes * per_class);
    for i in 0..per_class {
        for c in 0..classes {
            let topic = base + c;
            items.push(CorpusItem {
                triple: TripleRecord::new(&format!("report-{seed}-{c}-{i}"), "mentions", &format!("category-{c}"))
                    .with_context(&format!("topic={topic}")),
                metadata: world.metadata(topic, world.config.meta_signal, noise, &mut rng),
                class: c,
            });
        }
    }
    let anchors = (0..classes).map(|c| world.metadata_anchor(base + c)).collect();
    SemanticCorpus { items, anchors }
}

/// Assigns every item to the anchor with the highest cosine between
/// `φ·v_item` and `ψ·anchor`; returns macro-F1 against the true classes.
pub fn semantic_eval(
    corpus: &SemanticCorpus,
    provider: &mut dyn EmbeddingProvider,
    params: &FusionParams,
) -> Result<f64, ProviderError> {
    let keys: Vec<Vec<f64>> = corpus.anchors.iter().map(|a| params.psi.matvec(a)).collect();
    let mut truth = Vec::with_capacity(corpus.items.len());
    let mut pred = Vec::with_capacity(corpus.items.len());
    for item in &corpus.items {
        let raw = embed_triple(provider, &item.triple)?;
        let v = fuse(&raw, &item.metadata, params).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let q = params.phi.matvec(&v);
        let scores: Vec<f64> = keys.iter().map(|k| linalg::cosine(&q, k)).collect();
        truth.push(item.class);
        pred.push(linalg::argmax(&scores).unwrap_or(0));
    }
    Ok(macro_f1(&truth, &pred))
}

/// Unweighted mean of per-class F1 over every class that occurs in either
/// list.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(truth.len(), pred.len(), "label lists differ in length");
    let k = truth.iter().chain(pred).copied().max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..k)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}
