//! Triple embedding providers. A provider session has a fixed vector width;
//! any response of another width is a dimension-drift error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{EmbeddingResponse, TripleRecord};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider dimension drifted from {expected} to {actual}")]
    DimensionDrift { expected: usize, actual: usize },
}

pub trait EmbeddingProvider {
    /// Vector width fixed for this session.
    fn dim(&self) -> usize;

    fn embed_batch(&mut self, triples: &[TripleRecord]) -> Result<Vec<EmbeddingResponse>, ProviderError>;
}

/// Embeds a single triple and enforces the session contract.
pub fn embed_triple(
    provider: &mut dyn EmbeddingProvider,
    triple: &TripleRecord,
) -> Result<EmbeddingResponse, ProviderError> {
    let expected = provider.dim();
    let mut out = provider.embed_batch(std::slice::from_ref(triple))?;
    if out.len() != 1 {
        return Err(ProviderError::Malformed(format!(
            "expected 1 result, got {}",
            out.len()
        )));
    }
    let resp = out.pop().expect("one result");
    if resp.vector.len() != expected {
        return Err(ProviderError::DimensionDrift {
            expected,
            actual: resp.vector.len(),
        });
    }
    if !resp.vector.iter().all(|x| x.is_finite()) {
        return Err(ProviderError::Malformed("non-finite vector entry".into()));
    }
    Ok(resp)
}

/// Deterministic offline provider: each triple is hashed together with the
/// session seed into a pseudo-random unit vector.
#[derive(Debug, Clone)]
pub struct StubProvider {
    seed: u64,
    dim: usize,
}

impl StubProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    pub fn vector_for(&self, t: &TripleRecord) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for field in [&t.subject, &t.relation, &t.object, &t.context] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if !linalg::normalize(&mut v) {
            v[0] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for StubProvider {
    fn dim(&self) -> usize {
        self.dim
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

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::*;

    #[derive(Serialize)]
    struct WireTriple<'a> {
        subject: &'a str,
        relation: &'a str,
        object: &'a str,
        context: &'a str,
    }

    #[derive(Serialize)]
    struct WireRequest<'a> {
        triples: Vec<WireTriple<'a>>,
    }

    #[derive(Deserialize)]
    struct WireResponse {
        results: Vec<EmbeddingResponse>,
    }

    /// Remote provider speaking the JSON batch protocol over HTTP POST.
    #[derive(Debug, Clone)]
    pub struct HttpProvider {
        endpoint: String,
        dim: usize,
        timeout: Duration,
        retries: u32,
    }

    impl HttpProvider {
        pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
            Self {
                endpoint: endpoint.into(),
                dim,
                timeout: Duration::from_secs(30),
                retries: 2,
            }
        }

        pub fn with_timeout(mut self, timeout: Duration) -> Self {
            self.timeout = timeout;
            self
        }

        pub fn with_retries(mut self, retries: u32) -> Self {
            self.retries = retries;
            self
        }

        pub fn endpoint(&self) -> &str {
            &self.endpoint
        }

        fn attempt(&self, body: &WireRequest<'_>) -> Result<WireResponse, ProviderError> {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(self.timeout))
                .http_status_as_error(true)
                .build()
                .new_agent();
            let mut resp = agent
                .post(&self.endpoint)
                .send_json(body)
                .map_err(|e| ProviderError::Transport(e.to_string()))?;
            resp.body_mut()
                .read_json::<WireResponse>()
                .map_err(|e| ProviderError::Malformed(e.to_string()))
        }
    }

    impl EmbeddingProvider for HttpProvider {
        fn dim(&self) -> usize {
            self.dim
        }

        fn embed_batch(&mut self, triples: &[TripleRecord]) -> Result<Vec<EmbeddingResponse>, ProviderError> {
            let body = WireRequest {
                triples: triples
                    .iter()
                    .map(|t| WireTriple {
                        subject: &t.subject,
                        relation: &t.relation,
                        object: &t.object,
                        context: &t.context,
                    })
                    .collect(),
            };
            let mut last = ProviderError::Transport("no attempt made".into());
            for _ in 0..=self.retries {
                match self.attempt(&body) {
                    Ok(resp) => {
                        if resp.results.len() != triples.len() {
                            return Err(ProviderError::Malformed(format!(
                                "{} results for {} triples",
                                resp.results.len(),
                                triples.len()
                            )));
                        }
                        if let Some(bad) = resp.results.iter().find(|r| r.vector.len() != self.dim) {
                            return Err(ProviderError::DimensionDrift {
                                expected: self.dim,
                                actual: bad.vector.len(),
                            });
                        }
                        return Ok(resp.results);
                    }
                    Err(e @ ProviderError::Transport(_)) => last = e,
                    Err(e) => return Err(e),
                }
            }
            Err(last)
        }
    }
}

#[cfg(feature = "http")]
pub use http::HttpProvider;
