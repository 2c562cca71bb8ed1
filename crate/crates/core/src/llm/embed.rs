use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::remote::HttpTransport;
use super::{LlmConfig, LlmError, Semaphore};

pub const DEFAULT_EMBED_DIM: usize = 256;

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError>;
    fn dim(&self) -> usize;
    fn provider_id(&self) -> String;
}

/// Offline embedder: every token maps to a seeded pseudo-random direction and a
/// text embeds as the normalized sum over its token multiset.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM, 0)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim: dim.max(1),
            seed,
        }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed);
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let toks = tokens(text);
        if toks.is_empty() {
            counts.insert(text.trim().to_string(), 1);
        }
        for t in toks {
            *counts.entry(t).or_default() += 1;
        }
        let mut v = vec![0.0; self.dim];
        for (tok, c) in &counts {
            for (acc, x) in v.iter_mut().zip(self.token_vector(tok)) {
                *acc += *c as f64 * x;
            }
        }
        let n = crate::similarity::norm(&v);
        if n == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("hash-embedder/d{}/s{}", self.dim, self.seed)
    }
}

/// Embeddings endpoint of an OpenAI-compatible provider.
#[derive(Debug)]
pub struct RemoteEmbedder {
    transport: HttpTransport,
    model: String,
    dim: usize,
    gate: Semaphore,
}

impl RemoteEmbedder {
    pub fn from_config(config: &LlmConfig, model: &str, dim: usize) -> Result<Self, LlmError> {
        Ok(Self {
            transport: HttpTransport::from_config(config, &config.endpoint)?,
            model: model.to_string(),
            dim,
            gate: Semaphore::new(config.concurrency_bound),
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let _permit = self.gate.acquire();
        let v = self.transport.embed(&self.model, text)?;
        if v.len() != self.dim {
            return Err(LlmError::DimensionDrift {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("remote/{}/d{}", self.model, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{cosine, norm};

    #[test]
    fn deterministic_unit_vectors() {
        let e = HashEmbedder::default();
        let a = e.embed("saw flames near home").unwrap();
        assert_eq!(a, e.embed("saw flames near home").unwrap());
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        assert_eq!(a.len(), DEFAULT_EMBED_DIM);
        // token multiset: order and case do not matter
        assert_eq!(a, e.embed("Home near FLAMES saw").unwrap());
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(
            HashEmbedder::default().embed("  "),
            Err(LlmError::EmptyText)
        );
        assert!(HashEmbedder::default().embed("!!!").is_ok());
    }
}
