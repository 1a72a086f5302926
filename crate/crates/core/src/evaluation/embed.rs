use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::text::{normalize_value, stable_hash};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("embedding provider failed: {0}")]
pub struct EmbedError(pub String);

/// Sentence embedder returning unit-norm vectors of fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= n;
    }
    v
}

/// Deterministic Gaussian unit vectors seeded by the normalized text.
/// Identical strings embed identically; distinct strings are nearly
/// orthogonal, so semantic matching only fires on identical text.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 512 }
    }
}

impl HashEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let key = normalize_value(text);
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&["embed", &key]));
        unit(
            (0..self.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
        )
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.vector(text))
    }
}

/// A [`HashEmbedder`] with planted pairs: `text` embeds at cosine
/// `similarity` to `anchor`, never rounding below it.
#[derive(Debug, Clone, Default)]
pub struct PlantedEmbedder {
    base: HashEmbedder,
    planted: HashMap<String, (String, f64)>,
}

impl PlantedEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plant(mut self, text: &str, anchor: &str, similarity: f64) -> Self {
        assert!((-1.0..=1.0).contains(&similarity));
        self.planted
            .insert(normalize_value(text), (normalize_value(anchor), similarity));
        self
    }
}

impl EmbeddingProvider for PlantedEmbedder {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let key = normalize_value(text);
        let Some((anchor, sigma)) = self.planted.get(&key) else {
            return Ok(self.base.vector(&key));
        };
        let u = self.base.vector(anchor);
        let w = self.base.vector(&key);
        let proj: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        let perp = unit(w.iter().zip(&u).map(|(wi, ui)| wi - proj * ui).collect());
        let mix = |s: f64| {
            let tail = (1.0 - s * s).max(0.0).sqrt();
            unit(
                u.iter()
                    .zip(&perp)
                    .map(|(ui, pi)| s * ui + tail * pi)
                    .collect(),
            )
        };
        let mut s = *sigma;
        let mut v = mix(s);
        for _ in 0..64 {
            let c = cosine(&u, &v);
            if c >= *sigma || s >= 1.0 {
                break;
            }
            s = (s + (*sigma - c).max(f64::EPSILON)).min(1.0);
            v = mix(s);
        }
        Ok(v)
    }
}
