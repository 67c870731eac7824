//! Seeded synthetic corpus whose labels are perfectly separable.
//!
//! Label `l` owns tokens `l*P .. l*P + P`. A document for `l` draws
//! `tokens_per_doc` of them without replacement and adds `noise_per_doc`
//! tokens from a shared noise vocabulary placed after all private tokens.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codes::LabelId;
use crate::error::{Result, SolarError};
use crate::features::{Document, TokenId};
use crate::hash::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub private_tokens: usize,
    pub tokens_per_doc: usize,
    pub noise_vocab: usize,
    pub noise_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_labels: 2000,
            private_tokens: 5,
            tokens_per_doc: 3,
            noise_vocab: 1000,
            noise_per_doc: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels == 0 || self.private_tokens == 0 {
            return Err(SolarError::config("num_labels and private_tokens must be positive"));
        }
        if self.tokens_per_doc == 0 || self.tokens_per_doc > self.private_tokens {
            return Err(SolarError::config("tokens_per_doc must be in 1..=private_tokens"));
        }
        if self.noise_per_doc > self.noise_vocab {
            return Err(SolarError::config("noise_per_doc exceeds noise_vocab"));
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.num_labels * self.private_tokens + self.noise_vocab
    }

    /// `docs_per_label` documents for every label, label-major. Different
    /// `split` values give independent samples.
    pub fn generate(&self, docs_per_label: usize, split: u64) -> Result<Vec<Document>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, split));
        let noise_base = (self.num_labels * self.private_tokens) as TokenId;
        let mut docs = Vec::with_capacity(self.num_labels * docs_per_label);
        for label in 0..self.num_labels {
            let base = (label * self.private_tokens) as TokenId;
            for _ in 0..docs_per_label {
                let mut tokens: Vec<(TokenId, f32)> = sample(&mut rng, self.private_tokens, self.tokens_per_doc)
                    .into_iter()
                    .map(|i| (base + i as TokenId, 1.0))
                    .collect();
                for i in sample(&mut rng, self.noise_vocab, self.noise_per_doc) {
                    tokens.push((noise_base + i as TokenId, 1.0));
                }
                tokens.sort_unstable_by_key(|t| t.0);
                docs.push(Document::new(docs.len() as u64, tokens, vec![label as LabelId]));
            }
        }
        Ok(docs)
    }

    /// Draws `count` documents with uniformly random labels.
    pub fn generate_random(&self, count: usize, split: u64) -> Result<Vec<Document>> {
        let pool = self.generate(1, split)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, split ^ 0x5eed));
        Ok((0..count)
            .map(|i| {
                let mut d = pool[rng.random_range(0..pool.len())].clone();
                d.id = i as u64;
                d
            })
            .collect())
    }
}
