//! Fixed random K-sparse label codes.
//!
//! Every label owns exactly one bucket in each of the `K` chunks. The bucket
//! is `murmur3(label, seed_k) mod B`, where `seed_k` is split from the base
//! seed with [`derive_seed`]. The matrix is therefore a pure function of the
//! [`CodeConfig`] and is never persisted: rebuilding it is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Result, SolarError};
use crate::hash::{derive_seed, hash_u64};
use crate::stats::{binomial_pmf, chi_square_gof, ChiSquare};

pub type LabelId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeConfig {
    pub num_labels: usize,
    pub num_chunks: usize,
    pub buckets_per_chunk: usize,
    pub base_seed: u64,
}

impl CodeConfig {
    pub fn new(num_labels: usize, num_chunks: usize, buckets_per_chunk: usize, base_seed: u64) -> Self {
        Self {
            num_labels,
            num_chunks,
            buckets_per_chunk,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 1 {
            return Err(SolarError::config("num_labels must be at least 1"));
        }
        if self.num_chunks < 1 {
            return Err(SolarError::config("num_chunks (K) must be at least 1"));
        }
        if self.buckets_per_chunk < 2 {
            return Err(SolarError::config("buckets_per_chunk (B) must be at least 2"));
        }
        if self.num_labels > u32::MAX as usize || self.buckets_per_chunk > u32::MAX as usize {
            return Err(SolarError::config("label and bucket ids must fit in 32 bits"));
        }
        Ok(())
    }

    /// Total embedding dimension `D = K * B`.
    pub fn dim(&self) -> usize {
        self.num_chunks * self.buckets_per_chunk
    }

    /// Hash seed for chunk `k`.
    pub fn chunk_seed(&self, chunk: usize) -> u64 {
        derive_seed(self.base_seed, chunk as u64)
    }

    /// Expected dot product between two distinct label vectors, `K / B`.
    pub fn expected_dot(&self) -> f64 {
        self.num_chunks as f64 / self.buckets_per_chunk as f64
    }

    /// Fraction of non-zero coordinates in a label vector, `K / D = 1 / B`.
    pub fn sparsity_ratio(&self) -> f64 {
        self.num_chunks as f64 / self.dim() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCodebook {
    config: CodeConfig,
    /// Row-major `N x K`.
    codes: Vec<u32>,
}

impl LabelCodebook {
    pub fn build(config: CodeConfig) -> Result<Self> {
        config.validate()?;
        let k = config.num_chunks;
        let b = config.buckets_per_chunk as u32;
        let seeds: Vec<u64> = (0..k).map(|c| config.chunk_seed(c)).collect();
        let mut codes = Vec::with_capacity(config.num_labels * k);
        for label in 0..config.num_labels as u64 {
            codes.extend(seeds.iter().map(|&s| hash_u64(label, s) % b));
        }
        Ok(Self { config, codes })
    }

    /// Wraps an explicit row-major `N x K` code matrix (fixtures, tooling).
    pub fn from_codes(config: CodeConfig, codes: Vec<u32>) -> Result<Self> {
        config.validate()?;
        if codes.len() != config.num_labels * config.num_chunks {
            return Err(SolarError::DimensionMismatch {
                expected: config.num_labels * config.num_chunks,
                actual: codes.len(),
            });
        }
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= config.buckets_per_chunk) {
            return Err(SolarError::OutOfRange {
                what: "bucket",
                value: bad as usize,
                limit: config.buckets_per_chunk,
            });
        }
        Ok(Self { config, codes })
    }

    pub fn config(&self) -> &CodeConfig {
        &self.config
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn num_chunks(&self) -> usize {
        self.config.num_chunks
    }

    pub fn buckets_per_chunk(&self) -> usize {
        self.config.buckets_per_chunk
    }

    /// Bucket of `label` in `chunk`. Panics on out-of-range ids.
    #[inline]
    pub fn code(&self, label: usize, chunk: usize) -> u32 {
        self.codes[label * self.config.num_chunks + chunk]
    }

    /// The `K` per-chunk buckets of `label`.
    #[inline]
    pub fn codes_of(&self, label: usize) -> &[u32] {
        let k = self.config.num_chunks;
        &self.codes[label * k..(label + 1) * k]
    }

    pub fn try_codes_of(&self, label: usize) -> Result<&[u32]> {
        check_index("label", label, self.num_labels())?;
        Ok(self.codes_of(label))
    }

    /// Non-zero coordinates of the label's `D`-dimensional binary vector.
    pub fn global_nonzeros(&self, label: usize) -> Result<Vec<u64>> {
        Ok(shift_to_global(self.try_codes_of(label)?, self.config.buckets_per_chunk))
    }

    /// Number of chunks in which `i` and `j` share a bucket, i.e. `l_i . l_j`.
    pub fn code_dot(&self, i: usize, j: usize) -> Result<usize> {
        let a = self.try_codes_of(i)?;
        let b = self.try_codes_of(j)?;
        Ok(a.iter().zip(b).filter(|(x, y)| x == y).count())
    }

    /// Pairwise dot-product statistics over `num_pairs` random pairs `i != j`.
    pub fn orthogonality_stats(&self, num_pairs: usize, sample_seed: u64) -> Result<OrthogonalityStats> {
        let n = self.num_labels();
        if n < 2 {
            return Err(SolarError::config("orthogonality statistics need at least 2 labels"));
        }
        if num_pairs < 1 {
            return Err(SolarError::config("num_pairs must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let mut histogram = vec![0u64; self.num_chunks() + 1];
        let mut total = 0u64;
        for _ in 0..num_pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let a = self.codes_of(i);
            let b = self.codes_of(j);
            let dot = a.iter().zip(b).filter(|(x, y)| x == y).count();
            histogram[dot] += 1;
            total += dot as u64;
        }
        let max_dot = histogram.iter().rposition(|&c| c > 0).unwrap_or(0);
        Ok(OrthogonalityStats {
            num_chunks: self.num_chunks(),
            buckets_per_chunk: self.buckets_per_chunk(),
            num_pairs,
            mean_dot: total as f64 / num_pairs as f64,
            max_dot,
            histogram,
        })
    }
}

/// Shifts per-chunk bucket ids into global coordinates: `code_k + k * B`.
pub fn shift_to_global(chunk_codes: &[u32], buckets_per_chunk: usize) -> Vec<u64> {
    chunk_codes
        .iter()
        .enumerate()
        .map(|(k, &c)| u64::from(c) + (k * buckets_per_chunk) as u64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityStats {
    pub num_chunks: usize,
    pub buckets_per_chunk: usize,
    pub num_pairs: usize,
    pub mean_dot: f64,
    pub max_dot: usize,
    /// `histogram[d]` = number of sampled pairs with dot product `d`.
    pub histogram: Vec<u64>,
}

impl OrthogonalityStats {
    /// `K / B`.
    pub fn expected_mean(&self) -> f64 {
        self.num_chunks as f64 / self.buckets_per_chunk as f64
    }

    /// Standard error of `mean_dot` under independent per-chunk collisions.
    pub fn standard_error(&self) -> f64 {
        let p = 1.0 / self.buckets_per_chunk as f64;
        (self.num_chunks as f64 * p * (1.0 - p) / self.num_pairs as f64).sqrt()
    }

    /// Deviation of the sample mean from `K / B`, in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.mean_dot - self.expected_mean()) / self.standard_error()
    }

    /// Goodness of fit of the dot histogram against Binomial(K, 1/B).
    pub fn binomial_fit(&self) -> ChiSquare {
        let probs = binomial_pmf(
            self.num_chunks as u64,
            1.0 / self.buckets_per_chunk as f64,
            self.num_chunks as u64,
        );
        chi_square_gof(&self.histogram, &probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_configs() {
        assert!(LabelCodebook::build(CodeConfig::new(0, 1, 2, 0)).is_err());
        assert!(LabelCodebook::build(CodeConfig::new(1, 0, 2, 0)).is_err());
        assert!(LabelCodebook::build(CodeConfig::new(1, 1, 1, 0)).is_err());
    }

    #[test]
    fn single_entry_is_deterministic() {
        let cfg = CodeConfig::new(1, 1, 2, 99);
        let a = LabelCodebook::build(cfg).unwrap();
        let b = LabelCodebook::build(cfg).unwrap();
        assert!(a.code(0, 0) < 2);
        assert_eq!(a, b);
    }

    #[test]
    fn golden_small_codebook() {
        // frozen from tests/oracle/golden.py (scikit-learn murmurhash3_32)
        let cb = LabelCodebook::build(CodeConfig::new(4, 2, 8, 42)).unwrap();
        let rows: Vec<&[u32]> = (0..4).map(|i| cb.codes_of(i)).collect();
        assert_eq!(rows, vec![&[3, 2][..], &[5, 5], &[5, 0], &[3, 0]]);
    }

    #[test]
    fn explicit_codes_are_range_checked() {
        let cfg = CodeConfig::new(2, 2, 4, 0);
        assert!(LabelCodebook::from_codes(cfg, vec![0, 1, 2, 3]).is_ok());
        assert!(LabelCodebook::from_codes(cfg, vec![0, 1, 2, 4]).is_err());
        assert!(LabelCodebook::from_codes(cfg, vec![0, 1, 2]).is_err());
    }

    #[test]
    fn column_histograms_conserve_labels() {
        let cb = LabelCodebook::build(CodeConfig::new(100, 3, 10, 7)).unwrap();
        for k in 0..3 {
            let mut hist = [0usize; 10];
            for i in 0..100 {
                hist[cb.code(i, k) as usize] += 1;
            }
            assert_eq!(hist.iter().sum::<usize>(), 100);
        }
    }

    #[test]
    fn b_shifted_global_indices() {
        assert_eq!(shift_to_global(&[0, 0], 10), vec![0, 10]);
        assert_eq!(shift_to_global(&[3, 7, 1], 8), vec![3, 15, 17]);
        // the five visible entries of the K=16, B=30000 worked example
        let shifted = shift_to_global(&[18189, 8475, 23984], 30_000);
        assert_eq!(shifted, vec![18189, 38475, 83984]);
        let mut codes = vec![0u32; 16];
        codes[14] = 17924;
        codes[15] = 459;
        let shifted = shift_to_global(&codes, 30_000);
        assert_eq!(&shifted[14..], &[437_924, 450_459]);
    }

    #[test]
    fn global_nonzeros_are_increasing_and_bounded() {
        let cfg = CodeConfig::new(50, 6, 13, 3);
        let cb = LabelCodebook::build(cfg).unwrap();
        for i in 0..50 {
            let nz = cb.global_nonzeros(i).unwrap();
            assert!(nz.windows(2).all(|w| w[0] < w[1]));
            assert!(nz.iter().all(|&g| g < cfg.dim() as u64));
        }
        assert!(cb.global_nonzeros(50).is_err());
    }

    #[test]
    fn code_dot_identity_and_range() {
        let cb = LabelCodebook::build(CodeConfig::new(20, 5, 4, 1)).unwrap();
        assert_eq!(cb.code_dot(3, 3).unwrap(), 5);
        assert!(cb.code_dot(0, 20).is_err());
        // brute force via the binary D-dimensional vectors
        for i in 0..20 {
            for j in 0..20 {
                let a = cb.global_nonzeros(i).unwrap();
                let b = cb.global_nonzeros(j).unwrap();
                let brute = a.iter().filter(|x| b.contains(x)).count();
                assert_eq!(cb.code_dot(i, j).unwrap(), brute);
            }
        }
    }

    #[test]
    fn disjoint_codes_have_zero_dot() {
        let cb = LabelCodebook::build(CodeConfig::new(200, 2, 50, 5)).unwrap();
        let found = (1..200).find(|&j| cb.codes_of(0).iter().zip(cb.codes_of(j)).all(|(a, b)| a != b));
        let j = found.expect("some label shares no bucket with label 0");
        assert_eq!(cb.code_dot(0, j).unwrap(), 0);
    }

    #[test]
    fn two_buckets_collide_half_the_time() {
        let cb = LabelCodebook::build(CodeConfig::new(1000, 1, 2, 11)).unwrap();
        let stats = cb.orthogonality_stats(100_000, 3).unwrap();
        assert!((stats.mean_dot - 0.5).abs() < 4.0 * stats.standard_error());
    }

    #[test]
    fn large_b_mean_dot_near_k_over_b() {
        let cb = LabelCodebook::build(CodeConfig::new(1000, 16, 30_000, 2024)).unwrap();
        let stats = cb.orthogonality_stats(100_000, 8).unwrap();
        assert!((stats.expected_mean() - 5.333e-4).abs() < 1e-6);
        assert!(stats.z_score().abs() < 3.0, "{stats:?}");
    }

    #[test]
    fn dot_histogram_is_binomial() {
        let cb = LabelCodebook::build(CodeConfig::new(5000, 8, 100, 77)).unwrap();
        let stats = cb.orthogonality_stats(1_000_000, 1).unwrap();
        let fit = stats.binomial_fit();
        assert!(fit.p_value > 0.001, "{fit:?} {:?}", stats.histogram);
    }

    #[test]
    fn orthogonality_needs_two_labels() {
        let cb = LabelCodebook::build(CodeConfig::new(1, 2, 4, 0)).unwrap();
        assert!(cb.orthogonality_stats(10, 0).is_err());
    }

    #[test]
    fn sparsity_and_collision_rates_differ() {
        let cfg = CodeConfig::new(1, 16, 30_000, 0);
        assert_eq!(cfg.dim(), 480_000);
        assert!((cfg.sparsity_ratio() - 16.0 / 480_000.0).abs() < 1e-15);
        assert!((cfg.expected_dot() - 16.0 / 30_000.0).abs() < 1e-15);
    }
}
