//! Query-time pipeline: K probability vectors, top-m buckets per chunk,
//! inverted-index candidate union, score aggregation and top-k ranking.
//!
//! Ties are broken by the lower index everywhere (buckets and labels), so a
//! prediction is a deterministic function of the model and the document.

use std::cmp::Ordering;
use std::ops::AddAssign;

use rayon::prelude::*;

use crate::codes::{LabelCodebook, LabelId};
use crate::error::{check_index, Result, SolarError};
use crate::features::Document;
use crate::index::InvertedIndex;
use crate::train::SolarModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum InferMode {
    /// Top-m sparsification and inverted-index shortlisting.
    #[default]
    Sparse,
    /// Score every label (no shortlist).
    Full,
}

impl std::str::FromStr for InferMode {
    type Err = SolarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(InferMode::Sparse),
            "full" => Ok(InferMode::Full),
            other => Err(SolarError::config(format!("unknown inference mode {other:?}"))),
        }
    }
}

/// Which probabilities contribute to a candidate's score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// The candidate's bucket probability from every chunk.
    #[default]
    AllChunks,
    /// Only chunks where the candidate's bucket survived top-m.
    RetrievedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferParams {
    pub m: usize,
    pub top_k: usize,
    pub mode: InferMode,
    pub aggregation: Aggregation,
    /// Run the K forward passes on the rayon pool.
    pub fan_out: bool,
}

impl InferParams {
    pub fn sparse(m: usize, top_k: usize) -> Self {
        Self {
            m,
            top_k,
            mode: InferMode::Sparse,
            aggregation: Aggregation::AllChunks,
            fan_out: false,
        }
    }

    pub fn full(top_k: usize) -> Self {
        Self {
            m: 1,
            top_k,
            mode: InferMode::Full,
            aggregation: Aggregation::AllChunks,
            fan_out: false,
        }
    }

    pub fn validate(&self, buckets_per_chunk: usize) -> Result<()> {
        if self.top_k == 0 {
            return Err(SolarError::config("top_k must be at least 1"));
        }
        if self.mode == InferMode::Sparse && (self.m == 0 || self.m > buckets_per_chunk) {
            return Err(SolarError::config(format!(
                "m must lie in 1..={buckets_per_chunk}, got {}",
                self.m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Bucket probabilities computed (K * B per query).
    pub buckets_scored: u64,
    /// Postings visited, counting a label once per chunk that returned it.
    pub candidates_retrieved: u64,
    pub unique_candidates: u64,
    /// Probability additions performed during aggregation.
    pub scores_summed: u64,
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.buckets_scored += rhs.buckets_scored;
        self.candidates_retrieved += rhs.candidates_retrieved;
        self.unique_candidates += rhs.unique_candidates;
        self.scores_summed += rhs.scores_summed;
    }
}

/// The sparsified query: `m` (bucket, probability) pairs per chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySparseEmbedding {
    pub per_chunk: Vec<Vec<(u32, f32)>>,
}

impl QuerySparseEmbedding {
    /// Non-zero coordinates in the global `K * B` space, ascending.
    pub fn global_indices(&self, buckets_per_chunk: usize) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .per_chunk
            .iter()
            .enumerate()
            .flat_map(|(k, top)| top.iter().map(move |&(b, _)| (k * buckets_per_chunk) as u64 + u64::from(b)))
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ranked: Vec<(LabelId, f32)>,
    pub counters: OpCounters,
}

impl Prediction {
    pub fn labels(&self) -> Vec<LabelId> {
        self.ranked.iter().map(|r| r.0).collect()
    }
}

#[inline]
fn by_score_then_id(a: &(u32, f32), b: &(u32, f32)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `m` largest probabilities, descending, lower bucket first on ties.
pub fn sparsify_topm(probs: &[f32], m: usize) -> Result<Vec<(u32, f32)>> {
    if m > probs.len() {
        return Err(SolarError::config(format!("m = {m} exceeds B = {}", probs.len())));
    }
    let mut all: Vec<(u32, f32)> = probs.iter().enumerate().map(|(b, &p)| (b as u32, p)).collect();
    if m == 0 {
        return Ok(Vec::new());
    }
    if m < all.len() {
        all.select_nth_unstable_by(m - 1, by_score_then_id);
        all.truncate(m);
    }
    all.sort_unstable_by(by_score_then_id);
    Ok(all)
}

/// Sorted union of the postings of the selected buckets.
pub fn retrieve_candidates(idx: &InvertedIndex, topm: &[Vec<(u32, f32)>]) -> Result<(Vec<LabelId>, OpCounters)> {
    if topm.len() > idx.config().num_chunks {
        return Err(SolarError::DimensionMismatch {
            expected: idx.config().num_chunks,
            actual: topm.len(),
        });
    }
    let b = idx.config().buckets_per_chunk;
    let mut candidates = Vec::new();
    for (k, top) in topm.iter().enumerate() {
        for &(bucket, _) in top {
            check_index("bucket", bucket as usize, b)?;
            candidates.extend_from_slice(idx.postings(k, bucket as usize));
        }
    }
    let retrieved = candidates.len() as u64;
    candidates.sort_unstable();
    candidates.dedup();
    let counters = OpCounters {
        buckets_scored: 0,
        candidates_retrieved: retrieved,
        unique_candidates: candidates.len() as u64,
        scores_summed: 0,
    };
    Ok((candidates, counters))
}

/// `score(l) = sum_k probs[k][code(l, k)]`, summed in chunk order.
pub fn aggregate_scores(candidates: &[LabelId], probs: &[Vec<f32>], cb: &LabelCodebook) -> Vec<(LabelId, f32)> {
    candidates
        .iter()
        .map(|&l| {
            let score = cb
                .codes_of(l as usize)
                .iter()
                .zip(probs)
                .fold(0f32, |acc, (&b, p)| acc + p[b as usize]);
            (l, score)
        })
        .collect()
}

/// Like [`aggregate_scores`] but only chunks whose top-m kept the bucket
/// contribute.
pub fn aggregate_retrieved(
    candidates: &[LabelId],
    topm: &[Vec<(u32, f32)>],
    cb: &LabelCodebook,
) -> Vec<(LabelId, f32)> {
    let b = cb.buckets_per_chunk();
    let kept: Vec<Vec<Option<f32>>> = topm
        .iter()
        .map(|top| {
            let mut dense = vec![None; b];
            for &(bucket, p) in top {
                dense[bucket as usize] = Some(p);
            }
            dense
        })
        .collect();
    candidates
        .iter()
        .map(|&l| {
            let score = cb
                .codes_of(l as usize)
                .iter()
                .zip(&kept)
                .fold(0f32, |acc, (&bucket, dense)| acc + dense[bucket as usize].unwrap_or(0.0));
            (l, score)
        })
        .collect()
}

/// Sorts by descending score (lower label on ties) and keeps `top_k`.
pub fn rank(mut scored: Vec<(LabelId, f32)>, top_k: usize) -> Vec<(LabelId, f32)> {
    if top_k < scored.len() {
        scored.select_nth_unstable_by(top_k - 1, by_score_then_id);
        scored.truncate(top_k);
    }
    scored.sort_unstable_by(by_score_then_id);
    scored
}

/// A trained model with its rebuilt codebook and inverted index.
#[derive(Debug, Clone)]
pub struct Engine {
    pub model: SolarModel,
    pub codebook: LabelCodebook,
    pub index: InvertedIndex,
}

impl Engine {
    pub fn new(model: SolarModel) -> Result<Self> {
        model.validate()?;
        let codebook = LabelCodebook::build(model.code)?;
        let index = InvertedIndex::build(&codebook);
        Ok(Self { model, codebook, index })
    }

    /// Uses a previously persisted index after checking it against the codebook.
    pub fn with_index(model: SolarModel, index: InvertedIndex) -> Result<Self> {
        model.validate()?;
        let codebook = LabelCodebook::build(model.code)?;
        if !index.is_consistent_with(&codebook) {
            return Err(SolarError::Format("persisted index does not match the codebook".into()));
        }
        Ok(Self { model, codebook, index })
    }

    pub fn num_labels(&self) -> usize {
        self.codebook.num_labels()
    }

    /// The K per-chunk probability vectors.
    pub fn chunk_probabilities(&self, doc: &Document, fan_out: bool) -> Result<Vec<Vec<f32>>> {
        let one = |k: usize| -> Result<Vec<f32>> {
            let x = self.model.hash_for_chunk(doc, k)?;
            self.model.chunks[k].forward(&x)
        };
        let k = self.model.chunks.len();
        if fan_out {
            (0..k).into_par_iter().map(one).collect()
        } else {
            (0..k).map(one).collect()
        }
    }

    pub fn query_embedding(&self, probs: &[Vec<f32>], m: usize) -> Result<QuerySparseEmbedding> {
        let per_chunk = probs.iter().map(|p| sparsify_topm(p, m)).collect::<Result<_>>()?;
        Ok(QuerySparseEmbedding { per_chunk })
    }

    pub fn predict(&self, doc: &Document, params: &InferParams) -> Result<Prediction> {
        params.validate(self.codebook.buckets_per_chunk())?;
        if params.mode == InferMode::Full {
            return self.predict_full_with(doc, params.top_k, params.fan_out);
        }
        let probs = self.chunk_probabilities(doc, params.fan_out)?;
        let embedding = self.query_embedding(&probs, params.m)?;
        let (candidates, mut counters) = retrieve_candidates(&self.index, &embedding.per_chunk)?;
        let scored = match params.aggregation {
            Aggregation::AllChunks => aggregate_scores(&candidates, &probs, &self.codebook),
            Aggregation::RetrievedOnly => aggregate_retrieved(&candidates, &embedding.per_chunk, &self.codebook),
        };
        counters.buckets_scored = (probs.len() * self.codebook.buckets_per_chunk()) as u64;
        counters.scores_summed = counters.unique_candidates * probs.len() as u64;
        Ok(Prediction {
            ranked: rank(scored, params.top_k),
            counters,
        })
    }

    /// Predicts a batch on the rayon pool; results keep input order.
    pub fn predict_batch(&self, docs: &[Document], params: &InferParams) -> Result<Vec<Prediction>> {
        docs.par_iter().map(|d| self.predict(d, params)).collect()
    }

    /// Exhaustive scoring of every label; the reference for sparse mode.
    pub fn predict_full(&self, doc: &Document, top_k: usize) -> Result<Prediction> {
        self.predict_full_with(doc, top_k, false)
    }

    fn predict_full_with(&self, doc: &Document, top_k: usize, fan_out: bool) -> Result<Prediction> {
        if top_k == 0 {
            return Err(SolarError::config("top_k must be at least 1"));
        }
        let probs = self.chunk_probabilities(doc, fan_out)?;
        let all: Vec<LabelId> = (0..self.num_labels() as LabelId).collect();
        let scored = aggregate_scores(&all, &probs, &self.codebook);
        let n = all.len() as u64;
        let k = probs.len() as u64;
        Ok(Prediction {
            ranked: rank(scored, top_k),
            counters: OpCounters {
                buckets_scored: k * self.codebook.buckets_per_chunk() as u64,
                candidates_retrieved: n,
                unique_candidates: n,
                scores_summed: n * k,
            },
        })
    }
}

/// Expected shortlist size with balanced buckets, `K * m * N / B`.
pub fn expected_candidates(n: usize, b: usize, k: usize, m: usize) -> f64 {
    (k * m) as f64 * n as f64 / b as f64
}

/// Operation-count model of sparse inference:
/// `B log2 m + KmN/B + (KmN/B) log2 5` (top-m selection, union, top-5 sort).
pub fn op_count_bound(n: usize, b: usize, k: usize, m: usize) -> f64 {
    let cand = expected_candidates(n, b, k, m);
    b as f64 * (m as f64).log2() + cand + cand * 5f64.log2()
}

/// Operation-count model of dense retrieval with `d = m * K`:
/// `N m K + N log2 5`.
pub fn dense_op_count(n: usize, m: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (m * k) as f64 + n * 5f64.log2()
}
