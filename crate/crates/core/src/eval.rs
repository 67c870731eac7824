//! Ranking metrics and test-set evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::codes::LabelId;
use crate::error::{Result, SolarError};
use crate::features::Document;
use crate::infer::{Engine, InferParams, OpCounters};

fn hits(pred: &[LabelId], truth: &[LabelId], k: usize) -> usize {
    pred.iter().take(k).filter(|l| truth.binary_search(l).is_ok()).count()
}

/// `|top-k(pred) ∩ truth| / k`. `truth` must be sorted. `None` if `truth` is
/// empty (the query is skipped).
pub fn precision_at_k(pred: &[LabelId], truth: &[LabelId], k: usize) -> Option<f64> {
    assert!(k >= 1, "k must be at least 1");
    if truth.is_empty() {
        return None;
    }
    Some(hits(pred, truth, k) as f64 / k as f64)
}

/// `|top-k(pred) ∩ truth| / |truth|`. `truth` must be sorted.
pub fn recall_at_k(pred: &[LabelId], truth: &[LabelId], k: usize) -> Option<f64> {
    assert!(k >= 1, "k must be at least 1");
    if truth.is_empty() {
        return None;
    }
    Some(hits(pred, truth, k) as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanCounters {
    pub buckets_scored: f64,
    pub candidates_retrieved: f64,
    pub unique_candidates: f64,
    pub scores_summed: f64,
}

impl MeanCounters {
    fn from_total(total: OpCounters, n: usize) -> Self {
        let n = n as f64;
        Self {
            buckets_scored: total.buckets_scored as f64 / n,
            candidates_retrieved: total.candidates_retrieved as f64 / n,
            unique_candidates: total.unique_candidates as f64 / n,
            scores_summed: total.scores_summed as f64 / n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

impl LatencyStats {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        ms.sort_by(f64::total_cmp);
        let pct = |q: f64| ms[((q * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pct(0.50),
            p99_ms: pct(0.99),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
    pub skipped_queries: usize,
    pub mean_counters: MeanCounters,
    pub latency: LatencyStats,
}

impl MetricReport {
    /// Flat `key = value` block.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.precision_at {
            let _ = writeln!(out, "P@{k} = {v:.6}");
        }
        for (k, v) in &self.recall_at {
            let _ = writeln!(out, "Rec@{k} = {v:.6}");
        }
        let c = &self.mean_counters;
        let _ = writeln!(out, "num_queries = {}", self.num_queries);
        let _ = writeln!(out, "skipped_queries = {}", self.skipped_queries);
        let _ = writeln!(out, "mean_buckets_scored = {:.3}", c.buckets_scored);
        let _ = writeln!(out, "mean_candidates_retrieved = {:.3}", c.candidates_retrieved);
        let _ = writeln!(out, "mean_unique_candidates = {:.3}", c.unique_candidates);
        let _ = writeln!(out, "mean_scores_summed = {:.3}", c.scores_summed);
        let _ = writeln!(out, "ms_per_point = {:.6}", self.latency.mean_ms);
        let _ = writeln!(out, "p50_ms = {:.6}", self.latency.p50_ms);
        let _ = writeln!(out, "p99_ms = {:.6}", self.latency.p99_ms);
        out
    }

    /// Tab-separated column names matching [`tsv_row`](Self::tsv_row).
    pub fn tsv_header(&self) -> String {
        let mut cols: Vec<String> = self.precision_at.keys().map(|k| format!("P@{k}")).collect();
        cols.extend(self.recall_at.keys().map(|k| format!("Rec@{k}")));
        cols.extend(
            ["queries", "mean_unique_candidates", "ms_per_point", "p50_ms", "p99_ms"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.join("\t")
    }

    pub fn tsv_row(&self) -> String {
        let mut cols: Vec<String> = self.precision_at.values().map(|v| format!("{v:.6}")).collect();
        cols.extend(self.recall_at.values().map(|v| format!("{v:.6}")));
        cols.push(self.num_queries.to_string());
        cols.push(format!("{:.3}", self.mean_counters.unique_candidates));
        cols.push(format!("{:.6}", self.latency.mean_ms));
        cols.push(format!("{:.6}", self.latency.p50_ms));
        cols.push(format!("{:.6}", self.latency.p99_ms));
        cols.join("\t")
    }
}

/// Macro-averaged metrics over the test set. Queries with no ground truth
/// are skipped and counted; latency covers `predict` only.
pub fn evaluate(
    engine: &Engine,
    testset: &[Document],
    params: &InferParams,
    ks_precision: &[usize],
    ks_recall: &[usize],
) -> Result<MetricReport> {
    if testset.is_empty() {
        return Err(SolarError::config("evaluation set is empty"));
    }
    if ks_precision.iter().chain(ks_recall).any(|&k| k == 0) {
        return Err(SolarError::config("metric cut-offs must be at least 1"));
    }
    let depth = ks_precision
        .iter()
        .chain(ks_recall)
        .copied()
        .max()
        .unwrap_or(1)
        .max(params.top_k);
    let params = InferParams { top_k: depth, ..*params };
    params.validate(engine.codebook.buckets_per_chunk())?;

    let queries: Vec<&Document> = testset.iter().filter(|d| !d.labels.is_empty()).collect();
    let skipped = testset.len() - queries.len();
    if queries.is_empty() {
        return Err(SolarError::NoQueries { skipped });
    }

    let results: Vec<Result<(Vec<LabelId>, OpCounters, f64)>> = queries
        .par_iter()
        .map(|doc| {
            let started = Instant::now();
            let pred = engine.predict(doc, &params)?;
            let ms = started.elapsed().as_secs_f64() * 1e3;
            Ok((pred.labels(), pred.counters, ms))
        })
        .collect();

    let mut p_sums: BTreeMap<usize, f64> = ks_precision.iter().map(|&k| (k, 0.0)).collect();
    let mut r_sums: BTreeMap<usize, f64> = ks_recall.iter().map(|&k| (k, 0.0)).collect();
    let mut total = OpCounters::default();
    let mut latencies = Vec::with_capacity(queries.len());
    for (doc, res) in queries.iter().zip(results) {
        let (pred, counters, ms) = res?;
        for (&k, sum) in p_sums.iter_mut() {
            *sum += precision_at_k(&pred, &doc.labels, k).expect("non-empty truth");
        }
        for (&k, sum) in r_sums.iter_mut() {
            *sum += recall_at_k(&pred, &doc.labels, k).expect("non-empty truth");
        }
        total += counters;
        latencies.push(ms);
    }
    let n = queries.len() as f64;
    Ok(MetricReport {
        precision_at: p_sums.into_iter().map(|(k, s)| (k, s / n)).collect(),
        recall_at: r_sums.into_iter().map(|(k, s)| (k, s / n)).collect(),
        num_queries: queries.len(),
        skipped_queries: skipped,
        mean_counters: MeanCounters::from_total(total, queries.len()),
        latency: LatencyStats::from_samples(latencies),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precision_cases() {
        assert_eq!(precision_at_k(&[3, 1, 2], &[1, 2, 3], 3), Some(1.0));
        assert_eq!(precision_at_k(&[4, 5], &[1, 2], 2), Some(0.0));
        // pred = [a, b, c], truth = {a, c}
        assert_eq!(precision_at_k(&[10, 11, 12], &[10, 12], 3), Some(2.0 / 3.0));
        // fewer predictions than k still divide by k
        assert_eq!(precision_at_k(&[1], &[1], 5), Some(0.2));
        assert_eq!(precision_at_k(&[1], &[], 1), None);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&[3, 9, 1], &[1, 3], 3), Some(1.0));
        assert_eq!(recall_at_k(&[7, 8], &[1, 3], 2), Some(0.0));
        // pred = [a, b], truth = {a, c, d}
        assert_eq!(recall_at_k(&[10, 11], &[10, 12, 13], 2), Some(1.0 / 3.0));
        assert_eq!(recall_at_k(&[1], &[], 1), None);
    }

    #[test]
    fn latency_percentiles() {
        let stats = LatencyStats::from_samples((1..=100).map(f64::from).collect());
        assert_eq!(stats.p50_ms, 50.0);
        assert_eq!(stats.p99_ms, 99.0);
        assert_eq!(stats.mean_ms, 50.5);
    }

    proptest! {
        #[test]
        fn metric_bounds_and_monotonicity(pred in proptest::collection::vec(0u32..30, 0..20),
                                          truth in proptest::collection::btree_set(0u32..30, 1..10)) {
            let mut seen = std::collections::HashSet::new();
            let pred: Vec<u32> = pred.into_iter().filter(|l| seen.insert(*l)).collect();
            let truth: Vec<u32> = truth.into_iter().collect();
            let mut prev_recall = 0.0;
            let mut prev_hits = 0.0;
            for k in 1..25 {
                let p = precision_at_k(&pred, &truth, k).unwrap();
                let r = recall_at_k(&pred, &truth, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
                prop_assert!(r >= prev_recall);
                prop_assert!(p * k as f64 >= prev_hits - 1e-12);
                prev_recall = r;
                prev_hits = p * k as f64;
            }
        }
    }
}
