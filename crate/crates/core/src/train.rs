//! OR-target construction and zero-communication training of the K chunk
//! classifiers.
//!
//! Each chunk is trained by exactly one worker that owns its model and
//! optimizer state. Workers share only the read-only corpus and codebook, and
//! within a worker gradients are accumulated sequentially, so the trained
//! parameters do not depend on how many workers run.

use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::{CodeConfig, LabelCodebook, LabelId};
use crate::error::{check_index, Result, SolarError};
use crate::features::{derive_chunk_seed, hash_features, Document, FeatureMode, HashedFeatures};
use crate::hash::derive_seed;
use crate::model::{apply_update, Activations, AdamConfig, AdamState, ChunkModel, Gradients, ModelDims, TargetVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 10,
            batch_size: 1000,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            shuffle_seed: 0,
            init_seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(SolarError::config("epochs, batch_size and workers must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SolarError::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(SolarError::config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Initialization seed of chunk `k`.
    pub fn chunk_init_seed(&self, chunk: usize) -> u64 {
        derive_seed(self.init_seed, chunk as u64)
    }

    /// Batch-order seed of chunk `k` in `epoch`.
    pub fn shuffle_seed_for(&self, chunk: usize, epoch: usize) -> u64 {
        derive_seed(derive_seed(self.shuffle_seed, chunk as u64), epoch as u64)
    }
}

/// Input side of the architecture, shared by every chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub feature_mode: FeatureMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(SolarError::config("feature_dim and hidden_dim must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self, code: &CodeConfig) -> ModelDims {
        ModelDims::new(self.feature_dim, self.hidden_dim, code.buckets_per_chunk)
    }
}

/// The K trained chunk classifiers plus everything needed to rebuild the
/// label side.
#[derive(Debug, Clone, PartialEq)]
pub struct SolarModel {
    pub code: CodeConfig,
    pub arch: ModelConfig,
    pub chunks: Vec<ChunkModel<f32>>,
}

impl SolarModel {
    /// Checks that every chunk agrees with the configs.
    pub fn validate(&self) -> Result<()> {
        self.code.validate()?;
        self.arch.validate()?;
        if self.chunks.len() != self.code.num_chunks {
            return Err(SolarError::Format(format!(
                "model has {} chunks, config says {}",
                self.chunks.len(),
                self.code.num_chunks
            )));
        }
        let dims = self.arch.dims(&self.code);
        for (k, m) in self.chunks.iter().enumerate() {
            if m.chunk != k || m.dims != dims {
                return Err(SolarError::Format(format!("chunk {k}: header disagrees with configuration")));
            }
        }
        Ok(())
    }

    pub fn feature_seed(&self, chunk: usize) -> u64 {
        derive_chunk_seed(self.code.base_seed, chunk)
    }

    pub fn hash_for_chunk(&self, doc: &Document, chunk: usize) -> Result<HashedFeatures> {
        hash_features(doc, self.feature_seed(chunk), self.arch.feature_dim, self.arch.feature_mode)
    }
}

/// Union of the document's label buckets in `chunk`.
pub fn or_target(cb: &LabelCodebook, labels: &[LabelId], chunk: usize) -> Result<TargetVector> {
    if labels.is_empty() {
        return Err(SolarError::EmptyLabels);
    }
    check_index("chunk", chunk, cb.num_chunks())?;
    let mut hot = Vec::with_capacity(labels.len());
    for &l in labels {
        check_index("label", l as usize, cb.num_labels())?;
        hot.push(cb.code(l as usize, chunk));
    }
    Ok(TargetVector::new(chunk, hot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRun {
    pub model: ChunkModel<f32>,
    /// Mean per-document loss of each epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains the classifier of one chunk. Documents without labels are skipped.
pub fn train_chunk(
    chunk: usize,
    dataset: &[Document],
    cb: &LabelCodebook,
    arch: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<ChunkRun> {
    cfg.validate()?;
    arch.validate()?;
    check_index("chunk", chunk, cb.num_chunks())?;

    let feature_seed = derive_chunk_seed(cb.config().base_seed, chunk);
    let mut examples = Vec::with_capacity(dataset.len());
    for doc in dataset.iter().filter(|d| !d.labels.is_empty()) {
        let x = hash_features(doc, feature_seed, arch.feature_dim, arch.feature_mode)?;
        examples.push((x, or_target(cb, &doc.labels, chunk)?));
    }
    if examples.is_empty() {
        return Err(SolarError::config("training set has no labelled documents"));
    }

    let dims = arch.dims(cb.config());
    let mut model = ChunkModel::<f32>::init(chunk, dims, cfg.chunk_init_seed(chunk))?;
    let mut state = AdamState::new(dims);
    let hyper = cfg.adam();
    let mut grads = Gradients::zeros(dims);
    let mut act = Activations::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed_for(chunk, epoch));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, t) = &examples[i];
                batch_loss += model.accumulate_gradients(x, t, &mut act, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(SolarError::NonFinite { chunk, epoch, what: "loss" });
            }
            epoch_loss += batch_loss;
            grads.scale(1.0 / batch.len() as f32);
            apply_update(&mut model, &grads, &mut state, &hyper).map_err(|e| match e {
                SolarError::NonFiniteGradient { .. } => SolarError::NonFinite {
                    chunk,
                    epoch,
                    what: "gradient",
                },
                other => other,
            })?;
        }
        let mean = epoch_loss / examples.len() as f64;
        info!(
            "chunk {chunk} epoch {epoch}: mean loss {mean:.6} ({:.2}s)",
            started.elapsed().as_secs_f64()
        );
        loss_curve.push(mean);
    }
    Ok(ChunkRun { model, loss_curve })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: SolarModel,
    pub loss_curves: Vec<Vec<f64>>,
    pub skipped_unlabelled: usize,
}

/// Trains all K chunks on `cfg.workers` threads. The result does not depend
/// on the worker count.
pub fn train_all(
    dataset: &[Document],
    cb: &LabelCodebook,
    arch: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    let skipped = dataset.iter().filter(|d| d.labels.is_empty()).count();
    if skipped > 0 {
        warn!("skipping {skipped} document(s) without labels");
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| SolarError::config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<Result<ChunkRun>> = pool.install(|| {
        (0..cb.num_chunks())
            .into_par_iter()
            .map(|k| train_chunk(k, dataset, cb, arch, cfg))
            .collect()
    });

    let mut chunks = Vec::with_capacity(runs.len());
    let mut loss_curves = Vec::with_capacity(runs.len());
    let mut failed = Vec::new();
    let mut first_err = None;
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                chunks.push(run.model);
                loss_curves.push(run.loss_curve);
            }
            Err(e) => {
                failed.push(k);
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(first) = first_err {
        return Err(SolarError::ChunkFailures {
            chunks: failed,
            first: Box::new(first),
        });
    }
    Ok(TrainOutcome {
        model: SolarModel {
            code: *cb.config(),
            arch: *arch,
            chunks,
        },
        loss_curves,
        skipped_unlabelled: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codebook() -> LabelCodebook {
        LabelCodebook::build(CodeConfig::new(40, 3, 8, 5)).unwrap()
    }

    #[test]
    fn or_target_cases() {
        let cb = codebook();
        let single = or_target(&cb, &[7], 1).unwrap();
        assert_eq!(single.hot_buckets, vec![cb.code(7, 1)]);

        let (a, b) = (0..40)
            .flat_map(|i| (i + 1..40).map(move |j| (i, j)))
            .find(|&(i, j)| cb.code(i, 0) == cb.code(j, 0))
            .unwrap();
        let shared = or_target(&cb, &[a as u32, b as u32], 0).unwrap();
        assert_eq!(shared.hot_buckets.len(), 1);

        let (c, d) = (0..40)
            .flat_map(|i| (i + 1..40).map(move |j| (i, j)))
            .find(|&(i, j)| cb.code(i, 2) != cb.code(j, 2))
            .unwrap();
        let mut want = vec![cb.code(c, 2), cb.code(d, 2)];
        want.sort_unstable();
        assert_eq!(or_target(&cb, &[c as u32, d as u32], 2).unwrap().hot_buckets, want);

        assert!(matches!(or_target(&cb, &[], 0), Err(SolarError::EmptyLabels)));
        assert!(or_target(&cb, &[40], 0).is_err());
    }

    #[test]
    fn adding_a_label_never_removes_a_bucket() {
        let cb = codebook();
        for k in 0..3 {
            let base = or_target(&cb, &[1, 9, 20], k).unwrap();
            let more = or_target(&cb, &[1, 9, 20, 33], k).unwrap();
            assert!(base.hot_buckets.iter().all(|b| more.is_hot(*b)));
        }
    }

    fn tiny_arch() -> ModelConfig {
        ModelConfig {
            feature_dim: 64,
            hidden_dim: 16,
            feature_mode: FeatureMode::Counts,
        }
    }

    #[test]
    fn overfits_a_single_document() {
        let cb = LabelCodebook::build(CodeConfig::new(10, 2, 16, 3)).unwrap();
        let doc = Document::new(0, vec![(1, 1.0), (2, 2.0), (3, 1.0)], vec![4]);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let run = train_chunk(0, std::slice::from_ref(&doc), &cb, &tiny_arch(), &cfg).unwrap();
        assert_eq!(run.loss_curve.len(), 200);
        let x = hash_features(&doc, derive_chunk_seed(3, 0), 64, FeatureMode::Counts).unwrap();
        let p = run.model.forward(&x).unwrap();
        let hot = cb.code(4, 0) as usize;
        assert!(p[hot] > 0.9, "{}", p[hot]);
        let others: f32 = p.iter().enumerate().filter(|(b, _)| *b != hot).map(|(_, v)| v).sum();
        assert!(others / 15.0 < 0.2);
    }

    #[test]
    fn first_epoch_starts_near_log_two() {
        let cb = LabelCodebook::build(CodeConfig::new(10, 1, 32, 3)).unwrap();
        let docs: Vec<Document> = (0..4).map(|i| Document::new(i, vec![(i, 1.0)], vec![i as u32])).collect();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = train_chunk(0, &docs, &cb, &tiny_arch(), &cfg).unwrap();
        assert!((run.loss_curve[0] - 2f64.ln()).abs() < 0.05, "{:?}", run.loss_curve);
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let cb = LabelCodebook::build(CodeConfig::new(10, 1, 8, 3)).unwrap();
        let docs: Vec<Document> = (0..8).map(|i| Document::new(i, vec![(i, 1e30)], vec![i as u32])).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            lr: 1e30,
            ..TrainConfig::default()
        };
        let err = train_chunk(0, &docs, &cb, &tiny_arch(), &cfg).unwrap_err();
        assert!(matches!(err, SolarError::NonFinite { chunk: 0, .. }), "{err}");
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cb = LabelCodebook::build(CodeConfig::new(30, 4, 8, 11)).unwrap();
        let docs: Vec<Document> = (0..60u64)
            .map(|i| Document::new(i, vec![(i % 17, 1.0), (100 + i % 5, 2.0)], vec![(i % 30) as u32]))
            .collect();
        let mut cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let serial = train_all(&docs, &cb, &tiny_arch(), &cfg).unwrap();
        cfg.workers = 4;
        let parallel = train_all(&docs, &cb, &tiny_arch(), &cfg).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.model.chunks.len(), 4);
    }

    #[test]
    fn unlabelled_documents_are_skipped() {
        let cb = LabelCodebook::build(CodeConfig::new(5, 1, 4, 0)).unwrap();
        let docs = vec![
            Document::new(0, vec![(1, 1.0)], vec![1]),
            Document::new(1, vec![(2, 1.0)], vec![]),
        ];
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let out = train_all(&docs, &cb, &tiny_arch(), &cfg).unwrap();
        assert_eq!(out.skipped_unlabelled, 1);
        assert!(train_all(&docs[1..], &cb, &tiny_arch(), &cfg).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            workers: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
