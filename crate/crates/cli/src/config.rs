//! Training configuration file.
//!
//! Flat `key = value` lines; `#` comments. Relative paths are resolved
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use solar_core::{CodeConfig, FeatureMode, KeyValues, ModelConfig, Result, SolarError, TrainConfig};

/// `(key, default, description)` for every recognised key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("corpus", "(required)", "training corpus in the XML-repo text format"),
    ("test_corpus", "(none)", "held-out corpus used by `sweep`"),
    ("output_dir", "model", "directory receiving manifest.txt and chunk blobs"),
    ("num_labels", "(corpus header)", "label count N"),
    ("num_chunks", "4", "K; large-scale runs use 16"),
    ("buckets_per_chunk", "256", "B; large-scale runs use 30000"),
    ("base_seed", "0", "seed of the label codes and feature hashes"),
    ("feature_dim", "8192", "hashed input dimension F"),
    ("hidden_dim", "64", "hidden layer width H"),
    ("feature_mode", "counts", "counts | binary"),
    ("epochs", "10", "passes over the corpus"),
    ("batch_size", "1000", "documents per Adam step"),
    ("lr", "0.001", "Adam learning rate"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("adam_eps", "1e-8", "Adam denominator epsilon"),
    ("shuffle_seed", "0", "seed of the per-epoch batch order"),
    ("init_seed", "0", "seed of the weight initialisation"),
    ("workers", "1", "training threads; SOLAR_WORKERS overrides"),
    ("write_index", "false", "also persist the inverted index"),
];

pub const WORKERS_ENV: &str = "SOLAR_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub corpus: PathBuf,
    pub test_corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub num_labels: Option<usize>,
    pub num_chunks: usize,
    pub buckets_per_chunk: usize,
    pub base_seed: u64,
    pub arch: ModelConfig,
    pub train: TrainConfig,
    pub write_index: bool,
}

impl TrainSettings {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_key_values(kv: &KeyValues, base: &Path) -> Result<Self> {
        let allowed: Vec<&str> = KEYS.iter().map(|k| k.0).collect();
        kv.reject_unknown(&allowed)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let defaults = TrainConfig::default();
        let mut train = TrainConfig {
            epochs: kv.get_or("epochs", defaults.epochs)?,
            batch_size: kv.get_or("batch_size", defaults.batch_size)?,
            lr: kv.get_or("lr", defaults.lr)?,
            beta1: kv.get_or("beta1", defaults.beta1)?,
            beta2: kv.get_or("beta2", defaults.beta2)?,
            adam_eps: kv.get_or("adam_eps", defaults.adam_eps)?,
            shuffle_seed: kv.get_or("shuffle_seed", 0)?,
            init_seed: kv.get_or("init_seed", 0)?,
            workers: kv.get_or("workers", 1)?,
        };
        if let Some(w) = workers_override()? {
            train.workers = w;
        }
        train.validate()?;
        let arch = ModelConfig {
            feature_dim: kv.get_or("feature_dim", 8192)?,
            hidden_dim: kv.get_or("hidden_dim", 64)?,
            feature_mode: kv.get_or("feature_mode", FeatureMode::Counts)?,
        };
        arch.validate()?;
        let settings = Self {
            corpus: resolve(kv.require::<PathBuf>("corpus")?),
            test_corpus: kv.get::<PathBuf>("test_corpus")?.map(resolve),
            output_dir: resolve(kv.get_or("output_dir", PathBuf::from("model"))?),
            num_labels: kv.get("num_labels")?,
            num_chunks: kv.get_or("num_chunks", 4)?,
            buckets_per_chunk: kv.get_or("buckets_per_chunk", 256)?,
            base_seed: kv.get_or("base_seed", 0)?,
            arch,
            train,
            write_index: kv.get_or("write_index", false)?,
        };
        settings.code(settings.num_labels.unwrap_or(1))?;
        Ok(settings)
    }

    /// Code configuration for a corpus with `header_labels` labels.
    pub fn code(&self, header_labels: usize) -> Result<CodeConfig> {
        let n = self.num_labels.unwrap_or(header_labels);
        if n < header_labels {
            return Err(SolarError::InvalidConfig(format!(
                "num_labels = {n} but the corpus declares {header_labels} labels"
            )));
        }
        let code = CodeConfig::new(n, self.num_chunks, self.buckets_per_chunk, self.base_seed);
        code.validate()?;
        Ok(code)
    }
}

/// Worker count from the environment, if set.
pub fn workers_override() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(SolarError::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Documented template listing every key and its default.
pub fn template() -> String {
    let mut out = String::from("# solar training configuration\n");
    for (key, default, help) in KEYS {
        out.push_str(&format!("# {key}: {help} (default {default})\n"));
    }
    out.push_str("corpus = train.txt\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<TrainSettings> {
        TrainSettings::from_key_values(&KeyValues::parse(text, "cfg").unwrap(), Path::new("/base"))
    }

    #[test]
    fn defaults_and_paths() {
        let s = parse("corpus = data/train.txt\n").unwrap();
        assert_eq!(s.corpus, PathBuf::from("/base/data/train.txt"));
        assert_eq!(s.output_dir, PathBuf::from("/base/model"));
        assert_eq!(s.num_chunks, 4);
        assert_eq!(s.train.batch_size, 1000);
        assert_eq!(s.code(100).unwrap().num_labels, 100);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse("").is_err());
        assert!(parse("corpus = a\nnum_chunks = 0\n").is_err());
        assert!(parse("corpus = a\nbogus = 1\n").is_err());
        assert!(parse("corpus = a\nfeature_mode = tfidf\n").is_err());
        assert!(parse("corpus = a\nnum_labels = 5\n").unwrap().code(6).is_err());
    }

    #[test]
    fn template_parses() {
        assert!(parse(&template()).is_ok());
    }
}
