//! On-disk model directory: a flat text manifest plus one blob per chunk.
//!
//! Blobs are referenced by path relative to the manifest and by SHA-256.
//! The codebook is not stored; it is rebuilt from the recorded seeds.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codes::CodeConfig;
use crate::error::{Result, SolarError};
use crate::features::FeatureMode;
use crate::index::InvertedIndex;
use crate::infer::Engine;
use crate::kv::KeyValues;
use crate::model::{sha256_hex, ChunkModel};
use crate::train::{ModelConfig, SolarModel, TrainConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const INDEX_FILE: &str = "index.bin";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub code: CodeConfig,
    pub arch: ModelConfig,
    pub train: TrainConfig,
    pub chunks: Vec<BlobRef>,
    pub index: Option<BlobRef>,
    pub created_unix: u64,
}

impl Manifest {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("format_version", self.format_version);
        kv.set("created_unix", self.created_unix);
        kv.set("num_labels", self.code.num_labels);
        kv.set("num_chunks", self.code.num_chunks);
        kv.set("buckets_per_chunk", self.code.buckets_per_chunk);
        kv.set("base_seed", self.code.base_seed);
        kv.set("feature_dim", self.arch.feature_dim);
        kv.set("hidden_dim", self.arch.hidden_dim);
        kv.set("feature_mode", self.arch.feature_mode);
        let t = &self.train;
        kv.set("epochs", t.epochs);
        kv.set("batch_size", t.batch_size);
        kv.set("lr", t.lr);
        kv.set("beta1", t.beta1);
        kv.set("beta2", t.beta2);
        kv.set("adam_eps", t.adam_eps);
        kv.set("shuffle_seed", t.shuffle_seed);
        kv.set("init_seed", t.init_seed);
        kv.set("workers", t.workers);
        let paths: Vec<&str> = self.chunks.iter().map(|b| b.path.as_str()).collect();
        let sums: Vec<&str> = self.chunks.iter().map(|b| b.sha256.as_str()).collect();
        kv.set_list("chunk_files", &paths);
        kv.set_list("chunk_sha256", &sums);
        if let Some(idx) = &self.index {
            kv.set("index_file", &idx.path);
            kv.set("index_sha256", &idx.sha256);
        }
        kv
    }

    pub fn render(&self) -> String {
        format!("# solar model manifest\n{}", self.to_key_values().render())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let format_version: u32 = kv.require("format_version")?;
        if format_version != MANIFEST_VERSION {
            return Err(SolarError::Format(format!(
                "{}: manifest version {format_version}, this build reads version {MANIFEST_VERSION}",
                kv.source().display()
            )));
        }
        let code = CodeConfig::new(
            kv.require("num_labels")?,
            kv.require("num_chunks")?,
            kv.require("buckets_per_chunk")?,
            kv.require("base_seed")?,
        );
        let arch = ModelConfig {
            feature_dim: kv.require("feature_dim")?,
            hidden_dim: kv.require("hidden_dim")?,
            feature_mode: kv.require::<FeatureMode>("feature_mode")?,
        };
        let train = TrainConfig {
            epochs: kv.require("epochs")?,
            batch_size: kv.require("batch_size")?,
            lr: kv.require("lr")?,
            beta1: kv.require("beta1")?,
            beta2: kv.require("beta2")?,
            adam_eps: kv.require("adam_eps")?,
            shuffle_seed: kv.require("shuffle_seed")?,
            init_seed: kv.require("init_seed")?,
            workers: kv.require("workers")?,
        };
        let paths: Vec<String> = kv.get_list("chunk_files")?.unwrap_or_default();
        let sums: Vec<String> = kv.get_list("chunk_sha256")?.unwrap_or_default();
        if paths.len() != code.num_chunks || sums.len() != code.num_chunks {
            return Err(SolarError::Format(format!(
                "{}: expected {} chunk files and checksums, found {} and {}",
                kv.source().display(),
                code.num_chunks,
                paths.len(),
                sums.len()
            )));
        }
        let chunks = paths
            .into_iter()
            .zip(sums)
            .map(|(path, sha256)| BlobRef { path, sha256 })
            .collect();
        let index = match (kv.get::<String>("index_file")?, kv.get::<String>("index_sha256")?) {
            (Some(path), Some(sha256)) => Some(BlobRef { path, sha256 }),
            (None, None) => None,
            _ => return Err(SolarError::Format("index_file and index_sha256 must appear together".into())),
        };
        Ok(Self {
            format_version,
            code,
            arch,
            train,
            chunks,
            index,
            created_unix: kv.get_or("created_unix", 0)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct SaveOptions {
    /// Recorded creation time; fix it to make the manifest reproducible.
    pub created_unix: u64,
    pub write_index: bool,
}

impl Default for SaveOptions {
    fn default() -> Self {
        Self {
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            write_index: false,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| SolarError::io(path, e))
}

/// Writes blobs and the manifest into `dir`; returns the manifest path.
pub fn save_model(dir: impl AsRef<Path>, model: &SolarModel, train: &TrainConfig, opts: &SaveOptions) -> Result<PathBuf> {
    model.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SolarError::io(dir, e))?;
    let mut chunks = Vec::with_capacity(model.chunks.len());
    for m in &model.chunks {
        let name = format!("chunk_{:03}.bin", m.chunk);
        let blob = m.to_blob();
        write_file(&dir.join(&name), &blob)?;
        chunks.push(BlobRef {
            path: name,
            sha256: sha256_hex(&blob),
        });
    }
    let index = if opts.write_index {
        let cb = crate::codes::LabelCodebook::build(model.code)?;
        let mut bytes = Vec::new();
        InvertedIndex::build(&cb)
            .write_to(&mut bytes)
            .map_err(|e| SolarError::io(dir.join(INDEX_FILE), e))?;
        write_file(&dir.join(INDEX_FILE), &bytes)?;
        Some(BlobRef {
            path: INDEX_FILE.to_string(),
            sha256: sha256_hex(&bytes),
        })
    } else {
        None
    };
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        code: model.code,
        arch: model.arch,
        train: *train,
        chunks,
        index,
        created_unix: opts.created_unix,
    };
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, manifest.render().as_bytes())?;
    Ok(path)
}

/// Reads a referenced file and checks its digest.
pub fn read_checked(base: &Path, blob: &BlobRef) -> Result<Vec<u8>> {
    let path = base.join(&blob.path);
    let bytes = fs::read(&path).map_err(|e| SolarError::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&blob.sha256) {
        return Err(SolarError::Checksum {
            path,
            expected: blob.sha256.clone(),
            actual,
        });
    }
    Ok(bytes)
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub manifest: Manifest,
    pub model: SolarModel,
    pub index: Option<InvertedIndex>,
}

impl LoadedModel {
    pub fn into_engine(self) -> Result<Engine> {
        match self.index {
            Some(index) => Engine::with_index(self.model, index),
            None => Engine::new(self.model),
        }
    }
}

/// Loads the manifest and every blob it references, verifying checksums.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<LoadedModel> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let chunks = manifest
        .chunks
        .iter()
        .map(|b| ChunkModel::from_blob(&read_checked(base, b)?))
        .collect::<Result<Vec<_>>>()?;
    let model = SolarModel {
        code: manifest.code,
        arch: manifest.arch,
        chunks,
    };
    model.validate()?;
    let index = match &manifest.index {
        Some(b) => Some(InvertedIndex::read_from(read_checked(base, b)?.as_slice())?),
        None => None,
    };
    Ok(LoadedModel { manifest, model, index })
}

pub fn load_engine(manifest_path: impl AsRef<Path>) -> Result<Engine> {
    load_model(manifest_path)?.into_engine()
}

/// Adds a persisted index to an existing model directory and rewrites its manifest.
pub fn attach_index(manifest_path: impl AsRef<Path>) -> Result<PathBuf> {
    let manifest_path = manifest_path.as_ref();
    let loaded = load_model(manifest_path)?;
    let opts = SaveOptions {
        created_unix: loaded.manifest.created_unix,
        write_index: true,
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    save_model(dir, &loaded.model, &loaded.manifest.train, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> SolarModel {
        let code = CodeConfig::new(10, 2, 4, 7);
        let arch = ModelConfig {
            feature_dim: 6,
            hidden_dim: 3,
            feature_mode: FeatureMode::Counts,
        };
        let dims = arch.dims(&code);
        let chunks = (0..2).map(|k| ChunkModel::init(k, dims, 11 + k as u64).unwrap()).collect();
        SolarModel { code, arch, chunks }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model();
        let train = TrainConfig {
            shuffle_seed: u64::MAX,
            ..TrainConfig::default()
        };
        let opts = SaveOptions {
            created_unix: 5,
            write_index: true,
        };
        let path = save_model(dir.path(), &model, &train, &opts).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.model, model);
        assert_eq!(loaded.manifest.train, train);
        assert!(loaded.index.is_some());
        loaded.into_engine().unwrap();
    }

    #[test]
    fn corrupted_blob_is_a_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_model(dir.path(), &tiny_model(), &TrainConfig::default(), &SaveOptions::default()).unwrap();
        let blob = dir.path().join("chunk_001.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[40] ^= 0xff;
        fs::write(&blob, bytes).unwrap();
        match load_model(&path) {
            Err(SolarError::Checksum { path, .. }) => assert!(path.ends_with("chunk_001.bin")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_model(dir.path(), &tiny_model(), &TrainConfig::default(), &SaveOptions::default()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("format_version = 1", "format_version = 9");
        fs::write(&path, text).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }
}
