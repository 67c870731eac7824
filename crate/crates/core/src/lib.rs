pub mod codes;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod hash;
pub mod index;
pub mod infer;
pub mod kv;
pub mod model;
pub mod persist;
pub mod stats;
pub mod synth;
pub mod theory;
pub mod train;

pub use codes::{CodeConfig, LabelCodebook, LabelId};
pub use error::{Result, SolarError};
pub use features::{Document, FeatureMode, HashedFeatures};
pub use index::InvertedIndex;
pub use model::{AdamConfig, ChunkModel, ModelDims, TargetVector};
pub use infer::{Engine, InferMode, InferParams, OpCounters, Prediction};
pub use train::{ModelConfig, SolarModel, TrainConfig};
pub use corpus::{parse_corpus, CorpusHeader, CorpusReader};
pub use eval::{evaluate, MetricReport};
pub use kv::KeyValues;
pub use persist::{load_engine, load_model, save_model, Manifest, SaveOptions};
pub use synth::SynthConfig;
