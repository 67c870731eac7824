//! Acceptance suite. Runs every criterion in order and prints one line each.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solar_core::eval::evaluate;
use solar_core::features::HashedFeatures;
use solar_core::infer::{dense_op_count, expected_candidates, op_count_bound};
use solar_core::model::grad_check;
use solar_core::persist::{load_engine, save_model, SaveOptions};
use solar_core::theory::{run_theory_checks, THEORY_TOL};
use solar_core::train::train_all;
use solar_core::{
    ChunkModel, CodeConfig, Document, Engine, FeatureMode, InferParams, InvertedIndex, LabelCodebook, ModelConfig,
    ModelDims, SolarModel, SynthConfig, TargetVector, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn code_orthogonality() -> Outcome {
    let cb = LabelCodebook::build(CodeConfig::new(10_000, 8, 1000, 2024)).unwrap();
    let stats = cb.orthogonality_stats(100_000, 1).unwrap();
    let fit = stats.binomial_fit();
    let z = stats.z_score();
    Outcome::new(
        z.abs() <= 4.0 && fit.p_value > 0.001,
        format!(
            "mean={:.6} expected={:.6} z={z:.3} chi2={:.3} dof={} p={:.4}",
            stats.mean_dot,
            stats.expected_mean(),
            fit.statistic,
            fit.dof,
            fit.p_value
        ),
    )
}

fn load_balance() -> Outcome {
    let cb = LabelCodebook::build(CodeConfig::new(30_000, 16, 1000, 2024)).unwrap();
    let idx = InvertedIndex::build(&cb);
    let loads: Vec<usize> = (0..16).map(|k| idx.max_load(k).unwrap()).collect();
    let worst = *loads.iter().max().unwrap();
    Outcome::new(worst <= 60, format!("K=16 max loads {loads:?} (bound 60)"))
}

struct Desk {
    model: SolarModel,
    train: TrainConfig,
    queries: Vec<Document>,
}

fn desk_setup() -> (Vec<Document>, LabelCodebook, ModelConfig, TrainConfig, SynthConfig) {
    let synth = SynthConfig {
        num_labels: 1000,
        noise_vocab: 500,
        seed: 3,
        ..SynthConfig::default()
    };
    let docs = synth.generate(5, 0).unwrap();
    let cb = LabelCodebook::build(CodeConfig::new(1000, 4, 64, 17)).unwrap();
    let arch = ModelConfig {
        feature_dim: 2048,
        hidden_dim: 32,
        feature_mode: FeatureMode::Counts,
    };
    let train = TrainConfig {
        epochs: 3,
        batch_size: 50,
        shuffle_seed: 5,
        init_seed: 6,
        ..TrainConfig::default()
    };
    (docs, cb, arch, train, synth)
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let (docs, cb, arch, train, synth) = desk_setup();
        let model = train_all(&docs, &cb, &arch, &train).unwrap().model;
        let queries = synth.generate_random(1000, 9).unwrap();
        Desk { model, train, queries }
    })
}

fn oracle_equivalence() -> Outcome {
    let desk = desk();
    let engine = Engine::new(desk.model.clone()).unwrap();
    let params = InferParams::sparse(64, 10);
    let mut matches = 0;
    for q in &desk.queries {
        let sparse = engine.predict(q, &params).unwrap();
        let full = engine.predict_full(q, 10).unwrap();
        if sparse.ranked == full.ranked {
            matches += 1;
        }
    }
    Outcome::new(
        matches == desk.queries.len(),
        format!("{matches}/{} ranked lists identical at m=B=64", desk.queries.len()),
    )
}

fn gradient_check() -> Outcome {
    let dims = ModelDims::new(20, 8, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..20u64 {
        let mut model = ChunkModel::<f32>::init(0, dims, i).unwrap().cast::<f64>();
        for b in model.b1.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        for b in model.b2.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = HashedFeatures {
            dim: 20,
            indices: (0..20).collect(),
            values: (0..20).map(|_| rng.random_range(0.1f32..2.0)).collect(),
        };
        let hot: Vec<u32> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..10)).collect();
        let report = grad_check(&model, &x, &TargetVector::new(0, hot), 1e-4).unwrap();
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    Outcome::new(
        worst <= 1e-4,
        format!("max relative error {worst:.3e} over 20 instances ({checked} coordinates)"),
    )
}

fn theory() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [32, 128] {
        let r = run_theory_checks(n, 100, 1000 + n as u64).unwrap();
        pass &= r.passes(THEORY_TOL);
        parts.push(format!(
            "n={n}: PPt-I={:.1e} A-PB={:.1e} ip_dev={:.1e} cos_dev={:.1e} argmax_mismatch={}",
            r.orthogonality_error,
            r.reconstruction_error,
            r.inner_product_deviation,
            r.cosine_deviation,
            r.argmax_mismatches
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn zero_communication() -> Outcome {
    let desk = desk();
    let (docs, cb, arch, train, _) = desk_setup();
    let parallel = TrainConfig {
        workers: cb.num_chunks(),
        ..train
    };
    let again = train_all(&docs, &cb, &arch, &parallel).unwrap().model;
    let identical = desk.train.workers == 1
        && desk
            .model
            .chunks
            .iter()
            .zip(&again.chunks)
            .all(|(a, b)| a.to_blob() == b.to_blob());
    Outcome::new(identical, format!("workers=1 vs workers={}: blobs identical = {identical}", cb.num_chunks()))
}

struct Synthetic {
    engine: Engine,
    queries: Vec<Document>,
    code: CodeConfig,
}

fn synthetic() -> &'static Synthetic {
    static SYN: OnceLock<Synthetic> = OnceLock::new();
    SYN.get_or_init(|| {
        let synth = SynthConfig {
            num_labels: 2000,
            seed: 11,
            ..SynthConfig::default()
        };
        let docs = synth.generate(20, 0).unwrap();
        let queries = synth.generate(2, 1).unwrap();
        let code = CodeConfig::new(2000, 4, 256, 23);
        let cb = LabelCodebook::build(code).unwrap();
        let arch = ModelConfig {
            feature_dim: 8192,
            hidden_dim: 64,
            feature_mode: FeatureMode::Counts,
        };
        let train = TrainConfig {
            epochs: 10,
            batch_size: 100,
            shuffle_seed: 1,
            init_seed: 2,
            workers: 4,
            ..TrainConfig::default()
        };
        let model = train_all(&docs, &cb, &arch, &train).unwrap().model;
        Synthetic {
            engine: Engine::new(model).unwrap(),
            queries,
            code,
        }
    })
}

fn learnability() -> Outcome {
    let syn = synthetic();
    let report = evaluate(&syn.engine, &syn.queries, &InferParams::sparse(10, 100), &[1, 3, 5], &[100]).unwrap();
    let p1 = report.precision_at[&1];
    let r100 = report.recall_at[&100];
    Outcome::new(
        p1 >= 0.9 && r100 >= 0.95,
        format!(
            "P@1={p1:.4} P@3={:.4} P@5={:.4} Rec@100={r100:.4} over {} queries, {:.3} ms/point",
            report.precision_at[&3], report.precision_at[&5], report.num_queries, report.latency.mean_ms
        ),
    )
}

fn candidate_bound() -> Outcome {
    let syn = synthetic();
    let (n, b, k, m) = (syn.code.num_labels, syn.code.buckets_per_chunk, syn.code.num_chunks, 10usize);
    let report = evaluate(&syn.engine, &syn.queries, &InferParams::sparse(m, 5), &[1], &[]).unwrap();
    let expected = expected_candidates(n, b, k, m);
    let mean = report.mean_counters.unique_candidates;

    let kmn_b = (k * m * n) as f64 / b as f64;
    let sparse_ref = b as f64 * (m as f64).log2() + kmn_b + kmn_b * 5f64.log2();
    let dense_ref = (n * m * k) as f64 + n as f64 * 5f64.log2();
    let sparse = op_count_bound(n, b, k, m);
    let dense = dense_op_count(n, m, k);
    let formula_exact = sparse == sparse_ref && dense == dense_ref && sparse / dense == sparse_ref / dense_ref;
    Outcome::new(
        mean <= 1.2 * expected && formula_exact,
        format!(
            "mean unique candidates {mean:.2} <= 1.2 x {expected:.2}; ops sparse={sparse:.3} dense={dense:.3} ratio={:.6}",
            sparse / dense
        ),
    )
}

fn persistence() -> Outcome {
    let desk = desk();
    let dir = tempfile::tempdir().unwrap();
    let opts = SaveOptions {
        created_unix: 0,
        write_index: false,
    };
    let path = save_model(dir.path(), &desk.model, &desk.train, &opts).unwrap();
    let before = Engine::new(desk.model.clone()).unwrap();
    let after = load_engine(&path).unwrap();
    let mut identical = 0;
    for q in desk.queries.iter().take(100) {
        let a = before.chunk_probabilities(q, false).unwrap();
        let b = after.chunk_probabilities(q, false).unwrap();
        let same = a
            .iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        identical += usize::from(same);
    }
    Outcome::new(identical == 100, format!("{identical}/100 documents with bit-identical forward outputs"))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 9] = [
        (1, "code orthogonality", code_orthogonality, Duration::from_secs(10)),
        (2, "bucket load balance", load_balance, Duration::from_secs(5)),
        (3, "sparse/full oracle equivalence", oracle_equivalence, Duration::from_secs(30)),
        (4, "gradient correctness", gradient_check, Duration::from_secs(10)),
        (5, "deferred label embedding", theory, Duration::from_secs(5)),
        (6, "zero-communication training", zero_communication, Duration::from_secs(120)),
        (7, "end-to-end learnability", learnability, Duration::from_secs(300)),
        (8, "candidate bound and op counts", candidate_bound, Duration::from_secs(300)),
        (9, "manifest persistence", persistence, Duration::from_secs(60)),
    ];
    let mut failures = 0;
    for (id, name, run, limit) in criteria {
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed();
        let pass = outcome.pass && elapsed <= limit;
        failures += usize::from(!pass);
        println!(
            "{} criterion {id} {name}: {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failures == 0 {
        println!("acceptance: 9/9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 9 criteria failed");
        ExitCode::FAILURE
    }
}
