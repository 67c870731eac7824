use std::path::Path;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use solar_core::model::grad_check_random;
use solar_core::persist::load_model;
use solar_core::theory::run_theory_checks;
use solar_core::train::train_all;
use solar_core::{
    CodeConfig, Engine, FeatureMode, InferParams, InvertedIndex, LabelCodebook, ModelConfig, ModelDims, SynthConfig,
    TrainConfig,
};

pub const EXIT_VERIFY: u8 = 3;

#[derive(Debug, Clone, Args)]
pub struct Tolerances {
    /// Largest |z| of the mean code overlap.
    #[arg(long, default_value_t = 4.0)]
    pub max_z: f64,
    /// Significance level of the collision chi-square test.
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    /// Largest allowed bucket load (N = 30000, B = 1000).
    #[arg(long, default_value_t = 60)]
    pub load_bound: usize,
    /// Largest allowed gradient relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub grad_tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub grad_step: f64,
    /// Tolerance of the orthogonal change-of-basis checks.
    #[arg(long, default_value_t = 1e-10)]
    pub theory_tol: f64,
    /// Queries used for the sparse/full equivalence check.
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn orthogonality(tol: &Tolerances) -> solar_core::Result<Check> {
    let cb = LabelCodebook::build(CodeConfig::new(10_000, 8, 1000, 0))?;
    let stats = cb.orthogonality_stats(100_000, 0)?;
    let fit = stats.binomial_fit();
    Ok(Check {
        name: "code orthogonality",
        pass: stats.z_score().abs() <= tol.max_z && fit.p_value > tol.alpha,
        detail: format!(
            "mean overlap {:.5} vs {:.5} (z = {:.2}), chi-square p = {:.4}",
            stats.mean_dot,
            stats.expected_mean(),
            stats.z_score(),
            fit.p_value
        ),
    })
}

fn load_balance(tol: &Tolerances) -> solar_core::Result<Check> {
    let cb = LabelCodebook::build(CodeConfig::new(30_000, 8, 1000, 0))?;
    let idx = InvertedIndex::build(&cb);
    let worst = (0..8).map(|k| idx.max_load(k)).collect::<solar_core::Result<Vec<_>>>()?;
    let max = worst.iter().copied().max().unwrap_or(0);
    Ok(Check {
        name: "bucket load",
        pass: max <= tol.load_bound,
        detail: format!("max load {max} (bound {})", tol.load_bound),
    })
}

fn gradients(tol: &Tolerances) -> solar_core::Result<Check> {
    let r = grad_check_random(ModelDims::new(20, 8, 10), 20, 0, tol.grad_step)?;
    Ok(Check {
        name: "gradient",
        pass: r.max_rel_error <= tol.grad_tol,
        detail: format!("max relative error {:.3e} over {} coordinates", r.max_rel_error, r.checked),
    })
}

fn theory(tol: &Tolerances) -> solar_core::Result<Check> {
    let mut pass = true;
    let mut worst = 0.0f64;
    for n in [32, 128] {
        let r = run_theory_checks(n, 100, n as u64)?;
        pass &= r.passes(tol.theory_tol);
        worst = worst
            .max(r.orthogonality_error)
            .max(r.reconstruction_error)
            .max(r.inner_product_deviation)
            .max(r.cosine_deviation);
    }
    Ok(Check {
        name: "orthogonal change of basis",
        pass,
        detail: format!("worst deviation {worst:.2e} at n = 32, 128"),
    })
}

fn desk_engine() -> solar_core::Result<Engine> {
    let synth = SynthConfig {
        num_labels: 200,
        noise_vocab: 100,
        ..SynthConfig::default()
    };
    let cb = LabelCodebook::build(CodeConfig::new(200, 4, 32, 0))?;
    let arch = ModelConfig {
        feature_dim: 1024,
        hidden_dim: 16,
        feature_mode: FeatureMode::Counts,
    };
    let train = TrainConfig {
        epochs: 2,
        batch_size: 50,
        ..TrainConfig::default()
    };
    let model = train_all(&synth.generate(3, 0)?, &cb, &arch, &train)?.model;
    Engine::new(model)
}

fn equivalence(engine: &Engine, queries: usize, name: &'static str) -> solar_core::Result<Check> {
    let synth = SynthConfig {
        num_labels: engine.num_labels().min(1000),
        ..SynthConfig::default()
    };
    let docs = synth.generate_random(queries, 1)?;
    let b = engine.codebook.buckets_per_chunk();
    let params = InferParams::sparse(b, 10);
    let mut same = 0;
    for d in &docs {
        if engine.predict(d, &params)?.ranked == engine.predict_full(d, 10)?.ranked {
            same += 1;
        }
    }
    Ok(Check {
        name,
        pass: same == docs.len(),
        detail: format!("{same}/{} ranked lists identical at m = B = {b}", docs.len()),
    })
}

fn record(checks: &mut Vec<Check>, name: &'static str, res: solar_core::Result<Check>) {
    checks.push(res.unwrap_or_else(|e| Check {
        name,
        pass: false,
        detail: format!("error: {e}"),
    }));
}

pub fn run(manifest: Option<&Path>, tol: &Tolerances) -> Result<ExitCode> {
    let mut checks = Vec::new();
    record(&mut checks, "code orthogonality", orthogonality(tol));
    record(&mut checks, "bucket load", load_balance(tol));
    record(&mut checks, "gradient", gradients(tol));
    record(&mut checks, "orthogonal change of basis", theory(tol));
    record(
        &mut checks,
        "sparse/full equivalence",
        desk_engine().and_then(|e| equivalence(&e, tol.queries, "sparse/full equivalence")),
    );
    if let Some(path) = manifest {
        match load_model(path).and_then(|m| m.into_engine()) {
            Ok(engine) => {
                checks.push(Check {
                    name: "manifest",
                    pass: true,
                    detail: format!("{} chunk blob(s) verified", engine.model.chunks.len()),
                });
                record(
                    &mut checks,
                    "saved model sparse/full equivalence",
                    equivalence(&engine, tol.queries, "saved model sparse/full equivalence"),
                );
            }
            Err(e) => checks.push(Check {
                name: "manifest",
                pass: false,
                detail: e.to_string(),
            }),
        }
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("verify: {}/{} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY)
    })
}
