use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use solar_core::corpus::write_corpus;
use solar_core::eval::evaluate;
use solar_core::persist::{attach_index, load_engine};
use solar_core::train::train_all;
use solar_core::{
    parse_corpus, CorpusReader, Engine, InferMode, InferParams, LabelCodebook, OpCounters, Prediction, SaveOptions,
    SynthConfig,
};

use crate::config::TrainSettings;

const PREDICT_BATCH: usize = 4096;

fn params_for(mode: &str, m: usize, top_k: usize) -> Result<InferParams> {
    let mode: InferMode = mode.parse()?;
    let mut params = InferParams::sparse(m, top_k);
    params.mode = mode;
    Ok(params)
}

pub fn train(config: &Path, timestamp: Option<u64>) -> Result<ExitCode> {
    let settings = TrainSettings::load(config)?;
    let (header, docs) = parse_corpus(&settings.corpus)?;
    let code = settings.code(header.num_labels)?;
    let cb = LabelCodebook::build(code)?;
    info!(
        "training {} chunk(s) on {} documents with {} worker(s)",
        code.num_chunks,
        docs.len(),
        settings.train.workers
    );
    let started = Instant::now();
    let outcome = train_all(&docs, &cb, &settings.arch, &settings.train)?;
    for (k, curve) in outcome.loss_curves.iter().enumerate() {
        let losses: Vec<String> = curve.iter().map(|l| format!("{l:.6}")).collect();
        println!("chunk {k} loss: {}", losses.join(" "));
    }
    if outcome.skipped_unlabelled > 0 {
        println!("skipped {} unlabelled document(s)", outcome.skipped_unlabelled);
    }
    let mut opts = SaveOptions {
        write_index: settings.write_index,
        ..SaveOptions::default()
    };
    if let Some(ts) = timestamp {
        opts.created_unix = ts;
    }
    let path = solar_core::save_model(&settings.output_dir, &outcome.model, &settings.train, &opts)?;
    println!("trained in {:.2}s", started.elapsed().as_secs_f64());
    println!("manifest: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// `id<TAB>label:score<TAB>...` with six decimals.
pub fn format_prediction(id: u64, pred: &Prediction) -> String {
    let mut line = id.to_string();
    for &(label, score) in &pred.ranked {
        line.push_str(&format!("\t{label}:{score:.6}"));
    }
    line
}

fn counters_summary(total: OpCounters, queries: usize) -> String {
    let n = queries.max(1) as f64;
    format!(
        "queries = {queries}\nmean_buckets_scored = {:.3}\nmean_candidates_retrieved = {:.3}\nmean_unique_candidates = {:.3}\nmean_scores_summed = {:.3}",
        total.buckets_scored as f64 / n,
        total.candidates_retrieved as f64 / n,
        total.unique_candidates as f64 / n,
        total.scores_summed as f64 / n,
    )
}

pub fn predict(manifest: &Path, corpus: &Path, m: usize, top_k: usize, mode: &str, output: &Path) -> Result<ExitCode> {
    let engine = load_engine(manifest)?;
    let params = params_for(mode, m, top_k)?;
    params.validate(engine.codebook.buckets_per_chunk())?;
    let reader = CorpusReader::open(corpus)?;
    let out: Box<dyn Write> = if output == Path::new("-") {
        Box::new(io::stdout().lock())
    } else {
        Box::new(File::create(output).with_context(|| format!("cannot create {}", output.display()))?)
    };
    let mut out = BufWriter::new(out);
    let mut total = OpCounters::default();
    let mut queries = 0;
    let mut batch = Vec::with_capacity(PREDICT_BATCH);
    let mut flush = |batch: &mut Vec<solar_core::Document>, out: &mut BufWriter<Box<dyn Write>>| -> Result<()> {
        for (doc, pred) in batch.iter().zip(engine.predict_batch(batch, &params)?) {
            writeln!(out, "{}", format_prediction(doc.id, &pred))?;
            total += pred.counters;
            queries += 1;
        }
        batch.clear();
        Ok(())
    };
    for doc in reader {
        batch.push(doc?);
        if batch.len() == PREDICT_BATCH {
            flush(&mut batch, &mut out)?;
        }
    }
    flush(&mut batch, &mut out)?;
    out.flush()?;
    eprintln!("{}", counters_summary(total, queries));
    Ok(ExitCode::SUCCESS)
}

pub fn eval(
    manifest: &Path,
    corpus: &Path,
    m: usize,
    ks: &[usize],
    recall_ks: &[usize],
    mode: &str,
    tsv: bool,
) -> Result<ExitCode> {
    let engine = load_engine(manifest)?;
    let (_, docs) = parse_corpus(corpus)?;
    let params = params_for(mode, m, 1)?;
    let report = evaluate(&engine, &docs, &params, ks, recall_ks)?;
    if tsv {
        println!("{}\n{}", report.tsv_header(), report.tsv_row());
    } else {
        print!("{}", report.to_key_value());
    }
    Ok(ExitCode::SUCCESS)
}

pub const SWEEP_HEADER: &str = "B\tK\tm\tP@1\tP@3\tP@5\tms/point\tmean_unique_candidates\tstatus";

fn sweep_cell(
    engine: &Engine,
    docs: &[solar_core::Document],
    m: usize,
) -> solar_core::Result<solar_core::MetricReport> {
    evaluate(engine, docs, &InferParams::sparse(m, 5), &[1, 3, 5], &[])
}

fn clean(err: &dyn std::fmt::Display) -> String {
    err.to_string().replace(['\t', '\n'], " ")
}

pub fn sweep(config: &Path, b_list: &[usize], k_list: &[usize], m_list: &[usize], test: Option<&Path>) -> Result<ExitCode> {
    if b_list.is_empty() || k_list.is_empty() || m_list.is_empty() {
        bail!(solar_core::SolarError::InvalidConfig("B, K and m lists must be non-empty".into()));
    }
    let base = TrainSettings::load(config)?;
    let test_path = match (test, &base.test_corpus) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => p.clone(),
        (None, None) => bail!(solar_core::SolarError::InvalidConfig(
            "sweep needs a held-out corpus: set test_corpus or pass --test-corpus".into()
        )),
    };
    let (header, docs) = parse_corpus(&base.corpus)?;
    let (_, test_docs) = parse_corpus(&test_path)?;
    println!("{SWEEP_HEADER}");
    let mut failed = 0;
    for &b in b_list {
        for &k in k_list {
            let settings = TrainSettings {
                buckets_per_chunk: b,
                num_chunks: k,
                ..base.clone()
            };
            let trained = settings
                .code(header.num_labels)
                .and_then(LabelCodebook::build)
                .and_then(|cb| train_all(&docs, &cb, &settings.arch, &settings.train))
                .and_then(|out| Engine::new(out.model));
            let engine = match trained {
                Ok(e) => e,
                Err(e) => {
                    failed += m_list.len();
                    for &m in m_list {
                        println!("{b}\t{k}\t{m}\t-\t-\t-\t-\t-\terror: {}", clean(&e));
                    }
                    continue;
                }
            };
            for &m in m_list {
                match sweep_cell(&engine, &test_docs, m) {
                    Ok(r) => println!(
                        "{b}\t{k}\t{m}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.1}\tok",
                        r.precision_at[&1],
                        r.precision_at[&3],
                        r.precision_at[&5],
                        r.latency.mean_ms,
                        r.mean_counters.unique_candidates
                    ),
                    Err(e) => {
                        failed += 1;
                        println!("{b}\t{k}\t{m}\t-\t-\t-\t-\t-\terror: {}", clean(&e));
                    }
                }
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} sweep cell(s) failed");
        return Ok(ExitCode::from(crate::EXIT_RUNTIME));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn build_index(manifest: &Path) -> Result<ExitCode> {
    let path = attach_index(manifest)?;
    println!("manifest: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gen_corpus(cfg: SynthConfig, docs_per_label: usize, split: u64, output: &Path) -> Result<ExitCode> {
    let docs = cfg.generate(docs_per_label, split)?;
    let file = File::create(output).with_context(|| format!("cannot create {}", output.display()))?;
    write_corpus(BufWriter::new(file), &docs, cfg.num_features(), cfg.num_labels)
        .with_context(|| format!("cannot write {}", output.display()))?;
    println!("wrote {} documents to {}", docs.len(), output.display());
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use solar_core::infer::Prediction;

    #[test]
    fn prediction_line_format() {
        let pred = Prediction {
            ranked: vec![(7, 0.5), (2, 0.1234567)],
            counters: OpCounters::default(),
        };
        assert_eq!(format_prediction(3, &pred), "3\t7:0.500000\t2:0.123457");
    }
}
