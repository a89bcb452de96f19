//! Pipeline stages shared by the individual commands and `run-suite`. Each
//! stage writes its outputs atomically and finishes with a manifest; a stage
//! whose manifest matches the request and whose outputs are intact is
//! skipped.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use surprise_core::automata::{generate_dfa, make_surprising_context, sample_walk, Dfa};
use surprise_core::corpus::{read_token_file, write_token_file, CorpusHeader};
use surprise_core::{SurprisingContext, TokenSeq};
use surprise_lm::{checkpoint, train_lm_with_progress, LmConfig, TrainConfig, TrainedLm};

use crate::artifacts::{read_json, write_atomic, write_json, Manifest};
use crate::config::{CorpusParams, DfaParams};
use crate::seeds::derive;

pub const MANIFEST: &str = "manifest.json";

pub fn load_dfa(path: &Path) -> Result<Dfa> {
    read_json(path)
}

pub fn load_tokens(path: &Path) -> Result<(CorpusHeader, Vec<TokenSeq>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_token_file(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<TrainedLm> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    checkpoint::load(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_tokens(path: &Path, header: &CorpusHeader, seqs: &[TokenSeq]) -> Result<()> {
    write_atomic(path, |w| Ok(write_token_file(w, header, seqs)?))
}

pub fn sample_walks(dfa: &Dfa, n: usize, max_len: usize, seed: u64) -> Vec<TokenSeq> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_walk(dfa, &mut rng, Some(max_len))).collect()
}

fn corpus_header<C: Serialize>(vocab_size: usize, seed: u64, max_len: usize, config: &C) -> Result<CorpusHeader> {
    Ok(CorpusHeader {
        vocab_size,
        seed: Some(seed),
        max_walk_len: Some(max_len),
        config: serde_json::to_value(config)?,
    })
}

fn finish(dir: &Path, mut manifest: Manifest, outputs: &[&str], name: &str) -> Result<()> {
    for o in outputs {
        manifest.add_output(dir, o)?;
    }
    write_json(&dir.join(name), &manifest)
}

#[derive(Serialize)]
struct LanguageRequest<'a> {
    automaton: &'a DfaParams,
    corpus: &'a CorpusParams,
}

/// `dfa.json`, `train.tok` and `val.tok` in `dir`. Returns false when the
/// stage was already complete.
pub fn stage_language(dir: &Path, automaton: &DfaParams, corpus: &CorpusParams, seed: u64) -> Result<bool> {
    let req = LanguageRequest { automaton, corpus };
    let manifest = Manifest::new("gen-language", Some(seed), &req)?;
    if Manifest::is_fresh(&dir.join(MANIFEST), &manifest) {
        return Ok(false);
    }
    let dfa_seed = derive(seed, "dfa");
    let dfa = generate_dfa(&automaton.with_seed(dfa_seed))?;
    write_json(&dir.join("dfa.json"), &dfa)?;
    for (name, n) in [("train", corpus.num_train), ("val", corpus.num_val)] {
        let s = derive(seed, name);
        let walks = sample_walks(&dfa, n, corpus.max_walk_len, s);
        let header = corpus_header(dfa.alphabet_size(), s, corpus.max_walk_len, &automaton.with_seed(dfa_seed))?;
        write_tokens(&dir.join(format!("{name}.tok")), &header, &walks)?;
    }
    finish(dir, manifest, &["dfa.json", "train.tok", "val.tok"], MANIFEST)?;
    Ok(true)
}

#[derive(Serialize)]
struct ContextRequest {
    num_contexts: usize,
    max_walk_len: usize,
}

/// `contexts.json` in `dir` from the automaton in `dir/dfa.json`.
pub fn stage_dfa_contexts(dir: &Path, num_contexts: usize, max_walk_len: usize, seed: u64) -> Result<Vec<SurprisingContext>> {
    let dfa_path = dir.join("dfa.json");
    let mut manifest = Manifest::new("make-surprising", Some(seed), &ContextRequest { num_contexts, max_walk_len })?;
    manifest.add_input("dfa", &dfa_path)?;
    let out = dir.join("contexts.json");
    let mpath = dir.join("contexts.manifest.json");
    if Manifest::is_fresh(&mpath, &manifest) {
        return read_json(&out);
    }
    let dfa = load_dfa(&dfa_path)?;
    let contexts = dfa_contexts(&dfa, num_contexts, max_walk_len, seed)?;
    write_json(&out, &contexts)?;
    finish(dir, manifest, &["contexts.json"], "contexts.manifest.json")?;
    Ok(contexts)
}

pub fn dfa_contexts(dfa: &Dfa, n: usize, max_walk_len: usize, seed: u64) -> Result<Vec<SurprisingContext>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Ok(make_surprising_context(dfa, &mut rng, Some(max_walk_len))?))
        .collect()
}

#[derive(Serialize)]
struct TrainRequest<'a> {
    lm: &'a LmConfig,
    train: &'a TrainConfig,
}

/// `model.bin` and `loss.csv` in `dir`, trained on the token file at
/// `corpus_path`.
pub fn stage_train(dir: &Path, corpus_path: &Path, lm: &LmConfig, train: &TrainConfig) -> Result<TrainedLm> {
    let mut manifest = Manifest::new("train-lm", Some(train.seed), &TrainRequest { lm, train })?;
    manifest.add_input("corpus", corpus_path)?;
    let model_path = dir.join("model.bin");
    if Manifest::is_fresh(&dir.join(MANIFEST), &manifest) {
        return load_model(&model_path);
    }
    let (_, corpus) = load_tokens(corpus_path)?;
    let label = dir.display().to_string();
    let start = Instant::now();
    let mut last_report = Instant::now();
    let outcome = train_lm_with_progress(&corpus, lm, train, |step, loss| {
        if last_report.elapsed().as_secs() >= 60 {
            eprintln!("  {label}: step {step}, loss {loss:.4}");
            last_report = Instant::now();
        }
    })
    .with_context(|| format!("training {label}"))?;
    eprintln!(
        "  {label}: {} steps, final loss {:.4}, {:.0}s",
        outcome.lm.provenance.steps,
        outcome.lm.provenance.final_loss,
        start.elapsed().as_secs_f64()
    );
    write_atomic(&model_path, |w| Ok(checkpoint::save(&outcome.lm, w)?))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in outcome.loss_history.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, l));
    }
    crate::artifacts::write_text(&dir.join("loss.csv"), &csv)?;
    finish(dir, manifest, &["model.bin", "loss.csv"], MANIFEST)?;
    Ok(outcome.lm)
}

pub fn model_dir(root: &Path, arch: &str, noise: &str, seed: u64) -> PathBuf {
    root.join("models").join(arch).join(noise).join(format!("seed{seed}"))
}
