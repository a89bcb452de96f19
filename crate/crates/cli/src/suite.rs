//! `run-suite`: languages, models, contexts, evaluation, reports, figures.

use std::path::Path;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use surprise_core::automata::ground_truth_unigram;
use surprise_core::corpus::{count_corpus, make_surprising_natural, unigram_dist, CorpusHeader};
use surprise_core::eval::{evaluate_suite, HypothesisReport, SuiteLabels, SuiteModel, SuiteOptions};
use surprise_core::hypotheses::{GlobalSource, LocalSource, Predictors};
use surprise_core::{NextTokenModel, SurprisingContext};
use surprise_lm::{NoiseConfig, TrainedLm};

use crate::artifacts::{write_atomic, write_json, Manifest};
use crate::config::{ExperimentConfig, LanguageConfig, ModelEntry};
use crate::figures::write_figures;
use crate::pipeline::{load_dfa, load_tokens, model_dir, stage_dfa_contexts, stage_language, stage_train, write_tokens, MANIFEST};
use crate::seeds::derive;

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    config: &'a ExperimentConfig,
}

/// Models of one (architecture, noise) cell, in seed order.
struct Group<'a> {
    entry: &'a ModelEntry,
    noise: NoiseConfig,
    lms: Vec<TrainedLm>,
}

fn train_groups<'a>(
    cfg: &'a ExperimentConfig,
    seed: u64,
    lang: &str,
    dir: &Path,
    corpus: &Path,
    vocab: usize,
) -> Result<Vec<Group<'a>>> {
    let mut groups = Vec::new();
    for entry in &cfg.models {
        let lm_cfg = entry.lm_config(vocab);
        let train = entry.train_params(&cfg.train);
        for &noise in entry.noise_list(&cfg.noise) {
            let arch = entry.arch.name();
            let lms = entry
                .seeds
                .par_iter()
                .map(|&s| {
                    // Same initialization and data order across noise
                    // settings, so noise comparisons are paired.
                    let train_seed = derive(seed, &format!("lm/{lang}/{arch}/{s}"));
                    let mdir = model_dir(dir, arch, &noise.label(), s);
                    stage_train(&mdir, corpus, &lm_cfg, &train.with(train_seed, noise))
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(Group { entry, noise, lms });
        }
    }
    Ok(groups)
}

fn evaluate_groups(
    cfg: &ExperimentConfig,
    lang: &str,
    dir: &Path,
    groups: &[Group<'_>],
    contexts: &[SurprisingContext],
    predictors: &Predictors<'_>,
) -> Result<Vec<HypothesisReport>> {
    let options = SuiteOptions {
        grid_step: cfg.suite.grid_step,
        grid_step_2d: cfg.suite.grid_step_2d,
    };
    let mut reports = Vec::new();
    for g in groups {
        let models: Vec<(u64, &dyn NextTokenModel)> =
            g.entry.seeds.iter().zip(&g.lms).map(|(&s, lm)| (s, lm as &dyn NextTokenModel)).collect();
        let labels = SuiteLabels {
            language: lang.into(),
            arch: g.entry.arch.name().into(),
            noise: g.noise.label(),
        };
        let report = evaluate_suite(&SuiteModel::paired(&models), contexts, &cfg.hypotheses, predictors, options, labels)?;
        report.check_consistency()?;
        let name = format!("{}_{}.json", g.entry.arch.name(), g.noise.label());
        write_json(&dir.join("reports").join(name), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

fn run_dfa_languages(out: &Path, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<HypothesisReport>> {
    let LanguageConfig::Dfa { count, automaton, corpus } = &cfg.language else {
        unreachable!("caller matched the language kind");
    };
    let mut reports = Vec::new();
    for i in 0..*count {
        let lang = format!("lang{i}");
        let dir = out.join(&lang);
        if stage_language(&dir, automaton, corpus, derive(seed, &format!("language/{i}")))? {
            eprintln!("{lang}: generated automaton and corpora");
        }
        let dfa = load_dfa(&dir.join("dfa.json"))?;
        let contexts = stage_dfa_contexts(&dir, cfg.num_contexts, corpus.max_walk_len, derive(seed, &format!("contexts/{i}")))?;
        let groups = train_groups(cfg, seed, &lang, &dir, &dir.join("train.tok"), dfa.alphabet_size())?;
        let predictors = Predictors {
            local: LocalSource::dfa(&dfa)?,
            global: GlobalSource::DfaExact(&dfa),
            unigram: ground_truth_unigram(&dfa)?,
            restart: None,
        };
        reports.extend(evaluate_groups(cfg, &lang, &dir, &groups, &contexts, &predictors)?);
    }
    Ok(reports)
}

fn run_natural_language(out: &Path, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<HypothesisReport>> {
    let LanguageConfig::Natural {
        train,
        num_heldout,
        beam_width,
        top_k,
    } = &cfg.language
    else {
        unreachable!("caller matched the language kind");
    };
    let lang = "natural";
    let dir = out.join(lang);
    let (header, sentences) = load_tokens(train)?;
    if sentences.len() <= *num_heldout {
        anyhow::bail!(
            "{} has {} sentences, not enough to hold out {num_heldout}",
            train.display(),
            sentences.len()
        );
    }
    let (train_part, heldout) = sentences.split_at(sentences.len() - num_heldout);
    let vocab = header.vocab_size;
    let split_header = CorpusHeader {
        vocab_size: vocab,
        seed: None,
        max_walk_len: None,
        config: serde_json::json!({ "source": train.display().to_string() }),
    };
    let train_path = dir.join("train.tok");
    write_tokens(&train_path, &split_header, train_part)?;
    write_tokens(&dir.join("heldout.tok"), &split_header, heldout)?;

    let groups = train_groups(cfg, seed, lang, &dir, &train_path, vocab)?;
    let counts = count_corpus(train_part, vocab)?;
    let helper: &dyn NextTokenModel = &groups[0].lms[0];
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "contexts/natural"));
    let contexts = make_surprising_natural(helper, heldout, &counts, *top_k, cfg.num_contexts, &mut rng)?;
    write_json(&dir.join("contexts.json"), &contexts)?;
    let predictors = Predictors {
        local: LocalSource::BigramCounts(&counts),
        global: GlobalSource::BeamLm {
            helper,
            beam_width: *beam_width,
        },
        unigram: unigram_dist(&counts)?,
        restart: None,
    };
    evaluate_groups(cfg, lang, &dir, &groups, &contexts, &predictors)
}

/// Runs the whole experiment under `out` and returns one report per
/// (language, architecture, noise) cell. Completed languages and models are
/// reused on a rerun.
pub fn run_suite(out: &Path, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<HypothesisReport>> {
    cfg.validate()?;
    write_json(&out.join("experiment.json"), &Resolved { seed, config: cfg })?;
    let reports = match &cfg.language {
        LanguageConfig::Dfa { .. } => run_dfa_languages(out, cfg, seed)?,
        LanguageConfig::Natural { .. } => run_natural_language(out, cfg, seed)?,
    };
    write_outputs(out, &reports).context("writing suite outputs")?;
    let mut manifest = Manifest::new("run-suite", Some(seed), cfg)?;
    if let LanguageConfig::Natural { train, .. } = &cfg.language {
        manifest.add_input("corpus", train)?;
    }
    for rel in output_names(out, &reports) {
        manifest.add_output(out, &rel)?;
    }
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(reports)
}

fn output_names(out: &Path, reports: &[HypothesisReport]) -> Vec<String> {
    let mut names = vec!["reports.json".to_string(), "results.csv".to_string()];
    names.extend(
        ["hypotheses.svg", "lambda_sweep.svg"]
            .iter()
            .map(|s| s.to_string())
            .chain(reports.iter().map(|r| format!("noise_{}.svg", r.meta.arch)))
            .filter(|n| out.join(n).exists()),
    );
    names.sort();
    names.dedup();
    names
}

/// `reports.json`, `results.csv` and the figures.
pub fn write_outputs(out: &Path, reports: &[HypothesisReport]) -> Result<Vec<String>> {
    write_json(&out.join("reports.json"), reports)?;
    write_atomic(&out.join("results.csv"), |w| {
        for (i, r) in reports.iter().enumerate() {
            r.write_csv(&mut *w, i == 0)?;
        }
        Ok(())
    })?;
    write_figures(out, reports)
}
