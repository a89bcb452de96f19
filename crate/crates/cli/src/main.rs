use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surprise_core::automata::ground_truth_unigram;
use surprise_core::corpus::{count_corpus, make_surprising_natural, CorpusHeader};
use surprise_core::eval::HypothesisReport;
use surprise_core::hypotheses::{fit_lambda, Family, FitCase, GlobalSource, Hypothesis, LocalSource, Predictors, TieMode};
use surprise_core::{NextTokenModel, SurprisingContext};
use surprise_lm::Arch;

use surprise_cli::artifacts::{read_json, resolve, write_json, Manifest};
use surprise_cli::config::{CorpusParams, DfaParams, ExperimentConfig, LanguageConfig, TheoryConfig, TrainLmConfig};
use surprise_cli::figures::write_figures;
use surprise_cli::pipeline::{dfa_contexts, load_dfa, load_model, load_tokens, sample_walks, stage_language, stage_train, write_tokens};
use surprise_cli::suite::run_suite;
use surprise_cli::theory::run_theory;

/// Surprising-context generalization experiments on random regular
/// languages and user-supplied corpora.
#[derive(Parser)]
#[command(name = "surprise", version)]
struct Cli {
    /// Root that relative output paths are resolved against.
    #[arg(long, global = true, env = "SURPRISE_OUT", default_value = ".")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random automaton with training and validation walks.
    GenLanguage(GenLanguage),
    /// Sample random walks from an existing automaton.
    SampleCorpus(SampleCorpus),
    /// Train one language model on a token file.
    TrainLm(TrainLmCmd),
    /// Build surprising contexts from an automaton or a corpus and model.
    MakeSurprising(MakeSurprising),
    /// Run the full hypothesis evaluation experiment.
    RunSuite(RunSuite),
    /// Fit interpolation weights for one model on a set of contexts.
    FitLambda(FitLambda),
    /// Check the weight and prediction bounds on random synthetic tasks.
    VerifyTheory(VerifyTheory),
    /// Redraw figures from a reports file.
    Plot(Plot),
}

#[derive(Args)]
struct GenLanguage {
    #[arg(long)]
    seed: u64,
    /// JSON with `automaton` and `corpus` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_states: Option<usize>,
    #[arg(long)]
    alphabet_size: Option<usize>,
    /// Training walks.
    #[arg(long)]
    num_examples: Option<usize>,
    #[arg(long)]
    num_val: Option<usize>,
    #[arg(long)]
    max_walk_len: Option<usize>,
    #[arg(long, default_value = "language")]
    out: PathBuf,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct LanguageFile {
    #[serde(default)]
    automaton: DfaParams,
    #[serde(default)]
    corpus: CorpusParams,
}

#[derive(Args)]
struct SampleCorpus {
    #[arg(long)]
    dfa: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    num_examples: usize,
    #[arg(long, default_value_t = 64)]
    max_walk_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainLmCmd {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    seed: u64,
    /// JSON with `model`, `train` and `noise` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    num_examples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    token_swap: Option<f64>,
    #[arg(long)]
    state_dropout: Option<f64>,
    #[arg(long, default_value = "model")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Gru,
    Transformer,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Gru => Arch::Gru,
            ArchArg::Transformer => Arch::Transformer,
        }
    }
}

#[derive(Args)]
struct MakeSurprising {
    #[arg(long)]
    seed: u64,
    /// Automaton to draw zero-probability contexts from.
    #[arg(long, conflicts_with_all = ["corpus", "model"])]
    dfa: Option<PathBuf>,
    /// Held-out sentences for corpus-based contexts (needs --model).
    #[arg(long, requires = "model")]
    corpus: Option<PathBuf>,
    /// Training corpus for symbol frequencies (defaults to --corpus).
    #[arg(long)]
    counts_corpus: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    num_contexts: usize,
    #[arg(long, default_value_t = 64)]
    max_walk_len: usize,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunSuite {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of automata.
    #[arg(long)]
    languages: Option<usize>,
    /// Training walks per automaton.
    #[arg(long)]
    num_train: Option<usize>,
    /// Training examples per model.
    #[arg(long)]
    num_examples: Option<usize>,
    #[arg(long)]
    num_contexts: Option<usize>,
    #[arg(long, default_value = "suite")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Linear,
    Loglinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    Complementary,
    Free,
}

#[derive(Args)]
struct FitLambda {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    contexts: PathBuf,
    /// Exact local and global estimates from this automaton.
    #[arg(long, conflicts_with = "corpus")]
    dfa: Option<PathBuf>,
    /// Bigram counts from this corpus, beam-search global estimates.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    beam_width: usize,
    #[arg(long, value_enum, default_value = "loglinear")]
    family: FamilyArg,
    #[arg(long, value_enum, default_value = "complementary")]
    tie: TieArg,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    #[arg(long, default_value_t = 0.05)]
    grid_step_2d: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyTheory {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_tasks: Option<usize>,
    /// Also run deliberately wrong bounds; succeed only if one of them fails.
    #[arg(long)]
    self_test: bool,
    #[arg(long, default_value = "theory")]
    out: PathBuf,
}

#[derive(Args)]
struct Plot {
    /// `reports.json` written by run-suite.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.out_root, cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Ok(false) is a completed run whose checks failed.
fn dispatch(root: &Path, command: Command) -> Result<bool> {
    match command {
        Command::GenLanguage(a) => gen_language(root, a).map(|_| true),
        Command::SampleCorpus(a) => sample_corpus(root, a).map(|_| true),
        Command::TrainLm(a) => train_lm(root, a).map(|_| true),
        Command::MakeSurprising(a) => make_surprising(root, a).map(|_| true),
        Command::RunSuite(a) => run_suite_cmd(root, a).map(|_| true),
        Command::FitLambda(a) => fit_lambda_cmd(root, a).map(|_| true),
        Command::VerifyTheory(a) => verify_theory(root, a),
        Command::Plot(a) => plot(root, a).map(|_| true),
    }
}

fn gen_language(root: &Path, a: GenLanguage) -> Result<()> {
    let mut f: LanguageFile = match &a.config {
        Some(p) => read_json(p)?,
        None => LanguageFile::default(),
    };
    if let Some(v) = a.num_states {
        f.automaton.num_states = v;
    }
    if let Some(v) = a.alphabet_size {
        f.automaton.alphabet_size = v;
    }
    if let Some(v) = a.num_examples {
        f.corpus.num_train = v;
    }
    if let Some(v) = a.num_val {
        f.corpus.num_val = v;
    }
    if let Some(v) = a.max_walk_len {
        f.corpus.max_walk_len = v;
    }
    f.automaton.with_seed(a.seed).validate()?;
    let out = resolve(root, &a.out);
    if !stage_language(&out, &f.automaton, &f.corpus, a.seed)? {
        eprintln!("{} is up to date", out.display());
    }
    Ok(())
}

fn sample_corpus(root: &Path, a: SampleCorpus) -> Result<()> {
    let dfa = load_dfa(&a.dfa)?;
    let walks = sample_walks(&dfa, a.num_examples, a.max_walk_len, a.seed);
    let header = CorpusHeader {
        vocab_size: dfa.alphabet_size(),
        seed: Some(a.seed),
        max_walk_len: Some(a.max_walk_len),
        config: serde_json::Value::Null,
    };
    let out = resolve(root, &a.out);
    write_tokens(&out, &header, &walks)?;
    let mut m = Manifest::new("sample-corpus", Some(a.seed), &serde_json::json!({
        "num_examples": a.num_examples,
        "max_walk_len": a.max_walk_len,
    }))?;
    m.add_input("dfa", &a.dfa)?;
    write_sidecar(&out, m)
}

/// Manifest for a single-file output, written next to it.
fn write_sidecar(out: &Path, mut m: Manifest) -> Result<()> {
    let dir = out.parent().unwrap_or(Path::new("."));
    let name = out.file_name().context("output path has no file name")?.to_string_lossy().to_string();
    m.add_output(dir, &name)?;
    write_json(&dir.join(format!("{name}.manifest.json")), &m)
}

fn train_lm(root: &Path, a: TrainLmCmd) -> Result<()> {
    let mut c: TrainLmConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainLmConfig::default(),
    };
    if let Some(v) = a.arch {
        c.model.arch = v.into();
    }
    c.model.embed_dim = a.embed_dim.or(c.model.embed_dim);
    c.model.hidden_dim = a.hidden_dim.or(c.model.hidden_dim);
    c.model.num_layers = a.num_layers.or(c.model.num_layers);
    if let Some(v) = a.num_examples {
        c.train.num_examples = v;
    }
    c.train.epochs = a.epochs.or(c.train.epochs);
    if let Some(v) = a.batch_size {
        c.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        c.train.optimizer.lr = v;
    }
    if let Some(v) = a.token_swap {
        c.noise.token_swap_prob = v;
    }
    if let Some(v) = a.state_dropout {
        c.noise.state_dropout_prob = v;
    }
    let (header, _) = load_tokens(&a.corpus)?;
    let lm_cfg = c.model.lm_config(header.vocab_size);
    lm_cfg.validate()?;
    let train_cfg = c.train.with(a.seed, c.noise);
    train_cfg.validate()?;
    stage_train(&resolve(root, &a.out), &a.corpus, &lm_cfg, &train_cfg)?;
    Ok(())
}

fn make_surprising(root: &Path, a: MakeSurprising) -> Result<()> {
    let out = resolve(root, &a.out);
    let mut m = Manifest::new("make-surprising", Some(a.seed), &serde_json::json!({
        "num_contexts": a.num_contexts,
        "max_walk_len": a.max_walk_len,
        "top_k": a.top_k,
    }))?;
    let contexts: Vec<SurprisingContext> = match (&a.dfa, &a.corpus, &a.model) {
        (Some(d), _, _) => {
            m.add_input("dfa", d)?;
            dfa_contexts(&load_dfa(d)?, a.num_contexts, a.max_walk_len, a.seed)?
        }
        (None, Some(c), Some(model)) => {
            let counts_path = a.counts_corpus.as_ref().unwrap_or(c);
            m.add_input("corpus", c)?;
            m.add_input("counts_corpus", counts_path)?;
            m.add_input("model", model)?;
            let (_, sentences) = load_tokens(c)?;
            let (h, counted) = load_tokens(counts_path)?;
            let counts = count_corpus(&counted, h.vocab_size)?;
            let lm = load_model(model)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            make_surprising_natural(&lm, &sentences, &counts, a.top_k, a.num_contexts, &mut rng)?
        }
        _ => bail!("give --dfa, or --corpus with --model"),
    };
    write_json(&out, &contexts)?;
    write_sidecar(&out, m)
}

fn run_suite_cmd(root: &Path, a: RunSuite) -> Result<()> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let LanguageConfig::Dfa { count, corpus, .. } = &mut cfg.language {
        if let Some(v) = a.languages {
            *count = v;
        }
        if let Some(v) = a.num_train {
            corpus.num_train = v;
        }
    } else if a.languages.is_some() || a.num_train.is_some() {
        bail!("--languages and --num-train apply to automaton languages only");
    }
    if let Some(v) = a.num_examples {
        cfg.train.num_examples = v;
    }
    if let Some(v) = a.num_contexts {
        cfg.num_contexts = v;
    }
    let out = resolve(root, &a.out);
    let reports = run_suite(&out, &cfg, a.seed)?;
    for r in &reports {
        let best = r
            .rows
            .iter()
            .filter(|row| !row.per_seed.is_empty())
            .max_by(|x, y| x.mean_acc.total_cmp(&y.mean_acc));
        if let Some(b) = best {
            println!("{} {} {}: best {} ({:.4})", r.meta.language, r.meta.arch, r.meta.noise, b.hypothesis, b.mean_acc);
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn fit_lambda_cmd(root: &Path, a: FitLambda) -> Result<()> {
    let lm = load_model(&a.model)?;
    let contexts: Vec<SurprisingContext> = read_json(&a.contexts)?;
    let dfa;
    let counts;
    let predictors = match (&a.dfa, &a.corpus) {
        (Some(d), _) => {
            dfa = load_dfa(d)?;
            Predictors {
                local: LocalSource::dfa(&dfa)?,
                global: GlobalSource::DfaExact(&dfa),
                unigram: ground_truth_unigram(&dfa)?,
                restart: None,
            }
        }
        (None, Some(c)) => {
            let (h, seqs) = load_tokens(c)?;
            counts = count_corpus(&seqs, h.vocab_size)?;
            Predictors {
                local: LocalSource::BigramCounts(&counts),
                global: GlobalSource::BeamLm {
                    helper: &lm,
                    beam_width: a.beam_width,
                },
                unigram: surprise_core::corpus::unigram_dist(&counts)?,
                restart: None,
            }
        }
        _ => bail!("give --dfa or --corpus"),
    };
    let cases = contexts
        .iter()
        .map(|c| {
            Ok(FitCase {
                local: predictors.predict(&Hypothesis::Local, c, &lm)?,
                global: predictors.predict(&Hypothesis::Global, c, &lm)?,
                target: lm.next_dist(&c.full_context())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let family = match a.family {
        FamilyArg::Linear => Family::Linear,
        FamilyArg::Loglinear => Family::Loglinear,
    };
    let tie = match a.tie {
        TieArg::Complementary => TieMode::Complementary,
        TieArg::Free => TieMode::Free,
    };
    let fit = fit_lambda(family, tie, &cases, a.grid_step, a.grid_step_2d)?;
    println!("{} accuracy {:.6}", serde_json::to_string(&fit.params)?, fit.accuracy);
    let out = resolve(root, &a.out);
    write_json(&out, &fit)?;
    let mut m = Manifest::new("fit-lambda", None, &serde_json::json!({
        "family": family,
        "tie_mode": tie,
        "grid_step": a.grid_step,
        "grid_step_2d": a.grid_step_2d,
        "beam_width": a.beam_width,
    }))?;
    m.add_input("model", &a.model)?;
    m.add_input("contexts", &a.contexts)?;
    write_sidecar(&out, m)
}

fn verify_theory(root: &Path, a: VerifyTheory) -> Result<bool> {
    let mut cfg: TheoryConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TheoryConfig::default(),
    };
    if let Some(n) = a.num_tasks {
        cfg.num_tasks = n;
    }
    let out = resolve(root, &a.out);
    let outcome = run_theory(&out, &cfg, a.seed, a.self_test)?;
    println!(
        "stated bound: {}/{} trials pass",
        outcome.stated.len() - outcome.stated_failures(),
        outcome.stated.len()
    );
    for (name, trials) in &outcome.mutants {
        let failed = trials.iter().filter(|t| !t.pass).count();
        println!("mutant {name}: {failed}/{} trials fail", trials.len());
    }
    let ok = outcome.success(a.self_test);
    if !ok {
        if outcome.stated_failures() > 0 {
            eprintln!("bound violated; see {}", out.join("summary.csv").display());
        } else {
            eprintln!("self-test: no mutant was caught");
        }
    }
    Ok(ok)
}

fn plot(root: &Path, a: Plot) -> Result<()> {
    let reports: Vec<HypothesisReport> = read_json(&a.reports)?;
    let out = resolve(root, &a.out);
    for name in write_figures(&out, &reports)? {
        println!("{}", out.join(name).display());
    }
    Ok(())
}
