//! `verify-theory`: the bound sweep over random synthetic tasks.

use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;
use surprise_theory::verify::write_summary_csv;
use surprise_theory::{check_proposition, train_triple, BoundVariant, PropositionReport, SyntheticTask, TrialSummary};

use crate::artifacts::{write_atomic, write_json, Manifest};
use crate::config::TheoryConfig;
use crate::pipeline::MANIFEST;
use crate::seeds::derive;

/// Deliberately wrong bounds run in self-test mode.
pub const MUTANTS: [BoundVariant; 2] = [BoundVariant::HALF_EXPONENT, BoundVariant::PER_CONTEXT];

#[derive(Debug, Clone, Serialize)]
pub struct TheoryOutcome {
    pub stated: Vec<TrialSummary>,
    /// Per mutant, its trials.
    pub mutants: Vec<(String, Vec<TrialSummary>)>,
}

impl TheoryOutcome {
    pub fn stated_failures(&self) -> usize {
        self.stated.iter().filter(|t| !t.pass).count()
    }

    pub fn mutant_failures(&self) -> usize {
        self.mutants.iter().flat_map(|(_, t)| t).filter(|t| !t.pass).count()
    }

    /// Success means every stated trial passed and, in self-test mode, at
    /// least one mutant trial failed.
    pub fn success(&self, self_test: bool) -> bool {
        self.stated_failures() == 0 && (!self_test || self.mutant_failures() > 0)
    }
}

struct TaskResult {
    stated: Vec<(TrialSummary, PropositionReport)>,
    mutants: Vec<Vec<TrialSummary>>,
}

fn run_task(cfg: &TheoryConfig, task_seed: u64, self_test: bool) -> Result<TaskResult> {
    let task = SyntheticTask::random(&cfg.task.with_seed(task_seed))?;
    let mut stated = Vec::new();
    let mut mutants = vec![Vec::new(); MUTANTS.len()];
    for &lambda in &cfg.lambdas {
        let triple = train_triple(&task, lambda, cfg.tol)?;
        let r = check_proposition(&task, &triple, lambda, cfg.tol, BoundVariant::STATED)?;
        stated.push((TrialSummary::from_report(task_seed, &r), r));
        if self_test {
            for (v, out) in MUTANTS.iter().zip(&mut mutants) {
                let r = check_proposition(&task, &triple, lambda, cfg.tol, *v)?;
                out.push(TrialSummary::from_report(task_seed, &r));
            }
        }
    }
    Ok(TaskResult { stated, mutants })
}

pub fn run_theory(out: &Path, cfg: &TheoryConfig, seed: u64, self_test: bool) -> Result<TheoryOutcome> {
    cfg.validate()?;
    let results = (0..cfg.num_tasks)
        .into_par_iter()
        .map(|t| run_task(cfg, derive(seed, &format!("task/{t}")), self_test))
        .collect::<Result<Vec<_>>>()?;

    let mut stated = Vec::new();
    let mut reports = Vec::new();
    let mut mutants: Vec<(String, Vec<TrialSummary>)> = MUTANTS.iter().map(|v| (v.name(), Vec::new())).collect();
    for r in results {
        for (s, rep) in r.stated {
            stated.push(s);
            reports.push(rep);
        }
        if self_test {
            for ((_, acc), m) in mutants.iter_mut().zip(r.mutants) {
                acc.extend(m);
            }
        }
    }
    if !self_test {
        mutants.clear();
    }
    let outcome = TheoryOutcome { stated, mutants };

    let mut outputs = vec!["summary.csv", "reports.json"];
    write_atomic(&out.join("summary.csv"), |w| Ok(write_summary_csv(w, &outcome.stated)?))?;
    write_json(&out.join("reports.json"), &reports)?;
    if self_test {
        write_atomic(&out.join("self_test.csv"), |w| {
            let rows: Vec<TrialSummary> = outcome.mutants.iter().flat_map(|(_, t)| t.clone()).collect();
            Ok(write_summary_csv(w, &rows)?)
        })?;
        outputs.push("self_test.csv");
    }
    #[derive(Serialize)]
    struct Request<'a> {
        config: &'a TheoryConfig,
        self_test: bool,
    }
    let mut manifest = Manifest::new("verify-theory", Some(seed), &Request { config: cfg, self_test })?;
    for o in outputs {
        manifest.add_output(out, o)?;
    }
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(outcome)
}
