//! SVG figures from suite reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use surprise_core::eval::{mean, sample_std, HypothesisReport};
use surprise_core::plot::{grouped_bar_chart, line_chart, Bar, Series};

use crate::artifacts::write_text;

/// Hypothesis labels in first-seen order across reports.
fn hypothesis_order(reports: &[&HypothesisReport]) -> Vec<String> {
    let mut order = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !order.contains(&row.hypothesis) {
                order.push(row.hypothesis.clone());
            }
        }
    }
    order
}

/// Per-seed accuracies of one hypothesis pooled over reports.
fn pooled(reports: &[&HypothesisReport], hypothesis: &str) -> Vec<f64> {
    reports
        .iter()
        .filter_map(|r| r.row(hypothesis))
        .flat_map(|row| row.per_seed.iter().map(|s| s.acc))
        .collect()
}

fn bar(label: &str, accs: &[f64]) -> Bar {
    Bar {
        label: label.into(),
        value: if accs.is_empty() { 0.0 } else { mean(accs) },
        error: sample_std(accs),
    }
}

/// Bars per hypothesis, one series per key, pooled over seeds and languages.
fn grouped<K: Ord + Clone + AsRef<str>>(title: &str, by: &BTreeMap<K, Vec<&HypothesisReport>>) -> String {
    let all: Vec<&HypothesisReport> = by.values().flatten().copied().collect();
    let categories = hypothesis_order(&all);
    let names: Vec<&str> = by.keys().map(|k| k.as_ref()).collect();
    let groups: Vec<Vec<Bar>> = categories
        .iter()
        .map(|h| by.iter().map(|(k, rs)| bar(k.as_ref(), &pooled(rs, h))).collect())
        .collect();
    grouped_bar_chart(title, "accuracy (1 - mean TV)", &categories, &names, &groups)
}

/// Accuracy by hypothesis and architecture, noiseless models only.
pub fn hypothesis_chart(reports: &[HypothesisReport]) -> Option<String> {
    let mut by: BTreeMap<String, Vec<&HypothesisReport>> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.meta.noise == "none") {
        by.entry(r.meta.arch.clone()).or_default().push(r);
    }
    (!by.is_empty()).then(|| grouped("Accuracy of each hypothesis", &by))
}

/// Mean λ₁ sweep per language and architecture, noiseless models only.
pub fn sweep_chart(reports: &[HypothesisReport]) -> Option<String> {
    let series: Vec<Series> = reports
        .iter()
        .filter(|r| r.meta.noise == "none" && !r.sweeps.is_empty())
        .map(|r| {
            let n = r.sweeps.len() as f64;
            let points = (0..r.sweeps[0].lambda1.len())
                .map(|i| {
                    let acc = r.sweeps.iter().map(|s| s.acc[i]).sum::<f64>() / n;
                    (r.sweeps[0].lambda1[i], acc)
                })
                .collect();
            Series {
                name: format!("{} {}", r.meta.language, r.meta.arch),
                points,
            }
        })
        .collect();
    (!series.is_empty()).then(|| line_chart("Log-linear interpolation sweep", "lambda1 (global weight)", "accuracy", &series))
}

/// Accuracy by hypothesis and noise setting, one chart per architecture
/// trained under more than one setting.
pub fn noise_charts(reports: &[HypothesisReport]) -> Vec<(String, String)> {
    let mut by_arch: BTreeMap<&str, BTreeMap<String, Vec<&HypothesisReport>>> = BTreeMap::new();
    for r in reports {
        by_arch
            .entry(&r.meta.arch)
            .or_default()
            .entry(r.meta.noise.clone())
            .or_default()
            .push(r);
    }
    by_arch
        .into_iter()
        .filter(|(_, by)| by.len() > 1)
        .map(|(arch, by)| (arch.to_string(), grouped(&format!("Training noise, {arch}"), &by)))
        .collect()
}

/// Writes every applicable figure into `dir` and returns the file names.
pub fn write_figures(dir: &Path, reports: &[HypothesisReport]) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let mut put = |name: String, svg: String| -> Result<()> {
        write_text(&PathBuf::from(dir).join(&name), &svg)?;
        written.push(name);
        Ok(())
    };
    if let Some(svg) = hypothesis_chart(reports) {
        put("hypotheses.svg".into(), svg)?;
    }
    if let Some(svg) = sweep_chart(reports) {
        put("lambda_sweep.svg".into(), svg)?;
    }
    for (arch, svg) in noise_charts(reports) {
        put(format!("noise_{arch}.svg"), svg)?;
    }
    Ok(written)
}
