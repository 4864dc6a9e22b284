//! Seeded k-fold cross-validation with per-fold train/validation/test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::dataset::PreparedUtterance;
use crate::harness::eval::evaluate;
use crate::harness::train::train_with_validation;
use crate::objective::MetricReport;

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone)]
pub struct KfoldReport {
    pub folds: Vec<FoldOutcome>,
    pub wa_mean: f64,
    pub wa_std: f64,
    pub ua_mean: f64,
    pub ua_std: f64,
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, variance.sqrt())
}

/// The shuffled index chunks whose fold boundaries are `f·n/k`; chunks are
/// pairwise disjoint and cover `0..n`.
pub fn fold_chunks(count: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_F42D_4C95_7F2D);
    order.shuffle(&mut rng);
    (0..k)
        .map(|f| order[f * count / k..(f + 1) * count / k].to_vec())
        .collect()
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_fold(
    data: &[PreparedUtterance],
    chunks: &[Vec<usize>],
    config: &ModelConfig,
    seed: u64,
    fold: usize,
) -> Result<FoldOutcome> {
    let k = chunks.len();
    let test_ids = &chunks[fold];
    let val_ids = &chunks[(fold + 1) % k];
    let pick = |ids: &[usize]| -> Vec<PreparedUtterance> {
        ids.iter().map(|&i| data[i].clone()).collect()
    };
    let train_set: Vec<PreparedUtterance> = (0..k)
        .filter(|f| *f != fold && *f != (fold + 1) % k)
        .flat_map(|f| chunks[f].iter().map(|&i| data[i].clone()))
        .collect();
    let outcome = train_with_validation(&train_set, &pick(val_ids), config, fold_seed(seed, fold))?;
    let metrics = evaluate(&outcome.model, &pick(test_ids))?;
    Ok(FoldOutcome { fold, metrics })
}

fn summarize(folds: Vec<FoldOutcome>) -> KfoldReport {
    let wa: Vec<f64> = folds.iter().map(|f| f.metrics.wa).collect();
    let ua: Vec<f64> = folds.iter().map(|f| f.metrics.ua).collect();
    let (wa_mean, wa_std) = mean_std(&wa);
    let (ua_mean, ua_std) = mean_std(&ua);
    KfoldReport {
        folds,
        wa_mean,
        wa_std,
        ua_mean,
        ua_std,
    }
}

fn check_kfold_inputs(data: &[PreparedUtterance], k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > data.len() {
        return Err(Error::Config(format!(
            "{k} folds cannot split {} utterances",
            data.len()
        )));
    }
    Ok(())
}

pub fn kfold_sequential(
    data: &[PreparedUtterance],
    config: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<KfoldReport> {
    check_kfold_inputs(data, k)?;
    let chunks = fold_chunks(data.len(), k, seed);
    let folds = (0..k)
        .map(|fold| run_fold(data, &chunks, config, seed, fold))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(folds))
}

#[cfg(feature = "parallel")]
pub fn kfold_parallel(
    data: &[PreparedUtterance],
    config: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<KfoldReport> {
    use rayon::prelude::*;
    check_kfold_inputs(data, k)?;
    let chunks = fold_chunks(data.len(), k, seed);
    let folds = (0..k)
        .into_par_iter()
        .map(|fold| run_fold(data, &chunks, config, seed, fold))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(folds))
}

/// Runs folds in parallel when the `parallel` feature is enabled.
pub fn kfold(
    data: &[PreparedUtterance],
    config: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<KfoldReport> {
    #[cfg(feature = "parallel")]
    {
        kfold_parallel(data, config, k, seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        kfold_sequential(data, config, k, seed)
    }
}

pub fn format_kfold_table(report: &KfoldReport) -> String {
    let mut out = String::from("fold      wa      ua\n");
    for fold in &report.folds {
        out.push_str(&format!(
            "{:<5} {:>7.4} {:>7.4}\n",
            fold.fold, fold.metrics.wa, fold.metrics.ua
        ));
    }
    out.push_str(&format!(
        "mean  {:>7.4} {:>7.4}\nstd   {:>7.4} {:>7.4}\n",
        report.wa_mean, report.ua_mean, report.wa_std, report.ua_std
    ));
    out
}

/// One JSON object per line: each fold's metrics, then the summary.
pub fn kfold_records(report: &KfoldReport) -> String {
    let mut out = String::new();
    for fold in &report.folds {
        let record = serde_json::json!({
            "fold": fold.fold,
            "wa": fold.metrics.wa,
            "ua": fold.metrics.ua,
            "confusion": fold.metrics.confusion,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    let summary = serde_json::json!({
        "wa_mean": report.wa_mean,
        "wa_std": report.wa_std,
        "ua_mean": report.ua_mean,
        "ua_std": report.ua_std,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    out
}
