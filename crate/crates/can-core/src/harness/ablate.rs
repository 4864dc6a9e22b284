//! The ablation grid: attention variants plus the segmentation comparison,
//! each scored by k-fold cross-validation.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::features::dataset::{PreparedUtterance, Segmentation};
use crate::harness::kfold::{kfold_sequential, KfoldReport};

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub name: &'static str,
    pub report: KfoldReport,
}

#[derive(Debug, Clone)]
pub struct AblateReport {
    pub rows: Vec<VariantOutcome>,
}

/// Name, flag settings (stop-gradient, align loss, cross attention), and
/// whether the variant consumes the equal-segmentation preparation.
const VARIANTS: [(&str, bool, bool, bool, bool); 6] = [
    ("full", true, true, true, false),
    ("no-stop-gradient", false, true, true, false),
    ("no-align-loss", true, false, true, false),
    ("no-sg-no-align", false, false, true, false),
    ("no-cross-attention", false, false, false, false),
    ("equal-segmentation", true, true, true, true),
];

fn variant_config(
    base: &ModelConfig,
    stop_gradient: bool,
    align_loss: bool,
    cross_attention: bool,
    equal: bool,
) -> ModelConfig {
    let mut config = base.clone();
    config.use_stop_gradient = stop_gradient;
    config.use_align_loss = align_loss;
    config.use_cross_attention = cross_attention;
    config.segmentation = if equal {
        Segmentation::Equal
    } else {
        Segmentation::Aligned
    };
    config
}

fn run_variants(
    aligned: &[PreparedUtterance],
    equal: &[PreparedUtterance],
    base: &ModelConfig,
    runner: &dyn Fn(&[PreparedUtterance], &ModelConfig) -> Result<KfoldReport>,
) -> Result<Vec<VariantOutcome>> {
    VARIANTS
        .iter()
        .map(|&(name, sg, align, cross, uses_equal)| {
            let config = variant_config(base, sg, align, cross, uses_equal);
            let data = if uses_equal { equal } else { aligned };
            Ok(VariantOutcome {
                name,
                report: runner(data, &config)?,
            })
        })
        .collect()
}

/// Scores all six variants. `aligned` and `equal` are the same utterances
/// prepared under the two segmentation policies; every variant sees the same
/// folds and seeds.
pub fn ablate_sequential(
    aligned: &[PreparedUtterance],
    equal: &[PreparedUtterance],
    base: &ModelConfig,
    folds: usize,
    seed: u64,
) -> Result<AblateReport> {
    let rows = run_variants(aligned, equal, base, &|data, config| {
        kfold_sequential(data, config, folds, seed)
    })?;
    Ok(AblateReport { rows })
}

#[cfg(feature = "parallel")]
pub fn ablate_parallel(
    aligned: &[PreparedUtterance],
    equal: &[PreparedUtterance],
    base: &ModelConfig,
    folds: usize,
    seed: u64,
) -> Result<AblateReport> {
    use rayon::prelude::*;
    let rows = VARIANTS
        .par_iter()
        .map(|&(name, sg, align, cross, uses_equal)| {
            let config = variant_config(base, sg, align, cross, uses_equal);
            let data = if uses_equal { equal } else { aligned };
            Ok(VariantOutcome {
                name,
                report: crate::harness::kfold::kfold_parallel(data, &config, folds, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblateReport { rows })
}

/// Runs variants (and their folds) in parallel when the `parallel` feature
/// is enabled.
pub fn ablate(
    aligned: &[PreparedUtterance],
    equal: &[PreparedUtterance],
    base: &ModelConfig,
    folds: usize,
    seed: u64,
) -> Result<AblateReport> {
    #[cfg(feature = "parallel")]
    {
        ablate_parallel(aligned, equal, base, folds, seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        ablate_sequential(aligned, equal, base, folds, seed)
    }
}

/// One row per variant with WA±std and UA±std columns.
pub fn format_ablate_table(report: &AblateReport) -> String {
    let mut out = String::from("variant                        wa              ua\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{:<24} {:>6.4}±{:<6.4} {:>6.4}±{:<6.4}\n",
            row.name, row.report.wa_mean, row.report.wa_std, row.report.ua_mean, row.report.ua_std
        ));
    }
    out
}

/// One JSON object per variant row.
pub fn ablate_records(report: &AblateReport) -> String {
    let mut out = String::new();
    for row in &report.rows {
        let record = serde_json::json!({
            "variant": row.name,
            "wa_mean": row.report.wa_mean,
            "wa_std": row.report.wa_std,
            "ua_mean": row.report.ua_mean,
            "ua_std": row.report.ua_std,
            "folds": row.report.folds.len(),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}
