//! Inference-time evaluation: fused predictions, metrics, attention dumps.

use crate::attention::format_weights_table;
use crate::error::{Error, Result};
use crate::features::dataset::PreparedUtterance;
use crate::model::CanModel;
use crate::objective::{final_prediction, metrics, MetricReport};

/// Rejects utterances whose tokens or labels fall outside the model's
/// vocabulary and class list.
pub fn check_compatibility(model: &CanModel, data: &[PreparedUtterance]) -> Result<()> {
    let vocab = model.config.vocabulary.len();
    let classes = model.config.class_count();
    for utt in data {
        if let Some(&id) = utt.token_ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Config(format!(
                "utterance '{}' holds token id {id} outside the vocabulary of {vocab}",
                utt.id
            )));
        }
        if utt.label >= classes {
            return Err(Error::Config(format!(
                "utterance '{}' holds label {} outside the {classes} classes",
                utt.id, utt.label
            )));
        }
    }
    Ok(())
}

/// Fused class decision per utterance, in input order.
pub fn predict_labels(model: &CanModel, data: &[PreparedUtterance]) -> Result<Vec<usize>> {
    check_compatibility(model, data)?;
    let alpha = model.config.effective_alpha();
    data.iter()
        .map(|utt| {
            let pass = model.forward(utt, false)?;
            let (class, _) = final_prediction(
                &pass.predictions.fused.to_vec(),
                &pass.predictions.text.to_vec(),
                &pass.predictions.audio.to_vec(),
                alpha,
            );
            Ok(class)
        })
        .collect()
}

pub fn evaluate(model: &CanModel, data: &[PreparedUtterance]) -> Result<MetricReport> {
    let predicted = predict_labels(model, data)?;
    let truth: Vec<usize> = data.iter().map(|u| u.label).collect();
    metrics(&predicted, &truth, model.config.class_count())
}

/// Per-step attention weights of one utterance as a text table.
pub fn attention_report(model: &CanModel, utterance: &PreparedUtterance) -> Result<String> {
    let pass = model.forward(utterance, false)?;
    Ok(format!(
        "utterance {}\n{}",
        utterance.id,
        format_weights_table(&utterance.words, &pass.bundle.weights)
    ))
}

/// Text rendering of a metric report with the confusion matrix.
pub fn format_metrics(report: &MetricReport, classes: &[String]) -> String {
    let mut out = format!("WA {:.4}  UA {:.4}\n", report.wa, report.ua);
    let width = classes.iter().map(|c| c.len()).max().unwrap_or(5).max(5);
    out.push_str(&format!("{:width$}", "truth"));
    for class in classes {
        out.push_str(&format!(" {class:>width$}"));
    }
    out.push('\n');
    for (c, row) in report.confusion.iter().enumerate() {
        out.push_str(&format!("{:width$}", classes[c]));
        for count in row {
            out.push_str(&format!(" {count:>width$}"));
        }
        out.push('\n');
    }
    out
}
