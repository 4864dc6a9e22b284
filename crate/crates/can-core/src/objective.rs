//! Prediction heads, the composite training loss, the multiplicative
//! inference-time fusion rule, and WA/UA metrics.

use rand::Rng;

use crate::attention::ContextBundle;
use crate::autodiff::{Tensor, PROB_FLOOR};
use crate::encoders::uniform_init;
use crate::error::{Error, Result};

/// Affine-plus-softmax classifiers over the fused context and over each
/// single-modality context.
pub struct PredictionHeads {
    pub fused_weight: Tensor,
    pub fused_bias: Tensor,
    pub text_weight: Tensor,
    pub text_bias: Tensor,
    pub audio_weight: Tensor,
    pub audio_bias: Tensor,
    pub classes: usize,
}

impl PredictionHeads {
    /// `fused_width` is 8·D_h with cross attention, 4·D_h without; the
    /// single-modality heads always see 2·D_h.
    pub fn init<R: Rng>(
        fused_width: usize,
        context_width: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<PredictionHeads> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        let head = |rng: &mut R, width: usize| -> Result<(Tensor, Tensor)> {
            let bound = 1.0 / (width as f64).sqrt();
            let weight =
                Tensor::param(uniform_init(rng, width * classes, bound), &[width, classes])?;
            let bias = Tensor::param(vec![0.0; classes], &[1, classes])?;
            Ok((weight, bias))
        };
        let (fused_weight, fused_bias) = head(rng, fused_width)?;
        let (text_weight, text_bias) = head(rng, context_width)?;
        let (audio_weight, audio_bias) = head(rng, context_width)?;
        Ok(PredictionHeads {
            fused_weight,
            fused_bias,
            text_weight,
            text_bias,
            audio_weight,
            audio_bias,
            classes,
        })
    }

    pub fn named_params(&self, out: &mut Vec<(String, Tensor)>) {
        out.push(("heads.fused.weight".into(), self.fused_weight.clone()));
        out.push(("heads.fused.bias".into(), self.fused_bias.clone()));
        out.push(("heads.text.weight".into(), self.text_weight.clone()));
        out.push(("heads.text.bias".into(), self.text_bias.clone()));
        out.push(("heads.audio.weight".into(), self.audio_weight.clone()));
        out.push(("heads.audio.bias".into(), self.audio_bias.clone()));
    }
}

/// The three class distributions of one utterance, each a length-C tensor.
#[derive(Debug)]
pub struct Predictions {
    pub fused: Tensor,
    pub text: Tensor,
    pub audio: Tensor,
}

fn head_softmax(input: &Tensor, weight: &Tensor, bias: &Tensor, classes: usize) -> Result<Tensor> {
    input
        .matmul(weight)?
        .add(bias)?
        .reshape(&[classes])?
        .softmax()
}

/// Runs all three heads. The fused head sees [c^(TT); c^(TA); c^(AA); c^(AT)]
/// when the crossed contexts exist and [c^(TT); c^(AA)] otherwise; the text
/// and audio heads see only their own context.
pub fn predict(bundle: &ContextBundle, heads: &PredictionHeads) -> Result<Predictions> {
    let fused_input = match (&bundle.ta, &bundle.at) {
        (Some(ta), Some(at)) => Tensor::concat(
            &[bundle.tt.clone(), ta.clone(), bundle.aa.clone(), at.clone()],
            1,
        )?,
        (None, None) => Tensor::concat(&[bundle.tt.clone(), bundle.aa.clone()], 1)?,
        _ => {
            return Err(Error::InvalidInput(
                "crossed contexts must be both present or both absent".into(),
            ))
        }
    };
    Ok(Predictions {
        fused: head_softmax(
            &fused_input,
            &heads.fused_weight,
            &heads.fused_bias,
            heads.classes,
        )?,
        text: head_softmax(
            &bundle.tt,
            &heads.text_weight,
            &heads.text_bias,
            heads.classes,
        )?,
        audio: head_softmax(
            &bundle.aa,
            &heads.audio_weight,
            &heads.audio_bias,
            heads.classes,
        )?,
    })
}

/// Composite loss of one utterance. All three scalars stay in the graph;
/// `total` is always `main + alpha·align`, so with alpha = 0 the auxiliary
/// heads still receive (exactly zero) gradients.
#[derive(Debug)]
pub struct LossReport {
    pub total: Tensor,
    pub main: Tensor,
    pub align: Tensor,
    pub alpha: f64,
}

pub fn compute_loss(predictions: &Predictions, label: usize, alpha: f64) -> Result<LossReport> {
    if alpha < 0.0 {
        return Err(Error::InvalidInput(format!(
            "loss weight must be nonnegative, got {alpha}"
        )));
    }
    if label >= predictions.fused.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            predictions.fused.len()
        )));
    }
    let main = predictions.fused.cross_entropy(label)?;
    let align = predictions
        .text
        .cross_entropy(label)?
        .add(&predictions.audio.cross_entropy(label)?)?;
    let total = main.add(&align.scale(alpha))?;
    Ok(LossReport {
        total,
        main,
        align,
        alpha,
    })
}

/// Mean of per-utterance losses; the returned tensors backpropagate into
/// every contributing report.
pub fn mean_loss(reports: &[LossReport]) -> Result<LossReport> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("cannot average zero losses".into()));
    }
    let alpha = reports[0].alpha;
    let stack = |pick: &dyn Fn(&LossReport) -> Tensor| -> Result<Tensor> {
        let parts: Vec<Tensor> = reports
            .iter()
            .map(|r| pick(r).reshape(&[1]))
            .collect::<Result<_>>()?;
        Ok(Tensor::concat(&parts, 0)?.mean())
    };
    Ok(LossReport {
        total: stack(&|r| r.total.clone())?,
        main: stack(&|r| r.main.clone())?,
        align: stack(&|r| r.align.clone())?,
        alpha,
    })
}

/// Unnormalized fusion scores: y · y_text^alpha · y_audio^alpha elementwise,
/// probabilities floored before the exponent.
pub fn fused_scores(fused: &[f64], text: &[f64], audio: &[f64], alpha: f64) -> Vec<f64> {
    fused
        .iter()
        .zip(text)
        .zip(audio)
        .map(|((y, yt), ya)| {
            y.max(PROB_FLOOR) * yt.max(PROB_FLOOR).powf(alpha) * ya.max(PROB_FLOOR).powf(alpha)
        })
        .collect()
}

/// Inference-time class decision: argmax of the fusion scores, ties broken
/// toward the lowest index. Also returns the scores normalized to sum 1 for
/// display.
pub fn final_prediction(
    fused: &[f64],
    text: &[f64],
    audio: &[f64],
    alpha: f64,
) -> (usize, Vec<f64>) {
    let scores = fused_scores(fused, text, audio, alpha);
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let sum: f64 = scores.iter().sum();
    let normalized = scores.iter().map(|s| s / sum).collect();
    (best, normalized)
}

/// Overall accuracy, macro recall over classes present in the truth set, and
/// the truth-by-prediction confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub wa: f64,
    pub ua: f64,
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics(predicted: &[usize], truth: &[usize], classes: usize) -> Result<MetricReport> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "need equal nonzero label counts, got {} predicted and {} true",
            predicted.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::InvalidInput(format!(
                "label out of range for {classes} classes"
            )));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let wa = correct as f64 / truth.len() as f64;
    let mut recall_sum = 0.0;
    let mut supported = 0usize;
    for (c, row) in confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support > 0 {
            recall_sum += row[c] as f64 / support as f64;
            supported += 1;
        }
    }
    Ok(MetricReport {
        wa,
        ua: recall_sum / supported as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionWeights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_context(r: &mut ChaCha8Rng, width: usize) -> Tensor {
        let values: Vec<f64> = (0..width).map(|_| r.gen_range(-1.0..1.0)).collect();
        Tensor::param(values, &[1, width]).unwrap()
    }

    fn bundle(r: &mut ChaCha8Rng, width: usize, crossed: bool) -> ContextBundle {
        ContextBundle {
            tt: random_context(r, width),
            ta: crossed.then(|| random_context(r, width)),
            aa: random_context(r, width),
            at: crossed.then(|| random_context(r, width)),
            weights: AttentionWeights {
                text: vec![],
                audio: vec![],
            },
        }
    }

    fn zero_heads(fused_width: usize, context_width: usize, classes: usize) -> PredictionHeads {
        let mut r = rng(0);
        let heads = PredictionHeads::init(fused_width, context_width, classes, &mut r).unwrap();
        for tensor in [&heads.fused_weight, &heads.text_weight, &heads.audio_weight] {
            let zeros = vec![0.0; tensor.len()];
            tensor.set_values(zeros).unwrap();
        }
        heads
    }

    #[test]
    fn zero_parameters_predict_uniformly() {
        let mut r = rng(1);
        let b = bundle(&mut r, 4, true);
        let heads = zero_heads(16, 4, 5);
        let p = predict(&b, &heads).unwrap();
        for output in [&p.fused, &p.text, &p.audio] {
            for v in output.to_vec() {
                assert!((v - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn known_logits_give_known_softmax() {
        let logits = Tensor::param(vec![3.0_f64.ln(), 0.0], &[2]).unwrap();
        let probs = logits.softmax().unwrap().to_vec();
        assert!((probs[0] - 0.75).abs() < 1e-12);
        assert!((probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn outputs_sum_to_one() {
        let mut r = rng(2);
        let b = bundle(&mut r, 6, true);
        let heads = PredictionHeads::init(24, 6, 4, &mut r).unwrap();
        let p = predict(&b, &heads).unwrap();
        for output in [&p.fused, &p.text, &p.audio] {
            let sum: f64 = output.to_vec().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn text_head_ignores_other_contexts() {
        let mut r = rng(3);
        let mut b = bundle(&mut r, 4, true);
        let heads = PredictionHeads::init(16, 4, 3, &mut r).unwrap();
        let before = predict(&b, &heads).unwrap().text.to_vec();
        b.ta = Some(random_context(&mut r, 4));
        b.aa = random_context(&mut r, 4);
        b.at = Some(random_context(&mut r, 4));
        let after = predict(&b, &heads).unwrap().text.to_vec();
        assert_eq!(before, after);
    }

    #[test]
    fn fused_head_without_cross_attention_uses_two_contexts() {
        let mut r = rng(4);
        let b = bundle(&mut r, 4, false);
        let heads = PredictionHeads::init(8, 4, 3, &mut r).unwrap();
        let p = predict(&b, &heads).unwrap();
        let sum: f64 = p.fused.to_vec().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn partial_crossed_contexts_are_rejected() {
        let mut r = rng(5);
        let mut b = bundle(&mut r, 4, true);
        b.at = None;
        let heads = PredictionHeads::init(16, 4, 3, &mut r).unwrap();
        assert!(matches!(
            predict(&b, &heads).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    fn manual_predictions(fused: Vec<f64>, text: Vec<f64>, audio: Vec<f64>) -> Predictions {
        let n = fused.len();
        Predictions {
            fused: Tensor::param(fused, &[n]).unwrap(),
            text: Tensor::param(text, &[n]).unwrap(),
            audio: Tensor::param(audio, &[n]).unwrap(),
        }
    }

    #[test]
    fn correct_one_hot_predictions_cost_nothing() {
        let p = manual_predictions(
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        );
        let report = compute_loss(&p, 0, 0.1).unwrap();
        assert_eq!(report.total.value(), 0.0);
    }

    #[test]
    fn uniform_predictions_match_closed_form() {
        let uniform = vec![0.25; 4];
        let p = manual_predictions(uniform.clone(), uniform.clone(), uniform);
        let report = compute_loss(&p, 2, 0.1).unwrap();
        let expected = 1.2 * 4.0_f64.ln();
        assert!((report.total.value() - expected).abs() < 1e-4);
        assert!((report.total.value() - 1.6636).abs() < 1e-4);
    }

    #[test]
    fn loss_decomposition_identity_holds() {
        let mut r = rng(6);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..3).map(|_| r.gen_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let p = manual_predictions(probs.clone(), probs.clone(), probs);
            let alpha = r.gen_range(0.0..1.0);
            let report = compute_loss(&p, 1, alpha).unwrap();
            let recombined = report.main.value() + alpha * report.align.value();
            assert!((report.total.value() - recombined).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_alpha_total_is_exactly_the_main_loss() {
        let p = manual_predictions(
            vec![0.7, 0.2, 0.1],
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.8, 0.1],
        );
        let report = compute_loss(&p, 0, 0.0).unwrap();
        assert_eq!(report.total.value(), report.main.value());
    }

    #[test]
    fn zero_alpha_still_populates_auxiliary_gradients() {
        let mut r = rng(7);
        let b = bundle(&mut r, 4, true);
        let heads = PredictionHeads::init(16, 4, 3, &mut r).unwrap();
        let p = predict(&b, &heads).unwrap();
        let report = compute_loss(&p, 1, 0.0).unwrap();
        report.total.backward().unwrap();
        for tensor in [&heads.text_weight, &heads.text_bias, &heads.audio_weight] {
            let grad = tensor.grad().expect("gradient must be populated");
            assert!(grad.iter().all(|g| *g == 0.0));
        }
        assert!(heads.fused_weight.grad().unwrap().iter().any(|g| *g != 0.0));
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let p = manual_predictions(vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]);
        assert!(matches!(
            compute_loss(&p, 2, 0.1).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn batch_loss_is_the_mean() {
        let a = compute_loss(
            &manual_predictions(vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]),
            0,
            0.1,
        )
        .unwrap();
        let b = compute_loss(
            &manual_predictions(vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]),
            0,
            0.1,
        )
        .unwrap();
        let expected = (a.total.value() + b.total.value()) / 2.0;
        let mean = mean_loss(&[a, b]).unwrap();
        assert!((mean.total.value() - expected).abs() < 1e-12);
        let recombined = mean.main.value() + 0.1 * mean.align.value();
        assert!((mean.total.value() - recombined).abs() < 1e-9);
    }

    #[test]
    fn all_uniform_fusion_breaks_ties_low() {
        let uniform = vec![0.25; 4];
        let (class, scores) = final_prediction(&uniform, &uniform, &uniform, 0.1);
        assert_eq!(class, 0);
        for s in scores {
            assert!((s - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_auxiliaries_preserve_the_main_argmax() {
        let fused = vec![0.1, 0.6, 0.3];
        let uniform = vec![1.0 / 3.0; 3];
        let (class, _) = final_prediction(&fused, &uniform, &uniform, 0.7);
        assert_eq!(class, 1);
    }

    #[test]
    fn fusion_example_matches_direct_evaluation() {
        let fused = vec![0.5, 0.5];
        let text = vec![0.9, 0.1];
        let audio = vec![0.2, 0.8];
        let scores = fused_scores(&fused, &text, &audio, 0.1);
        let expected0 = 0.5 * 0.9_f64.powf(0.1) * 0.2_f64.powf(0.1);
        let expected1 = 0.5 * 0.1_f64.powf(0.1) * 0.8_f64.powf(0.1);
        assert!((scores[0] - expected0).abs() < 1e-15);
        assert!((scores[1] - expected1).abs() < 1e-15);
        let (class, _) = final_prediction(&fused, &text, &audio, 0.1);
        assert_eq!(class, 0);
    }

    #[test]
    fn log_path_matches_the_product_path() {
        let mut r = rng(8);
        for _ in 0..100 {
            let draw = |r: &mut ChaCha8Rng| -> Vec<f64> {
                let raw: Vec<f64> = (0..4).map(|_| r.gen_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.iter().map(|v| v / sum).collect()
            };
            let fused = draw(&mut r);
            let text = draw(&mut r);
            let audio = draw(&mut r);
            let alpha = r.gen_range(0.0..1.0);
            let scores = fused_scores(&fused, &text, &audio, alpha);
            for c in 0..4 {
                let log_score = fused[c].max(PROB_FLOOR).ln()
                    + alpha * text[c].max(PROB_FLOOR).ln()
                    + alpha * audio[c].max(PROB_FLOOR).ln();
                assert!((scores[c].ln() - log_score).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn boosting_one_class_raises_its_normalized_score() {
        let fused = vec![0.3, 0.3, 0.4];
        let text = vec![0.2, 0.5, 0.3];
        let audio = vec![0.4, 0.3, 0.3];
        let (_, before) = final_prediction(&fused, &text, &audio, 0.5);
        let boosted = vec![0.6, 0.3, 0.4];
        let (_, after) = final_prediction(&boosted, &text, &audio, 0.5);
        assert!(after[0] > before[0]);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let report = metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(report.wa, 1.0);
        assert_eq!(report.ua, 1.0);
    }

    #[test]
    fn skewed_predictions_match_hand_computation() {
        let report = metrics(&[0, 0, 0, 0], &[0, 0, 0, 1], 2).unwrap();
        assert!((report.wa - 0.75).abs() < 1e-12);
        assert!((report.ua - 0.5).abs() < 1e-12);
        assert_eq!(report.confusion, vec![vec![3, 0], vec![1, 0]]);
    }

    #[test]
    fn absent_classes_are_excluded_from_ua() {
        let report = metrics(&[1, 1, 1], &[1, 1, 1], 4).unwrap();
        assert_eq!(report.wa, 1.0);
        assert_eq!(report.ua, 1.0);
    }

    #[test]
    fn confusion_rows_sum_to_supports() {
        let truth = [0, 0, 1, 2, 2, 2];
        let predicted = [0, 1, 1, 0, 2, 2];
        let report = metrics(&predicted, &truth, 3).unwrap();
        let supports: Vec<usize> = report
            .confusion
            .iter()
            .map(|row| row.iter().sum())
            .collect();
        assert_eq!(supports, vec![2, 1, 3]);
    }

    #[test]
    fn empty_or_mismatched_labels_are_rejected() {
        assert!(metrics(&[], &[], 2).is_err());
        assert!(metrics(&[0], &[0, 1], 2).is_err());
        assert!(metrics(&[5], &[0], 2).is_err());
    }
}
