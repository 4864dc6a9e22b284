//! The full network: embedding, text BLSTM, two-level audio encoder, global
//! cross attention, and the three prediction heads.

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{cross_aggregate, ContextBundle, GlobalQueries};
use crate::autodiff::Tensor;
use crate::config::ModelConfig;
use crate::encoders::{encode_audio, encode_text, Blstm, EmbeddingTable};
use crate::error::{Error, Result};
use crate::features::dataset::PreparedUtterance;
use crate::objective::{predict, PredictionHeads, Predictions};

/// One forward pass's outputs: the three class distributions plus the
/// attention contexts and weights for diagnostics.
#[derive(Debug)]
pub struct ForwardPass {
    pub predictions: Predictions,
    pub bundle: ContextBundle,
}

pub struct CanModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub text_blstm: Blstm,
    pub audio_lower: Blstm,
    pub audio_upper: Blstm,
    pub queries: GlobalQueries,
    pub heads: PredictionHeads,
    rng: RefCell<ChaCha8Rng>,
}

impl CanModel {
    /// Builds all parameters from one seeded stream in a fixed order, so a
    /// seed fully determines the initial state.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<CanModel> {
        config.validate()?;
        if config.vocabulary.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        if config.class_count() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                config.class_count()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = EmbeddingTable::init(config.vocabulary.len(), config.embed_dim, &mut rng);
        let text_blstm = Blstm::init(config.embed_dim, config.hidden_dim, &mut rng);
        let audio_lower = Blstm::init(config.feature_dim, config.hidden_dim, &mut rng);
        let audio_upper = Blstm::init(2 * config.hidden_dim, config.hidden_dim, &mut rng);
        let queries = GlobalQueries::init(2 * config.hidden_dim, config.heads, &mut rng)?;
        let heads = PredictionHeads::init(
            config.fused_width(),
            2 * config.hidden_dim,
            config.class_count(),
            &mut rng,
        )?;
        Ok(CanModel {
            config: config.clone(),
            embedding,
            text_blstm,
            audio_lower,
            audio_upper,
            queries,
            heads,
            rng: RefCell::new(rng),
        })
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.embedding.named_params(&mut out);
        self.text_blstm.named_params("text", &mut out);
        self.audio_lower.named_params("audio.lower", &mut out);
        self.audio_upper.named_params("audio.upper", &mut out);
        self.queries.named_params(&mut out);
        self.heads.named_params(&mut out);
        out
    }

    /// Resets the dropout noise stream; two forwards after identical reseeds
    /// draw identical masks.
    pub fn reseed_dropout(&self, seed: u64) {
        *self.rng.borrow_mut() = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Runs one utterance end to end. `training` enables dropout.
    pub fn forward(&self, utterance: &PreparedUtterance, training: bool) -> Result<ForwardPass> {
        let steps = utterance.token_ids.len();
        if steps == 0 {
            return Err(Error::InvalidInput(format!(
                "utterance '{}' has no steps",
                utterance.id
            )));
        }
        if steps != utterance.segments.segment_count {
            return Err(Error::Dimension(format!(
                "utterance '{}' has {steps} words but {} audio segments",
                utterance.id, utterance.segments.segment_count
            )));
        }
        let mask = vec![true; steps];
        let rng = &mut *self.rng.borrow_mut();
        let embedded = self.embedding.lookup(&utterance.token_ids)?;
        let text = encode_text(
            &embedded,
            &mask,
            &self.text_blstm,
            self.config.dropout,
            training,
            rng,
        )?;
        let audio = encode_audio(
            &utterance.segments,
            &mask,
            &self.audio_lower,
            &self.audio_upper,
            self.config.dropout,
            training,
            rng,
        )?;
        let bundle = cross_aggregate(
            &text,
            &audio,
            &self.queries,
            self.config.use_stop_gradient,
            self.config.use_cross_attention,
        )?;
        let predictions = predict(&bundle, &self.heads)?;
        Ok(ForwardPass {
            predictions,
            bundle,
        })
    }

    pub fn zero_grad(&self) {
        for (_, tensor) in self.parameters() {
            tensor.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::segments::build_segment_tensor;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        let mut config = ModelConfig {
            embed_dim: 5,
            hidden_dim: 4,
            feature_dim: 3,
            heads: 2,
            dropout: 0.0,
            classes: vec!["neutral".into(), "happy".into(), "sad".into()],
            vocabulary: vec!["<unk>".into(), "i".into(), "like".into(), "tea".into()],
            ..ModelConfig::default()
        };
        config.mfcc.coefficient_count = 3;
        config
    }

    fn tiny_utterance(seed: u64, words: usize, label: usize) -> PreparedUtterance {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let segments: Vec<Vec<Vec<f64>>> = (0..words)
            .map(|_| {
                let frames = r.gen_range(2..5);
                (0..frames)
                    .map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        PreparedUtterance {
            id: format!("utt{seed}"),
            words: (0..words).map(|i| format!("w{i}")).collect(),
            token_ids: (0..words).map(|i| 1 + (i % 3)).collect(),
            label,
            segments: build_segment_tensor(&segments).unwrap(),
        }
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let config = tiny_config();
        let a = CanModel::init(&config, 7).unwrap();
        let b = CanModel::init(&config, 7).unwrap();
        for ((name_a, t_a), (name_b, t_b)) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(*name_a, name_b);
            assert_eq!(t_a.to_vec(), t_b.to_vec());
        }
        let c = CanModel::init(&config, 8).unwrap();
        let differs = a
            .parameters()
            .iter()
            .zip(c.parameters())
            .any(|((_, t_a), (_, t_c))| t_a.to_vec() != t_c.to_vec());
        assert!(differs);
    }

    #[test]
    fn parameter_names_are_unique_and_complete() {
        let model = CanModel::init(&tiny_config(), 1).unwrap();
        let params = model.parameters();
        assert_eq!(params.len(), 27);
        let mut names: Vec<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 27);
    }

    #[test]
    fn forward_produces_three_distributions() {
        let model = CanModel::init(&tiny_config(), 2).unwrap();
        let utt = tiny_utterance(3, 4, 1);
        let pass = model.forward(&utt, false).unwrap();
        for output in [
            &pass.predictions.fused,
            &pass.predictions.text,
            &pass.predictions.audio,
        ] {
            let v = output.to_vec();
            assert_eq!(v.len(), 3);
            let sum: f64 = v.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(v.iter().all(|p| *p >= 0.0));
        }
        assert!(pass.bundle.ta.is_some());
    }

    #[test]
    fn every_parameter_receives_a_gradient() {
        let model = CanModel::init(&tiny_config(), 3).unwrap();
        let utt = tiny_utterance(4, 3, 2);
        let pass = model.forward(&utt, false).unwrap();
        let report =
            crate::objective::compute_loss(&pass.predictions, utt.label, model.config.alpha)
                .unwrap();
        report.total.backward().unwrap();
        for (name, tensor) in model.parameters() {
            let grad = tensor
                .grad()
                .unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(
                grad.iter().any(|g| *g != 0.0),
                "{name} gradient is all zeros"
            );
        }
    }

    #[test]
    fn no_cross_attention_variant_omits_crossed_contexts() {
        let mut config = tiny_config();
        config.use_cross_attention = false;
        let model = CanModel::init(&config, 4).unwrap();
        let utt = tiny_utterance(5, 3, 0);
        let pass = model.forward(&utt, false).unwrap();
        assert!(pass.bundle.ta.is_none());
        assert!(pass.bundle.at.is_none());
        let sum: f64 = pass.predictions.fused.to_vec().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reseeded_dropout_repeats_exactly() {
        let mut config = tiny_config();
        config.dropout = 0.4;
        let model = CanModel::init(&config, 5).unwrap();
        let utt = tiny_utterance(6, 4, 1);
        model.reseed_dropout(99);
        let first = model
            .forward(&utt, true)
            .unwrap()
            .predictions
            .fused
            .to_vec();
        model.reseed_dropout(99);
        let second = model
            .forward(&utt, true)
            .unwrap()
            .predictions
            .fused
            .to_vec();
        assert_eq!(first, second);
        model.reseed_dropout(100);
        let third = model
            .forward(&utt, true)
            .unwrap()
            .predictions
            .fused
            .to_vec();
        assert_ne!(first, third);
    }

    #[test]
    fn word_and_segment_counts_must_agree() {
        let model = CanModel::init(&tiny_config(), 6).unwrap();
        let mut utt = tiny_utterance(7, 3, 0);
        utt.token_ids.push(1);
        assert!(matches!(
            model.forward(&utt, false).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn evaluation_forward_is_deterministic() {
        let model = CanModel::init(&tiny_config(), 8).unwrap();
        let utt = tiny_utterance(9, 4, 1);
        let a = model
            .forward(&utt, false)
            .unwrap()
            .predictions
            .fused
            .to_vec();
        let b = model
            .forward(&utt, false)
            .unwrap()
            .predictions
            .fused
            .to_vec();
        let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
    }
}
