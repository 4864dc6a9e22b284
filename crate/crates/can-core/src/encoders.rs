//! Text and audio encoders: a trainable embedding lookup, bidirectional
//! LSTMs, and the two-level audio stack (shared lower BLSTM per segment,
//! mean pooling, upper BLSTM over segments).
//!
//! Sequences arrive padded to a common length with prefix masks: every valid
//! step precedes every padded step. Recurrences run over valid steps only
//! and padded rows stay exactly zero.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::segments::SegmentedAudioFeatures;

/// Gate layout along the 4·D_h axis of the combined LSTM matrices.
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_CELL: usize = 2;
const GATE_OUTPUT: usize = 3;

pub fn normal_init<R: Rng>(rng: &mut R, count: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    (0..count).map(|_| dist.sample(rng)).collect()
}

pub(crate) fn uniform_init<R: Rng>(rng: &mut R, count: usize, bound: f64) -> Vec<f64> {
    (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Trainable V × D_e token embedding.
pub struct EmbeddingTable {
    pub weights: Tensor,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn init<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> EmbeddingTable {
        let weights =
            Tensor::param(normal_init(rng, vocab_size * dim, 0.1), &[vocab_size, dim]).unwrap();
        EmbeddingTable { weights, dim }
    }

    /// Rows of the table at `ids`, differentiable into the table.
    pub fn lookup(&self, ids: &[usize]) -> Result<Tensor> {
        self.weights.select_rows(ids)
    }

    pub fn named_params(&self, out: &mut Vec<(String, Tensor)>) {
        out.push(("embedding.weights".into(), self.weights.clone()));
    }
}

/// One LSTM direction with combined gate matrices: `w` is D × 4·D_h, `u` is
/// D_h × 4·D_h, `b` is 1 × 4·D_h, gates ordered input, forget, cell, output.
pub struct LstmParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> LstmParams {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = Tensor::param(
            uniform_init(rng, input_dim * 4 * hidden, bound),
            &[input_dim, 4 * hidden],
        )
        .unwrap();
        let u = Tensor::param(
            uniform_init(rng, hidden * 4 * hidden, bound),
            &[hidden, 4 * hidden],
        )
        .unwrap();
        let mut bias = vec![0.0; 4 * hidden];
        for v in bias.iter_mut().skip(GATE_FORGET * hidden).take(hidden) {
            *v = 1.0;
        }
        let b = Tensor::param(bias, &[1, 4 * hidden]).unwrap();
        LstmParams { w, u, b, hidden }
    }

    /// Hidden states for steps 0..valid, visiting them in reverse when
    /// `reverse` is set (the returned vector is always in step order).
    fn run(&self, inputs: &Tensor, valid: usize, reverse: bool) -> Result<Vec<Tensor>> {
        let h_dim = self.hidden;
        let pre = inputs.narrow(0, 0, valid)?.matmul(&self.w)?;
        let mut h = Tensor::zeros(&[1, h_dim]);
        let mut c = Tensor::zeros(&[1, h_dim]);
        let mut states = vec![None; valid];
        let order: Vec<usize> = if reverse {
            (0..valid).rev().collect()
        } else {
            (0..valid).collect()
        };
        for t in order {
            let gates = pre.row(t)?.add(&h.matmul(&self.u)?)?.add(&self.b)?;
            let input_gate = gates.narrow(1, GATE_INPUT * h_dim, h_dim)?.sigmoid();
            let forget_gate = gates.narrow(1, GATE_FORGET * h_dim, h_dim)?.sigmoid();
            let cell_update = gates.narrow(1, GATE_CELL * h_dim, h_dim)?.tanh();
            let output_gate = gates.narrow(1, GATE_OUTPUT * h_dim, h_dim)?.sigmoid();
            c = forget_gate.mul(&c)?.add(&input_gate.mul(&cell_update)?)?;
            h = output_gate.mul(&c.tanh())?;
            states[t] = Some(h.clone());
        }
        Ok(states.into_iter().map(|s| s.unwrap()).collect())
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.u"), self.u.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Forward + backward LSTM pair whose per-step outputs concatenate to 2·D_h.
pub struct Blstm {
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub hidden: usize,
}

impl Blstm {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Blstm {
        Blstm {
            forward: LstmParams::init(input_dim, hidden, rng),
            backward: LstmParams::init(input_dim, hidden, rng),
            hidden,
        }
    }

    /// Runs both directions over steps 0..valid of `inputs` (steps × D) and
    /// returns steps × 2·D_h with padded rows exactly zero.
    pub fn apply(&self, inputs: &Tensor, valid: usize) -> Result<Tensor> {
        let steps = inputs.shape()[0];
        if steps == 0 {
            return Err(Error::InvalidInput("BLSTM input has no steps".into()));
        }
        if valid == 0 || valid > steps {
            return Err(Error::InvalidInput(format!(
                "valid step count {valid} outside 1..={steps}"
            )));
        }
        let fwd = self.forward.run(inputs, valid, false)?;
        let bwd = self.backward.run(inputs, valid, true)?;
        let mut rows = Vec::with_capacity(steps);
        for t in 0..valid {
            rows.push(Tensor::concat(&[fwd[t].clone(), bwd[t].clone()], 1)?);
        }
        for _ in valid..steps {
            rows.push(Tensor::zeros(&[1, 2 * self.hidden]));
        }
        Tensor::concat(&rows, 0)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.forward.named_params(&format!("{prefix}.forward"), out);
        self.backward
            .named_params(&format!("{prefix}.backward"), out);
    }
}

/// Hidden sequence plus its validity mask; masked rows are zero.
pub struct EncoderOutputs {
    pub hidden: Tensor,
    pub mask: Vec<bool>,
}

impl EncoderOutputs {
    pub fn valid(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Number of leading `true` entries; the mask must be a prefix mask.
pub fn prefix_valid(mask: &[bool]) -> Result<usize> {
    let valid = mask.iter().filter(|m| **m).count();
    if mask[..valid].iter().any(|m| !m) {
        return Err(Error::InvalidInput(
            "mask must be a prefix: all valid steps before padded ones".into(),
        ));
    }
    if valid == 0 {
        return Err(Error::InvalidInput("mask has no valid steps".into()));
    }
    Ok(valid)
}

/// Text side: BLSTM over the embedded words, then dropout.
pub fn encode_text<R: Rng>(
    embedded: &Tensor,
    mask: &[bool],
    blstm: &Blstm,
    dropout_p: f64,
    training: bool,
    rng: &mut R,
) -> Result<EncoderOutputs> {
    if embedded.shape()[0] != mask.len() {
        return Err(Error::Dimension(format!(
            "embedded rows {} != mask length {}",
            embedded.shape()[0],
            mask.len()
        )));
    }
    let valid = prefix_valid(mask)?;
    let hidden = blstm.apply(embedded, valid)?;
    let hidden = hidden.dropout(dropout_p, training, rng)?;
    Ok(EncoderOutputs {
        hidden,
        mask: mask.to_vec(),
    })
}

/// Audio side: the shared lower BLSTM runs over each segment's valid frames,
/// mean pooling gives one vector per segment, and the upper BLSTM runs over
/// those. Output step count equals the mask length, zero-padded past the
/// utterance's segments.
pub fn encode_audio<R: Rng>(
    segments: &SegmentedAudioFeatures,
    mask: &[bool],
    lower: &Blstm,
    upper: &Blstm,
    dropout_p: f64,
    training: bool,
    rng: &mut R,
) -> Result<EncoderOutputs> {
    let valid = prefix_valid(mask)?;
    if valid != segments.segment_count {
        return Err(Error::Dimension(format!(
            "mask has {valid} valid steps but the utterance has {} segments",
            segments.segment_count
        )));
    }
    let mut pooled = Vec::with_capacity(mask.len());
    for i in 0..segments.segment_count {
        let frames = segments.valid_frames[i];
        if frames == 0 {
            return Err(Error::InvalidInput(format!(
                "segment {i} has zero valid frames"
            )));
        }
        let input = Tensor::from_vec(
            segments.segment(i).to_vec(),
            &[segments.max_frames, segments.coeff_count],
        )?;
        let states = lower.apply(&input, frames)?;
        let vector = states.masked_mean_pool(frames)?;
        pooled.push(vector.reshape(&[1, 2 * lower.hidden])?);
    }
    for _ in segments.segment_count..mask.len() {
        pooled.push(Tensor::zeros(&[1, 2 * lower.hidden]));
    }
    let stacked = Tensor::concat(&pooled, 0)?.dropout(dropout_p, training, rng)?;
    let hidden = upper
        .apply(&stacked, valid)?
        .dropout(dropout_p, training, rng)?;
    Ok(EncoderOutputs {
        hidden,
        mask: mask.to_vec(),
    })
}
