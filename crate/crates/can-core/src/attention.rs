//! Global multi-head attention and four-way cross-modal aggregation.
//!
//! Each modality owns one set of global queries. A head's weights come from
//! plain dot products between its query and its contiguous slice of the
//! hidden dimension, softmaxed over valid steps. The same weight tensors
//! then aggregate BOTH modalities: own-modality contexts keep the gradient
//! path, crossed contexts see the weights through a stop-gradient so neither
//! query trains on the other modality's values.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::encoders::{normal_init, EncoderOutputs};
use crate::error::{Error, Result};

/// Trainable per-head query vectors for both modalities, each heads × d_head
/// where d_head = 2·D_h / heads.
pub struct GlobalQueries {
    pub text: Tensor,
    pub audio: Tensor,
    pub heads: usize,
    pub head_dim: usize,
}

impl GlobalQueries {
    pub fn init<R: Rng>(hidden_width: usize, heads: usize, rng: &mut R) -> Result<GlobalQueries> {
        if heads == 0 || !hidden_width.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "head count {heads} must divide the hidden width {hidden_width}"
            )));
        }
        let head_dim = hidden_width / heads;
        let text = Tensor::param(normal_init(rng, hidden_width, 0.1), &[heads, head_dim])?;
        let audio = Tensor::param(normal_init(rng, hidden_width, 0.1), &[heads, head_dim])?;
        Ok(GlobalQueries {
            text,
            audio,
            heads,
            head_dim,
        })
    }

    pub fn named_params(&self, out: &mut Vec<(String, Tensor)>) {
        out.push(("attention.query_text".into(), self.text.clone()));
        out.push(("attention.query_audio".into(), self.audio.clone()));
    }
}

/// Per-head attention weights over the L steps of one modality.
#[derive(Debug)]
pub struct AttentionWeights {
    pub text: Vec<Tensor>,
    pub audio: Vec<Tensor>,
}

/// The four context vectors of one utterance, heads concatenated back to
/// 2·D_h. `ta`/`at` are absent when cross attention is disabled, so crossed
/// contexts cannot be materialized by later stages even accidentally.
#[derive(Debug)]
pub struct ContextBundle {
    pub tt: Tensor,
    pub ta: Option<Tensor>,
    pub aa: Tensor,
    pub at: Option<Tensor>,
    pub weights: AttentionWeights,
}

/// Per-head masked softmax of query–hidden dot products.
pub fn attend(
    hidden: &EncoderOutputs,
    query: &Tensor,
    heads: usize,
    head_dim: usize,
) -> Result<Vec<Tensor>> {
    let steps = hidden.hidden.shape()[0];
    if hidden.mask.iter().all(|m| !m) {
        return Err(Error::InvalidInput("attention over an empty mask".into()));
    }
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let slice = hidden.hidden.narrow(1, h * head_dim, head_dim)?;
        let q = query.row(h)?.reshape(&[head_dim, 1])?;
        let logits = slice.matmul(&q)?.reshape(&[steps])?;
        per_head.push(logits.masked_softmax(&hidden.mask)?);
    }
    Ok(per_head)
}

/// Weighted sum of `hidden` rows per head, heads concatenated. `detached`
/// routes each head's weights through a stop-gradient first.
fn aggregate(
    weights: &[Tensor],
    hidden: &Tensor,
    head_dim: usize,
    detached: bool,
) -> Result<Tensor> {
    let steps = hidden.shape()[0];
    let mut parts = Vec::with_capacity(weights.len());
    for (h, alpha) in weights.iter().enumerate() {
        let w = if detached {
            alpha.stop_gradient()
        } else {
            alpha.clone()
        };
        let row = w.reshape(&[1, steps])?;
        let slice = hidden.narrow(1, h * head_dim, head_dim)?;
        parts.push(row.matmul(&slice)?);
    }
    Tensor::concat(&parts, 1)
}

/// Computes all four contexts c^(TT), c^(TA), c^(AA), c^(AT) from shared
/// attention weights. `use_stop_gradient = false` lets the crossed sums
/// backpropagate into the queries (the ablation variant);
/// `use_cross_attention = false` skips the crossed sums entirely.
pub fn cross_aggregate(
    text: &EncoderOutputs,
    audio: &EncoderOutputs,
    queries: &GlobalQueries,
    use_stop_gradient: bool,
    use_cross_attention: bool,
) -> Result<ContextBundle> {
    if text.hidden.shape() != audio.hidden.shape() {
        return Err(Error::Dimension(format!(
            "text hidden {:?} and audio hidden {:?} disagree",
            text.hidden.shape(),
            audio.hidden.shape()
        )));
    }
    if text.mask != audio.mask {
        return Err(Error::Dimension("text and audio masks disagree".into()));
    }
    let head_dim = queries.head_dim;
    let text_weights = attend(text, &queries.text, queries.heads, head_dim)?;
    let audio_weights = attend(audio, &queries.audio, queries.heads, head_dim)?;
    let tt = aggregate(&text_weights, &text.hidden, head_dim, false)?;
    let aa = aggregate(&audio_weights, &audio.hidden, head_dim, false)?;
    let (ta, at) = if use_cross_attention {
        (
            Some(aggregate(
                &text_weights,
                &audio.hidden,
                head_dim,
                use_stop_gradient,
            )?),
            Some(aggregate(
                &audio_weights,
                &text.hidden,
                head_dim,
                use_stop_gradient,
            )?),
        )
    } else {
        (None, None)
    };
    Ok(ContextBundle {
        tt,
        ta,
        aa,
        at,
        weights: AttentionWeights {
            text: text_weights,
            audio: audio_weights,
        },
    })
}

/// Human-readable per-step weight table: one row per step with the word and
/// every head's text/audio weight.
pub fn format_weights_table(words: &[String], weights: &AttentionWeights) -> String {
    let heads = weights.text.len();
    let mut out = String::from("step  word");
    for h in 0..heads {
        out.push_str(&format!("  text.h{h}"));
    }
    for h in 0..heads {
        out.push_str(&format!("  audio.h{h}"));
    }
    out.push('\n');
    for (i, word) in words.iter().enumerate() {
        out.push_str(&format!("{i:<5} {word:<12}"));
        for alpha in &weights.text {
            out.push_str(&format!(" {:>8.5}", alpha.values()[i]));
        }
        for alpha in &weights.audio {
            out.push_str(&format!(" {:>8.5}", alpha.values()[i]));
        }
        out.push('\n');
    }
    out
}
