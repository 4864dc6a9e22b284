//! Forward operation constructors. Each records enough on the graph for
//! `backward` to produce the matching adjoint.

use rand::Rng;

use super::{axis_split, shape_product, Op, Tensor, PROB_FLOOR};
use crate::error::{Error, Result};

impl Tensor {
    fn unary(&self, values: Vec<f64>, op: Op) -> Tensor {
        Tensor::make(values, self.shape().to_vec(), self.requires_grad(), op)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "add expects equal shapes, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let values = {
            let a = self.values();
            let b = other.values();
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        Ok(Tensor::make(
            values,
            self.shape().to_vec(),
            self.requires_grad() || other.requires_grad(),
            Op::Add(self.clone(), other.clone()),
        ))
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "mul expects equal shapes, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let values = {
            let a = self.values();
            let b = other.values();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        Ok(Tensor::make(
            values,
            self.shape().to_vec(),
            self.requires_grad() || other.requires_grad(),
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let values = self.values().iter().map(|x| x * factor).collect();
        self.unary(values, Op::Scale(self.clone(), factor))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    /// Matrix product of a `[m, k]` by a `[k, n]` tensor.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(Error::Dimension(format!(
                "matmul expects [m,k]x[k,n], got {:?} and {:?}",
                a_shape, b_shape
            )));
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let values = {
            let a = self.values();
            let b = other.values();
            matmul_raw(&a, &b, m, k, n)
        };
        Ok(Tensor::make(
            values,
            vec![m, n],
            self.requires_grad() || other.requires_grad(),
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    pub fn tanh(&self) -> Tensor {
        let values = self.values().iter().map(|x| x.tanh()).collect();
        self.unary(values, Op::Tanh(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        let values = self
            .values()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.unary(values, Op::Sigmoid(self.clone()))
    }

    pub fn exp(&self) -> Tensor {
        let values = self.values().iter().map(|x| x.exp()).collect();
        self.unary(values, Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Tensor {
        let values = self.values().iter().map(|x| x.ln()).collect();
        self.unary(values, Op::Log(self.clone()))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::Dimension(format!(
                "concat axis {} out of range for shape {:?}",
                axis,
                first.shape()
            )));
        }
        let mut out_shape = first.shape().to_vec();
        for t in &tensors[1..] {
            let s = t.shape();
            if s.len() != rank
                || s[..axis] != out_shape[..axis]
                || s[axis + 1..] != out_shape[axis + 1..]
            {
                return Err(Error::Dimension(format!(
                    "concat shapes {:?} and {:?} disagree off axis {}",
                    first.shape(),
                    s,
                    axis
                )));
            }
            out_shape[axis] += s[axis];
        }

        let (outer, total_axis, inner) = axis_split(&out_shape, axis);
        let mut values = vec![0.0; shape_product(&out_shape)];
        let mut offset = 0;
        for t in tensors {
            let t_axis = t.shape()[axis];
            let src = t.values();
            for o in 0..outer {
                let dst_base = (o * total_axis + offset) * inner;
                let src_base = o * t_axis * inner;
                values[dst_base..dst_base + t_axis * inner]
                    .copy_from_slice(&src[src_base..src_base + t_axis * inner]);
            }
            offset += t_axis;
        }
        let requires_grad = tensors.iter().any(Tensor::requires_grad);
        Ok(Tensor::make(
            values,
            out_shape,
            requires_grad,
            Op::Concat(tensors.to_vec(), axis),
        ))
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "narrow [{start}, {start}+{len}) on axis {axis} of shape {:?}",
                shape
            )));
        }
        let (outer, extent, inner) = axis_split(shape, axis);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut values = vec![0.0; outer * len * inner];
        {
            let src = self.values();
            for o in 0..outer {
                let src_base = (o * extent + start) * inner;
                values[o * len * inner..(o + 1) * len * inner]
                    .copy_from_slice(&src[src_base..src_base + len * inner]);
            }
        }
        Ok(Tensor::make(
            values,
            out_shape,
            self.requires_grad(),
            Op::Narrow {
                input: self.clone(),
                axis,
                start,
                len,
            },
        ))
    }

    /// Row `i` of a 2-d tensor as a `[1, cols]` tensor.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        self.narrow(0, i, 1)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape_product(shape) != self.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::make(
            self.to_vec(),
            shape.to_vec(),
            self.requires_grad(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let total = self.values().iter().sum();
        Tensor::make(
            vec![total],
            Vec::new(),
            self.requires_grad(),
            Op::Sum(self.clone()),
        )
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Tensor {
        let n = self.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Exp-normalization over the positions where `mask` is true; masked
    /// positions come out exactly 0 and pass exactly 0 gradient.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor> {
        if self.shape().len() != 1 || mask.len() != self.len() {
            return Err(Error::Dimension(format!(
                "masked_softmax expects a 1-d tensor matching the mask, got {:?} with mask length {}",
                self.shape(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidInput(
                "masked_softmax requires at least one valid position".into(),
            ));
        }
        let values = {
            let logits = self.values();
            let max = logits
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut out = vec![0.0; logits.len()];
            let mut total = 0.0;
            for (i, (&v, &m)) in logits.iter().zip(mask).enumerate() {
                if m {
                    let e = (v - max).exp();
                    out[i] = e;
                    total += e;
                }
            }
            for (o, &m) in out.iter_mut().zip(mask) {
                if m {
                    *o /= total;
                }
            }
            out
        };
        Ok(self.unary(values, Op::MaskedSoftmax(self.clone(), mask.to_vec())))
    }

    /// Softmax with every position valid.
    pub fn softmax(&self) -> Result<Tensor> {
        self.masked_softmax(&vec![true; self.len()])
    }

    /// Mean over the first `valid` rows of a `[rows, cols]` tensor; rows at
    /// or past `valid` never contribute.
    pub fn masked_mean_pool(&self, valid: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "masked_mean_pool expects a 2-d tensor, got {:?}",
                shape
            )));
        }
        if valid == 0 || valid > shape[0] {
            return Err(Error::InvalidInput(format!(
                "masked_mean_pool valid row count {} outside 1..={}",
                valid, shape[0]
            )));
        }
        let cols = shape[1];
        let mut out = vec![0.0; cols];
        {
            let src = self.values();
            for r in 0..valid {
                for c in 0..cols {
                    out[c] += src[r * cols + c];
                }
            }
        }
        for o in out.iter_mut() {
            *o /= valid as f64;
        }
        Ok(Tensor::make(
            out,
            vec![cols],
            self.requires_grad(),
            Op::MaskedMeanPool(self.clone(), valid),
        ))
    }

    /// -ln(p[label]) with the probability floored at [`PROB_FLOOR`].
    ///
    /// The input must already be a probability vector (sum within 1e-6 of 1).
    pub fn cross_entropy(&self, label: usize) -> Result<Tensor> {
        if self.shape().len() != 1 {
            return Err(Error::Dimension(format!(
                "cross_entropy expects a 1-d probability vector, got {:?}",
                self.shape()
            )));
        }
        if label >= self.len() {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {} classes",
                label,
                self.len()
            )));
        }
        let total: f64 = self.values().iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "cross_entropy input sums to {total}, not a probability vector"
            )));
        }
        let p = self.values()[label];
        Ok(Tensor::make(
            vec![-(p.max(PROB_FLOOR)).ln()],
            Vec::new(),
            self.requires_grad(),
            Op::CrossEntropy(self.clone(), label),
        ))
    }

    /// Gather rows of a `[vocab, dim]` table; backward scatter-adds into it.
    pub fn select_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "select_rows expects a 2-d table, got {:?}",
                shape
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= shape[0]) {
            return Err(Error::InvalidInput(format!(
                "row id {} out of range for table with {} rows",
                bad, shape[0]
            )));
        }
        let cols = shape[1];
        let mut values = vec![0.0; ids.len() * cols];
        {
            let src = self.values();
            for (r, &id) in ids.iter().enumerate() {
                values[r * cols..(r + 1) * cols].copy_from_slice(&src[id * cols..(id + 1) * cols]);
            }
        }
        Ok(Tensor::make(
            values,
            vec![ids.len(), cols],
            self.requires_grad(),
            Op::SelectRows(self.clone(), ids.to_vec()),
        ))
    }

    /// Inverted dropout: evaluation is the identity; during training each
    /// unit is zeroed with probability `p` and survivors scale by 1/(1-p).
    pub fn dropout<R: Rng>(&self, p: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let values = self
            .values()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        Ok(self.unary(values, Op::Dropout(self.clone(), mask)))
    }

    /// Identity forward, zero backward: the returned tensor carries the same
    /// values but is detached from the graph, so no gradient flows into the
    /// argument through this edge.
    pub fn stop_gradient(&self) -> Tensor {
        Tensor::make(self.to_vec(), self.shape().to_vec(), false, Op::Leaf)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// a^T (rows x cols) flattened row-major.
pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
