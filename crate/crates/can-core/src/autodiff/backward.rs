//! Reverse pass: one topological walk, one adjoint per operation.

use std::collections::{HashMap, HashSet};

use super::ops::{matmul_raw, transpose_raw};
use super::{axis_split, Op, Tensor, PROB_FLOOR};
use crate::error::{Error, Result};

impl Tensor {
    /// Populate gradients for every tensor reachable from this scalar loss
    /// that requires them. Repeated calls accumulate; use [`Tensor::zero_grad`]
    /// between steps.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::InvalidInput(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = topological_order(self);
        let mut flowing: HashMap<u64, Vec<f64>> = HashMap::new();
        flowing.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let grad = match flowing.remove(&node.id()) {
                Some(g) => g,
                None => continue,
            };
            node.accumulate_grad(&grad);
            propagate(node, &grad, &mut flowing);
        }
        Ok(())
    }
}

/// Iterative post-order DFS over the requires-grad subgraph. Children that do
/// not require gradients are never visited, which is also what makes the
/// stop-gradient cut free: its output is a detached leaf.
fn topological_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (tensor, children already pushed?)
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !seen.insert(node.id()) {
            continue;
        }
        let inputs = node.0.op.borrow().inputs();
        stack.push((node, true));
        for input in inputs {
            if input.requires_grad() && !seen.contains(&input.id()) {
                stack.push((input, false));
            }
        }
    }
    order
}

fn add_into(flowing: &mut HashMap<u64, Vec<f64>>, target: &Tensor, contribution: Vec<f64>) {
    if !target.requires_grad() {
        return;
    }
    flowing
        .entry(target.id())
        .and_modify(|g| {
            for (gi, ci) in g.iter_mut().zip(&contribution) {
                *gi += ci;
            }
        })
        .or_insert(contribution);
}

fn propagate(node: &Tensor, grad: &[f64], flowing: &mut HashMap<u64, Vec<f64>>) {
    let op = node.0.op.borrow();
    match &*op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(flowing, a, grad.to_vec());
            add_into(flowing, b, grad.to_vec());
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                let ga = b.values().iter().zip(grad).map(|(bv, g)| bv * g).collect();
                add_into(flowing, a, ga);
            }
            if b.requires_grad() {
                let gb = a.values().iter().zip(grad).map(|(av, g)| av * g).collect();
                add_into(flowing, b, gb);
            }
        }
        Op::Scale(a, factor) => {
            add_into(flowing, a, grad.iter().map(|g| g * factor).collect());
        }
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                // dL/da = g . b^T
                let bt = transpose_raw(&b.values(), k, n);
                add_into(flowing, a, matmul_raw(grad, &bt, m, n, k));
            }
            if b.requires_grad() {
                // dL/db = a^T . g
                let at = transpose_raw(&a.values(), m, k);
                add_into(flowing, b, matmul_raw(&at, grad, k, m, n));
            }
        }
        Op::Tanh(a) => {
            let out = node.values();
            let ga = out
                .iter()
                .zip(grad)
                .map(|(y, g)| (1.0 - y * y) * g)
                .collect();
            drop(out);
            add_into(flowing, a, ga);
        }
        Op::Sigmoid(a) => {
            let out = node.values();
            let ga = out
                .iter()
                .zip(grad)
                .map(|(y, g)| y * (1.0 - y) * g)
                .collect();
            drop(out);
            add_into(flowing, a, ga);
        }
        Op::Exp(a) => {
            let out = node.values();
            let ga = out.iter().zip(grad).map(|(y, g)| y * g).collect();
            drop(out);
            add_into(flowing, a, ga);
        }
        Op::Log(a) => {
            let ga = a.values().iter().zip(grad).map(|(x, g)| g / x).collect();
            add_into(flowing, a, ga);
        }
        Op::Concat(parts, axis) => {
            let (outer, total_axis, inner) = axis_split(node.shape(), *axis);
            let mut offset = 0;
            for part in parts {
                let p_axis = part.shape()[*axis];
                if part.requires_grad() {
                    let mut gp = vec![0.0; part.len()];
                    for o in 0..outer {
                        let src_base = (o * total_axis + offset) * inner;
                        gp[o * p_axis * inner..(o + 1) * p_axis * inner]
                            .copy_from_slice(&grad[src_base..src_base + p_axis * inner]);
                    }
                    add_into(flowing, part, gp);
                }
                offset += p_axis;
            }
        }
        Op::Narrow {
            input,
            axis,
            start,
            len,
        } => {
            let (outer, extent, inner) = axis_split(input.shape(), *axis);
            let mut gi = vec![0.0; input.len()];
            for o in 0..outer {
                let dst_base = (o * extent + start) * inner;
                gi[dst_base..dst_base + len * inner]
                    .copy_from_slice(&grad[o * len * inner..(o + 1) * len * inner]);
            }
            add_into(flowing, input, gi);
        }
        Op::Reshape(a) => {
            add_into(flowing, a, grad.to_vec());
        }
        Op::Sum(a) => {
            add_into(flowing, a, vec![grad[0]; a.len()]);
        }
        Op::MaskedSoftmax(a, mask) => {
            let out = node.values();
            let dot: f64 = out
                .iter()
                .zip(grad)
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|((y, g), _)| y * g)
                .sum();
            let ga = out
                .iter()
                .zip(grad)
                .zip(mask)
                .map(|((y, g), &m)| if m { y * (g - dot) } else { 0.0 })
                .collect();
            drop(out);
            add_into(flowing, a, ga);
        }
        Op::MaskedMeanPool(a, valid) => {
            let cols = a.shape()[1];
            let mut ga = vec![0.0; a.len()];
            let inv = 1.0 / *valid as f64;
            for r in 0..*valid {
                for c in 0..cols {
                    ga[r * cols + c] = grad[c] * inv;
                }
            }
            add_into(flowing, a, ga);
        }
        Op::CrossEntropy(p, label) => {
            let mut gp = vec![0.0; p.len()];
            let pl = p.values()[*label];
            // Inside the floored region the loss is constant in p.
            if pl > PROB_FLOOR {
                gp[*label] = -grad[0] / pl;
            }
            add_into(flowing, p, gp);
        }
        Op::SelectRows(table, ids) => {
            let cols = table.shape()[1];
            let mut gt = vec![0.0; table.len()];
            for (r, &id) in ids.iter().enumerate() {
                for c in 0..cols {
                    gt[id * cols + c] += grad[r * cols + c];
                }
            }
            add_into(flowing, table, gt);
        }
        Op::Dropout(a, mask) => {
            let ga = mask.iter().zip(grad).map(|(m, g)| m * g).collect();
            add_into(flowing, a, ga);
        }
    }
}
