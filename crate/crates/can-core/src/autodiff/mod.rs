//! Reverse-mode automatic differentiation over flat f64 tensors.
//!
//! Every numeric quantity in the model lives in a [`Tensor`]: a row-major
//! value buffer plus a link to the operation that produced it. Operations
//! build the graph eagerly; [`Tensor::backward`] walks it once in reverse
//! topological order and accumulates gradients into every reachable tensor
//! that requires them. Everything is double precision — the gradient checks
//! this crate leans on are not reliable in f32.
//!
//! Graphs are confined to one thread for the duration of a forward/backward
//! pass; independent graphs on independent threads are fine.

mod backward;
mod ops;
#[cfg(test)]
mod tests;

use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Floor applied to probabilities before logs so losses stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// The operation that produced a tensor, holding its input tensors.
///
/// `Leaf` marks inputs and parameters. The stop-gradient operator never
/// appears here: it produces a fresh `Leaf` with `requires_grad = false`,
/// which is exactly the backward cut.
#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Matmul(Tensor, Tensor),
    Tanh(Tensor),
    Sigmoid(Tensor),
    Exp(Tensor),
    /// Saves the input; d/dx ln x = 1/x.
    Log(Tensor),
    Concat(Vec<Tensor>, usize),
    Narrow {
        input: Tensor,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(Tensor),
    Sum(Tensor),
    /// Masked positions get weight exactly 0 and contribute exactly 0 gradient.
    MaskedSoftmax(Tensor, Vec<bool>),
    /// Mean over the first `valid` rows of a 2-d tensor.
    MaskedMeanPool(Tensor, usize),
    /// -ln(max(p[label], PROB_FLOOR)) over a probability vector.
    CrossEntropy(Tensor, usize),
    /// Embedding-style row gather; backward scatter-adds into the table.
    SelectRows(Tensor, Vec<usize>),
    /// Element mask holding 0.0 for dropped units and 1/(1-p) for survivors.
    Dropout(Tensor, Vec<f64>),
}

impl Op {
    /// Inputs the backward pass may need to descend into.
    pub(crate) fn inputs(&self) -> Vec<Tensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![a.clone(), b.clone()],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Narrow { input: a, .. }
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::MaskedSoftmax(a, _)
            | Op::MaskedMeanPool(a, _)
            | Op::CrossEntropy(a, _)
            | Op::SelectRows(a, _)
            | Op::Dropout(a, _) => vec![a.clone()],
            Op::Concat(ts, _) => ts.clone(),
        }
    }
}

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: RefCell<Op>,
}

/// An n-dimensional array of f64 participating in the differentiation graph.
///
/// Cloning is cheap (a reference-count bump); two clones view the same node.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Inner>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("values", &self.values())
            .finish()
    }
}

impl Tensor {
    pub(crate) fn make(values: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        Tensor(Rc::new(Inner {
            id: fresh_id(),
            shape,
            values: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad,
            op: RefCell::new(op),
        }))
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "{} values cannot fill shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(Tensor::make(values, shape.to_vec(), false, Op::Leaf))
    }

    /// Trainable leaf: participates in backward and receives a gradient.
    pub fn param(values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "{} values cannot fill shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(Tensor::make(values, shape.to_vec(), true, Op::Leaf))
    }

    /// Rank-0 constant.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::make(vec![v], Vec::new(), false, Op::Leaf)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::make(
            vec![0.0; shape.iter().product()],
            shape.to_vec(),
            false,
            Op::Leaf,
        )
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    /// Total number of stored values.
    pub fn len(&self) -> usize {
        self.0.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Borrow of the raw value buffer (row-major).
    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.0.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.values.borrow().clone()
    }

    /// The single value of a scalar tensor.
    pub fn value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.0.values.borrow()[0]
    }

    /// Overwrite a leaf's values in place. Used by the optimizer and by
    /// finite-difference probes; the new buffer must match the shape.
    pub fn set_values(&self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} values cannot fill shape {:?}",
                values.len(),
                self.shape()
            )));
        }
        *self.0.values.borrow_mut() = values;
        Ok(())
    }

    /// Accumulated gradient, if a backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Clear the accumulated gradient. Backward always accumulates, so
    /// training loops zero explicitly between steps.
    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }
}

// Deep graphs (one LSTM step per frame) would otherwise be freed by
// recursion and can blow the stack; steal children iteratively instead.
impl Drop for Inner {
    fn drop(&mut self) {
        let mut pending = std::mem::replace(self.op.get_mut(), Op::Leaf).inputs();
        while let Some(t) = pending.pop() {
            if Rc::strong_count(&t.0) == 1 {
                pending.extend(std::mem::replace(&mut *t.0.op.borrow_mut(), Op::Leaf).inputs());
            }
        }
    }
}

pub(crate) fn shape_product(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major split of a shape around `axis`: (outer, extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
