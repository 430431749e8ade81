//! Reverse-mode automatic differentiation over dense 64-bit float tensors.
//!
//! The graph is built define-by-run: every op whose inputs require a
//! gradient records its parents inside the output tensor, and
//! [`Tensor::backward`] walks that record in reverse topological order.
//! Graphs are confined to one thread; parameter data crosses threads as
//! plain [`RawTensor`] buffers.
//!
//! Ops reject shape mismatches and non-finite outputs eagerly: a NaN or
//! infinity anywhere is an error, never a value that propagates.

mod check;
mod ops;

pub use check::finite_difference_check;

use crate::error::{Error, Result};
use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Plain tensor storage: shape plus row-major data, no graph attached.
///
/// Parameter sets, datasets, and checkpoints hold these; they are `Send`
/// and cheap to hand to another thread, unlike graph tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadShape {
                op: "raw_tensor",
                shape,
                expected: format!("element count {}", data.len()),
            });
        }
        Ok(RawTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        RawTensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Operations recorded in the graph. Each variant owns handles to its
/// input tensors, which keeps the upstream graph alive.
pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Neg(Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    PowScalar(Tensor, f64),
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    AddRowBias(Tensor, Tensor),
    AddChannelBias(Tensor, Tensor),
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: Tensor,
        argmax: Vec<usize>,
    },
    Relu(Tensor),
    Tanh(Tensor),
    Log(Tensor),
    Exp(Tensor),
    Clamp {
        input: Tensor,
        lo: f64,
        hi: f64,
    },
    Sum(Tensor),
    Mean(Tensor),
    RowSum(Tensor),
    Gather {
        input: Tensor,
        indices: Vec<usize>,
    },
    MaskIndex {
        input: Tensor,
        indices: Vec<usize>,
    },
    DivColumn {
        numer: Tensor,
        denom: Tensor,
    },
    RowMaxExcept {
        input: Tensor,
        argmax: Vec<usize>,
    },
    MaxScalar(Tensor, f64),
    WhereMask {
        mask: Vec<bool>,
        on_true: Tensor,
        on_false: Tensor,
    },
    Reshape(Tensor),
    Softmax(Tensor),
}

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parent: Option<Op>,
}

/// A node in a differentiable computation. Cloning is cheap (shared
/// reference); the underlying data is immutable once created.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("has_parent", &self.inner.parent.is_some())
            .finish()
    }
}

impl Tensor {
    pub(crate) fn from_parts(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parent: Option<Op>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parent,
            }),
        }
    }

    /// A leaf that participates in gradient computation.
    pub fn leaf(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::checked_leaf(shape, data, true)
    }

    /// A leaf treated as a constant: no gradient flows into it.
    pub fn constant(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::checked_leaf(shape, data, false)
    }

    fn checked_leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadShape {
                op: "leaf",
                shape,
                expected: format!("element count {}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(Self::from_parts(shape, data, requires_grad, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value], false, None)
    }

    pub fn from_raw(raw: &RawTensor, requires_grad: bool) -> Result<Self> {
        Self::checked_leaf(raw.shape.clone(), raw.data.clone(), requires_grad)
    }

    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            shape: self.shape().to_vec(),
            data: self.data().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// The accumulated gradient, if a backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Clears the accumulated gradient so another backward pass may run.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::BadShape {
                op: "item",
                shape: self.shape().to_vec(),
                expected: "exactly one element".into(),
            });
        }
        Ok(self.inner.data[0])
    }

    /// Backpropagates from this scalar, accumulating `d(self)/d(t)` into
    /// the `grad` buffer of every reachable tensor that requires one.
    ///
    /// Calling it twice on the same root is an error; distinct roots that
    /// share leaves accumulate into those leaves, which is what gradient
    /// checks of linear combinations rely on.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::BackwardNonScalar {
                numel: self.numel(),
            });
        }
        if !self.inner.requires_grad {
            // A constant scalar: nothing depends on a gradient. No-op.
            return Ok(());
        }
        if self.inner.grad.borrow().is_some() {
            return Err(Error::BackwardTwice);
        }

        let order = self.topo_order();
        let index_of: HashMap<u64, usize> = order
            .iter()
            .enumerate()
            .map(|(i, t)| (t.inner.id, i))
            .collect();
        // Per-pass gradient buffers, kept separate from the tensors' own
        // accumulators so that a second backward over a shared subgraph
        // cannot re-propagate stale contributions.
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; order.len()];
        grads[index_of[&self.inner.id]] = Some(vec![1.0]);

        // Reverse topological order: every consumer of a node is visited
        // before the node itself, so its buffer is complete when read.
        for i in (0..order.len()).rev() {
            let node = order[i].clone();
            let idx = index_of[&node.inner.id];
            let Some(g) = grads[idx].take() else { continue };
            if let Some(op) = &node.inner.parent {
                let mut sink = |t: &Tensor, contribution: &[f64]| {
                    if !t.inner.requires_grad {
                        return;
                    }
                    let slot = &mut grads[index_of[&t.inner.id]];
                    match slot {
                        Some(buf) => {
                            for (b, c) in buf.iter_mut().zip(contribution) {
                                *b += c;
                            }
                        }
                        None => *slot = Some(contribution.to_vec()),
                    }
                };
                ops::vjp(op, &node.inner.data, &g, &mut sink);
            }
            grads[idx] = Some(g);
        }

        for (t, g) in order.iter().zip(grads) {
            let Some(g) = g else { continue };
            let mut cell = t.inner.grad.borrow_mut();
            match cell.as_mut() {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => *cell = Some(g),
            }
        }
        Ok(())
    }

    /// Post-order DFS over the differentiable subgraph (inputs before
    /// outputs). Constant subtrees are not entered.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        // Iterative DFS with an explicit stack; deep graphs must not
        // overflow the call stack.
        enum Item {
            Enter(Tensor),
            Emit(Tensor),
        }
        let mut stack = vec![Item::Enter(self.clone())];
        while let Some(item) = stack.pop() {
            match item {
                Item::Enter(t) => {
                    if !t.inner.requires_grad || visited.contains_key(&t.inner.id) {
                        continue;
                    }
                    visited.insert(t.inner.id, ());
                    stack.push(Item::Emit(t.clone()));
                    if let Some(op) = &t.inner.parent {
                        for input in op.inputs() {
                            stack.push(Item::Enter(input));
                        }
                    }
                }
                Item::Emit(t) => order.push(t),
            }
        }
        order
    }
}

impl Op {
    fn inputs(&self) -> Vec<Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::AddRowBias(a, b) | Op::AddChannelBias(a, b) => vec![a.clone(), b.clone()],
            Op::Conv2d { input, kernel, .. } => vec![input.clone(), kernel.clone()],
            Op::DivColumn { numer, denom } => vec![numer.clone(), denom.clone()],
            Op::WhereMask {
                on_true, on_false, ..
            } => vec![on_true.clone(), on_false.clone()],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::PowScalar(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::Reshape(a)
            | Op::Softmax(a)
            | Op::MaxScalar(a, _) => vec![a.clone()],
            Op::MaxPool2d { input, .. }
            | Op::Clamp { input, .. }
            | Op::Gather { input, .. }
            | Op::MaskIndex { input, .. }
            | Op::RowMaxExcept { input, .. } => vec![input.clone()],
        }
    }
}
