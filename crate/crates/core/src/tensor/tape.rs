//! Reverse-mode tape over the primitives in [`super::ops`].
//!
//! A recording tape keeps every node so [`Tape::backward`] can replay the
//! graph through [`super::vjp`]. An inference tape records nothing and lets
//! intermediate values drop as soon as the caller releases them, which is what
//! the latency benchmarks use.

use std::cell::RefCell;
use std::rc::Rc;

use super::ops::{Activation, Op};
use super::{ops, vjp, Tensor};
use crate::error::{Error, Result};

/// A value on a tape. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Var {
    id: Option<usize>,
    value: Rc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Whether gradients flow back to this value.
    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }
}

struct Node {
    op: Option<Op>,
    inputs: Vec<Var>,
}

pub struct Tape {
    recording: bool,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records for [`Tape::backward`].
    pub fn new() -> Self {
        Self {
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A tape that only evaluates.
    pub fn inference() -> Self {
        Self {
            recording: false,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        let id = self.push(None, Vec::new());
        Var {
            id,
            value: Rc::new(value),
        }
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    fn push(&self, op: Option<Op>, inputs: Vec<Var>) -> Option<usize> {
        if !self.recording {
            return None;
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs });
        Some(nodes.len() - 1)
    }

    pub fn apply(&self, op: Op, inputs: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| v.value.as_ref()).collect();
        let value = ops::apply(&op, &values)?;
        let id = if inputs.iter().any(|v| v.id.is_some()) {
            self.push(Some(op), inputs.iter().map(|&v| v.clone()).collect())
        } else {
            None
        };
        Ok(Var {
            id,
            value: Rc::new(value),
        })
    }

    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn add_bias(&self, x: &Var, b: &Var) -> Result<Var> {
        self.apply(Op::AddBias, &[x, b])
    }

    /// `x W + b` on the last axis of a matrix.
    pub fn dense(&self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(&y, b)
    }

    pub fn hadamard(&self, x: &Var, y: &Var) -> Result<Var> {
        self.apply(Op::Hadamard, &[x, y])
    }

    pub fn scale(&self, x: &Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[x])
    }

    pub fn softmax(&self, x: &Var, axis: usize) -> Result<Var> {
        self.apply(Op::Softmax { axis }, &[x])
    }

    pub fn layer_norm(&self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        self.apply(Op::LayerNorm { eps }, &[x, gamma, beta])
    }

    pub fn depthwise_conv_full(&self, x: &Var, kernel: &Var, bias: &Var) -> Result<Var> {
        self.apply(Op::DepthwiseConvFull, &[x, kernel, bias])
    }

    pub fn pointwise_conv(&self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        self.apply(Op::PointwiseConv, &[x, w, b])
    }

    pub fn broadcast_vector(&self, v: &Var, h: usize, w: usize) -> Result<Var> {
        self.apply(Op::BroadcastVector { h, w }, &[v])
    }

    pub fn dft2_real(&self, x: &Var) -> Result<Var> {
        self.apply(Op::Dft2Real, &[x])
    }

    pub fn activate(&self, x: &Var, act: Activation) -> Result<Var> {
        match act {
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => self.apply(Op::Relu, &[x]),
            Activation::Sigmoid => self.apply(Op::Sigmoid, &[x]),
            Activation::Swish => self.apply(Op::Swish, &[x]),
        }
    }

    pub fn reshape(&self, x: &Var, shape: &[usize]) -> Result<Var> {
        if x.shape() == shape {
            return Ok(x.clone());
        }
        self.apply(Op::Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn transpose(&self, x: &Var) -> Result<Var> {
        self.apply(Op::Transpose, &[x])
    }

    pub fn slice_last(&self, x: &Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Op::SliceLast { start, len }, &[x])
    }

    pub fn slice_rows(&self, x: &Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Op::SliceRows { start, len }, &[x])
    }

    pub fn concat_last(&self, parts: &[&Var]) -> Result<Var> {
        self.apply(Op::ConcatLast, parts)
    }

    pub fn concat_rows(&self, parts: &[&Var]) -> Result<Var> {
        self.apply(Op::ConcatRows, parts)
    }

    pub fn repeat_rows(&self, x: &Var, times: usize) -> Result<Var> {
        self.apply(Op::RepeatRows { times }, &[x])
    }

    pub fn tile_rows(&self, x: &Var, times: usize) -> Result<Var> {
        self.apply(Op::TileRows { times }, &[x])
    }

    pub fn mean_rows(&self, x: &Var) -> Result<Var> {
        self.apply(Op::MeanRows, &[x])
    }

    pub fn sum_all(&self, x: &Var) -> Result<Var> {
        self.apply(Op::SumAll, &[x])
    }

    pub fn softmax_cross_entropy(&self, logits: &Var, labels: &[usize]) -> Result<Var> {
        self.apply(
            Op::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }

    /// Pull `cotangent` back from `output` to every tracked value on the tape.
    pub fn backward(&self, output: &Var, cotangent: Tensor) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::config("backward on an inference tape"));
        }
        if cotangent.shape() != output.shape() {
            return Err(Error::dim(format!(
                "cotangent {:?} does not match output {:?}",
                cotangent.shape(),
                output.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let Some(root) = output.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(cotangent);
        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            let primals: Vec<&Tensor> = node.inputs.iter().map(|v| v.value.as_ref()).collect();
            let input_grads = vjp(op, &primals, &g)?;
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                if let Some(iid) = input.id {
                    accumulate(&mut grads[iid], ig);
                }
            }
            // Keep the root's own cotangent available to callers.
            if id == root {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.id.and_then(|id| self.grads.get(id)?.as_ref())
    }

    /// Gradient for `var`, zeros when nothing flowed back to it.
    pub fn wrt(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
