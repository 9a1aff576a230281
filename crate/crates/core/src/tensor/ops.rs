//! Primitive forward operations.
//!
//! All loops run in a fixed order (outer index first, innermost index last),
//! so results are bit-reproducible and explicit-loop oracles written in the
//! same order agree exactly.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::flops::{self, fft_flops};
use super::Tensor;
use crate::error::{Error, Result};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    /// `x * sigmoid(x)`.
    Swish,
}

impl Activation {
    pub fn flops_per_element(self) -> u64 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => flops::RELU_PER_ELEMENT,
            Activation::Sigmoid => flops::SIGMOID_PER_ELEMENT,
            Activation::Swish => flops::SWISH_PER_ELEMENT,
        }
    }
}

/// A differentiable primitive together with its static attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    MatMul,
    Add,
    /// `x + b` with `b` broadcast along the last axis.
    AddBias,
    Hadamard,
    Scale(f64),
    Softmax { axis: usize },
    LayerNorm { eps: f64 },
    DepthwiseConvFull,
    PointwiseConv,
    BroadcastVector { h: usize, w: usize },
    Dft2Real,
    Relu,
    Sigmoid,
    Swish,
    Reshape { shape: Vec<usize> },
    Transpose,
    SliceLast { start: usize, len: usize },
    SliceRows { start: usize, len: usize },
    ConcatLast,
    ConcatRows,
    RepeatRows { times: usize },
    TileRows { times: usize },
    MeanRows,
    SumAll,
    SoftmaxCrossEntropy { labels: Vec<usize> },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::AddBias => "add_bias",
            Op::Hadamard => "hadamard",
            Op::Scale(_) => "scale",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::DepthwiseConvFull => "depthwise_conv_full",
            Op::PointwiseConv => "pointwise_conv",
            Op::BroadcastVector { .. } => "broadcast_vector",
            Op::Dft2Real => "dft2_real",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Swish => "swish",
            Op::Reshape { .. } => "reshape",
            Op::Transpose => "transpose",
            Op::SliceLast { .. } => "slice_last",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatLast => "concat_last",
            Op::ConcatRows => "concat_rows",
            Op::RepeatRows { .. } => "repeat_rows",
            Op::TileRows { .. } => "tile_rows",
            Op::MeanRows => "mean_rows",
            Op::SumAll => "sum_all",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    /// Look up an attribute-free primitive by name.
    ///
    /// Names of primitives that carry attributes (softmax axis, reshape
    /// target, ...) are rejected with a configuration error; anything else
    /// unknown is an unsupported op.
    pub fn from_name(name: &str) -> Result<Op> {
        Ok(match name {
            "matmul" => Op::MatMul,
            "add" => Op::Add,
            "add_bias" => Op::AddBias,
            "hadamard" => Op::Hadamard,
            "depthwise_conv_full" => Op::DepthwiseConvFull,
            "pointwise_conv" => Op::PointwiseConv,
            "dft2_real" => Op::Dft2Real,
            "relu" => Op::Relu,
            "sigmoid" => Op::Sigmoid,
            "swish" => Op::Swish,
            "transpose" => Op::Transpose,
            "concat_last" => Op::ConcatLast,
            "concat_rows" => Op::ConcatRows,
            "mean_rows" => Op::MeanRows,
            "sum_all" => Op::SumAll,
            "scale" | "softmax" | "layer_norm" | "broadcast_vector" | "reshape" | "slice_last"
            | "slice_rows" | "repeat_rows" | "tile_rows" | "softmax_cross_entropy" => {
                return Err(Error::config(format!("op `{name}` needs attributes")))
            }
            other => return Err(Error::UnsupportedOp(other.to_string())),
        })
    }

    /// Number of tensor inputs, `None` for variadic concatenations.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Op::MatMul | Op::Add | Op::AddBias | Op::Hadamard => Some(2),
            Op::LayerNorm { .. } | Op::DepthwiseConvFull | Op::PointwiseConv => Some(3),
            Op::ConcatLast | Op::ConcatRows => None,
            _ => Some(1),
        }
    }
}

/// Evaluate `op` on `inputs`.
pub fn apply(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::dim(format!(
                "{} takes {n} inputs, got {}",
                op.name(),
                inputs.len()
            )));
        }
    } else if inputs.is_empty() {
        return Err(Error::dim(format!("{} needs at least one input", op.name())));
    }
    let x = inputs[0];
    match op {
        Op::MatMul => matmul(x, inputs[1]),
        Op::Add => add(x, inputs[1]),
        Op::AddBias => add_bias(x, inputs[1]),
        Op::Hadamard => hadamard(x, inputs[1]),
        Op::Scale(c) => Ok(scale(x, *c)),
        Op::Softmax { axis } => softmax(x, *axis),
        Op::LayerNorm { eps } => layer_norm(x, inputs[1], inputs[2], *eps),
        Op::DepthwiseConvFull => depthwise_conv_full(x, inputs[1], inputs[2]),
        Op::PointwiseConv => pointwise_conv(x, inputs[1], inputs[2]),
        Op::BroadcastVector { h, w } => broadcast_vector(x, *h, *w),
        Op::Dft2Real => dft2_real(x),
        Op::Relu => Ok(relu(x)),
        Op::Sigmoid => Ok(sigmoid(x)),
        Op::Swish => Ok(swish(x)),
        Op::Reshape { shape } => x.reshape(shape),
        Op::Transpose => transpose(x),
        Op::SliceLast { start, len } => slice_last(x, *start, *len),
        Op::SliceRows { start, len } => slice_rows(x, *start, *len),
        Op::ConcatLast => concat_last(inputs),
        Op::ConcatRows => concat_rows(inputs),
        Op::RepeatRows { times } => repeat_rows(x, *times),
        Op::TileRows { times } => tile_rows(x, *times),
        Op::MeanRows => mean_rows(x),
        Op::SumAll => Ok(sum_all(x)),
        Op::SoftmaxCrossEntropy { labels } => softmax_cross_entropy(x, labels),
    }
}

fn require_rank(x: &Tensor, rank: usize, what: &str) -> Result<()> {
    if x.rank() != rank {
        return Err(Error::dim(format!(
            "{what} expects a rank-{rank} tensor, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

fn require_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Uncounted `m x k` by `k x p` product in i-k-j order.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim(format!(
            "matmul: cannot multiply {:?} by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    flops::record(2 * (m * k * p) as u64);
    Ok(Tensor::from_parts(
        vec![m, p],
        matmul_kernel(a.data(), b.data(), m, k, p),
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape(a, b, "add")?;
    flops::record(a.len() as u64);
    Ok(a.zip_map(b, |x, y| x + y))
}

pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.rank() != 1 || x.rank() == 0 || bias.len() != x.last_dim() {
        return Err(Error::dim(format!(
            "add_bias: bias {:?} does not match last axis of {:?}",
            bias.shape(),
            x.shape()
        )));
    }
    let d = bias.len();
    let mut out = x.clone();
    if d > 0 {
        for row in out.data_mut().chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
    }
    Ok(out)
}

pub fn hadamard(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    require_same_shape(x, y, "hadamard")?;
    flops::record(x.len() as u64);
    Ok(x.zip_map(y, |a, b| a * b))
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    flops::record(x.len() as u64);
    x.map(|v| v * c)
}

/// (outer, len, inner) split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::dim(format!(
            "softmax axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    if !x.all_finite() {
        return Err(Error::NumericInput("softmax input is not finite".into()));
    }
    flops::record(flops::SOFTMAX_PER_ELEMENT * x.len() as u64);
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out[at(j)] /= sum;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Normalize every slice along the last axis to zero mean and unit
/// (population) variance, then apply `gamma * . + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("layer_norm eps must be positive, got {eps}")));
    }
    let d = x.last_dim();
    if x.rank() == 0 || d == 0 {
        return Err(Error::dim("layer_norm needs a non-empty last axis"));
    }
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::dim(format!(
            "layer_norm: gamma {:?} / beta {:?} must both be [{d}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    flops::record(flops::LAYER_NORM_PER_ELEMENT * x.len() as u64);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let (mean, rstd) = row_stats(row, eps);
        for ((v, &g), &b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (*v - mean) * rstd * g + b;
        }
    }
    Ok(out)
}

/// Mean and reciprocal standard deviation of one normalization slice.
pub(crate) fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Depthwise convolution whose kernel covers the whole `H x W` extent
/// (valid padding), producing a single `1 x 1 x C` output position.
pub fn depthwise_conv_full(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    require_rank(x, 3, "depthwise_conv_full")?;
    if kernel.shape() != x.shape() {
        return Err(Error::dim(format!(
            "depthwise_conv_full: kernel {:?} must cover input {:?}",
            kernel.shape(),
            x.shape()
        )));
    }
    let c = x.shape()[2];
    if bias.shape() != [c] {
        return Err(Error::dim(format!(
            "depthwise_conv_full: bias {:?} must be [{c}]",
            bias.shape()
        )));
    }
    flops::record(2 * x.len() as u64);
    let mut acc = vec![0.0; c];
    if c > 0 {
        for (xs, ks) in x.data().chunks(c).zip(kernel.data().chunks(c)) {
            for ((a, &xv), &kv) in acc.iter_mut().zip(xs).zip(ks) {
                *a += xv * kv;
            }
        }
    }
    let data = acc.iter().zip(bias.data()).map(|(a, b)| b + a).collect();
    Ok(Tensor::from_parts(vec![1, 1, c], data))
}

/// 1x1 convolution: the same `C x C'` linear map at every spatial position.
pub fn pointwise_conv(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    require_rank(x, 3, "pointwise_conv")?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if weights.rank() != 2 || weights.shape()[0] != c {
        return Err(Error::dim(format!(
            "pointwise_conv: weights {:?} do not accept {c} channels",
            weights.shape()
        )));
    }
    let c_out = weights.shape()[1];
    if bias.shape() != [c_out] {
        return Err(Error::dim(format!(
            "pointwise_conv: bias {:?} must be [{c_out}]",
            bias.shape()
        )));
    }
    flops::record(2 * (h * w * c * c_out) as u64);
    let mut data = matmul_kernel(x.data(), weights.data(), h * w, c, c_out);
    if c_out > 0 {
        for row in data.chunks_mut(c_out) {
            for (o, &b) in row.iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c_out], data))
}

/// Copy a channel vector (`[D]`, `[1, D]` or `[1, 1, D]`) to every position
/// of an `H x W` grid.
pub fn broadcast_vector(v: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return Err(Error::dim("broadcast_vector: target extents must be positive"));
    }
    let leading_ones = v.rank() >= 1 && v.shape()[..v.rank() - 1].iter().all(|&e| e == 1);
    if !leading_ones {
        return Err(Error::dim(format!(
            "broadcast_vector: {:?} is not a channel vector",
            v.shape()
        )));
    }
    let d = v.last_dim();
    let mut data = Vec::with_capacity(h * w * d);
    for _ in 0..h * w {
        data.extend_from_slice(v.data());
    }
    Ok(Tensor::from_parts(vec![h, w, d], data))
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// Real part of the 2-D DFT of an `n x d` matrix: a DFT along the sequence
/// axis composed with a DFT along the feature axis.
pub fn dft2_real(x: &Tensor) -> Result<Tensor> {
    require_rank(x, 2, "dft2_real")?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    flops::record(d as u64 * fft_flops(n) + n as u64 * fft_flops(d));
    if n == 0 || d == 0 {
        return Ok(x.clone());
    }
    let mut rows: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if d > 1 {
        plan(d).process(&mut rows);
    }
    // Columns become contiguous so the sequence-axis transform runs in place.
    let mut cols = vec![Complex64::new(0.0, 0.0); n * d];
    for i in 0..n {
        for j in 0..d {
            cols[j * n + i] = rows[i * d + j];
        }
    }
    if n > 1 {
        plan(n).process(&mut cols);
    }
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..n {
            out[i * d + j] = cols[j * n + i].re;
        }
    }
    Ok(Tensor::from_parts(vec![n, d], out))
}

pub fn relu(x: &Tensor) -> Tensor {
    flops::record(flops::RELU_PER_ELEMENT * x.len() as u64);
    x.map(|v| v.max(0.0))
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    flops::record(flops::SIGMOID_PER_ELEMENT * x.len() as u64);
    x.map(sigmoid_scalar)
}

pub fn swish(x: &Tensor) -> Tensor {
    flops::record(flops::SWISH_PER_ELEMENT * x.len() as u64);
    x.map(|v| v * sigmoid_scalar(v))
}

pub fn activate(x: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Identity => x.clone(),
        Activation::Relu => relu(x),
        Activation::Sigmoid => sigmoid(x),
        Activation::Swish => swish(x),
    }
}

pub fn transpose(x: &Tensor) -> Result<Tensor> {
    require_rank(x, 2, "transpose")?;
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let src = x.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

/// `len` entries of the last axis starting at `start`.
pub fn slice_last(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let d = x.last_dim();
    if x.rank() == 0 || start + len > d {
        return Err(Error::dim(format!(
            "slice_last [{start}, {}) out of range for {:?}",
            start + len,
            x.shape()
        )));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    let mut data = Vec::with_capacity(x.len() / d.max(1) * len);
    if d > 0 {
        for row in x.data().chunks(d) {
            data.extend_from_slice(&row[start..start + len]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// `len` entries of the first axis starting at `start`.
pub fn slice_rows(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if x.rank() == 0 || start + len > x.shape()[0] {
        return Err(Error::dim(format!(
            "slice_rows [{start}, {}) out of range for {:?}",
            start + len,
            x.shape()
        )));
    }
    let row: usize = x.shape()[1..].iter().product();
    let mut shape = x.shape().to_vec();
    shape[0] = len;
    Ok(Tensor::from_parts(
        shape,
        x.data()[start * row..(start + len) * row].to_vec(),
    ))
}

pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat_last needs at least one input"))?;
    if first.rank() == 0 {
        return Err(Error::dim("concat_last needs rank >= 1"));
    }
    let lead = &first.shape()[..first.rank() - 1];
    if parts
        .iter()
        .any(|p| p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead)
    {
        return Err(Error::dim("concat_last: leading extents differ"));
    }
    let rows: usize = lead.iter().product();
    let total: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            let d = p.last_dim();
            data.extend_from_slice(&p.data()[r * d..(r + 1) * d]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::from_parts(shape, data))
}

pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat_rows needs at least one input"))?;
    if first.rank() == 0 {
        return Err(Error::dim("concat_rows needs rank >= 1"));
    }
    let tail = &first.shape()[1..];
    if parts.iter().any(|p| p.rank() != first.rank() || &p.shape()[1..] != tail) {
        return Err(Error::dim("concat_rows: trailing extents differ"));
    }
    let mut shape = first.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Ok(Tensor::from_parts(shape, data))
}

/// Each row repeated `times` times consecutively: `[a, b] -> [a, a, b, b]`.
pub fn repeat_rows(x: &Tensor, times: usize) -> Result<Tensor> {
    require_rank(x, 2, "repeat_rows")?;
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut data = Vec::with_capacity(r * c * times);
    for i in 0..r {
        for _ in 0..times {
            data.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
    }
    Ok(Tensor::from_parts(vec![r * times, c], data))
}

/// The whole block of rows repeated `times` times: `[a, b] -> [a, b, a, b]`.
pub fn tile_rows(x: &Tensor, times: usize) -> Result<Tensor> {
    require_rank(x, 2, "tile_rows")?;
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut data = Vec::with_capacity(r * c * times);
    for _ in 0..times {
        data.extend_from_slice(x.data());
    }
    Ok(Tensor::from_parts(vec![r * times, c], data))
}

/// Column means of an `n x d` matrix, as a `1 x d` row.
pub fn mean_rows(x: &Tensor) -> Result<Tensor> {
    require_rank(x, 2, "mean_rows")?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if n == 0 {
        return Err(Error::dim("mean_rows of an empty matrix"));
    }
    flops::record((n * d) as u64);
    let mut acc = vec![0.0; d];
    for row in x.data().chunks(d.max(1)) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = 1.0 / n as f64;
    Ok(Tensor::from_parts(
        vec![1, d],
        acc.into_iter().map(|a| a * inv).collect(),
    ))
}

pub fn sum_all(x: &Tensor) -> Tensor {
    flops::record(x.len() as u64);
    Tensor::scalar(x.data().iter().sum())
}

/// Mean softmax cross-entropy of `b x k` logits against integer labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    require_rank(logits, 2, "softmax_cross_entropy")?;
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b || b == 0 {
        return Err(Error::dim(format!(
            "softmax_cross_entropy: {} labels for {b} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::dim(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax(logits, 1)?;
    let loss = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.data()[i * k + l].ln())
        .sum::<f64>()
        / b as f64;
    Ok(Tensor::scalar(loss))
}
