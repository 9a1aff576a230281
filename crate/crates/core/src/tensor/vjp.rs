//! Analytic vector-Jacobian products for every primitive in [`super::ops`].

use super::flops;
use super::ops::{self, axis_split, row_stats, sigmoid_scalar, Op};
use super::Tensor;
use crate::error::{Error, Result};

/// Cotangents of `op`'s inputs given its primal inputs and the cotangent of
/// its output. One tensor per input, each shaped like that input.
pub fn vjp(op: &Op, primals: &[&Tensor], cotangent: &Tensor) -> Result<Vec<Tensor>> {
    // Re-evaluate the forward to validate shapes; this also keeps backward
    // work out of the forward FLOP counter.
    let out = flops::uncounted(|| ops::apply(op, primals))?;
    if out.shape() != cotangent.shape() {
        return Err(Error::dim(format!(
            "{}: cotangent {:?} does not match output {:?}",
            op.name(),
            cotangent.shape(),
            out.shape()
        )));
    }
    let g = cotangent;
    let x = primals[0];
    flops::uncounted(|| -> Result<Vec<Tensor>> {
        Ok(match op {
            Op::MatMul => {
                let b = primals[1];
                let (m, k, p) = (x.shape()[0], x.shape()[1], b.shape()[1]);
                let bt = ops::transpose(b)?;
                let at = ops::transpose(x)?;
                vec![
                    Tensor::from_parts(vec![m, k], ops::matmul_kernel(g.data(), bt.data(), m, p, k)),
                    Tensor::from_parts(vec![k, p], ops::matmul_kernel(at.data(), g.data(), k, m, p)),
                ]
            }
            Op::Add => vec![g.clone(), g.clone()],
            Op::AddBias => vec![g.clone(), sum_leading(g)],
            Op::Hadamard => vec![g.zip_map(primals[1], |a, b| a * b), g.zip_map(x, |a, b| a * b)],
            Op::Scale(c) => vec![g.map(|v| v * c)],
            Op::Softmax { axis } => vec![softmax_vjp(&out, g, *axis)],
            Op::LayerNorm { eps } => layer_norm_vjp(x, primals[1], g, *eps),
            Op::DepthwiseConvFull => {
                let kernel = primals[1];
                let c = x.last_dim();
                let gc = g.data();
                let tile = |src: &Tensor| {
                    Tensor::from_fn(x.shape(), |i| src.data()[i] * gc[i % c])
                };
                vec![tile(kernel), tile(x), Tensor::vector(gc)]
            }
            Op::PointwiseConv => {
                let w = primals[1];
                let (h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let c_out = w.shape()[1];
                let wt = ops::transpose(w)?;
                let xt = ops::transpose(&x.reshape(&[h * wd, c])?)?;
                vec![
                    Tensor::from_parts(
                        vec![h, wd, c],
                        ops::matmul_kernel(g.data(), wt.data(), h * wd, c_out, c),
                    ),
                    Tensor::from_parts(
                        vec![c, c_out],
                        ops::matmul_kernel(xt.data(), g.data(), c, h * wd, c_out),
                    ),
                    sum_leading(g),
                ]
            }
            Op::BroadcastVector { .. } => vec![sum_leading(g).reshape(x.shape())?],
            // Re(F_n X F_d) is self-adjoint because both DFT matrices are symmetric.
            Op::Dft2Real => vec![ops::dft2_real(g)?],
            Op::Relu => vec![g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })],
            Op::Sigmoid => vec![g.zip_map(&out, |gv, s| gv * s * (1.0 - s))],
            Op::Swish => vec![g.zip_map(x, |gv, xv| {
                let s = sigmoid_scalar(xv);
                gv * (s + xv * s * (1.0 - s))
            })],
            Op::Reshape { .. } => vec![g.reshape(x.shape())?],
            Op::Transpose => vec![ops::transpose(g)?],
            Op::SliceLast { start, len } => {
                let d = x.last_dim();
                let mut dx = Tensor::zeros(x.shape());
                if *len > 0 {
                    for (row, grow) in dx.data_mut().chunks_mut(d).zip(g.data().chunks(*len)) {
                        row[*start..start + len].copy_from_slice(grow);
                    }
                }
                vec![dx]
            }
            Op::SliceRows { start, .. } => {
                let row: usize = x.shape()[1..].iter().product();
                let mut dx = Tensor::zeros(x.shape());
                dx.data_mut()[start * row..start * row + g.len()].copy_from_slice(g.data());
                vec![dx]
            }
            Op::ConcatLast => {
                let total = g.last_dim();
                let mut offset = 0;
                let mut parts = Vec::with_capacity(primals.len());
                for p in primals {
                    parts.push(ops::slice_last(g, offset, p.last_dim())?);
                    offset += p.last_dim();
                }
                debug_assert_eq!(offset, total);
                parts
            }
            Op::ConcatRows => {
                let mut offset = 0;
                let mut parts = Vec::with_capacity(primals.len());
                for p in primals {
                    parts.push(ops::slice_rows(g, offset, p.shape()[0])?);
                    offset += p.shape()[0];
                }
                parts
            }
            Op::RepeatRows { times } => {
                let c = x.shape()[1];
                let mut dx = Tensor::zeros(x.shape());
                for (r, row) in dx.data_mut().chunks_mut(c.max(1)).enumerate() {
                    for t in 0..*times {
                        let src = (r * times + t) * c;
                        for (o, &v) in row.iter_mut().zip(&g.data()[src..src + c]) {
                            *o += v;
                        }
                    }
                }
                vec![dx]
            }
            Op::TileRows { times } => {
                let block = x.len();
                let mut dx = Tensor::zeros(x.shape());
                for t in 0..*times {
                    for (o, &v) in dx.data_mut().iter_mut().zip(&g.data()[t * block..(t + 1) * block]) {
                        *o += v;
                    }
                }
                vec![dx]
            }
            Op::MeanRows => {
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let inv = 1.0 / n as f64;
                vec![Tensor::from_fn(&[n, d], |i| g.data()[i % d] * inv)]
            }
            Op::SumAll => vec![Tensor::full(x.shape(), g.data()[0])],
            Op::SoftmaxCrossEntropy { labels } => {
                let (b, k) = (x.shape()[0], x.shape()[1]);
                let mut dx = ops::softmax(x, 1)?;
                let s = g.data()[0] / b as f64;
                for (i, &l) in labels.iter().enumerate() {
                    dx.data_mut()[i * k + l] -= 1.0;
                }
                vec![dx.map(|v| v * s)]
            }
        })
    })
}

/// Sum over every axis but the last.
fn sum_leading(g: &Tensor) -> Tensor {
    let d = g.last_dim();
    let mut acc = vec![0.0; d];
    if d > 0 {
        for row in g.data().chunks(d) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    Tensor::vector(&acc)
}

fn softmax_vjp(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let dot: f64 = (0..len).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

fn layer_norm_vjp(x: &Tensor, gamma: &Tensor, g: &Tensor, eps: f64) -> Vec<Tensor> {
    let d = x.last_dim();
    let inv_d = 1.0 / d as f64;
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for ((xr, gr), dxr) in x.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
        let (mean, rstd) = row_stats(xr, eps);
        let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * rstd).collect();
        let gg: Vec<f64> = gr.iter().zip(gamma.data()).map(|(a, b)| a * b).collect();
        let mean_gg = gg.iter().sum::<f64>() * inv_d;
        let mean_ggx = gg.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() * inv_d;
        for j in 0..d {
            dxr[j] = rstd * (gg[j] - mean_gg - xhat[j] * mean_ggx);
            dgamma[j] += gr[j] * xhat[j];
            dbeta[j] += gr[j];
        }
    }
    vec![
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::vector(&dgamma),
        Tensor::vector(&dbeta),
    ]
}
