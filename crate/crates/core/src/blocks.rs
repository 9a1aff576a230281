//! Standalone reference blocks.
//!
//! Each block here is written out directly from its own definition, without
//! going through [`crate::gformer`] or [`crate::mixers`]. They serve as the
//! equivalence oracles for the gFormer presets, so they share only the
//! tensor primitives and the parameter names (see [`crate::mixers`]).
//!
//! Every block comes in two forms: `*_on` works on a [`Tape`] and is
//! differentiable, the plain form evaluates tensors.

use crate::error::{Error, Result};
use crate::gformer::LAYER_NORM_EPS;
use crate::params::{BlockParams, ParamVars};
use crate::tensor::ops::Activation;
use crate::tensor::{Tape, Tensor, Var};

fn grid_extents(x: &Var, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::dim(format!(
            "{what} expects an H x W x C input, got {:?}",
            x.shape()
        ))),
    }
}

fn matrix_extents(x: &Var, what: &str) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, d] => Ok((n, d)),
        _ => Err(Error::dim(format!(
            "{what} expects an n x d input, got {:?}",
            x.shape()
        ))),
    }
}

fn pre_norm(tape: &Tape, p: &ParamVars, x: &Var, prefix: &str, d: usize) -> Result<Var> {
    let g = p.get_shaped(&format!("{prefix}.gamma"), &[d])?;
    let b = p.get_shaped(&format!("{prefix}.beta"), &[d])?;
    tape.layer_norm(x, g, b, LAYER_NORM_EPS)
}

/// `dense -> Swish -> dense` over the last axis, with `mlp.*` weights.
fn feed_forward(tape: &Tape, p: &ParamVars, x: &Var, d: usize, hidden: usize) -> Result<Var> {
    let h = tape.matmul(x, p.get_shaped("mlp.w1", &[d, hidden])?)?;
    let h = tape.add_bias(&h, p.get_shaped("mlp.b1", &[hidden])?)?;
    let h = tape.activate(&h, Activation::Swish)?;
    let y = tape.matmul(&h, p.get_shaped("mlp.w2", &[hidden, d])?)?;
    tape.add_bias(&y, p.get_shaped("mlp.b2", &[d])?)
}

fn ffn_width(p: &ParamVars, d: usize) -> Result<usize> {
    match *p.get("mlp.w1")?.shape() {
        [rows, hidden] if rows == d => Ok(hidden),
        ref s => Err(Error::config(format!("mlp.w1 has shape {s:?}, expected [{d}, _]"))),
    }
}

/// Convolution as Transformer: a depthwise convolution spanning the whole
/// map followed by a pointwise convolution produces one global vector,
/// which is repeated over the grid and multiplied into the input.
pub fn cat_block_on(tape: &Tape, x: &Var, p: &ParamVars) -> Result<Var> {
    let (h, w, c) = grid_extents(x, "cat_block")?;
    let global = tape.depthwise_conv_full(
        x,
        p.get_shaped("dw.kernel", &[h, w, c])?,
        p.get_shaped("dw.bias", &[c])?,
    )?;
    let global = tape.pointwise_conv(
        &global,
        p.get_shaped("pw.weight", &[c, c])?,
        p.get_shaped("pw.bias", &[c])?,
    )?;
    let y = tape.broadcast_vector(&global, h, w)?;
    tape.hadamard(x, &y)
}

/// Pre-norm Transformer encoder layer without positional encoding:
/// `u = x + MHA(LN(x))`, `out = u + FFN(LN(u))`, FFN = dense, Swish, dense.
///
/// Attention is evaluated head by head from column slices of the projection
/// weights, and the output projection is accumulated per head from row
/// slices of `attn.wo`.
pub fn transformer_encoder_layer_on(
    tape: &Tape,
    x: &Var,
    p: &ParamVars,
    heads: usize,
    ffn_hidden: usize,
) -> Result<Var> {
    let (_, d) = matrix_extents(x, "transformer_encoder_layer")?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "{heads} heads do not divide model width {d}"
        )));
    }
    let hd = d / heads;
    let a = pre_norm(tape, p, x, "norm1", d)?;
    let weight = |name: &str| p.get_shaped(name, &[d, d]);
    let bias = |name: &str| p.get_shaped(name, &[d]);
    let (wq, wk, wv, wo) = (weight("attn.wq")?, weight("attn.wk")?, weight("attn.wv")?, weight("attn.wo")?);
    let (bq, bk, bv, bo) = (bias("attn.bq")?, bias("attn.bk")?, bias("attn.bv")?, bias("attn.bo")?);
    let inv_sqrt = 1.0 / (hd as f64).sqrt();

    let mut attended: Option<Var> = None;
    for head in 0..heads {
        let cols = head * hd;
        let project = |w: &Var, b: &Var| -> Result<Var> {
            let y = tape.matmul(&a, &tape.slice_last(w, cols, hd)?)?;
            tape.add_bias(&y, &tape.slice_last(b, cols, hd)?)
        };
        let q = project(wq, bq)?;
        let k = project(wk, bk)?;
        let v = project(wv, bv)?;
        let logits = tape.scale(&tape.matmul(&q, &tape.transpose(&k)?)?, inv_sqrt)?;
        let weights = tape.softmax(&logits, 1)?;
        let head_out = tape.matmul(&weights, &v)?;
        let contribution = tape.matmul(&head_out, &tape.slice_rows(wo, cols, hd)?)?;
        attended = Some(match attended {
            None => contribution,
            Some(acc) => tape.add(&acc, &contribution)?,
        });
    }
    let attended = tape.add_bias(&attended.expect("heads >= 1"), bo)?;
    let u = tape.add(x, &attended)?;

    let b = pre_norm(tape, p, &u, "norm2", d)?;
    let f = feed_forward(tape, p, &b, d, ffn_hidden)?;
    tape.add(&u, &f)
}

/// Squeeze-and-Excite: global average pool, `dense -> ReLU -> dense ->
/// sigmoid` gate, gate repeated over the grid and multiplied into `x`.
pub fn squeeze_excite_block_on(tape: &Tape, x: &Var, p: &ParamVars, reduction: usize) -> Result<Var> {
    let (h, w, c) = grid_extents(x, "squeeze_excite_block")?;
    if reduction == 0 || c % reduction != 0 {
        return Err(Error::dim(format!(
            "reduction {reduction} does not divide {c} channels"
        )));
    }
    let r = c / reduction;
    let n = h * w;
    // Average pool as a (1 x n) row of 1/n times the flattened map.
    let averager = tape.constant(Tensor::full(&[1, n], 1.0 / n as f64));
    let squeezed = tape.matmul(&averager, &tape.reshape(x, &[n, c])?)?;
    let z = tape.matmul(&squeezed, p.get_shaped("se.w1", &[c, r])?)?;
    let z = tape.add_bias(&z, p.get_shaped("se.b1", &[r])?)?;
    let z = tape.activate(&z, Activation::Relu)?;
    let g = tape.matmul(&z, p.get_shaped("se.w2", &[r, c])?)?;
    let g = tape.add_bias(&g, p.get_shaped("se.b2", &[c])?)?;
    let gate = tape.activate(&g, Activation::Sigmoid)?;
    let y = tape.broadcast_vector(&gate, h, w)?;
    tape.hadamard(x, &y)
}

/// MLP-Mixer block: token-mixing MLP across positions, then channel MLP,
/// both pre-norm with residuals. Both MLPs use Swish.
pub fn mlp_mixer_block_on(tape: &Tape, x: &Var, p: &ParamVars) -> Result<Var> {
    let (n, d) = matrix_extents(x, "mlp_mixer_block")?;
    let token_hidden = match *p.get("token.w1")?.shape() {
        [rows, hidden] if rows == n => hidden,
        ref s => return Err(Error::dim(format!("token.w1 has shape {s:?}, expected [{n}, _]"))),
    };
    let a = pre_norm(tape, p, x, "norm1", d)?;
    let columns = tape.transpose(&a)?;
    let t = tape.matmul(&columns, p.get_shaped("token.w1", &[n, token_hidden])?)?;
    let t = tape.add_bias(&t, p.get_shaped("token.b1", &[token_hidden])?)?;
    let t = tape.activate(&t, Activation::Swish)?;
    let t = tape.matmul(&t, p.get_shaped("token.w2", &[token_hidden, n])?)?;
    let t = tape.add_bias(&t, p.get_shaped("token.b2", &[n])?)?;
    let u = tape.add(x, &tape.transpose(&t)?)?;
    let b = pre_norm(tape, p, &u, "norm2", d)?;
    let hidden = ffn_width(p, d)?;
    tape.add(&u, &feed_forward(tape, p, &b, d, hidden)?)
}

/// FNet block: `u = x + Re(DFT2(LN(x)))`, `out = u + FFN(LN(u))`.
pub fn fnet_block_on(tape: &Tape, x: &Var, p: &ParamVars) -> Result<Var> {
    let (_, d) = matrix_extents(x, "fnet_block")?;
    let a = pre_norm(tape, p, x, "norm1", d)?;
    let u = tape.add(x, &tape.dft2_real(&a)?)?;
    let b = pre_norm(tape, p, &u, "norm2", d)?;
    let hidden = ffn_width(p, d)?;
    tape.add(&u, &feed_forward(tape, p, &b, d, hidden)?)
}

fn eval(x: &Tensor, params: &BlockParams, f: impl FnOnce(&Tape, &Var, &ParamVars) -> Result<Var>) -> Result<Tensor> {
    let tape = Tape::inference();
    let p = params.constants(&tape);
    let x = tape.constant(x.clone());
    Ok(f(&tape, &x, &p)?.value().clone())
}

pub fn cat_block(x: &Tensor, params: &BlockParams) -> Result<Tensor> {
    eval(x, params, cat_block_on)
}

pub fn transformer_encoder_layer(
    x: &Tensor,
    params: &BlockParams,
    heads: usize,
    ffn_hidden: usize,
) -> Result<Tensor> {
    eval(x, params, |t, x, p| transformer_encoder_layer_on(t, x, p, heads, ffn_hidden))
}

pub fn squeeze_excite_block(x: &Tensor, params: &BlockParams, reduction: usize) -> Result<Tensor> {
    eval(x, params, |t, x, p| squeeze_excite_block_on(t, x, p, reduction))
}

pub fn mlp_mixer_block(x: &Tensor, params: &BlockParams) -> Result<Tensor> {
    eval(x, params, mlp_mixer_block_on)
}

pub fn fnet_block(x: &Tensor, params: &BlockParams) -> Result<Tensor> {
    eval(x, params, fnet_block_on)
}
