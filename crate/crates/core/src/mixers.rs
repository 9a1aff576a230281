//! Spatial (token) mixers, channel mixers and pairwise interactions that
//! a gFormer block composes.
//!
//! Mixers read their weights from a [`ParamVars`] by fixed names:
//!
//! | mixer                 | parameters                                     |
//! |-----------------------|------------------------------------------------|
//! | multi-head attention  | `attn.{wq,bq,wk,bk,wv,bv,wo,bo}`               |
//! | depthwise full conv   | `dw.kernel` `[H, W, d]`, `dw.bias` `[d]`       |
//! | spatial MLP           | `token.w1` `[n, h]`, `token.b1`, `token.w2`, `token.b2` |
//! | channel MLP           | `mlp.w1` `[d, h]`, `mlp.b1`, `mlp.w2`, `mlp.b2` |
//! | pointwise             | `pw.weight` `[d, d]`, `pw.bias`                |
//! | squeeze-excite gate   | `se.w1` `[d, d/r]`, `se.b1`, `se.w2`, `se.b2`  |
//!
//! Weight matrices act on row vectors (`x W + b`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BlockParams, ParamSpec, ParamVars};
use crate::tensor::ops::Activation;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialMixerKind {
    MultiHeadAttention { heads: usize },
    DepthwiseFullConv,
    GlobalMeanPool,
    FourierMix,
    /// Dense map across the `n` flattened positions, applied per channel,
    /// with a Swish hidden layer of width `hidden`.
    SpatialMlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelMixerKind {
    Mlp { hidden: usize, activation: Activation },
    Pointwise,
    /// dense(d -> d/r), ReLU, dense(d/r -> d), sigmoid.
    SeGate { reduction: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    None,
    HadamardBroadcast,
}

/// Output of a spatial mixer: either a full `n x d` map or a single `1 x d`
/// summary row that still has to be broadcast.
#[derive(Debug, Clone)]
pub enum Mixed<T> {
    Map(T),
    Summary(T),
}

impl<T> Mixed<T> {
    pub fn inner(&self) -> &T {
        match self {
            Mixed::Map(t) | Mixed::Summary(t) => t,
        }
    }

    pub fn into_inner(self) -> T {
        match self {
            Mixed::Map(t) | Mixed::Summary(t) => t,
        }
    }

    pub fn is_summary(&self) -> bool {
        matches!(self, Mixed::Summary(_))
    }
}

impl SpatialMixerKind {
    /// Whether the mixer collapses the spatial axis to a single summary row.
    pub fn is_summary(&self) -> bool {
        matches!(
            self,
            SpatialMixerKind::DepthwiseFullConv | SpatialMixerKind::GlobalMeanPool
        )
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            SpatialMixerKind::MultiHeadAttention { heads } => {
                if heads == 0 || d % heads != 0 {
                    return Err(Error::config(format!(
                        "attention heads ({heads}) must divide d ({d})"
                    )));
                }
            }
            SpatialMixerKind::SpatialMlp { hidden } if hidden == 0 => {
                return Err(Error::config("spatial_mlp hidden width must be positive"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn param_specs(&self, d: usize, spatial: (usize, usize)) -> Vec<ParamSpec> {
        let (h, w) = spatial;
        let n = h * w;
        match *self {
            SpatialMixerKind::MultiHeadAttention { .. } => ["q", "k", "v", "o"]
                .iter()
                .flat_map(|p| {
                    [
                        ParamSpec::uniform(format!("attn.w{p}"), &[d, d], d),
                        ParamSpec::uniform(format!("attn.b{p}"), &[d], d),
                    ]
                })
                .collect(),
            SpatialMixerKind::DepthwiseFullConv => vec![
                ParamSpec::uniform("dw.kernel", &[h, w, d], n),
                ParamSpec::uniform("dw.bias", &[d], n),
            ],
            SpatialMixerKind::GlobalMeanPool | SpatialMixerKind::FourierMix => Vec::new(),
            SpatialMixerKind::SpatialMlp { hidden } => vec![
                ParamSpec::uniform("token.w1", &[n, hidden], n),
                ParamSpec::uniform("token.b1", &[hidden], n),
                ParamSpec::uniform("token.w2", &[hidden, n], hidden),
                ParamSpec::uniform("token.b2", &[n], hidden),
            ],
        }
    }
}

impl ChannelMixerKind {
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            ChannelMixerKind::Mlp { hidden, .. } if hidden == 0 => {
                Err(Error::config("mlp hidden width must be positive"))
            }
            ChannelMixerKind::SeGate { reduction } if reduction == 0 || d / reduction == 0 => {
                Err(Error::config(format!(
                    "se_gate reduction {reduction} leaves no hidden units for d = {d}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn param_specs(&self, d: usize) -> Vec<ParamSpec> {
        match *self {
            ChannelMixerKind::Mlp { hidden, .. } => vec![
                ParamSpec::uniform("mlp.w1", &[d, hidden], d),
                ParamSpec::uniform("mlp.b1", &[hidden], d),
                ParamSpec::uniform("mlp.w2", &[hidden, d], hidden),
                ParamSpec::uniform("mlp.b2", &[d], hidden),
            ],
            ChannelMixerKind::Pointwise => vec![
                ParamSpec::uniform("pw.weight", &[d, d], d),
                ParamSpec::uniform("pw.bias", &[d], d),
            ],
            ChannelMixerKind::SeGate { reduction } => {
                let r = d / reduction;
                vec![
                    ParamSpec::uniform("se.w1", &[d, r], d),
                    ParamSpec::uniform("se.b1", &[r], d),
                    ParamSpec::uniform("se.w2", &[r, d], r),
                    ParamSpec::uniform("se.b2", &[d], r),
                ]
            }
        }
    }
}

fn expect_matrix(x: &Var, rows: usize, what: &str) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[0] != rows {
        return Err(Error::dim(format!(
            "{what}: expected a {rows}-row matrix, got {:?}",
            x.shape()
        )));
    }
    Ok(x.shape()[1])
}

struct Projection<'a> {
    w: &'a Var,
    b: &'a Var,
}

fn projection<'a>(p: &'a ParamVars, tag: &str, d: usize) -> Result<Projection<'a>> {
    Ok(Projection {
        w: p.get_shaped(&format!("attn.w{tag}"), &[d, d])?,
        b: p.get_shaped(&format!("attn.b{tag}"), &[d])?,
    })
}

/// Per-head attention probabilities and the concatenated head outputs.
fn attention_heads(
    tape: &Tape,
    x: &Var,
    p: &ParamVars,
    heads: usize,
    keep_probs: bool,
) -> Result<(Var, Vec<Tensor>)> {
    let n = x.shape().first().copied().unwrap_or(0);
    let d = expect_matrix(x, n, "multi_head_attention")?;
    SpatialMixerKind::MultiHeadAttention { heads }.validate(d)?;
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let (pq, pk, pv) = (projection(p, "q", d)?, projection(p, "k", d)?, projection(p, "v", d)?);
    let q = tape.dense(x, pq.w, pq.b)?;
    let k = tape.dense(x, pk.w, pk.b)?;
    let v = tape.dense(x, pv.w, pv.b)?;
    let mut outputs = Vec::with_capacity(heads);
    let mut probs = Vec::new();
    for h in 0..heads {
        let start = h * head_dim;
        let qh = tape.slice_last(&q, start, head_dim)?;
        let kh = tape.slice_last(&k, start, head_dim)?;
        let vh = tape.slice_last(&v, start, head_dim)?;
        let scores = tape.matmul(&qh, &tape.transpose(&kh)?)?;
        let attn = tape.softmax(&tape.scale(&scores, scale)?, 1)?;
        if keep_probs {
            probs.push(attn.value().clone());
        }
        outputs.push(tape.matmul(&attn, &vh)?);
    }
    let refs: Vec<&Var> = outputs.iter().collect();
    Ok((tape.concat_last(&refs)?, probs))
}

/// Scaled dot-product self-attention over the rows of `x` (`n x d`), heads
/// concatenated and projected by `attn.wo`.
pub fn multi_head_attention(tape: &Tape, x: &Var, p: &ParamVars, heads: usize) -> Result<Var> {
    let (concat, _) = attention_heads(tape, x, p, heads, false)?;
    let d = concat.shape()[1];
    let po = projection(p, "o", d)?;
    tape.dense(&concat, po.w, po.b)
}

/// Row-stochastic `n x n` attention matrix of every head.
pub fn attention_weights(x: &Tensor, params: &BlockParams, heads: usize) -> Result<Vec<Tensor>> {
    let tape = Tape::inference();
    let p = params.constants(&tape);
    let x = tape.constant(x.clone());
    Ok(attention_heads(&tape, &x, &p, heads, true)?.1)
}

/// Apply a spatial mixer to `x` (`n x d`, `n = H * W`).
///
/// Depthwise full convolution and global mean pooling return a `1 x d`
/// summary; the other mixers return an `n x d` map.
pub fn spatial_summary(
    tape: &Tape,
    kind: &SpatialMixerKind,
    x: &Var,
    spatial: (usize, usize),
    p: &ParamVars,
) -> Result<Mixed<Var>> {
    let (h, w) = spatial;
    let n = h * w;
    let d = expect_matrix(x, n, "spatial mixer")?;
    kind.validate(d)?;
    Ok(match *kind {
        SpatialMixerKind::MultiHeadAttention { heads } => {
            Mixed::Map(multi_head_attention(tape, x, p, heads)?)
        }
        SpatialMixerKind::DepthwiseFullConv => {
            let kernel = p.get_shaped("dw.kernel", &[h, w, d])?;
            let bias = p.get_shaped("dw.bias", &[d])?;
            let grid = tape.reshape(x, &[h, w, d])?;
            let g = tape.depthwise_conv_full(&grid, kernel, bias)?;
            Mixed::Summary(tape.reshape(&g, &[1, d])?)
        }
        SpatialMixerKind::GlobalMeanPool => Mixed::Summary(tape.mean_rows(x)?),
        SpatialMixerKind::FourierMix => Mixed::Map(tape.dft2_real(x)?),
        SpatialMixerKind::SpatialMlp { hidden } => {
            let w1 = p.get_shaped("token.w1", &[n, hidden])?;
            let b1 = p.get_shaped("token.b1", &[hidden])?;
            let w2 = p.get_shaped("token.w2", &[hidden, n])?;
            let b2 = p.get_shaped("token.b2", &[n])?;
            let t = tape.transpose(x)?;
            let z = tape.activate(&tape.dense(&t, w1, b1)?, Activation::Swish)?;
            let y = tape.dense(&z, w2, b2)?;
            Mixed::Map(tape.transpose(&y)?)
        }
    })
}

/// Apply a channel mixer to the rows of `v` (`m x d`).
pub fn channel_mix(tape: &Tape, kind: &ChannelMixerKind, v: &Var, p: &ParamVars) -> Result<Var> {
    let m = v.shape().first().copied().unwrap_or(0);
    let d = expect_matrix(v, m, "channel mixer")?;
    kind.validate(d)?;
    match *kind {
        ChannelMixerKind::Mlp { hidden, activation } => {
            let w1 = p.get_shaped("mlp.w1", &[d, hidden])?;
            let b1 = p.get_shaped("mlp.b1", &[hidden])?;
            let w2 = p.get_shaped("mlp.w2", &[hidden, d])?;
            let b2 = p.get_shaped("mlp.b2", &[d])?;
            let z = tape.activate(&tape.dense(v, w1, b1)?, activation)?;
            tape.dense(&z, w2, b2)
        }
        ChannelMixerKind::Pointwise => {
            let w = p.get_shaped("pw.weight", &[d, d])?;
            let b = p.get_shaped("pw.bias", &[d])?;
            tape.dense(v, w, b)
        }
        ChannelMixerKind::SeGate { reduction } => {
            let r = d / reduction;
            let w1 = p.get_shaped("se.w1", &[d, r])?;
            let b1 = p.get_shaped("se.b1", &[r])?;
            let w2 = p.get_shaped("se.w2", &[r, d])?;
            let b2 = p.get_shaped("se.b2", &[d])?;
            let z = tape.activate(&tape.dense(v, w1, b1)?, Activation::Relu)?;
            tape.activate(&tape.dense(&z, w2, b2)?, Activation::Sigmoid)
        }
    }
}

/// Plain-tensor entry points, evaluated on an inference tape.
pub mod eval {
    use super::*;

    pub fn multi_head_attention(x: &Tensor, params: &BlockParams, heads: usize) -> Result<Tensor> {
        let tape = Tape::inference();
        let p = params.constants(&tape);
        let x = tape.constant(x.clone());
        Ok(super::multi_head_attention(&tape, &x, &p, heads)?.value().clone())
    }

    pub fn spatial_summary(
        kind: &SpatialMixerKind,
        x: &Tensor,
        spatial: (usize, usize),
        params: &BlockParams,
    ) -> Result<Mixed<Tensor>> {
        let tape = Tape::inference();
        let p = params.constants(&tape);
        let x = tape.constant(x.clone());
        Ok(match super::spatial_summary(&tape, kind, &x, spatial, &p)? {
            Mixed::Map(v) => Mixed::Map(v.value().clone()),
            Mixed::Summary(v) => Mixed::Summary(v.value().clone()),
        })
    }

    pub fn channel_mix(kind: &ChannelMixerKind, v: &Tensor, params: &BlockParams) -> Result<Tensor> {
        let tape = Tape::inference();
        let p = params.constants(&tape);
        let v = tape.constant(v.clone());
        Ok(super::channel_mix(&tape, kind, &v, &p)?.value().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use crate::test_util::rng;

    fn params_for(specs: Vec<ParamSpec>, seed: u64) -> BlockParams {
        BlockParams::init(&specs, seed).unwrap()
    }

    fn attn_params(d: usize, seed: u64) -> BlockParams {
        params_for(
            SpatialMixerKind::MultiHeadAttention { heads: 1 }.param_specs(d, (1, 1)),
            seed,
        )
    }

    #[test]
    fn single_token_attention_is_value_then_output_projection() {
        let p = attn_params(4, 3);
        let x = Tensor::uniform(&[1, 4], -1.0, 1.0, &mut rng(1));
        let out = eval::multi_head_attention(&x, &p, 2).unwrap();
        let g = |n: &str| p.get(n).unwrap();
        let v = ops::add_bias(&ops::matmul(&x, g("attn.wv")).unwrap(), g("attn.bv")).unwrap();
        let want = ops::add_bias(&ops::matmul(&v, g("attn.wo")).unwrap(), g("attn.bo")).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-14);
    }

    /// Scalar oracle for n = 2, d = 2, one head, hand-picked weights.
    #[test]
    fn two_token_attention_matches_scalar_oracle() {
        let mut p = BlockParams::new();
        let m = |r: &[&[f64]]| Tensor::from_rows(r).unwrap();
        p.insert("attn.wq", m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        p.insert("attn.bq", Tensor::zeros(&[2])).unwrap();
        p.insert("attn.wk", m(&[&[0.5, 0.0], &[0.0, -1.0]])).unwrap();
        p.insert("attn.bk", Tensor::zeros(&[2])).unwrap();
        p.insert("attn.wv", m(&[&[2.0, 0.0], &[1.0, 1.0]])).unwrap();
        p.insert("attn.bv", Tensor::vector(&[0.0, 1.0])).unwrap();
        p.insert("attn.wo", Tensor::identity(2)).unwrap();
        p.insert("attn.bo", Tensor::zeros(&[2])).unwrap();
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = eval::multi_head_attention(&x, &p, 1).unwrap();

        // q = x, k rows (0.5, 0), (0, -1); v rows (2, 1), (1, 2).
        let s = 1.0 / 2f64.sqrt();
        let row = |s0: f64, s1: f64| {
            let (e0, e1) = ((s0 * s).exp(), (s1 * s).exp());
            let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            [2.0 * p0 + 1.0 * p1, 1.0 * p0 + 2.0 * p1]
        };
        let r0 = row(0.5, 0.0);
        let r1 = row(0.0, -1.0);
        let want = [r0[0], r0[1], r1[0], r1[1]];
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rejects_bad_heads() {
        let p = attn_params(4, 1);
        let x = Tensor::zeros(&[2, 4]);
        assert!(matches!(eval::multi_head_attention(&x, &p, 3), Err(Error::Config(_))));
        assert!(matches!(eval::multi_head_attention(&x, &p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn attention_weights_are_row_stochastic() {
        let p = attn_params(4, 2);
        let x = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng(3));
        let w = attention_weights(&x, &p, 2).unwrap();
        assert_eq!(w.len(), 2);
        for head in w {
            for row in head.data().chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_pool_of_constant_is_constant() {
        let x = Tensor::full(&[6, 3], 2.5);
        let out = eval::spatial_summary(&SpatialMixerKind::GlobalMeanPool, &x, (2, 3), &BlockParams::new()).unwrap();
        assert!(out.is_summary());
        assert_eq!(out.inner().shape(), &[1, 3]);
        assert!(out.inner().data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn fourier_of_zeros_is_zero_map() {
        let x = Tensor::zeros(&[4, 3]);
        let out = eval::spatial_summary(&SpatialMixerKind::FourierMix, &x, (4, 1), &BlockParams::new()).unwrap();
        assert!(!out.is_summary());
        assert_eq!(out.into_inner(), x);
    }

    #[test]
    fn depthwise_summary_matches_loop_oracle() {
        let kind = SpatialMixerKind::DepthwiseFullConv;
        let p = params_for(kind.param_specs(2, (2, 2)), 5);
        let x = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng(4));
        let out = eval::spatial_summary(&kind, &x, (2, 2), &p).unwrap();
        let k = p.get("dw.kernel").unwrap().data();
        let b = p.get("dw.bias").unwrap().data();
        for c in 0..2 {
            let mut acc = 0.0;
            for pos in 0..4 {
                acc += x.data()[pos * 2 + c] * k[pos * 2 + c];
            }
            assert_eq!(out.inner().data()[c], b[c] + acc);
        }
    }

    #[test]
    fn wrong_parameter_shape_is_config_error() {
        let kind = SpatialMixerKind::DepthwiseFullConv;
        let p = params_for(kind.param_specs(2, (2, 2)), 5);
        let x = Tensor::zeros(&[6, 2]);
        assert!(matches!(
            eval::spatial_summary(&kind, &x, (3, 2), &p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn se_gate_with_zero_weights_is_one_half() {
        let kind = ChannelMixerKind::SeGate { reduction: 2 };
        let p = params_for(kind.param_specs(4), 1).randomized(0, 0.0);
        let v = Tensor::uniform(&[1, 4], -3.0, 3.0, &mut rng(2));
        let out = eval::channel_mix(&kind, &v, &p).unwrap();
        assert!(out.data().iter().all(|&g| g == 0.5));
    }

    #[test]
    fn se_gate_matches_composed_primitives() {
        let kind = ChannelMixerKind::SeGate { reduction: 2 };
        let p = params_for(kind.param_specs(4), 8).randomized(8, 1.5);
        let v = Tensor::uniform(&[1, 4], -2.0, 2.0, &mut rng(9));
        let out = eval::channel_mix(&kind, &v, &p).unwrap();
        let g = |n: &str| p.get(n).unwrap();
        let z = ops::relu(&ops::add_bias(&ops::matmul(&v, g("se.w1")).unwrap(), g("se.b1")).unwrap());
        let want = ops::sigmoid(&ops::add_bias(&ops::matmul(&z, g("se.w2")).unwrap(), g("se.b2")).unwrap());
        assert_eq!(out, want);
        assert!(out.data().iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn identity_mlp_passes_input_through() {
        let kind = ChannelMixerKind::Mlp { hidden: 3, activation: Activation::Identity };
        let mut p = BlockParams::new();
        p.insert("mlp.w1", Tensor::identity(3)).unwrap();
        p.insert("mlp.b1", Tensor::zeros(&[3])).unwrap();
        p.insert("mlp.w2", Tensor::identity(3)).unwrap();
        p.insert("mlp.b2", Tensor::zeros(&[3])).unwrap();
        let v = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng(1));
        assert_eq!(eval::channel_mix(&kind, &v, &p).unwrap(), v);
    }

    #[test]
    fn se_gate_rejects_oversized_reduction() {
        assert!(ChannelMixerKind::SeGate { reduction: 8 }.validate(4).is_err());
        assert!(ChannelMixerKind::SeGate { reduction: 0 }.validate(4).is_err());
        assert!(ChannelMixerKind::SeGate { reduction: 4 }.validate(4).is_ok());
    }

    #[test]
    fn kinds_serialize_in_snake_case() {
        let k = SpatialMixerKind::MultiHeadAttention { heads: 2 };
        assert_eq!(serde_json::to_string(&k).unwrap(), r#"{"multi_head_attention":{"heads":2}}"#);
        assert_eq!(serde_json::to_string(&SpatialMixerKind::FourierMix).unwrap(), r#""fourier_mix""#);
        let c: ChannelMixerKind =
            serde_json::from_str(r#"{"mlp":{"hidden":4,"activation":"swish"}}"#).unwrap();
        assert_eq!(c, ChannelMixerKind::Mlp { hidden: 4, activation: Activation::Swish });
        assert!(serde_json::from_str::<ChannelMixerKind>(r#"{"mlp":{"hidden":4,"activation":"swish","x":1}}"#).is_err());
    }
}
