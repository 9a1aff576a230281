//! The generalized block.
//!
//! One configurable dataflow:
//!
//! ```text
//! a = norm1(x)
//! s = spatial_mix(a)              // n x d map or 1 x d summary
//! u = x + s   if residual1 else s
//! b = norm2(u)
//! c = channel_mix(b)
//! v = u + c   if residual2 else c
//! w = x * broadcast(v)   if hadamard_broadcast else v
//! out = x + w if residual3 else w
//! ```
//!
//! Switching mixers, residuals, interaction and norm recovers Transformer,
//! MetaFormer, CAT, Squeeze-and-Excite, MLP-Mixer and FNet blocks; see
//! [`preset`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixers::{self, ChannelMixerKind, InteractionKind, SpatialMixerKind};
use crate::params::{BlockParams, ParamSpec, ParamVars};
use crate::tensor::ops::Activation;
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    LayerNorm,
    Identity,
}

/// Spatial layout of the tokens: an `[H, W]` grid or a flat sequence of `n`.
/// A flat sequence behaves as an `n x 1` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpatialShape {
    Grid(usize, usize),
    Flat(usize),
}

impl SpatialShape {
    pub fn hw(&self) -> (usize, usize) {
        match *self {
            SpatialShape::Grid(h, w) => (h, w),
            SpatialShape::Flat(n) => (n, 1),
        }
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.hw();
        h * w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GFormerConfig {
    pub d: usize,
    pub spatial: SpatialMixerKind,
    pub channel: ChannelMixerKind,
    pub interaction: InteractionKind,
    pub residual1: bool,
    pub residual2: bool,
    pub residual3: bool,
    pub norm: NormKind,
    pub spatial_shape: SpatialShape,
}

impl GFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d must be positive"));
        }
        let (h, w) = self.spatial_shape.hw();
        if h == 0 || w == 0 {
            return Err(Error::config("spatial_shape extents must be positive"));
        }
        self.spatial.validate(self.d)?;
        self.channel.validate(self.d)?;
        if self.spatial.is_summary() {
            let mixer = serde_json::to_string(&self.spatial).unwrap_or_default();
            if self.residual1 || self.residual2 {
                return Err(Error::config(format!(
                    "residual1/residual2 need a shape-preserving spatial mixer, but spatial = {mixer} \
                     produces a 1 x d summary"
                )));
            }
            if self.interaction == InteractionKind::None {
                return Err(Error::config(format!(
                    "interaction = none with spatial = {mixer} leaves a 1 x d output; \
                     use hadamard_broadcast"
                )));
            }
        }
        Ok(())
    }

    /// Parameter layout in enumeration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = self.d;
        let mut specs = Vec::new();
        if self.norm == NormKind::LayerNorm {
            specs.push(ParamSpec::ones("norm1.gamma", &[d]));
            specs.push(ParamSpec::zeros("norm1.beta", &[d]));
        }
        specs.extend(self.spatial.param_specs(d, self.spatial_shape.hw()));
        if self.norm == NormKind::LayerNorm {
            specs.push(ParamSpec::ones("norm2.gamma", &[d]));
            specs.push(ParamSpec::zeros("norm2.beta", &[d]));
        }
        specs.extend(self.channel.param_specs(d));
        specs
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// The six named reductions of the generalized block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Transformer,
    Metaformer,
    Cat,
    SqueezeExcite,
    MlpMixer,
    Fnet,
}

impl PresetName {
    pub const ALL: [PresetName; 6] = [
        PresetName::Transformer,
        PresetName::Metaformer,
        PresetName::Cat,
        PresetName::SqueezeExcite,
        PresetName::MlpMixer,
        PresetName::Fnet,
    ];

    /// Presets that have a standalone reference block in [`crate::blocks`].
    pub const WITH_REFERENCE: [PresetName; 5] = [
        PresetName::Transformer,
        PresetName::Cat,
        PresetName::SqueezeExcite,
        PresetName::MlpMixer,
        PresetName::Fnet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Transformer => "transformer",
            PresetName::Metaformer => "metaformer",
            PresetName::Cat => "cat",
            PresetName::SqueezeExcite => "squeeze_excite",
            PresetName::MlpMixer => "mlp_mixer",
            PresetName::Fnet => "fnet",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown preset `{s}` (expected one of transformer, metaformer, cat, \
                     squeeze_excite, mlp_mixer, fnet)"
                ))
            })
    }
}

/// Sizes a preset is instantiated with.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetDims {
    pub d: usize,
    pub spatial_shape: SpatialShape,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub token_hidden: usize,
    pub se_reduction: usize,
    /// Token mixer plugged into the MetaFormer preset.
    pub metaformer_mixer: SpatialMixerKind,
}

impl PresetDims {
    /// Defaults: 2 heads and SE reduction 2 when `d` is even (else 1), FFN
    /// width `2d`, token-MLP width `n`, and a Fourier token mixer for the
    /// MetaFormer preset.
    pub fn new(d: usize, spatial_shape: SpatialShape) -> Self {
        let even = d % 2 == 0 && d >= 2;
        Self {
            d,
            spatial_shape,
            heads: if even { 2 } else { 1 },
            ffn_hidden: 2 * d,
            token_hidden: spatial_shape.tokens().max(1),
            se_reduction: if even { 2 } else { 1 },
            metaformer_mixer: SpatialMixerKind::FourierMix,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_ffn_hidden(mut self, hidden: usize) -> Self {
        self.ffn_hidden = hidden;
        self
    }
}

/// The configuration of a named preset.
pub fn preset(name: PresetName, dims: &PresetDims) -> Result<GFormerConfig> {
    let mlp = ChannelMixerKind::Mlp {
        hidden: dims.ffn_hidden,
        activation: Activation::Swish,
    };
    let residual_pair = |spatial| GFormerConfig {
        d: dims.d,
        spatial,
        channel: mlp,
        interaction: InteractionKind::None,
        residual1: true,
        residual2: true,
        residual3: false,
        norm: NormKind::LayerNorm,
        spatial_shape: dims.spatial_shape,
    };
    let gated = |spatial, channel| GFormerConfig {
        d: dims.d,
        spatial,
        channel,
        interaction: InteractionKind::HadamardBroadcast,
        residual1: false,
        residual2: false,
        residual3: false,
        norm: NormKind::Identity,
        spatial_shape: dims.spatial_shape,
    };
    let cfg = match name {
        PresetName::Transformer => {
            residual_pair(SpatialMixerKind::MultiHeadAttention { heads: dims.heads })
        }
        PresetName::Metaformer => residual_pair(dims.metaformer_mixer),
        PresetName::MlpMixer => residual_pair(SpatialMixerKind::SpatialMlp {
            hidden: dims.token_hidden,
        }),
        PresetName::Fnet => residual_pair(SpatialMixerKind::FourierMix),
        PresetName::Cat => gated(SpatialMixerKind::DepthwiseFullConv, ChannelMixerKind::Pointwise),
        PresetName::SqueezeExcite => gated(
            SpatialMixerKind::GlobalMeanPool,
            ChannelMixerKind::SeGate {
                reduction: dims.se_reduction,
            },
        ),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// An assembled block. Parameters live separately in a [`BlockParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    config: GFormerConfig,
}

/// Validate `config` and draw its parameters from `seed`.
pub fn assemble(config: GFormerConfig, seed: u64) -> Result<(Block, BlockParams)> {
    config.validate()?;
    let params = BlockParams::init(&config.param_specs(), seed)?;
    Ok((Block { config }, params))
}

impl Block {
    pub fn new(config: GFormerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &GFormerConfig {
        &self.config
    }

    /// Evaluate on plain tensors. `x` is `[n, d]` or `[H, W, d]`; the output
    /// has the same shape.
    pub fn forward(&self, params: &BlockParams, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let p = params.constants(&tape);
        let x = tape.constant(x.clone());
        Ok(self.forward_on(&tape, &p, &x)?.value().clone())
    }

    pub fn forward_on(&self, tape: &Tape, p: &ParamVars, x: &Var) -> Result<Var> {
        let cfg = &self.config;
        let (h, w) = cfg.spatial_shape.hw();
        let n = h * w;
        let d = cfg.d;
        let input_shape = x.shape().to_vec();
        if input_shape != [n, d] && input_shape != [h, w, d] {
            return Err(Error::dim(format!(
                "block expects input [{n}, {d}] or [{h}, {w}, {d}], got {input_shape:?}"
            )));
        }
        let x = tape.reshape(x, &[n, d])?;

        let a = self.norm(tape, p, &x, "norm1")?;
        let mixed = mixers::spatial_summary(tape, &cfg.spatial, &a, (h, w), p)?;
        let summary = mixed.is_summary();
        let s = mixed.into_inner();
        let u = if cfg.residual1 { tape.add(&x, &s)? } else { s };
        let b = self.norm(tape, p, &u, "norm2")?;
        let c = mixers::channel_mix(tape, &cfg.channel, &b, p)?;
        let v = if cfg.residual2 { tape.add(&u, &c)? } else { c };
        let wv = match cfg.interaction {
            InteractionKind::None => v,
            InteractionKind::HadamardBroadcast => {
                let y = if summary {
                    let grid = tape.broadcast_vector(&v, n, 1)?;
                    tape.reshape(&grid, &[n, d])?
                } else {
                    v
                };
                tape.hadamard(&x, &y)?
            }
        };
        let out = if cfg.residual3 { tape.add(&x, &wv)? } else { wv };
        if out.shape() != [n, d] {
            return Err(Error::dim(format!(
                "block produced {:?}, expected [{n}, {d}]",
                out.shape()
            )));
        }
        tape.reshape(&out, &input_shape)
    }

    fn norm(&self, tape: &Tape, p: &ParamVars, x: &Var, prefix: &str) -> Result<Var> {
        match self.config.norm {
            NormKind::Identity => Ok(x.clone()),
            NormKind::LayerNorm => {
                let d = self.config.d;
                let gamma = p.get_shaped(&format!("{prefix}.gamma"), &[d])?;
                let beta = p.get_shaped(&format!("{prefix}.beta"), &[d])?;
                tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
            }
        }
    }
}
