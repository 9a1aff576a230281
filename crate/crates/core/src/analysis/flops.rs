//! Closed-form FLOP and parameter counts.
//!
//! The formulas follow the conventions of [`crate::tensor::flops`]: one
//! multiply-accumulate is 2 FLOPs, biases are free, softmax costs 4 per
//! element, layer norm 7, and so on. They match the instrumented counter
//! exactly.

use crate::gformer::{GFormerConfig, NormKind};
use crate::mixers::{ChannelMixerKind, InteractionKind, SpatialMixerKind};
use crate::params::BlockParams;
use crate::tensor::flops::{
    fft_flops, LAYER_NORM_PER_ELEMENT, RELU_PER_ELEMENT, SIGMOID_PER_ELEMENT, SOFTMAX_PER_ELEMENT,
};

/// FLOPs of a spatial mixer over `n` tokens of width `d`.
pub fn spatial_mixer_flops(kind: &SpatialMixerKind, n: u64, d: u64) -> u64 {
    match *kind {
        SpatialMixerKind::MultiHeadAttention { heads } => {
            let heads = heads as u64;
            // QKV and output projections, scores and weighted sum, then the
            // 1/sqrt scale and softmax on every head's n x n matrix.
            8 * n * d * d + 4 * n * n * d + (1 + SOFTMAX_PER_ELEMENT) * heads * n * n
        }
        SpatialMixerKind::DepthwiseFullConv => 2 * n * d,
        SpatialMixerKind::GlobalMeanPool => n * d,
        SpatialMixerKind::FourierMix => d * fft_flops(n as usize) + n * fft_flops(d as usize),
        SpatialMixerKind::SpatialMlp { hidden } => {
            let h = hidden as u64;
            4 * d * n * h + crate::tensor::flops::SWISH_PER_ELEMENT * d * h
        }
    }
}

/// FLOPs of a channel mixer applied to `m` rows of width `d`.
pub fn channel_mixer_flops(kind: &ChannelMixerKind, m: u64, d: u64) -> u64 {
    match *kind {
        ChannelMixerKind::Mlp { hidden, activation } => {
            let h = hidden as u64;
            4 * m * d * h + activation.flops_per_element() * m * h
        }
        ChannelMixerKind::Pointwise => 2 * m * d * d,
        ChannelMixerKind::SeGate { reduction } => {
            let r = d / reduction as u64;
            4 * m * d * r + RELU_PER_ELEMENT * m * r + SIGMOID_PER_ELEMENT * m * d
        }
    }
}

/// FLOPs of one forward pass of a block over `n` tokens. Parameters whose
/// size follows the spatial extent (depthwise kernel, token MLP) are taken to
/// be sized for `n`.
pub fn count_flops(config: &GFormerConfig, n: usize) -> u64 {
    let (n, d) = (n as u64, config.d as u64);
    let norm = match config.norm {
        NormKind::LayerNorm => LAYER_NORM_PER_ELEMENT,
        NormKind::Identity => 0,
    };
    let summary = config.spatial.is_summary();
    let m = if summary { 1 } else { n };
    let mut total = norm * n * d + spatial_mixer_flops(&config.spatial, n, d);
    if config.residual1 {
        total += m * d;
    }
    total += norm * m * d + channel_mixer_flops(&config.channel, m, d);
    if config.residual2 {
        total += m * d;
    }
    if config.interaction == InteractionKind::HadamardBroadcast {
        total += n * d;
    }
    if config.residual3 {
        total += n * d;
    }
    total
}

/// Total scalar parameter count.
pub fn count_params(params: &BlockParams) -> usize {
    params.numel()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gformer::{assemble, preset, PresetDims, PresetName, SpatialShape};
    use crate::tensor::{flops, Tensor};

    #[test]
    fn cat_closed_form() {
        let d = 8;
        for n in [0usize, 1, 9, 64] {
            let cfg = preset(PresetName::Cat, &PresetDims::new(d, SpatialShape::Flat(n.max(1)))).unwrap();
            let (n, d) = (n as u64, d as u64);
            assert_eq!(count_flops(&cfg, n as usize), 2 * (n * d + d * d) + n * d);
        }
    }

    #[test]
    fn attention_projections_are_four_n_d_squared_macs() {
        // With n = 1 the score, softmax and mixing terms collapse to O(d).
        let kind = SpatialMixerKind::MultiHeadAttention { heads: 1 };
        let (n, d) = (1, 6);
        assert_eq!(spatial_mixer_flops(&kind, n, d) - 4 * n * n * d - 5 * n * n, 2 * 4 * n * d * d);
    }

    #[test]
    fn instrumented_counter_agrees_on_small_presets() {
        for name in PresetName::ALL {
            let cfg = preset(name, &PresetDims::new(4, SpatialShape::Grid(2, 3))).unwrap();
            let (block, p) = assemble(cfg.clone(), 1).unwrap();
            let x = Tensor::ones(&[6, 4]);
            let (_, counted) = flops::measure(|| block.forward(&p, &x).unwrap());
            assert_eq!(counted, count_flops(&cfg, 6), "{name}");
        }
    }

    #[test]
    fn params_are_summed_shapes() {
        assert_eq!(count_params(&BlockParams::new()), 0);
        let mut p = BlockParams::new();
        p.insert("w", Tensor::zeros(&[5, 5])).unwrap();
        assert_eq!(count_params(&p), 25);
    }
}
