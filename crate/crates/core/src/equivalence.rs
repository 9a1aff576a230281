//! Preset-versus-reference comparisons on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks;
use crate::error::{Error, Result};
use crate::gformer::{assemble, preset, GFormerConfig, PresetDims, PresetName, SpatialShape};
use crate::mixers::{ChannelMixerKind, SpatialMixerKind};
use crate::params::BlockParams;
use crate::tensor::Tensor;

/// Evaluate the standalone reference block matching preset `name`, sized from
/// `config`. `x` is `[n, d]` for sequence blocks and `[h, w, d]` for the
/// gated convolutional ones.
pub fn reference_forward(name: PresetName, config: &GFormerConfig, params: &BlockParams, x: &Tensor) -> Result<Tensor> {
    match (name, &config.spatial, &config.channel) {
        (PresetName::Transformer, SpatialMixerKind::MultiHeadAttention { heads }, ChannelMixerKind::Mlp { hidden, .. }) => {
            blocks::transformer_encoder_layer(x, params, *heads, *hidden)
        }
        (PresetName::Cat, ..) => blocks::cat_block(x, params),
        (PresetName::SqueezeExcite, _, ChannelMixerKind::SeGate { reduction }) => {
            blocks::squeeze_excite_block(x, params, *reduction)
        }
        (PresetName::MlpMixer, ..) => blocks::mlp_mixer_block(x, params),
        (PresetName::Fnet, ..) => blocks::fnet_block(x, params),
        _ => Err(Error::config(format!("no standalone reference block for preset `{name}`"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trial {
    pub n: usize,
    pub d: usize,
    pub max_abs_diff: f64,
}

/// One random instance: `d` in {2, 4, 6, 8}, an `h x w` grid with
/// `h * w <= 16`, parameters and input drawn from `U(-1, 1)` and `N(0, 1)`.
pub fn trial(name: PresetName, seed: u64) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2 * rng.random_range(1..=4);
    let h = rng.random_range(1..=4);
    let w = rng.random_range(1..=16 / h);
    let gated = matches!(name, PresetName::Cat | PresetName::SqueezeExcite);
    let shape = if gated { SpatialShape::Grid(h, w) } else { SpatialShape::Flat(h * w) };
    let dims = PresetDims::new(d, shape).with_ffn_hidden(rng.random_range(1..=2 * d));
    let config = preset(name, &dims)?;
    let (block, init) = assemble(config.clone(), rng.random())?;
    let params = init.randomized(rng.random(), 1.0);
    let x_shape = if gated { vec![h, w, d] } else { vec![h * w, d] };
    let x = Tensor::standard_normal(&x_shape, &mut rng);
    let ours = block.forward(&params, &x)?;
    let theirs = reference_forward(name, &config, &params, &x)?;
    Ok(Trial { n: h * w, d, max_abs_diff: ours.max_abs_diff(&theirs) })
}

/// `trials` instances seeded from `seed`.
pub fn run_trials(name: PresetName, trials: usize, seed: u64) -> Result<Vec<Trial>> {
    (0..trials as u64).map(|k| trial(name, seed.wrapping_mul(1_000_003).wrapping_add(k))).collect()
}
