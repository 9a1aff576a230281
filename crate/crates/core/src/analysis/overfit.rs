//! Memorise a tiny fixed batch with plain SGD, as a trainability check.
//!
//! Model: one preset block, global mean pool over positions, dense classifier,
//! mean softmax cross-entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gformer::{assemble, preset, Block, PresetDims, PresetName, SpatialShape};
use crate::params::{BlockParams, ParamSpec};
use crate::tensor::{Tape, Tensor, Var};

pub const BATCH: usize = 8;
pub const SIDE: usize = 8;
pub const WIDTH: usize = 8;
pub const CLASSES: usize = 4;

/// Learning rates that bring every supported preset under 10% of its initial
/// loss within 500 steps at seed 42.
pub fn default_lr(name: PresetName) -> f64 {
    match name {
        PresetName::Transformer => 0.1,
        PresetName::Metaformer => 0.1,
        PresetName::Cat => 0.5,
        PresetName::SqueezeExcite => 4.0,
        PresetName::MlpMixer => 0.1,
        PresetName::Fnet => 0.1,
    }
}

/// The fixed synthetic batch: standard-normal `8 x 8 x 8` samples and labels
/// drawn from 4 classes.
pub fn synthetic_batch(seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..BATCH)
        .map(|_| Tensor::standard_normal(&[SIDE * SIDE, WIDTH], &mut rng))
        .collect();
    let labels = (0..BATCH).map(|_| rng.random_range(0..CLASSES)).collect();
    (xs, labels)
}

fn model(name: PresetName, seed: u64) -> Result<(Block, BlockParams)> {
    let cfg = preset(name, &PresetDims::new(WIDTH, SpatialShape::Grid(SIDE, SIDE)))?;
    let (block, mut params) = assemble(cfg, seed)?;
    let head = BlockParams::init(
        &[
            ParamSpec::uniform("head.weight", &[WIDTH, CLASSES], WIDTH),
            ParamSpec::uniform("head.bias", &[CLASSES], WIDTH),
        ],
        seed.wrapping_add(1),
    )?;
    for (k, v) in head.iter() {
        params.insert(k, v.clone())?;
    }
    Ok((block, params))
}

fn loss_on(tape: &Tape, block: &Block, params: &crate::params::ParamVars, xs: &[Tensor], labels: &[usize]) -> Result<Var> {
    let pooled = xs
        .iter()
        .map(|x| {
            let y = block.forward_on(tape, params, &tape.constant(x.clone()))?;
            tape.mean_rows(&y)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Var> = pooled.iter().collect();
    let features = tape.concat_rows(&refs)?;
    let logits = tape.dense(&features, params.get("head.weight")?, params.get("head.bias")?)?;
    tape.softmax_cross_entropy(&logits, labels)
}

/// Cross-entropy before each of `steps` SGD updates and after the last, so
/// the trace has `steps + 1` entries.
pub fn overfit_sanity(name: PresetName, steps: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::config(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    let (xs, labels) = synthetic_batch(seed);
    let (block, mut params) = model(name, seed)?;
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let tape = Tape::new();
        let vars = params.leaves(&tape);
        let loss = loss_on(&tape, &block, &vars, &xs, &labels)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(Error::TrainingFailure { step, loss: value });
        }
        trace.push(value);
        if step == steps {
            break;
        }
        let grads = vars.gradients(&tape.backward(&loss, Tensor::scalar(1.0))?);
        let mut next = BlockParams::new();
        for ((name, p), (_, g)) in params.iter().zip(grads.iter()) {
            next.insert(name, p.zip_map(g, |w, dw| w - lr * dw))?;
        }
        params = next;
    }
    Ok(trace)
}
