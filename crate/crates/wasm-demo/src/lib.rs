//! Browser bindings for the gformer demo page.
//!
//! Every export takes plain numbers and returns a JSON string. The logic lives
//! in ordinary functions so it can be tested natively.

use gformer::analysis::count_flops;
use gformer::analysis::flops::spatial_mixer_flops;
use gformer::mixers::{attention_weights, SpatialMixerKind};
use gformer::params::{BlockParams, ParamSpec};
use gformer::{assemble, preset, PresetDims, PresetName, SpatialShape, Tensor};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Smooth deterministic stand-in for an activation map.
fn pattern(n: usize, d: usize, phase: f64) -> Tensor {
    Tensor::from_fn(&[n, d], |i| {
        let (r, c) = ((i / d) as f64, (i % d) as f64);
        0.3 * (0.7 * r + 1.3 * c + phase).sin()
    })
}

/// FLOPs per forward pass at `n = 2^k` for `k` in `4..=log2_max`, for every
/// preset plus attention and Fourier mixing on their own.
pub fn flop_curves_json(d: usize, log2_max: u32) -> gformer::Result<Value> {
    let ns: Vec<usize> = (4..=log2_max.clamp(4, 16)).map(|k| 1usize << k).collect();
    let mut series = Vec::new();
    for name in PresetName::ALL {
        let mut ys = Vec::with_capacity(ns.len());
        for &n in &ns {
            ys.push(count_flops(&preset(name, &PresetDims::new(d, SpatialShape::Flat(n)))?, n));
        }
        series.push(json!({ "name": name.as_str(), "flops": ys }));
    }
    for (label, kind) in [
        ("attention mixer", SpatialMixerKind::MultiHeadAttention { heads: 1 }),
        ("fourier mixer", SpatialMixerKind::FourierMix),
    ] {
        let ys: Vec<u64> = ns.iter().map(|&n| spatial_mixer_flops(&kind, n as u64, d as u64)).collect();
        series.push(json!({ "name": label, "flops": ys }));
    }
    Ok(json!({ "d": d, "n": ns, "series": series }))
}

/// Run a CAT block on an `h x w` grid twice, with and without a bump at
/// `(y, x)`, and report how far each output position moved. Because the
/// gate is computed from the whole map, every position responds.
pub fn cat_field_json(h: usize, w: usize, d: usize, y: usize, x: usize, seed: u64) -> gformer::Result<Value> {
    if y >= h || x >= w {
        return Err(gformer::Error::Config(format!("bump ({y}, {x}) is outside the {h}x{w} grid")));
    }
    let (block, params) = assemble(preset(PresetName::Cat, &PresetDims::new(d, SpatialShape::Grid(h, w)))?, seed)?;
    let base = pattern(h * w, d, 0.0);
    let bumped = Tensor::from_fn(&[h * w, d], |i| base.data()[i] + if i / d == y * w + x { 2.0 } else { 0.0 });
    let a = block.forward(&params, &base.reshape(&[h, w, d])?)?;
    let b = block.forward(&params, &bumped.reshape(&[h, w, d])?)?;
    let delta: Vec<f64> = a
        .data()
        .chunks(d)
        .zip(b.data().chunks(d))
        .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .collect();
    Ok(json!({ "h": h, "w": w, "delta": delta }))
}

/// Attention weights of every head on `n` tokens of width `d`.
pub fn attention_map_json(n: usize, d: usize, heads: usize, seed: u64) -> gformer::Result<Value> {
    let kind = SpatialMixerKind::MultiHeadAttention { heads };
    kind.validate(d)?;
    let specs: Vec<ParamSpec> = kind.param_specs(d, (n, 1));
    let params = BlockParams::init(&specs, seed)?.randomized(seed, 1.0);
    let maps = attention_weights(&pattern(n, d, 0.5), &params, heads)?;
    let heads: Vec<&[f64]> = maps.iter().map(Tensor::data).collect();
    Ok(json!({ "n": n, "heads": heads }))
}

fn js(r: gformer::Result<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn flop_curves(d: usize, log2_max: u32) -> Result<String, JsError> {
    js(flop_curves_json(d, log2_max))
}

#[wasm_bindgen]
pub fn cat_field(h: usize, w: usize, d: usize, y: usize, x: usize, seed: u64) -> Result<String, JsError> {
    js(cat_field_json(h, w, d, y, x, seed))
}

#[wasm_bindgen]
pub fn attention_map(n: usize, d: usize, heads: usize, seed: u64) -> Result<String, JsError> {
    js(attention_map_json(n, d, heads, seed))
}
