#![allow(dead_code)]

use gformer::blocks;
use gformer::gformer::{assemble, preset, PresetDims, PresetName, SpatialShape};
use gformer::gradcheck::{self, GradCheckReport};
use gformer::params::BlockParams;
use gformer::taff::{self, FeaturePyramid, LevelShape, TaffDims};
use gformer::tensor::{Op, Tensor, Var};
use gformer::Result;

pub mod criteria;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

pub fn permutation(n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(r);
    p
}

/// Values bounded away from zero, for primitives with a kink there.
fn off_kink(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, r).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// One random instance of every primitive.
pub fn primitive_cases(r: &mut ChaCha8Rng) -> Vec<(Op, Vec<Tensor>)> {
    let mut dim = |lo: usize, hi: usize| -> usize { r.random_range(lo..=hi) };
    let (m, k, p) = (dim(1, 4), dim(1, 4), dim(1, 4));
    let (h, w, c) = (dim(1, 3), dim(1, 3), dim(1, 4));
    let co = dim(1, 4);
    let (a, b) = (dim(1, 4), dim(1, 4));
    let s1 = dim(0, b - 1);
    let l1 = dim(1, b - s1);
    let s2 = dim(0, a - 1);
    let l2 = dim(1, a - s2);
    let t = dim(1, 3);
    let rank3 = [dim(1, 3), dim(1, 3), dim(1, 3)];
    let axis = dim(0, 2);
    let labels: Vec<usize> = (0..a).map(|_| dim(0, b - 1)).collect();
    let split = dim(1, 3);
    let scale = r.random_range(-2.0..2.0);
    vec![
        (Op::MatMul, vec![uniform(&[m, k], r), uniform(&[k, p], r)]),
        (Op::Add, vec![uniform(&rank3, r), uniform(&rank3, r)]),
        (Op::AddBias, vec![uniform(&[a, b], r), uniform(&[b], r)]),
        (Op::Hadamard, vec![uniform(&rank3, r), uniform(&rank3, r)]),
        (Op::Scale(scale), vec![uniform(&[a, b], r)]),
        (Op::Softmax { axis }, vec![uniform(&rank3, r)]),
        (Op::LayerNorm { eps: 1e-5 }, vec![uniform(&[a, b + 1], r), uniform(&[b + 1], r), uniform(&[b + 1], r)]),
        (Op::DepthwiseConvFull, vec![uniform(&[h, w, c], r), uniform(&[h, w, c], r), uniform(&[c], r)]),
        (Op::PointwiseConv, vec![uniform(&[h, w, c], r), uniform(&[c, co], r), uniform(&[co], r)]),
        (Op::BroadcastVector { h, w }, vec![uniform(&[1, 1, c], r)]),
        (Op::Dft2Real, vec![uniform(&[a + 1, b + 1], r)]),
        (Op::Relu, vec![off_kink(&[a, b], r)]),
        (Op::Sigmoid, vec![uniform(&[a, b], r).map(|v| 3.0 * v)]),
        (Op::Swish, vec![uniform(&[a, b], r).map(|v| 3.0 * v)]),
        (Op::Reshape { shape: vec![a * b] }, vec![uniform(&[a, b], r)]),
        (Op::Transpose, vec![uniform(&[a, b], r)]),
        (Op::SliceLast { start: s1, len: l1 }, vec![uniform(&[a, b], r)]),
        (Op::SliceRows { start: s2, len: l2 }, vec![uniform(&[a, b], r)]),
        (Op::ConcatLast, (0..split).map(|i| uniform(&[a, i + 1], r)).collect()),
        (Op::ConcatRows, (0..split).map(|i| uniform(&[i + 1, b], r)).collect()),
        (Op::RepeatRows { times: t }, vec![uniform(&[a, b], r)]),
        (Op::TileRows { times: t }, vec![uniform(&[a, b], r)]),
        (Op::MeanRows, vec![uniform(&[a, b], r)]),
        (Op::SumAll, vec![uniform(&rank3, r)]),
        (Op::SoftmaxCrossEntropy { labels }, vec![uniform(&[a, b], r).map(|v| 2.0 * v)]),
    ]
}

pub const PRIMITIVE_COUNT: usize = 25;

/// `(label, report)` for every primitive over `instances` random draws each.
pub fn primitive_gradient_reports(instances: usize, seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for i in 0..instances {
        for (op, primals) in primitive_cases(&mut r) {
            let rep = gradcheck::check_op(&op, &primals, seed + i as u64)?;
            out.push((op.name().to_string(), rep));
        }
    }
    Ok(out)
}

/// `(label, report)` for every preset on small random instances, with
/// parameters drawn away from their initial values.
pub fn preset_gradient_reports(instances: usize, seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for name in PresetName::ALL {
        for _ in 0..instances {
            let d = 2 * r.random_range(1..=2);
            let (h, w) = (r.random_range(1..=3), r.random_range(1..=2));
            let shape = if matches!(name, PresetName::Cat | PresetName::SqueezeExcite) {
                SpatialShape::Grid(h, w)
            } else {
                SpatialShape::Flat(h * w)
            };
            let cfg = preset(name, &PresetDims::new(d, shape).with_ffn_hidden(r.random_range(1..=2 * d)))?;
            let (block, init) = assemble(cfg, r.random())?;
            let params = init.randomized(r.random(), 1.0);
            let x = Tensor::standard_normal(&[h * w, d], &mut r);
            out.push((name.to_string(), gradcheck::check_block(&block, &params, &x, r.random())?));
        }
    }
    Ok(out)
}

/// Gradient checks through the standalone reference blocks.
pub fn reference_gradient_reports(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let d = 4;
    let enc = |ffn: usize| {
        let cfg = preset(PresetName::Transformer, &PresetDims::new(d, SpatialShape::Flat(3)).with_ffn_hidden(ffn)).unwrap();
        assemble(cfg, 1).unwrap().1
    };
    let p = enc(6).randomized(r.random(), 1.0);
    let x = Tensor::standard_normal(&[3, d], &mut r);
    out.push((
        "transformer_encoder_layer".into(),
        gradcheck::check_with_params(&x, &p, |t, x, p| blocks::transformer_encoder_layer_on(t, x, p, 2, 6), r.random())?,
    ));
    let grid = |name| {
        let cfg = preset(name, &PresetDims::new(d, SpatialShape::Grid(2, 3))).unwrap();
        assemble(cfg, 2).unwrap().1
    };
    let x = Tensor::standard_normal(&[2, 3, d], &mut r);
    let p = grid(PresetName::Cat).randomized(r.random(), 1.0);
    out.push(("cat_block".into(), gradcheck::check_with_params(&x, &p, blocks::cat_block_on, r.random())?));
    let p = grid(PresetName::SqueezeExcite).randomized(r.random(), 1.0);
    out.push((
        "squeeze_excite_block".into(),
        gradcheck::check_with_params(&x, &p, |t, x, p| blocks::squeeze_excite_block_on(t, x, p, 2), r.random())?,
    ));
    let flat = |name| {
        let cfg = preset(name, &PresetDims::new(d, SpatialShape::Flat(5))).unwrap();
        assemble(cfg, 3).unwrap().1
    };
    let x = Tensor::standard_normal(&[5, d], &mut r);
    let p = flat(PresetName::MlpMixer).randomized(r.random(), 1.0);
    out.push(("mlp_mixer_block".into(), gradcheck::check_with_params(&x, &p, blocks::mlp_mixer_block_on, r.random())?));
    let p = flat(PresetName::Fnet).randomized(r.random(), 1.0);
    out.push(("fnet_block".into(), gradcheck::check_with_params(&x, &p, blocks::fnet_block_on, r.random())?));
    Ok(out)
}

/// Gradient check through gather followed by fuse, with respect to the
/// pyramid features and every projection and encoder parameter.
pub fn taff_gradient_report(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shapes = [LevelShape { h: 2, w: 2, c: 3 }, LevelShape { h: 1, w: 2, c: 2 }];
    let dims = TaffDims { d: 4, heads: 2, ffn_hidden: 5, anchors: 2 };
    let pyramid = FeaturePyramid::random(&shapes, dims.anchors, &mut r)?;
    let params = taff::assemble_taff(&dims, &pyramid.channels(), r.random())?.randomized(r.random(), 1.0);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let levels = pyramid.levels().len();
    let mut inputs: Vec<(String, Tensor)> =
        pyramid.levels().iter().enumerate().map(|(i, l)| (format!("level{i}"), l.map.clone())).collect();
    inputs.extend(params.iter().map(|(k, v)| (k.to_string(), v.clone())));
    gradcheck::check(
        &inputs,
        |tape, vars| {
            let maps: Vec<&Var> = vars[..levels].iter().collect();
            let p = gformer::params::ParamVars::from_pairs(names.iter().cloned().zip(vars[levels..].iter().cloned()));
            let seq = taff::gather_on(tape, &maps, dims.anchors, &p, dims.d)?;
            blocks::transformer_encoder_layer_on(tape, &seq, &p, dims.heads, dims.ffn_hidden)
        },
        r.random(),
    )
}

/// Nested-sum oracle for `Re(DFT2(x))`.
pub fn naive_dft2_real(x: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    Tensor::from_fn(&[n, d], |flat| {
        let (k, l) = (flat / d, flat % d);
        let mut re = 0.0;
        for i in 0..n {
            for j in 0..d {
                let angle = -2.0
                    * std::f64::consts::PI
                    * (((k * i) % n) as f64 / n as f64 + ((l * j) % d) as f64 / d as f64);
                re += x.data()[i * d + j] * angle.cos();
            }
        }
        re
    })
}

pub fn worst(reports: &[(String, GradCheckReport)]) -> (f64, String) {
    reports
        .iter()
        .map(|(n, r)| (r.max_rel_error(), n.clone()))
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a })
}

pub fn params_numel(p: &BlockParams) -> usize {
    p.iter().map(|(_, t)| t.len()).sum()
}
