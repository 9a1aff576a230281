mod common;

use common::{criteria, permutation, rng};
use gformer::taff::{self, DetectorSurrogate, FeaturePyramid, FusedSequence, TaffDims};
use gformer::tensor::Tensor;

#[test]
fn equivariance_and_round_trip() {
    let o = criteria::taff_properties().unwrap();
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn equivariance_over_several_instances() {
    for seed in 0..5 {
        let (pyramid, dims, params) = criteria::taff_instance(seed).unwrap();
        let g = taff::gather(&pyramid, &params, dims.d).unwrap();
        let fused = taff::fuse(&g, &params, dims.heads).unwrap();
        let perm = permutation(g.rows(), &mut rng(seed));
        let lhs = taff::fuse(&criteria::permuted(&g, &perm).unwrap(), &params, dims.heads).unwrap();
        assert!(lhs.seq.max_abs_diff(&fused.seq.permute_rows(&perm).unwrap()) <= 1e-10);
        assert_eq!(lhs.index, criteria::permuted(&fused, &perm).unwrap().index);
    }
}

#[test]
fn param_count_by_hand() {
    // One level of 4 channels, d = 4, one anchor: 4*4 + 4 projection,
    // 4*(16 + 4) attention, 4*8 + 8 + 8*4 + 4 FFN, 16 norm.
    let dims = TaffDims { d: 4, heads: 1, ffn_hidden: 8, anchors: 1 };
    assert_eq!(taff::taff_param_count(&dims, &[4]), 20 + 80 + 76 + 16);
    assert_eq!(criteria::enumerated_taff_params(&dims, &[4]).unwrap(), 192);
    // Anchors add one d-vector each per level; heads change nothing.
    let more = TaffDims { anchors: 3, heads: 2, ..dims };
    assert_eq!(taff::taff_param_count(&more, &[4, 6]), 192 + 2 * 4 + (6 * 4 + 3 * 4));
    // No levels leaves the encoder alone.
    assert_eq!(taff::taff_param_count(&dims, &[]), 192 - 20);
    assert_eq!(criteria::enumerated_taff_params(&dims, &[]).unwrap(), 172);
}

#[test]
fn two_row_fuse_matches_scalar_oracle() {
    // d = 2, one head, all weights zero except biases: attention outputs bo,
    // FFN outputs b2, so every row moves by bo + b2.
    let dims = TaffDims { d: 2, heads: 1, ffn_hidden: 3, anchors: 1 };
    let mut params = taff::assemble_taff(&dims, &[1], 0).unwrap();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names.iter().filter(|n| n.starts_with("attn.") || n.starts_with("mlp.")) {
        let shape = params.get(n).unwrap().shape().to_vec();
        params.set(n, Tensor::zeros(&shape)).unwrap();
    }
    params.set("attn.bo", Tensor::vector(&[0.5, -1.0])).unwrap();
    params.set("mlp.b2", Tensor::vector(&[0.25, 2.0])).unwrap();
    let seq = Tensor::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5]]).unwrap();
    let fs = FusedSequence {
        seq: seq.clone(),
        index: taff::sequence_index(&[(1, 2)], 1),
        level_shapes: vec![(1, 2)],
        anchors: 1,
    };
    let out = taff::fuse(&fs, &params, 1).unwrap();
    let want = Tensor::from_rows(&[&[1.75, 3.0], &[-2.25, 1.5]]).unwrap();
    assert!(out.seq.max_abs_diff(&want) < 1e-15);
}

#[test]
fn surrogate_overhead_by_hand() {
    let s = DetectorSurrogate::fixture();
    let rep = s.overhead();
    // Backbone 3-16-32-64-96-128-160-192 with 3x3 kernels and biases.
    let widths = [3usize, 16, 32, 64, 96, 128, 160, 192];
    let backbone: usize = widths.windows(2).map(|w| w[0] * w[1] * 9 + w[1]).sum();
    assert_eq!(backbone, 650_848);
    // Per level: two separable heads, 6 anchors x (81 classes, 4 box terms).
    let heads: usize = [96usize, 128, 160, 192]
        .iter()
        .map(|&c| (10 * c + c * 486 + 486) + (10 * c + c * 24 + 24))
        .sum();
    assert_eq!(rep.base_params, backbone + heads);
    let taff = (32 * 576 + 4 * 6 * 32) + 4 * (32 * 32 + 32) + (32 * 64 + 64) + (64 * 32 + 32) + 4 * 32;
    assert_eq!(rep.taff_params, taff);
    assert!((rep.overhead_percent - 100.0 * taff as f64 / (backbone + heads) as f64).abs() < 1e-12);
}

#[test]
fn fixture_pyramid_loads_and_round_trips() {
    let text = include_str!("../fixtures/pyramid_small.json");
    let p = FeaturePyramid::from_json(text).unwrap();
    assert_eq!(p.channels(), vec![3, 2]);
    assert_eq!(p.rows(), 2 * (4 + 1));
    assert_eq!(FeaturePyramid::from_json(&p.to_json()).unwrap(), p);
}

#[test]
fn corrupted_index_is_rejected() {
    let (pyramid, dims, params) = criteria::taff_instance(3).unwrap();
    let mut g = taff::gather(&pyramid, &params, dims.d).unwrap();
    g.index.swap(0, 1);
    assert!(taff::scatter(&g).is_ok());
    g.index[1] = g.index[0];
    assert!(taff::scatter(&g).is_err());
}
