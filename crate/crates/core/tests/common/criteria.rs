//! One function per acceptance criterion. Each returns whether it held and a
//! one-line summary of what was measured.

use std::time::{Duration, Instant};

use gformer::analysis::bench::{bench_latency, BenchTarget, MIN_REPS, MIN_WARMUP};
use gformer::analysis::overfit::{default_lr, overfit_sanity};
use gformer::analysis::{count_flops, fit_scaling};
use gformer::equivalence::run_trials;
use gformer::gformer::{assemble, preset, PresetDims, PresetName, SpatialShape};
use gformer::taff::{self, DetectorSurrogate, FeaturePyramid, FusedSequence, LevelShape, TaffDims};
use gformer::tensor::{flops, ops, Tensor};
use gformer::Result;
use rand::Rng;

use super::*;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

pub const SEED: u64 = 42;

/// Run `f`, then also require it to finish within `limit`.
pub fn timed(limit: Duration, f: impl FnOnce() -> Result<Outcome>) -> Outcome {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let within = elapsed <= limit;
    match out {
        Ok(o) => Outcome::new(
            o.passed && within,
            format!(
                "{}; {:.1} s ({})",
                o.detail,
                elapsed.as_secs_f64(),
                if limit == Duration::MAX { "no limit".to_string() } else { format!("limit {} s", limit.as_secs()) }
            ),
        ),
        Err(e) => Outcome::new(false, format!("error: {e}")),
    }
}

pub fn preset_equivalence() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for name in PresetName::WITH_REFERENCE {
        for t in run_trials(name, 20, SEED)? {
            assert!(t.n <= 16 && t.d <= 8);
            worst = worst.max(t.max_abs_diff);
            count += 1;
        }
    }
    Ok(Outcome::new(worst <= 1e-10, format!("{count} trials, max |diff| {worst:.2e} (tol 1e-10)")))
}

pub fn gradient_suite() -> Result<Outcome> {
    let mut reports = primitive_gradient_reports(20, 11)?;
    reports.extend(preset_gradient_reports(4, 12)?);
    reports.extend(reference_gradient_reports(13)?);
    reports.push(("taff".into(), taff_gradient_report(14)?));
    let (err, name) = worst(&reports);
    Ok(Outcome::new(
        err <= 1e-4,
        format!("{} checks, max rel error {err:.2e} in {name} (tol 1e-4, floor 1e-8)", reports.len()),
    ))
}

pub const SLOPE_NS: [usize; 5] = [256, 512, 1024, 2048, 4096];

pub fn complexity_slopes() -> Result<Outcome> {
    let mut fits = Vec::new();
    // The linear-time targets are cheap, so they get more repetitions.
    let targets = [
        (BenchTarget::Block(PresetName::Cat), 200),
        (BenchTarget::Attention, MIN_REPS),
        (BenchTarget::FourierMix, 200),
    ];
    for (target, reps) in targets {
        let report = bench_latency(target, 64, &SLOPE_NS, reps, MIN_WARMUP, SEED)?;
        fits.push((target.name(), fit_scaling(&report.timing_points())?));
    }
    let (cat, attn, fnet) = (&fits[0].1, &fits[1].1, &fits[2].1);
    let passed = (0.75..=1.25).contains(&cat.slope)
        && (1.7..=2.3).contains(&attn.slope)
        && cat.slope < fnet.slope
        && fnet.slope < attn.slope
        && fits.iter().all(|(_, f)| f.r2 >= 0.98);
    let detail = fits
        .iter()
        .map(|(n, f)| format!("{n} slope {:.3} r2 {:.4}", f.slope, f.r2))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::new(passed, detail))
}

fn flop_shape(name: PresetName, n: usize) -> SpatialShape {
    let side = (n as f64).sqrt() as usize;
    if matches!(name, PresetName::Cat | PresetName::SqueezeExcite) && side * side == n {
        SpatialShape::Grid(side, side)
    } else {
        SpatialShape::Flat(n)
    }
}

pub fn flop_accounting() -> Result<Outcome> {
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for name in PresetName::ALL {
        for n in [4, 16, 64] {
            for d in [4, 8] {
                let cfg = preset(name, &PresetDims::new(d, flop_shape(name, n)))?;
                let (block, params) = assemble(cfg.clone(), SEED)?;
                let x = Tensor::standard_normal(&[n, d], &mut rng(SEED));
                let (out, counted) = flops::measure(|| block.forward(&params, &x));
                out?;
                cases += 1;
                if counted != count_flops(&cfg, n) {
                    mismatches.push(format!("{name} n={n} d={d}"));
                }
            }
        }
    }
    let dims = |name| PresetDims::new(64, flop_shape(name, 4096));
    let cat = count_flops(&preset(PresetName::Cat, &dims(PresetName::Cat))?, 4096);
    let tr = count_flops(&preset(PresetName::Transformer, &dims(PresetName::Transformer))?, 4096);
    let ratio = cat as f64 / tr as f64;
    Ok(Outcome::new(
        mismatches.is_empty() && ratio <= 0.05,
        format!(
            "{cases} exact matches expected, mismatches {:?}; cat/transformer at n=4096 d=64: {cat}/{tr} = {ratio:.5} (max 0.05)",
            mismatches
        ),
    ))
}

/// Parameter count of a fusion stack found by walking its assembled tensors.
pub fn enumerated_taff_params(dims: &TaffDims, channels: &[usize]) -> Result<usize> {
    Ok(params_numel(&taff::assemble_taff(dims, channels, 0)?))
}

pub fn parameter_accounting() -> Result<Outcome> {
    let mut r = rng(SEED);
    let mut bad = Vec::new();
    for _ in 0..50 {
        let heads = r.random_range(1..=4);
        let dims = TaffDims {
            d: heads * r.random_range(1..=6),
            heads,
            ffn_hidden: r.random_range(1..=24),
            anchors: r.random_range(1..=9),
        };
        let channels: Vec<usize> = (0..r.random_range(1..=5)).map(|_| r.random_range(1..=64)).collect();
        if taff::taff_param_count(&dims, &channels) != enumerated_taff_params(&dims, &channels)? {
            bad.push(format!("{dims:?} {channels:?}"));
        }
    }
    let s = DetectorSurrogate::fixture();
    let rep = s.overhead();
    let enumerated = enumerated_taff_params(&s.taff_dims(), &s.level_channels)?;
    Ok(Outcome::new(
        bad.is_empty() && enumerated == rep.taff_params,
        format!(
            "50 random stacks, mismatches {bad:?}; surrogate base {} params, TAFF {} params, overhead {:.2}%",
            rep.base_params, rep.taff_params, rep.overhead_percent
        ),
    ))
}

/// A random pyramid and fusion stack used by the TAFF checks.
pub fn taff_instance(seed: u64) -> Result<(FeaturePyramid, TaffDims, gformer::params::BlockParams)> {
    let mut r = rng(seed);
    let shapes = [
        LevelShape { h: 3, w: 2, c: 5 },
        LevelShape { h: 2, w: 2, c: 3 },
        LevelShape { h: 1, w: 1, c: 4 },
    ];
    let dims = TaffDims { d: 8, heads: 2, ffn_hidden: 12, anchors: 3 };
    let pyramid = FeaturePyramid::random(&shapes, dims.anchors, &mut r)?;
    let params = taff::assemble_taff(&dims, &pyramid.channels(), r.random())?.randomized(r.random(), 1.0);
    Ok((pyramid, dims, params))
}

/// Projection oracle: `out[y, x, a*d + k] = sum_c map[y, x, c] W[c, k] + B[a, k]`.
pub fn projected_levels(pyramid: &FeaturePyramid, params: &gformer::params::BlockParams, d: usize) -> Vec<Tensor> {
    let a = pyramid.anchors();
    pyramid
        .levels()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let w = params.get(&format!("proj.{i}.weight")).unwrap();
            let b = params.get(&format!("proj.{i}.bias")).unwrap();
            Tensor::from_fn(&[l.h, l.w, a * d], |flat| {
                let (cell, k) = (flat / (a * d), flat % d);
                let an = flat / d % a;
                let mut acc = 0.0;
                for c in 0..l.c {
                    acc += l.map.data()[cell * l.c + c] * w.data()[c * d + k];
                }
                acc + b.data()[an * d + k]
            })
        })
        .collect()
}

pub fn permuted(fs: &FusedSequence, perm: &[usize]) -> Result<FusedSequence> {
    Ok(FusedSequence {
        seq: fs.seq.permute_rows(perm)?,
        index: perm.iter().map(|&p| fs.index[p]).collect(),
        ..fs.clone()
    })
}

pub fn taff_properties() -> Result<Outcome> {
    let (pyramid, dims, params) = taff_instance(SEED)?;
    let gathered = taff::gather(&pyramid, &params, dims.d)?;
    let fused = taff::fuse(&gathered, &params, dims.heads)?;
    let mut r = rng(SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let perm = permutation(gathered.rows(), &mut r);
        let lhs = taff::fuse(&permuted(&gathered, &perm)?, &params, dims.heads)?.seq;
        worst = worst.max(lhs.max_abs_diff(&fused.seq.permute_rows(&perm)?));
    }
    let expected = projected_levels(&pyramid, &params, dims.d);
    let maps = taff::scatter(&gathered)?;
    let round_trip = maps == expected;
    // Scattering a shuffled, fused sequence lands every row back in its slot.
    let perm = permutation(fused.rows(), &mut r);
    let fused_round_trip = taff::scatter(&permuted(&fused, &perm)?)? == taff::scatter(&fused)?;
    Ok(Outcome::new(
        worst <= 1e-10 && round_trip && fused_round_trip,
        format!(
            "20 permutations over {} rows, max |diff| {worst:.2e} (tol 1e-10); gather->scatter exact: {round_trip}; permuted scatter exact: {fused_round_trip}",
            gathered.rows()
        ),
    ))
}

pub const OVERFIT_PRESETS: [PresetName; 4] =
    [PresetName::Transformer, PresetName::Cat, PresetName::Fnet, PresetName::MlpMixer];

pub fn overfit(name: PresetName) -> Result<Outcome> {
    let lr = default_lr(name);
    let trace = overfit_sanity(name, 500, lr, SEED)?;
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    let hit = trace.iter().position(|&l| l <= 0.1 * first);
    Ok(Outcome::new(
        last <= 0.1 * first,
        format!(
            "{name}: seed {SEED}, lr {lr}, loss {first:.4} -> {last:.6} ({:.2}% of initial), first under 10% at step {hit:?}",
            100.0 * last / first
        ),
    ))
}

pub fn dft_oracle() -> Result<Outcome> {
    let mut r = rng(SEED);
    let mut worst = 0.0f64;
    for n in 1..=8 {
        for d in 1..=8 {
            let x = uniform(&[n, d], &mut r);
            worst = worst.max(ops::dft2_real(&x)?.max_abs_diff(&naive_dft2_real(&x)));
        }
    }
    Ok(Outcome::new(worst <= 1e-8, format!("64 shapes, max |diff| {worst:.2e} (tol 1e-8)")))
}
