//! Latency microbenchmarks.
//!
//! Timing is single-threaded: one evaluation at a time on the calling
//! thread, measured with the monotonic [`Instant`] clock.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::fit_scaling;
use super::flops::{count_flops, spatial_mixer_flops};
use crate::error::{Error, Result};
use crate::gformer::{assemble, preset, Block, PresetDims, PresetName, SpatialShape};
use crate::mixers::{self, SpatialMixerKind};
use crate::params::{BlockParams, ParamVars};
use crate::tensor::{Tape, Tensor, Var};

pub const MIN_REPS: usize = 30;
pub const MIN_WARMUP: usize = 5;
pub const FLOP_CONVENTION: &str = "1 MAC = 2 FLOPs";

/// What gets timed: a whole preset block, or a token mixer on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchTarget {
    Block(PresetName),
    /// Multi-head self-attention.
    Attention,
    /// 2-D Fourier token mixing.
    FourierMix,
}

impl BenchTarget {
    pub fn name(&self) -> &'static str {
        match self {
            BenchTarget::Block(p) => p.as_str(),
            BenchTarget::Attention => "attention",
            BenchTarget::FourierMix => "fourier_mix",
        }
    }

    /// Build the workload for `n` tokens of width `d`.
    pub fn instantiate(&self, d: usize, n: usize, seed: u64) -> Result<Workload> {
        let dims = PresetDims::new(d, SpatialShape::Flat(n));
        let kind = match *self {
            BenchTarget::Block(name) => {
                let config = preset(name, &dims)?;
                let flops = count_flops(&config, n);
                let (block, params) = assemble(config, seed)?;
                return Ok(Workload { n, d, kind: WorkloadKind::Block(block), params, flops });
            }
            BenchTarget::Attention => SpatialMixerKind::MultiHeadAttention { heads: dims.heads },
            BenchTarget::FourierMix => SpatialMixerKind::FourierMix,
        };
        kind.validate(d)?;
        let params = BlockParams::init(&kind.param_specs(d, (n, 1)), seed)?;
        let flops = spatial_mixer_flops(&kind, n as u64, d as u64);
        Ok(Workload { n, d, kind: WorkloadKind::Mixer(kind), params, flops })
    }
}

impl fmt::Display for BenchTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(BenchTarget::Attention),
            "fourier_mix" => Ok(BenchTarget::FourierMix),
            _ => s.parse().map(BenchTarget::Block).map_err(|_| {
                Error::config(format!(
                    "unknown bench target `{s}`; expected a preset name, `attention` or `fourier_mix`"
                ))
            }),
        }
    }
}

enum WorkloadKind {
    Block(Block),
    Mixer(SpatialMixerKind),
}

/// A ready-to-run benchmark body.
pub struct Workload {
    n: usize,
    d: usize,
    kind: WorkloadKind,
    params: BlockParams,
    flops: u64,
}

impl Workload {
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn params(&self) -> usize {
        self.params.numel()
    }

    pub fn run(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let p = self.params.constants(&tape);
        Ok(self.run_on(&tape, &p, &tape.constant(x.clone()))?.value().clone())
    }

    fn run_on(&self, tape: &Tape, p: &ParamVars, x: &Var) -> Result<Var> {
        match &self.kind {
            WorkloadKind::Block(b) => b.forward_on(tape, p, x),
            WorkloadKind::Mixer(kind) => {
                Ok(mixers::spatial_summary(tape, kind, x, (self.n, 1), p)?.into_inner())
            }
        }
    }

    /// The seeded `n x d` input used for timing.
    pub fn input(&self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self.n as u64).rotate_left(32));
        Tensor::standard_normal(&[self.n, self.d], &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub n: usize,
    pub samples_ns: Vec<u64>,
    pub median_ns: f64,
    pub mad_ns: f64,
    pub flops: u64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub preset: String,
    pub d: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub flop_convention: String,
    pub timer_resolution_ns: u64,
    pub points: Vec<BenchPoint>,
    /// Log-log slope of median time against `n`, when there are enough points.
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per `n`; slope and R^2 repeat on every row.
    pub fn to_tsv(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let mut out = format!("# {}\npreset\tn\tmedian_ns\tmad_ns\tflops\tparams\tslope\tr2\n", self.flop_convention);
        for p in &self.points {
            out.push_str(&format!(
                "{}\t{}\t{:.1}\t{:.1}\t{}\t{}\t{}\t{}\n",
                self.preset,
                p.n,
                p.median_ns,
                p.mad_ns,
                p.flops,
                p.params,
                fmt_opt(self.slope),
                fmt_opt(self.r2)
            ));
        }
        out
    }

    /// `(n, median seconds)` pairs.
    pub fn timing_points(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.n as f64, p.median_ns * 1e-9)).collect()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Smallest nonzero step the clock reports.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Fix where large buffers come from. glibc's default mmap threshold adapts
/// to the allocation history, so whether a fresh tensor arrives as recycled
/// heap memory or as new zeroed pages would depend on `n` and on what ran
/// before. A fixed 64 KiB threshold gives every tensor of that size or more
/// fresh pages, the same treatment at every `n`. This changes a process-wide
/// allocator setting.
fn pin_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        // SAFETY: mallopt only adjusts allocator tuning parameters.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 10);
        }
    }
}

/// Time `target` at every `n` in `n_values`.
pub fn bench_latency(
    target: BenchTarget,
    d: usize,
    n_values: &[usize],
    reps: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport> {
    if reps < MIN_REPS || warmup < MIN_WARMUP {
        return Err(Error::config(format!(
            "benchmarks need reps >= {MIN_REPS} and warmup >= {MIN_WARMUP}, got {reps} and {warmup}"
        )));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::config("n values must be positive and nonempty"));
    }
    pin_allocator();
    let resolution = timer_resolution();
    let mut warnings = Vec::new();
    let mut points = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let work = target.instantiate(d, n, seed)?;
        // Inputs and parameters go on the tape once, outside the timed region.
        let tape = Tape::inference();
        let params = work.params.constants(&tape);
        let x = tape.constant(work.input(seed));
        for _ in 0..warmup {
            std::hint::black_box(work.run_on(&tape, &params, &x)?);
        }
        let mut samples_ns = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            let out = work.run_on(&tape, &params, std::hint::black_box(&x))?;
            let elapsed = start.elapsed();
            std::hint::black_box(out);
            samples_ns.push(elapsed.as_nanos() as u64);
        }
        let as_f64: Vec<f64> = samples_ns.iter().map(|&s| s as f64).collect();
        let median_ns = median(&as_f64);
        if resolution.as_nanos() as f64 * 10.0 > median_ns {
            warnings.push(format!(
                "n = {n}: timer resolution {} ns is coarse relative to the median {median_ns:.0} ns",
                resolution.as_nanos()
            ));
        }
        points.push(BenchPoint {
            n,
            mad_ns: mad(&as_f64),
            median_ns,
            samples_ns,
            flops: work.flops(),
            params: work.params(),
        });
    }
    let mut report = BenchReport {
        preset: target.name().to_string(),
        d,
        reps,
        warmup,
        seed,
        flop_convention: FLOP_CONVENTION.to_string(),
        timer_resolution_ns: resolution.as_nanos() as u64,
        points,
        slope: None,
        r2: None,
        warnings,
    };
    if let Ok(fit) = fit_scaling(&report.timing_points()) {
        report.slope = Some(fit.slope);
        report.r2 = Some(fit.r2);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]), 1.0);
    }

    #[test]
    fn target_names_round_trip() {
        for t in ["transformer", "cat", "attention", "fourier_mix", "fnet"] {
            assert_eq!(t.parse::<BenchTarget>().unwrap().name(), t);
        }
        assert!("nope".parse::<BenchTarget>().is_err());
    }

    #[test]
    fn rejects_too_few_reps() {
        assert!(matches!(bench_latency(BenchTarget::Block(PresetName::Cat), 4, &[4], 29, 5, 1), Err(Error::Config(_))));
        assert!(matches!(bench_latency(BenchTarget::Block(PresetName::Cat), 4, &[4], 30, 4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn non_timing_fields_are_deterministic() {
        let run = || bench_latency(BenchTarget::Block(PresetName::Cat), 4, &[4, 8], 30, 5, 3).unwrap();
        let (a, b) = (run(), run());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!((p.n, p.flops, p.params), (q.n, q.flops, q.params));
            assert_eq!(p.samples_ns.len(), 30);
        }
        assert!(a.slope.is_none());
        let tsv = a.to_tsv();
        assert!(tsv.lines().nth(1).unwrap().starts_with("preset\tn\tmedian_ns"));
        assert_eq!(BenchReport::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn mixer_workloads_match_closed_form() {
        for t in [BenchTarget::Attention, BenchTarget::FourierMix] {
            let w = t.instantiate(8, 16, 1).unwrap();
            let x = w.input(1);
            let (_, counted) = crate::tensor::flops::measure(|| w.run(&x).unwrap());
            assert_eq!(counted, w.flops(), "{t}");
        }
    }
}
