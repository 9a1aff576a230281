//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::analysis::{self, bench::BenchReport, BenchTarget};
use crate::error::Result;
use crate::gformer::{assemble, preset, Block, GFormerConfig, PresetDims, PresetName, SpatialShape};
use crate::params::BlockParams;
use crate::taff::{self, FeaturePyramid, TaffDims};
use crate::tensor::Tensor;
use crate::{equivalence, gradcheck};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "gformer", version, about = "Generalized transformer blocks: assembly, checks and benchmarks")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "GFORMER_SEED", default_value_t = 42)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Dims {
    /// Number of tokens (a flat sequence).
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Channel width.
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn: Option<usize>,
}

impl Dims {
    fn preset_dims(&self) -> PresetDims {
        let mut dims = PresetDims::new(self.d, SpatialShape::Flat(self.n));
        if let Some(h) = self.heads {
            dims = dims.with_heads(h);
        }
        if let Some(f) = self.ffn {
            dims = dims.with_ffn_hidden(f);
        }
        dims
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print every preset configuration as JSON.
    Presets {
        #[command(flatten)]
        dims: Dims,
    },
    /// Run a block on a tensor file and print the output tensor.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Parameter file; drawn from --seed when absent.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Compare a preset with its standalone reference block.
    Equiv {
        #[arg(long)]
        preset: PresetName,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Finite-difference gradient check of a preset.
    Gradcheck {
        #[arg(long)]
        preset: PresetName,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tol: f64,
    },
    /// Closed-form FLOPs of one forward pass.
    Flops {
        #[arg(long)]
        preset: PresetName,
        #[command(flatten)]
        dims: Dims,
    },
    /// Parameter count.
    Params {
        #[arg(long)]
        preset: PresetName,
        #[command(flatten)]
        dims: Dims,
    },
    /// Latency benchmark over several sequence lengths.
    Bench {
        /// A preset name, `attention` or `fourier_mix`.
        #[arg(long)]
        preset: BenchTarget,
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = analysis::bench::MIN_REPS)]
        reps: usize,
        #[arg(long, default_value_t = analysis::bench::MIN_WARMUP)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the log-log slope of a saved benchmark report.
    Scaling {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        min_slope: Option<f64>,
        #[arg(long)]
        max_slope: Option<f64>,
        #[arg(long)]
        min_r2: Option<f64>,
    },
    /// Gather, fuse and scatter a synthetic feature pyramid.
    TaffDemo {
        /// Comma separated `HxWxC` levels, e.g. `4x4x8,2x2x16`.
        #[arg(long)]
        levels: String,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        heads: usize,
        /// Encoder FFN width; defaults to 2d.
        #[arg(long)]
        ffn: Option<usize>,
        #[arg(long, default_value_t = 1)]
        anchors: usize,
        /// Random row permutations for the equivariance check.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Memorise a fixed synthetic batch with SGD and print the loss trace.
    Overfit {
        #[arg(long)]
        preset: PresetName,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Defaults to the documented per-preset rate.
        #[arg(long)]
        lr: Option<f64>,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Tsv,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, S, W>(argv: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(out, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(passed) => {
            if passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn read(path: &PathBuf) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// `Ok(false)` means a check ran and failed.
fn dispatch<W: Write>(cli: Cli, out: &mut W) -> Result<bool> {
    let seed = cli.seed;
    match cli.command {
        Command::Presets { dims } => {
            let pd = dims.preset_dims();
            let mut all = IndexMap::new();
            for name in PresetName::ALL {
                all.insert(name.as_str(), preset(name, &pd)?);
            }
            writeln!(out, "{}", serde_json::to_string_pretty(&all)?)?;
            Ok(true)
        }
        Command::Forward { config, input, params } => {
            let cfg = GFormerConfig::from_json(&read(&config)?)?;
            let x: Tensor = serde_json::from_str(&read(&input)?)?;
            let (block, params) = match params {
                Some(path) => (Block::new(cfg)?, serde_json::from_str::<BlockParams>(&read(&path)?)?),
                None => assemble(cfg, seed)?,
            };
            let y = block.forward(&params, &x)?;
            writeln!(out, "{}", serde_json::to_string(&y)?)?;
            Ok(true)
        }
        Command::Equiv { preset: name, trials, tol } => {
            let results = equivalence::run_trials(name, trials, seed)?;
            let worst = results.iter().map(|t| t.max_abs_diff).fold(0.0, f64::max);
            let ok = worst <= tol;
            writeln!(out, "preset {name}: {trials} trials, max deviation {worst:.3e} (tol {tol:.1e}) {}", verdict(ok))?;
            Ok(ok)
        }
        Command::Gradcheck { preset: name, n, d, tol } => {
            let cfg = preset(name, &PresetDims::new(d, SpatialShape::Flat(n)))?;
            let (block, init) = assemble(cfg, seed)?;
            let params = init.randomized(seed.wrapping_add(1), 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
            let x = Tensor::standard_normal(&[n, d], &mut rng);
            let report = gradcheck::check_block(&block, &params, &x, seed)?;
            for c in &report.inputs {
                writeln!(
                    out,
                    "{:<14} numel {:>4}  max rel {:.3e}  max abs {:.3e}  {}",
                    c.name,
                    c.numel,
                    c.max_rel_error,
                    c.max_abs_error,
                    verdict(c.max_rel_error <= tol)
                )?;
            }
            let ok = report.passed(tol);
            writeln!(out, "max relative error {:.3e} (tol {tol:.1e}) {}", report.max_rel_error(), verdict(ok))?;
            Ok(ok)
        }
        Command::Flops { preset: name, dims } => {
            let cfg = preset(name, &dims.preset_dims())?;
            writeln!(out, "{}", analysis::count_flops(&cfg, dims.n))?;
            Ok(true)
        }
        Command::Params { preset: name, dims } => {
            let (_, params) = assemble(preset(name, &dims.preset_dims())?, seed)?;
            writeln!(out, "{}", analysis::count_params(&params))?;
            Ok(true)
        }
        Command::Bench { preset: target, n_list, d, reps, warmup, format, out: path } => {
            let report = analysis::bench_latency(target, d, &n_list, reps, warmup, seed)?;
            if let Some(path) = path {
                std::fs::write(path, report.to_json())?;
            }
            match format {
                Format::Json => writeln!(out, "{}", report.to_json())?,
                Format::Tsv => write!(out, "{}", report.to_tsv())?,
            }
            Ok(true)
        }
        Command::Scaling { report, min_slope, max_slope, min_r2 } => {
            let report = BenchReport::from_json(&read(&report)?)?;
            let fit = analysis::fit_scaling(&report.timing_points())?;
            let ok = min_slope.is_none_or(|m| fit.slope >= m)
                && max_slope.is_none_or(|m| fit.slope <= m)
                && min_r2.is_none_or(|m| fit.r2 >= m);
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&json!({
                    "preset": report.preset,
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "r2": fit.r2,
                    "within_bounds": ok,
                }))?
            )?;
            Ok(ok)
        }
        Command::TaffDemo { levels, d, heads, ffn, anchors, trials, tol } => {
            taff_demo(out, &levels, TaffDims { d, heads, ffn_hidden: ffn.unwrap_or(2 * d), anchors }, trials, tol, seed)
        }
        Command::Overfit { preset: name, steps, lr } => {
            let lr = lr.unwrap_or_else(|| analysis::overfit::default_lr(name));
            let trace = analysis::overfit_sanity(name, steps, lr, seed)?;
            let ratio = trace.last().copied().unwrap_or(f64::NAN) / trace[0];
            writeln!(
                out,
                "{}",
                serde_json::to_string(&json!({
                    "preset": name.as_str(),
                    "steps": steps,
                    "lr": lr,
                    "seed": seed,
                    "final_over_initial": ratio,
                    "trace": trace,
                }))?
            )?;
            Ok(true)
        }
    }
}

fn taff_demo<W: Write>(out: &mut W, levels: &str, dims: TaffDims, trials: usize, tol: f64, seed: u64) -> Result<bool> {
    dims.validate()?;
    let shapes = taff::parse_levels(levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pyramid = FeaturePyramid::random(&shapes, dims.anchors, &mut rng)?;
    let channels = pyramid.channels();
    let params = taff::assemble_taff(&dims, &channels, seed)?;
    let gathered = taff::gather(&pyramid, &params, dims.d)?;
    let fused = taff::fuse(&gathered, &params, dims.heads)?;
    let maps = taff::scatter(&fused)?;

    let unfused = taff::scatter(&gathered)?;
    let mut round_trip = true;
    for (row, slot) in gathered.index.iter().enumerate() {
        let d = dims.d;
        let start = slot.anchor * d;
        let map = &unfused[slot.level];
        let (w, c) = (map.shape()[1], map.shape()[2]);
        let at = (slot.y * w + slot.x) * c + start;
        round_trip &= map.data()[at..at + d] == gathered.seq.data()[row * d..(row + 1) * d];
    }

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let perm = random_permutation(gathered.rows(), &mut rng);
        let permuted = taff::FusedSequence {
            seq: gathered.seq.permute_rows(&perm)?,
            ..gathered.clone()
        };
        let a = taff::fuse(&permuted, &params, dims.heads)?.seq;
        let b = fused.seq.permute_rows(&perm)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    let equivariant = worst <= tol;
    let count = taff::taff_param_count(&dims, &channels);
    let counted_matches = count == params.numel();
    writeln!(out, "levels {levels}, anchors {}, sequence {} x {}", dims.anchors, fused.rows(), dims.d)?;
    for (i, m) in maps.iter().enumerate() {
        writeln!(out, "level {i}: scattered {:?}", m.shape())?;
    }
    writeln!(out, "gather -> scatter round trip: {}", verdict(round_trip))?;
    writeln!(out, "permutation equivariance over {trials} permutations: max deviation {worst:.3e} {}", verdict(equivariant))?;
    writeln!(out, "taff_param_count {count}, enumerated {} {}", params.numel(), verdict(counted_matches))?;
    Ok(round_trip && equivariant && counted_matches)
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
