//! FLOP and parameter accounting, latency benchmarks, complexity fits and
//! the overfit trainability check.

pub mod bench;
pub mod fit;
pub mod flops;
pub mod overfit;

pub use bench::{bench_latency, BenchPoint, BenchReport, BenchTarget};
pub use fit::{fit_scaling, ScalingFit};
pub use flops::{count_flops, count_params};
pub use overfit::overfit_sanity;
