//! Runs every acceptance criterion in turn and prints one line per criterion.
//! Exits non-zero if any fails.

mod common;

use std::time::Duration;

use common::criteria::{self, timed, Outcome};

fn main() {
    let secs = Duration::from_secs;
    let mut results: Vec<(String, Outcome)> = vec![
        ("preset equivalence".into(), timed(secs(10), criteria::preset_equivalence)),
        ("gradient suite".into(), timed(secs(60), criteria::gradient_suite)),
        ("complexity slopes".into(), timed(secs(300), criteria::complexity_slopes)),
        ("flop accounting".into(), timed(Duration::MAX, criteria::flop_accounting)),
        ("parameter accounting".into(), timed(Duration::MAX, criteria::parameter_accounting)),
        ("taff properties".into(), timed(Duration::MAX, criteria::taff_properties)),
    ];
    for name in criteria::OVERFIT_PRESETS {
        results.push((format!("overfit sanity ({name})"), timed(secs(120), || criteria::overfit(name))));
    }
    results.push(("dft oracle".into(), timed(Duration::MAX, criteria::dft_oracle)));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
