//! End-to-end run on a synthetic surrogate: sample, rank, tune the top 16.
//!
//! ```text
//! cargo run --release --example tune_surrogate -- [seed]
//! ```

use std::time::Instant;

use knobtune::optimizer::{tune, TuneObjective, TuneOptions};
use knobtune::paramspace::RangePolicy;
use knobtune::ranking;
use knobtune::sampling;
use knobtune::targets::surrogate::SurrogateOptions;
use knobtune::targets::{SurrogateSpec, SurrogateTarget, Target};

fn main() -> knobtune::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = SurrogateSpec::synthetic(128, 8, 2024, &SurrogateOptions::default());
    let space = spec.space(RangePolicy::Dynamic);
    let default_metric = spec.noiseless(&spec.default_config());
    let mut target = SurrogateTarget::new(spec.clone(), seed);

    let started = Instant::now();
    let records: Vec<_> = sampling::sample(&space, 300, seed)?
        .iter()
        .enumerate()
        .map(|(i, c)| target.evaluate(c, 1_000_000 + i as u64))
        .collect();
    let ranked = ranking::rank(&records, &space, ranking::DEFAULT_GRID)?;
    let top = ranked.top_k(16)?;
    let truth: Vec<&str> = spec.influential.iter().map(|&i| spec.bindings[i].name.as_str()).collect();
    let hits = top.iter().filter(|n| truth.contains(&n.as_str())).count();
    println!("ranking: {hits}/8 influential parameters in the top 16 ({:.1?})", started.elapsed());

    let started = Instant::now();
    let report = tune(
        &space,
        &TuneObjective::maximize("bandwidth"),
        &mut target,
        120,
        &top,
        seed,
        &TuneOptions {
            dynamic_bounds: std::env::var_os("STATIC").is_none(),
            ..Default::default()
        },
    )?;
    let best = report.best_metric.unwrap_or(f64::NAN);
    let truth_best = spec.noiseless(report.best_config.as_ref().expect("at least one success"));
    println!(
        "tuning: best observed {best:.1}, true {truth_best:.1}, default {default_metric:.1}, gain {:.2}x ({:.1?})",
        best / default_metric,
        started.elapsed()
    );
    println!("boundary expansions: {}", report.bounds_log.len());
    if std::env::var_os("VERBOSE").is_some() {
        for e in &report.bounds_log {
            println!("  {} {:?} -> {:?} at {}", e.parameter, e.old, e.new, e.iteration);
        }
    }
    Ok(())
}
