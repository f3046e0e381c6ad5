//! Dynamic versus static ranges on a surrogate whose optimum lies beyond
//! the initial ranges.
//!
//! ```text
//! cargo run --release --example dynamic_bounds
//! ```

use knobtune::optimizer::{tune, TuneObjective, TuneOptions};
use knobtune::paramspace::RangePolicy;
use knobtune::targets::surrogate::SurrogateOptions;
use knobtune::targets::{SurrogateSpec, SurrogateTarget};

fn main() -> knobtune::Result<()> {
    let options = SurrogateOptions {
        optimum_outside: true,
        ..Default::default()
    };
    for seed in 0..5 {
        let spec = SurrogateSpec::synthetic(8, 4, 100 + seed, &options);
        let names: Vec<String> = spec.bindings.iter().map(|b| b.name.clone()).collect();
        let mut finals = Vec::new();
        for dynamic in [true, false] {
            let policy = if dynamic { RangePolicy::Dynamic } else { RangePolicy::Hard };
            let report = tune(
                &spec.space(policy),
                &TuneObjective::maximize("bandwidth"),
                &mut SurrogateTarget::new(spec.clone(), seed),
                60,
                &names,
                seed,
                &TuneOptions {
                    dynamic_bounds: dynamic,
                    ..Default::default()
                },
            )?;
            let best = report.best_config.as_ref().map_or(f64::NAN, |c| spec.noiseless(c));
            finals.push((best, report.bounds_log.len()));
        }
        println!(
            "seed {seed}: dynamic {:.1} ({} expansions), static {:.1}",
            finals[0].0, finals[0].1, finals[1].0
        );
    }
    Ok(())
}
