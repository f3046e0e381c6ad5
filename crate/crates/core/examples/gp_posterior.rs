//! Fitting a Gaussian process to noisy 1-D data and reading its posterior.
//!
//! ```text
//! cargo run --example gp_posterior
//! ```

use knobtune::gp::{self, FitOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> knobtune::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = |x: f64| (6.0 * x).sin() + 0.5 * x;
    let points: Vec<(Vec<f64>, f64)> = (0..12)
        .map(|_| {
            let x: f64 = rng.gen();
            (vec![x], f(x) + 0.05 * rng.gen_range(-1.0..1.0))
        })
        .collect();
    let model = gp::fit(&points, &FitOptions::default())?;
    let h = model.hyperparameters();
    println!(
        "length-scale {:.3}, signal var {:.3}, noise var {:.2e}, log likelihood {:.2}",
        h.length_scales[0],
        h.signal_var,
        h.noise_var,
        model.log_likelihood()
    );
    println!("{:>5} {:>8} {:>8} {:>8}", "x", "f(x)", "mean", "2 sd");
    for i in 0..=10 {
        let x = i as f64 / 10.0;
        let (m, v) = model.predict(&[x])?;
        let mean = model.unstandardize_target(m);
        let sd = v.sqrt() * (model.unstandardize_target(1.0) - model.unstandardize_target(0.0));
        println!("{x:>5.1} {:>8.3} {mean:>8.3} {:>8.3}", f(x), 2.0 * sd);
    }
    Ok(())
}
