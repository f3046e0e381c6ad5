//! Ranking parameter importance with the Lasso path on surrogate samples
//! over the ceph-like space.
//!
//! ```text
//! cargo run --release --example lasso_ranking
//! ```

use knobtune::cli::prepare_space;
use knobtune::targets::{SurrogateSpec, SurrogateTarget, Target};
use knobtune::{ranking, sampling};

fn main() -> knobtune::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let space = prepare_space(format!("{dir}/ceph-like.json").as_ref(), &["osd_objectstore=bluestore".into()])?;
    let spec = SurrogateSpec::load(format!("{dir}/s1.json"))?;
    let truth: Vec<&str> = spec.influential.iter().map(|&i| spec.bindings[i].name.as_str()).collect();

    let mut target = SurrogateTarget::new(spec.clone(), 7);
    let records: Vec<_> = sampling::sample(&space, 300, 7)?
        .iter()
        .enumerate()
        .map(|(i, c)| target.evaluate(&space.full_config(c), i as u64))
        .collect();
    let result = ranking::rank(&records, &space, ranking::DEFAULT_GRID)?;

    let total: f64 = result.entries.iter().map(|e| e.score).sum();
    println!("{:>4}  {:<36} {:>8} {:>12}", "rank", "parameter", "score", "entry λ");
    for (i, e) in result.entries.iter().take(16).enumerate() {
        let mark = if truth.contains(&e.name.as_str()) { "*" } else { "" };
        println!("{:>4}  {:<36} {:>8.4} {:>12.3e} {mark}", i + 1, e.name, e.score, e.entry_lambda);
    }
    let top: f64 = result.entries.iter().take(16).map(|e| e.score).sum();
    println!("top-16 share of score mass: {:.1}% (* = truly influential)", 100.0 * top / total);
    Ok(())
}
