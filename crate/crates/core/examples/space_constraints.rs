//! Loading a parameter space, washing and pruning it, checking and repairing
//! configurations, and drawing constrained samples.
//!
//! ```text
//! cargo run --example space_constraints
//! ```

use std::collections::BTreeMap;

use knobtune::paramspace::ParameterSpace;
use knobtune::{sampling, Value};

fn main() -> knobtune::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/ceph-like.json");
    let (space, _) = ParameterSpace::load(path)?;
    println!("declared: {} parameters, {} constraints", space.parameters.len(), space.constraints.len());

    let (washed, warnings) = space.wash();
    for w in &warnings {
        println!("wash: {w}");
    }
    let selections = BTreeMap::from([("osd_objectstore".to_string(), "bluestore".to_string())]);
    let (tunable, warnings) = washed.prune(&selections)?;
    for w in &warnings {
        println!("prune: {w}");
    }
    println!("tunable after wash + prune: {}", tunable.parameters.len());
    for c in &tunable.constraints {
        println!("  constraint: {c}");
    }

    let mut cfg = tunable.default_config();
    cfg.set("bluestore_cache_kv_ratio", Value::Real(0.7));
    cfg.set("bluestore_cache_meta_ratio", Value::Real(0.5));
    for v in tunable.check(&cfg) {
        println!("violation: {:?} {} observed {} allowed {} slack {:?}", v.kind, v.subject, v.observed, v.allowed, v.slack);
    }
    let repaired = sampling::repair(&cfg, &tunable, 0)?;
    println!(
        "repaired: kv {} meta {}",
        repaired.get("bluestore_cache_kv_ratio").unwrap(),
        repaired.get("bluestore_cache_meta_ratio").unwrap()
    );

    for (i, s) in sampling::sample(&tunable, 3, 7)?.iter().enumerate() {
        assert!(tunable.check(&tunable.full_config(s)).is_empty());
        let shown: Vec<String> = s.values.iter().take(4).map(|(k, v)| format!("{k}={v}")).collect();
        println!("sample {i}: {} ...", shown.join(" "));
    }
    Ok(())
}
