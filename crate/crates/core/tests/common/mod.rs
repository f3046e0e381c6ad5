//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use knobtune::paramspace::{Kind, ParameterSpace};
use knobtune::targets::SurrogateSpec;
use knobtune::{Configuration, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn acceptance_spec() -> SurrogateSpec {
    SurrogateSpec::load(fixture("acceptance-surrogate.json")).expect("acceptance surrogate fixture")
}

pub fn influential_names(spec: &SurrogateSpec) -> Vec<String> {
    spec.influential.iter().map(|&i| spec.bindings[i].name.clone()).collect()
}

pub fn space_from(doc: &Json) -> ParameterSpace {
    ParameterSpace::from_json_str(&doc.to_string()).expect("generated space is valid").0
}

/// A random space with numeric, categorical, unconfigurable and
/// module-scoped parameters plus linear constraints that the defaults
/// satisfy. Selector `backend` chooses between modules `store/a` and
/// `store/b`.
pub fn random_space_doc(seed: u64) -> Json {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut defaults: BTreeMap<String, f64> = BTreeMap::new();
    let mut reals = Vec::new();
    let mut numerics = Vec::new();

    for i in 0..rng.gen_range(2..=6) {
        let name = format!("n{i}");
        let integer = rng.gen_bool(0.5);
        let dynamic = rng.gen_bool(0.3);
        let (lo, hi, default) = if integer {
            let lo = rng.gen_range(0..50) as f64;
            let hi = lo + rng.gen_range(1..200) as f64;
            (lo, hi, rng.gen_range(lo as i64..=hi as i64) as f64)
        } else {
            let lo = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.01..10.0) };
            let hi = lo + rng.gen_range(0.1..100.0);
            (lo, hi, rng.gen_range(lo..=hi))
        };
        let default_json = if integer { json!(default as i64) } else { json!(default) };
        params.push(json!({
            "name": name,
            "kind": if integer { "integer" } else { "real" },
            "default": default_json,
            "range": [lo, hi],
            "range_policy": if dynamic { "dynamic" } else { "hard" },
        }));
        defaults.insert(name.clone(), default);
        if !integer {
            reals.push(name.clone());
        }
        numerics.push(name);
    }
    for i in 0..rng.gen_range(0..=2) {
        if rng.gen_bool(0.5) {
            params.push(json!({"name": format!("flag{i}"), "kind": "boolean", "default": rng.gen_bool(0.5)}));
        } else {
            let cats: Vec<String> = (0..rng.gen_range(2..=4)).map(|c| format!("c{c}")).collect();
            params.push(json!({"name": format!("cat{i}"), "kind": "categorical",
                               "default": cats[rng.gen_range(0..cats.len())], "categories": cats}));
        }
    }
    params.push(json!({"name": "host_id", "kind": "categorical", "default": "node1",
                       "categories": ["node1"], "configurable": false}));
    params.push(json!({"name": "debug_level", "kind": "integer", "default": 1, "range": [0, 20],
                       "configurable": false}));
    params.push(json!({"name": "backend", "kind": "categorical", "default": "a", "categories": ["a", "b"]}));
    params.push(json!({"name": "a_cache", "kind": "integer", "default": 64, "range": [1, 4096],
                       "module": "store/a"}));
    params.push(json!({"name": "b_queue", "kind": "real", "default": 0.5, "range": [0.0, 1.0],
                       "module": "store/b"}));

    let mut constraints = Vec::new();
    let mut equality = false;
    for _ in 0..rng.gen_range(0..=3) {
        let kind = rng.gen_range(0..3);
        if kind == 2 && reals.len() >= 2 && !equality {
            // one equality over two reals, through the default; a second
            // would pin both to a point
            equality = true;
            let a = &reals[0];
            let b = &reals[1];
            let (ca, cb) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let bound = ca * defaults[a] + cb * defaults[b];
            constraints.push(json!({"terms": [{"param": a, "coef": ca}, {"param": b, "coef": cb}],
                                    "relation": "=", "bound": bound}));
        } else if kind == 1 && numerics.len() >= 2 {
            let i = rng.gen_range(0..numerics.len());
            let j = (i + rng.gen_range(1..numerics.len())) % numerics.len();
            let (a, b) = (&numerics[i], &numerics[j]);
            let bound = (defaults[a] - defaults[b]).max(0.0);
            constraints.push(json!({"terms": [{"param": a, "coef": 1.0}, {"param": b, "coef": -1.0}],
                                    "relation": "<=", "bound": bound}));
        } else {
            let take = rng.gen_range(1..=numerics.len().min(3));
            let mut names = numerics.clone();
            for i in 0..take {
                let j = rng.gen_range(i..names.len());
                names.swap(i, j);
            }
            let terms: Vec<(String, f64)> =
                names[..take].iter().map(|n| (n.clone(), coef(&mut rng))).collect();
            let lhs: f64 = terms.iter().map(|(n, c)| c * defaults[n]).sum();
            let strict = rng.gen_bool(0.3);
            let bound = lhs + rng.gen_range(0.5..50.0);
            constraints.push(json!({
                "terms": terms.iter().map(|(n, c)| json!({"param": n, "coef": c})).collect::<Vec<_>>(),
                "relation": if strict { "<" } else { "<=" },
                "bound": bound,
            }));
        }
    }
    json!({
        "parameters": params,
        "selectors": [{"selector_param": "backend",
                       "activation": {"a": ["store/a"], "b": ["store/b"]}}],
        "constraints": constraints,
    })
}

/// Mostly fractional coefficients; integral ones exercise the strict
/// integer rewrite.
fn coef(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.3) {
        rng.gen_range(1..=3) as f64
    } else {
        rng.gen_range(0.5..3.0)
    }
}

pub fn random_space(seed: u64) -> ParameterSpace {
    space_from(&random_space_doc(seed))
}

/// Independent feasibility check: ranges, kinds, categories, pinned values
/// and linear constraints, written against the JSON document. Numeric values
/// are judged by value, so `Int(3)` is a valid real and `Real(3.0)` a valid
/// integer.
pub fn brute_force_feasible(doc: &Json, space: &ParameterSpace, config: &Configuration) -> bool {
    for (name, v) in &config.values {
        if let Some(pin) = space.pinned.get(name) {
            let same = match (pin.as_f64(), v.as_f64()) {
                (Some(a), Some(b)) => a == b,
                _ => pin == v,
            };
            if !same {
                return false;
            }
        } else if space.param(name).is_none() {
            return false;
        }
    }
    for p in &space.parameters {
        let Some(v) = config.get(&p.name) else { return false };
        if !p.configurable {
            if v != &p.default {
                return false;
            }
            continue;
        }
        match (p.kind, v) {
            (Kind::Integer | Kind::Real, Value::Int(_) | Value::Real(_)) => {
                let x = v.as_f64().unwrap();
                let (lo, hi) = p.range.unwrap();
                if !x.is_finite() || x < lo || x > hi || (p.kind == Kind::Integer && x.fract() != 0.0) {
                    return false;
                }
            }
            (Kind::Categorical, Value::Cat(c)) => {
                if !p.categories.contains(c) {
                    return false;
                }
            }
            _ => return false,
        }
    }
    for c in doc["constraints"].as_array().unwrap() {
        let mut lhs = 0.0;
        let mut present = true;
        for t in c["terms"].as_array().unwrap() {
            match config.get(t["param"].as_str().unwrap()).and_then(Value::as_f64) {
                Some(v) => lhs += t["coef"].as_f64().unwrap() * v,
                None => present = false,
            }
        }
        if !present {
            continue;
        }
        let bound = c["bound"].as_f64().unwrap();
        let tol = 1e-9 * bound.abs().max(1.0);
        let ok = match c["relation"].as_str().unwrap() {
            "<=" => lhs <= bound + tol,
            "<" => lhs < bound,
            "=" => (lhs - bound).abs() <= tol,
            r => panic!("unknown relation {r}"),
        };
        if !ok {
            return false;
        }
    }
    true
}

