//! Random configurations that satisfy every constraint of a space.
//!
//! Numeric parameters are drawn log-uniformly when their range is strictly
//! positive and uniformly otherwise; integers are rounded; categories are
//! uniform. Draws that break a linear constraint go through [`repair`] and
//! are rejected only if repair fails.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::paramspace::{
    linear_tolerance, Configuration, LinearConstraint, ParameterSpace, ParameterSpec, Relation,
    Value,
};

const REPAIR_PASSES: usize = 32;
const FALLBACK_RESAMPLES: usize = 1000;

/// Draws one value for `spec`, ignoring linear constraints.
pub fn draw_value<R: Rng + ?Sized>(spec: &ParameterSpec, rng: &mut R) -> Value {
    if !spec.is_numeric() {
        let i = rng.gen_range(0..spec.categories.len());
        return Value::Cat(spec.categories[i].clone());
    }
    let (lo, hi) = spec.range.unwrap_or((spec.low(), spec.high()));
    if hi <= lo {
        return spec.numeric_value(lo);
    }
    let raw = if spec.is_integer() {
        // widen by half a step so the end points get their full share after rounding
        let (a, b) = (lo - 0.5, hi + 0.5);
        if spec.is_log_scaled() {
            let (la, lb) = (a.max(lo * 0.5).ln(), b.ln());
            rng.gen_range(la..lb).exp()
        } else {
            rng.gen_range(a..b)
        }
    } else if spec.is_log_scaled() {
        rng.gen_range(lo.ln()..=hi.ln()).exp()
    } else {
        rng.gen_range(lo..=hi)
    };
    spec.numeric_value(raw)
}

/// Draws a configuration of all tunable parameters, ignoring linear constraints.
pub fn draw<R: Rng + ?Sized>(space: &ParameterSpace, rng: &mut R) -> Configuration {
    space
        .parameters
        .iter()
        .map(|p| (p.name.clone(), draw_value(p, rng)))
        .collect()
}

/// Returns `n` constraint-satisfying configurations, deterministic in `seed`.
pub fn sample(space: &ParameterSpace, n: usize, seed: u64) -> Result<Vec<Configuration>> {
    sample_with_limit(space, n, seed, 1000 * n)
}

pub fn sample_with_limit(
    space: &ParameterSpace,
    n: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<Vec<Configuration>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= max_attempts {
            return Err(Error::ConstraintRegionTooSmall {
                accepted: out.len(),
                attempts,
                rate: out.len() as f64 / attempts.max(1) as f64,
            });
        }
        attempts += 1;
        let cfg = draw(space, &mut rng);
        let cfg = if first_violated(space, &cfg).is_some() {
            match repair_with(&cfg, space, &mut rng, 0) {
                Ok(c) => c,
                Err(_) => continue,
            }
        } else {
            cfg
        };
        if space.check(&cfg).is_empty() {
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Moves `config` into the feasible region of the linear constraints.
///
/// Each pass rescales the terms of one violated constraint: when every term
/// has a positive coefficient and value, the values are multiplied by
/// `bound / lhs`; otherwise the excess is removed by shifting the
/// positive-coefficient terms. Results are clamped to ranges and integers
/// rounded toward feasibility. After 32 passes without success the involved
/// parameters are resampled, up to 1000 times.
pub fn repair(config: &Configuration, space: &ParameterSpace, seed: u64) -> Result<Configuration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    repair_with(config, space, &mut rng, FALLBACK_RESAMPLES)
}

pub(crate) fn repair_with<R: Rng + ?Sized>(
    config: &Configuration,
    space: &ParameterSpace,
    rng: &mut R,
    fallback_resamples: usize,
) -> Result<Configuration> {
    let mut cfg = config.clone();
    let mut involved: BTreeSet<String> = BTreeSet::new();
    if rescale_passes(&mut cfg, space, &mut involved) {
        return Ok(cfg);
    }
    for _ in 0..fallback_resamples {
        for name in &involved {
            if let Some(p) = space.param(name) {
                cfg.set(name.clone(), draw_value(p, rng));
            }
        }
        let mut more = BTreeSet::new();
        if rescale_passes(&mut cfg, space, &mut more) {
            return Ok(cfg);
        }
        involved.extend(more);
    }
    let what = first_violated(space, &cfg)
        .map(|c| c.to_string())
        .unwrap_or_default();
    Err(Error::Infeasible(format!(
        "could not satisfy `{what}` after {fallback_resamples} resamples"
    )))
}

fn rescale_passes(
    cfg: &mut Configuration,
    space: &ParameterSpace,
    involved: &mut BTreeSet<String>,
) -> bool {
    for _ in 0..REPAIR_PASSES {
        let Some(c) = first_violated(space, cfg) else {
            return true;
        };
        involved.extend(c.params().map(str::to_string));
        rescale_once(cfg, space, c);
    }
    first_violated(space, cfg).is_none()
}

fn first_violated<'a>(space: &'a ParameterSpace, cfg: &Configuration) -> Option<&'a LinearConstraint> {
    space.constraints.iter().find(|c| {
        c.evaluate(&cfg.values)
            .is_some_and(|lhs| !c.satisfied_by(lhs))
    })
}

fn rescale_once(cfg: &mut Configuration, space: &ParameterSpace, c: &LinearConstraint) {
    let Some(lhs) = c.evaluate(&cfg.values) else { return };
    let target = match c.relation {
        Relation::Lt => c.bound - 16.0 * linear_tolerance(c.bound),
        Relation::Le | Relation::Eq => c.bound,
    };
    let values: Vec<f64> = c
        .terms
        .iter()
        .map(|t| cfg.get(&t.param).and_then(Value::as_f64).unwrap_or(0.0))
        .collect();

    let all_positive = c.terms.iter().all(|t| t.coef > 0.0) && values.iter().all(|&v| v > 0.0);
    let new_values: Vec<f64> = if all_positive && target > 0.0 && lhs > 0.0 {
        let factor = target / lhs;
        values.iter().map(|v| v * factor).collect()
    } else {
        let excess = lhs - target;
        // move the positive-coefficient terms; fall back to the negative ones
        let movers: Vec<usize> = {
            let pos: Vec<usize> = (0..c.terms.len()).filter(|&i| c.terms[i].coef > 0.0).collect();
            if pos.is_empty() {
                (0..c.terms.len()).filter(|&i| c.terms[i].coef < 0.0).collect()
            } else {
                pos
            }
        };
        let share = excess / movers.len().max(1) as f64;
        let mut nv = values.clone();
        for &i in &movers {
            nv[i] -= share / c.terms[i].coef;
        }
        nv
    };

    for ((t, old), new) in c.terms.iter().zip(&values).zip(new_values) {
        let Some(p) = space.param(&t.param) else { continue };
        let (lo, hi) = p.range.unwrap_or((new, new));
        let mut v = new.clamp(lo, hi);
        let value = if p.is_integer() {
            // round in the direction of the move so the constraint is not re-broken
            v = if v < *old { v.floor() } else { v.ceil() };
            Value::Int(v.clamp(lo.ceil(), hi.floor()) as i64)
        } else {
            Value::Real(v)
        };
        cfg.set(t.param.clone(), value);
    }
}
