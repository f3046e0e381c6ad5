//! Synthetic storage-performance surrogate.
//!
//! Each bound parameter is mapped to a unit coordinate `u` relative to its
//! initial range (log-scaled when the binding says so). The metric is
//!
//! ```text
//! m = base * exp( sum_k [ -w_k (u_k - c_k)^2 + a_k cos(2 pi f_k (u_k - c_k) + phi_k) ]
//!               + sum_(i,j) b_ij (u_i - c_i)(u_j - c_j) ) * (1 + eps)
//! eps ~ N(0, noise_rel^2)
//! ```
//!
//! where the sums run over the influential coordinates only. The bowl gives a
//! trend that a linear model can detect, the ripple makes every influential
//! axis multi-peaked, and effects multiply around `base` so relative gains
//! are meaningful.

use std::f64::consts::PI;

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, EvaluationRecord, Source, Target};
use crate::error::{Error, Result};
use crate::paramspace::{
    Configuration, Kind, ParameterSpace, ParameterSpec, RangePolicy, Value,
};

/// Ties one surrogate dimension to a named parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimBinding {
    pub name: String,
    pub kind: Kind,
    /// Initial range; `u = 0` at `low`, `u = 1` at `high`.
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub log: bool,
    pub default: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl DimBinding {
    pub fn unit(&self, value: &Value) -> f64 {
        match value {
            Value::Cat(label) => {
                let i = self.categories.iter().position(|c| c == label).unwrap_or(0);
                if self.categories.len() > 1 {
                    i as f64 / (self.categories.len() - 1) as f64
                } else {
                    0.0
                }
            }
            v => self.unit_of(v.as_f64().expect("numeric")),
        }
    }

    fn unit_of(&self, v: f64) -> f64 {
        if self.high <= self.low {
            0.5
        } else if self.log && v > 0.0 && self.low > 0.0 {
            (v.ln() - self.low.ln()) / (self.high.ln() - self.low.ln())
        } else {
            (v - self.low) / (self.high - self.low)
        }
    }

    fn value_at(&self, u: f64) -> f64 {
        if self.log && self.low > 0.0 {
            (self.low.ln() + u * (self.high.ln() - self.low.ln())).exp()
        } else {
            self.low + u * (self.high - self.low)
        }
    }
}

/// Shape of one influential axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub center: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Component {
    pub fn effect(&self, u: f64) -> f64 {
        let d = u - self.center;
        -self.weight * d * d + self.amplitude * (2.0 * PI * self.frequency * d + self.phase).cos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    /// Positions in `influential`.
    pub a: usize,
    pub b: usize,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    pub bindings: Vec<DimBinding>,
    /// Indices into `bindings`.
    pub influential: Vec<usize>,
    /// One per influential index, same order.
    pub components: Vec<Component>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    pub base: f64,
    pub noise_rel: f64,
    pub seed: u64,
}

/// Knobs for [`SurrogateSpec::synthetic`] and [`SurrogateSpec::for_space`].
#[derive(Clone, Debug)]
pub struct SurrogateOptions {
    pub noise_rel: f64,
    pub base: f64,
    /// Target ratio between the noiseless optimum and the default's metric
    /// (over the initial ranges).
    pub default_gap: f64,
    /// Put every influential optimum beyond the initial upper bound.
    pub optimum_outside: bool,
    pub interactions: usize,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            noise_rel: 0.025,
            base: 1000.0,
            default_gap: 3.0,
            optimum_outside: false,
            interactions: 2,
        }
    }
}

/// Counts strict local maxima of `f` on a grid over `[lo, hi]`.
pub fn count_local_maxima(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> usize {
    let ys: Vec<f64> = (0..points)
        .map(|i| f(lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .collect();
    ys.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
}

impl SurrogateSpec {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SurrogateSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dims(&self) -> usize {
        self.bindings.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let d = self.bindings.len();
        let mut seen = std::collections::BTreeSet::new();
        for &i in &self.influential {
            if i >= d {
                errs.push(format!("influential index {i} out of range 0..{d}"));
            }
            if !seen.insert(i) {
                errs.push(format!("influential index {i} repeated"));
            }
        }
        if self.components.len() != self.influential.len() {
            errs.push("one component per influential index is required".into());
        }
        for it in &self.interactions {
            if it.a >= self.influential.len() || it.b >= self.influential.len() || it.a == it.b {
                errs.push(format!("interaction ({}, {}) is invalid", it.a, it.b));
            }
        }
        if !(self.noise_rel >= 0.0) {
            errs.push("noise_rel must be non-negative".into());
        }
        if !(self.base > 0.0) {
            errs.push("base must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// A surrogate over `dims` generated parameters `x000, x001, ...`
    /// (alternating reals on `[0, 1]` and integers on `[0, 100]`), `k` of
    /// which are influential.
    pub fn synthetic(dims: usize, k: usize, seed: u64, options: &SurrogateOptions) -> Self {
        let bindings = (0..dims)
            .map(|i| {
                let (kind, high) = if i % 2 == 0 { (Kind::Real, 1.0) } else { (Kind::Integer, 100.0) };
                DimBinding {
                    name: format!("x{i:03}"),
                    kind,
                    low: 0.0,
                    high,
                    log: false,
                    default: 0.5 * high,
                    categories: Vec::new(),
                }
            })
            .collect();
        Self::generate(bindings, k, seed, options, false)
    }

    /// A surrogate over the numeric and categorical parameters of `space`,
    /// keeping their declared defaults.
    pub fn for_space(space: &ParameterSpace, k: usize, seed: u64, options: &SurrogateOptions) -> Self {
        let bindings = space
            .parameters
            .iter()
            .map(|p| DimBinding {
                name: p.name.clone(),
                kind: p.kind,
                low: p.low(),
                high: p.high(),
                log: p.is_log_scaled(),
                default: p.default.as_f64().unwrap_or_else(|| {
                    p.categories
                        .iter()
                        .position(|c| Some(c.as_str()) == p.default.as_category())
                        .unwrap_or(0) as f64
                }),
                categories: p.categories.clone(),
            })
            .collect();
        Self::generate(bindings, k, seed, options, true)
    }

    fn generate(
        mut bindings: Vec<DimBinding>,
        k: usize,
        seed: u64,
        options: &SurrogateOptions,
        keep_defaults: bool,
    ) -> Self {
        let d = bindings.len();
        let k = k.min(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut influential: Vec<usize> = index::sample(&mut rng, d, k).into_vec();
        influential.sort_unstable();

        let mut components: Vec<Component> = (0..k)
            .map(|rank| {
                let weight = 0.8f64.powi(rank as i32);
                let b = &bindings[influential[rank]];
                let high_side = if keep_defaults && b.categories.is_empty() {
                    b.unit_of(b.default) < 0.5
                } else {
                    rng.gen_bool(0.5)
                };
                let center = if options.optimum_outside {
                    rng.gen_range(1.3..1.6)
                } else if high_side {
                    rng.gen_range(0.72..0.9)
                } else {
                    rng.gen_range(0.1..0.28)
                };
                Component {
                    weight,
                    center,
                    amplitude: 0.04 * weight,
                    frequency: rng.gen_range(2.5..4.0),
                    phase: rng.gen_range(0.0..2.0 * PI),
                }
            })
            .collect();
        // shuffle weight ranks across the chosen dimensions
        for i in (1..k).rev() {
            let j = rng.gen_range(0..=i);
            let (wi, wj) = (components[i].weight, components[j].weight);
            components[i].weight = wj;
            components[j].weight = wi;
            components[i].amplitude = 0.04 * wj;
            components[j].amplitude = 0.04 * wi;
        }
        let span = if options.optimum_outside { (0.0, 2.0) } else { (0.0, 1.0) };
        for c in &mut components {
            while count_local_maxima(|u| c.effect(u), span.0, span.1, 2001) < 2 {
                c.amplitude *= 1.25;
            }
        }

        let mut interactions = Vec::new();
        if k >= 2 {
            for _ in 0..options.interactions {
                let a = rng.gen_range(0..k);
                let mut b = rng.gen_range(0..k - 1);
                if b >= a {
                    b += 1;
                }
                let scale = (components[a].weight * components[b].weight).sqrt();
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                interactions.push(Interaction {
                    a: a.min(b),
                    b: a.max(b),
                    coef: sign * rng.gen_range(0.05..0.15) * scale,
                });
            }
        }

        // defaults of influential numeric axes sit on the far side of the bowl
        for (&i, c) in influential.iter().zip(&components) {
            let b = &mut bindings[i];
            if b.categories.is_empty() && !keep_defaults {
                let u = if options.optimum_outside {
                    0.35
                } else if c.center > 0.5 {
                    0.1
                } else {
                    0.9
                };
                let v = b.value_at(u);
                b.default = if b.kind == Kind::Integer { v.round() } else { v };
            }
        }

        let mut spec = SurrogateSpec {
            bindings,
            influential,
            components,
            interactions,
            base: options.base,
            noise_rel: options.noise_rel,
            seed,
        };
        spec.calibrate_gap(options.default_gap, span);
        spec
    }

    /// Rescales effect strengths so that optimum / default ~= `gap`.
    fn calibrate_gap(&mut self, gap: f64, span: (f64, f64)) {
        if self.components.is_empty() || gap <= 1.0 {
            return;
        }
        for _ in 0..8 {
            let best = self.separable_log_optimum(span);
            let at_default = self.log_effect(&self.default_units());
            let current = best - at_default;
            if current <= 0.0 {
                return;
            }
            let factor = gap.ln() / current;
            if (factor - 1.0).abs() < 1e-3 {
                return;
            }
            for c in &mut self.components {
                c.weight *= factor;
                c.amplitude *= factor;
            }
            for it in &mut self.interactions {
                it.coef *= factor;
            }
        }
    }

    /// Upper estimate of the log optimum: per-axis maxima plus the best
    /// interaction values at those points. Only used for calibration.
    fn separable_log_optimum(&self, span: (f64, f64)) -> f64 {
        let mut units = vec![0.0; self.influential.len()];
        for (k, c) in self.components.iter().enumerate() {
            let (mut best_u, mut best) = (span.0, f64::NEG_INFINITY);
            for i in 0..=2000 {
                let u = span.0 + (span.1 - span.0) * i as f64 / 2000.0;
                let v = c.effect(u);
                if v > best {
                    best = v;
                    best_u = u;
                }
            }
            units[k] = best_u;
        }
        self.log_effect_influential(&units)
    }

    fn default_units(&self) -> Vec<f64> {
        self.bindings.iter().map(|b| b.unit_of(b.default)).collect()
    }

    pub fn default_config(&self) -> Configuration {
        self.bindings
            .iter()
            .map(|b| {
                let v = if !b.categories.is_empty() {
                    Value::Cat(b.categories[b.default as usize].clone())
                } else if b.kind == Kind::Integer {
                    Value::Int(b.default as i64)
                } else {
                    Value::Real(b.default)
                };
                (b.name.clone(), v)
            })
            .collect()
    }

    /// Parameter space matching the bindings, with the given range policy on
    /// every numeric parameter.
    pub fn space(&self, policy: RangePolicy) -> ParameterSpace {
        let parameters = self
            .bindings
            .iter()
            .map(|b| {
                let categorical = !b.categories.is_empty();
                ParameterSpec {
                    name: b.name.clone(),
                    kind: if categorical { Kind::Categorical } else { b.kind },
                    default: match (categorical, b.kind) {
                        (true, _) => Value::Cat(b.categories[b.default as usize].clone()),
                        (false, Kind::Integer) => Value::Int(b.default as i64),
                        _ => Value::Real(b.default),
                    },
                    range: (!categorical).then_some((b.low, b.high)),
                    range_policy: policy,
                    categories: b.categories.clone(),
                    configurable: true,
                    module: None,
                    description: String::new(),
                    min: (!categorical && b.low >= 0.0).then_some(0.0),
                    max: None,
                }
            })
            .collect();
        ParameterSpace {
            parameters,
            ..Default::default()
        }
    }

    /// Log of the noiseless multiplier over a full vector of unit coordinates.
    pub fn log_effect(&self, units: &[f64]) -> f64 {
        let infl: Vec<f64> = self.influential.iter().map(|&i| units[i]).collect();
        self.log_effect_influential(&infl)
    }

    /// Same as [`log_effect`](Self::log_effect), given only the influential coordinates.
    pub fn log_effect_influential(&self, infl: &[f64]) -> f64 {
        let mut total: f64 = self
            .components
            .iter()
            .zip(infl)
            .map(|(c, &u)| c.effect(u))
            .sum();
        for it in &self.interactions {
            let da = infl[it.a] - self.components[it.a].center;
            let db = infl[it.b] - self.components[it.b].center;
            total += it.coef * da * db;
        }
        total
    }

    /// Unit coordinates of the influential axes in `config`; unbound or
    /// missing parameters sit at their defaults.
    pub fn influential_units(&self, config: &Configuration) -> Vec<f64> {
        self.influential
            .iter()
            .map(|&i| {
                let b = &self.bindings[i];
                match config.get(&b.name) {
                    Some(v) => b.unit(v),
                    None => b.unit_of(b.default),
                }
            })
            .collect()
    }

    pub fn noiseless(&self, config: &Configuration) -> f64 {
        self.base * self.log_effect_influential(&self.influential_units(config)).exp()
    }
}

/// Noisy surrogate metric, deterministic in `(spec, config, draw_seed)`.
pub fn surrogate_eval(spec: &SurrogateSpec, config: &Configuration, draw_seed: u64) -> f64 {
    let clean = spec.noiseless(config);
    if spec.noise_rel == 0.0 {
        return clean;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
    let eps = Normal::new(0.0, spec.noise_rel).expect("valid sigma").sample(&mut rng);
    clean * (1.0 + eps)
}

/// Noiseless optimum over the unit box `[lo, hi]^k` of the influential axes:
/// dense grid (201 points per axis) followed by coordinate-wise golden-section
/// polish. Returns the optimum metric and the influential unit coordinates.
pub fn surrogate_truth(spec: &SurrogateSpec) -> Result<(f64, Vec<f64>)> {
    surrogate_truth_in(spec, 0.0, 1.0)
}

pub fn surrogate_truth_in(spec: &SurrogateSpec, lo: f64, hi: f64) -> Result<(f64, Vec<f64>)> {
    let k = spec.influential.len();
    if k > 4 {
        return Err(Error::OracleInfeasible(format!(
            "dense grid needs at most 4 influential dimensions, spec has {k}"
        )));
    }
    if k == 0 {
        return Ok((spec.base, Vec::new()));
    }
    const POINTS: usize = 201;
    let grid: Vec<f64> = (0..POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (POINTS - 1) as f64)
        .collect();
    // separable parts tabulated once per axis
    let tables: Vec<Vec<f64>> = spec
        .components
        .iter()
        .map(|c| grid.iter().map(|&u| c.effect(u)).collect())
        .collect();
    let deltas: Vec<Vec<f64>> = spec
        .components
        .iter()
        .map(|c| grid.iter().map(|&u| u - c.center).collect())
        .collect();
    let mut idx = vec![0usize; 4];
    let mut best = (f64::NEG_INFINITY, vec![0usize; k]);
    let n = |axis: usize| if axis < k { POINTS } else { 1 };
    for i0 in 0..n(0) {
        idx[0] = i0;
        for i1 in 0..n(1) {
            idx[1] = i1;
            for i2 in 0..n(2) {
                idx[2] = i2;
                for i3 in 0..n(3) {
                    idx[3] = i3;
                    let mut v = 0.0;
                    for a in 0..k {
                        v += tables[a][idx[a]];
                    }
                    for it in &spec.interactions {
                        v += it.coef * deltas[it.a][idx[it.a]] * deltas[it.b][idx[it.b]];
                    }
                    if v > best.0 {
                        best = (v, idx[..k].to_vec());
                    }
                }
            }
        }
    }
    let mut units: Vec<f64> = best.1.iter().map(|&i| grid[i]).collect();
    let step = (hi - lo) / (POINTS - 1) as f64;
    for _ in 0..4 {
        for a in 0..k {
            let (l, r) = ((units[a] - step).max(lo), (units[a] + step).min(hi));
            units[a] = golden_max(
                |u| {
                    let mut x = units.clone();
                    x[a] = u;
                    spec.log_effect_influential(&x)
                },
                l,
                r,
            );
        }
    }
    let value = spec.log_effect_influential(&units).max(best.0);
    Ok((spec.base * value.exp(), units))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..60 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// [`Target`] over a [`SurrogateSpec`]; noise for call `i` is seeded by
/// `derive_seed(run_seed, i)`.
#[derive(Clone, Debug)]
pub struct SurrogateTarget {
    pub spec: SurrogateSpec,
    pub run_seed: u64,
    pub workload_id: String,
}

impl SurrogateTarget {
    pub fn new(spec: SurrogateSpec, run_seed: u64) -> Self {
        Self {
            spec,
            run_seed,
            workload_id: "surrogate".into(),
        }
    }
}

impl Target for SurrogateTarget {
    fn evaluate(&mut self, config: &Configuration, iteration: u64) -> EvaluationRecord {
        let m = surrogate_eval(&self.spec, config, derive_seed(self.run_seed, iteration));
        EvaluationRecord::new(config.clone(), self.workload_id.clone(), Ok(m), 0.0, Source::Surrogate)
    }

    fn true_metric(&self, config: &Configuration) -> Option<f64> {
        Some(self.spec.noiseless(config))
    }
}
