//! Bayesian-optimization loop over a restricted parameter space.
//!
//! Each iteration proposes one configuration by maximizing Expected
//! Improvement under a GP fit to the successful evaluations so far, lets
//! dynamic ranges grow when the proposal lands near an edge, evaluates it,
//! and updates the incumbent. The first `n_init` proposals come from a
//! constrained random design.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gp::{self, FitOptions, GpModel, Hyperparameters};
use crate::paramspace::{Configuration, ParameterSpace, RangePolicy, Value};
use crate::sampling;
use crate::targets::{derive_seed, EvaluationRecord, Target};

/// Relative EI gain a refinement move must achieve to be taken.
const REFINE_MIN_GAIN: f64 = 1e-3;

/// Dynamic ranges never grow past this magnitude (2^53, the largest range
/// of exactly representable integers).
pub const MAX_EXTENT: f64 = 9_007_199_254_740_992.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneObjective {
    pub workload_id: String,
    pub metric_name: String,
    pub direction: Direction,
}

impl TuneObjective {
    pub fn maximize(metric_name: impl Into<String>) -> Self {
        Self {
            workload_id: "default".into(),
            metric_name: metric_name.into(),
            direction: Direction::Maximize,
        }
    }

    pub fn minimize(metric_name: impl Into<String>) -> Self {
        Self {
            direction: Direction::Minimize,
            ..Self::maximize(metric_name)
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuneOptions {
    /// Seed-design size; `None` means `max(10, 2k)`.
    pub n_init: Option<usize>,
    /// Exploration margin subtracted from the incumbent mean.
    pub xi: f64,
    pub candidates: usize,
    /// Percentage of candidates drawn near the incumbent instead of
    /// uniformly.
    pub local_share_pct: usize,
    /// Number of best candidates that get coordinate refinement.
    pub refine_starts: usize,
    pub gp_restarts: usize,
    /// Full multi-restart hyperparameter fit every this many model fits;
    /// fits in between take a short warm-started ascent.
    pub refit_every: usize,
    pub warm_iters: usize,
    pub dynamic_bounds: bool,
    pub max_consecutive_failures: usize,
    /// Stop after this many iterations without incumbent improvement.
    pub patience: Option<usize>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            n_init: None,
            xi: 0.01,
            candidates: 1024,
            local_share_pct: 50,
            refine_starts: 8,
            gp_restarts: 8,
            refit_every: 10,
            warm_iters: 30,
            dynamic_bounds: true,
            max_consecutive_failures: 10,
            patience: None,
        }
    }
}

impl TuneOptions {
    pub fn n_init_for(&self, k: usize) -> usize {
        self.n_init.unwrap_or_else(|| (2 * k).max(10))
    }
}

/// One growth step of a dynamic range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsEvent {
    pub parameter: String,
    pub old: (f64, f64),
    pub new: (f64, f64),
    pub iteration: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub metric: Option<f64>,
    pub best_so_far: Option<f64>,
}

/// Column layout of the GP input vector.
#[derive(Clone, Debug)]
enum Slot {
    Numeric { param: usize, col: usize },
    Categorical { param: usize, first: usize, count: usize },
}

#[derive(Clone, Debug)]
struct Encoder {
    slots: Vec<Slot>,
    groups: Vec<usize>,
}

impl Encoder {
    fn new(space: &ParameterSpace) -> Self {
        let mut slots = Vec::new();
        let mut groups = Vec::new();
        for (g, p) in space.parameters.iter().enumerate() {
            if p.is_numeric() {
                slots.push(Slot::Numeric { param: g, col: groups.len() });
                groups.push(g);
            } else {
                let count = p.categories.len();
                slots.push(Slot::Categorical { param: g, first: groups.len(), count });
                groups.extend(std::iter::repeat(g).take(count));
            }
        }
        Self { slots, groups }
    }

    fn dim(&self) -> usize {
        self.groups.len()
    }

    fn encode(&self, space: &ParameterSpace, config: &Configuration) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for slot in &self.slots {
            match *slot {
                Slot::Numeric { param, col } => {
                    let p = &space.parameters[param];
                    let v = config.get(&p.name).unwrap_or(&p.default).as_f64().unwrap_or(0.0);
                    x[col] = p.to_unit(v);
                }
                Slot::Categorical { param, first, .. } => {
                    let p = &space.parameters[param];
                    let label = config.get(&p.name).unwrap_or(&p.default).as_category().unwrap_or("");
                    let i = p.categories.iter().position(|c| c == label).unwrap_or(0);
                    x[first + i] = 1.0;
                }
            }
        }
        x
    }

    fn decode(&self, space: &ParameterSpace, x: &[f64]) -> Configuration {
        self.slots
            .iter()
            .map(|slot| match *slot {
                Slot::Numeric { param, col } => {
                    let p = &space.parameters[param];
                    (p.name.clone(), p.numeric_value(p.from_unit(x[col].clamp(0.0, 1.0))))
                }
                Slot::Categorical { param, first, count } => {
                    let p = &space.parameters[param];
                    let best = (0..count)
                        .max_by(|&a, &b| x[first + a].total_cmp(&x[first + b]).then(b.cmp(&a)))
                        .unwrap_or(0);
                    (p.name.clone(), Value::Cat(p.categories[best].clone()))
                }
            })
            .collect()
    }

    /// Rounds `x` to the nearest realizable point.
    fn snap(&self, space: &ParameterSpace, x: &[f64]) -> Vec<f64> {
        self.encode(space, &self.decode(space, x))
    }
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected Improvement for minimization below `target` (the incumbent mean
/// with the exploration margin already subtracted), given a posterior mean
/// and standard deviation.
pub fn expected_improvement(mean: f64, sd: f64, target: f64) -> f64 {
    let gain = target - mean;
    if !(sd > 0.0) {
        return gain.max(0.0);
    }
    let z = gain / sd;
    (gain * norm_cdf(z) + sd * norm_pdf(z)).max(0.0)
}

/// Mutable state of one tuning run.
#[derive(Clone, Debug)]
pub struct TuneState {
    /// Restricted space; dynamic ranges grow in place.
    pub space: ParameterSpace,
    pub history: Vec<EvaluationRecord>,
    pub best: Option<(Configuration, f64)>,
    pub bounds_log: Vec<BoundsEvent>,
    pub iteration: u64,
    pub budget: usize,
    pub rng_seed: u64,
    pub direction: Direction,
    pub options: TuneOptions,
    seed_design: Vec<Configuration>,
    encoder: Encoder,
    hyper: Option<Hyperparameters>,
    fits: usize,
    supported: bool,
}

impl TuneState {
    pub fn new(
        space: ParameterSpace,
        direction: Direction,
        budget: usize,
        seed: u64,
        options: TuneOptions,
    ) -> Result<Self> {
        if space.parameters.is_empty() {
            return Err(Error::InvalidInput("nothing to tune: the space has no parameters".into()));
        }
        let n_init = options.n_init_for(space.parameters.len()).min(budget.max(1));
        let seed_design = sampling::sample(&space, n_init, derive_seed(seed, u64::MAX))?;
        Ok(Self {
            encoder: Encoder::new(&space),
            space,
            history: Vec::new(),
            best: None,
            bounds_log: Vec::new(),
            iteration: 0,
            budget,
            rng_seed: seed,
            direction,
            options,
            seed_design,
            hyper: None,
            fits: 0,
            supported: false,
        })
    }

    pub fn n_init(&self) -> usize {
        self.seed_design.len()
    }

    /// Successful observations as GP points, oriented for minimization.
    fn observations(&self) -> Vec<(Vec<f64>, f64)> {
        let sign = match self.direction {
            Direction::Maximize => -1.0,
            Direction::Minimize => 1.0,
        };
        self.history
            .iter()
            .filter_map(|r| r.metric().map(|m| (self.encoder.encode(&self.space, &r.config), sign * m)))
            .collect()
    }

    fn fit_model(&mut self, points: &[(Vec<f64>, f64)], seed: u64) -> Result<GpModel> {
        let full = self.hyper.is_none() || self.fits % self.options.refit_every.max(1) == 0;
        let options = FitOptions {
            restarts: if full { self.options.gp_restarts } else { 1 },
            max_iter: if full { 200 } else { self.options.warm_iters },
            seed,
            fixed_noise: None,
            warm_start: self.hyper.clone(),
            groups: Some(self.encoder.groups.clone()),
        };
        let model = gp::fit(points, &options)?;
        self.fits += 1;
        self.hyper = Some(model.hyperparameters().clone());
        Ok(model)
    }

    /// Next configuration to evaluate (tunable parameters only).
    pub fn propose(&mut self) -> Configuration {
        let it = self.iteration;
        self.supported = false;
        if (it as usize) < self.seed_design.len() {
            return self.seed_design[it as usize].clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.rng_seed, it));
        let points = self.observations();
        let model = if points.len() >= 2 {
            self.fit_model(&points, rng.gen())
        } else {
            Err(Error::InsufficientSamples { needed: 2, got: points.len() })
        };
        let proposal = match model {
            Ok(model) => self.maximize_ei(&model, &points, &mut rng),
            Err(e) => {
                log::warn!("iteration {it}: model unavailable ({e}); proposing a random sample");
                None
            }
        };
        let proposal = match proposal {
            Some((cfg, supported)) => {
                self.supported = supported;
                cfg
            }
            None => self.random_valid(&mut rng),
        };
        self.dedupe(proposal, &mut rng)
    }

    /// Whether the last proposal came from the model with a posterior mean
    /// at least as good as the incumbent's, rather than from the seed
    /// design, a fallback, or uncertainty alone.
    pub fn proposal_supported(&self) -> bool {
        self.supported
    }

    fn random_valid(&self, rng: &mut ChaCha8Rng) -> Configuration {
        sampling::sample(&self.space, 1, rng.gen())
            .ok()
            .and_then(|mut v| v.pop())
            .unwrap_or_else(|| self.space.default_config())
    }

    fn maximize_ei(
        &self,
        model: &GpModel,
        points: &[(Vec<f64>, f64)],
        rng: &mut ChaCha8Rng,
    ) -> Option<(Configuration, bool)> {
        let d = self.encoder.dim();
        let train = DMatrix::from_fn(points.len(), d, |i, j| points[i].0[j]);
        let (train_mean, _) = model.predict_batch(&train).ok()?;
        let incumbent = train_mean.min() - self.options.xi;
        let score = |m: f64, v: f64| expected_improvement(m, v.sqrt(), incumbent);

        let best_idx = (0..points.len()).min_by(|&a, &b| train_mean[a].total_cmp(&train_mean[b]))?;
        let centre = &points[best_idx].0;
        let n_local = self.options.candidates * self.options.local_share_pct / 100;
        let mut cands: Vec<Vec<f64>> = (0..self.options.candidates - n_local)
            .map(|_| self.encoder.encode(&self.space, &sampling::draw(&self.space, rng)))
            .collect();
        cands.extend((0..n_local).map(|_| self.perturb(centre, rng)));
        // the best observed point also seeds a refinement
        cands.push(centre.clone());
        let xs = DMatrix::from_fn(cands.len(), d, |i, j| cands[i][j]);
        let (mean, var) = model.predict_batch(&xs).ok()?;
        let mut order: Vec<(usize, f64)> = (0..cands.len()).map(|i| (i, score(mean[i], var[i]))).collect();
        let last = cands.len() - 1;
        order[..last].sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut starts: Vec<(usize, f64)> = order[..self.options.refine_starts.min(last)].to_vec();
        starts.push(order[last]);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for (i, ei) in starts {
            let (x, ei) = self.refine(model, cands[i].clone(), ei, &score);
            if best.as_ref().map_or(true, |b| ei > b.1) {
                best = Some((x, ei));
            }
        }
        let (x, _) = best?;
        let supported = model.predict(&x).ok()?.0 <= train_mean.min();
        let cfg = self.encoder.decode(&self.space, &x);
        if self.space.check(&cfg).is_empty() {
            Some((cfg, supported))
        } else {
            sampling::repair(&cfg, &self.space, rng.gen()).ok().map(|c| (c, supported))
        }
    }

    /// A realizable point near `centre`: a few coordinates moved by
    /// Gaussian steps (sd 0.1 on the unit scale), categoricals redrawn.
    fn perturb(&self, centre: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let slots = &self.encoder.slots;
        let p = (2.0 / slots.len() as f64).min(1.0);
        let forced = rng.gen_range(0..slots.len());
        let mut x = centre.to_vec();
        for (i, slot) in slots.iter().enumerate() {
            if i != forced && !rng.gen_bool(p) {
                continue;
            }
            match *slot {
                Slot::Numeric { col, .. } => {
                    let step: f64 = rng.sample(rand_distr::StandardNormal);
                    x[col] = (x[col] + 0.1 * step).clamp(0.0, 1.0);
                }
                Slot::Categorical { first, count, .. } => {
                    x[first..first + count].fill(0.0);
                    x[first + rng.gen_range(0..count)] = 1.0;
                }
            }
        }
        self.encoder.snap(&self.space, &x)
    }

    /// Coordinate-wise hill climbing on EI with a shrinking step.
    fn refine(
        &self,
        model: &GpModel,
        mut x: Vec<f64>,
        mut ei: f64,
        score: &impl Fn(f64, f64) -> f64,
    ) -> (Vec<f64>, f64) {
        let eval = |x: &[f64]| model.predict(x).map(|(m, v)| score(m, v)).unwrap_or(0.0);
        let mut step = 0.1;
        for _ in 0..8 {
            let mut improved = false;
            for slot in &self.encoder.slots {
                let moves: Vec<Vec<f64>> = match *slot {
                    Slot::Numeric { param, col } => {
                        let p = &self.space.parameters[param];
                        [-1.0, 1.0]
                            .iter()
                            .map(|dir| {
                                let mut c = x.clone();
                                c[col] = (c[col] + dir * step).clamp(0.0, 1.0);
                                let mut c = self.encoder.snap(&self.space, &c);
                                if c == x && p.is_integer() {
                                    // too small to change an integer: move one unit instead
                                    let v = p.from_unit(x[col]).round() + dir;
                                    c[col] = p.to_unit(p.numeric_value(v).as_f64().unwrap_or(v));
                                }
                                c
                            })
                            .collect()
                    }
                    Slot::Categorical { first, count, .. } => (0..count)
                        .map(|k| {
                            let mut c = x.clone();
                            c[first..first + count].fill(0.0);
                            c[first + k] = 1.0;
                            c
                        })
                        .collect(),
                };
                for c in moves {
                    if c != x {
                        let e = eval(&c);
                        // ignore the slight variance gain on flat dimensions
                        if e > ei * (1.0 + REFINE_MIN_GAIN) {
                            x = c;
                            ei = e;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
                if step < 1e-3 {
                    break;
                }
            }
        }
        (x, ei)
    }

    /// Moves a proposal that repeats an evaluated configuration by one grid
    /// step on a random numeric parameter.
    fn dedupe(&self, mut cfg: Configuration, rng: &mut ChaCha8Rng) -> Configuration {
        let numeric: Vec<usize> = (0..self.space.parameters.len())
            .filter(|&i| self.space.parameters[i].is_numeric())
            .collect();
        for _ in 0..16 {
            let full = self.space.full_config(&cfg);
            if !self.history.iter().any(|r| r.config == full) || numeric.is_empty() {
                break;
            }
            let p = &self.space.parameters[numeric[rng.gen_range(0..numeric.len())]];
            let v = cfg.get(&p.name).and_then(Value::as_f64).unwrap_or(0.0);
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut moved = cfg.clone();
            moved.set(p.name.clone(), p.numeric_value(v + dir * p.grid_step()));
            if self.space.check(&moved).is_empty() {
                cfg = moved;
            }
        }
        cfg
    }

    /// Grows dynamic ranges whose outer 10% contains the proposal. Width
    /// doubles on that side (in log space for log-scaled parameters), limited
    /// by the parameter's natural bounds. Hard ranges never change.
    pub fn expand_bounds(&mut self, proposal: &Configuration) {
        for p in &mut self.space.parameters {
            if p.range_policy != RangePolicy::Dynamic || !p.is_numeric() {
                continue;
            }
            let (Some((lo, hi)), Some(v)) = (p.range, proposal.get(&p.name).and_then(Value::as_f64)) else {
                continue;
            };
            if hi <= lo {
                continue;
            }
            let u = p.to_unit(v);
            let log = p.is_log_scaled();
            let (mut new_lo, mut new_hi) = (lo, hi);
            if u >= 0.9 {
                new_hi = if log { hi * hi / lo } else { hi + (hi - lo) };
            }
            if u <= 0.1 {
                new_lo = if log { lo * lo / hi } else { lo - (hi - lo) };
            }
            new_lo = new_lo.max(p.natural_min()).max(-MAX_EXTENT);
            new_hi = new_hi.min(p.natural_max()).min(MAX_EXTENT);
            if p.is_integer() {
                new_lo = new_lo.ceil();
                new_hi = new_hi.floor();
            }
            new_lo = new_lo.min(lo);
            new_hi = new_hi.max(hi);
            if (new_lo, new_hi) != (lo, hi) {
                p.range = Some((new_lo, new_hi));
                self.bounds_log.push(BoundsEvent {
                    parameter: p.name.clone(),
                    old: (lo, hi),
                    new: (new_lo, new_hi),
                    iteration: self.iteration,
                });
            }
        }
    }

    /// Appends an evaluation and advances the iteration counter.
    pub fn record(&mut self, record: EvaluationRecord) {
        if let Some(m) = record.metric() {
            if self.best.as_ref().map_or(true, |(_, b)| self.direction.better(m, *b)) {
                self.best = Some((record.config.clone(), m));
            }
        }
        self.history.push(record);
        self.iteration += 1;
    }
}

/// [`TuneState::propose`] as a free function.
pub fn propose(state: &mut TuneState) -> Configuration {
    state.propose()
}

/// [`TuneState::expand_bounds`] as a free function.
pub fn expand_bounds(state: &mut TuneState, proposal: &Configuration) {
    state.expand_bounds(proposal)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    /// `"bayesian"` or `"random"`.
    pub method: String,
    pub objective: TuneObjective,
    pub seed: u64,
    pub budget: usize,
    pub tuned_parameters: Vec<String>,
    /// Full configuration: tuned values plus every pinned default.
    pub best_config: Option<Configuration>,
    pub best_metric: Option<f64>,
    pub history: Vec<EvaluationRecord>,
    pub bounds_log: Vec<BoundsEvent>,
    pub trace: Vec<TracePoint>,
    pub final_ranges: BTreeMap<String, (f64, f64)>,
}

impl TuneReport {
    /// `iteration,metric,best_so_far`; failed or not-yet-available values are empty.
    pub fn trace_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("iteration,metric,best_so_far\n");
        for t in &self.trace {
            s.push_str(&format!("{},{},{}\n", t.iteration, f(t.metric), f(t.best_so_far)));
        }
        s
    }

    pub fn bounds_csv(&self) -> String {
        let mut s = String::from("iteration,parameter,old_low,old_high,new_low,new_high\n");
        for e in &self.bounds_log {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.iteration, e.parameter, e.old.0, e.old.1, e.new.0, e.new.1
            ));
        }
        s
    }

    /// One row per evaluation: iteration, outcome, then the tuned values.
    pub fn history_csv(&self) -> String {
        let mut s = format!("iteration,metric,failure,{}\n", self.tuned_parameters.join(","));
        for (i, r) in self.history.iter().enumerate() {
            let values: Vec<String> = self
                .tuned_parameters
                .iter()
                .map(|n| r.config.get(n).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            let failure = r.failure().unwrap_or("").replace([',', '\n'], " ");
            s.push_str(&format!(
                "{i},{},{failure},{}\n",
                r.metric().map(|m| m.to_string()).unwrap_or_default(),
                values.join(",")
            ));
        }
        s
    }

    /// First 1-based evaluation count at which best-so-far reaches `level`.
    pub fn evaluations_to_reach(&self, level: f64) -> Option<usize> {
        let dir = self.objective.direction;
        self.trace
            .iter()
            .position(|t| t.best_so_far.is_some_and(|b| b == level || dir.better(b, level)))
            .map(|i| i + 1)
    }
}

struct Run<'a> {
    objective: &'a TuneObjective,
    target: &'a mut dyn Target,
    trace: Vec<TracePoint>,
    consecutive_failures: usize,
    max_failures: usize,
}

impl Run<'_> {
    fn step(&mut self, state: &mut TuneState, proposal: &Configuration) -> Result<()> {
        let full = state.space.full_config(proposal);
        let it = state.iteration;
        let mut record = self.target.evaluate(&full, it);
        record.workload_id = self.objective.workload_id.clone();
        match record.failure() {
            Some(reason) => {
                log::warn!("iteration {it}: evaluation failed: {reason}");
                self.consecutive_failures += 1;
                if self.consecutive_failures >= self.max_failures {
                    return Err(Error::TooManyFailures {
                        count: self.consecutive_failures,
                        last: reason.to_string(),
                    });
                }
            }
            None => self.consecutive_failures = 0,
        }
        let metric = record.metric();
        state.record(record);
        self.trace.push(TracePoint {
            iteration: it,
            metric,
            best_so_far: state.best.as_ref().map(|b| b.1),
        });
        Ok(())
    }

    fn report(self, state: TuneState, method: &str, tuned: Vec<String>) -> TuneReport {
        let final_ranges = state
            .space
            .parameters
            .iter()
            .filter_map(|p| p.range.map(|r| (p.name.clone(), r)))
            .collect();
        TuneReport {
            method: method.into(),
            objective: self.objective.clone(),
            seed: state.rng_seed,
            budget: state.budget,
            tuned_parameters: tuned,
            best_config: state.best.as_ref().map(|b| state.space.full_config(&b.0)),
            best_metric: state.best.as_ref().map(|b| b.1),
            history: state.history,
            bounds_log: state.bounds_log,
            trace: self.trace,
            final_ranges,
        }
    }
}

/// Tunes the parameters in `top_k_names`, holding every other parameter at
/// its default, for `budget` evaluations.
pub fn tune(
    space: &ParameterSpace,
    objective: &TuneObjective,
    target: &mut dyn Target,
    budget: usize,
    top_k_names: &[String],
    seed: u64,
    options: &TuneOptions,
) -> Result<TuneReport> {
    if top_k_names.is_empty() {
        return Err(Error::InvalidInput("no parameters selected for tuning".into()));
    }
    let restricted = space.restrict(top_k_names)?;
    let n_init = options.n_init_for(restricted.parameters.len());
    if budget < n_init {
        return Err(Error::InvalidInput(format!(
            "budget {budget} is below the {n_init} seed evaluations"
        )));
    }
    let mut state = TuneState::new(restricted, objective.direction, budget, seed, options.clone())?;
    let mut run = Run {
        objective,
        target,
        trace: Vec::with_capacity(budget),
        consecutive_failures: 0,
        max_failures: options.max_consecutive_failures,
    };
    let mut since_improvement = 0;
    while (state.iteration as usize) < budget {
        let proposal = state.propose();
        // only proposals the model expects to pay off move a boundary
        if options.dynamic_bounds && state.proposal_supported() {
            state.expand_bounds(&proposal);
        }
        let before = state.best.as_ref().map(|b| b.1);
        run.step(&mut state, &proposal)?;
        if state.best.as_ref().map(|b| b.1) != before {
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if options.patience.is_some_and(|p| since_improvement >= p && state.iteration as usize >= n_init) {
            log::info!("stopping early after {since_improvement} iterations without improvement");
            break;
        }
    }
    Ok(run.report(state, "bayesian", top_k_names.to_vec()))
}

/// Baseline with the same loop and report shape, proposing independent
/// constrained random samples.
pub fn random_search(
    space: &ParameterSpace,
    objective: &TuneObjective,
    target: &mut dyn Target,
    budget: usize,
    seed: u64,
) -> Result<TuneReport> {
    let names: Vec<String> = space.names().map(String::from).collect();
    let configs = sampling::sample(space, budget, seed)?;
    let mut state = TuneState::new(space.clone(), objective.direction, budget, seed, TuneOptions::default())?;
    let mut run = Run {
        objective,
        target,
        trace: Vec::with_capacity(budget),
        consecutive_failures: 0,
        max_failures: TuneOptions::default().max_consecutive_failures,
    };
    for cfg in &configs {
        run.step(&mut state, cfg)?;
    }
    Ok(run.report(state, "random", names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramspace::ParameterSpace;
    use crate::targets::Source;

    struct Quadratic;

    impl Target for Quadratic {
        fn evaluate(&mut self, config: &Configuration, _iteration: u64) -> EvaluationRecord {
            let x = config.get("x").and_then(Value::as_f64).unwrap();
            EvaluationRecord::new(config.clone(), "q", Ok((x - 0.3).powi(2)), 0.0, Source::Imported)
        }
    }

    fn unit_space() -> ParameterSpace {
        ParameterSpace::from_json_str(
            r#"{"parameters": [{"name": "x", "kind": "real", "default": 0.9, "range": [0, 1]}]}"#,
        )
        .unwrap()
        .0
    }

    fn dynamic_state(range: (f64, f64), policy: &str) -> TuneState {
        let text = format!(
            r#"{{"parameters": [{{"name": "v", "kind": "integer", "default": {}, "range": [{}, {}], "range_policy": "{policy}"}}]}}"#,
            ((range.0 + range.1) / 2.0).round(),
            range.0,
            range.1
        );
        let space = ParameterSpace::from_json_str(&text).unwrap().0;
        TuneState::new(space, Direction::Maximize, 20, 0, TuneOptions::default()).unwrap()
    }

    fn cfg(name: &str, v: i64) -> Configuration {
        [(name.to_string(), Value::Int(v))].into_iter().collect()
    }

    #[test]
    fn ei_vanishes_without_uncertainty_at_incumbent() {
        let incumbent = 1.3;
        assert_eq!(expected_improvement(incumbent, 0.0, incumbent - 0.01), 0.0);
        assert!(expected_improvement(0.0, 1.0, 0.0) > 0.39);
        assert!((expected_improvement(0.0, 1.0, 0.0) - norm_pdf(0.0)).abs() < 1e-12);
    }

    #[test]
    fn first_proposal_is_first_seed_sample() {
        let mut s = TuneState::new(unit_space(), Direction::Minimize, 25, 4, TuneOptions::default()).unwrap();
        let first = s.propose();
        assert_eq!(first, s.seed_design[0]);
    }

    #[test]
    fn edge_proposal_doubles_dynamic_range() {
        let mut s = dynamic_state((0.0, 100.0), "dynamic");
        s.expand_bounds(&cfg("v", 98));
        assert_eq!(s.space.parameters[0].range, Some((0.0, 200.0)));
        assert_eq!(s.bounds_log.len(), 1);
    }

    #[test]
    fn interior_proposal_leaves_range() {
        let mut s = dynamic_state((0.0, 100.0), "dynamic");
        s.expand_bounds(&cfg("v", 50));
        assert_eq!(s.space.parameters[0].range, Some((0.0, 100.0)));
        assert!(s.bounds_log.is_empty());
    }

    #[test]
    fn hard_range_never_grows() {
        let mut s = dynamic_state((30.0, 250.0), "hard");
        s.expand_bounds(&cfg("v", 249));
        assert_eq!(s.space.parameters[0].range, Some((30.0, 250.0)));
    }

    #[test]
    fn log_scaled_range_grows_geometrically() {
        let mut s = dynamic_state((10.0, 1000.0), "dynamic");
        s.expand_bounds(&cfg("v", 11));
        assert_eq!(s.space.parameters[0].range, Some((1.0, 1000.0)));
    }

    #[test]
    fn growth_stops_at_max_extent() {
        let mut s = dynamic_state((1e6, 1e12), "dynamic");
        for _ in 0..6 {
            let hi = s.space.parameters[0].high();
            s.expand_bounds(&cfg("v", hi as i64));
        }
        assert_eq!(s.space.parameters[0].high(), MAX_EXTENT);
    }

    #[test]
    fn bo_finds_quadratic_minimum() {
        let report = tune(
            &unit_space(),
            &TuneObjective::minimize("loss"),
            &mut Quadratic,
            25,
            &["x".into()],
            11,
            &TuneOptions::default(),
        )
        .unwrap();
        let x = report.best_config.unwrap().get("x").unwrap().as_f64().unwrap();
        assert!((x - 0.3).abs() <= 0.02, "x = {x}");
        let trace: Vec<f64> = report.trace.iter().filter_map(|t| t.best_so_far).collect();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn random_search_budget_one() {
        let r = random_search(&unit_space(), &TuneObjective::minimize("loss"), &mut Quadratic, 1, 3).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn budget_below_seed_design_is_rejected() {
        let err = tune(
            &unit_space(),
            &TuneObjective::minimize("loss"),
            &mut Quadratic,
            5,
            &["x".into()],
            0,
            &TuneOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("budget"));
    }

    #[test]
    fn consecutive_failures_abort() {
        struct Broken;
        impl Target for Broken {
            fn evaluate(&mut self, config: &Configuration, _: u64) -> EvaluationRecord {
                EvaluationRecord::new(config.clone(), "b", Err("apply failed".into()), 0.0, Source::Shell)
            }
        }
        let err = random_search(&unit_space(), &TuneObjective::minimize("loss"), &mut Broken, 30, 0).unwrap_err();
        assert!(matches!(err, Error::TooManyFailures { count: 10, .. }));
    }

    #[test]
    fn same_seed_same_report() {
        let run = || {
            let mut r = tune(
                &unit_space(),
                &TuneObjective::minimize("loss"),
                &mut Quadratic,
                14,
                &["x".into()],
                5,
                &TuneOptions::default(),
            )
            .unwrap();
            for h in &mut r.history {
                h.timestamp = Default::default();
            }
            r
        };
        assert_eq!(run(), run());
    }
}
