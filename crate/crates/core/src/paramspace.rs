//! Declarative parameter spaces and the constraint machinery around them.
//!
//! A [`ParameterSpace`] is loaded from a JSON document with three top-level
//! keys (`parameters`, `selectors`, `constraints`). It carries four classes
//! of constraint:
//!
//! 1. unconfigurable parameters, removed by [`ParameterSpace::wash`];
//! 2. value boundaries, either `hard` or `dynamic` (growable while tuning);
//! 3. module selectors, whose chosen category deactivates whole modules,
//!    resolved by [`ParameterSpace::prune`];
//! 4. linear interdependence constraints such as `a + b <= 1`.
//!
//! Violations are reported as data by [`ParameterSpace::check`] so that the
//! sampler and the optimizer can repair rather than abort.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for equality and `<=` comparisons on linear expressions.
pub(crate) fn linear_tolerance(bound: f64) -> f64 {
    1e-9 * bound.abs().max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Integer,
    Real,
    Boolean,
    Categorical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePolicy {
    #[default]
    Hard,
    Dynamic,
}

/// A single parameter value.
///
/// Booleans are carried as the categories `"false"` / `"true"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterSpec {
    pub name: String,
    /// Never `Boolean` after loading; booleans become two-label categoricals.
    pub kind: Kind,
    pub default: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
    pub range_policy: RangePolicy,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    pub configurable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub module: Option<String>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Natural lower limit (e.g. 1 for thread counts). Dynamic expansion never crosses it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    /// Natural upper limit. Dynamic expansion never crosses it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl ParameterSpec {
    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, Kind::Integer | Kind::Real)
    }

    pub fn is_integer(&self) -> bool {
        self.kind == Kind::Integer
    }

    /// Numeric ranges that are strictly positive are handled on a log scale
    /// (log-uniform sampling, log normalization, geometric expansion).
    pub fn is_log_scaled(&self) -> bool {
        matches!(self.range, Some((lo, _)) if lo > 0.0 && self.is_numeric())
    }

    pub fn low(&self) -> f64 {
        self.range.map(|r| r.0).unwrap_or(0.0)
    }

    pub fn high(&self) -> f64 {
        self.range.map(|r| r.1).unwrap_or(0.0)
    }

    /// Lowest value dynamic expansion may reach.
    pub fn natural_min(&self) -> f64 {
        match self.min {
            Some(m) => m,
            None => match self.default.as_f64() {
                Some(d) if d >= 0.0 => 0.0,
                _ => f64::NEG_INFINITY,
            },
        }
    }

    pub fn natural_max(&self) -> f64 {
        self.max.unwrap_or(f64::INFINITY)
    }

    /// Maps a numeric value to its position in the current range; 0 and 1 are
    /// the range ends. Values outside the range map outside `[0, 1]`.
    pub fn to_unit(&self, value: f64) -> f64 {
        let (lo, hi) = match self.range {
            Some(r) => r,
            None => return 0.5,
        };
        if hi <= lo {
            return 0.5;
        }
        if self.is_log_scaled() && value > 0.0 {
            (value.ln() - lo.ln()) / (hi.ln() - lo.ln())
        } else {
            (value - lo) / (hi - lo)
        }
    }

    /// Inverse of [`to_unit`](Self::to_unit), without rounding or clamping.
    pub fn from_unit(&self, unit: f64) -> f64 {
        let (lo, hi) = match self.range {
            Some(r) => r,
            None => return self.default.as_f64().unwrap_or(0.0),
        };
        if self.is_log_scaled() {
            (lo.ln() + unit * (hi.ln() - lo.ln())).exp()
        } else {
            lo + unit * (hi - lo)
        }
    }

    /// Clamps to the current range and rounds integers, producing a legal value.
    pub fn numeric_value(&self, raw: f64) -> Value {
        let (lo, hi) = self.range.unwrap_or((raw, raw));
        let v = raw.clamp(lo, hi);
        if self.is_integer() {
            Value::Int((v.round() as i64).clamp(lo.ceil() as i64, hi.floor() as i64))
        } else {
            Value::Real(v)
        }
    }

    /// Smallest meaningful move: 1 for integers, 1% of the range for reals.
    pub fn grid_step(&self) -> f64 {
        if self.is_integer() {
            1.0
        } else {
            ((self.high() - self.low()) / 100.0).max(f64::EPSILON)
        }
    }

    fn check_value(&self, value: &Value, out: &mut Vec<Violation>) {
        match (self.kind, value) {
            (Kind::Categorical | Kind::Boolean, Value::Cat(label)) => {
                if !self.categories.iter().any(|c| c == label) {
                    out.push(Violation {
                        kind: ViolationKind::Category,
                        subject: self.name.clone(),
                        observed: label.clone(),
                        allowed: format!("{{{}}}", self.categories.join(", ")),
                        slack: None,
                    });
                }
            }
            (Kind::Integer | Kind::Real, Value::Int(_) | Value::Real(_)) => {
                let v = value.as_f64().expect("numeric");
                if !v.is_finite() || (self.is_integer() && v.fract() != 0.0) {
                    out.push(Violation {
                        kind: ViolationKind::Kind,
                        subject: self.name.clone(),
                        observed: value.to_string(),
                        allowed: format!("{:?}", self.kind).to_lowercase(),
                        slack: None,
                    });
                    return;
                }
                if let Some((lo, hi)) = self.range {
                    if v < lo || v > hi {
                        let slack = if v < lo { v - lo } else { hi - v };
                        out.push(Violation {
                            kind: ViolationKind::Range,
                            subject: self.name.clone(),
                            observed: value.to_string(),
                            allowed: format!("[{lo}, {hi}]"),
                            slack: Some(slack),
                        });
                    }
                }
            }
            _ => out.push(Violation {
                kind: ViolationKind::Kind,
                subject: self.name.clone(),
                observed: value.to_string(),
                allowed: format!("{:?}", self.kind).to_lowercase(),
                slack: None,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSelector {
    pub selector_param: String,
    /// Category label -> module paths that label activates.
    pub activation: BTreeMap<String, Vec<String>>,
}

impl ModuleSelector {
    fn controlled(&self) -> BTreeSet<&str> {
        self.activation
            .values()
            .flatten()
            .map(String::as_str)
            .collect()
    }
}

/// True when `path` equals `prefix` or lies below it (`prefix/...`).
pub fn module_under(path: &str, prefix: &str) -> bool {
    path == prefix
        || (path.len() > prefix.len()
            && path.starts_with(prefix)
            && path.as_bytes()[prefix.len()] == b'/')
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "=")]
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Eq => "=",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub param: String,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConstraint {
    pub terms: Vec<Term>,
    pub relation: Relation,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn params(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.param.as_str())
    }

    /// Left-hand side, or `None` when a term's parameter is absent or non-numeric.
    pub fn evaluate(&self, values: &BTreeMap<String, Value>) -> Option<f64> {
        self.terms.iter().try_fold(0.0, |acc, t| {
            values
                .get(&t.param)
                .and_then(Value::as_f64)
                .map(|v| acc + t.coef * v)
        })
    }

    pub fn satisfied_by(&self, lhs: f64) -> bool {
        let tol = linear_tolerance(self.bound);
        match self.relation {
            Relation::Le => lhs <= self.bound + tol,
            Relation::Lt => lhs < self.bound,
            Relation::Eq => (lhs - self.bound).abs() <= tol,
        }
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            let (sign, c) = if t.coef < 0.0 { ("-", -t.coef) } else { ("+", t.coef) };
            match (i, sign) {
                (0, "-") => write!(f, "-")?,
                (0, _) => {}
                _ => write!(f, " {sign} ")?,
            }
            if c != 1.0 {
                write!(f, "{c}*")?;
            }
            write!(f, "{}", t.param)?;
        }
        write!(f, " {} {}", self.relation, self.bound)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Range,
    Category,
    Kind,
    Linear,
    Pinned,
    UnknownParameter,
}

/// One breached constraint: what was breached, what was seen, what is allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Parameter name, or the rendered linear constraint.
    pub subject: String,
    pub observed: String,
    pub allowed: String,
    /// Signed distance to feasibility where it is numeric (negative = violated).
    pub slack: Option<f64>,
}

/// One full assignment of values to parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    pub values: BTreeMap<String, Value>,
}

impl Configuration {
    pub fn new(values: BTreeMap<String, Value>) -> Self {
        Self { values }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.values.insert(name.into(), value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Renders flat `key = value` lines.
    pub fn render_ini(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

impl FromIterator<(String, Value)> for Configuration {
    fn from_iter<I: IntoIterator<Item = (String, Value)>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ParameterSpace {
    pub parameters: Vec<ParameterSpec>,
    pub selectors: Vec<ModuleSelector>,
    pub constraints: Vec<LinearConstraint>,
    /// Values fixed by pruning or top-K restriction; not tunable.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub pinned: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    parameters: Vec<RawSpec>,
    #[serde(default)]
    selectors: Vec<ModuleSelector>,
    #[serde(default)]
    constraints: Vec<LinearConstraint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    kind: Kind,
    default: serde_json::Value,
    #[serde(default)]
    range: Option<(f64, f64)>,
    #[serde(default)]
    range_policy: Option<RangePolicy>,
    #[serde(default)]
    categories: Vec<String>,
    #[serde(default = "default_true")]
    configurable: bool,
    #[serde(default)]
    module: Option<String>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    min: Option<f64>,
    #[serde(default)]
    max: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl RawSpec {
    fn normalize(self, breaches: &mut Vec<String>) -> ParameterSpec {
        let name = self.name;
        let mut kind = self.kind;
        let mut categories = self.categories;
        let default = match kind {
            Kind::Integer => match self.default.as_f64() {
                Some(v) if v.fract() == 0.0 && v.is_finite() => Value::Int(v as i64),
                _ => {
                    breaches.push(format!("{name}: default {} is not an integer", self.default));
                    Value::Int(0)
                }
            },
            Kind::Real => match self.default.as_f64() {
                Some(v) if v.is_finite() => Value::Real(v),
                _ => {
                    breaches.push(format!("{name}: default {} is not a real number", self.default));
                    Value::Real(0.0)
                }
            },
            Kind::Boolean => {
                if !categories.is_empty() && categories != ["false", "true"] {
                    breaches.push(format!("{name}: boolean parameters take no categories"));
                }
                categories = vec!["false".into(), "true".into()];
                kind = Kind::Categorical;
                match &self.default {
                    serde_json::Value::Bool(b) => Value::Cat(b.to_string()),
                    serde_json::Value::String(s) if s == "true" || s == "false" => {
                        Value::Cat(s.clone())
                    }
                    other => {
                        breaches.push(format!("{name}: default {other} is not a boolean"));
                        Value::Cat("false".into())
                    }
                }
            }
            Kind::Categorical => match &self.default {
                serde_json::Value::String(s) => Value::Cat(s.clone()),
                other => {
                    breaches.push(format!("{name}: default {other} is not a category label"));
                    Value::Cat(String::new())
                }
            },
        };

        let range_policy = self.range_policy.unwrap_or(if self.range.is_some() {
            RangePolicy::Hard
        } else {
            RangePolicy::Dynamic
        });

        let mut spec = ParameterSpec {
            name,
            kind,
            default,
            range: self.range,
            range_policy,
            categories,
            configurable: self.configurable,
            module: self.module,
            description: self.description,
            min: self.min,
            max: self.max,
        };
        if spec.is_numeric() && spec.range.is_none() && range_policy == RangePolicy::Dynamic {
            spec.range = Some(seed_dynamic_range(&spec));
        }
        spec
    }
}

/// Initial extent for a dynamic parameter declared without a range:
/// `[default / 4, default * 4]`, clamped to the natural limits.
fn seed_dynamic_range(spec: &ParameterSpec) -> (f64, f64) {
    let d = spec.default.as_f64().unwrap_or(0.0);
    let (mut lo, mut hi) = if d >= 0.0 { (d / 4.0, d * 4.0) } else { (d * 4.0, d / 4.0) };
    lo = lo.max(spec.natural_min());
    hi = hi.min(spec.natural_max());
    if hi <= lo {
        // default of zero (or pinned against a limit): open a unit window
        hi = (lo + 1.0).min(spec.natural_max()).max(lo);
    }
    if spec.is_integer() {
        lo = lo.floor();
        hi = hi.ceil();
        lo = lo.max(spec.natural_min().ceil());
    }
    (lo.min(d), hi.max(d))
}

impl ParameterSpace {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Parses and validates a parameter-space document. Returns the space and
    /// non-fatal warnings.
    pub fn from_json_str(text: &str) -> Result<(Self, Vec<String>)> {
        let raw: RawSpace = serde_json::from_str(text).map_err(|e| Error::Parse {
            field: parse_error_field(&e),
            message: e.to_string(),
        })?;
        let mut breaches = Vec::new();
        let parameters: Vec<ParameterSpec> = raw
            .parameters
            .into_iter()
            .map(|p| p.normalize(&mut breaches))
            .collect();
        let space = ParameterSpace {
            parameters,
            selectors: raw.selectors,
            constraints: raw.constraints,
            pinned: BTreeMap::new(),
        };
        let (space, warnings) = space.validated(breaches)?;
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok((space, warnings))
    }

    /// Checks every invariant, rewrites strict integer constraints, and
    /// returns all breaches at once.
    pub fn validate(self) -> Result<(Self, Vec<String>)> {
        self.validated(Vec::new())
    }

    fn validated(mut self, mut breaches: Vec<String>) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        if self.parameters.is_empty() {
            return Err(Error::Validation(vec!["space has no parameters".into()]));
        }
        let mut seen = BTreeSet::new();
        for p in &self.parameters {
            if !seen.insert(p.name.as_str()) {
                breaches.push(format!("duplicate parameter name `{}`", p.name));
            }
            validate_spec(p, &mut breaches);
        }

        for sel in &self.selectors {
            match self.param(&sel.selector_param) {
                None => breaches.push(format!(
                    "selector `{}` does not name a parameter",
                    sel.selector_param
                )),
                Some(p) if p.kind != Kind::Categorical => breaches.push(format!(
                    "selector `{}` is not categorical",
                    sel.selector_param
                )),
                Some(p) => {
                    for label in sel.activation.keys() {
                        if !p.categories.contains(label) {
                            breaches.push(format!(
                                "selector `{}` activates unknown category `{label}`",
                                sel.selector_param
                            ));
                        }
                    }
                }
            }
            for path in sel.controlled() {
                let used = self
                    .parameters
                    .iter()
                    .filter_map(|p| p.module.as_deref())
                    .any(|m| module_under(m, path));
                if !used {
                    warnings.push(format!(
                        "selector `{}`: module `{path}` matches no parameter",
                        sel.selector_param
                    ));
                }
            }
        }

        let index: BTreeMap<&str, &ParameterSpec> =
            self.parameters.iter().map(|p| (p.name.as_str(), p)).collect();
        for c in &mut self.constraints {
            if c.terms.is_empty() {
                breaches.push("linear constraint with no terms".into());
                continue;
            }
            let mut all_integer = true;
            for t in &c.terms {
                match index.get(t.param.as_str()) {
                    None if self.pinned.contains_key(&t.param) => {}
                    None => breaches.push(format!(
                        "constraint `{c}` references unknown parameter `{}`",
                        t.param
                    )),
                    Some(p) if !p.is_numeric() => breaches.push(format!(
                        "constraint `{c}` references non-numeric parameter `{}`",
                        t.param
                    )),
                    Some(p) => all_integer &= p.is_integer() && t.coef.fract() == 0.0,
                }
                if !t.coef.is_finite() {
                    breaches.push(format!("constraint `{c}` has a non-finite coefficient"));
                }
            }
            if c.relation == Relation::Lt && all_integer {
                c.relation = Relation::Le;
                c.bound = c.bound.ceil() - 1.0;
            }
        }

        if breaches.is_empty() {
            let defaults = self.default_values_with_pinned();
            for c in &self.constraints {
                if let Some(lhs) = c.evaluate(&defaults) {
                    if !c.satisfied_by(lhs) {
                        breaches.push(format!(
                            "default configuration violates constraint `{c}` (lhs = {lhs})"
                        ));
                    }
                }
            }
        }

        if breaches.is_empty() {
            Ok((self, warnings))
        } else {
            Err(Error::Validation(breaches))
        }
    }

    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParameterSpec> {
        self.parameters.iter_mut().find(|p| p.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.parameters.iter().map(|p| p.name.as_str())
    }

    /// All tunable parameters at their defaults (pinned values excluded).
    pub fn default_config(&self) -> Configuration {
        self.parameters
            .iter()
            .map(|p| (p.name.clone(), p.default.clone()))
            .collect()
    }

    /// Adds pinned values to a configuration of the tunable parameters.
    pub fn full_config(&self, tunable: &Configuration) -> Configuration {
        let mut full = tunable.clone();
        for (k, v) in &self.pinned {
            full.values.entry(k.clone()).or_insert_with(|| v.clone());
        }
        full
    }

    fn default_values_with_pinned(&self) -> BTreeMap<String, Value> {
        self.full_config(&self.default_config()).values
    }

    /// Removes unconfigurable parameters, and any selector or constraint that
    /// references one.
    pub fn wash(&self) -> (Self, Vec<String>) {
        let removed: BTreeSet<&str> = self
            .parameters
            .iter()
            .filter(|p| !p.configurable)
            .map(|p| p.name.as_str())
            .collect();
        let (space, warnings) = self.without(&removed, "washed");
        (space, warnings)
    }

    fn without(&self, removed: &BTreeSet<&str>, verb: &str) -> (Self, Vec<String>) {
        let mut warnings = Vec::new();
        let parameters = self
            .parameters
            .iter()
            .filter(|p| !removed.contains(p.name.as_str()))
            .cloned()
            .collect();
        let selectors = self
            .selectors
            .iter()
            .filter(|s| {
                let keep = !removed.contains(s.selector_param.as_str());
                if !keep {
                    warnings.push(format!(
                        "dropped selector `{}`: parameter {verb}",
                        s.selector_param
                    ));
                }
                keep
            })
            .cloned()
            .collect();
        let constraints = self
            .constraints
            .iter()
            .filter(|c| {
                let hit = c.params().find(|n| removed.contains(n));
                if let Some(name) = hit {
                    warnings.push(format!("dropped constraint `{c}`: `{name}` {verb}"));
                }
                hit.is_none()
            })
            .cloned()
            .collect();
        for w in &warnings {
            log::warn!("{w}");
        }
        (
            ParameterSpace {
                parameters,
                selectors,
                constraints,
                pinned: self.pinned.clone(),
            },
            warnings,
        )
    }

    /// Fixes every selector to its chosen category and removes parameters of
    /// the modules that choice deactivates.
    ///
    /// A module is subject to a selector when it lies under any path that
    /// selector can activate; modules no selector mentions are kept.
    pub fn prune(&self, selections: &BTreeMap<String, String>) -> Result<(Self, Vec<String>)> {
        let missing: Vec<&str> = self
            .selectors
            .iter()
            .map(|s| s.selector_param.as_str())
            .filter(|s| !selections.contains_key(*s))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Selection(format!(
                "missing selection for selector(s): {} (pass --select name=value)",
                missing.join(", ")
            )));
        }
        for (key, label) in selections {
            if self.selectors.iter().any(|s| &s.selector_param == key) {
                let p = self.param(key).expect("validated selector");
                if !p.categories.contains(label) {
                    return Err(Error::Selection(format!(
                        "unknown category `{label}` for `{key}`; expected one of {{{}}}",
                        p.categories.join(", ")
                    )));
                }
            } else if self.pinned.get(key).and_then(Value::as_category) == Some(label.as_str()) {
                // already resolved by an earlier prune
            } else {
                return Err(Error::Selection(format!("`{key}` is not a declared selector")));
            }
        }

        let mut removed: BTreeSet<&str> = BTreeSet::new();
        let mut pinned = self.pinned.clone();
        let mut warnings = Vec::new();
        for sel in &self.selectors {
            let label = &selections[&sel.selector_param];
            pinned.insert(sel.selector_param.clone(), Value::Cat(label.clone()));
            removed.insert(sel.selector_param.as_str());
            let controlled = sel.controlled();
            let active: Vec<&str> = sel
                .activation
                .get(label)
                .map(|v| v.iter().map(String::as_str).collect())
                .unwrap_or_default();
            for path in &active {
                let used = self
                    .parameters
                    .iter()
                    .filter_map(|p| p.module.as_deref())
                    .any(|m| module_under(m, path));
                if !used {
                    warnings.push(format!(
                        "`{} = {label}` activates module `{path}`, which has no parameters",
                        sel.selector_param
                    ));
                }
            }
            for p in &self.parameters {
                let Some(m) = p.module.as_deref() else { continue };
                let is_controlled = controlled.iter().any(|c| module_under(m, c));
                let is_active = active.iter().any(|a| module_under(m, a));
                if is_controlled && !is_active {
                    removed.insert(p.name.as_str());
                }
            }
        }
        let mut resolved = self.clone();
        resolved.selectors.retain(|s| !selections.contains_key(&s.selector_param));
        let (mut space, more) = resolved.without(&removed, "pruned");
        space.pinned = pinned;
        for w in &warnings {
            log::warn!("{w}");
        }
        warnings.extend(more);
        Ok((space, warnings))
    }

    /// Restricts tuning to `names`; every other parameter is pinned to its
    /// default and folded into the linear constraints.
    pub fn restrict(&self, names: &[String]) -> Result<Self> {
        let keep: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        for n in &keep {
            if self.param(n).is_none() {
                return Err(Error::InvalidInput(format!(
                    "`{n}` is not a tunable parameter of the space"
                )));
            }
        }
        let mut pinned = self.pinned.clone();
        for p in &self.parameters {
            if !keep.contains(p.name.as_str()) {
                pinned.insert(p.name.clone(), p.default.clone());
            }
        }
        let constraints = self
            .constraints
            .iter()
            .filter_map(|c| {
                let mut bound = c.bound;
                let mut terms = Vec::new();
                for t in &c.terms {
                    if keep.contains(t.param.as_str()) {
                        terms.push(t.clone());
                    } else {
                        let v = pinned.get(&t.param).and_then(Value::as_f64).unwrap_or(0.0);
                        bound -= t.coef * v;
                    }
                }
                (!terms.is_empty()).then_some(LinearConstraint {
                    terms,
                    relation: c.relation,
                    bound,
                })
            })
            .collect();
        Ok(ParameterSpace {
            parameters: self
                .parameters
                .iter()
                .filter(|p| keep.contains(p.name.as_str()))
                .cloned()
                .collect(),
            selectors: self
                .selectors
                .iter()
                .filter(|s| keep.contains(s.selector_param.as_str()))
                .cloned()
                .collect(),
            constraints,
            pinned,
        })
    }

    /// Lists every breach of `config` against this space. Parameters absent
    /// from `config` are not reported; constraints over them are skipped.
    pub fn check(&self, config: &Configuration) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, value) in &config.values {
            if let Some(p) = self.param(name) {
                p.check_value(value, &mut out);
            } else if let Some(pin) = self.pinned.get(name) {
                if pin.as_f64().zip(value.as_f64()).map_or(pin != value, |(a, b)| a != b) {
                    out.push(Violation {
                        kind: ViolationKind::Pinned,
                        subject: name.clone(),
                        observed: value.to_string(),
                        allowed: pin.to_string(),
                        slack: None,
                    });
                }
            } else {
                out.push(Violation {
                    kind: ViolationKind::UnknownParameter,
                    subject: name.clone(),
                    observed: value.to_string(),
                    allowed: "declared parameter".into(),
                    slack: None,
                });
            }
        }
        for c in &self.constraints {
            if let Some(lhs) = c.evaluate(&config.values) {
                if !c.satisfied_by(lhs) {
                    let slack = match c.relation {
                        Relation::Eq => -(lhs - c.bound).abs(),
                        _ => c.bound - lhs,
                    };
                    out.push(Violation {
                        kind: ViolationKind::Linear,
                        subject: c.to_string(),
                        observed: format!("{lhs}"),
                        allowed: format!("{} {}", c.relation, c.bound),
                        slack: Some(slack),
                    });
                }
            }
        }
        out
    }
}

fn validate_spec(p: &ParameterSpec, breaches: &mut Vec<String>) {
    let name = &p.name;
    if name.is_empty() {
        breaches.push("parameter with empty name".into());
    }
    match p.kind {
        Kind::Categorical | Kind::Boolean => {
            if p.range.is_some() {
                breaches.push(format!("{name}: categorical parameters take no range"));
            }
            if p.categories.is_empty() {
                breaches.push(format!("{name}: categorical parameter has no categories"));
            }
            let unique: BTreeSet<&String> = p.categories.iter().collect();
            if unique.len() != p.categories.len() {
                breaches.push(format!("{name}: duplicate category labels"));
            }
            if let Value::Cat(d) = &p.default {
                if !p.categories.contains(d) && !p.categories.is_empty() {
                    breaches.push(format!("{name}: default `{d}` is not among the categories"));
                }
            }
        }
        Kind::Integer | Kind::Real => {
            if !p.categories.is_empty() {
                breaches.push(format!("{name}: numeric parameters take no categories"));
            }
            match p.range {
                None => breaches.push(format!(
                    "{name}: numeric parameter needs a range or `range_policy: dynamic`"
                )),
                Some((lo, hi)) => {
                    if !(lo.is_finite() && hi.is_finite()) {
                        breaches.push(format!("{name}: range bounds must be finite"));
                    } else if lo > hi {
                        breaches.push(format!("{name}: range low {lo} exceeds high {hi}"));
                    } else if let Some(d) = p.default.as_f64() {
                        if d < lo || d > hi {
                            breaches.push(format!(
                                "{name}: default {} outside range [{lo}, {hi}]",
                                p.default
                            ));
                        }
                    }
                }
            }
        }
    }
}

fn parse_error_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports unknown/missing fields as "... field `name` ..."
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| format!("line {}, column {}", e.line(), e.column()))
}
