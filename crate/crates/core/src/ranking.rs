//! Parameter-importance ranking along the Lasso regularization path.
//!
//! Each column is fit by cyclic coordinate descent on
//! `(1/2n) ||y - X b||^2 + lambda ||b||_1` over a geometric grid of lambdas,
//! warm-started from the previous solution. A parameter's rank is decided
//! first by the largest lambda at which any of its columns is nonzero
//! (path entry), then by its largest absolute coefficient at the smallest
//! lambda.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramspace::ParameterSpace;
use crate::preprocess::{encode, EncodedMatrix};
use crate::targets::EvaluationRecord;

pub const MIN_SAMPLES: usize = 20;
pub const DEFAULT_GRID: usize = 100;
const TOL: f64 = 1e-7;
const MAX_SWEEPS: usize = 10_000;
const GRID_RATIO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub name: String,
    pub score: f64,
    pub entry_lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub entries: Vec<RankEntry>,
    /// Descending.
    pub lambdas: Vec<f64>,
    pub n_samples: usize,
}

impl RankingResult {
    /// First `k` names in rank order.
    pub fn top_k(&self, k: usize) -> Result<Vec<String>> {
        if k == 0 || k > self.entries.len() {
            return Err(Error::InvalidInput(format!(
                "k must be in 1..={}, got {k}",
                self.entries.len()
            )));
        }
        Ok(self.entries[..k].iter().map(|e| e.name.clone()).collect())
    }

    /// `name,score` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,score\n");
        for e in &self.entries {
            s.push_str(&format!("{},{}\n", e.name, e.score));
        }
        s
    }
}

pub fn top_k(result: &RankingResult, k: usize) -> Result<Vec<String>> {
    result.top_k(k)
}

/// `max_j |x_j' y| / n`: the smallest lambda with an all-zero solution.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| c.dot(y).abs() / n)
        .fold(0.0, f64::max)
}

fn check_finite(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, column: x.ncols() });
    }
    Ok(())
}

struct Solver<'a> {
    x: &'a DMatrix<f64>,
    /// `||x_j||^2 / n`
    norms: Vec<f64>,
    n: f64,
}

impl<'a> Solver<'a> {
    fn new(x: &'a DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let norms = x.column_iter().map(|c| c.norm_squared() / n).collect();
        Self { x, norms, n }
    }

    /// One sweep over `cols`; updates `beta` and `resid` in place and returns
    /// the largest coefficient change.
    fn sweep(&self, cols: &[usize], lambda: f64, beta: &mut DVector<f64>, resid: &mut DVector<f64>) -> f64 {
        let mut max_change: f64 = 0.0;
        for &j in cols {
            let nj = self.norms[j];
            if nj == 0.0 {
                continue;
            }
            let col = self.x.column(j);
            let old = beta[j];
            let rho = col.dot(resid) / self.n + nj * old;
            let new = soft_threshold(rho, lambda) / nj;
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        max_change
    }

    /// Coordinate descent from `beta`; active-set sweeps between full sweeps.
    fn solve(&self, y: &DVector<f64>, lambda: f64, beta: &mut DVector<f64>) -> Result<()> {
        let all: Vec<usize> = (0..self.x.ncols()).collect();
        let mut resid = y - self.x * &*beta;
        let mut sweeps = 0;
        loop {
            let change = self.sweep(&all, lambda, beta, &mut resid);
            sweeps += 1;
            if change < TOL {
                return Ok(());
            }
            let active: Vec<usize> = all.iter().copied().filter(|&j| beta[j] != 0.0).collect();
            loop {
                let change = self.sweep(&active, lambda, beta, &mut resid);
                sweeps += 1;
                if change < TOL {
                    break;
                }
                if sweeps >= MAX_SWEEPS {
                    return Err(Error::NonConvergence { sweeps, change });
                }
            }
            if sweeps >= MAX_SWEEPS {
                return Err(Error::NonConvergence { sweeps, change });
            }
        }
    }
}

pub fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

/// Lasso coefficients for a raw design `x` and response `y` (no intercept;
/// both are expected to be centered).
pub fn lasso_coordinate_descent(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    check_finite(x, y)?;
    let mut beta = DVector::zeros(x.ncols());
    Solver::new(x).solve(y, lambda, &mut beta)?;
    Ok(beta)
}

/// Lasso fit on the fully standardized design of `matrix`.
pub fn lasso_fit(matrix: &EncodedMatrix, lambda: f64) -> Result<DVector<f64>> {
    lasso_coordinate_descent(&matrix.standardized(), &matrix.targets, lambda)
}

/// Geometric grid from `lambda_max` down to `lambda_max * 1e-4`.
pub fn lambda_grid(lambda_max: f64, size: usize) -> Vec<f64> {
    match size {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..size)
            .map(|i| lambda_max * GRID_RATIO.powf(i as f64 / (size - 1) as f64))
            .collect(),
    }
}

/// Coefficients along a warm-started path; one vector per lambda.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, lambdas: &[f64]) -> Result<Vec<DVector<f64>>> {
    check_finite(x, y)?;
    let solver = Solver::new(x);
    let mut beta = DVector::zeros(x.ncols());
    let mut path = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        solver.solve(y, l, &mut beta)?;
        path.push(beta.clone());
    }
    Ok(path)
}

/// Ranks the columns of a design, grouping them by `groups[j]` (the owning
/// parameter). `names` lists every parameter to report, including ones that
/// have no column.
pub fn rank_design(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    groups: &[&str],
    names: &[&str],
    grid_size: usize,
) -> Result<RankingResult> {
    let lmax = lambda_max(x, y);
    let lambdas = lambda_grid(lmax, grid_size.max(2));
    let path = if x.ncols() == 0 || lmax == 0.0 {
        vec![DVector::zeros(x.ncols()); lambdas.len()]
    } else {
        lasso_path(x, y, &lambdas)?
    };

    let mut per_param: BTreeMap<&str, (f64, f64)> = names.iter().map(|&n| (n, (0.0, 0.0))).collect();
    let last = path.last().cloned().unwrap_or_else(|| DVector::zeros(x.ncols()));
    for (j, &g) in groups.iter().enumerate() {
        let entry = lambdas
            .iter()
            .zip(&path)
            .find(|(_, b)| b[j] != 0.0)
            .map(|(&l, _)| l)
            .unwrap_or(0.0);
        let slot = per_param.entry(g).or_insert((0.0, 0.0));
        slot.0 = slot.0.max(entry);
        slot.1 = slot.1.max(last[j].abs());
    }

    let mut entries: Vec<RankEntry> = per_param
        .into_iter()
        .map(|(name, (entry_lambda, score))| RankEntry {
            name: name.to_string(),
            score,
            entry_lambda,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.entry_lambda
            .partial_cmp(&a.entry_lambda)
            .unwrap_or(Ordering::Equal)
            .then(b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal))
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(RankingResult {
        entries,
        lambdas,
        n_samples: x.nrows(),
    })
}

/// Encodes the successful records and ranks every tunable parameter.
pub fn rank(records: &[EvaluationRecord], space: &ParameterSpace, grid_size: usize) -> Result<RankingResult> {
    let n = records.iter().filter(|r| r.metric().is_some()).count();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    let matrix = encode(records, space)?;
    rank_matrix(&matrix, space, grid_size)
}

pub fn rank_matrix(matrix: &EncodedMatrix, space: &ParameterSpace, grid_size: usize) -> Result<RankingResult> {
    let x = matrix.standardized();
    let groups: Vec<&str> = matrix.columns.iter().map(|c| c.param()).collect();
    let names: Vec<&str> = space.names().collect();
    rank_design(&x, &matrix.targets, &groups, &names, grid_size)
}
