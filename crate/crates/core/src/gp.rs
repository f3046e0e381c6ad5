//! Gaussian-process regression with a squared-exponential ARD kernel.
//!
//! Inputs live on the unit box. Input columns are grouped; each group shares
//! one length-scale, so a categorical parameter's one-hot columns can share a
//! scale while numeric parameters get their own. Hyperparameters are fit by
//! projected gradient ascent on the log marginal likelihood in log space,
//! from several starts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);
pub const SIGNAL_BOUNDS: (f64, f64) = (1e-2, 1e2);
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;
const SCREEN_ITERS: usize = 20;
const FINALISTS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    /// One per input group.
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Hyperparameters {
    pub fn isotropic(groups: usize, length_scale: f64, signal_var: f64, noise_var: f64) -> Self {
        Self {
            length_scales: vec![length_scale; groups],
            signal_var,
            noise_var,
        }
    }

    fn to_log(&self, with_noise: bool) -> Vec<f64> {
        let mut t: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        t.push(self.signal_var.ln());
        if with_noise {
            t.push(self.noise_var.ln());
        }
        t
    }

    fn from_log(theta: &[f64], groups: usize, fixed_noise: Option<f64>) -> Self {
        Self {
            length_scales: theta[..groups].iter().map(|v| v.exp()).collect(),
            signal_var: theta[groups].exp(),
            noise_var: fixed_noise.unwrap_or_else(|| theta[groups + 1].exp()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Hold the noise variance at this value instead of fitting it.
    pub fixed_noise: Option<f64>,
    /// Extra starting point tried before the random restarts.
    pub warm_start: Option<Hyperparameters>,
    /// Group index of each input column; `None` gives every column its own.
    pub groups: Option<Vec<usize>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 200,
            seed: 0,
            fixed_noise: None,
            warm_start: None,
            groups: None,
        }
    }
}

/// A fitted posterior.
#[derive(Clone, Debug)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    groups: Vec<usize>,
    n_groups: usize,
    targets: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: Hyperparameters,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

/// Squared distances per group: `dist[g][(i, j)]`.
fn group_distances(x: &DMatrix<f64>, groups: &[usize], n_groups: usize) -> Vec<DMatrix<f64>> {
    let n = x.nrows();
    let mut out = vec![DMatrix::zeros(n, n); n_groups];
    for (c, &g) in groups.iter().enumerate() {
        let col = x.column(c);
        let m = &mut out[g];
        for j in 0..n {
            for i in (j + 1)..n {
                let d = col[i] - col[j];
                m[(i, j)] += d * d;
            }
        }
    }
    for m in &mut out {
        m.fill_upper_triangle_with_lower_triangle();
    }
    out
}

fn signal_kernel(dist: &[DMatrix<f64>], hyper: &Hyperparameters) -> DMatrix<f64> {
    let n = dist.first().map_or(0, |d| d.nrows());
    let mut expo = DMatrix::<f64>::zeros(n, n);
    for (d, l) in dist.iter().zip(&hyper.length_scales) {
        let c = -0.5 / (l * l);
        for (e, v) in expo.as_mut_slice().iter_mut().zip(d.as_slice()) {
            *e += c * v;
        }
    }
    expo.map(|e| hyper.signal_var * e.exp())
}

/// Cholesky of `k_signal + (noise + jitter) I`, escalating the jitter ten-fold
/// up to 1e-2 when factorization fails.
fn factor(k_signal: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = JITTER_START;
    loop {
        let mut k = k_signal.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += noise + jitter;
        }
        if let Some(c) = k.cholesky() {
            return Ok((c, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(Error::IllConditioned { jitter });
        }
        jitter *= 10.0;
    }
}

struct Objective<'a> {
    dist: &'a [DMatrix<f64>],
    y: &'a DVector<f64>,
    n_groups: usize,
    fixed_noise: Option<f64>,
}

impl Objective<'_> {
    /// Log marginal likelihood and its gradient in log-hyperparameter space.
    fn value_and_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let hyper = Hyperparameters::from_log(theta, self.n_groups, self.fixed_noise);
        let kf = signal_kernel(self.dist, &hyper);
        let (chol, _) = factor(&kf, hyper.noise_var).ok()?;
        let alpha = chol.solve(self.y);
        let n = self.y.len() as f64;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let lml = -0.5 * self.y.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();

        // W = alpha alpha' - K^-1; dL/dtheta = 1/2 tr(W dK/dtheta)
        let mut w = chol.inverse();
        w.ger(1.0, &alpha, &alpha, -1.0);
        let wk = w.component_mul(&kf);
        let mut grad = Vec::with_capacity(theta.len());
        for (g, d) in self.dist.iter().enumerate() {
            let l2 = hyper.length_scales[g].powi(2);
            grad.push(0.5 * wk.dot(d) / l2);
        }
        grad.push(0.5 * wk.sum());
        if self.fixed_noise.is_none() {
            grad.push(0.5 * hyper.noise_var * w.trace());
        }
        lml.is_finite().then_some((lml, grad))
    }
}

fn bounds(n_groups: usize, with_noise: bool) -> Vec<(f64, f64)> {
    let mut b = vec![(LENGTH_SCALE_BOUNDS.0.ln(), LENGTH_SCALE_BOUNDS.1.ln()); n_groups];
    b.push((SIGNAL_BOUNDS.0.ln(), SIGNAL_BOUNDS.1.ln()));
    if with_noise {
        b.push((NOISE_BOUNDS.0.ln(), NOISE_BOUNDS.1.ln()));
    }
    b
}

fn project(theta: &mut [f64], bounds: &[(f64, f64)]) {
    for (t, (lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(*lo, *hi);
    }
}

/// Projected gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking.
fn ascend(obj: &Objective, mut theta: Vec<f64>, bounds: &[(f64, f64)], max_iter: usize) -> Option<(f64, Vec<f64>)> {
    project(&mut theta, bounds);
    let (mut f, mut g) = obj.value_and_grad(&theta)?;
    let mut step = 0.1 / g.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    for _ in 0..max_iter {
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
            project(&mut cand, bounds);
            let ascent: f64 = cand.iter().zip(&theta).zip(&g).map(|((c, t), gi)| (c - t) * gi).sum();
            if let Some((fc, gc)) = obj.value_and_grad(&cand) {
                if fc >= f + 1e-4 * ascent {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let improvement = fc - f;
        theta = cand;
        f = fc;
        g = gc;
        if improvement.abs() < 1e-6 * (1.0 + f.abs()) || ss.sqrt() < 1e-8 {
            break;
        }
        // ascent on a concave-looking region: s'y < 0
        step = if sy < 0.0 { (ss / -sy).min(1e3) } else { step * 2.0 };
    }
    Some((f, theta))
}

fn standardize(y: &[f64]) -> (DVector<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale)), mean, scale)
}

fn design(points: &[(Vec<f64>, f64)]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let dim = points.first().map_or(0, |p| p.0.len());
    for p in points {
        if p.0.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.0.len(),
            });
        }
    }
    let x = DMatrix::from_fn(points.len(), dim, |i, j| points[i].0[j]);
    Ok((x, points.iter().map(|p| p.1).collect()))
}

fn resolve_groups(dim: usize, groups: Option<&[usize]>) -> Result<(Vec<usize>, usize)> {
    match groups {
        None => Ok(((0..dim).collect(), dim)),
        Some(g) if g.len() == dim => Ok((g.to_vec(), g.iter().max().map_or(0, |m| m + 1))),
        Some(g) => Err(Error::DimensionMismatch {
            expected: dim,
            got: g.len(),
        }),
    }
}

/// Fits hyperparameters by maximizing the log marginal likelihood.
///
/// The first start is `warm_start` if given, else unit-ish defaults; the
/// remaining `restarts - 1` are random. Each start climbs for 20 iterations,
/// the best two continue up to `max_iter`, and the higher likelihood wins.
pub fn fit(points: &[(Vec<f64>, f64)], options: &FitOptions) -> Result<GpModel> {
    if points.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: points.len(),
        });
    }
    let (x, y_raw) = design(points)?;
    let (groups, n_groups) = resolve_groups(x.ncols(), options.groups.as_deref())?;
    let (y, _, _) = standardize(&y_raw);
    let dist = group_distances(&x, &groups, n_groups);
    let obj = Objective {
        dist: &dist,
        y: &y,
        n_groups,
        fixed_noise: options.fixed_noise,
    };
    let with_noise = options.fixed_noise.is_none();
    let bounds = bounds(n_groups, with_noise);

    // squared distances on the unit box grow with the number of groups
    let typical = (0.5 * (n_groups as f64).sqrt()).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts = Vec::new();
    starts.push(
        options
            .warm_start
            .clone()
            .filter(|h| h.length_scales.len() == n_groups)
            .unwrap_or_else(|| Hyperparameters::isotropic(n_groups, typical.exp(), 1.0, 1e-2))
            .to_log(with_noise),
    );
    for _ in 1..options.restarts.max(1) {
        let mut t: Vec<f64> = (0..n_groups).map(|_| typical + rng.gen_range(-1.5..1.5)).collect();
        t.push(rng.gen_range(0.3f64.ln()..3f64.ln()));
        if with_noise {
            t.push(rng.gen_range(1e-4f64.ln()..0.3f64.ln()));
        }
        starts.push(t);
    }

    // every start gets a short climb; only the most promising run to convergence
    let screen = if starts.len() > FINALISTS { SCREEN_ITERS.min(options.max_iter) } else { options.max_iter };
    let mut climbed: Vec<(f64, Vec<f64>)> =
        starts.into_iter().filter_map(|s| ascend(&obj, s, &bounds, screen)).collect();
    if screen < options.max_iter {
        climbed.sort_by(|a, b| b.0.total_cmp(&a.0));
        climbed.truncate(FINALISTS);
        climbed = climbed
            .into_iter()
            .map(|(f, t)| ascend(&obj, t.clone(), &bounds, options.max_iter - screen).unwrap_or((f, t)))
            .collect();
    }
    let (_, theta) = climbed
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(Error::IllConditioned { jitter: JITTER_MAX })?;
    let hyper = Hyperparameters::from_log(&theta, n_groups, options.fixed_noise);
    GpModel::with_hyperparameters(points, hyper, Some(&groups))
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `points`.
    pub fn with_hyperparameters(
        points: &[(Vec<f64>, f64)],
        hyper: Hyperparameters,
        groups: Option<&[usize]>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let (x, y_raw) = design(points)?;
        let (groups, n_groups) = resolve_groups(x.ncols(), groups)?;
        if hyper.length_scales.len() != n_groups {
            return Err(Error::DimensionMismatch {
                expected: n_groups,
                got: hyper.length_scales.len(),
            });
        }
        let (targets, y_mean, y_scale) = standardize(&y_raw);
        let dist = group_distances(&x, &groups, n_groups);
        let kf = signal_kernel(&dist, &hyper);
        let (chol, jitter) = factor(&kf, hyper.noise_var)?;
        let alpha = chol.solve(&targets);
        let n = targets.len() as f64;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let log_likelihood =
            -0.5 * targets.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        Ok(Self {
            inputs: x,
            groups,
            n_groups,
            targets,
            y_mean,
            y_scale,
            hyper,
            jitter,
            chol,
            alpha,
            log_likelihood,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_points(&self) -> usize {
        self.inputs.nrows()
    }

    /// Standardized training targets.
    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn lower_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `K + (noise + jitter) I` rebuilt from the hyperparameters.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let dist = group_distances(&self.inputs, &self.groups, self.n_groups);
        let mut k = signal_kernel(&dist, &self.hyper);
        for i in 0..k.nrows() {
            k[(i, i)] += self.hyper.noise_var + self.jitter;
        }
        k
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn unstandardize_target(&self, z: f64) -> f64 {
        z * self.y_scale + self.y_mean
    }

    fn cross_kernel(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.inputs.nrows();
        let m = xs.nrows();
        let inv_l2: Vec<f64> = self.hyper.length_scales.iter().map(|l| 0.5 / (l * l)).collect();
        DMatrix::from_fn(n, m, |i, j| {
            let mut e = 0.0;
            for (c, &g) in self.groups.iter().enumerate() {
                let d = self.inputs[(i, c)] - xs[(j, c)];
                e += d * d * inv_l2[g];
            }
            self.hyper.signal_var * (-e).exp()
        })
    }

    /// Posterior mean and latent-function variance (noise excluded) at `x`,
    /// in standardized target units.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let (m, v) = self.predict_batch(&DMatrix::from_row_slice(1, x.len(), x))?;
        Ok((m[0], v[0]))
    }

    /// [`predict`](Self::predict) for every row of `xs`.
    pub fn predict_batch(&self, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if xs.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: xs.ncols(),
            });
        }
        let ks = self.cross_kernel(xs);
        let mean = ks.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor is invertible");
        let var = DVector::from_iterator(
            xs.nrows(),
            v.column_iter()
                .map(|c| (self.hyper.signal_var - c.norm_squared()).max(0.0)),
        );
        Ok((mean, var))
    }
}

/// Log marginal likelihood and gradient at explicit hyperparameters, exposed
/// for gradient checks. The gradient is with respect to
/// `[ln l_1 .. ln l_G, ln signal_var, ln noise_var]`.
pub fn log_marginal_likelihood(
    points: &[(Vec<f64>, f64)],
    hyper: &Hyperparameters,
    groups: Option<&[usize]>,
) -> Result<(f64, Vec<f64>)> {
    let (x, y_raw) = design(points)?;
    let (groups, n_groups) = resolve_groups(x.ncols(), groups)?;
    let (y, _, _) = standardize(&y_raw);
    let dist = group_distances(&x, &groups, n_groups);
    let obj = Objective {
        dist: &dist,
        y: &y,
        n_groups,
        fixed_noise: None,
    };
    obj.value_and_grad(&hyper.to_log(true))
        .ok_or(Error::IllConditioned { jitter: JITTER_MAX })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
                let y = (3.0 * x[0]).sin() + x.iter().sum::<f64>() + 0.1 * rng.gen::<f64>();
                (x, y)
            })
            .collect()
    }

    #[test]
    fn contradictory_duplicates_need_noise() {
        let pts = vec![(vec![0.5], 0.0), (vec![0.5], 1.0)];
        let m = fit(&pts, &FitOptions::default()).unwrap();
        assert!(m.hyperparameters().noise_var > 0.1, "{:?}", m.hyperparameters());
    }

    #[test]
    fn noise_free_fit_interpolates() {
        let mut pts = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (i as f64 / 2.0, j as f64 / 2.0);
                pts.push((vec![a, b], (a - 0.3).powi(2) + (b - 0.6).powi(2)));
            }
        }
        let m = fit(
            &pts,
            &FitOptions {
                fixed_noise: Some(1e-8),
                ..Default::default()
            },
        )
        .unwrap();
        for (x, y) in &pts {
            let (mu, _) = m.predict(x).unwrap();
            assert!((m.unstandardize_target(mu) - y).abs() < 1e-4);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let pts = random_points(10, 3, seed);
            let hyper = Hyperparameters {
                length_scales: vec![0.4, 0.7, 1.3],
                signal_var: 1.2,
                noise_var: 0.05,
            };
            let (_, grad) = log_marginal_likelihood(&pts, &hyper, None).unwrap();
            let theta = hyper.to_log(true);
            let h = 1e-5;
            for k in 0..theta.len() {
                let eval = |delta: f64| {
                    let mut t = theta.clone();
                    t[k] += delta;
                    let hp = Hyperparameters::from_log(&t, 3, None);
                    log_marginal_likelihood(&pts, &hp, None).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "seed {seed} param {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn cholesky_reconstructs_kernel() {
        let pts = random_points(12, 2, 3);
        let m = fit(&pts, &FitOptions::default()).unwrap();
        let l = m.lower_factor();
        let k = m.kernel_matrix();
        let rel = (&l * l.transpose() - &k).norm() / k.norm();
        assert!(rel < 1e-8, "{rel}");
        let h = m.hyperparameters();
        assert!(h.length_scales.iter().all(|l| (1e-3..=1e3).contains(l)));
        assert!((1e-8..=1.0).contains(&h.noise_var));
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let pts = random_points(8, 2, 1);
        let hyper = Hyperparameters::isotropic(2, 0.3, 1.5, 1e-3);
        let m = GpModel::with_hyperparameters(&pts, hyper, None).unwrap();
        let (mu, var) = m.predict(&[40.0, -40.0]).unwrap();
        assert!(mu.abs() < 0.01);
        assert!((var - 1.5).abs() < 0.015);
    }

    #[test]
    fn dense_inverse_oracle_agrees() {
        let pts = vec![(vec![0.1, 0.2], 1.0), (vec![0.5, 0.9], -0.3), (vec![0.8, 0.4], 2.2)];
        let hyper = Hyperparameters {
            length_scales: vec![0.35, 0.6],
            signal_var: 1.3,
            noise_var: 0.02,
        };
        let m = GpModel::with_hyperparameters(&pts, hyper.clone(), None).unwrap();
        let k = m.kernel_matrix();
        let kinv = k.clone().try_inverse().unwrap();
        let y = m.targets().clone();
        for x in [[0.3, 0.3], [0.9, 0.1], [0.5, 0.9]] {
            let ks = DVector::from_iterator(
                3,
                pts.iter().map(|(p, _)| {
                    let e: f64 = p
                        .iter()
                        .zip(&x)
                        .zip(&hyper.length_scales)
                        .map(|((a, b), l)| (a - b).powi(2) / (l * l))
                        .sum();
                    hyper.signal_var * (-0.5 * e).exp()
                }),
            );
            let mean = ks.dot(&(&kinv * &y));
            let var = hyper.signal_var - ks.dot(&(&kinv * &ks));
            let (mu, v) = m.predict(&x).unwrap();
            assert!((mu - mean).abs() < 1e-10);
            assert!((v - var).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = fit(&random_points(5, 2, 0), &FitOptions::default()).unwrap();
        assert!(matches!(m.predict(&[0.1]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn grouped_columns_share_a_length_scale() {
        let pts = vec![
            (vec![0.2, 1.0, 0.0], 1.0),
            (vec![0.7, 0.0, 1.0], 2.0),
            (vec![0.4, 1.0, 0.0], 1.5),
        ];
        let m = fit(
            &pts,
            &FitOptions {
                groups: Some(vec![0, 1, 1]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.hyperparameters().length_scales.len(), 2);
    }
}
