mod common;

use std::path::Path;

use knobtune::cli::prepare_space;
use knobtune::paramspace::RangePolicy;
use knobtune::ranking::{self, lasso_coordinate_descent, rank_design};
use knobtune::sampling;
use knobtune::targets::surrogate::SurrogateOptions;
use knobtune::targets::{EvaluationRecord, Source, SurrogateSpec, SurrogateTarget, Target};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use common::{fixture, influential_names};

fn bluestore_space() -> knobtune::ParameterSpace {
    prepare_space(&fixture("ceph-like.json"), &["osd_objectstore=bluestore".to_string()]).unwrap()
}

#[test]
fn surrogate_influential_parameters_rank_in_top_16() {
    let spec = SurrogateSpec::synthetic(128, 8, 99, &SurrogateOptions::default());
    let space = spec.space(RangePolicy::Dynamic);
    let mut target = SurrogateTarget::new(spec.clone(), 5);
    let records: Vec<EvaluationRecord> = sampling::sample(&space, 300, 5)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, c)| target.evaluate(c, i as u64))
        .collect();
    let top = ranking::rank(&records, &space, ranking::DEFAULT_GRID).unwrap().top_k(16).unwrap();
    let hits = influential_names(&spec).iter().filter(|n| top.contains(n)).count();
    assert!(hits >= 7, "{hits}/8 in {top:?}");
}

/// E[max_j |Z_j|] for `p` independent N(0, sd^2) by quadrature of the
/// survival function, and its standard deviation.
fn null_max_moments(p: usize, sd: f64) -> (f64, f64) {
    let z = Normal::new(0.0, 1.0).unwrap();
    let cdf = |t: f64| (2.0 * z.cdf(t / sd) - 1.0).powi(p as i32);
    let (dt, steps) = (1e-4, 20_000);
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..steps {
        let t = (i as f64 + 0.5) * dt;
        let surv = 1.0 - cdf(t);
        m1 += surv * dt;
        m2 += 2.0 * t * surv * dt;
    }
    (m1, (m2 - m1 * m1).sqrt())
}

#[test]
fn pure_noise_scores_match_the_null_distribution() {
    // With standardized columns and target, an unpenalized coefficient on
    // pure noise is about N(0, 1 / n); the score (|coef| at the smallest
    // lambda) of the largest of p parameters follows the max of p |N|.
    let space = bluestore_space();
    let n = 300;
    let mut maxima = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let records: Vec<EvaluationRecord> = sampling::sample(&space, n, seed)
            .unwrap()
            .into_iter()
            .map(|c| EvaluationRecord::new(c, "w", Ok(5000.0 + 100.0 * rng.gen::<f64>()), 0.0, Source::Imported))
            .collect();
        let result = ranking::rank(&records, &space, ranking::DEFAULT_GRID).unwrap();
        maxima.push(result.entries.iter().map(|e| e.score).fold(0.0, f64::max));
    }
    let p = space.parameters.len();
    let (mean, sd) = null_max_moments(p, 1.0 / (n as f64).sqrt());
    let observed = maxima.iter().sum::<f64>() / maxima.len() as f64;
    let band = 3.0 * sd / (maxima.len() as f64).sqrt();
    assert!(
        (observed - mean).abs() <= band,
        "mean max score {observed:.4} vs null {mean:.4} +- {band:.4} ({maxima:?})"
    );
}

#[test]
fn score_mass_concentrates_in_top_16() {
    let space = bluestore_space();
    let spec = SurrogateSpec::load(fixture("s1.json")).unwrap();
    let mut target = SurrogateTarget::new(spec, 7);
    let records: Vec<EvaluationRecord> = sampling::sample(&space, 300, 7)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, c)| target.evaluate(&space.full_config(c), i as u64))
        .collect();
    let result = ranking::rank(&records, &space, ranking::DEFAULT_GRID).unwrap();
    let total: f64 = result.entries.iter().map(|e| e.score).sum();
    let top: f64 = result.entries.iter().take(16).map(|e| e.score).sum();
    assert!(top >= 0.8 * total, "{top} of {total}");
    assert_eq!(result.top_k(16).unwrap().len(), 16);
    let all = result.top_k(result.entries.len()).unwrap();
    assert_eq!(all, result.entries.iter().map(|e| e.name.clone()).collect::<Vec<_>>());
    assert!(result.top_k(0).is_err());
    assert!(result.top_k(result.entries.len() + 1).is_err());
}

#[test]
fn too_few_samples_is_an_error() {
    let space = bluestore_space();
    let records: Vec<EvaluationRecord> = sampling::sample(&space, 19, 1)
        .unwrap()
        .into_iter()
        .map(|c| EvaluationRecord::new(c, "w", Ok(1.0), 0.0, Source::Imported))
        .collect();
    let err = ranking::rank(&records, &space, ranking::DEFAULT_GRID).unwrap_err();
    assert!(err.to_string().contains("insufficient samples"), "{err}");
}

#[test]
fn deterministic_report_from_the_same_records() {
    let space = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ceph-like.json");
    let space = prepare_space(&space, &["osd_objectstore=bluestore".to_string()]).unwrap();
    let spec = SurrogateSpec::load(fixture("s1.json")).unwrap();
    let mut target = SurrogateTarget::new(spec, 3);
    let records: Vec<EvaluationRecord> = sampling::sample(&space, 100, 3)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, c)| target.evaluate(&space.full_config(c), i as u64))
        .collect();
    let a = ranking::rank(&records, &space, ranking::DEFAULT_GRID).unwrap();
    let b = ranking::rank(&records, &space, ranking::DEFAULT_GRID).unwrap();
    assert_eq!(a, b);
}

fn design(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
    for mut c in x.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    let beta = DVector::from_fn(p, |j, _| if j % 3 == 0 { 2.0 - j as f64 * 0.3 } else { 0.0 });
    let mut y = &x * beta + DVector::from_fn(n, |_, _| rng.gen_range(-0.3..0.3));
    let m = y.mean();
    y.add_scalar_mut(-m);
    (x, y)
}

#[test]
fn zero_lambda_matches_normal_equations() {
    let (x, y) = design(60, 7, 11);
    let beta = lasso_coordinate_descent(&x, &y, 0.0).unwrap();
    let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
    assert!((beta - ols).amax() < 1e-6);
}

#[test]
fn duplicated_column_keeps_other_parameters_in_place() {
    let (x, y) = design(80, 6, 4);
    let names = ["a", "b", "c", "d", "e", "f"];
    let base = rank_design(&x, &y, &names, &names, 100).unwrap();
    let mut wide = x.clone().insert_column(6, 0.0);
    wide.set_column(6, &x.column(0));
    let groups = ["a", "b", "c", "d", "e", "f", "a_copy"];
    let with_copy = rank_design(&wide, &y, &groups, &groups, 100).unwrap();
    let order = |r: &ranking::RankingResult| -> Vec<String> {
        r.entries.iter().map(|e| e.name.clone()).filter(|n| !n.starts_with('a')).collect()
    };
    assert_eq!(order(&base), order(&with_copy));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scaling_the_target_keeps_the_order(seed in 0u64..1000, c in 0.01f64..100.0) {
        let (x, y) = design(40, 5, seed);
        let names = ["p0", "p1", "p2", "p3", "p4"];
        let a = rank_design(&x, &y, &names, &names, 50).unwrap();
        let b = rank_design(&x, &(&y * c), &names, &names, 50).unwrap();
        let order = |r: &ranking::RankingResult| r.entries.iter().map(|e| e.name.clone()).collect::<Vec<_>>();
        prop_assert_eq!(order(&a), order(&b));
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            prop_assert!((eb.score - c * ea.score).abs() <= 1e-6 * (1.0 + c * ea.score));
        }
    }
}
