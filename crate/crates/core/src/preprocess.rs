//! Design-matrix construction: one-hot categoricals, `log1p` on numeric
//! values and on the target, standardization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramspace::{ParameterSpace, Value};
use crate::targets::EvaluationRecord;

/// Where an encoded column came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Column {
    Numeric(String),
    Indicator { param: String, label: String },
}

impl Column {
    /// The originating parameter name.
    pub fn param(&self) -> &str {
        match self {
            Column::Numeric(p) | Column::Indicator { param: p, .. } => p,
        }
    }
}

pub fn decode_column(column: &Column) -> &str {
    column.param()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub log1p: bool,
    pub mean: f64,
    /// Sample standard deviation; strictly positive for kept columns.
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct EncodedMatrix {
    pub columns: Vec<Column>,
    /// `n x d`. Numeric columns are standardized; indicator columns hold 0/1.
    pub rows: DMatrix<f64>,
    /// Standardized `log1p(metric)`.
    pub targets: DVector<f64>,
    pub transforms: Vec<ColumnTransform>,
    pub target_transform: ColumnTransform,
    /// Zero-variance columns removed during encoding.
    pub dropped: Vec<Column>,
    pub warnings: Vec<String>,
}

impl EncodedMatrix {
    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    /// Fully standardized design: indicator columns centered and scaled too.
    pub fn standardized(&self) -> DMatrix<f64> {
        let mut x = self.rows.clone();
        for (j, col) in self.columns.iter().enumerate() {
            if let Column::Indicator { .. } = col {
                let t = self.transforms[j];
                x.column_mut(j).apply(|v| *v = (*v - t.mean) / t.scale);
            }
        }
        x
    }
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn log1p_checked(v: f64, what: impl Fn() -> String) -> Result<f64> {
    if v < -1.0 || !v.is_finite() {
        return Err(Error::InvalidInput(format!("{}: value {v} has no log1p", what())));
    }
    Ok(v.ln_1p())
}

/// Encodes the successful records over the tunable parameters of `space`.
/// Failure records are skipped.
pub fn encode(records: &[EvaluationRecord], space: &ParameterSpace) -> Result<EncodedMatrix> {
    let ok: Vec<(usize, &EvaluationRecord, f64)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.metric().map(|m| (i, r, m)))
        .collect();
    let n = ok.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }

    let mut columns = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    let mut is_log = Vec::new();
    for p in &space.parameters {
        fn lookup<'r>(idx: usize, r: &'r EvaluationRecord, name: &str) -> Result<&'r Value> {
            r.config.get(name).ok_or_else(|| {
                Error::InvalidInput(format!("record {idx} has no value for `{name}`"))
            })
        }
        if p.is_numeric() {
            let mut col = Vec::with_capacity(n);
            for &(idx, r, _) in &ok {
                let v = lookup(idx, r, &p.name)?.as_f64().ok_or_else(|| {
                    Error::InvalidInput(format!("record {idx}: `{}` is not numeric", p.name))
                })?;
                col.push(log1p_checked(v, || format!("record {idx}, parameter `{}`", p.name))?);
            }
            columns.push(Column::Numeric(p.name.clone()));
            data.push(col);
            is_log.push(true);
        } else {
            let mut cols = vec![vec![0.0; n]; p.categories.len()];
            for (row, &(idx, r, _)) in ok.iter().enumerate() {
                let v = lookup(idx, r, &p.name)?;
                let label = v.as_category().unwrap_or_default();
                let c = p.categories.iter().position(|c| c == label).ok_or_else(|| {
                    Error::InvalidInput(format!("record {idx}: `{}` has unknown category `{v}`", p.name))
                })?;
                cols[c][row] = 1.0;
            }
            for (label, col) in p.categories.iter().zip(cols) {
                columns.push(Column::Indicator {
                    param: p.name.clone(),
                    label: label.clone(),
                });
                data.push(col);
                is_log.push(false);
            }
        }
    }

    let mut kept_cols = Vec::new();
    let mut kept_data = Vec::new();
    let mut transforms = Vec::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    for ((col, mut values), log1p) in columns.into_iter().zip(data).zip(is_log) {
        let (mean, scale) = mean_and_sd(&values);
        if !(scale > 1e-12 * mean.abs().max(1.0)) {
            let w = format!("dropped zero-variance column {col:?}");
            log::warn!("{w}");
            warnings.push(w);
            dropped.push(col);
            continue;
        }
        if log1p {
            for v in &mut values {
                *v = (*v - mean) / scale;
            }
        }
        kept_cols.push(col);
        kept_data.push(values);
        transforms.push(ColumnTransform { log1p, mean, scale });
    }

    let mut y = Vec::with_capacity(n);
    for &(idx, _, m) in &ok {
        y.push(log1p_checked(m, || format!("record {idx}, metric"))?);
    }
    let (ymean, mut yscale) = mean_and_sd(&y);
    if !(yscale > 0.0) {
        warnings.push("target metric is constant".into());
        yscale = 1.0;
    }
    let targets = DVector::from_iterator(n, y.iter().map(|v| (v - ymean) / yscale));

    let d = kept_cols.len();
    let rows = DMatrix::from_fn(n, d, |i, j| kept_data[j][i]);
    Ok(EncodedMatrix {
        columns: kept_cols,
        rows,
        targets,
        transforms,
        target_transform: ColumnTransform {
            log1p: true,
            mean: ymean,
            scale: yscale,
        },
        dropped,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramspace::Configuration;
    use crate::targets::Source;

    fn space() -> ParameterSpace {
        ParameterSpace::from_json_str(
            r#"{"parameters": [
                {"name": "pg_per_osd", "kind": "integer", "default": 1, "range": [0, 250]},
                {"name": "osd_objectstore", "kind": "categorical", "default": "bluestore",
                 "categories": ["bluestore", "filestore", "memstore", "kstore"]}
            ]}"#,
        )
        .unwrap()
        .0
    }

    fn rec(pg: i64, store: &str, metric: f64) -> EvaluationRecord {
        let cfg: Configuration = [
            ("pg_per_osd".to_string(), Value::Int(pg)),
            ("osd_objectstore".to_string(), Value::Cat(store.into())),
        ]
        .into_iter()
        .collect();
        EvaluationRecord::new(cfg, "w", Ok(metric), 0.0, Source::Imported)
    }

    fn ten() -> Vec<EvaluationRecord> {
        let stores = ["bluestore", "filestore", "memstore", "kstore"];
        (0..10).map(|i| rec(1 + i * 20, stores[i as usize % 4], 100.0 + i as f64)).collect()
    }

    #[test]
    fn categorical_becomes_one_hot() {
        let m = encode(&ten(), &space()).unwrap();
        let ind: Vec<usize> = (0..m.columns.len())
            .filter(|&j| matches!(m.columns[j], Column::Indicator { .. }))
            .collect();
        assert_eq!(ind.len(), 4);
        for i in 0..10 {
            let s: f64 = ind.iter().map(|&j| m.rows[(i, j)]).sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn two_value_column_standardizes_to_unit_pair() {
        let recs = vec![rec(1, "bluestore", 0.0), rec(3, "filestore", 5.0)];
        let m = encode(&recs, &space()).unwrap();
        assert_eq!(m.columns[0], Column::Numeric("pg_per_osd".into()));
        assert!((m.transforms[0].mean - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!((m.rows[(0, 0)] + 0.7071).abs() < 1e-4);
        assert!((m.rows[(1, 0)] - 0.7071).abs() < 1e-4);
        // metric 0 contributes log1p(0) = 0 before standardization
        let raw0 = m.targets[0] * m.target_transform.scale + m.target_transform.mean;
        assert!(raw0.abs() < 1e-12);
    }

    #[test]
    fn numeric_columns_are_standardized() {
        let m = encode(&ten(), &space()).unwrap();
        let col = m.rows.column(0);
        let mean = col.sum() / 10.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn columns_decode_to_space_parameters() {
        let s = space();
        let m = encode(&ten(), &s).unwrap();
        for c in &m.columns {
            assert!(s.param(decode_column(c)).is_some());
        }
        assert_eq!(
            decode_column(&Column::Indicator {
                param: "osd_objectstore".into(),
                label: "bluestore".into()
            }),
            "osd_objectstore"
        );
    }

    #[test]
    fn constant_columns_are_dropped() {
        let recs: Vec<_> = (0..5).map(|i| rec(7, "bluestore", i as f64)).collect();
        let m = encode(&recs, &space()).unwrap();
        assert!(m.columns.is_empty());
        assert_eq!(m.dropped.len(), 5);
        assert!(m.transforms.iter().all(|t| t.scale > 0.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            encode(&ten()[..1], &space()),
            Err(Error::InsufficientSamples { .. })
        ));
        let s = ParameterSpace::from_json_str(
            r#"{"parameters": [{"name": "pg_per_osd", "kind": "integer", "default": 1, "range": [-5, 250]}]}"#,
        )
        .unwrap()
        .0;
        let err = encode(&[rec(1, "bluestore", 1.0), rec(-3, "bluestore", 2.0)], &s).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{err}");
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = encode(&ten(), &space()).unwrap();
        let b = encode(&ten(), &space()).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.targets, b.targets);
    }
}
