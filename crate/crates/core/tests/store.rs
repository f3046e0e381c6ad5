use std::fs;

use knobtune::store;
use knobtune::targets::{EvaluationRecord, Source};
use knobtune::{Configuration, Value};
use proptest::prelude::*;

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Int),
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Value::Real),
        "[a-z]{1,8}".prop_map(Value::Cat),
    ]
}

fn record() -> impl Strategy<Value = EvaluationRecord> {
    (
        prop::collection::btree_map("[a-z_]{1,12}", value(), 1..6),
        prop::option::of(any::<f64>().prop_filter("finite", |x| x.is_finite())),
        0.0f64..1e4,
    )
        .prop_map(|(values, metric, duration)| {
            let metric = metric.ok_or_else(|| "timeout after 10s".to_string());
            EvaluationRecord::new(Configuration::new(values), "w1", metric, duration, Source::Shell)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn records_round_trip_exactly_in_append_order(
        batches in prop::collection::vec(prop::collection::vec(record(), 0..4), 1..5),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("evals.jsonl");
        let mut all = Vec::new();
        let mut previous = Vec::new();
        for batch in &batches {
            store::append_all(&db, batch).unwrap();
            all.extend(batch.iter().cloned());
            // existing bytes never change
            let now = fs::read(&db).unwrap();
            prop_assert!(now.starts_with(&previous));
            previous = now;
        }
        prop_assert_eq!(store::load(&db, None).unwrap().records, all);
    }
}

#[test]
fn header_names_the_format_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("evals.jsonl");
    store::append_all(&db, &[]).unwrap();
    let text = fs::read_to_string(&db).unwrap();
    assert_eq!(text, "{\"format\":\"sapphire-evals\",\"version\":1}\n");
}
