//! The append-only evaluation database: writing, filtering by workload, and
//! recovering from a torn trailing line.
//!
//! ```text
//! cargo run --example evaluation_db
//! ```

use std::io::Write;

use knobtune::store;
use knobtune::targets::{EvaluationRecord, Source};
use knobtune::{Configuration, Value};

fn record(threads: i64, workload: &str, metric: Result<f64, String>) -> EvaluationRecord {
    let cfg: Configuration = [("osd_op_threads".to_string(), Value::Int(threads))].into_iter().collect();
    EvaluationRecord::new(cfg, workload, metric, 1.5, Source::Imported)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let db = dir.path().join("evals.jsonl");
    store::append_all(
        &db,
        &[
            record(2, "seq-write", Ok(5120.0)),
            record(8, "seq-write", Ok(6011.5)),
            record(16, "rand-read", Err("timeout: benchmark exceeded 600s".into())),
        ],
    )?;
    print!("{}", std::fs::read_to_string(&db)?);

    let seq = store::load(&db, Some("seq-write"))?;
    println!("seq-write records: {}", seq.records.len());

    // an interrupted writer leaves half a line behind
    std::fs::OpenOptions::new().append(true).open(&db)?.write_all(b"{\"config\":{\"osd_op")?;
    let loaded = store::load(&db, None)?;
    println!("after torn write: {} records, warnings {:?}", loaded.records.len(), loaded.warnings);

    store::append(&db, &record(4, "seq-write", Ok(5800.0)))?;
    let loaded = store::load(&db, None)?;
    println!("after next append: {} records, warnings {:?}", loaded.records.len(), loaded.warnings);
    Ok(())
}
