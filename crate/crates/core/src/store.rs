//! Append-only evaluation database: one JSON record per line after a
//! version header.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::EvaluationRecord;

pub const FORMAT: &str = "sapphire-evals";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    format: String,
    version: u32,
}

fn header_line() -> String {
    serde_json::to_string(&Header {
        format: FORMAT.into(),
        version: VERSION,
    })
    .expect("header serializes")
}

/// Appends one record, writing the header first for a new file.
///
/// A torn trailing line left by an interrupted write is cut off before the
/// new record is written, so it cannot corrupt the next line.
pub fn append(db_path: impl AsRef<Path>, record: &EvaluationRecord) -> Result<()> {
    append_all(db_path, std::slice::from_ref(record))
}

pub fn append_all(db_path: impl AsRef<Path>, records: &[EvaluationRecord]) -> Result<()> {
    let path = db_path.as_ref();
    let io = |e| Error::io(path, e);
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(io)?;
    let len = file.metadata().map_err(io)?.len();
    let mut buf = String::new();
    if len == 0 {
        buf.push_str(&header_line());
        buf.push('\n');
    } else {
        let keep = complete_prefix_len(&mut file).map_err(io)?;
        if keep < len {
            log::warn!("{}: dropping {} byte(s) of torn trailing record", path.display(), len - keep);
            file.set_len(keep).map_err(io)?;
        }
    }
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io)?;
    file.sync_data().map_err(io)?;
    Ok(())
}

/// Length of the file up to and including its last newline.
fn complete_prefix_len(file: &mut File) -> std::io::Result<u64> {
    let len = file.metadata()?.len();
    let mut pos = len;
    let mut chunk = [0u8; 4096];
    while pos > 0 {
        let start = pos.saturating_sub(chunk.len() as u64);
        let n = (pos - start) as usize;
        file.seek(SeekFrom::Start(start))?;
        file.read_exact(&mut chunk[..n])?;
        if let Some(i) = chunk[..n].iter().rposition(|&b| b == b'\n') {
            return Ok(start + i as u64 + 1);
        }
        pos = start;
    }
    Ok(0)
}

/// Records read back from a database file.
#[derive(Debug, Default)]
pub struct Loaded {
    pub records: Vec<EvaluationRecord>,
    pub warnings: Vec<String>,
}

/// Reads every record in append order, optionally only those of one workload.
/// Failure records are included.
pub fn load(db_path: impl AsRef<Path>, workload: Option<&str>) -> Result<Loaded> {
    let path = db_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines: Vec<(usize, String, bool)> = Vec::new();
    let mut reader = BufReader::new(file);
    let mut line_no = 0;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let terminated = line.ends_with('\n');
        lines.push((line_no, line.trim_end_matches(['\n', '\r']).to_string(), terminated));
    }

    let mut out = Loaded::default();
    let last = lines.len();
    for (i, (no, text, terminated)) in lines.into_iter().enumerate() {
        let is_last = i + 1 == last;
        if text.trim().is_empty() {
            continue;
        }
        if no == 1 {
            match serde_json::from_str::<Header>(&text) {
                Ok(h) if h.format == FORMAT && h.version == VERSION => continue,
                Ok(h) => {
                    return Err(Error::MalformedRecord {
                        path: path.into(),
                        line: no,
                        message: format!("unsupported format {} v{}", h.format, h.version),
                    })
                }
                Err(_) if is_last && !terminated => {
                    out.warnings.push(format!("{}: torn header skipped", path.display()));
                    continue;
                }
                Err(e) => {
                    return Err(Error::MalformedRecord {
                        path: path.into(),
                        line: no,
                        message: format!("missing `{FORMAT}` header: {e}"),
                    })
                }
            }
        }
        match serde_json::from_str::<EvaluationRecord>(&text) {
            Ok(r) => {
                if workload.map_or(true, |w| r.workload_id == w) {
                    out.records.push(r);
                }
            }
            Err(e) if is_last => {
                let w = format!("{}:{no}: skipped torn trailing record ({e})", path.display());
                log::warn!("{w}");
                out.warnings.push(w);
            }
            Err(e) => {
                return Err(Error::MalformedRecord {
                    path: path.into(),
                    line: no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramspace::{Configuration, Value};
    use crate::targets::Source;

    fn record(i: usize, workload: &str) -> EvaluationRecord {
        let cfg: Configuration = [
            ("pg_per_osd".to_string(), Value::Int(30 + i as i64)),
            ("ratio".to_string(), Value::Real(0.1 + i as f64 / 7.0)),
            ("store".to_string(), Value::Cat("bluestore".into())),
        ]
        .into_iter()
        .collect();
        let metric = if i % 5 == 4 { Err("timeout".to_string()) } else { Ok(6000.0 + i as f64 / 3.0) };
        EvaluationRecord::new(cfg, workload, metric, 1.25, Source::Surrogate)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("evals.jsonl");
        let recs: Vec<_> = (0..6).map(|i| record(i, "w")).collect();
        for r in &recs {
            append(&db, r).unwrap();
        }
        let back = load(&db, None).unwrap();
        assert_eq!(back.records, recs);
        assert!(back.warnings.is_empty());
        let first = std::fs::read_to_string(&db).unwrap().lines().next().unwrap().to_string();
        assert_eq!(first, r#"{"format":"sapphire-evals","version":1}"#);
    }

    #[test]
    fn torn_trailing_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("evals.jsonl");
        append_all(&db, &[record(0, "w"), record(1, "w")]).unwrap();
        let mut f = OpenOptions::new().append(true).open(&db).unwrap();
        f.write_all(br#"{"config":{"pg_per_osd":3"#).unwrap();
        let back = load(&db, None).unwrap();
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.warnings.len(), 1);

        // the next append cuts the torn tail instead of gluing onto it
        append(&db, &record(2, "w")).unwrap();
        let back = load(&db, None).unwrap();
        assert_eq!(back.records.len(), 3);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn malformed_inner_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("evals.jsonl");
        append(&db, &record(0, "w")).unwrap();
        let mut f = OpenOptions::new().append(true).open(&db).unwrap();
        f.write_all(b"garbage\n").unwrap();
        drop(f);
        append(&db, &record(1, "w")).unwrap();
        match load(&db, None).unwrap_err() {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn filter_by_workload() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("evals.jsonl");
        append_all(&db, &[record(0, "seq"), record(1, "rand"), record(2, "seq")]).unwrap();
        assert_eq!(load(&db, Some("seq")).unwrap().records.len(), 2);
        assert!(load(&db, Some("write")).unwrap().records.is_empty());
    }

    #[test]
    fn campaign_preserves_append_order() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("evals.jsonl");
        let recs: Vec<_> = (0..300).map(|i| record(i, "w")).collect();
        for chunk in recs.chunks(37) {
            append_all(&db, chunk).unwrap();
        }
        let back = load(&db, None).unwrap().records;
        assert_eq!(back.len(), 300);
        assert_eq!(back, recs);
    }
}
