//! Orbit database and CSV output.
//!
//! The database holds one JSON object per line. Every real is written as a
//! decimal string with 17 significant digits so that files diff cleanly and
//! round-trip exactly; integers stay JSON numbers.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::porbit::OrbitRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// `{:.16e}`, i.e. 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn reals_to_strings(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => Value::String(fmt_real(n.as_f64().unwrap_or(f64::NAN))),
        Value::Array(a) => Value::Array(a.into_iter().map(reals_to_strings).collect()),
        Value::Object(o) => Value::Object(
            o.into_iter()
                .map(|(k, v)| (k, reals_to_strings(v)))
                .collect(),
        ),
        other => other,
    }
}

fn strings_to_reals(v: Value) -> Value {
    match v {
        Value::String(s) => match s.parse::<f64>() {
            Ok(x) if x.is_finite() => serde_json::Number::from_f64(x)
                .map(Value::Number)
                .unwrap_or(Value::String(s)),
            _ => Value::String(s),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(strings_to_reals).collect()),
        Value::Object(o) => Value::Object(
            o.into_iter()
                .map(|(k, v)| (k, strings_to_reals(v)))
                .collect(),
        ),
        other => other,
    }
}

pub fn record_to_line(rec: &OrbitRecord) -> String {
    let v = serde_json::to_value(rec).expect("records serialize");
    reals_to_strings(v).to_string()
}

pub fn record_from_line(line: &str) -> Result<OrbitRecord, serde_json::Error> {
    let v: Value = serde_json::from_str(line)?;
    serde_json::from_value(strings_to_reals(v))
}

pub fn write_db(path: &Path, records: &[OrbitRecord]) -> Result<(), IoError> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(f, "{}", record_to_line(r))?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a database; blank lines are skipped.
pub fn read_db(path: &Path) -> Result<Vec<OrbitRecord>, IoError> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(record_from_line(&line).map_err(|e| IoError::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Comma-separated table with a header row and reals at 17 significant
/// digits.
pub struct CsvWriter<W: Write> {
    out: W,
    n_cols: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &[&str]) -> std::io::Result<Self> {
        writeln!(out, "{}", header.join(","))?;
        Ok(CsvWriter {
            out,
            n_cols: header.len(),
        })
    }

    pub fn row(&mut self, values: &[f64]) -> std::io::Result<()> {
        assert_eq!(
            values.len(),
            self.n_cols,
            "row width does not match the header"
        );
        let cells: Vec<String> = values.iter().map(|&x| fmt_real(x)).collect();
        writeln!(self.out, "{}", cells.join(","))
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn create_csv(path: &Path, header: &[&str]) -> std::io::Result<CsvWriter<BufWriter<fs::File>>> {
    CsvWriter::new(BufWriter::new(fs::File::create(path)?), header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ksreg::make_seed;
    use crate::porbit::Provenance;
    use crate::{KSState, PhysState, Quaternion};
    use nalgebra::Vector3;

    fn record() -> OrbitRecord {
        let seed = make_seed(9, 1.0, Quaternion::ONE, 0.25);
        OrbitRecord {
            k: 9,
            eps: 1e-3,
            period: 1.0,
            s_period: seed.full_s_period(),
            theta: -1.234_567_890_123_456_7e-13,
            x0: seed.state0(),
            residual_norm: 3.3e-11,
            drift_k: 1e-13,
            drift_moment: 0.0,
            collision_count: 1,
            collision_times: vec![0.1 + 0.2],
            physical_samples: vec![PhysState::new(
                Vector3::new(0.1, -0.2, 1.0 / 3.0),
                Vector3::zeros(),
                0.7,
            )],
            eta: 1,
            provenance: Provenance {
                seed_index: 3,
                orientation: Quaternion::new(0.5, 0.5, 0.5, 0.5),
                phase: 0.25,
            },
        }
    }

    #[test]
    fn db_line_roundtrips_exactly() {
        let rec = record();
        let line = record_to_line(&rec);
        assert!(!line.contains('\n'));
        assert!(line.contains("\"k\":9") && line.contains("\"eta\":1"));
        assert!(line.contains(&format!("\"{}\"", fmt_real(1.0 / 3.0))));
        assert_eq!(record_from_line(&line).unwrap(), rec);
    }

    #[test]
    fn db_file_roundtrip_and_errors() {
        let dir = std::env::temp_dir().join(format!("ksorbit-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("db.jsonl");
        let mut other = record();
        other.x0 = KSState::new(Quaternion::I, Quaternion::J, 0.0, 2.0);
        write_db(&p, &[record(), other.clone()]).unwrap();
        let back = read_db(&p).unwrap();
        assert_eq!(back, vec![record(), other]);
        write_db(&p, &[]).unwrap();
        assert!(read_db(&p).unwrap().is_empty());
        fs::write(&p, "{\"k\": 1}\n").unwrap();
        assert!(matches!(read_db(&p), Err(IoError::Parse { line: 1, .. })));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_format() {
        let mut w = CsvWriter::new(Vec::new(), &["t", "x"]).unwrap();
        w.row(&[0.0, 0.1]).unwrap();
        let s = String::from_utf8(w.finish().unwrap()).unwrap();
        assert_eq!(s, "t,x\n0.0000000000000000e0,1.0000000000000001e-1\n");
        let x: f64 = "1.0000000000000001e-1".parse().unwrap();
        assert_eq!(x, 0.1);
    }
}
