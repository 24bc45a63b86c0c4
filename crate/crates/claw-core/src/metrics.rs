//! CSV and JSON-lines output helpers.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// Append-only CSV writer with a fixed header.
pub struct CsvSink {
    out: std::io::BufWriter<std::fs::File>,
    columns: usize,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(CsvSink { out, columns: header.len() })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        debug_assert_eq!(values.len(), self.columns);
        let mut line = String::with_capacity(values.len() * 12);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format_float(*v));
        }
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same f64.
fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Append one JSON value as a line to a `.jsonl` log.
pub fn append_jsonl(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{value}")?;
    Ok(())
}

/// Read a CSV file written by [`CsvSink`] back into columns.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect();
        rows.push(row);
    }
    Ok((header, rows))
}

/// Make a run-scoped path, creating parents.
pub fn run_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join("claw-metrics-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        let mut sink = CsvSink::create(&path, &["step", "loss"]).unwrap();
        sink.row(&[0.0, 1.25]).unwrap();
        sink.row(&[1.0, 0.5]).unwrap();
        sink.flush().unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["step", "loss"]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1][1], 0.5);
    }
}
