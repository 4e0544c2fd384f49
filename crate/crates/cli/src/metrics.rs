//! Training metrics as newline-delimited `key=value` records.
//!
//! One line per (epoch, split):
//! `epoch=3 split=val loss=0.412345678901 accuracy=0.952000 wall_seconds=1.234`
//! Loss and accuracy print with full double precision so identical runs
//! produce identical records; wall_seconds is timing and excluded from
//! determinism comparisons.

use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_seconds: f64,
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} split={} loss={:.17e} accuracy={:.6} wall_seconds={:.3}",
            self.epoch, self.split, self.loss, self.accuracy, self.wall_seconds
        )
    }

    pub fn parse_line(line: &str) -> Option<MetricsRecord> {
        let mut epoch = None;
        let mut split = None;
        let mut loss = None;
        let mut accuracy = None;
        let mut wall = None;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "epoch" => epoch = v.parse().ok(),
                "split" => split = Some(v.to_string()),
                "loss" => loss = v.parse().ok(),
                "accuracy" => accuracy = v.parse().ok(),
                "wall_seconds" => wall = v.parse().ok(),
                _ => {}
            }
        }
        Some(MetricsRecord {
            epoch: epoch?,
            split: split?,
            loss: loss?,
            accuracy: accuracy?,
            wall_seconds: wall?,
        })
    }

    /// Equality of everything that should be deterministic (not timing).
    pub fn same_measurement(&self, other: &MetricsRecord) -> bool {
        self.epoch == other.epoch
            && self.split == other.split
            && self.loss.to_bits() == other.loss.to_bits()
            && self.accuracy.to_bits() == other.accuracy.to_bits()
    }
}

pub fn write_metrics(mut w: impl Write, records: &[MetricsRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn read_metrics(r: impl BufRead) -> std::io::Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rec) = MetricsRecord::parse_line(&line) {
            out.push(rec);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_bit_exact() {
        let rec = MetricsRecord {
            epoch: 7,
            split: "val".into(),
            loss: 0.1234567890123456789,
            accuracy: 0.9525,
            wall_seconds: 1.5,
        };
        let parsed = MetricsRecord::parse_line(&rec.to_line()).unwrap();
        assert!(parsed.same_measurement(&rec));
    }

    #[test]
    fn reader_skips_blank_lines() {
        let text = "\nepoch=1 split=train loss=1.0 accuracy=0.5 wall_seconds=0.1\n\n";
        let records = read_metrics(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].epoch, 1);
    }
}
