use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a fitness trace. `evaluation` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub evaluation: usize,
    pub best_fitness: f64,
    pub current_fitness: f64,
}

/// Per-evaluation fitness history with a running best.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitnessTrace {
    rows: Vec<TraceRow>,
}

impl FitnessTrace {
    pub fn new() -> Self {
        FitnessTrace::default()
    }

    /// Appends an evaluation; returns true if it is a new best.
    pub fn record(&mut self, fitness: f64) -> bool {
        let previous = self.best();
        let improved = previous.is_none_or(|b| fitness > b);
        let best = if improved { fitness } else { previous.unwrap() };
        self.rows.push(TraceRow {
            evaluation: self.rows.len() + 1,
            best_fitness: best,
            current_fitness: fitness,
        });
        improved
    }

    pub fn best(&self) -> Option<f64> {
        self.rows.last().map(|r| r.best_fitness)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn best_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.best_fitness).collect()
    }

    pub fn current_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.current_fitness).collect()
    }

    /// CSV with header `evaluation,best_fitness,current_fitness`; reals are
    /// written with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["evaluation", "best_fitness", "current_fitness"])?;
        for r in &self.rows {
            w.write_record([
                r.evaluation.to_string(),
                format!("{:.16e}", r.best_fitness),
                format!("{:.16e}", r.current_fitness),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers != vec!["evaluation", "best_fitness", "current_fitness"] {
            return Err(Error::Config(format!(
                "unexpected trace header {headers:?}"
            )));
        }
        let rows = reader
            .deserialize::<TraceRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(FitnessTrace { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        FitnessTrace::read_csv(file).map_err(|e| Error::parse(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_best_and_csv_round_trip() {
        let mut t = FitnessTrace::new();
        for f in [0.1, 0.3, 0.2, 0.3, -0.5, 0.45] {
            t.record(f);
        }
        assert_eq!(t.best_series(), vec![0.1, 0.3, 0.3, 0.3, 0.3, 0.45]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("evaluation,best_fitness,current_fitness\n1,"));
        assert_eq!(FitnessTrace::read_csv(&buf[..]).unwrap(), t);
    }
}
