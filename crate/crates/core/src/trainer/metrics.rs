use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub beta: f64,
    pub lr: f64,
    pub train_elbo: f64,
    pub test_elbo: f64,
    pub test_recon: f64,
    pub test_kl_total: f64,
    pub test_kl_per_layer: Vec<f64>,
    /// Per-unit test KL; not part of the CSV.
    pub test_kl_per_unit: Vec<Vec<f64>>,
}

pub fn csv_header(depth: usize) -> String {
    let mut cols = vec![
        "epoch".to_string(),
        "beta".into(),
        "lr".into(),
        "train_elbo".into(),
        "test_elbo".into(),
        "test_recon".into(),
        "test_kl_total".into(),
    ];
    cols.extend((1..=depth).map(|i| format!("test_kl_layer_{i}")));
    cols.join(",")
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let mut cols = vec![
            self.epoch.to_string(),
            self.beta.to_string(),
            self.lr.to_string(),
            self.train_elbo.to_string(),
            self.test_elbo.to_string(),
            self.test_recon.to_string(),
            self.test_kl_total.to_string(),
        ];
        cols.extend(self.test_kl_per_layer.iter().map(|v| v.to_string()));
        cols.join(",")
    }
}

/// Append-only CSV, flushed after every row.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    /// Create a new file with a header row.
    pub fn create(path: &Path, depth: usize) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{}", csv_header(depth))?;
        file.flush()?;
        Ok(MetricsWriter { file })
    }

    /// Reopen an existing file for a resumed run, dropping rows at or after
    /// `from_epoch` so the continuation does not duplicate them.
    pub fn resume(path: &Path, depth: usize, from_epoch: usize) -> Result<Self> {
        let header = csv_header(depth);
        let mut kept = vec![header.clone()];
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if i == 0 {
                    if line != header {
                        return Err(Error::Input(format!(
                            "{} has a different column layout",
                            path.display()
                        )));
                    }
                    continue;
                }
                let epoch: usize = line
                    .split(',')
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Input(format!("bad metrics row: {line}")))?;
                if epoch < from_epoch {
                    kept.push(line);
                }
            }
        }
        let mut file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        for line in kept {
            writeln!(file, "{line}")?;
        }
        file.flush()?;
        Ok(MetricsWriter { file })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.csv_line())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Parse a metrics CSV back into (header, rows of numbers).
pub fn read_metrics_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Input("empty metrics file".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Input(format!("bad metrics row {line}: {e}")))?;
        rows.push(row);
    }
    Ok((header, rows))
}
