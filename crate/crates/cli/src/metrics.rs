//! Line-delimited JSON metric records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub split: String,
    pub elbo: f64,
    pub re: f64,
    pub kl: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl MetricsRecord {
    /// Builds a record whose `elbo` is `re − beta·kl`.
    pub fn new(epoch: u64, split: &str, re: f64, kl: f64, beta: f64) -> Self {
        MetricsRecord {
            epoch,
            split: split.to_string(),
            elbo: re - beta * kl,
            re,
            kl,
            beta,
            wall_time: None,
        }
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Appends records to a metrics file, flushing after every write.
pub struct MetricsSink {
    file: File,
}

impl MetricsSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsSink { file: File::create(path)? })
    }

    pub fn append(path: &Path) -> Result<Self> {
        Ok(MetricsSink {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.file, "{}", record.to_line()?)?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
