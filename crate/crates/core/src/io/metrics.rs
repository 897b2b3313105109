//! Line-delimited JSON metrics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub align_err: f64,
    pub wall_ms: f64,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(step: u64, loss: f64, align_err: f64) -> Self {
        MetricsRecord {
            step,
            loss,
            align_err,
            wall_ms: 0.0,
            extra: BTreeMap::new(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        let fixed = [("loss", self.loss), ("align_err", self.align_err), ("wall_ms", self.wall_ms)];
        let all = fixed.into_iter().chain(self.extra.iter().map(|(k, &v)| (k.as_str(), v)));
        for (k, v) in all {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("metric `{k}` at step {} is {v}", self.step)));
            }
        }
        Ok(())
    }

    pub fn to_line(&self) -> Result<String> {
        self.check_finite()?;
        Ok(serde_json::to_string(self).expect("metrics records always serialize"))
    }
}

/// Writes one record per line to any sink.
pub struct MetricsWriter<W: Write> {
    sink: W,
    path: PathBuf,
}

impl MetricsWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter {
            sink: BufWriter::new(file),
            path,
        })
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Self {
        MetricsWriter {
            sink,
            path: PathBuf::from("<stream>"),
        }
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        let line = rec.to_line()?;
        writeln!(self.sink, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.sink)
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Numeric(format!("metrics line {}: {e}", i + 1)))
        })
        .collect()
}
