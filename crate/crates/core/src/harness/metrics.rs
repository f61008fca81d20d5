//! Per-episode metrics CSV: `episode,kind,accumulated_connected,mean_reward,mean_loss,wall_ms`.

use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    /// Fixed-fleet episode.
    Single,
    /// Full-fleet episode of the dynamic trainer.
    Odd,
    /// Quit-sequence episode of the dynamic trainer.
    Even,
}

impl EpisodeKind {
    pub fn for_ducm2(episode: usize) -> Self {
        if episode % 2 == 1 {
            EpisodeKind::Odd
        } else {
            EpisodeKind::Even
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub kind: EpisodeKind,
    pub accumulated_connected: usize,
    pub mean_reward: f64,
    /// Empty while no agent has trained yet.
    pub mean_loss: Option<f64>,
    pub wall_ms: u64,
}

/// Append-only writer; every row is flushed as it is written.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Starts a new file with a header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            inner: csv::WriterBuilder::new().has_headers(true).from_writer(file),
        })
    }

    /// Continues an existing file, e.g. after resuming from a checkpoint.
    pub fn append(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| Error::io("metrics", e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
