//! Evaluation reports, training logs and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spotmatch_core::eval::{DeltaReport, EvalReport, InferenceConfig};
use spotmatch_core::train::{EpochRecord, TrainLog};

use crate::{read_json, write_json, Error, Result};

pub const REPORT_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub num_classes: usize,
    pub num_detections: usize,
    pub num_ground_truth: usize,
    /// `None` when the detections came from an external file.
    pub inference: Option<InferenceConfig>,
    pub deltas: Vec<DeltaReport>,
}

impl ReportFile {
    pub fn new(
        report: EvalReport,
        num_classes: usize,
        num_detections: usize,
        num_ground_truth: usize,
        inference: Option<InferenceConfig>,
    ) -> Self {
        Self { format_version: REPORT_VERSION, num_classes, num_detections, num_ground_truth, inference, deltas: report.deltas }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: Self = read_json(path)?;
        if r.format_version != REPORT_VERSION {
            return Err(Error::format(path, format!("unsupported report version {}", r.format_version)));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn map_at(&self, delta: usize) -> Option<f64> {
        self.deltas.iter().find(|d| d.delta == delta).map(|d| d.map)
    }
}

/// Appends one JSON line per epoch.
pub struct LogWriter {
    path: PathBuf,
    file: fs::File,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.into(), file })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|source| Error::Json { path: self.path.clone(), source })?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<TrainLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| Error::Json { path: path.into(), source }))
        .collect::<Result<Vec<EpochRecord>>>()?;
    Ok(TrainLog { records })
}

/// Everything needed to re-run a command, written beside its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub command: String,
    /// Fully resolved arguments, defaults included.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join(format!("{command}.manifest.json"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.artifact_version != ARTIFACT_VERSION {
            return Err(Error::format(path, format!("unsupported manifest version {}", m.artifact_version)));
        }
        Ok(m)
    }

    pub fn save(&self, out: &Path) -> Result<PathBuf> {
        let path = Self::path(out, &self.command);
        write_json(&path, self)?;
        Ok(path)
    }
}
