//! On-disk datasets: one little-endian `f64` blob per split plus a JSON
//! manifest, and standalone JSON label files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spotmatch_core::eval::GroundTruthEvent;
use spotmatch_core::synth::SynthConfig;
use spotmatch_core::{Clip, Dataset, Label, Tensor};

use crate::{read_json, write_json, Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub frames: usize,
    /// Position of the clip's first value in the blob, in `f64` units.
    pub offset: usize,
    /// Training labels (perturbed when the split was generated with noise).
    pub labels: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precise_labels: Option<Vec<Label>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub split: String,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub features_file: String,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub clips: Vec<ClipEntry>,
}

pub fn manifest_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.json"))
}

pub fn blob_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.bin"))
}

/// Writes `<split>.bin` and `<split>.json` into `dir`.
pub fn save_split(dir: &Path, split: &str, data: &Dataset, synth: Option<&SynthConfig>, sigma: f64) -> Result<()> {
    let feature_dim = data.feature_dim().unwrap_or(0);
    let mut blob = Vec::new();
    let mut clips = Vec::with_capacity(data.len());
    for c in &data.clips {
        clips.push(ClipEntry {
            frames: c.frames(),
            offset: blob.len() / 8,
            labels: c.labels.clone(),
            precise_labels: c.precise.clone(),
        });
        for v in c.features.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let blob_file = blob_path(dir, split);
    fs::write(&blob_file, blob).map_err(|e| Error::io(&blob_file, e))?;
    let manifest = SplitManifest {
        format_version: FORMAT_VERSION,
        split: split.to_owned(),
        num_classes: data.num_classes,
        feature_dim,
        features_file: format!("{split}.bin"),
        sigma,
        synth: synth.copied(),
        clips,
    };
    write_json(&manifest_path(dir, split), &manifest)
}

pub fn load_manifest(dir: &Path, split: &str) -> Result<SplitManifest> {
    let path = manifest_path(dir, split);
    let m: SplitManifest = read_json(&path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported dataset version {}", m.format_version)));
    }
    Ok(m)
}

pub fn load_split(dir: &Path, split: &str) -> Result<Dataset> {
    let m = load_manifest(dir, split)?;
    let blob_file = dir.join(&m.features_file);
    let bytes = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(&blob_file, "feature blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut clips = Vec::with_capacity(m.clips.len());
    for (i, e) in m.clips.into_iter().enumerate() {
        let n = e.frames * m.feature_dim;
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::format(&blob_file, format!("clip {i} lies outside the blob")))?;
        let features = Tensor::new(vec![e.frames, m.feature_dim], data.to_vec())?;
        let clip = Clip { features, labels: e.labels, precise: e.precise_labels };
        clip.validate(m.num_classes)?;
        clips.push(clip);
    }
    Ok(Dataset::new(m.num_classes, clips)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLabel {
    pub frame: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLabels {
    pub video_id: usize,
    pub frames: usize,
    pub events: Vec<EventLabel>,
}

/// Ground truth for evaluating external detections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFile {
    pub format_version: u32,
    pub num_classes: usize,
    pub videos: Vec<VideoLabels>,
}

impl LabelFile {
    /// Precise labels of each clip (training labels when none are kept).
    pub fn from_dataset(data: &Dataset) -> Self {
        let videos = data
            .clips
            .iter()
            .enumerate()
            .map(|(video_id, c)| VideoLabels {
                video_id,
                frames: c.frames(),
                events: c
                    .precise
                    .as_ref()
                    .unwrap_or(&c.labels)
                    .iter()
                    .map(|l| EventLabel { frame: l.frame, class: l.dominant_class() })
                    .collect(),
            })
            .collect();
        Self { format_version: FORMAT_VERSION, num_classes: data.num_classes, videos }
    }

    pub fn events(&self) -> Vec<GroundTruthEvent> {
        self.videos
            .iter()
            .flat_map(|v| {
                v.events.iter().map(|e| GroundTruthEvent { video: v.video_id, frame: e.frame, class: e.class })
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_json(path)?;
        if f.format_version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported label file version {}", f.format_version)));
        }
        for v in &f.videos {
            if let Some(e) = v.events.iter().find(|e| e.class >= f.num_classes || e.frame < 1 || e.frame > v.frames) {
                return Err(Error::format(path, format!("video {}: invalid event {e:?}", v.video_id)));
            }
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
