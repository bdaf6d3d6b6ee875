//! Clips, labels and datasets shared by every stage of the pipeline.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// An event label: 1-based frame index plus a (possibly soft) class vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub frame: usize,
    pub classes: Vec<f64>,
}

impl Label {
    pub fn new(frame: usize, classes: Vec<f64>) -> Self {
        Self { frame, classes }
    }

    /// One-hot label for class `class` out of `num_classes`.
    pub fn one_hot(frame: usize, class: usize, num_classes: usize) -> Self {
        let mut classes = alloc::vec![0.0; num_classes];
        classes[class] = 1.0;
        Self { frame, classes }
    }

    /// Normalised event time `frame / frames`.
    pub fn time(&self, frames: usize) -> f64 {
        self.frame as f64 / frames as f64
    }

    /// Index of the largest class entry.
    pub fn dominant_class(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.classes.iter().enumerate() {
            if v > self.classes[best] {
                best = k;
            }
        }
        best
    }
}

/// A feature sequence (`frames × feature_dim`) with its labels.
///
/// `precise` keeps the clean labels when `labels` carries perturbed ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub features: Tensor,
    pub labels: Vec<Label>,
    #[serde(default)]
    pub precise: Option<Vec<Label>>,
}

fn check_labels(labels: &[Label], frames: usize, num_classes: usize) -> Result<()> {
    for l in labels {
        if l.frame < 1 || l.frame > frames {
            return Err(invalid(format!("label frame {} outside [1, {frames}]", l.frame)));
        }
        if l.classes.len() != num_classes {
            return Err(invalid(format!(
                "label has {} classes, expected {num_classes}",
                l.classes.len()
            )));
        }
        if l.classes.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid("class entries must lie in [0, 1]"));
        }
    }
    Ok(())
}

impl Clip {
    pub fn new(features: Tensor, labels: Vec<Label>, num_classes: usize) -> Result<Self> {
        let clip = Self { features, labels, precise: None };
        clip.validate(num_classes)?;
        Ok(clip)
    }

    pub fn with_precise(mut self, precise: Vec<Label>) -> Self {
        self.precise = Some(precise);
        self
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (frames, _) = self
            .features
            .dims2()
            .ok_or_else(|| invalid("clip features must be a matrix"))?;
        if frames < 2 {
            return Err(invalid(format!("clip needs at least 2 frames, got {frames}")));
        }
        check_labels(&self.labels, frames, num_classes)?;
        if let Some(p) = &self.precise {
            check_labels(p, frames, num_classes)?;
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Sub-clip covering frames `start+1 ..= start+len`, labels re-indexed.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len < 2 || start + len > self.frames() {
            return Err(invalid(format!(
                "window [{start}, {}) outside clip of {} frames",
                start + len,
                self.frames()
            )));
        }
        let cols = self.feature_dim();
        let data = self.features.data()[start * cols..(start + len) * cols].to_vec();
        let shift = |labels: &[Label]| -> Vec<Label> {
            labels
                .iter()
                .filter(|l| l.frame > start && l.frame <= start + len)
                .map(|l| Label::new(l.frame - start, l.classes.clone()))
                .collect()
        };
        Ok(Self {
            features: Tensor::new(alloc::vec![len, cols], data)?,
            labels: shift(&self.labels),
            precise: self.precise.as_deref().map(shift),
        })
    }
}

/// Clips sharing a class vocabulary and feature width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub num_classes: usize,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn new(num_classes: usize, clips: Vec<Clip>) -> Result<Self> {
        if num_classes == 0 {
            return Err(invalid("a dataset needs at least one class"));
        }
        let width = clips.first().map(Clip::feature_dim);
        for c in &clips {
            c.validate(num_classes)?;
            if Some(c.feature_dim()) != width {
                return Err(invalid("clips disagree on feature width"));
            }
        }
        Ok(Self { num_classes, clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.clips.first().map(Clip::feature_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip() -> Clip {
        let features = Tensor::zeros(&[10, 2]);
        let labels = alloc::vec![Label::one_hot(3, 0, 2), Label::one_hot(8, 1, 2)];
        Clip::new(features, labels, 2).unwrap()
    }

    #[test]
    fn rejects_out_of_range_frames() {
        let err = Clip::new(Tensor::zeros(&[4, 2]), alloc::vec![Label::one_hot(5, 0, 1)], 1);
        assert!(err.is_err());
        let err = Clip::new(Tensor::zeros(&[4, 2]), alloc::vec![Label::one_hot(0, 0, 1)], 1);
        assert!(err.is_err());
    }

    #[test]
    fn window_reindexes_labels() {
        let w = clip().window(2, 5).unwrap();
        assert_eq!(w.frames(), 5);
        assert_eq!(w.labels, alloc::vec![Label::one_hot(1, 0, 2)]);
    }

    #[test]
    fn time_is_frame_over_length() {
        assert_eq!(Label::one_hot(16, 0, 1).time(64), 0.25);
    }
}
