//! Inference post-processing and spotting metrics.

mod inference;
mod metrics;

pub use inference::{
    detect_dataset, detect_video, evaluate_dataset, ground_truth_events, infer_video, InferenceConfig,
};
pub use metrics::{
    average_precision, evaluate, map_at, score_gaps, DeltaReport, EvalReport, GroundTruthEvent,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matcher::Prediction;
use crate::math::round_half_up;

/// Frame index of a normalised time: `round(t̂·T)` (half-up), at least 1 and
/// at most `frames`.
pub fn frame_time(t_hat: f64, frames: usize) -> usize {
    let r = round_half_up(t_hat * frames as f64);
    if r < 1.0 {
        1
    } else if r > frames as f64 {
        frames
    } else {
        r as usize
    }
}

/// Per-frame class scores (`frames × classes`, entries in `[0, 1]`).
/// Frame `f` (1-based) is row `f - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    frames: usize,
    classes: usize,
    data: Vec<f64>,
}

impl FrameScores {
    pub fn new(frames: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || classes == 0 || data.len() != frames * classes {
            return Err(invalid(format!(
                "{} scores for {frames} frames x {classes} classes",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("frame scores must lie in [0, 1]"));
        }
        Ok(Self { frames, classes, data })
    }

    pub fn zeros(frames: usize, classes: usize) -> Self {
        Self { frames, classes, data: vec![0.0; frames * classes] }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row of 1-based `frame`.
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[(frame - 1) * self.classes..frame * self.classes]
    }

    pub fn get(&self, frame: usize, class: usize) -> f64 {
        self.data[(frame - 1) * self.classes + class]
    }

    pub fn column(&self, class: usize) -> Vec<f64> {
        (1..=self.frames).map(|f| self.get(f, class)).collect()
    }

    /// Scores of a single class as a one-column matrix.
    pub fn select_class(&self, class: usize) -> Self {
        Self { frames: self.frames, classes: 1, data: self.column(class) }
    }
}

/// Per-frame elementwise maximum over the predictions landing on each frame;
/// frames without predictions stay zero.
pub fn aggregate_scores(preds: &[Prediction], frames: usize, classes: usize) -> Result<FrameScores> {
    let mut out = FrameScores::zeros(frames, classes);
    for p in preds {
        if p.scores.len() != classes {
            return Err(invalid(format!("prediction has {} classes, expected {classes}", p.scores.len())));
        }
        let f = frame_time(p.time, frames);
        for (o, &s) in out.data[(f - 1) * classes..f * classes].iter_mut().zip(&p.scores) {
            if s > *o {
                *o = s;
            }
        }
    }
    Ok(out)
}

/// Averages window scores over a video of `frames` frames. Each window is
/// given with its 0-based starting frame offset.
pub fn overlap_fuse(windows: &[(usize, FrameScores)], frames: usize) -> Result<FrameScores> {
    let classes = windows
        .first()
        .map(|(_, w)| w.classes)
        .ok_or_else(|| invalid("no windows to fuse"))?;
    let mut sum = vec![0.0; frames * classes];
    let mut count = vec![0usize; frames];
    for (offset, w) in windows {
        if w.classes != classes {
            return Err(invalid("windows disagree on class count"));
        }
        if offset + w.frames > frames {
            return Err(invalid(format!(
                "window at {offset} of {} frames exceeds video of {frames}",
                w.frames
            )));
        }
        for f in 0..w.frames {
            count[offset + f] += 1;
            let dst = &mut sum[(offset + f) * classes..(offset + f + 1) * classes];
            for (d, s) in dst.iter_mut().zip(w.row(f + 1)) {
                *d += s;
            }
        }
    }
    if let Some(f) = count.iter().position(|&c| c == 0) {
        return Err(Error::Uncovered(f + 1));
    }
    for (f, &c) in count.iter().enumerate() {
        for v in &mut sum[f * classes..(f + 1) * classes] {
            *v /= c as f64;
        }
    }
    Ok(FrameScores { frames, classes, data: sum })
}

/// Windowed score decay: per class, every frame that is not the maximum of
/// its centred window is multiplied by `decay`. Ties count as maxima.
pub fn soft_nms(scores: &FrameScores, window: usize, decay: f64) -> Result<FrameScores> {
    if window == 0 || window % 2 == 0 {
        return Err(invalid(format!("soft NMS window must be odd and positive, got {window}")));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(invalid(format!("soft NMS decay must lie in (0, 1], got {decay}")));
    }
    let half = window / 2;
    let (frames, classes) = (scores.frames, scores.classes);
    let mut out = scores.clone();
    for k in 0..classes {
        for f in 0..frames {
            let lo = f.saturating_sub(half);
            let hi = (f + half).min(frames - 1);
            let v = scores.data[f * classes + k];
            let is_max = (lo..=hi).all(|g| scores.data[g * classes + k] <= v);
            if !is_max {
                out.data[f * classes + k] = v * decay;
            }
        }
    }
    Ok(out)
}

/// A scored event hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video: usize,
    pub frame: usize,
    pub class: usize,
    pub score: f64,
}

/// Descending score, then ascending (video, frame, class).
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.video.cmp(&b.video))
            .then(a.frame.cmp(&b.frame))
            .then(a.class.cmp(&b.class))
    });
}

/// One detection per (frame, class) entry strictly above `threshold`.
pub fn extract_detections(scores: &FrameScores, threshold: f64, video: usize) -> Vec<Detection> {
    let mut dets = Vec::new();
    for frame in 1..=scores.frames {
        for (class, &score) in scores.row(frame).iter().enumerate() {
            if score > threshold {
                dets.push(Detection { video, frame, class, score });
            }
        }
    }
    sort_detections(&mut dets);
    dets
}
