use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport, GroundTruthEvent};
use super::{aggregate_scores, extract_detections, overlap_fuse, soft_nms, sort_detections, Detection, FrameScores};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::model::{forward, ModelParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Detections keep scores strictly above this value.
    pub threshold: f64,
    /// Soft NMS `(window, decay)`; `None` disables it.
    pub nms: Option<(usize, f64)>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { threshold: 0.01, nms: Some((3, 0.5)) }
    }
}

/// Window starts with a stride of half the window; the last window is
/// aligned to the end of the video.
fn window_starts(frames: usize, window: usize) -> Vec<usize> {
    let stride = (window / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|s| s + window <= frames).collect();
    if starts.last().map_or(true, |&s| s + window < frames) {
        starts.push(frames - window);
    }
    starts
}

/// Fused per-frame scores of a whole video from overlapping windows of the
/// model's length.
pub fn infer_video(params: &ModelParams, features: &Tensor) -> Result<FrameScores> {
    let cfg = &params.config;
    let (frames, width) = features
        .dims2()
        .ok_or_else(|| invalid("video features must be a matrix"))?;
    if width != cfg.feature_dim || frames < cfg.frames {
        return Err(invalid(format!(
            "video of {frames}x{width} for a model of {} frames x {} features",
            cfg.frames, cfg.feature_dim
        )));
    }
    let mut windows = Vec::new();
    for start in window_starts(frames, cfg.frames) {
        let data = features.data()[start * width..(start + cfg.frames) * width].to_vec();
        let clip = Tensor::new(alloc::vec![cfg.frames, width], data)?;
        let layers = forward(&clip, params)?;
        let last = layers.last().expect("at least one decoder layer");
        windows.push((start, aggregate_scores(last, cfg.frames, cfg.num_classes)?));
    }
    overlap_fuse(&windows, frames)
}

/// Post-processed scores and the detections extracted from them.
pub fn detect_video(
    params: &ModelParams,
    features: &Tensor,
    config: &InferenceConfig,
    video: usize,
) -> Result<(FrameScores, Vec<Detection>)> {
    let mut scores = infer_video(params, features)?;
    if let Some((window, decay)) = config.nms {
        scores = soft_nms(&scores, window, decay)?;
    }
    let dets = extract_detections(&scores, config.threshold, video);
    Ok((scores, dets))
}

/// Ground-truth events of every clip, taking the dominant class of each label.
pub fn ground_truth_events(data: &Dataset) -> Vec<GroundTruthEvent> {
    data.clips
        .iter()
        .enumerate()
        .flat_map(|(video, c)| {
            let labels = c.precise.as_ref().unwrap_or(&c.labels);
            labels.iter().map(move |l| GroundTruthEvent { video, frame: l.frame, class: l.dominant_class() })
        })
        .collect()
}

/// Detections over every clip, in ranked order.
pub fn detect_dataset(params: &ModelParams, data: &Dataset, config: &InferenceConfig) -> Result<Vec<Detection>> {
    let mut all = Vec::new();
    for (video, clip) in data.clips.iter().enumerate() {
        all.extend(detect_video(params, &clip.features, config, video)?.1);
    }
    sort_detections(&mut all);
    Ok(all)
}

/// Inference plus mAP at each tolerance against the clips' precise labels.
pub fn evaluate_dataset(
    params: &ModelParams,
    data: &Dataset,
    config: &InferenceConfig,
    deltas: &[usize],
) -> Result<EvalReport> {
    let dets = detect_dataset(params, data, config)?;
    evaluate(&dets, &ground_truth_events(data), deltas, data.num_classes)
}
