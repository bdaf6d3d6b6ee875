use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{sort_detections, Detection, FrameScores};
use crate::error::{invalid, Error, Result};

/// A ground-truth event of one class in one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub video: usize,
    pub frame: usize,
    pub class: usize,
}

/// Metrics at a single tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta: usize,
    pub map: f64,
    /// `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Mean `|detection frame - ground-truth frame|` over true positives.
    pub mean_abs_offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub deltas: Vec<DeltaReport>,
}

impl EvalReport {
    pub fn map_at(&self, delta: usize) -> Option<f64> {
        self.deltas.iter().find(|d| d.delta == delta).map(|d| d.map)
    }
}

struct ClassMatch {
    /// True-positive flag per detection, in ranked order.
    hits: Vec<bool>,
    offsets: Vec<usize>,
    num_gt: usize,
}

/// Greedy matching in ranked order: each detection takes the nearest
/// unmatched ground truth within `delta`, ties going to the earlier frame.
fn match_class(ranked: &[&Detection], gts: &[&GroundTruthEvent], delta: usize) -> ClassMatch {
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(ranked.len());
    let mut offsets = Vec::new();
    for d in ranked {
        let mut best: Option<(usize, usize, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.video != d.video {
                continue;
            }
            let dist = gt.frame.abs_diff(d.frame);
            if dist > delta {
                continue;
            }
            let key = (dist, gt.frame, g);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
        match best {
            Some((dist, _, g)) => {
                used[g] = true;
                hits.push(true);
                offsets.push(dist);
            }
            None => hits.push(false),
        }
    }
    ClassMatch { hits, offsets, num_gt: gts.len() }
}

/// All-point interpolated area under the precision-recall curve.
fn ap_from_hits(hits: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    hits.iter()
        .zip(&precision)
        .filter(|(h, _)| **h)
        .map(|(_, p)| p)
        .sum::<f64>()
        / num_gt as f64
}

fn ranked_for_class(dets: &[Detection], class: usize) -> Vec<Detection> {
    let mut own: Vec<Detection> = dets.iter().filter(|d| d.class == class).cloned().collect();
    sort_detections(&mut own);
    own
}

fn class_match(dets: &[Detection], gts: &[GroundTruthEvent], class: usize, delta: usize) -> Option<ClassMatch> {
    let own_gts: Vec<&GroundTruthEvent> = gts.iter().filter(|g| g.class == class).collect();
    if own_gts.is_empty() {
        return None;
    }
    let own = ranked_for_class(dets, class);
    let ranked: Vec<&Detection> = own.iter().collect();
    Some(match_class(&ranked, &own_gts, delta))
}

/// AP of `class` at tolerance `delta`; `None` when the class has no ground truth.
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruthEvent],
    class: usize,
    delta: usize,
) -> Option<f64> {
    class_match(dets, gts, class, delta).map(|m| ap_from_hits(&m.hits, m.num_gt))
}

/// mAP over classes with ground truth, plus match statistics.
pub fn map_at(
    dets: &[Detection],
    gts: &[GroundTruthEvent],
    delta: usize,
    num_classes: usize,
) -> Result<DeltaReport> {
    if let Some(d) = dets.iter().find(|d| d.class >= num_classes) {
        return Err(invalid(format!("detection class {} out of {num_classes}", d.class)));
    }
    if let Some(g) = gts.iter().find(|g| g.class >= num_classes) {
        return Err(invalid(format!("ground-truth class {} out of {num_classes}", g.class)));
    }
    let mut per_class_ap = Vec::with_capacity(num_classes);
    let (mut tp, mut fp) = (0, 0);
    let mut offsets = Vec::new();
    for class in 0..num_classes {
        match class_match(dets, gts, class, delta) {
            Some(m) => {
                let hits = m.hits.iter().filter(|&&h| h).count();
                tp += hits;
                fp += m.hits.len() - hits;
                offsets.extend_from_slice(&m.offsets);
                per_class_ap.push(Some(ap_from_hits(&m.hits, m.num_gt)));
            }
            None => {
                fp += dets.iter().filter(|d| d.class == class).count();
                per_class_ap.push(None);
            }
        }
    }
    let evaluable: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    if evaluable.is_empty() {
        return Err(Error::NoEvaluableClass);
    }
    let map = evaluable.iter().sum::<f64>() / evaluable.len() as f64;
    let mean_abs_offset = (!offsets.is_empty())
        .then(|| offsets.iter().sum::<usize>() as f64 / offsets.len() as f64);
    Ok(DeltaReport {
        delta,
        map,
        per_class_ap,
        true_positives: tp,
        false_positives: fp,
        mean_abs_offset,
    })
}

pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthEvent],
    deltas: &[usize],
    num_classes: usize,
) -> Result<EvalReport> {
    let deltas = deltas
        .iter()
        .map(|&d| map_at(dets, gts, d, num_classes))
        .collect::<Result<_>>()?;
    Ok(EvalReport { deltas })
}

/// Mean per-class gap between the highest and second-highest score of the
/// event's class within `±delta` frames of each isolated ground truth
/// (no other event within `±delta`). `scores[v]` covers video `v`.
pub fn score_gaps(
    scores: &[FrameScores],
    gts: &[GroundTruthEvent],
    delta: usize,
    num_classes: usize,
) -> Result<Vec<Option<f64>>> {
    if delta == 0 {
        return Err(invalid("score gaps need a tolerance of at least one frame"));
    }
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (i, g) in gts.iter().enumerate() {
        let s = scores
            .get(g.video)
            .ok_or_else(|| invalid(format!("no scores for video {}", g.video)))?;
        if g.class >= num_classes || g.class >= s.classes() || g.frame < 1 || g.frame > s.frames() {
            return Err(invalid(format!("ground truth {g:?} outside the score matrix")));
        }
        let crowded = gts.iter().enumerate().any(|(j, o)| {
            j != i && o.video == g.video && o.frame.abs_diff(g.frame) <= delta
        });
        if crowded {
            continue;
        }
        let lo = g.frame.saturating_sub(delta).max(1);
        let hi = (g.frame + delta).min(s.frames());
        if hi - lo + 1 < 2 {
            continue;
        }
        let mut window: Vec<f64> = (lo..=hi).map(|f| s.get(f, g.class)).collect();
        window.sort_by(|a, b| b.total_cmp(a));
        sums[g.class] += window[0] - window[1];
        counts[g.class] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, class: usize, score: f64) -> Detection {
        Detection { video: 0, frame, class, score }
    }

    fn gt(frame: usize, class: usize) -> GroundTruthEvent {
        GroundTruthEvent { video: 0, frame, class }
    }

    #[test]
    fn tolerance_decides_true_positives() {
        let dets = [det(11, 0, 0.9), det(20, 0, 0.8)];
        let gts = [gt(10, 0)];
        assert_eq!(average_precision(&dets, &gts, 0, 1), Some(1.0));
        assert_eq!(average_precision(&dets, &gts, 0, 0), Some(0.0));
        assert_eq!(average_precision(&dets, &gts, 1, 1), None);
    }

    #[test]
    fn interpolated_area() {
        // Ranked hits: FP, TP, TP over two ground truths.
        let dets = [det(30, 0, 0.9), det(10, 0, 0.8), det(20, 0, 0.7)];
        let gts = [gt(10, 0), gt(20, 0)];
        let ap = average_precision(&dets, &gts, 0, 1).unwrap();
        assert!((ap - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn map_averages_evaluable_classes() {
        let dets = [det(10, 0, 0.9), det(50, 1, 0.9), det(20, 1, 0.5)];
        let gts = [gt(10, 0), gt(20, 1)];
        let r = map_at(&dets, &gts, 1, 3).unwrap();
        assert_eq!(r.per_class_ap, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(r.map, 0.75);
        assert_eq!((r.true_positives, r.false_positives), (2, 1));
        assert_eq!(r.mean_abs_offset, Some(0.0));
        assert_eq!(map_at(&dets, &[], 1, 3).unwrap_err(), Error::NoEvaluableClass);
    }

    #[test]
    fn nearest_ground_truth_wins_with_earlier_tie() {
        let dets = [det(11, 0, 0.9), det(9, 0, 0.8)];
        let gts = [gt(12, 0), gt(10, 0)];
        let r = map_at(&dets, &gts, 1, 1).unwrap();
        assert_eq!(r.true_positives, 1);
        let r = map_at(&dets, &gts, 3, 1).unwrap();
        assert_eq!(r.true_positives, 2);
        assert_eq!(r.mean_abs_offset, Some(2.0));
    }

    #[test]
    fn gaps() {
        let s = FrameScores::new(3, 1, vec![0.1, 0.9, 0.05]).unwrap();
        let g = score_gaps(&[s], &[gt(2, 0)], 1, 1).unwrap();
        assert!((g[0].unwrap() - 0.8).abs() < 1e-15);
        let flat = FrameScores::new(3, 1, vec![0.5; 3]).unwrap();
        assert_eq!(score_gaps(&[flat.clone()], &[gt(2, 0)], 1, 1).unwrap(), vec![Some(0.0)]);
        let crowded = score_gaps(&[flat], &[gt(2, 0), gt(3, 0)], 1, 1).unwrap();
        assert_eq!(crowded, vec![None]);
    }
}
