//! Label assignment: class/time matching costs with φ padding and a
//! minimum-cost one-to-one solver.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{invalid, Error, Result};
use crate::eval::frame_time;

/// A ground-truth event for matching: class vector, normalised time and frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub classes: Vec<f64>,
    pub time: f64,
    pub frame: usize,
}

impl GroundTruthLabel {
    /// Builds the label with `time = frame / frames`.
    pub fn new(classes: Vec<f64>, frame: usize, frames: usize) -> Result<Self> {
        if frame < 1 || frame > frames {
            return Err(invalid(format!("frame {frame} outside [1, {frames}]")));
        }
        if classes.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid("class entries must lie in [0, 1]"));
        }
        if !classes.iter().any(|&c| c > 0.0) {
            return Err(invalid("a ground-truth label needs a positive class entry"));
        }
        Ok(Self { classes, time: frame as f64 / frames as f64, frame })
    }

    pub fn from_label(label: &Label, frames: usize) -> Result<Self> {
        Self::new(label.classes.clone(), label.frame, frames)
    }
}

/// One query's output: per-class scores and a normalised time, all in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub time: f64,
}

/// Ground truth padded with φ ("no event") slots up to the query count.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGroundTruthSet {
    slots: Vec<Option<GroundTruthLabel>>,
    frames: usize,
}

impl PaddedGroundTruthSet {
    pub fn new(labels: &[GroundTruthLabel], queries: usize, frames: usize) -> Result<Self> {
        if labels.len() > queries {
            return Err(Error::TooManyLabels { labels: labels.len(), queries });
        }
        let mut slots: Vec<_> = labels.iter().cloned().map(Some).collect();
        slots.resize(queries, None);
        Ok(Self { slots, frames })
    }

    pub fn slots(&self) -> &[Option<GroundTruthLabel>] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of real (non-φ) labels.
    pub fn num_labels(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn phi_indices(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slots[i].is_none()).collect()
    }
}

/// `-(1/N_c)·[cᵀĉ + (1-c)ᵀ(1-ĉ)]`.
pub fn class_cost(target: &[f64], scores: &[f64]) -> Result<f64> {
    if target.len() != scores.len() || target.is_empty() {
        return Err(invalid(format!(
            "class vectors of length {} and {}",
            target.len(),
            scores.len()
        )));
    }
    let agree: f64 = target
        .iter()
        .zip(scores)
        .map(|(c, p)| c * p + (1.0 - c) * (1.0 - p))
        .sum();
    Ok(-agree / target.len() as f64)
}

/// `|t - t̂|` for normalised times.
pub fn time_cost(t: f64, t_hat: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&t_hat) {
        return Err(invalid(format!("times {t} and {t_hat} must lie in [0, 1]")));
    }
    Ok((t - t_hat).abs())
}

/// Square matching cost matrix: rows are padded ground-truth slots, columns
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    values: Vec<f64>,
    class_costs: Vec<f64>,
    time_costs: Vec<f64>,
    offsets: Vec<i64>,
    phi_rows: Vec<bool>,
    lambda_time: f64,
}

impl CostMatrix {
    /// Plain matrix without label metadata.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(invalid(format!("{} entries for a {n}x{n} matrix", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "cost_matrix" });
        }
        Ok(Self {
            n,
            class_costs: vec![0.0; n * n],
            time_costs: vec![0.0; n * n],
            offsets: vec![0; n * n],
            phi_rows: vec![false; n],
            values,
            lambda_time: 0.0,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn lambda_time(&self) -> f64 {
        self.lambda_time
    }

    pub fn is_phi_row(&self, row: usize) -> bool {
        self.phi_rows[row]
    }

    /// Cost of `permutation` summed in row order.
    pub fn cost_of(&self, permutation: &[usize]) -> f64 {
        permutation.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// `H_ij = 1{i∉Φ}·[H_class + λ·H_time]`.
pub fn build_cost_matrix(
    padded: &PaddedGroundTruthSet,
    preds: &[Prediction],
    lambda_time: f64,
) -> Result<CostMatrix> {
    build_weighted(padded, preds, lambda_time, true)
}

fn build_weighted(
    padded: &PaddedGroundTruthSet,
    preds: &[Prediction],
    lambda_time: f64,
    use_class: bool,
) -> Result<CostMatrix> {
    let n = padded.len();
    if preds.len() != n {
        return Err(invalid(format!("{} predictions for {n} ground-truth slots", preds.len())));
    }
    if !(lambda_time >= 0.0) || !lambda_time.is_finite() {
        return Err(invalid(format!("lambda_time must be a finite nonnegative value, got {lambda_time}")));
    }
    let mut m = CostMatrix::from_values(n, vec![0.0; n * n])?;
    m.lambda_time = lambda_time;
    for (i, slot) in padded.slots().iter().enumerate() {
        let Some(gt) = slot else {
            m.phi_rows[i] = true;
            continue;
        };
        for (j, p) in preds.iter().enumerate() {
            let hc = class_cost(&gt.classes, &p.scores)?;
            let ht = time_cost(gt.time, p.time)?;
            let k = i * n + j;
            m.class_costs[k] = hc;
            m.time_costs[k] = ht;
            m.offsets[k] = frame_time(p.time, padded.frames()) as i64 - gt.frame as i64;
            m.values[k] = if use_class { hc } else { 0.0 } + lambda_time * ht;
        }
    }
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "cost_matrix" });
    }
    Ok(m)
}

/// Costs of one matched non-φ pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub gt: usize,
    pub prediction: usize,
    pub class_cost: f64,
    pub time_cost: f64,
    /// `frame_time(t̂) - frame` in frames.
    pub frame_offset: i64,
}

/// Bijection from ground-truth slots to predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `permutation[slot]` is the prediction matched to that slot.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
    pub pairs: Vec<PairRecord>,
}

impl Assignment {
    fn from_permutation(m: &CostMatrix, permutation: Vec<usize>) -> Self {
        let pairs = permutation
            .iter()
            .enumerate()
            .filter(|&(i, _)| !m.phi_rows[i])
            .map(|(i, &j)| {
                let k = i * m.n + j;
                PairRecord {
                    gt: i,
                    prediction: j,
                    class_cost: m.class_costs[k],
                    time_cost: m.time_costs[k],
                    frame_offset: m.offsets[k],
                }
            })
            .collect();
        Self { total_cost: m.cost_of(&permutation), permutation, pairs }
    }
}

/// Minimum-cost assignment; among optimal permutations the lexicographically
/// smallest one (by column, in row order) is returned.
pub fn hungarian_solve(m: &CostMatrix) -> Result<Assignment> {
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "hungarian_solve" });
    }
    let permutation = solve(m.n, &m.values);
    Ok(Assignment::from_permutation(m, permutation))
}

/// Shortest augmenting path solver over a dense `n×n` matrix, followed by a
/// lexicographic canonicalisation over the tight (zero reduced cost) edges.
fn solve(n: usize, a: &[f64]) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_mate = vec![0usize; n];
    let mut col_mate = vec![0usize; n];
    for j in 1..=n {
        row_mate[p[j] - 1] = j - 1;
        col_mate[j - 1] = p[j] - 1;
    }

    let scale = a.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    let eps = 1e-9 * scale;
    let tight: Vec<bool> = (0..n * n)
        .map(|k| a[k] - u[k / n + 1] - v[k % n + 1] <= eps)
        .collect();
    canonicalise(n, &tight, &mut row_mate, &mut col_mate);
    row_mate
}

/// Rewrites a perfect matching on the tight graph into the lexicographically
/// smallest one, fixing rows in order.
fn canonicalise(n: usize, tight: &[bool], row_mate: &mut [usize], col_mate: &mut [usize]) {
    let mut col_fixed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if col_fixed[j] || !tight[i * n + j] {
                continue;
            }
            if row_mate[i] == j {
                break;
            }
            let displaced = col_mate[j];
            let target = row_mate[i];
            let mut visited = vec![false; n];
            let mut path = Vec::new();
            let found = augment(
                n,
                tight,
                col_mate,
                &col_fixed,
                (i, j),
                target,
                displaced,
                &mut visited,
                &mut path,
            );
            if found {
                // path holds (row, col) edges of the augmenting path.
                for &(r, c) in &path {
                    row_mate[r] = c;
                    col_mate[c] = r;
                }
                row_mate[i] = j;
                col_mate[j] = i;
                break;
            }
        }
        col_fixed[row_mate[i]] = true;
    }
}

#[allow(clippy::too_many_arguments)]
fn augment(
    n: usize,
    tight: &[bool],
    col_mate: &[usize],
    col_fixed: &[bool],
    forced: (usize, usize),
    target: usize,
    row: usize,
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..n {
        if visited[c] || col_fixed[c] || c == forced.1 || !tight[row * n + c] {
            continue;
        }
        visited[c] = true;
        path.push((row, c));
        if c == target {
            return true;
        }
        let next = col_mate[c];
        if next != forced.0
            && augment(n, tight, col_mate, col_fixed, forced, target, next, visited, path)
        {
            return true;
        }
        path.pop();
    }
    false
}

/// How ground truth is bound to predictions during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// Each label takes the free query whose predicted time is nearest its
    /// tagged frame; class scores are ignored.
    Static,
    /// Optimal matching on the time cost alone.
    TimeOnly,
    /// Optimal matching on class and time costs.
    #[default]
    Dynamic,
}

impl MatchingMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::TimeOnly => "time_only",
            Self::Dynamic => "dynamic",
        }
    }
}

impl core::str::FromStr for MatchingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "time_only" | "time-only" => Ok(Self::TimeOnly),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(invalid(format!("unknown matching mode {other:?}"))),
        }
    }
}

/// Pads, builds the cost matrix and solves, per `mode`.
pub fn assign(
    mode: MatchingMode,
    padded: &PaddedGroundTruthSet,
    preds: &[Prediction],
    lambda_time: f64,
) -> Result<Assignment> {
    match mode {
        MatchingMode::Dynamic => hungarian_solve(&build_cost_matrix(padded, preds, lambda_time)?),
        MatchingMode::TimeOnly => hungarian_solve(&build_weighted(padded, preds, lambda_time, false)?),
        MatchingMode::Static => {
            let m = build_weighted(padded, preds, lambda_time, false)?;
            let n = m.n;
            let mut taken = vec![false; n];
            let mut permutation = vec![usize::MAX; n];
            for (i, slot) in padded.slots().iter().enumerate() {
                if slot.is_none() {
                    continue;
                }
                let mut best: Option<usize> = None;
                for j in (0..n).filter(|&j| !taken[j]) {
                    if best.map_or(true, |b| m.time_costs[i * n + j] < m.time_costs[i * n + b]) {
                        best = Some(j);
                    }
                }
                let j = best.expect("at least as many predictions as labels");
                taken[j] = true;
                permutation[i] = j;
            }
            let mut free = (0..n).filter(|&j| !taken[j]);
            for p in permutation.iter_mut().filter(|p| **p == usize::MAX) {
                *p = free.next().expect("bijection");
            }
            Ok(Assignment::from_permutation(&m, permutation))
        }
    }
}

/// Dynamic assignment of `labels` to `preds` for a clip of `frames` frames.
pub fn assign_labels(
    labels: &[GroundTruthLabel],
    preds: &[Prediction],
    lambda_time: f64,
    frames: usize,
) -> Result<Assignment> {
    let padded = PaddedGroundTruthSet::new(labels, preds.len(), frames)?;
    assign(MatchingMode::Dynamic, &padded, preds, lambda_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(scores: &[f64], time: f64) -> Prediction {
        Prediction { scores: scores.to_vec(), time }
    }

    #[test]
    fn class_cost_examples() {
        let v = class_cost(&[1.0, 0.0, 0.0], &[0.8, 0.1, 0.3]).unwrap();
        assert!((v - -0.8).abs() < 1e-12);
        assert_eq!(class_cost(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(class_cost(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(class_cost(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn time_cost_examples() {
        assert_eq!(time_cost(0.4, 0.4).unwrap(), 0.0);
        assert!((time_cost(0.37, 0.45).unwrap() - 0.08).abs() < 1e-15);
        assert_eq!(time_cost(0.0, 1.0).unwrap(), 1.0);
        assert!(time_cost(-0.1, 0.5).is_err());
    }

    #[test]
    fn two_prediction_case() {
        let gt = GroundTruthLabel::new(vec![1.0], 50, 100).unwrap();
        let padded = PaddedGroundTruthSet::new(&[gt], 2, 100).unwrap();
        let preds = [pred(&[0.3], 0.5), pred(&[0.9], 0.51)];
        let m = build_cost_matrix(&padded, &preds, 10.0).unwrap();
        assert!((m.get(0, 0) - -0.3).abs() < 1e-12);
        assert!((m.get(0, 1) - -0.8).abs() < 1e-12);
        assert_eq!((m.get(1, 0), m.get(1, 1)), (0.0, 0.0));
        let a = hungarian_solve(&m).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        assert_eq!(a.pairs.len(), 1);
        assert_eq!(a.pairs[0].frame_offset, 1);
    }

    #[test]
    fn negative_identity() {
        let mut values = vec![0.0; 9];
        for i in 0..3 {
            values[i * 4] = -1.0;
        }
        let a = hungarian_solve(&CostMatrix::from_values(3, values).unwrap()).unwrap();
        assert_eq!(a.permutation, vec![0, 1, 2]);
        assert_eq!(a.total_cost, -3.0);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let a = hungarian_solve(&CostMatrix::from_values(4, vec![1.0; 16]).unwrap()).unwrap();
        assert_eq!(a.permutation, vec![0, 1, 2, 3]);
        // Optimal permutations: [1, 0, 2] and [2, 0, 1].
        let values = vec![5.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 0.0, 0.0];
        let a = hungarian_solve(&CostMatrix::from_values(3, values).unwrap()).unwrap();
        assert_eq!(a.permutation, vec![1, 0, 2]);
    }

    #[test]
    fn empty_ground_truth_maps_everything_to_phi() {
        let preds = [pred(&[0.2], 0.1), pred(&[0.7], 0.9)];
        let a = assign_labels(&[], &preds, 10.0, 64).unwrap();
        assert_eq!(a.total_cost, 0.0);
        assert!(a.pairs.is_empty());
    }

    #[test]
    fn too_many_labels() {
        let gt = GroundTruthLabel::new(vec![1.0], 3, 10).unwrap();
        let err = PaddedGroundTruthSet::new(&[gt.clone(), gt], 1, 10).unwrap_err();
        assert_eq!(err, Error::TooManyLabels { labels: 2, queries: 1 });
    }

    #[test]
    fn non_finite_matrix_rejected() {
        assert!(CostMatrix::from_values(2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn static_mode_takes_nearest_time() {
        let gts = [
            GroundTruthLabel::new(vec![1.0], 10, 100).unwrap(),
            GroundTruthLabel::new(vec![1.0], 50, 100).unwrap(),
        ];
        let padded = PaddedGroundTruthSet::new(&gts, 3, 100).unwrap();
        let preds = [pred(&[0.99], 0.3), pred(&[0.01], 0.49), pred(&[0.5], 0.11)];
        let a = assign(MatchingMode::Static, &padded, &preds, 10.0).unwrap();
        assert_eq!(a.permutation, vec![2, 1, 0]);
    }
}
