//! Synthetic clips with class-specific feature pulses, plus the label
//! perturbation, dilation and mixup used in training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Clip, Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Deterministic RNG for one `(seed, stream, index)` triple.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ stream) ^ index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub signature_width: usize,
    pub signature_gain: f64,
    pub background_noise_std: f64,
    pub min_event_separation: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::distinct(0)
    }
}

impl SynthConfig {
    /// Narrow, strong pulses: events are visually distinct.
    pub fn distinct(seed: u64) -> Self {
        Self {
            frames: 128,
            num_classes: 4,
            feature_dim: 8,
            min_events: 2,
            max_events: 6,
            signature_width: 3,
            signature_gain: 3.0,
            background_noise_std: 1.0,
            min_event_separation: 8,
            seed,
        }
    }

    /// Wide, weak pulses: the exact event frame is ambiguous.
    pub fn ambiguous(seed: u64) -> Self {
        Self { signature_width: 9, signature_gain: 1.0, ..Self::distinct(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("frames", self.frames),
            ("num_classes", self.num_classes),
            ("feature_dim", self.feature_dim),
            ("signature_width", self.signature_width),
            ("min_event_separation", self.min_event_separation),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if self.frames < 2 {
            return Err(invalid("clips need at least 2 frames"));
        }
        if self.min_events > self.max_events {
            return Err(invalid(format!(
                "event range [{}, {}] is empty",
                self.min_events, self.max_events
            )));
        }
        if !(self.signature_gain >= 0.0) || !(self.background_noise_std >= 0.0) {
            return Err(invalid("gain and noise level must be nonnegative"));
        }
        let span = self.max_events.saturating_sub(1) * self.min_event_separation + 1;
        if self.max_events > 0 && span > self.frames {
            return Err(Error::Placement(format!(
                "{} events {} frames apart need {span} frames, clips have {}",
                self.max_events, self.min_event_separation, self.frames
            )));
        }
        Ok(())
    }

    /// Triangular pulse weight at distance `d` frames from the event.
    pub fn profile(&self, d: usize) -> f64 {
        let half = (self.signature_width as f64 + 1.0) / 2.0;
        (1.0 - d as f64 / half).max(0.0)
    }

    /// One signature vector per class with unit mean-square entries.
    pub fn signatures(&self) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.seed, 0x5147, 0);
        (0..self.num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let rms = math::sqrt(v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64);
                v.into_iter().map(|x| x / rms.max(1e-12)).collect()
            })
            .collect()
    }
}

/// Split identifiers keep train/val/test clips independent under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Self::Train => 1,
            Self::Val => 2,
            Self::Test => 3,
        }
    }
}

fn place_events(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let count = rng.random_range(config.min_events..=config.max_events);
    for _ in 0..1000 {
        let mut frames: Vec<usize> = Vec::with_capacity(count);
        let mut ok = true;
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..100 {
                let f = rng.random_range(1..=config.frames);
                if frames.iter().all(|&g| g.abs_diff(f) >= config.min_event_separation) {
                    frames.push(f);
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if ok {
            frames.sort_unstable();
            return Ok(frames);
        }
    }
    Err(Error::Placement(format!(
        "could not place {count} events {} frames apart in {} frames",
        config.min_event_separation, config.frames
    )))
}

/// `count` clips with exact labels.
pub fn generate(config: &SynthConfig, count: usize, split: Split) -> Result<Dataset> {
    config.validate()?;
    let signatures = config.signatures();
    let noise = Normal::new(0.0, config.background_noise_std)
        .map_err(|e| invalid(format!("background noise: {e}")))?;
    let reach = config.signature_width / 2 + 1;
    let mut clips = Vec::with_capacity(count);
    for index in 0..count {
        let mut rng = stream_rng(config.seed, split.stream(), index as u64);
        let (t, d) = (config.frames, config.feature_dim);
        let mut data: Vec<f64> = (0..t * d).map(|_| noise.sample(&mut rng)).collect();
        let frames = place_events(config, &mut rng)?;
        let mut labels = Vec::with_capacity(frames.len());
        for f in frames {
            let class = rng.random_range(0..config.num_classes);
            let sig = &signatures[class];
            for g in f.saturating_sub(reach).max(1)..=(f + reach).min(t) {
                let w = config.signature_gain * config.profile(g.abs_diff(f));
                for (x, s) in data[(g - 1) * d..g * d].iter_mut().zip(sig) {
                    *x += w * s;
                }
            }
            labels.push(Label::one_hot(f, class, config.num_classes));
        }
        clips.push(Clip::new(Tensor::new(vec![t, d], data)?, labels, config.num_classes)?);
    }
    Dataset::new(config.num_classes, clips)
}

fn gaussian(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| invalid(format!("label noise: {e}")))
}

/// `count` raw offsets `ε ~ N(0, σ²)` from the label-noise source.
pub fn noise_draws(sigma: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    let dist = gaussian(sigma)?;
    let mut rng = stream_rng(seed, 0x4E01, 0);
    Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
}

/// Moves each label to `clamp(round(frame + ε), 1, frames)`.
pub fn perturb_labels(labels: &[Label], frames: usize, sigma: f64, rng: &mut impl Rng) -> Result<Vec<Label>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("noise level must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(labels.to_vec());
    }
    let dist = gaussian(sigma)?;
    Ok(labels
        .iter()
        .map(|l| {
            let moved = math::round_half_up(l.frame as f64 + dist.sample(rng));
            let frame = moved.clamp(1.0, frames as f64) as usize;
            Label::new(frame, l.classes.clone())
        })
        .collect())
}

/// Perturbs every clip's labels, keeping the originals as precise labels.
pub fn perturb_dataset(data: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    let clips = data
        .clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = stream_rng(seed, 0x4E02, i as u64);
            let precise = c.precise.clone().unwrap_or_else(|| c.labels.clone());
            let labels = perturb_labels(&precise, c.frames(), sigma, &mut rng)?;
            Ok(Clip { features: c.features.clone(), labels, precise: Some(precise) })
        })
        .collect::<Result<_>>()?;
    Dataset::new(data.num_classes, clips)
}

fn merge_max(out: &mut Vec<Label>, frame: usize, classes: &[f64]) {
    match out.iter_mut().find(|l| l.frame == frame) {
        Some(l) => l.classes.iter_mut().zip(classes).for_each(|(a, &b)| *a = a.max(b)),
        None => out.push(Label::new(frame, classes.to_vec())),
    }
}

/// Adds copies one frame before and after each label; labels landing on the
/// same frame merge by elementwise maximum.
pub fn dilate_labels(labels: &[Label], frames: usize) -> Vec<Label> {
    let mut out = Vec::with_capacity(labels.len() * 3);
    for l in labels {
        merge_max(&mut out, l.frame, &l.classes);
    }
    for l in labels {
        for f in [l.frame.saturating_sub(1), l.frame + 1] {
            if (1..=frames).contains(&f) {
                merge_max(&mut out, f, &l.classes);
            }
        }
    }
    out.sort_by_key(|l| l.frame);
    out
}

/// Convex combination `λ·A + (1-λ)·B` with the union of scaled labels.
pub fn mixup_with_lambda(a: &Clip, b: &Clip, lambda: f64) -> Result<Clip> {
    if a.features.shape() != b.features.shape() {
        return Err(invalid(format!(
            "mixup of {:?} and {:?} clips",
            a.features.shape(),
            b.features.shape()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("mixing weight {lambda} outside [0, 1]")));
    }
    let data = a
        .features
        .data()
        .iter()
        .zip(b.features.data())
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    let mut labels: Vec<Label> = Vec::new();
    for (set, w) in [(&a.labels, lambda), (&b.labels, 1.0 - lambda)] {
        for l in set.iter() {
            let scaled: Vec<f64> = l.classes.iter().map(|c| c * w).collect();
            match labels.iter_mut().find(|m| m.frame == l.frame) {
                Some(m) => {
                    if m.classes.len() != scaled.len() {
                        return Err(invalid("mixup of clips with different class counts"));
                    }
                    m.classes.iter_mut().zip(&scaled).for_each(|(x, y)| *x = (*x + y).min(1.0));
                }
                None => labels.push(Label::new(l.frame, scaled)),
            }
        }
    }
    labels.retain(|l| l.classes.iter().any(|&c| c > 0.0));
    labels.sort_by_key(|l| l.frame);
    Ok(Clip {
        features: Tensor::new(a.features.shape().to_vec(), data)?,
        labels,
        precise: None,
    })
}

/// Mixup with `λ ~ Beta(α, α)`; returns the clip and the drawn `λ`.
pub fn mixup(a: &Clip, b: &Clip, alpha: f64, rng: &mut impl Rng) -> Result<(Clip, f64)> {
    if !(alpha > 0.0) {
        return Err(invalid(format!("mixup alpha must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| invalid(format!("mixup: {e}")))?;
    let lambda = beta.sample(rng);
    Ok((mixup_with_lambda(a, b, lambda)?, lambda))
}
