//! SpecAugment-style masking with policy-scaled mask counts.
//!
//! Every mask consumes exactly two 64-bit words from the supplied stream: the
//! width `w ~ U{0..=min(max_width, extent)}` and then the start
//! `s ~ U{0..=extent − w}`. A word `r` maps to `U{0..=hi}` as
//! `(r · (hi + 1)) >> 64`. Masks may overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{uniform_inclusive, Rng};
use crate::FeatureMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("augmentation factor must lie in [0, 1], got {0}")]
    FactorOutOfRange(f64),
    #[error("invalid augment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub max_time_masks: usize,
    pub max_freq_masks: usize,
    pub max_time_width: usize,
    pub max_freq_width: usize,
    pub fixed_time_masks: usize,
    pub fixed_freq_masks: usize,
    pub fill_value: f32,
    /// Scale the frequency-mask count with `f_DA` as well as the time-mask count.
    pub adaptive_freq_masks: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_time_masks: 4,
            max_freq_masks: 2,
            max_time_width: 10,
            max_freq_width: 4,
            fixed_time_masks: 2,
            fixed_freq_masks: 2,
            fill_value: 0.0,
            adaptive_freq_masks: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.max_time_width == 0 || self.max_freq_width == 0 {
            return Err(AugmentError::Config("mask widths must be at least 1".into()));
        }
        Ok(())
    }

    /// `(time, freq)` mask counts for a sample with factor `f_da`, rounded
    /// half away from zero.
    pub fn adaptive_counts(&self, f_da: f64) -> Result<(usize, usize), AugmentError> {
        if !(0.0..=1.0).contains(&f_da) {
            return Err(AugmentError::FactorOutOfRange(f_da));
        }
        let time = (self.max_time_masks as f64 * f_da).round() as usize;
        let freq = if self.adaptive_freq_masks {
            (self.max_freq_masks as f64 * f_da).round() as usize
        } else {
            self.fixed_freq_masks
        };
        Ok((time.min(self.max_time_masks), freq))
    }
}

/// Draws `(start, width)` for one mask over an axis of length `extent`.
fn draw_span(extent: usize, max_width: usize, rng: &mut Rng) -> (usize, usize) {
    let width = uniform_inclusive(rng, max_width.min(extent));
    let start = uniform_inclusive(rng, extent - width);
    (start, width)
}

pub fn time_mask(
    mut feat: FeatureMatrix,
    count: usize,
    max_width: usize,
    fill: f32,
    rng: &mut Rng,
) -> FeatureMatrix {
    let frames = feat.frames();
    for _ in 0..count {
        let (start, width) = draw_span(frames, max_width, rng);
        for t in start..start + width {
            feat.row_mut(t).fill(fill);
        }
    }
    feat
}

pub fn freq_mask(
    mut feat: FeatureMatrix,
    count: usize,
    max_width: usize,
    fill: f32,
    rng: &mut Rng,
) -> FeatureMatrix {
    let bins = feat.bins();
    for _ in 0..count {
        let (start, width) = draw_span(bins, max_width, rng);
        for t in 0..feat.frames() {
            feat.row_mut(t)[start..start + width].fill(fill);
        }
    }
    feat
}

/// Time masks then frequency masks, with explicit counts.
pub fn spec_augment(
    feat: FeatureMatrix,
    time_masks: usize,
    freq_masks: usize,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> FeatureMatrix {
    let feat = time_mask(feat, time_masks, cfg.max_time_width, cfg.fill_value, rng);
    freq_mask(feat, freq_masks, cfg.max_freq_width, cfg.fill_value, rng)
}

pub fn adaptive_spec_augment(
    feat: FeatureMatrix,
    f_da: f64,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<FeatureMatrix, AugmentError> {
    let (time, freq) = cfg.adaptive_counts(f_da)?;
    Ok(spec_augment(feat, time, freq, cfg, rng))
}

pub fn fixed_spec_augment(feat: FeatureMatrix, cfg: &AugmentConfig, rng: &mut Rng) -> FeatureMatrix {
    spec_augment(feat, cfg.fixed_time_masks, cfg.fixed_freq_masks, cfg, rng)
}
