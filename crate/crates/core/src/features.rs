use serde::{Deserialize, Serialize};

/// A `T x F` utterance feature matrix stored row-major (one row per frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    frames: usize,
    bins: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            data: vec![0.0; frames * bins],
        }
    }

    pub fn filled(frames: usize, bins: usize, value: f32) -> Self {
        Self {
            frames,
            bins,
            data: vec![value; frames * bins],
        }
    }

    /// Builds a matrix from row-major data. Returns `None` when the length
    /// does not match `frames * bins`.
    pub fn from_vec(frames: usize, bins: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == frames * bins).then_some(Self { frames, bins, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn get(&self, t: usize, f: usize) -> f32 {
        self.data[t * self.bins + f]
    }

    pub fn set(&mut self, t: usize, f: usize, value: f32) {
        self.data[t * self.bins + f] = value;
    }
}
