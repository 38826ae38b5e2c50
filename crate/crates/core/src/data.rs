//! Synthetic spectrogram corpus.
//!
//! Token `k` is rendered as a unit-height Gaussian bump over frequency
//! bins centred at `round((k − 0.5)·F/V)` with width `F/(2V)`, repeated for
//! its frame count, plus i.i.d. Gaussian noise. Frame counts act as a
//! speaking-rate axis and the noise level as a difficulty axis.
//!
//! # `CBAD1` layout
//!
//! ```text
//! "CBAD1", u8 version (1)
//! config echo:
//!   u32 vocab_size, u32 feat_bins,
//!   u32 tokens_min, u32 tokens_max, u32 frames_min, u32 frames_max,
//!   f64 noise_min, f64 noise_max,
//!   u32 train, u32 cv, u32 test, u64 seed, u8 adjacent_repeats
//! for split in train, cv, test:
//!   u32 utterance count
//!   per utterance:
//!     u32 T, u32 F, f32 × T·F (row-major),
//!     u32 label count, u32 × label count,
//!     f64 noise_sigma, u32 × label count (frames per token)
//! ```
//!
//! All values little-endian.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{Reader, Truncated, Writer};
use crate::ctc::LabelSequence;
use crate::seed::{self, Rng};
use crate::FeatureMatrix;

const MAGIC: &[u8; 5] = b"CBAD1";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("not a CBAD1 corpus file (bad magic)")]
    BadMagic,
    #[error("unsupported corpus version {0}")]
    UnsupportedVersion(u8),
    #[error("corpus file truncated at byte {offset} (needed {wanted} more)")]
    Truncated { offset: usize, wanted: usize },
    #[error("malformed corpus: {0}")]
    Malformed(String),
    #[error("sample {index} is not CTC-feasible")]
    Infeasible { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Truncated> for DataError {
    fn from(t: Truncated) -> Self {
        DataError::Truncated {
            offset: t.offset,
            wanted: t.wanted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub cv: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub feat_bins: usize,
    /// Inclusive `[min, max]` tokens per utterance.
    pub tokens_per_utt: [usize; 2],
    /// Inclusive `[min, max]` frames per token.
    pub frames_per_token: [usize; 2],
    /// `[min, max]` noise standard deviation, drawn uniformly.
    pub noise_sigma: [f64; 2],
    pub counts: SplitCounts,
    pub seed: u64,
    /// Allow the same token twice in a row.
    pub adjacent_repeats: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            feat_bins: 16,
            tokens_per_utt: [2, 10],
            frames_per_token: [3, 8],
            noise_sigma: [0.05, 0.6],
            counts: SplitCounts {
                train: 500,
                cv: 100,
                test: 100,
            },
            seed: 1,
            adjacent_repeats: false,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Config(m));
        if self.vocab_size == 0 || self.vocab_size > self.feat_bins {
            return err(format!(
                "need 1 <= vocab_size <= feat_bins, got V={} F={}",
                self.vocab_size, self.feat_bins
            ));
        }
        let [tmin, tmax] = self.tokens_per_utt;
        if tmin == 0 || tmin > tmax {
            return err(format!("tokens_per_utt must be an ordered range >= 1, got {tmin}..{tmax}"));
        }
        let [fmin, fmax] = self.frames_per_token;
        if fmin == 0 || fmin > fmax {
            return err(format!("frames_per_token must be an ordered range >= 1, got {fmin}..{fmax}"));
        }
        if self.adjacent_repeats && self.vocab_size > 1 && fmin < 2 && tmax > 1 {
            return err("repeated tokens need frames_per_token min >= 2".into());
        }
        if !self.adjacent_repeats && self.vocab_size == 1 && tmax > 1 {
            return err("a single-token vocabulary cannot avoid adjacent repeats".into());
        }
        let [nlo, nhi] = self.noise_sigma;
        if !(nlo >= 0.0 && nlo <= nhi && nhi.is_finite()) {
            return err(format!("noise_sigma must be an ordered non-negative range, got {nlo}..{nhi}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub noise_sigma: f64,
    pub frame_counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureMatrix,
    pub labels: LabelSequence,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<Sample>,
    pub cv: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Renders the features of one utterance.
pub fn render_utterance(
    tokens: &[u32],
    frame_counts: &[u32],
    noise_sigma: f64,
    cfg: &CorpusConfig,
    rng: &mut Rng,
) -> Result<FeatureMatrix, DataError> {
    if tokens.len() != frame_counts.len() {
        return Err(DataError::Config(format!(
            "{} tokens but {} frame counts",
            tokens.len(),
            frame_counts.len()
        )));
    }
    if let Some(&k) = tokens.iter().find(|&&k| k == 0 || k as usize > cfg.vocab_size) {
        return Err(DataError::Config(format!("token {k} outside 1..={}", cfg.vocab_size)));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(DataError::Config(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let bins = cfg.feat_bins;
    let ratio = bins as f64 / cfg.vocab_size as f64;
    let width = ratio / 2.0;
    let prototype = |k: u32| -> Vec<f64> {
        let centre = ((k as f64 - 0.5) * ratio).round();
        (0..bins)
            .map(|f| {
                let d = f as f64 - centre;
                (-d * d / (2.0 * width * width)).exp()
            })
            .collect()
    };
    let noise = Normal::new(0.0, noise_sigma).expect("sigma validated");
    let frames: usize = frame_counts.iter().map(|&c| c as usize).sum();
    let mut out = FeatureMatrix::zeros(frames, bins);
    let mut t = 0;
    for (&k, &count) in tokens.iter().zip(frame_counts) {
        let proto = prototype(k);
        for _ in 0..count {
            for (cell, &p) in out.row_mut(t).iter_mut().zip(&proto) {
                let n = if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                *cell = (p + n) as f32;
            }
            t += 1;
        }
    }
    Ok(out)
}

fn draw_sample(cfg: &CorpusConfig, rng: &mut Rng) -> Result<Sample, DataError> {
    let n = seed::uniform_range(rng, cfg.tokens_per_utt[0], cfg.tokens_per_utt[1]);
    let v = cfg.vocab_size;
    let mut tokens: Vec<u32> = Vec::with_capacity(n);
    for _ in 0..n {
        let k = match tokens.last() {
            Some(&prev) if !cfg.adjacent_repeats => {
                // uniform over the V − 1 tokens other than prev
                let k = 1 + seed::uniform_inclusive(rng, v - 2) as u32;
                if k >= prev {
                    k + 1
                } else {
                    k
                }
            }
            _ => 1 + seed::uniform_inclusive(rng, v - 1) as u32,
        };
        tokens.push(k);
    }
    let frame_counts: Vec<u32> = (0..n)
        .map(|_| seed::uniform_range(rng, cfg.frames_per_token[0], cfg.frames_per_token[1]) as u32)
        .collect();
    let [lo, hi] = cfg.noise_sigma;
    let noise_sigma = lo + (hi - lo) * seed::unit_f64(rng);
    let features = render_utterance(&tokens, &frame_counts, noise_sigma, cfg, rng)?;
    let labels = LabelSequence::new(tokens).map_err(|e| DataError::Malformed(e.to_string()))?;
    Ok(Sample {
        features,
        labels,
        meta: SampleMeta {
            noise_sigma,
            frame_counts,
        },
    })
}

pub fn is_feasible(sample: &Sample) -> bool {
    sample.features.frames() >= sample.labels.min_frames() && sample.features.frames() >= 1
}

/// Generates train, cv and test splits, in that order, from one stream.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus, DataError> {
    cfg.validate()?;
    let mut rng = seed::stream(cfg.seed, &[0xDA7A]);
    let mut index = 0;
    let mut split = |count: usize, rng: &mut Rng| -> Result<Vec<Sample>, DataError> {
        (0..count)
            .map(|_| {
                let s = draw_sample(cfg, rng)?;
                if !is_feasible(&s) {
                    return Err(DataError::Infeasible { index });
                }
                index += 1;
                Ok(s)
            })
            .collect()
    };
    let train = split(cfg.counts.train, &mut rng)?;
    let cv = split(cfg.counts.cv, &mut rng)?;
    let test = split(cfg.counts.test, &mut rng)?;
    Ok(Corpus {
        config: cfg.clone(),
        train,
        cv,
        test,
    })
}

pub fn encode_corpus(corpus: &Corpus) -> Vec<u8> {
    let cfg = &corpus.config;
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u8(VERSION);
    w.u32(cfg.vocab_size as u32);
    w.u32(cfg.feat_bins as u32);
    for v in cfg.tokens_per_utt.iter().chain(&cfg.frames_per_token) {
        w.u32(*v as u32);
    }
    w.f64(cfg.noise_sigma[0]);
    w.f64(cfg.noise_sigma[1]);
    w.u32(cfg.counts.train as u32);
    w.u32(cfg.counts.cv as u32);
    w.u32(cfg.counts.test as u32);
    w.u64(cfg.seed);
    w.u8(cfg.adjacent_repeats as u8);
    for split in [&corpus.train, &corpus.cv, &corpus.test] {
        w.u32(split.len() as u32);
        for s in split {
            w.u32(s.features.frames() as u32);
            w.u32(s.features.bins() as u32);
            for &v in s.features.as_slice() {
                w.f32(v);
            }
            w.u32(s.labels.len() as u32);
            for &l in s.labels.tokens() {
                w.u32(l);
            }
            w.f64(s.meta.noise_sigma);
            for &c in &s.meta.frame_counts {
                w.u32(c);
            }
        }
    }
    w.into_inner()
}

fn read_count(r: &mut Reader<'_>, elem: usize) -> Result<usize, DataError> {
    let n = r.u32()? as usize;
    // refuse counts the remaining bytes cannot possibly hold
    if n.saturating_mul(elem) > r.remaining() {
        return Err(DataError::Truncated {
            offset: r.remaining(),
            wanted: n.saturating_mul(elem),
        });
    }
    Ok(n)
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus, DataError> {
    let mut r = Reader::new(bytes);
    if r.take(MAGIC.len())? != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let vocab_size = r.u32()? as usize;
    let feat_bins = r.u32()? as usize;
    let tokens_per_utt = [r.u32()? as usize, r.u32()? as usize];
    let frames_per_token = [r.u32()? as usize, r.u32()? as usize];
    let noise_sigma = [r.f64()?, r.f64()?];
    let counts = SplitCounts {
        train: r.u32()? as usize,
        cv: r.u32()? as usize,
        test: r.u32()? as usize,
    };
    let seed = r.u64()?;
    let adjacent_repeats = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(DataError::Malformed(format!("adjacent_repeats flag {b}"))),
    };
    let config = CorpusConfig {
        vocab_size,
        feat_bins,
        tokens_per_utt,
        frames_per_token,
        noise_sigma,
        counts,
        seed,
        adjacent_repeats,
    };

    let mut splits: Vec<Vec<Sample>> = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = read_count(&mut r, 4)?;
        let mut split = Vec::with_capacity(n);
        for _ in 0..n {
            let frames = r.u32()? as usize;
            let bins = r.u32()? as usize;
            let cells = frames.saturating_mul(bins);
            if cells.saturating_mul(4) > r.remaining() {
                return Err(DataError::Truncated {
                    offset: bytes.len() - r.remaining(),
                    wanted: cells * 4,
                });
            }
            let data = (0..cells).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
            let features = FeatureMatrix::from_vec(frames, bins, data).expect("length checked");
            let n_labels = read_count(&mut r, 4)?;
            let tokens = (0..n_labels).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let labels =
                LabelSequence::new(tokens).map_err(|e| DataError::Malformed(e.to_string()))?;
            let noise = r.f64()?;
            let frame_counts = (0..n_labels).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            split.push(Sample {
                features,
                labels,
                meta: SampleMeta {
                    noise_sigma: noise,
                    frame_counts,
                },
            });
        }
        splits.push(split);
    }
    if r.remaining() != 0 {
        return Err(DataError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    let test = splits.pop().unwrap_or_default();
    let cv = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Corpus {
        config,
        train,
        cv,
        test,
    })
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<(), DataError> {
    std::fs::write(path, encode_corpus(corpus))?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    decode_corpus(&std::fs::read(path)?)
}
