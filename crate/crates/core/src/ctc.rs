//! Connectionist temporal classification.
//!
//! The blank symbol is always class 0. Labels are drawn from `1..=V`.
//! Log-domain recursions use [`LOG_ZERO`] as the representation of
//! `log 0`; any score at or below it is treated as an impossible event.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BLANK: u32 = 0;

/// Sentinel for `log 0` in every log-space recursion.
pub const LOG_ZERO: f64 = -1.0e30;

/// Largest alignment space the brute-force oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("label sequence of length {labels} with {repeats} adjacent repeats needs at least {needed} frames, lattice has {frames}")]
    Infeasible {
        frames: usize,
        labels: usize,
        repeats: usize,
        needed: usize,
    },
    #[error("lattice has no frames")]
    EmptyLattice,
    #[error("label {label} outside vocabulary 1..={vocab}")]
    LabelOutOfRange { label: u32, vocab: usize },
    #[error("lattice row {row} is not a distribution (log-sum-exp = {lse})")]
    NotNormalized { row: usize, lse: f64 },
    #[error("lattice shape mismatch: {0}")]
    Shape(String),
    #[error("alignment space {size} exceeds brute-force limit")]
    TooLarge { size: u64 },
    #[error("target has zero probability under the lattice")]
    ZeroProbability,
    #[error("empty reference corpus")]
    EmptyReference,
}

/// `T x (V+1)` per-frame log-probabilities, blank at column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbLattice {
    frames: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogProbLattice {
    /// Builds a lattice and checks that every row is a log-distribution.
    pub fn new(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        let lattice = Self::from_scores(frames, classes, values)?;
        for t in 0..frames {
            let lse = log_sum_exp(lattice.row(t));
            if lse.abs() > 1e-6 {
                return Err(CtcError::NotNormalized { row: t, lse });
            }
        }
        Ok(lattice)
    }

    /// Builds a lattice from arbitrary log-scores without the normalisation
    /// check. The CTC recursions are well defined for any scores.
    pub fn from_scores(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        if classes < 2 {
            return Err(CtcError::Shape(format!("need blank plus >= 1 label, got {classes} classes")));
        }
        if values.len() != frames * classes {
            return Err(CtcError::Shape(format!(
                "{} values for a {frames}x{classes} lattice",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            classes,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of classes including blank (`V + 1`).
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn vocab_size(&self) -> usize {
        self.classes - 1
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.classes + k]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Target token sequence. Never contains the blank.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSequence(Vec<u32>);

impl LabelSequence {
    pub fn new(tokens: Vec<u32>) -> Result<Self, CtcError> {
        if let Some(&label) = tokens.iter().find(|&&t| t == BLANK) {
            return Err(CtcError::LabelOutOfRange { label, vocab: 0 });
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn adjacent_repeats(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Minimum number of frames a CTC alignment of this sequence needs.
    pub fn min_frames(&self) -> usize {
        self.len() + self.adjacent_repeats()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m <= LOG_ZERO {
        return LOG_ZERO;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[inline]
fn lse2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi <= LOG_ZERO {
        LOG_ZERO
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

#[inline]
fn lse3(a: f64, b: f64, c: f64) -> f64 {
    let hi = a.max(b).max(c);
    if hi <= LOG_ZERO {
        LOG_ZERO
    } else {
        hi + ((a - hi).exp() + (b - hi).exp() + (c - hi).exp()).ln()
    }
}

fn check_inputs(lattice: &LogProbLattice, labels: &LabelSequence) -> Result<(), CtcError> {
    if lattice.frames() == 0 {
        return Err(CtcError::EmptyLattice);
    }
    let vocab = lattice.vocab_size();
    if let Some(&label) = labels.tokens().iter().find(|&&l| l == BLANK || l as usize > vocab) {
        return Err(CtcError::LabelOutOfRange { label, vocab });
    }
    let needed = labels.min_frames();
    if lattice.frames() < needed {
        return Err(CtcError::Infeasible {
            frames: lattice.frames(),
            labels: labels.len(),
            repeats: labels.adjacent_repeats(),
            needed,
        });
    }
    Ok(())
}

/// Negative log-likelihood of `labels` and its gradient with respect to
/// every lattice entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcOutput {
    pub loss: f64,
    /// `T x (V+1)`, row-major, same layout as the lattice.
    pub grad: Vec<f64>,
}

struct Forward {
    states: usize,
    ext: Vec<usize>,
    can_skip: Vec<bool>,
    alpha: Vec<f64>,
    log_p: f64,
}

fn forward_pass(lattice: &LogProbLattice, labels: &LabelSequence) -> Result<Forward, CtcError> {
    check_inputs(lattice, labels)?;
    let frames = lattice.frames();
    let states = 2 * labels.len() + 1;
    let ext: Vec<usize> = (0..states)
        .map(|s| if s % 2 == 0 { BLANK as usize } else { labels.tokens()[s / 2] as usize })
        .collect();
    // skip transition s-2 -> s is allowed into a label state that differs
    // from the previous label
    let can_skip: Vec<bool> = (0..states)
        .map(|s| s % 2 == 1 && s >= 2 && ext[s] != ext[s - 2])
        .collect();
    let emit = |t: usize, s: usize| lattice.get(t, ext[s]).max(LOG_ZERO);

    let mut alpha = vec![LOG_ZERO; frames * states];
    alpha[0] = emit(0, 0);
    if states > 1 {
        alpha[1] = emit(0, 1);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        let cur = &mut cur[..states];
        for s in 0..states {
            let stay = prev[s];
            let step = if s >= 1 { prev[s - 1] } else { LOG_ZERO };
            let acc = if can_skip[s] {
                lse3(stay, step, prev[s - 2])
            } else {
                lse2(stay, step)
            };
            cur[s] = if acc <= LOG_ZERO { LOG_ZERO } else { acc + emit(t, s) };
        }
    }

    let last = (frames - 1) * states;
    let log_p = if states > 1 {
        lse2(alpha[last + states - 1], alpha[last + states - 2])
    } else {
        alpha[last]
    };
    if log_p <= LOG_ZERO / 2.0 {
        return Err(CtcError::ZeroProbability);
    }
    Ok(Forward {
        states,
        ext,
        can_skip,
        alpha,
        log_p,
    })
}

/// CTC loss from the forward recursion alone (no gradient).
pub fn ctc_nll(lattice: &LogProbLattice, labels: &LabelSequence) -> Result<f64, CtcError> {
    Ok(-forward_pass(lattice, labels)?.log_p)
}

/// CTC loss by the log-space forward-backward recursion over the
/// blank-interleaved state sequence `(−, y1, −, y2, ..., yU, −)`.
pub fn ctc_loss(lattice: &LogProbLattice, labels: &LabelSequence) -> Result<CtcOutput, CtcError> {
    let Forward {
        states,
        ext,
        can_skip,
        alpha,
        log_p,
    } = forward_pass(lattice, labels)?;
    let frames = lattice.frames();
    let classes = lattice.classes();
    let last = (frames - 1) * states;
    let emit = |t: usize, s: usize| lattice.get(t, ext[s]).max(LOG_ZERO);

    let mut beta = vec![LOG_ZERO; frames * states];
    beta[last + states - 1] = emit(frames - 1, states - 1);
    if states > 1 {
        beta[last + states - 2] = emit(frames - 1, states - 2);
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * states);
        let cur = &mut cur[t * states..];
        let next = &next[..states];
        for s in 0..states {
            let stay = next[s];
            let step = if s + 1 < states { next[s + 1] } else { LOG_ZERO };
            let acc = if s + 2 < states && can_skip[s + 2] {
                lse3(stay, step, next[s + 2])
            } else {
                lse2(stay, step)
            };
            cur[s] = if acc <= LOG_ZERO { LOG_ZERO } else { acc + emit(t, s) };
        }
    }

    let mut grad = vec![0.0; frames * classes];
    for t in 0..frames {
        for s in 0..states {
            let a = alpha[t * states + s];
            let b = beta[t * states + s];
            if a <= LOG_ZERO || b <= LOG_ZERO {
                continue;
            }
            let occupancy = (a + b - emit(t, s) - log_p).exp();
            grad[t * classes + ext[s]] -= occupancy;
        }
    }

    Ok(CtcOutput { loss: -log_p, grad })
}

/// Applies the collapse map: merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// CTC loss by explicit enumeration of all `(V+1)^T` alignments.
pub fn ctc_brute_force(lattice: &LogProbLattice, labels: &LabelSequence) -> Result<f64, CtcError> {
    if lattice.frames() == 0 {
        return Err(CtcError::EmptyLattice);
    }
    let frames = lattice.frames();
    let classes = lattice.classes();
    let size = (classes as u64).checked_pow(frames as u32).unwrap_or(u64::MAX);
    if size > BRUTE_FORCE_LIMIT {
        return Err(CtcError::TooLarge { size });
    }
    let mut path = vec![0u32; frames];
    let mut total = 0.0f64;
    let mut compatible = 0usize;
    for _ in 0..size {
        if collapse(&path) == labels.tokens() {
            compatible += 1;
            let log_prob: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| lattice.get(t, k as usize))
                .sum();
            total += log_prob.exp();
        }
        // odometer increment, frame 0 fastest
        for digit in path.iter_mut() {
            *digit += 1;
            if (*digit as usize) < classes {
                break;
            }
            *digit = 0;
        }
    }
    if compatible == 0 {
        return Err(CtcError::Infeasible {
            frames,
            labels: labels.len(),
            repeats: labels.adjacent_repeats(),
            needed: labels.min_frames(),
        });
    }
    Ok(-total.ln())
}

/// Best-path decoding: per-frame argmax (ties to the lowest class), then
/// collapse.
pub fn greedy_decode(lattice: &LogProbLattice) -> LabelSequence {
    let path: Vec<u32> = (0..lattice.frames())
        .map(|t| {
            let row = lattice.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    LabelSequence(collapse(&path))
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Total edit distance divided by total reference length.
pub fn token_error_rate(hyps: &[LabelSequence], refs: &[LabelSequence]) -> Result<f64, CtcError> {
    if hyps.len() != refs.len() {
        return Err(CtcError::Shape(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let ref_len: usize = refs.iter().map(LabelSequence::len).sum();
    if ref_len == 0 {
        return Err(CtcError::EmptyReference);
    }
    let errors: usize = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| edit_distance(h.tokens(), r.tokens()))
        .sum();
    Ok(errors as f64 / ref_len as f64)
}
