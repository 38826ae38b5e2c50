//! Independent reference implementations shared by the integration and
//! acceptance targets.
#![allow(dead_code)]

use cba::ctc::LogProbLattice;
use cba::data::{generate_corpus, Corpus, CorpusConfig, SplitCounts};
use cba::model::EncoderConfig;
use cba::trainer::Settings;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 48)
}

// ∫_0^x t^(p-1) (1-t)^(q-1) dt for x <= 1/2, after t = u^(1/p) removes the
// endpoint singularity.
fn lower_piece(x: f64, p: f64, q: f64) -> f64 {
    let g = move |u: f64| (1.0 - u.powf(1.0 / p)).powf(q - 1.0) / p;
    integrate(&g, 0.0, x.powf(p), 1e-15)
}

/// Regularized incomplete beta by quadrature, normalised by the same
/// quadrature of the complete integral.
pub fn ibf_quadrature(x: f64, s: f64, a: f64) -> f64 {
    let left_half = lower_piece(0.5, s, a);
    let right_half = lower_piece(0.5, a, s);
    let total = left_half + right_half;
    let partial = if x <= 0.5 {
        lower_piece(x, s, a)
    } else {
        total - lower_piece(1.0 - x, a, s)
    };
    partial / total
}

fn collapse_path(path: &[usize]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &k in path {
        if k != prev && k != 0 {
            out.push(k as u32);
        }
        prev = k;
    }
    out
}

/// `−ln P(y|x)` by summing the probability of every path in linear space.
pub fn brute_force_nll(lat: &LogProbLattice, labels: &[u32]) -> f64 {
    let (t, c) = (lat.frames(), lat.classes());
    let mut path = vec![0usize; t];
    let mut total = 0.0f64;
    loop {
        if collapse_path(&path) == labels {
            total += path.iter().enumerate().map(|(i, &k)| lat.get(i, k)).sum::<f64>().exp();
        }
        let mut i = 0;
        loop {
            if i == t {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Row-normalised random lattice with logits in `[-spread, spread]`.
pub fn random_lattice(r: &mut ChaCha8Rng, frames: usize, classes: usize, spread: f64) -> LogProbLattice {
    let mut v = Vec::with_capacity(frames * classes);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..classes).map(|_| r.random_range(-spread..spread)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        v.extend(logits.iter().map(|l| l - lse));
    }
    LogProbLattice::new(frames, classes, v).unwrap()
}

pub fn random_labels(r: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| r.random_range(1..=vocab as u32)).collect()
}

/// Largest component-wise relative error; components where both values are
/// below `floor` are compared absolutely against `floor`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        input_dim: 3,
        hidden_dim: 4,
        num_layers: 2,
        tap_layers: vec![1, 2],
        vocab_size: 2,
        init_seed: 7,
    }
}

/// A small corpus and settings that train in well under a second per epoch.
pub fn small_setup(train: usize, epochs: (usize, usize)) -> (Corpus, Settings) {
    let corpus = generate_corpus(&CorpusConfig {
        counts: SplitCounts { train, cv: 16, test: 16 },
        ..CorpusConfig::default()
    })
    .unwrap();
    let mut settings = Settings::default();
    settings.encoder.hidden_dim = 16;
    settings.train.epochs_stage1 = epochs.0;
    settings.train.epochs_stage2 = epochs.1;
    (corpus, settings)
}

/// Default settings with every training-side seed set to `seed`.
pub fn seeded(seed: u64) -> Settings {
    let mut s = Settings::default();
    s.train.seed = seed;
    s.encoder.init_seed = seed;
    s
}
