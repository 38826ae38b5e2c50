//! Residual temporal encoder with intermediate CTC taps.
//!
//! ```text
//! h⁰_t = tanh(W_in x_t + b_in)
//! hˡ_t = hˡ⁻¹_t + tanh(W_l [hˡ⁻¹_{t−1}; hˡ⁻¹_t; hˡ⁻¹_{t+1}] + b_l)     l = 1..L
//! tap l: log_softmax(W_out hˡ_t + b_out)
//! ```
//!
//! Out-of-range neighbours are zero vectors. The output head is shared by
//! every tap and the final layer is always a tap.
//!
//! Parameters live in one flat vector, laid out as
//! `W_in (H×F), b_in (H), [W_l (H×3H), b_l (H)] × L, W_out ((V+1)×H), b_out (V+1)`,
//! with every matrix row-major.

mod checkpoint;

pub use checkpoint::{
    average_checkpoints, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint,
    Checkpoint, CheckpointHeader,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::LogProbLattice;
use crate::seed;
use crate::FeatureMatrix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("input has {got} feature bins, encoder expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, layout needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("tap gradients do not match the configured taps: {0}")]
    TapMismatch(String),
    #[error("no checkpoints to average")]
    NoCheckpoints,
    #[error("checkpoint file has wrong magic")]
    BadMagic,
    #[error("checkpoint file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint encoder {found} does not match expected {expected}")]
    Mismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// 1-based layer indices whose outputs feed the CTC head; must include
    /// `num_layers`.
    pub tap_layers: Vec<usize>,
    pub vocab_size: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dim: 32,
            num_layers: 6,
            tap_layers: vec![2, 4, 6],
            vocab_size: 8,
            init_seed: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 || self.vocab_size == 0 {
            return Err(ModelError::Config("all dimensions must be at least 1".into()));
        }
        if !self.tap_layers.windows(2).all(|w| w[0] < w[1]) {
            return Err(ModelError::Config(format!(
                "tap layers must be strictly increasing, got {:?}",
                self.tap_layers
            )));
        }
        if self.tap_layers.first().is_some_and(|&l| l == 0)
            || self.tap_layers.last() != Some(&self.num_layers)
        {
            return Err(ModelError::Config(format!(
                "tap layers {:?} must lie in 1..={} and include the final layer",
                self.tap_layers, self.num_layers
            )));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.vocab_size + 1
    }

    /// Taps other than the final layer.
    pub fn intermediate_taps(&self) -> &[usize] {
        &self.tap_layers[..self.tap_layers.len() - 1]
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

/// Offsets of every parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub classes: usize,
    pub w_in: usize,
    pub b_in: usize,
    pub layers: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub len: usize,
}

impl Layout {
    fn new(cfg: &EncoderConfig) -> Self {
        let (f, h, l, c) = (cfg.input_dim, cfg.hidden_dim, cfg.num_layers, cfg.classes());
        let w_in = 0;
        let b_in = w_in + h * f;
        let layers = b_in + h;
        let w_out = layers + l * (h * 3 * h + h);
        let b_out = w_out + c * h;
        let len = b_out + c;
        Self {
            input_dim: f,
            hidden_dim: h,
            num_layers: l,
            classes: c,
            w_in,
            b_in,
            layers,
            w_out,
            b_out,
            len,
        }
    }

    fn layer_stride(&self) -> usize {
        self.hidden_dim * 3 * self.hidden_dim + self.hidden_dim
    }

    /// `(weight, bias)` offsets of 1-based layer `l`.
    pub fn layer(&self, l: usize) -> (usize, usize) {
        let w = self.layers + (l - 1) * self.layer_stride();
        (w, w + 3 * self.hidden_dim * self.hidden_dim)
    }

    /// Ranges of every bias block, used by initialisation and tests.
    pub fn bias_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let h = self.hidden_dim;
        let layers = (1..=self.num_layers).map(|l| {
            let (_, b) = self.layer(l);
            b..b + h
        });
        std::iter::once(self.b_in..self.b_in + h)
            .chain(layers)
            .chain(std::iter::once(self.b_out..self.b_out + self.classes))
            .collect()
    }
}

/// Flat parameter vector tied to an encoder configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: EncoderConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl Parameters {
    pub fn zeros(config: &EncoderConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        Ok(Self {
            config: config.clone(),
            layout,
            values: vec![0.0; layout.len],
        })
    }

    pub fn from_flat(config: &EncoderConfig, values: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        if values.len() != layout.len {
            return Err(ModelError::ParamCount {
                expected: layout.len,
                got: values.len(),
            });
        }
        Ok(Self {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }
}

/// Uniform `[−1/√fan_in, 1/√fan_in)` weights from the seeded stream, zero
/// biases. Weights are drawn block by block in layout order.
pub fn init_parameters(config: &EncoderConfig) -> Result<Parameters, ModelError> {
    let mut params = Parameters::zeros(config)?;
    let lay = params.layout;
    let mut rng = seed::stream(config.init_seed, &[0x1a17]);
    let mut fill = |values: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in values {
            *v = (2.0 * seed::unit_f64(&mut rng) - 1.0) * bound;
        }
    };
    let (f, h, c) = (lay.input_dim, lay.hidden_dim, lay.classes);
    let vals = &mut params.values;
    fill(&mut vals[lay.w_in..lay.w_in + h * f], f);
    for l in 1..=lay.num_layers {
        let (w, _) = lay.layer(l);
        fill(&mut vals[w..w + 3 * h * h], 3 * h);
    }
    fill(&mut vals[lay.w_out..lay.w_out + c * h], h);
    Ok(params)
}

/// Tap lattices from one forward pass, ordered by tap layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TapLattices {
    pub taps: Vec<(usize, LogProbLattice)>,
}

impl TapLattices {
    pub fn final_lattice(&self) -> &LogProbLattice {
        &self.taps.last().expect("final tap always present").1
    }

    /// Lattices of every tap except the final layer.
    pub fn intermediate(&self) -> impl Iterator<Item = &(usize, LogProbLattice)> {
        self.taps[..self.taps.len() - 1].iter()
    }

    pub fn get(&self, layer: usize) -> Option<&LogProbLattice> {
        self.taps.iter().find(|(l, _)| *l == layer).map(|(_, lat)| lat)
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    frames: usize,
    input: Vec<f64>,
    /// `hidden[l]` is `hˡ`, `T×H`, for `l = 0..=L`.
    hidden: Vec<Vec<f64>>,
    /// `mix[l-1]` is `tanh(W_l u + b_l)` of layer `l`.
    mix: Vec<Vec<f64>>,
    pub lattices: TapLattices,
}

impl ForwardCache {
    pub fn frames(&self) -> usize {
        self.frames
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax_into(logits: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    for z in logits.iter_mut() {
        *z -= lse;
    }
}

pub fn forward(params: &Parameters, feat: &FeatureMatrix) -> Result<TapLattices, ModelError> {
    Ok(forward_cached(params, feat)?.lattices)
}

pub fn forward_cached(params: &Parameters, feat: &FeatureMatrix) -> Result<ForwardCache, ModelError> {
    let lay = &params.layout;
    let (f, h, c) = (lay.input_dim, lay.hidden_dim, lay.classes);
    if feat.bins() != f {
        return Err(ModelError::InputDim {
            expected: f,
            got: feat.bins(),
        });
    }
    let p = &params.values;
    let frames = feat.frames();
    let input: Vec<f64> = feat.as_slice().iter().map(|&v| v as f64).collect();

    let w_in = &p[lay.w_in..lay.w_in + h * f];
    let b_in = &p[lay.b_in..lay.b_in + h];
    let mut h0 = vec![0.0; frames * h];
    for t in 0..frames {
        let x = &input[t * f..(t + 1) * f];
        for j in 0..h {
            h0[t * h + j] = (dot(&w_in[j * f..(j + 1) * f], x) + b_in[j]).tanh();
        }
    }

    let mut hidden = Vec::with_capacity(lay.num_layers + 1);
    let mut mix = Vec::with_capacity(lay.num_layers);
    hidden.push(h0);
    for l in 1..=lay.num_layers {
        let (wo, bo) = lay.layer(l);
        let w = &p[wo..wo + 3 * h * h];
        let b = &p[bo..bo + h];
        let prev = &hidden[l - 1];
        let mut act = vec![0.0; frames * h];
        let mut next = prev.clone();
        for t in 0..frames {
            for j in 0..h {
                let row = &w[j * 3 * h..(j + 1) * 3 * h];
                let mut z = b[j];
                if t > 0 {
                    z += dot(&row[..h], &prev[(t - 1) * h..t * h]);
                }
                z += dot(&row[h..2 * h], &prev[t * h..(t + 1) * h]);
                if t + 1 < frames {
                    z += dot(&row[2 * h..], &prev[(t + 1) * h..(t + 2) * h]);
                }
                let a = z.tanh();
                act[t * h + j] = a;
                next[t * h + j] += a;
            }
        }
        mix.push(act);
        hidden.push(next);
    }

    let w_out = &p[lay.w_out..lay.w_out + c * h];
    let b_out = &p[lay.b_out..lay.b_out + c];
    let taps = params
        .config
        .tap_layers
        .iter()
        .map(|&l| {
            let hl = &hidden[l];
            let mut values = vec![0.0; frames * c];
            for t in 0..frames {
                let ht = &hl[t * h..(t + 1) * h];
                let row = &mut values[t * c..(t + 1) * c];
                for (k, out) in row.iter_mut().enumerate() {
                    *out = dot(&w_out[k * h..(k + 1) * h], ht) + b_out[k];
                }
                log_softmax_into(row);
            }
            let lattice = LogProbLattice::from_scores(frames, c, values)
                .expect("head output has lattice shape");
            (l, lattice)
        })
        .collect();

    Ok(ForwardCache {
        frames,
        input,
        hidden,
        mix,
        lattices: TapLattices { taps },
    })
}

/// Gradient of `Σ_tap ⟨grad_tap, lattice_tap⟩` with respect to every
/// parameter. `tap_grads` pairs tap layers with `T×(V+1)` seeds and must
/// list exactly the configured taps in order; a `None` seed is treated as
/// zero.
pub fn backward(
    params: &Parameters,
    feat: &FeatureMatrix,
    tap_grads: &[(usize, Option<Vec<f64>>)],
) -> Result<Vec<f64>, ModelError> {
    let cache = forward_cached(params, feat)?;
    backward_cached(params, &cache, tap_grads)
}

pub fn backward_cached(
    params: &Parameters,
    cache: &ForwardCache,
    tap_grads: &[(usize, Option<Vec<f64>>)],
) -> Result<Vec<f64>, ModelError> {
    let lay = &params.layout;
    let (f, h, c) = (lay.input_dim, lay.hidden_dim, lay.classes);
    let taps = &params.config.tap_layers;
    let frames = cache.frames;
    if tap_grads.len() != taps.len() || tap_grads.iter().zip(taps).any(|((l, _), t)| l != t) {
        return Err(ModelError::TapMismatch(format!(
            "expected taps {:?}, got {:?}",
            taps,
            tap_grads.iter().map(|(l, _)| *l).collect::<Vec<_>>()
        )));
    }
    for (l, g) in tap_grads {
        if let Some(g) = g {
            if g.len() != frames * c {
                return Err(ModelError::TapMismatch(format!(
                    "tap {l} gradient has {} entries, expected {}",
                    g.len(),
                    frames * c
                )));
            }
        }
    }

    let p = &params.values;
    let mut grad = vec![0.0; lay.len];
    let w_out_range = lay.w_out..lay.w_out + c * h;
    let mut dh = vec![0.0; frames * h];
    let mut dlogit = vec![0.0; c];

    for l in (1..=lay.num_layers).rev() {
        if let Some((_, Some(g))) = tap_grads.iter().find(|(tl, _)| *tl == l) {
            let lattice = cache.lattices.get(l).expect("tap present in cache");
            let hl = &cache.hidden[l];
            for t in 0..frames {
                let g_row = &g[t * c..(t + 1) * c];
                let lp_row = lattice.row(t);
                let g_sum: f64 = g_row.iter().sum();
                for k in 0..c {
                    dlogit[k] = g_row[k] - lp_row[k].exp() * g_sum;
                }
                let ht = &hl[t * h..(t + 1) * h];
                let dht = &mut dh[t * h..(t + 1) * h];
                for k in 0..c {
                    let dk = dlogit[k];
                    if dk == 0.0 {
                        continue;
                    }
                    grad[lay.b_out + k] += dk;
                    let wrow = &p[w_out_range.start + k * h..w_out_range.start + (k + 1) * h];
                    let grow = &mut grad[w_out_range.start + k * h..w_out_range.start + (k + 1) * h];
                    for j in 0..h {
                        grow[j] += dk * ht[j];
                        dht[j] += dk * wrow[j];
                    }
                }
            }
        }

        let (wo, bo) = lay.layer(l);
        let act = &cache.mix[l - 1];
        let prev = &cache.hidden[l - 1];
        let mut dprev = dh.clone();
        for t in 0..frames {
            for j in 0..h {
                let a = act[t * h + j];
                let dz = dh[t * h + j] * (1.0 - a * a);
                if dz == 0.0 {
                    continue;
                }
                grad[bo + j] += dz;
                let row = wo + j * 3 * h;
                let (w_row, g_row) = (&p[row..row + 3 * h], row);
                if t > 0 {
                    for i in 0..h {
                        grad[g_row + i] += dz * prev[(t - 1) * h + i];
                        dprev[(t - 1) * h + i] += dz * w_row[i];
                    }
                }
                for i in 0..h {
                    grad[g_row + h + i] += dz * prev[t * h + i];
                    dprev[t * h + i] += dz * w_row[h + i];
                }
                if t + 1 < frames {
                    for i in 0..h {
                        grad[g_row + 2 * h + i] += dz * prev[(t + 1) * h + i];
                        dprev[(t + 1) * h + i] += dz * w_row[2 * h + i];
                    }
                }
            }
        }
        dh = dprev;
    }

    let h0 = &cache.hidden[0];
    for t in 0..frames {
        let x = &cache.input[t * f..(t + 1) * f];
        for j in 0..h {
            let v = h0[t * h + j];
            let d = dh[t * h + j] * (1.0 - v * v);
            if d == 0.0 {
                continue;
            }
            grad[lay.b_in + j] += d;
            let row = lay.w_in + j * f;
            for i in 0..f {
                grad[row + i] += d * x[i];
            }
        }
    }
    Ok(grad)
}
