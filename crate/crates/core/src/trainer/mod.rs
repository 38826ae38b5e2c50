//! Two-stage complexity-boosted adaptive training.
//!
//! Stage 1 trains with fixed SpecAugment and the plain weighted sum of the
//! final-layer and intermediate CTC losses. Stage 2 adds an extra,
//! gradient-free forward pass per batch whose final-layer losses feed the
//! policy: each sample is masked according to its own `f_DA`, and the
//! intermediate term is scaled by the batch factor `f_CTC`.

mod ablation;
mod optim;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use optim::{clip_grad_norm, Adam};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{self, AugmentConfig, AugmentError};
use crate::ctc::{self, CtcError, LabelSequence};
use crate::data::{Corpus, Sample};
use crate::model::{self, Checkpoint, EncoderConfig, ModelError, Parameters, TapLattices};
use crate::policy::{self, BatchComplexity, PolicyConfig, PolicyError};
use crate::seed;

const STREAM_SHUFFLE: u64 = 0x5111;
const STREAM_AUGMENT: u64 = 0xA119;
const STREAM_COMPLEXITY: u64 = 0xC0DE;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("non-finite batch loss {loss} at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("sample {index} failed in the complexity pass: {source}")]
    ComplexityPass { index: usize, source: CtcError },
    #[error("{0}")]
    Domain(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("no intermediate taps configured")]
    NoIntermediateTaps,
}

/// Which checkpoints are eligible for the final average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AverageScope {
    #[default]
    All,
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub grad_clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub average_k: usize,
    pub average_scope: AverageScope,
    /// Run the complexity pass on fixed-augmented rather than clean features.
    pub complexity_on_augmented: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            epochs_stage1: 20,
            epochs_stage2: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_steps: 100,
            grad_clip_norm: 5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            average_k: 10,
            average_scope: AverageScope::All,
            complexity_on_augmented: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.average_k == 0 {
            return Err(TrainError::Config("batch_size and average_k must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Every configuration a training run needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Settings {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub augment: AugmentConfig,
}

impl Settings {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.policy.validate()?;
        self.augment.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

/// What stage 2 adapts. With both flags off stage 2 behaves like stage 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adaptivity {
    pub augment: bool,
    pub regularization: bool,
}

impl Adaptivity {
    pub const FULL: Adaptivity = Adaptivity {
        augment: true,
        regularization: true,
    };

    pub fn any(&self) -> bool {
        self.augment || self.regularization
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub ctc_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inter_ctc_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f_ctc: Option<f64>,
    pub cv_loss: f64,
    pub cv_ter: f64,
}

/// Per-batch record of what the policy decided in stage 2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchTrace {
    pub epoch: usize,
    pub batch: usize,
    pub sample_indices: Vec<usize>,
    pub complexity: BatchComplexity,
    pub time_masks: Vec<usize>,
    pub freq_masks: Vec<usize>,
    pub f_ctc: f64,
}

/// Hooks into a training run. Every method defaults to doing nothing.
pub trait TrainObserver {
    fn on_complexity_batch(&mut self, _trace: &BatchTrace) {}
    fn on_epoch(&mut self, _report: &EpochReport) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Collects batch traces and epoch reports in memory.
#[derive(Debug, Default)]
pub struct RecordingObserver {
    pub traces: Vec<BatchTrace>,
    pub epochs: Vec<EpochReport>,
}

impl TrainObserver for RecordingObserver {
    fn on_complexity_batch(&mut self, trace: &BatchTrace) {
        self.traces.push(trace.clone());
    }

    fn on_epoch(&mut self, report: &EpochReport) {
        self.epochs.push(report.clone());
    }
}

/// `(1 − λ)·L_CTC + f_CTC·λ·L_InterCTC`.
pub fn fused_loss(l_ctc: f64, l_inter: f64, lambda: f64, f_ctc: f64) -> Result<f64, TrainError> {
    if !l_ctc.is_finite() || !l_inter.is_finite() {
        return Err(TrainError::Domain(format!(
            "losses must be finite, got {l_ctc} and {l_inter}"
        )));
    }
    if !(0.0..=1.0).contains(&lambda) || !(0.0..=1.0).contains(&f_ctc) {
        return Err(TrainError::Domain(format!(
            "lambda and f_ctc must lie in [0, 1], got {lambda} and {f_ctc}"
        )));
    }
    Ok((1.0 - lambda) * l_ctc + f_ctc * lambda * l_inter)
}

/// Mean CTC loss over the intermediate (non-final) taps.
pub fn inter_ctc_loss(taps: &TapLattices, labels: &LabelSequence) -> Result<f64, TrainError> {
    let losses = taps
        .intermediate()
        .map(|(_, lat)| ctc::ctc_nll(lat, labels))
        .collect::<Result<Vec<_>, _>>()?;
    if losses.is_empty() {
        return Err(TrainError::NoIntermediateTaps);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Final-layer CTC loss of every sample on its clean features, without
/// gradients. Results are in batch order.
pub fn complexity_pass(params: &Parameters, batch: &[&Sample]) -> Result<Vec<f64>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptySet("complexity batch"));
    }
    batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let taps = model::forward(params, &s.features)?;
            ctc::ctc_nll(taps.final_lattice(), &s.labels)
                .map_err(|source| TrainError::ComplexityPass { index: i, source })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub ter: f64,
}

/// Mean final-layer CTC loss and greedy-decoding token error rate.
pub fn evaluate(params: &Parameters, samples: &[Sample]) -> Result<Evaluation, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let results = samples
        .par_iter()
        .map(|s| -> Result<(f64, LabelSequence), TrainError> {
            let taps = model::forward(params, &s.features)?;
            let lat = taps.final_lattice();
            Ok((ctc::ctc_nll(lat, &s.labels)?, ctc::greedy_decode(lat)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let loss = results.iter().map(|(l, _)| l).sum::<f64>() / samples.len() as f64;
    let hyps: Vec<LabelSequence> = results.into_iter().map(|(_, h)| h).collect();
    let refs: Vec<LabelSequence> = samples.iter().map(|s| s.labels.clone()).collect();
    Ok(Evaluation {
        loss,
        ter: ctc::token_error_rate(&hyps, &refs)?,
    })
}

struct SampleStep {
    loss: f64,
    ctc: f64,
    inter: Option<f64>,
    grad: Vec<f64>,
}

/// Loss and parameter gradient of one augmented sample, with the gradient
/// already divided by the batch size.
fn sample_step(
    params: &Parameters,
    features: &crate::FeatureMatrix,
    labels: &LabelSequence,
    lambda: f64,
    f_ctc: f64,
    batch_len: usize,
) -> Result<SampleStep, TrainError> {
    let cache = model::forward_cached(params, features)?;
    let taps = &cache.lattices;
    let final_out = ctc::ctc_loss(taps.final_lattice(), labels)?;
    // with λ = 0 the intermediate taps take no part in training
    let inter_outs = if lambda > 0.0 {
        taps.intermediate()
            .map(|(_, lat)| ctc::ctc_loss(lat, labels))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let n_inter = inter_outs.len();
    let inter = (n_inter > 0)
        .then(|| inter_outs.iter().map(|o| o.loss).sum::<f64>() / n_inter as f64);
    let loss = fused_loss(final_out.loss, inter.unwrap_or(0.0), lambda, f_ctc)?;

    let b = batch_len as f64;
    let final_w = (1.0 - lambda) / b;
    let inter_w = if n_inter > 0 { f_ctc * lambda / (n_inter as f64 * b) } else { 0.0 };
    let scale = |g: Vec<f64>, w: f64| -> Option<Vec<f64>> {
        (w != 0.0).then(|| g.into_iter().map(|v| v * w).collect())
    };
    let mut inter_grads = inter_outs.into_iter().map(|o| o.grad);
    let mut seeds: Vec<(usize, Option<Vec<f64>>)> = taps
        .intermediate()
        .map(|(l, _)| (*l, inter_grads.next().and_then(|g| scale(g, inter_w))))
        .collect();
    let final_layer = taps.taps.last().expect("final tap").0;
    seeds.push((final_layer, scale(final_out.grad, final_w)));
    let grad = model::backward_cached(params, &cache, &seeds)?;
    Ok(SampleStep {
        loss,
        ctc: final_out.loss,
        inter,
        grad,
    })
}

/// Mutable state of one training run.
pub struct Trainer<'a> {
    settings: &'a Settings,
    params: Parameters,
    optimizer: Adam,
    epoch: usize,
    lambda: f64,
    pub checkpoints: Vec<(Stage, Checkpoint)>,
    pub reports: Vec<EpochReport>,
    /// Number of batches for which the policy was evaluated.
    pub policy_batches: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(settings: &'a Settings, params: Parameters) -> Result<Self, TrainError> {
        settings.validate()?;
        let t = &settings.train;
        let optimizer = Adam::new(
            params.as_flat().len(),
            t.learning_rate,
            t.warmup_steps,
            (t.adam_beta1, t.adam_beta2),
            t.adam_epsilon,
        );
        Ok(Self {
            settings,
            params,
            optimizer,
            epoch: 0,
            lambda: t.lambda,
            checkpoints: Vec::new(),
            reports: Vec::new(),
            policy_batches: 0,
        })
    }

    /// Overrides the intermediate-loss weight (e.g. 0 for CTC-only runs).
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn into_params(self) -> Parameters {
        self.params
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.optimizer.steps()
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn run_stage(
        &mut self,
        stage: Stage,
        adaptivity: Adaptivity,
        epochs: usize,
        corpus: &Corpus,
        observer: &mut dyn TrainObserver,
    ) -> Result<(), TrainError> {
        if epochs == 0 {
            return Ok(());
        }
        if corpus.train.is_empty() {
            return Err(TrainError::EmptySet("training"));
        }
        if corpus.cv.is_empty() {
            return Err(TrainError::EmptySet("cross-validation"));
        }
        if self.lambda > 0.0 && self.settings.encoder.intermediate_taps().is_empty() {
            return Err(TrainError::NoIntermediateTaps);
        }
        let adaptivity = match stage {
            Stage::Stage1 => Adaptivity {
                augment: false,
                regularization: false,
            },
            Stage::Stage2 => adaptivity,
        };
        for _ in 0..epochs {
            self.epoch += 1;
            let report = self.run_epoch(stage, adaptivity, corpus, observer)?;
            log::info!(
                "epoch {:>3} {:?}: train {:.4} ctc {:.4} cv {:.4} ter {:.4}",
                report.epoch,
                report.stage,
                report.train_loss,
                report.ctc_loss,
                report.cv_loss,
                report.cv_ter
            );
            observer.on_epoch(&report);
            self.checkpoints.push((
                stage,
                Checkpoint {
                    params: self.params.as_flat().to_vec(),
                    epoch: report.epoch,
                    cv_loss: report.cv_loss,
                },
            ));
            self.reports.push(report);
        }
        Ok(())
    }

    fn run_epoch(
        &mut self,
        stage: Stage,
        adaptivity: Adaptivity,
        corpus: &Corpus,
        observer: &mut dyn TrainObserver,
    ) -> Result<EpochReport, TrainError> {
        let s = self.settings;
        let epoch = self.epoch;
        let seed = s.train.seed;
        let mut order: Vec<usize> = (0..corpus.train.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut seed::stream(seed, &[STREAM_SHUFFLE, epoch as u64]));
        }

        let n = corpus.train.len() as f64;
        let (mut sum_loss, mut sum_ctc, mut sum_inter) = (0.0, 0.0, 0.0);
        let mut any_inter = false;
        let mut f_ctc_sum = 0.0;
        let mut batches = 0usize;

        for (batch_no, chunk) in order.chunks(s.train.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &corpus.train[i]).collect();
            let aug_rng = |idx: usize| seed::stream(seed, &[STREAM_AUGMENT, epoch as u64, idx as u64]);

            // pass 1: policy
            let (counts, f_ctc) = if stage == Stage::Stage2 && adaptivity.any() {
                let losses = self.complexity_losses(&batch, chunk, epoch)?;
                let complexity = policy::compute_batch_complexity(&losses, &s.policy)?;
                self.policy_batches += 1;
                let counts: Vec<(usize, usize)> = if adaptivity.augment {
                    complexity
                        .da_factors
                        .iter()
                        .map(|&f| s.augment.adaptive_counts(f))
                        .collect::<Result<_, _>>()?
                } else {
                    vec![(s.augment.fixed_time_masks, s.augment.fixed_freq_masks); batch.len()]
                };
                let f_ctc = if adaptivity.regularization { complexity.reg_factor } else { 1.0 };
                observer.on_complexity_batch(&BatchTrace {
                    epoch,
                    batch: batch_no,
                    sample_indices: chunk.to_vec(),
                    time_masks: counts.iter().map(|c| c.0).collect(),
                    freq_masks: counts.iter().map(|c| c.1).collect(),
                    complexity,
                    f_ctc,
                });
                (counts, f_ctc)
            } else {
                (vec![(s.augment.fixed_time_masks, s.augment.fixed_freq_masks); batch.len()], 1.0)
            };

            // pass 2: augmented forward/backward
            let lambda = self.lambda;
            let params = &self.params;
            let steps = batch
                .par_iter()
                .zip(chunk.par_iter())
                .zip(counts.par_iter())
                .map(|((sample, &idx), &(tm, fm))| {
                    let feats = augment::spec_augment(
                        sample.features.clone(),
                        tm,
                        fm,
                        &s.augment,
                        &mut aug_rng(idx),
                    );
                    sample_step(params, &feats, &sample.labels, lambda, f_ctc, batch.len())
                })
                .collect::<Result<Vec<_>, _>>()?;

            let mut grad = vec![0.0; self.params.as_flat().len()];
            let mut batch_loss = 0.0;
            for st in &steps {
                for (g, v) in grad.iter_mut().zip(&st.grad) {
                    *g += v;
                }
                batch_loss += st.loss;
                sum_loss += st.loss;
                sum_ctc += st.ctc;
                if let Some(l) = st.inter {
                    sum_inter += l;
                    any_inter = true;
                }
            }
            batch_loss /= steps.len() as f64;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss,
                });
            }
            clip_grad_norm(&mut grad, s.train.grad_clip_norm);
            self.optimizer.step(self.params.as_flat_mut(), &grad);
            f_ctc_sum += f_ctc;
            batches += 1;
        }

        let cv = evaluate(&self.params, &corpus.cv)?;
        Ok(EpochReport {
            epoch,
            stage,
            train_loss: sum_loss / n,
            ctc_loss: sum_ctc / n,
            inter_ctc_loss: any_inter.then_some(sum_inter / n),
            f_ctc: (stage == Stage::Stage2).then_some(f_ctc_sum / batches as f64),
            cv_loss: cv.loss,
            cv_ter: cv.ter,
        })
    }

    fn complexity_losses(
        &self,
        batch: &[&Sample],
        indices: &[usize],
        epoch: usize,
    ) -> Result<Vec<f64>, TrainError> {
        let s = self.settings;
        let mut losses = if s.train.complexity_on_augmented {
            let augmented: Vec<Sample> = batch
                .iter()
                .zip(indices)
                .map(|(sample, &idx)| {
                    let mut rng = seed::stream(
                        s.train.seed,
                        &[STREAM_COMPLEXITY, epoch as u64, idx as u64],
                    );
                    Sample {
                        features: augment::fixed_spec_augment(sample.features.clone(), &s.augment, &mut rng),
                        ..(*sample).clone()
                    }
                })
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            complexity_pass(&self.params, &refs)?
        } else {
            complexity_pass(&self.params, batch)?
        };
        if s.policy.length_normalized {
            for (l, sample) in losses.iter_mut().zip(batch) {
                *l /= sample.labels.len().max(1) as f64;
            }
        }
        Ok(losses)
    }
}

/// Stage 1: fixed augmentation and `(1 − λ)·L_CTC + λ·L_InterCTC`.
pub fn train_stage1(
    params: Parameters,
    corpus: &Corpus,
    settings: &Settings,
) -> Result<(Parameters, Vec<Checkpoint>, Vec<EpochReport>), TrainError> {
    let mut trainer = Trainer::new(settings, params)?;
    trainer.run_stage(
        Stage::Stage1,
        Adaptivity::FULL,
        settings.train.epochs_stage1,
        corpus,
        &mut NoopObserver,
    )?;
    Ok(split_trainer(trainer))
}

/// Stage 2: policy-driven augmentation and adaptive intermediate weight.
pub fn train_stage2(
    params: Parameters,
    corpus: &Corpus,
    settings: &Settings,
    observer: &mut dyn TrainObserver,
) -> Result<(Parameters, Vec<Checkpoint>, Vec<EpochReport>), TrainError> {
    let mut trainer = Trainer::new(settings, params)?;
    trainer.run_stage(
        Stage::Stage2,
        Adaptivity::FULL,
        settings.train.epochs_stage2,
        corpus,
        observer,
    )?;
    Ok(split_trainer(trainer))
}

fn split_trainer(trainer: Trainer<'_>) -> (Parameters, Vec<Checkpoint>, Vec<EpochReport>) {
    let checkpoints = trainer.checkpoints.iter().map(|(_, c)| c.clone()).collect();
    let reports = trainer.reports.clone();
    (trainer.into_params(), checkpoints, reports)
}

/// Training recipes: the four cumulative ablation rows and the
/// from-scratch / continued-training comparison rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Fixed SpecAugment, final-layer CTC only, no policy.
    Baseline,
    /// Stage 2 switches to policy-driven augmentation; no intermediate loss.
    DaOnly,
    /// As `DaOnly` plus non-adaptive intermediate CTC throughout.
    InterCtc,
    /// Full two-stage recipe: adaptive augmentation and adaptive weight.
    Cba,
    /// Policy-driven augmentation (with intermediate CTC) from the first epoch.
    FsDa,
    /// Same recipe as `FsDa` but only in the continued stage.
    CtDa,
    /// Adaptive augmentation and weight from the first epoch.
    FsDaAr,
    /// Same as `Cba`.
    CtDaAr,
}

/// Epoch split and adaptivity for one recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lambda: f64,
    pub adaptivity: Adaptivity,
}

impl Method {
    pub const ABLATION: [Method; 8] = [
        Method::Baseline,
        Method::DaOnly,
        Method::InterCtc,
        Method::Cba,
        Method::FsDa,
        Method::CtDa,
        Method::FsDaAr,
        Method::CtDaAr,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Baseline => "SpecAug, without policy",
            Method::DaOnly => "+ MinMax-IBF DA",
            Method::InterCtc => "+ Regularization(R)",
            Method::Cba => "+ Adaptive R (AR)",
            Method::FsDa => "FS ∪ MinMax-IBF DA",
            Method::CtDa => "CT ∪ MinMax-IBF DA",
            Method::FsDaAr => "FS ∪ MinMax-IBF DA+AR",
            Method::CtDaAr => "CT ∪ MinMax-IBF DA+AR",
        }
    }

    /// Every recipe trains for `epochs_stage1 + epochs_stage2` epochs in total.
    pub fn plan(&self, cfg: &TrainConfig) -> Plan {
        let (e1, e2) = (cfg.epochs_stage1, cfg.epochs_stage2);
        let da = Adaptivity {
            augment: true,
            regularization: false,
        };
        let (stage1_epochs, stage2_epochs, lambda, adaptivity) = match self {
            Method::Baseline => (e1 + e2, 0, 0.0, Adaptivity { augment: false, regularization: false }),
            Method::DaOnly => (e1, e2, 0.0, da),
            Method::InterCtc | Method::CtDa => (e1, e2, cfg.lambda, da),
            Method::Cba | Method::CtDaAr => (e1, e2, cfg.lambda, Adaptivity::FULL),
            Method::FsDa => (0, e1 + e2, cfg.lambda, da),
            Method::FsDaAr => (0, e1 + e2, cfg.lambda, Adaptivity::FULL),
        };
        Plan {
            stage1_epochs,
            stage2_epochs,
            lambda,
            adaptivity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalReport {
    pub method: Method,
    pub name: String,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub checkpoints: usize,
    pub averaged: usize,
    pub averaged_cv_loss: f64,
    pub test_loss: f64,
    pub test_ter: f64,
    pub policy_batches: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: Parameters,
    pub checkpoints: Vec<Checkpoint>,
    pub reports: Vec<EpochReport>,
    pub report: FinalReport,
}

/// init → stage 1 → stage 2 → top-k checkpoint average → test evaluation.
pub fn run_method(
    corpus: &Corpus,
    settings: &Settings,
    method: Method,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutcome, TrainError> {
    settings.validate()?;
    if corpus.test.is_empty() {
        return Err(TrainError::EmptySet("test"));
    }
    let plan = method.plan(&settings.train);
    let init = model::init_parameters(&settings.encoder)?;
    let mut trainer = Trainer::new(settings, init)?.with_lambda(plan.lambda);
    trainer.run_stage(Stage::Stage1, plan.adaptivity, plan.stage1_epochs, corpus, observer)?;
    trainer.run_stage(Stage::Stage2, plan.adaptivity, plan.stage2_epochs, corpus, observer)?;

    let eligible: Vec<Checkpoint> = trainer
        .checkpoints
        .iter()
        .filter(|(stage, _)| match settings.train.average_scope {
            AverageScope::All => true,
            AverageScope::Stage2 => *stage == Stage::Stage2,
        })
        .map(|(_, c)| c.clone())
        .collect();
    let policy_batches = trainer.policy_batches;
    let reports = trainer.reports.clone();
    let checkpoints: Vec<Checkpoint> = trainer.checkpoints.iter().map(|(_, c)| c.clone()).collect();
    let n_checkpoints = checkpoints.len();
    let last = trainer.into_params();

    let (params, averaged) = if eligible.is_empty() {
        (last, 0)
    } else {
        let k = settings.train.average_k.min(eligible.len());
        let mean = model::average_checkpoints(&eligible, k)?;
        (Parameters::from_flat(&settings.encoder, mean)?, k)
    };
    let cv = evaluate(&params, &corpus.cv).map(|e| e.loss).or_else(|e| match e {
        TrainError::EmptySet(_) => Ok(f64::NAN),
        other => Err(other),
    })?;
    let test = evaluate(&params, &corpus.test)?;
    Ok(RunOutcome {
        params,
        checkpoints,
        reports,
        report: FinalReport {
            method,
            name: method.label().to_string(),
            stage1_epochs: plan.stage1_epochs,
            stage2_epochs: plan.stage2_epochs,
            checkpoints: n_checkpoints,
            averaged,
            averaged_cv_loss: cv,
            test_loss: test.loss,
            test_ter: test.ter,
            policy_batches,
        },
    })
}

/// The full two-stage recipe.
pub fn run_cba(
    corpus: &Corpus,
    settings: &Settings,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutcome, TrainError> {
    run_method(corpus, settings, Method::Cba, observer)
}

/// Metrics file body: one JSON object per epoch, then a final object
/// holding the run summary and the configuration echo.
pub fn metrics_jsonl(
    reports: &[EpochReport],
    report: &FinalReport,
    config_echo: &serde_json::Value,
) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serialises"));
        out.push('\n');
    }
    let final_obj = serde_json::json!({
        "final": report,
        "config": config_echo,
    });
    out.push_str(&final_obj.to_string());
    out.push('\n');
    out
}
