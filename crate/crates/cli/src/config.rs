//! Run configuration: a TOML file with one table per component.
//!
//! ```toml
//! [run]
//! name = "cba"
//! out_dir = "runs"
//! seed = 7          # optional; overrides every component seed
//!
//! [corpus]
//! [encoder]
//! [train]
//! [policy]
//! [augment]
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cba::augment::AugmentConfig;
use cba::data::CorpusConfig;
use cba::model::EncoderConfig;
use cba::policy::{Normalization, PolicyConfig};
use cba::trainer::{Settings, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "cba".into(),
            out_dir: PathBuf::from("runs"),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub corpus: CorpusConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub augment: AugmentConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs_stage1: Option<usize>,
    pub epochs_stage2: Option<usize>,
    pub lambda: Option<f64>,
    pub policy: Option<Normalization>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Applies overrides, then folds `run.seed` into every component seed.
    /// The result carries no `run.seed`, so echoing it reproduces the run.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.run.seed = Some(seed);
        }
        if let Some(seed) = self.run.seed.take() {
            self.corpus.seed = seed;
            self.encoder.init_seed = seed;
            self.train.seed = seed;
        }
        if let Some(e) = o.epochs_stage1 {
            self.train.epochs_stage1 = e;
        }
        if let Some(e) = o.epochs_stage2 {
            self.train.epochs_stage2 = e;
        }
        if let Some(l) = o.lambda {
            self.train.lambda = l;
        }
        if let Some(p) = o.policy {
            self.policy.mode = p;
        }
        self.corpus.validate()?;
        self.settings().validate()?;
        Ok(self)
    }

    pub fn settings(&self) -> Settings {
        Settings {
            encoder: self.encoder.clone(),
            train: self.train.clone(),
            policy: self.policy.clone(),
            augment: self.augment.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
