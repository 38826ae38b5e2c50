use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cba::data::{self, Corpus};
use cba::model::{self, Checkpoint};
use cba::trainer::{self, Method, NoopObserver};
use serde_json::json;

use crate::config::RunConfig;

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = data::generate_corpus(&cfg.corpus)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    data::write_corpus(out, &corpus).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {}: train {} / cv {} / test {}",
        out.display(),
        corpus.train.len(),
        corpus.cv.len(),
        corpus.test.len()
    );
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    ensure!(path.exists(), "dataset file {} does not exist", path.display());
    data::read_corpus(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn check_compatible(encoder: &model::EncoderConfig, corpus: &Corpus) -> Result<()> {
    let c = &corpus.config;
    if c.feat_bins != encoder.input_dim || c.vocab_size != encoder.vocab_size {
        bail!(
            "dataset/model mismatch: dataset has F={} V={}, model expects F={} V={}",
            c.feat_bins,
            c.vocab_size,
            encoder.input_dim,
            encoder.vocab_size
        );
    }
    Ok(())
}

fn run_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.run.out_dir.join(&cfg.run.name))
}

pub fn train(cfg: &RunConfig, data_path: &Path, method: Method, out: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(data_path)?;
    check_compatible(&cfg.encoder, &corpus)?;
    let dir = run_dir(cfg, out);
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;

    let settings = cfg.settings();
    let outcome = trainer::run_method(&corpus, &settings, method, &mut NoopObserver)
        .with_context(|| format!("training {}", method.label()))?;

    let echo = serde_json::to_value(cfg)?;
    fs::write(dir.join("metrics.jsonl"), trainer::metrics_jsonl(&outcome.reports, &outcome.report, &echo))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    for c in &outcome.checkpoints {
        model::write_checkpoint(ckpt_dir.join(format!("epoch-{:03}.cbac", c.epoch)), &cfg.encoder, c)?;
    }
    let averaged = Checkpoint {
        params: outcome.params.as_flat().to_vec(),
        epoch: outcome.checkpoints.len(),
        cv_loss: outcome.report.averaged_cv_loss,
    };
    model::write_checkpoint(dir.join("model.cbac"), &cfg.encoder, &averaged)?;
    println!(
        "{}: test loss {:.4}, test TER {:.2}% ({} epochs, {} checkpoints averaged) -> {}",
        method.label(),
        outcome.report.test_loss,
        100.0 * outcome.report.test_ter,
        outcome.checkpoints.len(),
        outcome.report.averaged,
        dir.display()
    );
    Ok(())
}

pub fn eval(model_path: &Path, data_path: &Path, out: Option<&Path>) -> Result<()> {
    let (header, ckpt) = model::read_checkpoint(model_path)
        .with_context(|| format!("reading model {}", model_path.display()))?;
    let encoder = header.to_config();
    let corpus = load_corpus(data_path)?;
    check_compatible(&encoder, &corpus)?;
    ensure!(!corpus.test.is_empty(), "test split of {} is empty", data_path.display());
    let params = ckpt.params_for(&encoder)?;
    let e = trainer::evaluate(&params, &corpus.test)?;
    println!("test loss {:.4}, test TER {:.2}% over {} utterances", e.loss, 100.0 * e.ter, corpus.test.len());
    let report = json!({
        "model": model_path.display().to_string(),
        "dataset": data_path.display().to_string(),
        "encoder": header.describe(),
        "utterances": corpus.test.len(),
        "test_loss": e.loss,
        "test_ter": e.ter,
        "corpus": corpus.config,
    });
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| model_path.with_extension("eval.json"));
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn ablate(cfg: &RunConfig, data_path: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(data_path)?;
    check_compatible(&cfg.encoder, &corpus)?;
    let dir = run_dir(cfg, out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let table = trainer::run_ablation(&corpus, &cfg.settings(), &Method::ABLATION)?;
    let text = table.render();
    print!("{text}");
    fs::write(dir.join("ablation.txt"), &text)?;
    let body = json!({ "rows": table.rows, "config": cfg });
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&body)? + "\n")?;
    Ok(())
}
