use serde::Serialize;

use super::{run_method, Method, NoopObserver, Settings, TrainError};
use crate::data::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub method: Method,
    pub name: String,
    pub test_loss: f64,
    pub test_ter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Plain-text table, one row per method, TER in percent.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>9}  {:>8}\n", "method", "test loss", "TER %");
        for r in &self.rows {
            let pad = width - r.name.chars().count();
            out.push_str(&format!(
                "{}{}  {:>9.4}  {:>8.2}\n",
                r.name,
                " ".repeat(pad),
                r.test_loss,
                100.0 * r.test_ter
            ));
        }
        out
    }
}

/// Trains every method in `methods` from the same initialisation and data.
pub fn run_ablation(
    corpus: &Corpus,
    settings: &Settings,
    methods: &[Method],
) -> Result<AblationTable, TrainError> {
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        log::info!("ablation: {}", method.label());
        let outcome = run_method(corpus, settings, method, &mut NoopObserver)?;
        rows.push(AblationRow {
            method,
            name: method.label().to_string(),
            test_loss: outcome.report.test_loss,
            test_ter: outcome.report.test_ter,
        });
    }
    Ok(AblationTable { rows })
}
