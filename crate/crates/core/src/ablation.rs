//! Ablation suites: model variants trained and scored under one budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cfse::{GridMode, SourceFeatures};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::model::{count_parameters, ModelConfig};
use crate::regressor::RegressionMode;
use crate::train::{run_training, TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    RegressionModes,
    Components,
    CfseSources,
    Hierarchy,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::RegressionModes, Suite::Components, Suite::CfseSources, Suite::Hierarchy];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::RegressionModes => "regression_modes",
            Suite::Components => "components",
            Suite::CfseSources => "cfse_sources",
            Suite::Hierarchy => "hierarchy",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown ablation suite {s:?}")))
    }
}

/// One row of a suite before training.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: &'static str,
    pub model: ModelConfig,
}

fn with(base: &ModelConfig, f: impl FnOnce(&mut ModelConfig)) -> ModelConfig {
    let mut m = base.clone();
    f(&mut m);
    m
}

fn deep_plain(m: &mut ModelConfig) {
    m.network.num_hierarchies = 5;
    m.network.compensation = false;
}

/// The variants of `suite` derived from `base`, which plays the full model.
pub fn variants(suite: Suite, base: &ModelConfig) -> Vec<Variant> {
    let v = |label, model| Variant { label, model };
    match suite {
        Suite::RegressionModes => [
            ("Linear", RegressionMode::Linear),
            ("Quadratic", RegressionMode::Quadratic),
            ("Linear combination of quadratic", RegressionMode::LinearCombination),
            ("Unidirectional", RegressionMode::UnidirectionalFwd),
            ("Second-order unidirectional", RegressionMode::SecondOrderUnidirectional),
            ("Joint bidirectional", RegressionMode::JointBidirectional),
        ]
        .into_iter()
        .map(|(label, mode)| v(label, base.clone().with_mode(mode)))
        .collect(),
        Suite::Components => vec![
            v(
                "Baseline",
                with(base, |m| {
                    deep_plain(m);
                    m.regression.mode = RegressionMode::Linear;
                    m.cfse.enabled = false;
                }),
            ),
            v(
                "Baseline w/ RDFL",
                with(base, |m| {
                    m.regression.mode = RegressionMode::Linear;
                    m.cfse.enabled = false;
                }),
            ),
            v(
                "Baseline w/ JNMR",
                with(base, |m| {
                    deep_plain(m);
                    m.regression.mode = RegressionMode::JointBidirectional;
                    m.cfse.enabled = false;
                }),
            ),
            v(
                "Baseline w/ CFSE",
                with(base, |m| {
                    deep_plain(m);
                    m.regression.mode = RegressionMode::Linear;
                    m.cfse.enabled = true;
                }),
            ),
            v("JNMR (Full)", base.clone()),
        ],
        Suite::CfseSources => vec![
            v("Model III", with(base, |m| m.cfse.enabled = false)),
            v(
                "Model IV",
                with(base, |m| {
                    m.cfse.enabled = true;
                    m.cfse.source_features = SourceFeatures::F1f2;
                    m.cfse.gridnet = GridMode::On;
                }),
            ),
            v(
                "Model V",
                with(base, |m| {
                    m.cfse.enabled = true;
                    m.cfse.source_features = SourceFeatures::F2f3;
                    m.cfse.gridnet = GridMode::Off;
                }),
            ),
            v(
                "JNMR",
                with(base, |m| {
                    m.cfse.enabled = true;
                    m.cfse.source_features = SourceFeatures::F2f3;
                    m.cfse.gridnet = GridMode::On;
                }),
            ),
        ],
        Suite::Hierarchy => vec![
            v("Model I", with(base, deep_plain)),
            v(
                "Model II",
                with(base, |m| {
                    m.network.num_hierarchies = 3;
                    m.network.compensation = false;
                }),
            ),
            v(
                "JNMR",
                with(base, |m| {
                    m.network.num_hierarchies = 3;
                    m.network.compensation = true;
                }),
            ),
        ],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub psnr: f64,
    pub ssim: f64,
    pub parameters: usize,
    /// Differences to the first row.
    pub delta_psnr: f64,
    pub delta_ssim: f64,
    pub delta_parameters: i64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: Suite,
    pub seed: u64,
    pub epochs: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {} (seed {}, {} epochs)", self.suite, self.seed, self.epochs)?;
        writeln!(
            f,
            "{:<34} {:>9} {:>8} {:>11} {:>9} {:>9} {:>11}",
            "variant", "PSNR", "SSIM", "params", "dPSNR", "dSSIM", "dparams"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<34} {:>9.3} {:>8.4} {:>11} {:>+9.3} {:>+9.4} {:>+11}",
                r.label, r.psnr, r.ssim, r.parameters, r.delta_psnr, r.delta_ssim, r.delta_parameters
            )?;
        }
        Ok(())
    }
}

/// Trains every variant of `suite` with the budget and seed of `base` and
/// scores it on `test`. `progress` sees each row as it completes.
pub fn run_ablation(
    suite: Suite,
    base: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    mut progress: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for variant in variants(suite, &base.model) {
        let cfg = TrainConfig {
            model: variant.model.clone(),
            ..base.clone()
        };
        let mut trainer = Trainer::new(cfg)?;
        let record = run_training(&mut trainer, train, Some(test), None)?;
        let metric = record.final_metric().expect("evaluation requested");
        let parameters = count_parameters(&variant.model)?;
        let first = rows.first();
        let row = AblationRow {
            label: variant.label.to_string(),
            psnr: metric.psnr,
            ssim: metric.ssim,
            parameters,
            delta_psnr: first.map_or(0.0, |f| metric.psnr - f.psnr),
            delta_ssim: first.map_or(0.0, |f| metric.ssim - f.ssim),
            delta_parameters: first.map_or(0, |f| parameters as i64 - f.parameters as i64),
            final_loss: record.epochs.last().map_or(f64::NAN, |e| e.loss),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(AblationTable {
        suite,
        seed: base.seed,
        epochs: base.epochs,
        rows,
    })
}
