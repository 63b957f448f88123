//! Paired experiment runners: the pre-training/TTA ablation table and the
//! mixture-probability sweep.
//!
//! Both runners train one model per distinct mixture probability and share
//! those models through a [`ModelBank`], then evaluate every cell or sweep
//! point with the same evaluation seed so comparisons are paired task for
//! task.

use super::eval::{evaluate, EvalConfig, EvalReport};
use super::train::{train, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::protonet::TtaConfig;
use crate::synthdata::ClassDataset;
use std::collections::BTreeMap;

/// Which pre-training data a cell uses; each maps to a mixture probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainData {
    /// Originals only (p = 0).
    Unstylized,
    /// Stylized variants only (p = 1).
    StylizedOnly,
    /// Bernoulli mixture at the configured interior probability.
    Mixture,
}

/// One ablation cell: a data regime plus the two TTA switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCell {
    pub data: PretrainData,
    pub support_tta: bool,
    pub query_tta: bool,
}

/// Ablation settings. `train.mixture_p` is the interior probability the
/// `Mixture` cells train at; `eval.tta` holds the replica counts the TTA
/// switches enable.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub cells: Vec<AblationCell>,
}

impl AblationConfig {
    /// The five-row ladder: data regimes without TTA, then TTA added to
    /// the mixture model one side at a time.
    pub fn standard_cells() -> Vec<AblationCell> {
        vec![
            AblationCell {
                data: PretrainData::Unstylized,
                support_tta: false,
                query_tta: false,
            },
            AblationCell {
                data: PretrainData::StylizedOnly,
                support_tta: false,
                query_tta: false,
            },
            AblationCell {
                data: PretrainData::Mixture,
                support_tta: false,
                query_tta: false,
            },
            AblationCell {
                data: PretrainData::Mixture,
                support_tta: true,
                query_tta: false,
            },
            AblationCell {
                data: PretrainData::Mixture,
                support_tta: true,
                query_tta: true,
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        if self.cells.is_empty() {
            return Err(Error::Config("the ablation needs at least one cell".into()));
        }
        if self.cells.iter().any(|c| c.data == PretrainData::Mixture)
            && !(self.train.mixture_p > 0.0 && self.train.mixture_p < 1.0)
        {
            return Err(Error::Config(format!(
                "mixture cells need an interior probability, got {}",
                self.train.mixture_p
            )));
        }
        Ok(())
    }
}

/// One evaluated ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub report: EvalReport,
}

/// Trained models keyed by mixture probability, so runners that revisit
/// the same probability reuse the finished training run.
#[derive(Default)]
pub struct ModelBank {
    models: BTreeMap<u64, TrainOutcome>,
}

impl ModelBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Returns the model trained at `mixture_p`, training it on first use.
    pub fn get_or_train(
        &mut self,
        mixture_p: f64,
        config: &TrainConfig,
        pretrain: &ClassDataset,
        validation: &ClassDataset,
    ) -> Result<&TrainOutcome> {
        if !(0.0..=1.0).contains(&mixture_p) {
            return Err(Error::Config(format!(
                "mixture probability must lie in [0, 1], got {mixture_p}"
            )));
        }
        let key = mixture_p.to_bits();
        if !self.models.contains_key(&key) {
            let cfg = TrainConfig {
                mixture_p,
                ..*config
            };
            let outcome = train(&cfg, pretrain, validation)?;
            self.models.insert(key, outcome);
        }
        Ok(&self.models[&key])
    }
}

fn mixture_for(cell: PretrainData, interior_p: f64) -> f64 {
    match cell {
        PretrainData::Unstylized => 0.0,
        PretrainData::StylizedOnly => 1.0,
        PretrainData::Mixture => interior_p,
    }
}

/// Runs every ablation cell: one training per distinct data regime (via
/// `bank`), one evaluation per cell, all on the same evaluation seed.
pub fn run_ablation(
    config: &AblationConfig,
    pretrain: &ClassDataset,
    validation: &ClassDataset,
    test: &ClassDataset,
    bank: &mut ModelBank,
) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let train_ids = pretrain.class_ids();
    let mut rows = Vec::with_capacity(config.cells.len());
    for cell in &config.cells {
        let p = mixture_for(cell.data, config.train.mixture_p);
        let outcome = bank.get_or_train(p, &config.train, pretrain, validation)?;
        let eval_cfg = EvalConfig {
            tta: TtaConfig {
                support_augments: if cell.support_tta {
                    config.eval.tta.support_augments
                } else {
                    0
                },
                query_augments: if cell.query_tta {
                    config.eval.tta.query_augments
                } else {
                    0
                },
            },
            ..config.eval
        };
        let report = evaluate(&outcome.backbone, test, &train_ids, &eval_cfg)?;
        rows.push(AblationRow {
            cell: *cell,
            report,
        });
    }
    Ok(rows)
}

/// Sweep settings: the probabilities to train at, evaluated TTA-free on a
/// shared seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ps: Vec<f64>,
}

impl SweepConfig {
    /// Desk-scale default grid; finer grids are plain config changes.
    pub fn standard_ps() -> Vec<f64> {
        (0..=5).map(|i| i as f64 / 5.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        if self.ps.is_empty() {
            return Err(Error::Config(
                "a sweep needs at least one probability".into(),
            ));
        }
        if let Some(bad) = self.ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!(
                "sweep probability {bad} lies outside [0, 1]"
            )));
        }
        let mut sorted = self.ps.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        if sorted.len() != self.ps.len() {
            return Err(Error::Config("sweep probabilities repeat".into()));
        }
        Ok(())
    }
}

/// One evaluated sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub p: f64,
    pub report: EvalReport,
}

/// Trains (via `bank`) and evaluates one model per probability in
/// `config.ps`, pairing every point on the same evaluation tasks.
pub fn run_p_sweep(
    config: &SweepConfig,
    pretrain: &ClassDataset,
    validation: &ClassDataset,
    test: &ClassDataset,
    bank: &mut ModelBank,
) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    let train_ids = pretrain.class_ids();
    let mut points = Vec::with_capacity(config.ps.len());
    for &p in &config.ps {
        let outcome = bank.get_or_train(p, &config.train, pretrain, validation)?;
        let report = evaluate(&outcome.backbone, test, &train_ids, &config.eval)?;
        points.push(SweepPoint { p, report });
    }
    Ok(points)
}
