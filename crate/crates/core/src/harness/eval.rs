//! Frozen-embedder evaluation over sampled test tasks.

use crate::augment::{AugmentRanges, UniformAugment};
use crate::episodes::{sample_episode, EpisodeConfig};
use crate::error::{Error, Result};
use crate::nn::Embedder;
use crate::protonet::{classify_episode, ClassifierConfig, TtaConfig};
use crate::rng::{self, tag};
use crate::synthdata::ClassDataset;
use rayon::prelude::*;

/// Settings for one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub n_tasks: usize,
    pub episode: EpisodeConfig,
    pub tta: TtaConfig,
    pub classifier: ClassifierConfig,
    /// Ranges the TTA replicas are drawn from.
    pub augment: AugmentRanges,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_tasks: 2_000,
            episode: EpisodeConfig::default(),
            tta: TtaConfig::none(),
            classifier: ClassifierConfig::default(),
            augment: AugmentRanges::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::Config("evaluation needs at least one task".into()));
        }
        self.episode.validate()?;
        self.classifier.validate()
    }
}

/// The result of an evaluation run: per-task accuracies plus their mean
/// and 95% confidence half-width, with the config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub per_task_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub ci95_halfwidth: f64,
}

impl EvalReport {
    /// Computes mean and CI from the raw accuracies. The half-width is
    /// `1.96 * sample_std / sqrt(n)` with the n−1 (sample) variance; a
    /// single task reports a zero half-width.
    pub fn from_accuracies(config: EvalConfig, per_task_accuracy: Vec<f64>) -> Result<Self> {
        if per_task_accuracy.is_empty() {
            return Err(Error::Contract("a report needs at least one task".into()));
        }
        if let Some(bad) = per_task_accuracy
            .iter()
            .find(|a| !(0.0..=1.0).contains(*a))
        {
            return Err(Error::Contract(format!(
                "task accuracy {bad} lies outside [0, 1]"
            )));
        }
        let n = per_task_accuracy.len() as f64;
        let mean = per_task_accuracy.iter().sum::<f64>() / n;
        let ci95_halfwidth = if per_task_accuracy.len() < 2 {
            0.0
        } else {
            let var = per_task_accuracy
                .iter()
                .map(|a| (a - mean) * (a - mean))
                .sum::<f64>()
                / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        };
        Ok(EvalReport {
            config,
            per_task_accuracy,
            mean_accuracy: mean,
            ci95_halfwidth,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.per_task_accuracy.len()
    }
}

/// Evaluates `embedder` over `config.n_tasks` tasks sampled from `test`.
/// Every task derives its own rng from `(seed, task index)`, so results do
/// not depend on how tasks are scheduled across workers. `train_class_ids`
/// are the classes the embedder was trained on; any overlap with the test
/// split is a contract violation.
pub fn evaluate(
    embedder: &dyn Embedder,
    test: &ClassDataset,
    train_class_ids: &[u32],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    config.episode.check_dataset(test)?;
    let test_ids = test.class_ids();
    if let Some(shared) = train_class_ids.iter().find(|id| test_ids.contains(id)) {
        return Err(Error::Contract(format!(
            "class {shared} appears in both the training and test splits"
        )));
    }

    let sampler = UniformAugment(config.augment);
    let per_task_accuracy: Vec<f64> = (0..config.n_tasks)
        .into_par_iter()
        .map(|t| {
            let mut stream = rng::child_rng(config.seed, tag::EVAL_TASK, t as u64);
            let episode = sample_episode(test, &config.episode, &mut stream)?;
            let result = classify_episode(
                embedder,
                &episode,
                &config.classifier,
                &config.tta,
                &sampler,
                &mut stream,
            )?;
            Ok(result.accuracy)
        })
        .collect::<Result<_>>()?;
    EvalReport::from_accuracies(*config, per_task_accuracy)
}

/// A paired comparison between two reports evaluated on identical tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDiff {
    /// Mean of the per-task accuracy differences (first minus second).
    pub mean: f64,
    /// 95% half-width of the paired differences.
    pub ci95_halfwidth: f64,
}

impl PairedDiff {
    /// Whether the first report is better beyond the paired interval.
    pub fn significantly_positive(&self) -> bool {
        self.mean > self.ci95_halfwidth
    }
}

/// Computes the paired per-task difference `a - b`. Both reports must hold
/// the same number of tasks, sampled from the same seeds, for the pairing
/// to mean anything; the count is checked, the seeds are the caller's
/// responsibility.
pub fn paired_difference(a: &EvalReport, b: &EvalReport) -> Result<PairedDiff> {
    if a.per_task_accuracy.len() != b.per_task_accuracy.len() {
        return Err(Error::Contract(format!(
            "paired comparison needs equal task counts, got {} and {}",
            a.per_task_accuracy.len(),
            b.per_task_accuracy.len()
        )));
    }
    let diffs: Vec<f64> = a
        .per_task_accuracy
        .iter()
        .zip(&b.per_task_accuracy)
        .map(|(x, y)| x - y)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let ci95_halfwidth = if diffs.len() < 2 {
        0.0
    } else {
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        1.96 * var.sqrt() / n.sqrt()
    };
    Ok(PairedDiff {
        mean,
        ci95_halfwidth,
    })
}
