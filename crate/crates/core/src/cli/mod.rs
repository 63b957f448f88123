//! Command-line front end: run configuration, on-disk formats, reports,
//! and the subcommand implementations behind the `protoshot` binary.
//!
//! A single flat TOML document ([`RunConfig`]) drives every subcommand.
//! Unknown keys are rejected, every key has a default, and each command
//! writes the fully resolved configuration next to its artifacts, so any
//! output can be traced back to the exact settings that produced it. One
//! master seed feeds the whole pipeline; per-stage streams are derived
//! from it, so two runs with the same config and seed produce identical
//! bytes regardless of the evaluation worker count (set with the
//! `PROTOSHOT_WORKERS` environment variable, default: all cores).
//!
//! Exit codes: 0 success, 2 command-line usage, then one code per error
//! class (see [`crate::error::Error::exit_code`]).

pub mod commands;
pub mod formats;
pub mod reports;

use crate::augment::AugmentRanges;
use crate::episodes::EpisodeConfig;
use crate::error::{Error, Result};
use crate::harness::{AblationConfig, EvalConfig, SweepConfig, TrainConfig};
use crate::nn::{AdamConfig, BackboneConfig, LrSchedule};
use crate::protonet::{ClassifierConfig, Distance, TtaConfig};
use crate::rng::{self, tag};
use crate::synthdata::{GeneratorConfig, StylizeConfig};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

/// Environment variable selecting the evaluation worker count.
pub const WORKERS_ENV: &str = "PROTOSHOT_WORKERS";

/// Prototype distance choice, spelled for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    SquaredEuclidean,
    Euclidean,
}

impl From<Metric> for Distance {
    fn from(m: Metric) -> Distance {
        match m {
            Metric::SquaredEuclidean => Distance::SquaredEuclidean,
            Metric::Euclidean => Distance::Euclidean,
        }
    }
}

/// The flat run configuration every subcommand reads. Each field has a
/// default, so an empty document is a valid desk-scale run; unknown keys
/// are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Benchmark generation.
    pub pretrain_classes: usize,
    pub validation_classes: usize,
    pub test_classes: usize,
    pub images_per_class: usize,
    pub resolution: usize,
    /// Run the benchmark quality gate after generating.
    pub verify_data: bool,

    // Stylized variants.
    pub alpha: f64,
    pub n_variants: usize,

    /// Probability a training episode draws the stylized variants.
    pub p: f64,

    // Episode shape.
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,

    // Test-time augmentation replica counts.
    pub support_augments: usize,
    pub query_augments: usize,

    // Classifier.
    pub temperature: f64,
    pub metric: Metric,

    // Augmentation ranges (shared by training-free TTA draws).
    pub max_brightness: f64,
    pub max_contrast: f64,
    pub max_saturation: f64,
    pub min_crop_fraction: f64,

    // Backbone.
    pub filters: usize,

    // Optimizer and schedule.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr_halving_steps: u64,

    // Training loop.
    pub steps: u64,
    pub validate_every: u64,
    pub patience: u32,
    pub validation_tasks: usize,

    // Evaluation.
    pub n_tasks: usize,

    // Probability grid for `sweep-p`.
    pub sweep_ps: Vec<f64>,

    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Directory all artifacts are written into.
    pub out_dir: PathBuf,
    /// Checkpoint path; defaults to `<out_dir>/checkpoint.pnck`.
    pub checkpoint: Option<PathBuf>,
    /// Optional dataset file evaluated instead of the regenerated test
    /// split (fixtures, externally produced data).
    pub test_data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GeneratorConfig::default();
        let style = StylizeConfig::default();
        let episode = EpisodeConfig::default();
        let tta = TtaConfig::default();
        let classifier = ClassifierConfig::default();
        let ranges = AugmentRanges::default();
        let backbone = BackboneConfig::default();
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        let eval = EvalConfig::default();
        RunConfig {
            pretrain_classes: gen.pretrain_classes,
            validation_classes: gen.validation_classes,
            test_classes: gen.test_classes,
            images_per_class: gen.images_per_class,
            resolution: gen.resolution,
            verify_data: gen.verify,
            alpha: style.alpha,
            n_variants: style.variants,
            p: 0.3,
            n_way: episode.n_way,
            k_shot: episode.k_shot,
            q_queries: episode.q_queries,
            support_augments: tta.support_augments,
            query_augments: tta.query_augments,
            temperature: classifier.temperature,
            metric: Metric::SquaredEuclidean,
            max_brightness: ranges.max_brightness,
            max_contrast: ranges.max_contrast,
            max_saturation: ranges.max_saturation,
            min_crop_fraction: ranges.min_crop_fraction,
            filters: backbone.filters,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            lr_halving_steps: train.schedule.halving_period,
            steps: train.total_steps,
            validate_every: train.validation_every,
            patience: train.patience,
            validation_tasks: train.validation_tasks,
            n_tasks: eval.n_tasks,
            sweep_ps: SweepConfig::standard_ps(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            test_data: None,
        }
    }
}

/// Seed-stream indices under [`tag::EXPERIMENT`], one per pipeline stage.
mod stage {
    pub const DATA: u64 = 0;
    pub const STYLIZE: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const STYLE_BANK: u64 = 4;
}

impl RunConfig {
    /// Reads a configuration file, rejecting unknown keys.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator_config().validate()?;
        self.episode_config().validate()?;
        self.classifier_config().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// The fully resolved configuration as a TOML document.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("a RunConfig always serializes")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.pnck"))
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            pretrain_classes: self.pretrain_classes,
            validation_classes: self.validation_classes,
            test_classes: self.test_classes,
            images_per_class: self.images_per_class,
            resolution: self.resolution,
            seed: rng::child_seed(self.seed, tag::EXPERIMENT, stage::DATA),
            verify: self.verify_data,
        }
    }

    pub fn stylize_config(&self) -> StylizeConfig {
        StylizeConfig {
            alpha: self.alpha,
            variants: self.n_variants,
            seed: rng::child_seed(self.seed, tag::EXPERIMENT, stage::STYLIZE),
        }
    }

    pub fn style_bank_seed(&self) -> u64 {
        rng::child_seed(self.seed, tag::EXPERIMENT, stage::STYLE_BANK)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_queries: self.q_queries,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            temperature: self.temperature,
            distance: self.metric.into(),
        }
    }

    pub fn tta_config(&self) -> TtaConfig {
        TtaConfig {
            support_augments: self.support_augments,
            query_augments: self.query_augments,
        }
    }

    pub fn augment_ranges(&self) -> AugmentRanges {
        AugmentRanges {
            max_brightness: self.max_brightness,
            max_contrast: self.max_contrast,
            max_saturation: self.max_saturation,
            min_crop_fraction: self.min_crop_fraction,
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            filters: self.filters,
            in_channels: 3,
            resolution: self.resolution,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            total_steps: self.steps,
            validation_every: self.validate_every,
            patience: self.patience,
            validation_tasks: self.validation_tasks,
            seed: rng::child_seed(self.seed, tag::EXPERIMENT, stage::TRAIN),
            episode: self.episode_config(),
            mixture_p: self.p,
            backbone: self.backbone_config(),
            optimizer: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            schedule: LrSchedule {
                initial_lr: self.lr,
                halving_period: self.lr_halving_steps,
            },
            classifier: self.classifier_config(),
        }
    }

    pub fn eval_config(&self, tta: TtaConfig) -> EvalConfig {
        EvalConfig {
            n_tasks: self.n_tasks,
            episode: self.episode_config(),
            tta,
            classifier: self.classifier_config(),
            augment: self.augment_ranges(),
            seed: rng::child_seed(self.seed, tag::EXPERIMENT, stage::EVAL),
        }
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            train: self.train_config(),
            eval: self.eval_config(self.tta_config()),
            cells: AblationConfig::standard_cells(),
        }
    }

    pub fn sweep_config(&self, ps: Vec<f64>) -> SweepConfig {
        SweepConfig {
            train: self.train_config(),
            eval: self.eval_config(TtaConfig::none()),
            ps,
        }
    }
}

/// Parses `argv`, runs the selected subcommand, and returns the process
/// exit code, printing a one-line summary on success or a diagnostic to
/// the error stream on failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::Parser;
    let cli = match commands::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match commands::execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Applies the worker-count environment variable to the global evaluation
/// pool. Per-task seeding makes results identical for any worker count;
/// the variable only controls parallelism.
fn configure_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let workers: usize = value
        .parse()
        .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {value:?}")))?;
    if workers == 0 {
        return Err(Error::Config(format!(
            "{WORKERS_ENV} must be a positive integer, got 0"
        )));
    }
    // A second initialization (tests driving `run` in-process) keeps the
    // existing pool; results do not depend on the pool size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global();
    Ok(())
}
