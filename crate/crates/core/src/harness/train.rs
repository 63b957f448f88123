//! Episodic pre-training with validation-based early stopping.

use crate::episodes::{sample_episode, sample_pretrain_episode, EpisodeConfig};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, BackboneConfig, ConvBackbone, LrSchedule};
use crate::protonet::{classify_episode, episodic_loss, ClassifierConfig, TtaConfig};
use crate::rng::{self, tag};
use crate::synthdata::{ClassDataset, Split};
use crate::tensor::Graph;

/// Settings for one pre-training run. The step counts default to desk
/// scale; larger budgets are plain config changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Validation runs after every this many steps.
    pub validation_every: u64,
    /// Non-improving validation rounds tolerated before stopping.
    pub patience: u32,
    /// Episodes scored per validation round (no TTA; validation stays cheap).
    pub validation_tasks: usize,
    pub seed: u64,
    pub episode: EpisodeConfig,
    /// Probability that a training episode draws the stylized variants.
    pub mixture_p: f64,
    pub backbone: BackboneConfig,
    pub optimizer: AdamConfig,
    pub schedule: LrSchedule,
    pub classifier: ClassifierConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 5_000,
            validation_every: 250,
            patience: 8,
            validation_tasks: 40,
            seed: 0,
            episode: EpisodeConfig::default(),
            mixture_p: 0.0,
            backbone: BackboneConfig::default(),
            optimizer: AdamConfig::default(),
            schedule: LrSchedule {
                initial_lr: 1e-4,
                halving_period: 15_000,
            },
            classifier: ClassifierConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("training needs at least one step".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.validation_every == 0 || self.validation_every > self.total_steps {
            return Err(Error::Config(format!(
                "validation_every must lie in [1, total_steps], got {} with {} steps",
                self.validation_every, self.total_steps
            )));
        }
        if self.validation_tasks == 0 {
            return Err(Error::Config(
                "validation needs at least one episode per round".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mixture_p) {
            return Err(Error::Config(format!(
                "mixture probability must lie in [0, 1], got {}",
                self.mixture_p
            )));
        }
        self.episode.validate()?;
        self.classifier.validate()?;
        LrSchedule::new(self.schedule.initial_lr, self.schedule.halving_period)?;
        Ok(())
    }
}

/// One training step's record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogEntry {
    pub step: u64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub lr: f64,
    /// Whether this step's episode came from the stylized variants.
    pub stylized: bool,
}

/// One validation round's record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationPoint {
    pub step: u64,
    pub accuracy: f64,
}

/// A finished training run: the best-validation parameters plus the full
/// log needed to audit the run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub backbone: ConvBackbone,
    pub steps_run: u64,
    pub stopped_early: bool,
    pub log: Vec<TrainLogEntry>,
    pub validations: Vec<ValidationPoint>,
    /// Step and accuracy of the validation round the returned parameters
    /// come from; `None` when no validation round ran.
    pub best_validation: Option<ValidationPoint>,
}

/// Runs episodic pre-training on `pretrain` (whose stylized variants feed
/// the mixture when `mixture_p > 0`), validating on unstylized episodes
/// from `validation`. Returns the parameters from the best validation
/// round, stopping early once `patience` rounds pass without improvement.
pub fn train(
    config: &TrainConfig,
    pretrain: &ClassDataset,
    validation: &ClassDataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    pretrain.validate()?;
    validation.validate()?;
    if validation.split() == Split::Pretrain {
        return Err(Error::Contract(
            "validation episodes must come from a held-out split".into(),
        ));
    }
    config.episode.check_dataset(pretrain)?;
    config.episode.check_dataset(validation)?;

    let mut backbone = ConvBackbone::init(config.backbone, rng::child_seed(config.seed, tag::INIT, 0))?;
    let mut adam = AdamState::new(config.optimizer, backbone.params());
    let schedule = LrSchedule::new(config.schedule.initial_lr, config.schedule.halving_period)?;

    let mut log = Vec::with_capacity(config.total_steps as usize);
    let mut validations = Vec::new();
    let mut best: Option<(ValidationPoint, Vec<crate::nn::Parameter>)> = None;
    let mut stale_rounds = 0u32;
    let mut stopped_early = false;
    let mut steps_run = 0u64;

    for step in 0..config.total_steps {
        let lr = schedule.lr_at(step);
        let mut stream = rng::child_rng(config.seed, tag::TRAIN_STEP, step);
        let episode =
            sample_pretrain_episode(pretrain, &config.episode, config.mixture_p, &mut stream)?;

        let mut graph = Graph::new();
        let objective = episodic_loss(&backbone, &mut graph, &episode, &config.classifier)?;
        let loss = graph.value(objective.loss)[0];
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                lr,
                detail: format!("episode loss became {loss}"),
            });
        }
        graph.backward(objective.loss)?;
        for (param, &pv) in backbone.params_mut().iter_mut().zip(&objective.params) {
            let grad = graph
                .grad(pv)
                .ok_or_else(|| Error::Training {
                    step,
                    lr,
                    detail: format!("parameter {} received no gradient", param.name),
                })?
                .to_vec();
            param.tensor.accumulate_grad(&grad)?;
        }
        adam.step(backbone.params_mut(), lr).map_err(|e| match e {
            Error::Training { detail, .. } => Error::Training { step, lr, detail },
            other => other,
        })?;
        log.push(TrainLogEntry {
            step,
            loss,
            train_accuracy: objective.accuracy,
            lr,
            stylized: episode.stylized,
        });
        steps_run = step + 1;

        if steps_run % config.validation_every == 0 {
            let round = steps_run / config.validation_every - 1;
            let accuracy = validation_accuracy(&backbone, validation, config, round)?;
            let point = ValidationPoint {
                step: steps_run,
                accuracy,
            };
            validations.push(point);
            let improved = best
                .as_ref()
                .is_none_or(|(best_point, _)| accuracy > best_point.accuracy);
            if improved {
                best = Some((point, backbone.params().to_vec()));
                stale_rounds = 0;
            } else {
                stale_rounds += 1;
                if stale_rounds >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_validation, backbone) = match best {
        Some((point, params)) => {
            let tensors: Vec<(String, crate::Tensor)> = params
                .into_iter()
                .map(|p| (p.name, p.tensor))
                .collect();
            (
                Some(point),
                ConvBackbone::from_params(config.backbone.resolution, &tensors)?,
            )
        }
        None => (None, backbone),
    };
    Ok(TrainOutcome {
        backbone,
        steps_run,
        stopped_early,
        log,
        validations,
        best_validation,
    })
}

/// Mean accuracy over `validation_tasks` TTA-free episodes drawn from the
/// validation split with round-specific seeds.
fn validation_accuracy(
    backbone: &ConvBackbone,
    validation: &ClassDataset,
    config: &TrainConfig,
    round: u64,
) -> Result<f64> {
    let round_seed = rng::child_seed(config.seed, tag::VALIDATION, round);
    let mut total = 0.0;
    for t in 0..config.validation_tasks {
        let mut stream = rng::child_rng(round_seed, tag::EVAL_TASK, t as u64);
        let episode = sample_episode(validation, &config.episode, &mut stream)?;
        let result = classify_episode(
            backbone,
            &episode,
            &config.classifier,
            &TtaConfig::none(),
            &crate::augment::IdentityAugment,
            &mut stream,
        )?;
        total += result.accuracy;
    }
    Ok(total / config.validation_tasks as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{
        build_stylized_variants, generate_dataset, Benchmark, GeneratorConfig, StylizeConfig,
        TextureBank,
    };

    fn tiny_benchmark() -> Benchmark {
        generate_dataset(&GeneratorConfig {
            pretrain_classes: 3,
            validation_classes: 2,
            test_classes: 2,
            images_per_class: 10,
            resolution: 16,
            seed: 123,
            verify: false,
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            total_steps: 20,
            validation_every: 10,
            patience: 3,
            validation_tasks: 4,
            seed: 1,
            episode: EpisodeConfig {
                n_way: 2,
                k_shot: 2,
                q_queries: 2,
            },
            mixture_p: 0.0,
            backbone: BackboneConfig {
                filters: 8,
                in_channels: 3,
                resolution: 16,
            },
            schedule: LrSchedule {
                initial_lr: 1e-3,
                halving_period: 1_000,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_invariants_are_enforced() {
        let mut cfg = tiny_config();
        cfg.patience = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny_config();
        cfg.validation_every = 21;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny_config();
        cfg.mixture_p = 1.2;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let b = tiny_benchmark();
        let cfg = tiny_config();
        let a = train(&cfg, &b.pretrain, &b.validation).unwrap();
        let c = train(&cfg, &b.pretrain, &b.validation).unwrap();
        assert_eq!(a.log, c.log);
        assert_eq!(a.validations, c.validations);
        for (pa, pc) in a.backbone.params().iter().zip(c.backbone.params()) {
            assert_eq!(pa.name, pc.name);
            assert_eq!(pa.tensor.values(), pc.tensor.values());
        }
    }

    #[test]
    fn loss_descends_on_a_tiny_dataset() {
        let b = tiny_benchmark();
        let mut cfg = tiny_config();
        cfg.total_steps = 200;
        cfg.validation_every = 200;
        let outcome = train(&cfg, &b.pretrain, &b.validation).unwrap();
        let first: f64 = outcome.log[..20].iter().map(|e| e.loss).sum::<f64>() / 20.0;
        let last: f64 = outcome.log[180..].iter().map(|e| e.loss).sum::<f64>() / 20.0;
        assert!(
            last < first,
            "training loss failed to descend: first {first}, last {last}"
        );
    }

    #[test]
    fn returned_checkpoint_has_the_best_validation_accuracy() {
        let b = tiny_benchmark();
        let mut cfg = tiny_config();
        cfg.total_steps = 60;
        cfg.validation_every = 10;
        let outcome = train(&cfg, &b.pretrain, &b.validation).unwrap();
        let best = outcome.best_validation.unwrap();
        let max = outcome
            .validations
            .iter()
            .map(|v| v.accuracy)
            .fold(f64::MIN, f64::max);
        assert_eq!(best.accuracy, max);
        assert!(outcome
            .validations
            .iter()
            .all(|v| v.accuracy <= best.accuracy));
    }

    #[test]
    fn early_stopping_cuts_the_run_short() {
        let b = tiny_benchmark();
        let mut cfg = tiny_config();
        cfg.total_steps = 2_000;
        cfg.validation_every = 5;
        cfg.patience = 2;
        cfg.validation_tasks = 2;
        let outcome = train(&cfg, &b.pretrain, &b.validation).unwrap();
        assert!(outcome.stopped_early);
        assert!(outcome.steps_run < cfg.total_steps);
        assert_eq!(outcome.steps_run % cfg.validation_every, 0);
    }

    #[test]
    fn mixture_training_uses_stylized_episodes() {
        let b = tiny_benchmark();
        let styles = TextureBank::styles(9);
        let pretrain = build_stylized_variants(
            &b.pretrain,
            &b.pretrain_masks,
            &styles,
            &StylizeConfig {
                alpha: 0.4,
                variants: 2,
                seed: 5,
            },
        )
        .unwrap();
        let mut cfg = tiny_config();
        cfg.mixture_p = 0.5;
        cfg.total_steps = 30;
        cfg.validation_every = 30;
        let outcome = train(&cfg, &pretrain, &b.validation).unwrap();
        assert!(outcome.log.iter().any(|e| e.stylized));
        assert!(outcome.log.iter().any(|e| !e.stylized));

        let err = train(&cfg, &b.pretrain, &b.validation).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zero_mixture_ignores_missing_variants() {
        let b = tiny_benchmark();
        let cfg = tiny_config();
        assert!(!b.pretrain.has_stylized());
        let outcome = train(&cfg, &b.pretrain, &b.validation).unwrap();
        assert!(outcome.log.iter().all(|e| !e.stylized));
    }

    #[test]
    fn validation_from_pretrain_split_is_rejected() {
        let b = tiny_benchmark();
        let cfg = tiny_config();
        let err = train(&cfg, &b.pretrain, &b.pretrain).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn schedule_halves_the_logged_lr() {
        let b = tiny_benchmark();
        let mut cfg = tiny_config();
        cfg.total_steps = 12;
        cfg.validation_every = 12;
        cfg.schedule = LrSchedule {
            initial_lr: 1e-3,
            halving_period: 5,
        };
        let outcome = train(&cfg, &b.pretrain, &b.validation).unwrap();
        assert_eq!(outcome.log[0].lr, 1e-3);
        assert_eq!(outcome.log[4].lr, 1e-3);
        assert_eq!(outcome.log[5].lr, 5e-4);
        assert_eq!(outcome.log[10].lr, 2.5e-4);
    }
}
