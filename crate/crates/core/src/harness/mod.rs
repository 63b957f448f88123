//! Training, evaluation, and the paired experiment runners.
//!
//! [`train`] runs the episodic pre-training loop with a step-decay learning
//! rate, periodic validation, and early stopping, returning the parameters
//! that scored best on validation. [`evaluate`] measures a frozen embedder
//! over many sampled test tasks and reports the mean accuracy with a 95%
//! confidence interval. [`run_ablation`] and [`run_p_sweep`] drive both
//! over a grid of pre-training mixtures and test-time-augmentation
//! settings, sharing trained models through a [`ModelBank`] and pairing
//! every comparison on identical evaluation seeds.

mod eval;
mod experiments;
mod train;

pub use eval::{evaluate, paired_difference, EvalConfig, EvalReport, PairedDiff};
pub use experiments::{
    run_ablation, run_p_sweep, AblationCell, AblationConfig, AblationRow, ModelBank,
    PretrainData, SweepConfig, SweepPoint,
};
pub use train::{train, TrainConfig, TrainLogEntry, TrainOutcome, ValidationPoint};
