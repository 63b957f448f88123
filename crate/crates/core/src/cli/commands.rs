//! The `protoshot` subcommands.
//!
//! Every command loads one [`RunConfig`], applies the command-line
//! overrides, writes the resolved document to `<out_dir>/config.toml`
//! alongside its artifacts, and prints a one-line summary. Dataset-reading
//! commands regenerate the benchmark from the config instead of parsing
//! dataset files back: generation is deterministic in the seed, so the
//! regenerated splits are the exported ones. The exceptions are `eval`,
//! which reads test classes from a dataset file when `test_data` names
//! one, and `plot`, which parses the sweep report it renders.

use super::formats;
use super::reports::{self, ReportMeta};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{evaluate, run_ablation, run_p_sweep, train, ModelBank};
use crate::nn::ConvBackbone;
use crate::synthdata::{
    build_stylized_variants, generate_dataset, Benchmark, ClassDataset, TextureBank,
};
use crate::tensor::Tensor;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Few-shot prototypical networks on a synthetic shape/texture benchmark.
#[derive(Debug, Parser)]
#[command(name = "protoshot", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override the master seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Override the number of evaluation tasks.
    #[arg(long, value_name = "N")]
    pub tasks: Option<usize>,
    /// Disable support-side test-time augmentation.
    #[arg(long)]
    pub no_support_tta: bool,
    /// Disable query-side test-time augmentation.
    #[arg(long)]
    pub no_query_tta: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Override the number of evaluation tasks per cell.
    #[arg(long, value_name = "N")]
    pub tasks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Override the number of evaluation tasks per point.
    #[arg(long, value_name = "N")]
    pub tasks: Option<usize>,
    /// Sweep this single probability instead of the configured grid.
    #[arg(long, value_name = "REAL")]
    pub p: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the benchmark splits and export them as dataset files.
    GenerateData(Common),
    /// Build stylized variants of the pre-training split and export them.
    Stylize(Common),
    /// Pre-train a backbone and write a checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on held-out test classes.
    Eval(EvalArgs),
    /// Train and evaluate the data-regime / TTA ablation ladder.
    Ablate(AblateArgs),
    /// Train and evaluate across the stylization-probability grid.
    SweepP(SweepArgs),
    /// Render the sweep report as an SVG plot.
    Plot(Common),
}

/// Runs the selected subcommand, returning its one-line summary.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenerateData(common) => generate_data(&load(&common)?),
        Command::Stylize(common) => stylize(&load(&common)?),
        Command::Train(common) => train_cmd(&load(&common)?),
        Command::Eval(args) => eval_cmd(&args),
        Command::Ablate(args) => ablate_cmd(&args),
        Command::SweepP(args) => sweep_cmd(&args),
        Command::Plot(common) => plot_cmd(&load(&common)?),
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

/// Creates the output directory and records the resolved configuration.
fn prepare_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", config.out_dir.display())))?;
    write_text(&config.out_dir.join("config.toml"), &config.resolved_toml())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

fn meta(config: &RunConfig) -> ReportMeta {
    ReportMeta::new(config.resolved_toml())
}

/// Rebuilds the benchmark for a downstream command. The quality gate
/// belongs to `generate-data`; regeneration trusts the seed.
fn regenerate(config: &RunConfig) -> Result<Benchmark> {
    let mut gen = config.generator_config();
    gen.verify = false;
    generate_dataset(&gen)
}

fn stylized_pretrain(config: &RunConfig, benchmark: &Benchmark) -> Result<ClassDataset> {
    let styles = TextureBank::styles(config.style_bank_seed());
    build_stylized_variants(
        &benchmark.pretrain,
        &benchmark.pretrain_masks,
        &styles,
        &config.stylize_config(),
    )
}

fn generate_data(config: &RunConfig) -> Result<String> {
    prepare_out(config)?;
    let benchmark = generate_dataset(&config.generator_config())?;
    for (name, split) in [
        ("pretrain.fsds", &benchmark.pretrain),
        ("validation.fsds", &benchmark.validation),
        ("test.fsds", &benchmark.test),
    ] {
        formats::write_dataset(&config.out_dir.join(name), split)?;
    }
    Ok(format!(
        "generated {}+{}+{} classes x {} images at {}x{}{} into {}",
        config.pretrain_classes,
        config.validation_classes,
        config.test_classes,
        config.images_per_class,
        config.resolution,
        config.resolution,
        if config.verify_data { " (verified)" } else { "" },
        config.out_dir.display()
    ))
}

fn stylize(config: &RunConfig) -> Result<String> {
    prepare_out(config)?;
    let benchmark = regenerate(config)?;
    let stylized = stylized_pretrain(config, &benchmark)?;
    let path = config.out_dir.join("pretrain-stylized.fsds");
    formats::write_dataset(&path, &stylized)?;
    Ok(format!(
        "stylized {} classes x {} images x {} variants (alpha {}) into {}",
        stylized.n_classes(),
        config.images_per_class,
        config.n_variants,
        config.alpha,
        path.display()
    ))
}

/// Serializes a backbone plus the metadata `eval` needs: the class ids it
/// was trained on (for the train/test disjointness check) and the input
/// resolution.
pub fn write_backbone_checkpoint(
    path: &Path,
    backbone: &ConvBackbone,
    train_class_ids: &[u32],
) -> Result<()> {
    let ids = Tensor::new(
        vec![train_class_ids.len()],
        train_class_ids.iter().map(|&id| id as f64).collect(),
    )?;
    let resolution = Tensor::new(vec![1], vec![backbone.config().resolution as f64])?;
    let mut tensors: Vec<(String, &Tensor)> = backbone
        .params()
        .iter()
        .map(|p| (p.name.clone(), &p.tensor))
        .collect();
    tensors.push(("meta.train_class_ids".to_string(), &ids));
    tensors.push(("meta.resolution".to_string(), &resolution));
    formats::write_checkpoint(path, &tensors)
}

/// Loads a checkpoint written by [`write_backbone_checkpoint`].
pub fn read_backbone_checkpoint(path: &Path) -> Result<(ConvBackbone, Vec<u32>)> {
    let tensors = formats::read_checkpoint(path)?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))
    };
    let resolution_value = *find("meta.resolution")?
        .values()
        .first()
        .ok_or_else(|| Error::Format("checkpoint resolution tensor is empty".into()))?;
    if resolution_value.fract() != 0.0 || !(1.0..=65_536.0).contains(&resolution_value) {
        return Err(Error::Format(format!(
            "checkpoint resolution {resolution_value} is not a valid image size"
        )));
    }
    let train_class_ids: Vec<u32> = find("meta.train_class_ids")?
        .values()
        .iter()
        .map(|&v| v as u32)
        .collect();
    let backbone = ConvBackbone::from_params(resolution_value as usize, &tensors)?;
    Ok((backbone, train_class_ids))
}

fn train_cmd(config: &RunConfig) -> Result<String> {
    prepare_out(config)?;
    let benchmark = regenerate(config)?;
    let pretrain = if config.p > 0.0 {
        stylized_pretrain(config, &benchmark)?
    } else {
        benchmark.pretrain
    };
    let outcome = train(&config.train_config(), &pretrain, &benchmark.validation)?;
    let path = config.checkpoint_path();
    write_backbone_checkpoint(&path, &outcome.backbone, &pretrain.class_ids())?;
    let best = outcome
        .best_validation
        .map(|v| format!("best validation accuracy {:.3} at step {}", v.accuracy, v.step))
        .unwrap_or_else(|| "no validation rounds".to_string());
    Ok(format!(
        "trained {} steps{}; {}; wrote {}",
        outcome.steps_run,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        best,
        path.display()
    ))
}

fn eval_cmd(args: &EvalArgs) -> Result<String> {
    let mut config = load(&args.common)?;
    if let Some(tasks) = args.tasks {
        config.n_tasks = tasks;
    }
    prepare_out(&config)?;
    let (backbone, train_class_ids) = read_backbone_checkpoint(&config.checkpoint_path())?;
    let test = match &config.test_data {
        Some(path) => formats::read_dataset(path)?,
        None => regenerate(&config)?.test,
    };
    let mut tta = config.tta_config();
    if args.no_support_tta {
        tta.support_augments = 0;
    }
    if args.no_query_tta {
        tta.query_augments = 0;
    }
    let report = evaluate(&backbone, &test, &train_class_ids, &config.eval_config(tta))?;
    let path = config.out_dir.join("eval.csv");
    write_text(&path, &reports::eval_csv(&report, &meta(&config)))?;
    Ok(format!(
        "mean accuracy {:.3} ± {:.3} over {} tasks; wrote {}",
        report.mean_accuracy,
        report.ci95_halfwidth,
        report.per_task_accuracy.len(),
        path.display()
    ))
}

fn ablate_cmd(args: &AblateArgs) -> Result<String> {
    let mut config = load(&args.common)?;
    if let Some(tasks) = args.tasks {
        config.n_tasks = tasks;
    }
    prepare_out(&config)?;
    let benchmark = regenerate(&config)?;
    let pretrain = stylized_pretrain(&config, &benchmark)?;
    let ablation = config.ablation_config();
    let mut bank = ModelBank::new();
    let rows = run_ablation(
        &ablation,
        &pretrain,
        &benchmark.validation,
        &benchmark.test,
        &mut bank,
    )?;
    let m = meta(&config);
    let csv_path = config.out_dir.join("ablation.csv");
    write_text(&csv_path, &reports::ablation_csv(&rows, &m))?;
    write_text(
        &config.out_dir.join("ablation.txt"),
        &reports::ablation_table(&rows, &m),
    )?;
    let best = rows
        .iter()
        .max_by(|a, b| a.report.mean_accuracy.total_cmp(&b.report.mean_accuracy))
        .expect("the standard ladder is nonempty");
    Ok(format!(
        "ablation: {} cells from {} trainings; best {:.3} ({}, support TTA {}, query TTA {}); wrote {}",
        rows.len(),
        bank.len(),
        best.report.mean_accuracy,
        reports::data_label(best.cell.data),
        best.cell.support_tta,
        best.cell.query_tta,
        csv_path.display()
    ))
}

fn sweep_cmd(args: &SweepArgs) -> Result<String> {
    let mut config = load(&args.common)?;
    if let Some(tasks) = args.tasks {
        config.n_tasks = tasks;
    }
    let ps = match args.p {
        Some(p) => vec![p],
        None => config.sweep_ps.clone(),
    };
    prepare_out(&config)?;
    let benchmark = regenerate(&config)?;
    let pretrain = if ps.iter().any(|&p| p > 0.0) {
        stylized_pretrain(&config, &benchmark)?
    } else {
        benchmark.pretrain
    };
    let sweep = config.sweep_config(ps);
    let mut bank = ModelBank::new();
    let points = run_p_sweep(
        &sweep,
        &pretrain,
        &benchmark.validation,
        &benchmark.test,
        &mut bank,
    )?;
    let m = meta(&config);
    let csv_path = config.out_dir.join("sweep.csv");
    write_text(&csv_path, &reports::sweep_csv(&points, &m))?;
    write_text(
        &config.out_dir.join("sweep.txt"),
        &reports::sweep_table(&points, &m),
    )?;
    let peak = points
        .iter()
        .max_by(|a, b| a.report.mean_accuracy.total_cmp(&b.report.mean_accuracy))
        .expect("a validated sweep has at least one point");
    Ok(format!(
        "swept {} probabilities; peak accuracy {:.3} at p = {}; wrote {}",
        points.len(),
        peak.report.mean_accuracy,
        peak.p,
        csv_path.display()
    ))
}

fn plot_cmd(config: &RunConfig) -> Result<String> {
    prepare_out(config)?;
    let csv_path = config.out_dir.join("sweep.csv");
    let text = std::fs::read_to_string(&csv_path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", csv_path.display())))?;
    let data = reports::parse_csv(&text)?;
    let expected: Vec<&str> = reports::SWEEP_HEADER.split(',').collect();
    if data.header != expected {
        return Err(Error::Format(format!(
            "sweep report header is {:?}, expected {:?}",
            data.header, expected
        )));
    }
    if data.rows.is_empty() {
        return Err(Error::Format("sweep report has no rows".into()));
    }
    let mut points = Vec::with_capacity(data.rows.len());
    for row in &data.rows {
        points.push((
            reports::parse_cell_f64(&row[0])?,
            reports::parse_cell_f64(&row[1])?,
            reports::parse_cell_f64(&row[2])?,
        ));
    }
    let svg = reports::line_plot_svg(
        &points,
        "stylization probability p",
        "mean accuracy",
        &meta(config),
    )?;
    let svg_path = config.out_dir.join("sweep.svg");
    write_text(&svg_path, &svg)?;
    Ok(format!(
        "plotted {} points from {} to {}",
        points.len(),
        csv_path.display(),
        svg_path.display()
    ))
}
