//! End-to-end tests of the `protoshot` binary: the full pipeline at toy
//! scale, byte-level determinism of its artifacts, the documented exit
//! codes, and the perfectly separable evaluation fixture.

use protoshot::cli::commands::write_backbone_checkpoint;
use protoshot::cli::formats::{read_dataset, write_dataset};
use protoshot::cli::reports::{parse_cell_f64, parse_csv};
use protoshot::cli::{Metric, RunConfig};
use protoshot::image::Image;
use protoshot::nn::ConvBackbone;
use protoshot::synthdata::{ClassDataset, ClassRecord, Split};
use protoshot::tensor::Tensor;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_protoshot");

fn protoshot(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (key, value) in envs {
        cmd.env(key, value);
    }
    cmd.output().expect("the binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("terminated by exit, not signal")
}

fn expect_success(output: &Output) -> String {
    assert_eq!(
        exit_code(output),
        0,
        "command failed: {}",
        stderr_of(output)
    );
    let summary = stdout_of(output);
    assert_eq!(
        summary.trim_end().lines().count(),
        1,
        "summary is one line, got {summary:?}"
    );
    summary
}

/// A configuration small enough for subprocess-level testing.
fn tiny_config() -> RunConfig {
    RunConfig {
        pretrain_classes: 3,
        validation_classes: 2,
        test_classes: 2,
        images_per_class: 6,
        resolution: 16,
        verify_data: false,
        n_variants: 2,
        p: 0.5,
        n_way: 2,
        k_shot: 1,
        q_queries: 2,
        support_augments: 2,
        query_augments: 2,
        filters: 4,
        steps: 4,
        validate_every: 2,
        patience: 2,
        validation_tasks: 2,
        n_tasks: 4,
        sweep_ps: vec![0.0, 0.5],
        seed: 17,
        ..RunConfig::default()
    }
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, config.resolved_toml()).unwrap();
    path
}

#[test]
fn pipeline_runs_and_reproduces_its_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), &tiny_config());
    let config = config_path.to_str().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let (out_a, out_b) = (out_a.to_str().unwrap(), out_b.to_str().unwrap());

    for out in [out_a, out_b] {
        let summary = expect_success(&protoshot(
            &["generate-data", "--config", config, "--out", out],
            &[],
        ));
        assert!(summary.contains("3+2+2 classes"), "{summary}");
    }
    for name in ["pretrain.fsds", "validation.fsds", "test.fsds", "config.toml"] {
        let a = std::fs::read(Path::new(out_a).join(name)).unwrap();
        let b = std::fs::read(Path::new(out_b).join(name)).unwrap();
        assert_eq!(a == b, name != "config.toml", "artifact {name}");
    }
    let test_split = read_dataset(&Path::new(out_a).join("test.fsds")).unwrap();
    assert_eq!(test_split.split(), Split::Test);
    assert_eq!(test_split.n_classes(), 2);

    expect_success(&protoshot(
        &["stylize", "--config", config, "--out", out_a],
        &[],
    ));
    let stylized = read_dataset(&Path::new(out_a).join("pretrain-stylized.fsds")).unwrap();
    assert!(stylized.has_stylized());
    assert_eq!(stylized.split(), Split::Pretrain);

    for out in [out_a, out_b] {
        let summary = expect_success(&protoshot(
            &["train", "--config", config, "--out", out],
            &[],
        ));
        assert!(summary.contains("trained"), "{summary}");
    }
    let checkpoint_a = std::fs::read(Path::new(out_a).join("checkpoint.pnck")).unwrap();
    let checkpoint_b = std::fs::read(Path::new(out_b).join("checkpoint.pnck")).unwrap();
    assert_eq!(checkpoint_a, checkpoint_b, "training is deterministic");

    let eval_summary = expect_success(&protoshot(
        &["eval", "--config", config, "--out", out_a],
        &[("PROTOSHOT_WORKERS", "1")],
    ));
    assert!(eval_summary.contains("over 4 tasks"), "{eval_summary}");
    let eval_serial = std::fs::read(Path::new(out_a).join("eval.csv")).unwrap();
    expect_success(&protoshot(
        &["eval", "--config", config, "--out", out_a],
        &[("PROTOSHOT_WORKERS", "4")],
    ));
    let eval_parallel = std::fs::read(Path::new(out_a).join("eval.csv")).unwrap();
    assert_eq!(
        eval_serial, eval_parallel,
        "evaluation is worker-count invariant"
    );

    let tasks_summary = expect_success(&protoshot(
        &["eval", "--config", config, "--out", out_a, "--tasks", "3"],
        &[],
    ));
    assert!(tasks_summary.contains("over 3 tasks"), "{tasks_summary}");

    let ablate_summary = expect_success(&protoshot(
        &["ablate", "--config", config, "--out", out_a],
        &[],
    ));
    assert!(ablate_summary.contains("5 cells from 3 trainings"), "{ablate_summary}");
    let ablation = parse_csv(&std::fs::read_to_string(Path::new(out_a).join("ablation.csv")).unwrap()).unwrap();
    assert_eq!(ablation.rows.len(), 5);

    expect_success(&protoshot(
        &["sweep-p", "--config", config, "--out", out_a],
        &[],
    ));
    let sweep = parse_csv(&std::fs::read_to_string(Path::new(out_a).join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(sweep.header, vec!["p", "mean", "ci95", "n_tasks"]);
    assert_eq!(sweep.rows.len(), 2);
    assert_eq!(parse_cell_f64(&sweep.rows[0][0]).unwrap(), 0.0);
    assert_eq!(parse_cell_f64(&sweep.rows[1][0]).unwrap(), 0.5);
    for row in &sweep.rows {
        assert_eq!(parse_cell_f64(&row[3]).unwrap(), 4.0);
    }

    let plot_summary = expect_success(&protoshot(
        &["plot", "--config", config, "--out", out_a],
        &[],
    ));
    assert!(plot_summary.contains("plotted 2 points"), "{plot_summary}");
    let svg = std::fs::read_to_string(Path::new(out_a).join("sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));

    let single_point = expect_success(&protoshot(
        &["sweep-p", "--config", config, "--out", out_b, "--p", "0.5", "--tasks", "2"],
        &[],
    ));
    assert!(single_point.contains("swept 1 probabilities"), "{single_point}");
    expect_success(&protoshot(&["plot", "--config", config, "--out", out_b], &[]));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), &tiny_config());
    let config = config_path.to_str().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    // Usage errors come from the argument parser.
    assert_eq!(exit_code(&protoshot(&[], &[])), 2);
    assert_eq!(exit_code(&protoshot(&["frobnicate", "--config", config], &[])), 2);
    assert_eq!(
        exit_code(&protoshot(&["eval", "--config", config, "--frob"], &[])),
        2
    );
    assert_eq!(exit_code(&protoshot(&["train"], &[])), 2);

    // Missing config file: I/O.
    let absent = dir.path().join("absent.toml");
    let output = protoshot(&["train", "--config", absent.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&output), 7, "{}", stderr_of(&output));
    assert!(stderr_of(&output).starts_with("error:"));

    // Unknown key and out-of-range value: configuration.
    let bad_key = dir.path().join("bad-key.toml");
    std::fs::write(&bad_key, "momentum = 0.9\n").unwrap();
    let output = protoshot(&["train", "--config", bad_key.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&output), 3, "{}", stderr_of(&output));

    let bad_env = protoshot(
        &["generate-data", "--config", config, "--out", out],
        &[("PROTOSHOT_WORKERS", "several")],
    );
    assert_eq!(exit_code(&bad_env), 3, "{}", stderr_of(&bad_env));

    // Evaluating without a checkpoint: I/O.
    let output = protoshot(&["eval", "--config", config, "--out", out], &[]);
    assert_eq!(exit_code(&output), 7, "{}", stderr_of(&output));

    // Corrupt checkpoint: format.
    std::fs::create_dir_all(out).unwrap();
    std::fs::write(Path::new(out).join("checkpoint.pnck"), b"PNCKjunk").unwrap();
    let output = protoshot(&["eval", "--config", config, "--out", out], &[]);
    assert_eq!(exit_code(&output), 8, "{}", stderr_of(&output));

    // Plot before any sweep report exists: I/O.
    let output = protoshot(&["plot", "--config", config, "--out", out], &[]);
    assert_eq!(exit_code(&output), 7, "{}", stderr_of(&output));

    // Version and help are usage-level successes.
    assert_eq!(exit_code(&protoshot(&["--version"], &[])), 0);
    assert_eq!(exit_code(&protoshot(&["--help"], &[])), 0);
}

/// A backbone whose kernels pass one input channel through untouched at
/// every block, so a constant-color image embeds as its own color.
fn passthrough_backbone(filters: usize, resolution: usize) -> ConvBackbone {
    let mut tensors = Vec::new();
    for block in 0..4 {
        let c_in = if block == 0 { 3 } else { filters };
        let mut values = vec![0.0; filters * c_in * 9];
        for f in 0..filters {
            let source = if block == 0 { f % 3 } else { f };
            values[(f * c_in + source) * 9 + 4] = 1.0;
        }
        tensors.push((
            format!("conv{}.kernel", block + 1),
            Tensor::new(vec![filters, c_in, 3, 3], values).unwrap(),
        ));
    }
    ConvBackbone::from_params(resolution, &tensors).unwrap()
}

fn constant_image(resolution: usize, rgb: [f64; 3]) -> Image {
    let mut pixels = Vec::with_capacity(resolution * resolution * 3);
    for _ in 0..resolution * resolution {
        pixels.extend_from_slice(&rgb);
    }
    Image::new(resolution, resolution, pixels).unwrap()
}

#[test]
fn eval_on_the_separable_fixture_reports_perfect_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let resolution = 16;
    let colors = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 1.0],
    ];
    let classes = colors
        .iter()
        .enumerate()
        .map(|(i, &rgb)| ClassRecord {
            class_id: i as u32,
            images: (0..3).map(|_| constant_image(resolution, rgb)).collect(),
            stylized: None,
        })
        .collect();
    let fixture = ClassDataset::new(Split::Test, resolution, classes).unwrap();
    let data_path = dir.path().join("fixture.fsds");
    write_dataset(&data_path, &fixture).unwrap();

    let checkpoint_path = dir.path().join("fixture.pnck");
    let backbone = passthrough_backbone(4, resolution);
    write_backbone_checkpoint(&checkpoint_path, &backbone, &[900]).unwrap();

    let config = RunConfig {
        resolution,
        filters: 4,
        n_way: 5,
        k_shot: 1,
        q_queries: 2,
        n_tasks: 4,
        seed: 5,
        verify_data: false,
        metric: Metric::SquaredEuclidean,
        test_data: Some(data_path),
        checkpoint: Some(checkpoint_path),
        out_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    let config_path = write_config(dir.path(), &config);

    let output = protoshot(
        &[
            "eval",
            "--config",
            config_path.to_str().unwrap(),
            "--no-support-tta",
            "--no-query-tta",
        ],
        &[],
    );
    let summary = expect_success(&output);
    assert!(
        summary.contains("mean accuracy 1.000"),
        "expected a perfect score line, got {summary}"
    );
    let csv = std::fs::read_to_string(dir.path().join("out").join("eval.csv")).unwrap();
    let parsed = parse_csv(&csv).unwrap();
    assert_eq!(parsed.header, vec!["mean", "ci95"]);
    assert_eq!(parsed.rows, vec![vec!["1".to_string(), "0".to_string()]]);
}
