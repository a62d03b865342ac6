//! End-to-end tests of the installed binary: exit codes, file emission,
//! config layering, determinism, and input immutability.

use designforge::designs::NodeSet;
use designforge::ManifoldModel;
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_designforge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn path_str(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn design_centers_is_exact_and_emits_files() {
    let dir = tempdir();
    let out_dir = path_str(&dir, "run");
    let out = run(&[
        "design", "--manifold", "torus1", "--L", "8", "--N", "9", "--init", "centers", "--out",
        &out_dir,
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1, "exactly one summary line: {text:?}");
    assert!(text.starts_with("design "), "{text}");

    let base = PathBuf::from(&out_dir);
    for name in ["design-0.config", "design-0.json", "design-0.csv", "design-0.nodes.csv"] {
        assert!(base.join(name).is_file(), "missing {name}");
    }
    let report = read_json(&base.join("design-0.json"));
    let defect: f64 = report["defect"].as_f64().unwrap();
    assert!(defect <= 1e-14, "defect {defect}");
    assert_eq!(report["certified"], Value::Bool(true));
    assert_eq!(report["N"], serde_json::json!(9));

    let trace = fs::read_to_string(base.join("design-0.csv")).unwrap();
    assert!(trace.starts_with("iter,defect,step\n"));
}

#[test]
fn infeasible_design_exits_two_with_partial_report() {
    let dir = tempdir();
    let out_dir = path_str(&dir, "run");
    let out = run(&[
        "design", "--manifold", "torus1", "--L", "8", "--N", "4", "--init", "random", "--seed",
        "7", "--budget", "300", "--tol", "1e-8", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    let report = read_json(&PathBuf::from(&out_dir).join("design-7.json"));
    assert_eq!(report["converged"], Value::Bool(false));
    assert!(report["defect"].as_f64().unwrap() > 1e-8);
}

#[test]
fn randomized_runs_require_a_seed() {
    let dir = tempdir();
    let out_dir = path_str(&dir, "run");
    for args in [
        vec!["design", "--manifold", "torus1", "--L", "4", "--N", "5", "--init", "random"],
        vec!["mz-survey", "--manifold", "torus1", "--l_grid", "2", "--n_grid", "6", "--trials", "1"],
        vec!["partition", "--manifold", "torus1", "--N", "8"],
        vec!["flow-check", "--manifold", "torus1", "--L", "2", "--N", "16", "--trials", "1"],
        vec!["scaling", "--manifold", "torus1", "--l_grid", "2,4"],
    ] {
        let mut full = args.clone();
        full.extend(["--out", out_dir.as_str()]);
        let out = run(&full);
        assert_eq!(code(&out), 1, "{args:?} must fail without a seed");
        assert!(stderr(&out).contains("seed"), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn certify_passes_octahedron_and_rejects_aliased_nodes() {
    let dir = tempdir();
    let octa = NodeSet::new(
        ManifoldModel::sphere2(),
        vec![
            vec![1.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, -1.0],
        ],
    )
    .unwrap();
    let nodes_path = path_str(&dir, "octahedron.json");
    fs::write(&nodes_path, octa.to_json().to_string()).unwrap();
    let before = fs::read(&nodes_path).unwrap();

    let out_dir = path_str(&dir, "run");
    let out = run(&["certify", "--nodes", &nodes_path, "--L", "3.5", "--out", &out_dir]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report = read_json(&PathBuf::from(&out_dir).join("certify-0.json"));
    assert!(report["defect"].as_f64().unwrap() <= 1e-12);
    assert_eq!(fs::read(&nodes_path).unwrap(), before, "input file must not be mutated");

    // Three equispaced circle points alias the |k| = 3 mode at L = 3.
    let bad = path_str(&dir, "aliased.csv");
    fs::write(&bad, "0\n2.0943951023931953\n4.1887902047863905\n").unwrap();
    let out = run(&[
        "certify", "--nodes", &bad, "--manifold", "torus1", "--L", "3", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 2, "aliased nodes must fail certification");

    // CSV nodes without a manifold are a usage error; so is a mismatch.
    let out = run(&["certify", "--nodes", &bad, "--L", "3", "--out", &out_dir]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("manifold"), "{}", stderr(&out));
    let out = run(&[
        "certify", "--nodes", &nodes_path, "--manifold", "torus1", "--L", "3", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("does not match"), "{}", stderr(&out));
}

#[test]
fn config_file_layers_under_flags_and_round_trips() {
    let dir = tempdir();
    let cfg_path = path_str(&dir, "survey.config");
    fs::write(
        &cfg_path,
        "# tiny survey\nsubcommand = mz-survey\nmanifold = torus1\nl_grid = 2\nn_grid = 6\ntrials = 2\nseed = 9\n",
    )
    .unwrap();
    let cfg_before = fs::read(&cfg_path).unwrap();

    let out_a = path_str(&dir, "a");
    let out = run(&["mz-survey", "--config", &cfg_path, "--trials", "3", "--out", &out_a]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let echo_path = PathBuf::from(&out_a).join("mz-survey-9.config");
    let echo = fs::read_to_string(&echo_path).unwrap();
    assert!(echo.contains("trials = 3"), "flag must win over config: {echo}");
    assert_eq!(fs::read(&cfg_path).unwrap(), cfg_before, "config must not be mutated");

    // Loading the emitted config reproduces the run byte-for-byte
    // (out differs; compare result files and the re-emitted echo).
    let out_b = path_str(&dir, "b");
    let out = run(&["mz-survey", "--config", &echo_path.display().to_string(), "--out", &out_b]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for name in ["mz-survey-9.json", "mz-survey-9.csv"] {
        let a = fs::read(PathBuf::from(&out_a).join(name)).unwrap();
        let b = fs::read(PathBuf::from(&out_b).join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across identical configs");
    }
    let re_echo = fs::read_to_string(PathBuf::from(&out_b).join("mz-survey-9.config")).unwrap();
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("out = "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&echo), strip(&re_echo), "config echo is a fixed point");
}

#[test]
fn malformed_configs_are_usage_errors_naming_the_problem() {
    let dir = tempdir();
    let out_dir = path_str(&dir, "run");

    let bad_key = path_str(&dir, "badkey.config");
    fs::write(&bad_key, "manifold = torus1\nl_grid = 2\nn_grid = 6\nwibble = 1\nseed = 1\n")
        .unwrap();
    let out = run(&["mz-survey", "--config", &bad_key, "--out", &out_dir]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("`wibble`"), "{}", stderr(&out));

    let bad_line = path_str(&dir, "badline.config");
    fs::write(&bad_line, "manifold = torus1\nnonsense\n").unwrap();
    let out = run(&["mz-survey", "--config", &bad_line, "--out", &out_dir]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let wrong_sub = path_str(&dir, "wrongsub.config");
    fs::write(&wrong_sub, "subcommand = design\nmanifold = torus1\n").unwrap();
    let out = run(&["mz-survey", "--config", &wrong_sub, "--out", &out_dir]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("design"), "{}", stderr(&out));

    let out = run(&["mz-survey", "--config", &path_str(&dir, "missing.config")]);
    assert_eq!(code(&out), 1);

    let out = run(&["design", "--manifold", "klein", "--L", "2", "--N", "3", "--out", &out_dir]);
    assert_eq!(code(&out), 1, "unknown manifold is a usage error");

    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1, "unknown subcommand is a usage error");

    let out = run(&[
        "partition", "--manifold", "torus1", "--N", "8", "--seed", "1", "--formats", "yaml",
        "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("formats"), "{}", stderr(&out));
}

#[test]
fn identical_config_and_seed_give_byte_identical_outputs() {
    let dir = tempdir();
    let args = |out: &str| {
        vec![
            "partition".to_string(),
            "--manifold".into(),
            "sphere2".into(),
            "--N".into(),
            "40".into(),
            "--samples".into(),
            "64".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            out.to_string(),
        ]
    };
    let out_a = path_str(&dir, "a");
    let out_b = path_str(&dir, "b");
    let ra = run(&args(&out_a).iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(code(&ra), 0);
    // Second run under a thread cap: results must not depend on parallelism.
    let rb = bin()
        .args(args(&out_b))
        .env("DESIGNFORGE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(rb.status.code(), Some(0));
    for name in ["partition-3.json", "partition-3.csv", "partition-3.nodes.csv"] {
        let a = fs::read(PathBuf::from(&out_a).join(name)).unwrap();
        let b = fs::read(PathBuf::from(&out_b).join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn propagation_vanishes_beyond_the_support_and_not_inside() {
    let dir = tempdir();
    let out_dir = path_str(&dir, "run");
    let out = run(&[
        "propagation", "--manifold", "torus1", "--r", "0.5", "--dist", "2.0", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let far = read_json(&PathBuf::from(&out_dir).join("propagation-0.json"));
    assert!(far["value"].as_f64().unwrap().abs() <= 1e-10);

    let out = run(&[
        "propagation", "--manifold", "torus1", "--r", "0.5", "--dist", "0.3", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 0);
    let near = read_json(&PathBuf::from(&out_dir).join("propagation-0.json"));
    assert!(near["value"].as_f64().unwrap().abs() > 1e-3);
}

#[test]
fn wce_validates_smoothness_order_and_reports_error_components() {
    let dir = tempdir();
    let nodes = path_str(&dir, "eq4.csv");
    fs::write(&nodes, "0\n1.5707963267948966\n3.141592653589793\n4.71238898038469\n").unwrap();
    let out_dir = path_str(&dir, "run");
    let out = run(&[
        "wce", "--nodes", &nodes, "--manifold", "torus1", "--alpha", "1.0", "--lambda_max",
        "50", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let rep = read_json(&PathBuf::from(&out_dir).join("wce-0.json"));
    let wce = rep["wce"].as_f64().unwrap();
    let band = rep["band_sum"].as_f64().unwrap();
    let tail = rep["tail_bound"].as_f64().unwrap();
    assert!(wce > 0.0 && band > 0.0 && tail > 0.0);
    assert!((wce - (band + tail).sqrt()).abs() <= 1e-15);

    let out = run(&[
        "wce", "--nodes", &nodes, "--manifold", "torus1", "--alpha", "0.5", "--lambda_max",
        "50", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 1, "alpha ≤ d/2 is an invalid input");
}

#[test]
fn formats_select_which_files_are_written() {
    let dir = tempdir();
    let out_dir = path_str(&dir, "run");
    let out = run(&[
        "propagation", "--manifold", "torus1", "--r", "0.5", "--dist", "1.5", "--formats",
        "json", "--out", &out_dir,
    ]);
    assert_eq!(code(&out), 0);
    let base = PathBuf::from(&out_dir);
    assert!(base.join("propagation-0.json").is_file());
    assert!(base.join("propagation-0.config").is_file(), "config echo is always written");
    assert!(!base.join("propagation-0.csv").exists(), "csv suppressed by formats=json");
}

#[test]
fn help_lists_subcommands_and_csv_schemas() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for sub in [
        "design", "certify", "partition", "mz-survey", "kernel-decay", "propagation",
        "heat-fit", "flow-check", "scaling", "wce",
    ] {
        assert!(text.contains(sub), "--help must list `{sub}`");
    }
    let out = run(&["design", "--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("iter,defect,step"), "design --help documents its CSV schema");
    let out = run(&["mz-survey", "--help"]);
    assert!(
        stdout(&out).contains("L,N,rule,trial,ratio_value,ratio_grad"),
        "mz-survey --help documents its CSV schema"
    );
}
