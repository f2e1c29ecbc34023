//! End-to-end exercises of the command-line interface: every subcommand
//! plus the exit-code contract (0 success, 1 usage, 2 stage failure).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn irisgate(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irisgate"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(output: &Output, context: &str) {
    assert!(
        output.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn full_cli_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Small config: 2 identities, light bootstrap.
    let config_path = root.join("config.json");
    fs::write(
        &config_path,
        r#"{
  "master_seed": 11,
  "cohort": { "identity_count": 2 },
  "gate": { "resamples": 15, "discard_rates": [0.0, 0.05], "fmr_target": 0.02 }
}"#,
    )
    .unwrap();
    let cfg = config_path.to_str().unwrap();

    // synth
    let out = irisgate(&["synth", "--config", cfg, "--out", "cohort"], root);
    assert_ok(&out, "synth");
    assert!(root.join("cohort/manifest.csv").exists());
    assert!(root.join("cohort/images").read_dir().unwrap().count() == 24);

    // metrics
    let out = irisgate(
        &[
            "metrics",
            "--config",
            cfg,
            "--manifest",
            "cohort/manifest.csv",
            "--out",
            "metrics.csv",
        ],
        root,
    );
    assert_ok(&out, "metrics");
    assert!(root.join("metrics.csv").exists());

    // encode
    let out = irisgate(
        &[
            "encode",
            "--config",
            cfg,
            "--manifest",
            "cohort/manifest.csv",
            "--out",
            "codes",
        ],
        root,
    );
    assert_ok(&out, "encode");
    let code_count = root
        .join("codes")
        .read_dir()
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "ircd")
        })
        .count();
    assert_eq!(code_count, 24);

    // match: cross product of two id lists.
    let manifest = fs::read_to_string(root.join("cohort/manifest.csv")).unwrap();
    let ids: Vec<&str> = manifest
        .lines()
        .skip(1)
        .map(|line| line.split(',').next().unwrap())
        .collect();
    fs::write(root.join("gallery.txt"), format!("{}\n{}\n", ids[0], ids[1])).unwrap();
    fs::write(root.join("probes.txt"), format!("{}\n{}\n{}\n", ids[2], ids[3], ids[4])).unwrap();
    let out = irisgate(
        &[
            "match",
            "--codes",
            "codes",
            "--gallery",
            "gallery.txt",
            "--probes",
            "probes.txt",
            "--out",
            "matches.csv",
        ],
        root,
    );
    assert_ok(&out, "match");
    let matches = fs::read_to_string(root.join("matches.csv")).unwrap();
    assert_eq!(matches.lines().count(), 1 + 6, "header plus 2x3 comparisons");

    // evaluate
    let out = irisgate(
        &[
            "evaluate",
            "--config",
            cfg,
            "--manifest",
            "cohort/manifest.csv",
            "--codes",
            "codes",
            "--metrics",
            "metrics.csv",
            "--out",
            "eval",
        ],
        root,
    );
    assert_ok(&out, "evaluate");
    for artifact in ["pairs.csv", "decision_env.json", "correlations.csv"] {
        assert!(root.join("eval").join(artifact).exists(), "missing {artifact}");
    }

    // gate over the evaluated pairs
    let out = irisgate(
        &[
            "gate",
            "--pairs",
            "eval/pairs.csv",
            "--metrics",
            "metrics.csv",
            "--features",
            "via",
            "--rates",
            "0:0.05:0.05",
            "--fmr-target",
            "0.02",
            "--resamples",
            "10",
            "--seed",
            "3",
            "--out",
            "gate",
        ],
        root,
    );
    assert_ok(&out, "gate");
    assert!(root.join("gate/gate_sweep.csv").exists());
    assert!(root.join("gate/models.json").exists());

    // run: the whole pipeline in one step
    let out = irisgate(&["run", "--config", cfg, "--out", "full"], root);
    assert_ok(&out, "run");
    assert!(root.join("full/summary.json").exists());

    // report over the run artifacts
    let out = irisgate(&["report", "--artifacts", "full"], root);
    assert_ok(&out, "report");
    assert!(root.join("full/report/report.txt").exists());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Quality-gate sweep"), "report text: {text}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config_path = root.join("config.json");
    fs::write(&config_path, r#"{ "cohort": { "identity_count": 1 } }"#).unwrap();
    let cfg = config_path.to_str().unwrap();

    let out_a = irisgate(&["synth", "--config", cfg, "--seed", "7", "--out", "a"], root);
    assert_ok(&out_a, "synth a");
    let out_b = irisgate(&["synth", "--config", cfg, "--seed", "7", "--out", "b"], root);
    assert_ok(&out_b, "synth b");
    let out_c = irisgate(&["synth", "--config", cfg, "--seed", "8", "--out", "c"], root);
    assert_ok(&out_c, "synth c");

    let read = |name: &str| fs::read(root.join(name).join("manifest.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    // Different seed, same layout: manifests match, pixel data differs.
    let first_image = |name: &str| {
        let dir = root.join(name).join("images");
        let mut files: Vec<_> = dir.read_dir().unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        fs::read(&files[0]).unwrap()
    };
    assert_ne!(first_image("a"), first_image("c"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Usage error: unknown subcommand.
    let out = irisgate(&["frobnicate"], root);
    assert_eq!(out.status.code(), Some(1));

    // Usage error: malformed flag value.
    let out = irisgate(
        &["gate", "--pairs", "x", "--metrics", "y", "--rates", "nonsense:values"],
        root,
    );
    assert_eq!(out.status.code(), Some(1));

    // Stage failure: missing input file.
    let out = irisgate(
        &["metrics", "--manifest", "does-not-exist.csv", "--out", "m.csv"],
        root,
    );
    assert_eq!(out.status.code(), Some(2));

    // Success path.
    let out = irisgate(&["--help"], root);
    assert_eq!(out.status.code(), Some(0));
}
