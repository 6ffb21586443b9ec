use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn hrmsdt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrmsdt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 12] = [
    "--learners",
    "8",
    "--dims",
    "3",
    "--cases",
    "2",
    "--raters",
    "2",
    "--items-per-case",
    "6",
    "--universal-items-per-case",
    "2",
];

fn simulate_small(out: &Path, seed: &str) {
    let mut args = vec![
        "simulate",
        "--out",
        path_str(out),
        "--seed",
        seed,
        "--min-items-per-dim",
        "2",
    ];
    args.extend(SMALL);
    let o = hrmsdt(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn fit_small(out: &Path) -> Output {
    hrmsdt(&[
        "fit",
        "--out",
        path_str(out),
        "--chains",
        "2",
        "--warmup",
        "150",
        "--draws",
        "100",
        "--warn-only",
    ])
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// One simulated and fitted run shared by the read-only tests.
fn fitted_run() -> &'static Path {
    static RUN: OnceLock<tempfile::TempDir> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        simulate_small(dir.path(), "11");
        let o = fit_small(dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        dir
    })
    .path()
}

#[test]
fn help_documents_every_subcommand() {
    let o = hrmsdt(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["simulate", "fit", "analyze", "check-grad"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    let o = hrmsdt(&["fit", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--config",
        "--seed",
        "--out",
        "--chains",
        "--warmup",
        "--draws",
        "--likelihood",
        "--warn-only",
    ] {
        assert!(text.contains(flag), "{flag}");
    }
    assert!(text.contains("[default: 1000]"));
}

#[test]
fn default_simulation_has_study_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let o = hrmsdt(&["simulate", "--out", path_str(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("blueprint.json")).unwrap()).unwrap();
    assert_eq!(bp["dims"], 6);
    assert_eq!(bp["cases"].as_array().unwrap().len(), 4);
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["n_learners"], 40);
    assert_eq!(truth["n_raters"], 4);
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate_small(a.path(), "7");
    simulate_small(b.path(), "7");
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    let c = tempfile::tempdir().unwrap();
    simulate_small(c.path(), "8");
    assert_ne!(
        std::fs::read(a.path().join("ratings.csv")).unwrap(),
        std::fs::read(c.path().join("ratings.csv")).unwrap()
    );
}

#[test]
fn infeasible_design_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hrmsdt(&[
        "simulate",
        "--out",
        path_str(dir.path()),
        "--items-per-case",
        "2",
        "--min-items-per-dim",
        "5",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
}

#[test]
fn missing_ratings_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "3");
    let missing = dir.path().join("nope.csv");
    let o = hrmsdt(&["fit", "--out", path_str(dir.path()), "--ratings", path_str(&missing)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn smoke_fit_writes_draws_and_flags_low_ess() {
    let run = fitted_run();
    for f in [
        "draws/chain_1.csv",
        "draws/chain_2.csv",
        "fit_report.json",
        "fit_config.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report["low_ess"], true);
    assert_eq!(report["config"]["n_chains"], 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["steps"]["fit"]["outputs"].as_object().unwrap();
    assert!(outputs.contains_key("draws/chain_1.csv"));
    assert_eq!(outputs["fit_report.json"].as_str().unwrap().len(), 64);
}

#[test]
fn strict_thresholds_give_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "4");
    let o = hrmsdt(&[
        "fit",
        "--out",
        path_str(dir.path()),
        "--chains",
        "2",
        "--warmup",
        "50",
        "--draws",
        "50",
        "--max-rhat",
        "1.0",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("R-hat"));
    assert!(dir.path().join("fit_report.json").exists());
}

fn copy_run(src: &Path) -> tempfile::TempDir {
    let dst = tempfile::tempdir().unwrap();
    for (rel, bytes) in snapshot(src) {
        let p = dst.path().join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, bytes).unwrap();
    }
    dst
}

#[test]
fn analyze_with_and_without_truth() {
    let run = copy_run(fitted_run());
    let o = hrmsdt(&["analyze", "--out", path_str(run.path()), "--n-perm", "99"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = run.path().join("analysis");
    for f in [
        "recovery.csv",
        "theta_corr_truth.csv",
        "theta_corr_est.csv",
        "case_shifts.csv",
        "consistency_by_dim.csv",
        "consistency_agg.csv",
        "profile_consistency.csv",
        "rater_dd.csv",
        "rater_dc.csv",
        "item_flags.csv",
        "analysis.json",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_dir(a.join("icc")).unwrap().count(), 12);
    let first = snapshot(run.path());

    let o = hrmsdt(&["analyze", "--out", path_str(run.path()), "--n-perm", "99"]);
    assert_eq!(code(&o), 0);
    assert_eq!(snapshot(run.path()), first);

    let o = hrmsdt(&["analyze", "--out", path_str(run.path()), "--n-perm", "99", "--no-truth"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("recovery unavailable"));
    assert!(!a.join("recovery.csv").exists());
    assert!(a.join("case_shifts.csv").exists());
}

#[test]
fn analyze_refuses_changed_inputs() {
    let run = copy_run(fitted_run());
    let ratings = run.path().join("ratings.csv");
    let text = std::fs::read_to_string(&ratings).unwrap();
    // change the score on the last applicable row
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = lines
        .iter_mut()
        .rev()
        .find(|l| l.split(',').nth(3) == Some("1"))
        .unwrap();
    let score = row.pop().unwrap();
    row.push(if score == '1' { '2' } else { '1' });
    let text = lines.join("\n") + "\n";
    std::fs::write(&ratings, text).unwrap();
    let o = hrmsdt(&["analyze", "--out", path_str(run.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ratings.csv"), "{}", stderr(&o));
}

#[test]
fn analyze_rejects_mismatched_draws() {
    let run = copy_run(fitted_run());
    let other = tempfile::tempdir().unwrap();
    let mut args = vec![
        "simulate",
        "--out",
        path_str(other.path()),
        "--seed",
        "2",
        "--min-items-per-dim",
        "2",
    ];
    args.extend(SMALL);
    let k = args.iter().position(|a| *a == "--learners").unwrap();
    args[k + 1] = "9";
    assert_eq!(code(&hrmsdt(&args)), 0);
    let o = hrmsdt(&[
        "analyze",
        "--out",
        path_str(run.path()),
        "--blueprint",
        path_str(&other.path().join("blueprint.json")),
        "--ratings",
        path_str(&other.path().join("ratings.csv")),
        "--no-truth",
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn check_grad_passes_and_catches_sign_flip() {
    for mode in ["per-rating", "shared-latent"] {
        let o = hrmsdt(&["check-grad", "--likelihood", mode]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(r["passed"], true);
        assert_eq!(r["points"], 20);
        assert!(r["max_rel_error"].as_f64().unwrap() < 1e-5);
    }
    let o = hrmsdt(&["check-grad", "--inject-sign-flip", "4"]);
    assert_eq!(code(&o), 2);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["passed"], false);
    assert_eq!(r["worst"]["coordinate"], 4);
    assert!(stderr(&o).contains("theta (coordinate 4)"), "{}", stderr(&o));
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let runs: Vec<tempfile::TempDir> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            simulate_small(dir.path(), "21");
            assert_eq!(code(&fit_small(dir.path())), 0);
            let o = hrmsdt(&["analyze", "--out", path_str(dir.path()), "--n-perm", "99"]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            dir
        })
        .collect();
    let (a, b) = (snapshot(runs[0].path()), snapshot(runs[1].path()));
    assert!(a.len() > 20);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(b[k] == *v, "{} differs", k.display());
    }
}
