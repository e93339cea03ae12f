use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn elsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn ci_on_packaged_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = root().join("data/mm1");
    let out_path = dir.path().join("ci.json");
    let run = |workers: &str| {
        let out = elsim(&[
            "ci",
            "--model",
            "mm1",
            "--data",
            p(&data),
            "--method",
            "fel",
            "--r1",
            "1900",
            "--r2",
            "50",
            "--seed",
            "1",
            "--out",
            p(&out_path),
            "--stable-output",
            "--workers",
            workers,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        (stdout(&out), std::fs::read(&out_path).unwrap())
    };
    let a = run("1");
    let b = run("3");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let (lo, hi) = a.0.trim().split_once(',').unwrap();
    let (lo, hi): (f64, f64) = (lo.parse().unwrap(), hi.parse().unwrap());
    assert!(0.0 <= lo && lo < hi);
}

#[test]
fn missing_data_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = elsim(&[
        "ci",
        "--model",
        "mm1",
        "--data",
        p(dir.path()),
        "--method",
        "fel",
        "--r1",
        "100",
        "--r2",
        "10",
        "--out",
        p(&dir.path().join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("input_1.csv"), "{}", stderr(&out));
}

#[test]
fn tiny_bootstrap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = root().join("data/mm1");
    let out = elsim(&[
        "ci",
        "--model",
        "mm1",
        "--data",
        p(&data),
        "--method",
        "boot",
        "--b",
        "2",
        "--rb",
        "5",
        "--out",
        p(&dir.path().join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("B too small for requested level"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn solve_closed_form_and_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let coeffs = dir.path().join("g.csv");
    std::fs::write(&coeffs, "0,1\n").unwrap();
    let out = elsim(&[
        "solve",
        "--coeffs",
        p(&coeffs),
        "--alpha",
        "0.10",
        "--out-dir",
        p(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let first = stdout(&out).lines().next().unwrap().to_string();
    let nums: Vec<f64> = first
        .split_whitespace()
        .map(|t| t.split_once('=').unwrap().1.parse().unwrap())
        .collect();
    let chi2: f64 = 2.705543454095404;
    let disc = (1.0 - (-chi2 / 2.0).exp()).sqrt();
    assert!((nums[0] - (1.0 - disc) / 2.0).abs() < 1e-8);
    assert!((nums[1] - (1.0 + disc) / 2.0).abs() < 1e-8);
    assert!(
        dir.path().join("weights_min.csv").exists() && dir.path().join("weights_max.csv").exists()
    );

    std::fs::write(&coeffs, "2,2,2\n").unwrap();
    let out = elsim(&["solve", "--coeffs", p(&coeffs), "--out-dir", p(dir.path())]);
    assert!(out.status.success());
    assert!(
        stdout(&out).starts_with("degenerate min=2 max=2"),
        "{}",
        stdout(&out)
    );
}

const SMALL_CONFIG: &str = r#"
name = "small"
sizes = [30, 25]
replications = 12
seed = 5
total_budget = 400

[model]
preset = "mm1"

[truth]
value = 2.361190644060265
allow_imprecise = true

[[methods]]
method = "fel"
r1 = 300
r2 = 50

[[methods]]
method = "eel"
r1 = 300
r2 = 50

[[methods]]
method = "boot"
b = 50
rb = 8

[[methods]]
method = "delta"
rd = 400
"#;

#[test]
fn experiment_output_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let run = |workers: &str| {
        let out_dir = dir.path().join(format!("w{workers}"));
        let out = elsim(&[
            "experiment",
            "--config",
            p(&cfg),
            "--out",
            p(&out_dir),
            "--workers",
            workers,
            "--stable-output",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        ["results.csv", "results.json", "manifest.json"]
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
    };
    let one = run("1");
    let eight = run("8");
    assert_eq!(one, eight);
    let csv = String::from_utf8(one[0].clone()).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.contains(",NA,")));
}

#[test]
fn zero_replications_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k0.cfg");
    std::fs::write(
        &cfg,
        SMALL_CONFIG.replace("replications = 12", "replications = 0"),
    )
    .unwrap();
    let out = elsim(&[
        "experiment",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("replications"), "{}", stderr(&out));
}

#[test]
fn truth_pin_rewrites_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let out = elsim(&[
        "truth",
        "--config",
        p(&cfg),
        "--n",
        "20000",
        "--seed",
        "3",
        "--pin",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (value, _) = stdout(&out)
        .trim()
        .split_once(',')
        .map(|(v, s)| (v.to_string(), s.to_string()))
        .unwrap();
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains(&format!("value = {value}")), "{text}");
    assert!(text.contains("oracle_n = 20000") && text.contains("oracle_seed = 3"));
    assert!(text.contains("[[methods]]\nmethod = \"delta\""));
    // a pinned config still runs
    let out = elsim(&[
        "experiment",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("o")),
        "--replications",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}
