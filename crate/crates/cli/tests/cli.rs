use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-explorer"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn check(out: Output, code: i32) -> Output {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn run_evaluate_report() {
    let root = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(smoke_config())
        .arg("--output-dir")
        .arg(root.path())
        .args(["--runs", "6"])
        .output()
        .unwrap();
    let out = check(out, 0);
    assert!(stdout(&out).contains("18 runs executed, 0 already complete, 0 failed"));

    let exp = root.path().join("smoke");
    let again = check(
        bin()
            .args(["run", "--config"])
            .arg(smoke_config())
            .arg("--output-dir")
            .arg(root.path())
            .args(["--runs", "6"])
            .output()
            .unwrap(),
        0,
    );
    assert!(stdout(&again).contains("0 runs executed, 18 already complete"));

    let out = check(
        bin()
            .arg("evaluate")
            .arg(&exp)
            .args(["--baseline", "hybrid"])
            .output()
            .unwrap(),
        0,
    );
    assert!(stdout(&out).contains("baseline hybrid"));
    let csv = std::fs::read_to_string(exp.join("reports/jaccard.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let out = check(bin().arg("report").arg(&exp).output().unwrap(), 0);
    let text = stdout(&out);
    assert!(text.contains("adam") && text.contains("6/6") && text.contains("jaccard.csv"));

    check(
        bin()
            .arg("evaluate")
            .arg(&exp)
            .args(["--baseline", "sgd"])
            .output()
            .unwrap(),
        1,
    );
}

#[test]
fn domain_errors_exit_one() {
    let root = tempfile::tempdir().unwrap();
    check(
        bin()
            .arg("evaluate")
            .arg(root.path().join("absent"))
            .output()
            .unwrap(),
        1,
    );
    let bad = root.path().join("bad.toml");
    std::fs::write(&bad, "text = \"x\"\nrunz = 3\n").unwrap();
    let out = check(
        bin().args(["run", "--config"]).arg(&bad).output().unwrap(),
        1,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn usage_errors_exit_two() {
    check(bin().output().unwrap(), 2);
    check(bin().arg("run").output().unwrap(), 2);
    check(
        bin()
            .args(["evaluate", "x", "--no-such-flag"])
            .output()
            .unwrap(),
        2,
    );
    check(
        bin()
            .args(["gradcheck", "--probes", "many"])
            .output()
            .unwrap(),
        2,
    );
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let out = check(
        bin()
            .args(["gradcheck", "--probes", "2", "--config"])
            .arg(smoke_config())
            .output()
            .unwrap(),
        0,
    );
    assert!(stdout(&out).contains("PASS (2 probes"));
    let out = check(
        bin()
            .args([
                "gradcheck",
                "--probes",
                "1",
                "--tolerance",
                "1e-30",
                "--config",
            ])
            .arg(smoke_config())
            .output()
            .unwrap(),
        1,
    );
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn bench_reports_each_strategy() {
    let out = check(
        bin()
            .args(["bench", "--evaluations", "2", "--config"])
            .arg(smoke_config())
            .output()
            .unwrap(),
        0,
    );
    let text = stdout(&out);
    assert!(text.contains("ms/eval"));
    for label in ["adam", "cmaes", "hybrid"] {
        assert!(text.contains(label), "{text}");
    }
}
