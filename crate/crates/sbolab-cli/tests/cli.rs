//! End-to-end subcommand tests driving the built binary through a small
//! file-coupled pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn sbolab<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_sbolab"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("spawn sbolab")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_is_deterministic_and_clean() {
    let a = sbolab(["run", "--workload", "sha", "--seed", "1"]);
    let b = sbolab(["run", "--workload", "sha", "--seed", "1"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("clean_exit"));
    assert!(stdout(&a).contains(",clean,"));
}

#[test]
fn run_attack_reports_payload_executed() {
    let out = sbolab([
        "run",
        "--workload",
        "aes",
        "--seed",
        "7",
        "--attack",
        "--payload-pct",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let row = text.lines().nth(1).expect("data row");
    assert!(row.contains(",attack,"), "{row}");
    assert!(row.ends_with("true"), "{row}");
}

#[test]
fn usage_errors_exit_1() {
    let out = sbolab(["run", "--workload", "nonsense", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    // --payload-pct without --attack is a flag conflict
    let out = sbolab(["run", "--workload", "aes", "--seed", "1", "--payload-pct", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = sbolab(["definitely-not-a-subcommand"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn assemble_subcommand_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("prog.s");
    std::fs::write(&src, "li a0, 41\naddi a0, a0, 1\necall\n").unwrap();
    let listing = dir.path().join("prog.lst");
    let out = sbolab([
        "assemble".as_ref(),
        src.as_os_str(),
        "--out".as_ref(),
        listing.as_os_str(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&listing).unwrap();
    assert!(text.contains("addi x10, x10, 1"), "{text}");

    // the listing is valid input to assemble again
    let relisting = dir.path().join("prog2.lst");
    let out = sbolab([
        "assemble".as_ref(),
        listing.as_os_str(),
        "--out".as_ref(),
        relisting.as_os_str(),
    ]);
    assert!(out.status.success());
    assert_eq!(text, std::fs::read_to_string(&relisting).unwrap());

    let bad = dir.path().join("bad.s");
    std::fs::write(&bad, "frobnicate x1, x2\n").unwrap();
    let out = sbolab([
        "assemble".as_ref(),
        bad.as_os_str(),
        "--out".as_ref(),
        listing.as_os_str(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"));
}

fn write_campaign(dir: &Path, workload: &str, out_name: &str) {
    let out = sbolab([
        "campaign",
        "--workload",
        workload,
        "--out",
        dir.join(out_name).to_str().unwrap(),
        "--train-runs",
        "120",
        "--test-runs",
        "60",
        "--payload-pcts",
        "1",
        "--master-seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn pipeline_campaign_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    write_campaign(dir.path(), "sha", "data/sha");

    let train_csv = dir.path().join("data/sha/train.csv");
    let test_csv = dir.path().join("data/sha/test_pct1.csv");
    let calib_csv = dir.path().join("data/sha/calib_pct1.csv");
    assert!(train_csv.exists() && test_csv.exists() && calib_csv.exists());

    // train with probe ranking and a single feature
    let model = dir.path().join("lof.model");
    let out = sbolab([
        "train",
        "--detector",
        "lof",
        "--train",
        train_csv.to_str().unwrap(),
        "--features",
        "1",
        "--rank",
        "probe",
        "--calib",
        calib_csv.to_str().unwrap(),
        "--lof-k",
        "10",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report = dir.path().join("cell.csv");
    let out = sbolab([
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--test",
        test_csv.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("accuracy"));

    let figs = dir.path().join("figs");
    let out = sbolab([
        "report",
        "--in",
        report.to_str().unwrap(),
        "--out",
        figs.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(figs.join("results.csv").exists());
    assert!(figs.join("fig_sha.svg").exists());
}

#[test]
fn train_rejects_attack_rows_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_campaign(dir.path(), "aes", "data/aes");
    // a test set contains attack rows; using it as training data must fail
    let out = sbolab([
        "train",
        "--detector",
        "lof",
        "--train",
        dir.path().join("data/aes/test_pct1.csv").to_str().unwrap(),
        "--out",
        dir.path().join("m.model").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("row"), "{}", stderr(&out));
}

#[test]
fn campaign_reruns_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_campaign(dir.path(), "dijkstra", "a");
    write_campaign(dir.path(), "dijkstra", "b");
    for name in ["train.csv", "test_pct1.csv", "calib_pct1.csv", "metadata.txt"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn campaign_config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("campaign.conf");
    std::fs::write(
        &cfg,
        format!(
            "# desk campaign\nworkload = sha\nn_train_clean = 100\nn_test = 40\n\
             payload_pcts = 1\nmaster_seed = 3\nout_dir = {}\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = sbolab(["campaign", "--config", cfg.to_str().unwrap(), "--test-runs", "20"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let test = std::fs::read_to_string(dir.path().join("out/test_pct1.csv")).unwrap();
    assert_eq!(test.lines().count(), 21); // header + 20 rows (flag wins)

    // unknown keys are rejected
    std::fs::write(&cfg, "workload = sha\nmystery = 1\n").unwrap();
    let out = sbolab(["campaign", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
