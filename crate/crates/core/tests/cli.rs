use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lasr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lasr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LASR_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn phantom_then_run_then_ssm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lasr(&["phantom", "--seed", "5", "--out", "ph", "--n-frames", "12", "--effect-delta", "6"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("ph/s1").is_dir() && d.join("ph/s2").is_dir() && d.join("ph/phantom.txt").is_file());

    let o = lasr(&["run", "--before", "ph/s1", "--after", "ph/s2", "--out", "res", "--seed", "5"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(d.join("res/report.txt")).unwrap();
    assert!(report.contains("pairing = static"), "{report}");
    assert!(report.contains("pairs = 2"), "{report}");

    // the first static pair is frame m0 = 10 of each registered movie
    let o = lasr(
        &["ssm", "--before", "res/before_registered.lasr", "--after", "res/after_registered.lasr", "--frame", "10", "--out", "single"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for (mine, pipeline) in [("tmap.csv", "pair0000_tmap.csv"), ("pmap.csv", "pair0000_pmap.csv"), ("pvalues.csv", "pair0000_pvalues.csv")] {
        assert_eq!(
            fs::read_to_string(d.join("single").join(mine)).unwrap(),
            fs::read_to_string(d.join("res").join(pipeline)).unwrap(),
            "{mine}"
        );
    }
}

#[test]
fn run_without_inputs_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = lasr(&["run", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--before"), "{}", stderr(&o));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn out_of_range_fdr_level_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lasr(&["ssm", "--before", "a", "--after", "b", "--q", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = lasr(&["frobnicate"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).to_lowercase().contains("usage"), "{}", stderr(&o));
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lasr(&["segment", "--input", "nope.lasr", "--out", "seg.lasr"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn help_documents_run_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = lasr(&["run", "--help"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--before", "--after", "--phantom", "--q", "--h", "--kernel", "--rim", "--m0", "--max-lag", "--fdr-mode", "--two-sided", "--seed", "--out", "--mean-frame"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn seed_env_is_overridden_by_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |seed_env: &str, extra: &[&str], out: &str| {
        let mut args = vec!["run", "--phantom", "--out", out];
        args.extend_from_slice(extra);
        let o = Command::new(env!("CARGO_BIN_EXE_lasr"))
            .args(&args)
            .current_dir(d)
            .env("LASR_SEED", seed_env)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(d.join(out).join("report.txt")).unwrap()
    };
    assert!(run("3", &[], "a").contains("seed = 3"));
    assert!(run("3", &["--seed", "9"], "b").contains("seed = 9"));
}
