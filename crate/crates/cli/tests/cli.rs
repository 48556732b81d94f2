use std::fs;
use std::process::Command;

fn rnf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rnf"))
}

#[test]
fn survey_without_trials_writes_an_empty_result_file() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("survey.toml");
    fs::write(&cfg, "experiment = \"survey\"\ntrials = 0\noutput = \"empty\"\n").unwrap();
    let out = rnf().arg("run").arg(&cfg).env("RNF_OUTPUT_ROOT", root.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = root.path().join("empty/records.jsonl");
    assert_eq!(fs::read_to_string(records).unwrap(), "");
}

#[test]
fn plane_wave_run_then_plot_tables() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("pw.toml");
    fs::write(&cfg, "experiment = \"simulate\"\ninitial = \"plane-wave\"\nwindow = 3\nt_final = 1.0\nsample_every = 10\n").unwrap();
    let out = rnf().args(["run", cfg.to_str().unwrap(), "--out", "pw"]).env("RNF_OUTPUT_ROOT", root.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = rnf().args(["plotdata", "pw"]).env("RNF_OUTPUT_ROOT", root.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let drift = fs::read_to_string(root.path().join("pw/plot/drift.csv")).unwrap();
    assert_eq!(drift.lines().next(), Some("t,D_s"));
    assert!(drift.lines().count() > 2);
}

#[test]
fn invalid_config_fails_with_a_message() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.toml");
    fs::write(&cfg, "experiment = \"survey\"\nr = 1\n").unwrap();
    let out = rnf().arg("run").arg(&cfg).env("RNF_OUTPUT_ROOT", root.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("r = 1"));
}

#[test]
fn plotdata_on_missing_records_fails() {
    let root = tempfile::tempdir().unwrap();
    let out = rnf().args(["plotdata", "nowhere"]).env("RNF_OUTPUT_ROOT", root.path()).output().unwrap();
    assert!(!out.status.success());
}
