use std::path::Path;
use std::process::{Command, Output};

fn actinf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actinf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_tables_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let o = actinf(
        &["run", "--agent", "efe", "--seed", "7", "--out", "res"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final score"));
    for f in [
        "trials.csv",
        "beliefs.csv",
        "policies.csv",
        "breakdown.csv",
        "config.json",
        "plots/cumulative_score.csv",
    ] {
        assert!(dir.path().join("res").join(f).is_file(), "{f}");
    }
}

#[test]
fn json_format() {
    let dir = tempfile::tempdir().unwrap();
    let o = actinf(
        &[
            "run", "--agent", "eig", "--trials", "5", "--format", "json", "--out", "r",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("r/record.json").is_file());
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        actinf(&["run", "--agent", "nope"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(
        actinf(&["run", "--trials", "many"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(actinf(&[], dir.path()).status.code(), Some(1));
}

#[test]
fn state_agent_without_prior_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = actinf(&["run", "--agent", "eu-states"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("prior_states"), "{}", stderr(&o));
}

#[test]
fn model_errors_exit_2_and_io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut doc = actinf::tmaze::build_tmaze_model().to_json();
    doc["A"][1][1] = serde_json::json!(0.5);
    std::fs::write(&bad, doc.to_string()).unwrap();
    let o = actinf(&["validate", "--model", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("A"));

    let o = actinf(&["validate", "--model", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn kl_control_agent_runs_with_a_state_prior() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = actinf::tmaze::build_tmaze_model();
    model.prior_states = Some(vec![1.0, 4.0, 0.01, 1.0, 1.0, 0.01, 4.0, 1.0]);
    actinf::save_spec(&model, dir.path().join("m.json")).unwrap();
    for agent in ["klc", "eu-states"] {
        let o = actinf(
            &[
                "run", "--agent", agent, "--model", "m.json", "--trials", "3", "--out", agent,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{agent}: {}", stderr(&o));
    }
}

#[test]
fn trial_and_decompose_print_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = actinf(&["trial", "--index", "10"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(
        text.contains("context black") && text.contains("cue-black"),
        "{text}"
    );

    let o = actinf(
        &[
            "decompose",
            "--epoch",
            "2",
            "--history",
            "3",
            "--beliefs",
            "0,0,0,1,0,0,0,0",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.936865"));
}
