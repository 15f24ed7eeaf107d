//! End-to-end tests of the `rollout` binary: exit codes, report files,
//! monitor replay, and snapshot resume.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rollout_core::controller::{
    step, AlertPolicy, HarmDirection, MetricEvent, MetricSpec, PowerGate, RampPolicy, RolloutPlan,
    RolloutState, RolloutStatus, TestSettings,
};
use rollout_core::rampup::{StageSpec, TimeBasedConfig};
use rollout_core::stats::{Group, TauPolicy, VarianceMethod};

fn rollout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rollout")).args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn power_subcommand_answers_both_query_directions() {
    let out = rollout(&[
        "power",
        "--delta",
        "0.05",
        "--alpha",
        "0.05",
        "--beta",
        "0.1",
        "--var-ctrl",
        "0.21",
        "--var-trt",
        "0.21",
    ]);
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("2836"), "{}", stdout_of(&out));

    let out = rollout(&[
        "power",
        "--delta",
        "0.05",
        "--n",
        "2836",
        "--var-ctrl",
        "0.21",
        "--var-trt",
        "0.21",
    ]);
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("0.9000"), "{}", stdout_of(&out));
}

#[test]
fn power_subcommand_rejects_bad_queries() {
    // zero effect size
    let out = rollout(&[
        "power",
        "--delta",
        "0",
        "--beta",
        "0.1",
        "--var-ctrl",
        "0.21",
        "--var-trt",
        "0.21",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // both target flags at once
    let out = rollout(&[
        "power",
        "--delta",
        "0.05",
        "--beta",
        "0.1",
        "--n",
        "100",
        "--var-ctrl",
        "0.21",
        "--var-trt",
        "0.21",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // neither target flag
    let out = rollout(&["power", "--delta", "0.05", "--var-ctrl", "0.21", "--var-trt", "0.21"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "name": "cli_smoke",
        "plan": {
            "feature_flag": "cli-smoke",
            "metrics": [{ "name": "session_success", "harmful_direction": "decrease" }],
            "policy": { "time_based": { "schedule": [
                { "treatment_pct": 0.2, "duration_hours": 8 },
                { "treatment_pct": 0.5, "duration_hours": 8 }
            ] } },
            "test": { "alpha": 0.05, "tau_policy": { "fixed": { "tau": 0.0004 } } },
            "power_gate": { "mde": 0.5, "beta": 0.1 },
            "assignment_salt": "cli-a",
            "partition_salt": "cli-p",
            "predicted_population_per_stage": 800.0,
            "initial_treatment_pct": 0.2,
            "stage_length_hours": 8
        },
        "population": {
            "users": 100,
            "horizon_hours": 40,
            "kind": { "clustered": { "sessions_per_user_rate": 0.5 } }
        },
        "replications": 6,
        "seed": 7
    }"#;
    let config_path = dir.path().join("scenario.json");
    fs::write(&config_path, config).unwrap();

    let out_dir = dir.path().join("reports");
    let run = |tag: &str| {
        let out = rollout(&[
            "simulate",
            "--config",
            config_path.to_str().unwrap(),
            "--output",
            out_dir.join(tag).to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            fs::read_to_string(out_dir.join(tag).join("cli_smoke_report.json")).unwrap(),
            fs::read_to_string(out_dir.join(tag).join("cli_smoke_report.csv")).unwrap(),
        )
    };
    let (json_a, csv_a) = run("a");
    let (json_b, csv_b) = run("b");
    assert_eq!(json_a, json_b, "reports must not depend on scheduling");
    assert_eq!(csv_a, csv_b);

    let parsed: serde_json::Value = serde_json::from_str(&json_a).unwrap();
    assert_eq!(parsed["scenario"], "cli_smoke");
    assert_eq!(parsed["replications"], 6);
    assert!(csv_a.lines().count() == 2, "header plus one row");
}

#[test]
fn simulate_respects_the_output_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("scenario.json");
    let config = fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/aa_clustered_jackknife.json"),
    )
    .unwrap();
    // shrink the bundled scenario so this stays a smoke test
    let mut parsed: serde_json::Value = serde_json::from_str(&config).unwrap();
    parsed["replications"] = 4.into();
    parsed["population"]["users"] = 60.into();
    parsed["population"]["horizon_hours"] = 30.into();
    fs::write(&config_path, parsed.to_string()).unwrap();

    let env_dir = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_rollout"))
        .args(["simulate", "--config", config_path.to_str().unwrap()])
        .env("ROLLOUT_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_dir.join("aa_clustered_jackknife_report.json").exists());
}

#[test]
fn simulate_rejects_missing_and_malformed_configs() {
    let out = rollout(&["simulate", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = rollout(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn monitor_plan() -> RolloutPlan {
    RolloutPlan {
        feature_flag: "cli-monitor".into(),
        metrics: vec![MetricSpec {
            name: "session_success".into(),
            harmful_direction: HarmDirection::Decrease,
            mde: None,
        }],
        policy: RampPolicy::TimeBased(TimeBasedConfig {
            schedule: vec![StageSpec { treatment_pct: 0.5, duration_hours: 4 }],
        }),
        test: TestSettings {
            alpha: 0.05,
            tau_policy: TauPolicy::Fixed { tau: 4e-4 },
            delta0: 0.0,
            one_sided: false,
        },
        variance_method: VarianceMethod::Naive,
        partitions: 10,
        check_interval_hours: 1,
        power_gate: PowerGate { mde: 0.5, beta: 0.1 },
        assignment_salt: "cli-monitor-a".into(),
        partition_salt: "cli-monitor-p".into(),
        predicted_population_per_stage: 400.0,
        initial_treatment_pct: 0.5,
        stage_length_hours: 4,
        bonferroni: false,
        alert_policy: AlertPolicy::AutoRevert,
    }
}

fn write_stream(path: &Path, hours: u32, trt_mean: f64) {
    let mut lines = Vec::new();
    for hour in 0..hours {
        for i in 0..30 {
            let bump = if i % 2 == 0 { 0.3 } else { -0.3 };
            lines.push(format!(
                r#"{{"hour":{hour},"unit_id":"c{i}","group":"ctrl","metric":"session_success","value":{}}}"#,
                0.7 + bump
            ));
            lines.push(format!(
                r#"{{"hour":{hour},"unit_id":"t{i}","group":"trt","metric":"session_success","value":{}}}"#,
                trt_mean + bump
            ));
        }
    }
    fs::write(path, lines.join("\n")).unwrap();
}

#[test]
fn monitor_replays_to_completion_and_resumes_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("plan.json");
    fs::write(&plan_path, serde_json::to_string_pretty(&monitor_plan()).unwrap()).unwrap();

    let full = dir.path().join("events.jsonl");
    write_stream(&full, 6, 0.7);

    // uninterrupted replay
    let state_a = dir.path().join("a.snapshot.json");
    let out = rollout(&[
        "monitor",
        "--plan",
        plan_path.to_str().unwrap(),
        "--events",
        full.to_str().unwrap(),
        "--state",
        state_a.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log_a = stdout_of(&out);
    assert!(log_a.contains("hour 3: complete"), "{log_a}");

    // the replay must agree with driving the controller in-process
    let plan = monitor_plan();
    let mut state = RolloutState::new(&plan).unwrap();
    let mut expected = String::new();
    for hour in 0..6 {
        if state.status != RolloutStatus::Running {
            break;
        }
        let events: Vec<MetricEvent> = (0..30)
            .flat_map(|i| {
                let bump = if i % 2 == 0 { 0.3 } else { -0.3 };
                [
                    MetricEvent {
                        metric: "session_success".into(),
                        unit_id: format!("c{i}"),
                        group: Group::Ctrl,
                        value: 0.7 + bump,
                    },
                    MetricEvent {
                        metric: "session_success".into(),
                        unit_id: format!("t{i}"),
                        group: Group::Trt,
                        value: 0.7 + bump,
                    },
                ]
            })
            .collect();
        let decision = step(&plan, &mut state, hour, &events).unwrap();
        expected.push_str(&format!("hour {hour}: {decision}\n"));
    }
    assert_eq!(log_a, expected, "CLI replay must match in-process decisions");

    // the same stream split in half with a snapshot in between
    let head = dir.path().join("head.jsonl");
    write_stream(&head, 2, 0.7);
    let state_b = dir.path().join("b.snapshot.json");
    let out1 = rollout(&[
        "monitor",
        "--plan",
        plan_path.to_str().unwrap(),
        "--events",
        head.to_str().unwrap(),
        "--state",
        state_b.to_str().unwrap(),
    ]);
    assert!(out1.status.success());
    let out2 = rollout(&[
        "monitor",
        "--plan",
        plan_path.to_str().unwrap(),
        "--events",
        full.to_str().unwrap(),
        "--state",
        state_b.to_str().unwrap(),
    ]);
    assert!(out2.status.success());
    let resumed = format!("{}{}", stdout_of(&out1), stdout_of(&out2));
    assert_eq!(log_a, resumed, "resumed log must match the uninterrupted one");
    assert_eq!(
        fs::read_to_string(&state_a).unwrap(),
        fs::read_to_string(&state_b).unwrap(),
        "snapshots must converge to the same bytes"
    );

    // feeding the finished rollout more events only warns
    let out3 = rollout(&[
        "monitor",
        "--plan",
        plan_path.to_str().unwrap(),
        "--events",
        full.to_str().unwrap(),
        "--state",
        state_b.to_str().unwrap(),
    ]);
    assert!(out3.status.success());
    assert!(String::from_utf8_lossy(&out3.stderr).contains("already"));
}

#[test]
fn monitor_reverts_on_a_harmful_stream_and_names_the_metric() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("plan.json");
    fs::write(&plan_path, serde_json::to_string_pretty(&monitor_plan()).unwrap()).unwrap();
    let events = dir.path().join("events.jsonl");
    write_stream(&events, 6, 0.45);

    let state = dir.path().join("state.json");
    let out = rollout(&[
        "monitor",
        "--plan",
        plan_path.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
        "--state",
        state.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = stdout_of(&out);
    assert!(log.lines().any(|l| l.contains("revert") && l.contains("session_success")), "{log}");
}

#[test]
fn monitor_rejects_out_of_order_streams() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("plan.json");
    fs::write(&plan_path, serde_json::to_string_pretty(&monitor_plan()).unwrap()).unwrap();
    let events = dir.path().join("events.jsonl");
    fs::write(
        &events,
        concat!(
            r#"{"hour":1,"unit_id":"c0","group":"ctrl","metric":"session_success","value":1.0}"#,
            "\n",
            r#"{"hour":0,"unit_id":"c1","group":"ctrl","metric":"session_success","value":1.0}"#,
        ),
    )
    .unwrap();

    let out = rollout(&[
        "monitor",
        "--plan",
        plan_path.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
        "--state",
        dir.path().join("state.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sorted"));
}
