//! rollout: staged-rollout decision engine CLI.
//!
//! `simulate` runs a Monte Carlo scenario and writes JSON + CSV reports,
//! `monitor` replays a recorded hourly event stream through the controller
//! with snapshot resume, and `power` answers sample-size and power queries.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Deserialize;

use rollout_core::controller::{
    restore_snapshot, save_snapshot, step, MetricEvent, RolloutPlan, RolloutState, RolloutStatus,
};
use rollout_core::sim::{report, run_experiment, ScenarioConfig};
use rollout_core::stats::{power_query, Group, PowerAnswer, PowerQuery, PowerTarget};
use rollout_core::Error;

#[derive(Parser)]
#[command(name = "rollout", version, about = "Staged feature-rollout decision engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a simulation scenario and write evaluation reports
    Simulate(SimulateArgs),
    /// Replay an hourly event stream through the rollout controller
    Monitor(MonitorArgs),
    /// Query required sample size or achieved power for the sequential test
    Power(PowerArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Directory the report files go to
    #[arg(long, env = "ROLLOUT_OUTPUT_DIR", default_value = ".")]
    output: PathBuf,
}

#[derive(Args)]
struct MonitorArgs {
    /// Rollout plan file (JSON)
    #[arg(long)]
    plan: PathBuf,
    /// Event stream, one JSON record per line, sorted by hour
    #[arg(long)]
    events: PathBuf,
    /// Snapshot path; loaded when present, written back after the replay
    #[arg(long)]
    state: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("target").required(true).args(["beta", "n"])))]
struct PowerArgs {
    /// Minimum detectable effect (absolute difference in metric means)
    #[arg(long, allow_hyphen_values = true)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Per-observation variance in the control arm
    #[arg(long)]
    var_ctrl: f64,
    /// Per-observation variance in the treatment arm
    #[arg(long)]
    var_trt: f64,
    /// Type II error rate: ask for the per-arm sample size reaching power 1-beta
    #[arg(long)]
    beta: Option<f64>,
    /// Per-arm sample size: ask for the power it delivers
    #[arg(long)]
    n: Option<f64>,
}

/// One event-stream line. `hour` buckets the record; the rest mirrors
/// the controller's event type.
#[derive(Deserialize)]
struct EventFileRecord {
    hour: u32,
    unit_id: String,
    group: Group,
    metric: String,
    value: f64,
}

enum Failure {
    /// Bad flags, unreadable or malformed inputs, plan/config validation.
    Usage(String),
    /// Everything that went wrong after the inputs checked out.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::InvalidQuery(_)
            | Error::Parse(_)
            | Error::DataQuality(_)
            | Error::Snapshot(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(&args),
        Cmd::Monitor(args) => cmd_monitor(&args),
        Cmd::Power(args) => cmd_power(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let raw = read_input(&args.config, "config")?;
    let scenario: ScenarioConfig =
        serde_json::from_str(&raw).map_err(|e| Failure::Usage(format!("bad config: {e}")))?;
    scenario.validate()?;

    let rep = run_experiment(&scenario)?;

    fs::create_dir_all(&args.output)
        .map_err(|e| Failure::Runtime(format!("cannot create output dir: {e}")))?;
    let json_path = args.output.join(format!("{}_report.json", rep.scenario));
    let csv_path = args.output.join(format!("{}_report.csv", rep.scenario));
    report::write_json(&rep, &json_path)?;
    report::write_csv(std::slice::from_ref(&rep), &csv_path)?;

    println!(
        "scenario {}: {} replications ({} policy, {:?} variance)",
        rep.scenario, rep.replications, rep.policy, rep.variance_method
    );
    println!(
        "  detected {} ({:.1}%), completed {}, censored {}",
        rep.detected,
        100.0 * rep.positive_rate,
        rep.completed,
        rep.censored
    );
    if let Some(h) = rep.avg_hours_to_detection {
        println!("  avg hours to detection: {h:.1}");
    }
    if let Some(h) = rep.avg_hours_to_full_rollout {
        println!("  avg hours to full rollout: {h:.1}");
    }
    match (rep.loss_tolerance, rep.frac_exceeding_loss_tolerance) {
        (Some(tol), Some(frac)) => println!(
            "  avg loss {:.2} (tolerance {:.2}, {:.1}% of runs exceeding)",
            rep.avg_total_loss,
            tol,
            100.0 * frac
        ),
        _ => println!("  avg loss {:.2}", rep.avg_total_loss),
    }
    println!("  wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn cmd_monitor(args: &MonitorArgs) -> Result<(), Failure> {
    let plan: RolloutPlan = serde_json::from_str(&read_input(&args.plan, "plan")?)
        .map_err(|e| Failure::Usage(format!("bad plan: {e}")))?;
    plan.validate()?;

    let mut state = if args.state.exists() {
        restore_snapshot(&plan, &read_input(&args.state, "snapshot")?)?
    } else {
        RolloutState::new(&plan)?
    };

    let mut by_hour: BTreeMap<u32, Vec<MetricEvent>> = BTreeMap::new();
    let mut last_hour = None;
    for (idx, line) in read_input(&args.events, "events")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventFileRecord = serde_json::from_str(line)
            .map_err(|e| Failure::Usage(format!("events line {}: {e}", idx + 1)))?;
        if last_hour.is_some_and(|prev| rec.hour < prev) {
            return Err(Failure::Usage(format!(
                "events line {}: hour {} after hour {}, the stream must be sorted",
                idx + 1,
                rec.hour,
                last_hour.unwrap()
            )));
        }
        last_hour = Some(rec.hour);
        by_hour.entry(rec.hour).or_default().push(MetricEvent {
            metric: rec.metric,
            unit_id: rec.unit_id,
            group: rec.group,
            value: rec.value,
        });
    }

    // Hours the snapshot already covers are skipped so a resumed replay
    // picks up exactly where the interrupted one stopped.
    if let Some(max_hour) = last_hour {
        let empty = Vec::new();
        for hour in state.hours_processed..=max_hour {
            if state.status != RolloutStatus::Running {
                let leftover = by_hour.range(hour..).count();
                if leftover > 0 {
                    eprintln!(
                        "warning: rollout is already {:?}; skipping {leftover} remaining event hour(s)",
                        state.status
                    );
                }
                break;
            }
            let events = by_hour.get(&hour).unwrap_or(&empty);
            let decision = step(&plan, &mut state, hour, events)?;
            let mut line = format!("hour {hour}: {decision}");
            if let Some(rec) = state.decision_log.last() {
                if rec.hour == hour && !rec.alerts.is_empty() {
                    line.push_str(&format!(" (alert: {})", rec.alerts.join(", ")));
                }
            }
            println!("{line}");
        }
    }

    let snapshot = save_snapshot(&plan, &state)?;
    fs::write(&args.state, snapshot)
        .map_err(|e| Failure::Runtime(format!("cannot write snapshot: {e}")))?;
    eprintln!("snapshot written to {}", args.state.display());
    Ok(())
}

fn cmd_power(args: &PowerArgs) -> Result<(), Failure> {
    let target = match (args.beta, args.n) {
        (Some(beta), None) => PowerTarget::Beta(beta),
        (None, Some(n)) => PowerTarget::N(n),
        _ => unreachable!("clap enforces exactly one of --beta/--n"),
    };
    let query = PowerQuery {
        delta: args.delta,
        alpha: args.alpha,
        v_ctrl: args.var_ctrl,
        v_trt: args.var_trt,
        target,
    };
    match power_query(&query)? {
        PowerAnswer::SampleSize { n, small_sample } => {
            println!("required per-arm sample size: {:.0} (exact {n:.2})", n.ceil());
            if small_sample {
                println!("note: estimates under 500 run small; treat this as a lower bound");
            }
        }
        PowerAnswer::Power { power } => {
            println!("estimated power: {power:.4}");
        }
    }
    Ok(())
}
