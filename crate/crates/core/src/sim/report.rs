//! Aggregation of replication results and report serialization.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::{RepOutcome, ReplicationResult, ScenarioConfig};
use crate::stats::VarianceMethod;

/// Averages over fewer than this many replications are suppressed rather
/// than reported as if they meant something.
pub const MIN_SUPPORT: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario: String,
    pub policy: String,
    pub variance_method: VarianceMethod,
    pub replications: u32,
    pub detected: u32,
    pub completed: u32,
    pub censored: u32,
    /// Share of replications the sequential test flagged.
    pub positive_rate: f64,
    pub avg_hours_to_detection: Option<f64>,
    pub avg_hours_to_full_rollout: Option<f64>,
    pub avg_sample_at_detection: Option<f64>,
    pub avg_sample_at_full_rollout: Option<f64>,
    /// Mean treatment share at each stage window, over replications that
    /// reached it.
    pub avg_stage_pcts: Vec<f64>,
    pub avg_total_loss: f64,
    pub loss_tolerance: Option<f64>,
    /// Share of replications whose accrued harm exceeded the tolerance.
    pub frac_exceeding_loss_tolerance: Option<f64>,
}

fn mean_or_none(values: &[f64]) -> Option<f64> {
    (values.len() >= MIN_SUPPORT).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn aggregate(scenario: &ScenarioConfig, results: &[ReplicationResult]) -> EvaluationReport {
    let mut det_hours = Vec::new();
    let mut det_samples = Vec::new();
    let mut full_hours = Vec::new();
    let mut full_samples = Vec::new();
    let mut censored = 0u32;
    for r in results {
        match r.outcome {
            RepOutcome::Detected { hour } => {
                det_hours.push(hour as f64);
                det_samples.push(r.treatment_n as f64);
            }
            RepOutcome::FullyRolledOut { hour } => {
                full_hours.push(hour as f64);
                full_samples.push(r.treatment_n as f64);
            }
            RepOutcome::Censored => censored += 1,
        }
    }

    let max_stages = results.iter().map(|r| r.stage_pcts.len()).max().unwrap_or(0);
    let mut avg_stage_pcts = Vec::new();
    for s in 0..max_stages {
        let reached: Vec<f64> =
            results.iter().filter_map(|r| r.stage_pcts.get(s).copied()).collect();
        match mean_or_none(&reached) {
            Some(m) => avg_stage_pcts.push(m),
            None => break,
        }
    }

    let loss_tolerance = scenario.effective_loss_tolerance();
    let n = results.len() as f64;
    EvaluationReport {
        scenario: scenario.name.clone(),
        policy: scenario.plan.policy.name().to_string(),
        variance_method: scenario.plan.variance_method,
        replications: results.len() as u32,
        detected: det_hours.len() as u32,
        completed: full_hours.len() as u32,
        censored,
        positive_rate: det_hours.len() as f64 / n,
        avg_hours_to_detection: mean_or_none(&det_hours),
        avg_hours_to_full_rollout: mean_or_none(&full_hours),
        avg_sample_at_detection: mean_or_none(&det_samples),
        avg_sample_at_full_rollout: mean_or_none(&full_samples),
        avg_stage_pcts,
        avg_total_loss: results.iter().map(|r| r.total_loss).sum::<f64>() / n,
        loss_tolerance,
        frac_exceeding_loss_tolerance: loss_tolerance
            .map(|c| results.iter().filter(|r| r.total_loss > c).count() as f64 / n),
    }
}

pub fn write_json(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.6}"))
}

/// One row per report; stage percentages packed into a single
/// pipe-separated column so the row count stays fixed.
pub fn write_csv(reports: &[EvaluationReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "policy",
        "variance_method",
        "replications",
        "detected",
        "completed",
        "censored",
        "positive_rate",
        "avg_hours_to_detection",
        "avg_hours_to_full_rollout",
        "avg_sample_at_detection",
        "avg_sample_at_full_rollout",
        "avg_stage_pcts",
        "avg_total_loss",
        "loss_tolerance",
        "frac_exceeding_loss_tolerance",
    ])?;
    for r in reports {
        let stages = r.stage_pcts_formatted();
        w.write_record([
            r.scenario.clone(),
            r.policy.clone(),
            format!("{:?}", r.variance_method).to_lowercase(),
            r.replications.to_string(),
            r.detected.to_string(),
            r.completed.to_string(),
            r.censored.to_string(),
            format!("{:.6}", r.positive_rate),
            opt_cell(r.avg_hours_to_detection),
            opt_cell(r.avg_hours_to_full_rollout),
            opt_cell(r.avg_sample_at_detection),
            opt_cell(r.avg_sample_at_full_rollout),
            stages,
            format!("{:.6}", r.avg_total_loss),
            opt_cell(r.loss_tolerance),
            opt_cell(r.frac_exceeding_loss_tolerance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl EvaluationReport {
    pub fn stage_pcts_formatted(&self) -> String {
        self.avg_stage_pcts.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>().join("|")
    }
}
