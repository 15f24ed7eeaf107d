//! Monte Carlo evaluation of full rollout configurations: false positive
//! rates under A/A, detection power and latency under injected regressions,
//! and the harm actually incurred before the controller reacts.

pub mod generator;
pub mod report;

pub use generator::{
    mix_seed, EffectDirection, EffectModel, PopulationKind, PopulationModel, StreamGenerator,
};
pub use report::EvaluationReport;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    assign, step, Assignment, Decision, HarmDirection, MetricEvent, RampPolicy, RolloutPlan,
    RolloutState, RolloutStatus,
};
use crate::error::{Error, Result};
use crate::stats::Group;

fn default_effect() -> EffectModel {
    EffectModel::None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub plan: RolloutPlan,
    pub population: PopulationModel,
    #[serde(default = "default_effect")]
    pub effect: EffectModel,
    pub replications: u32,
    pub seed: u64,
    /// Loss level a replication "exceeds"; defaults to the risk policy's
    /// cost tolerance when one is configured.
    #[serde(default)]
    pub loss_tolerance: Option<f64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidConfig("scenario name must be nonempty".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        self.plan.validate()?;
        self.population.validate()?;
        self.effect.validate()?;
        if self.plan.metrics.len() != 1 {
            return Err(Error::InvalidConfig(
                "the simulator drives exactly one metric; give the plan a single guardrail".into(),
            ));
        }
        if let Some(c) = self.loss_tolerance {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "loss_tolerance must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn effective_loss_tolerance(&self) -> Option<f64> {
        self.loss_tolerance.or(match &self.plan.policy {
            RampPolicy::RiskBased(cfg) => Some(cfg.cost_tolerance),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepOutcome {
    Detected { hour: u32 },
    FullyRolledOut { hour: u32 },
    Censored,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationResult {
    pub outcome: RepOutcome,
    /// Treatment share at the start of each stage window reached.
    pub stage_pcts: Vec<f64>,
    /// Cumulative treatment observations when the run ended.
    pub treatment_n: u64,
    /// Harm accrued by treated sessions over the whole horizon, including
    /// exposure after a full rollout.
    pub total_loss: f64,
}

fn harm_per_session(direction: HarmDirection, delta: f64) -> f64 {
    match direction {
        HarmDirection::Decrease => (-delta).max(0.0),
        HarmDirection::Increase => delta.max(0.0),
    }
}

pub fn run_replication(
    plan: &RolloutPlan,
    pop: &PopulationModel,
    effect: &EffectModel,
    seed: u64,
) -> Result<ReplicationResult> {
    let mut state = RolloutState::new(plan)?;
    let gen = StreamGenerator::new(pop, effect, seed)?;
    let metric_name = plan.metrics[0].name.clone();
    let harm_dir = plan.metrics[0].harmful_direction;
    let n_units = gen.unit_count();

    let mut membership: Vec<Assignment> = Vec::new();
    let mut membership_pct = f64::NAN;
    let mut stage_pcts = vec![state.treatment_pct];
    let mut total_loss = 0.0;
    let mut detected_hour = None;
    let mut completed_hour = None;
    let mut events: Vec<MetricEvent> = Vec::new();

    for h in 0..gen.horizon_hours() {
        if state.status == RolloutStatus::Running {
            if !gen.ids_are_stable() || membership_pct != state.treatment_pct {
                membership =
                    (0..n_units).map(|i| assign(plan, &state, &gen.unit_id(h, i))).collect();
                membership_pct = state.treatment_pct;
            }
            events.clear();
            for (i, m) in membership.iter().enumerate() {
                let group = match m {
                    Assignment::Treatment => Group::Trt,
                    Assignment::Control => Group::Ctrl,
                    Assignment::Untreated => continue,
                };
                let id = gen.unit_id(h, i);
                gen.visit_sessions(h, i, group, |value, delta| {
                    events.push(MetricEvent {
                        metric: metric_name.clone(),
                        unit_id: id.clone(),
                        group,
                        value,
                    });
                    if group == Group::Trt {
                        total_loss += harm_per_session(harm_dir, delta);
                    }
                });
            }
            let prev_stage = state.stage;
            match step(plan, &mut state, h, &events)? {
                Decision::Revert => {
                    detected_hour = Some(h);
                    break;
                }
                Decision::Complete => {
                    completed_hour = Some(h);
                    if effect.is_null() {
                        // no effect means no post-rollout loss to tally
                        break;
                    }
                }
                _ => {}
            }
            if state.status == RolloutStatus::Running && state.stage > prev_stage {
                stage_pcts.push(state.treatment_pct);
            }
        } else {
            // fully rolled out: everyone is treated, harm keeps accruing
            for i in 0..n_units {
                gen.visit_sessions(h, i, Group::Trt, |_, delta| {
                    total_loss += harm_per_session(harm_dir, delta);
                });
            }
        }
    }

    let outcome = match (detected_hour, completed_hour) {
        (Some(hour), _) => RepOutcome::Detected { hour },
        (None, Some(hour)) => RepOutcome::FullyRolledOut { hour },
        (None, None) => RepOutcome::Censored,
    };
    Ok(ReplicationResult { outcome, stage_pcts, treatment_n: state.cum_treatment_n, total_loss })
}

/// Run every replication (in parallel, deterministically seeded by index)
/// and aggregate. Identical config and seed give identical reports
/// regardless of thread count.
pub fn run_experiment(scenario: &ScenarioConfig) -> Result<EvaluationReport> {
    scenario.validate()?;
    let results: Result<Vec<ReplicationResult>> = (0..scenario.replications)
        .into_par_iter()
        .map(|rep| {
            run_replication(
                &scenario.plan,
                &scenario.population,
                &scenario.effect,
                mix_seed(scenario.seed, rep as u64, 0x5EED),
            )
        })
        .collect();
    Ok(report::aggregate(scenario, &results?))
}

#[cfg(test)]
mod tests;
