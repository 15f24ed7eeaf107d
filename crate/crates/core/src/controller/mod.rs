//! The rollout decision loop.
//!
//! Each hour the controller ingests that hour's metric events, runs the
//! sequential test on every guardrail metric, and emits one decision:
//! `Stay`, `RampTo`, `Revert`, or `Complete`. Reverts can happen at any
//! check; ramping and completion only at stage boundaries. Revert and
//! Complete are terminal.

pub mod snapshot;

pub use snapshot::{restore_snapshot, save_snapshot, Snapshot, SNAPSHOT_SCHEMA_VERSION};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::unit_fraction;
use crate::rampup::{
    clamp_percentage, n_to_pct, posterior_update, power_based_next, risk_based_max_n,
    time_based_next, NextSampleSize, PowerBasedConfig, RampRationale, RiskBasedConfig,
    TimeBasedConfig, MAX_TREATMENT_PCT,
};
use crate::stats::{
    estimate_power, naive_variance, sequential_check, Direction, Group, ObservationEvent,
    PartitionedAccumulator, SequentialOutcome, SequentialTestConfig, Sidedness, TauPolicy,
    VarianceMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmDirection {
    Increase,
    Decrease,
}

impl HarmDirection {
    pub fn as_direction(self) -> Direction {
        match self {
            HarmDirection::Increase => Direction::Increase,
            HarmDirection::Decrease => Direction::Decrease,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    /// Which way this metric moves when the feature hurts.
    pub harmful_direction: HarmDirection,
    /// Optional per-metric override of the completion gate's MDE.
    #[serde(default)]
    pub mde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampPolicy {
    TimeBased(TimeBasedConfig),
    PowerBased(PowerBasedConfig),
    RiskBased(RiskBasedConfig),
}

impl RampPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            RampPolicy::TimeBased(_) => "time_based",
            RampPolicy::PowerBased(_) => "power_based",
            RampPolicy::RiskBased(_) => "risk_based",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RampPolicy::TimeBased(c) => c.validate(),
            RampPolicy::PowerBased(c) => c.validate(),
            RampPolicy::RiskBased(c) => c.validate(),
        }
    }
}

/// Plan-level sequential test settings. One-sided tests resolve their
/// regression direction per metric from `harmful_direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSettings {
    pub alpha: f64,
    pub tau_policy: TauPolicy,
    #[serde(default)]
    pub delta0: f64,
    #[serde(default)]
    pub one_sided: bool,
}

/// Completion requirement: at a 50% boundary, every metric must have enough
/// treatment sample that the test would catch an `mde`-sized regression with
/// power 1 - beta. Computed from plain sample variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerGate {
    pub mde: f64,
    pub beta: f64,
}

impl PowerGate {
    fn validate(&self) -> Result<()> {
        if !(self.mde.is_finite() && self.mde > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "power gate mde must be positive, got {}",
                self.mde
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "power gate beta {} outside (0, 1)",
                self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertPolicy {
    /// Revert immediately on a harmful significant result.
    #[default]
    AutoRevert,
    /// Keep serving at the current split but stop ramping; a human decides.
    PauseAndAlert,
}

fn default_partitions() -> u32 {
    10
}
fn default_check_interval() -> u32 {
    1
}
fn default_stage_length() -> u32 {
    24
}
fn default_initial_pct() -> f64 {
    0.01
}
fn default_variance_method() -> VarianceMethod {
    VarianceMethod::Jackknife
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutPlan {
    pub feature_flag: String,
    pub metrics: Vec<MetricSpec>,
    pub policy: RampPolicy,
    pub test: TestSettings,
    #[serde(default = "default_variance_method")]
    pub variance_method: VarianceMethod,
    #[serde(default = "default_partitions")]
    pub partitions: u32,
    #[serde(default = "default_check_interval")]
    pub check_interval_hours: u32,
    pub power_gate: PowerGate,
    pub assignment_salt: String,
    pub partition_salt: String,
    /// Expected number of fresh eligible observations per stage window,
    /// used to convert sample-size recommendations into percentages.
    pub predicted_population_per_stage: f64,
    /// Starting treatment share for the sample-driven policies; the time
    /// policy starts at its first scheduled pct instead.
    #[serde(default = "default_initial_pct")]
    pub initial_treatment_pct: f64,
    /// Stage window for the power and risk policies; the time policy reads
    /// durations from its own schedule.
    #[serde(default = "default_stage_length")]
    pub stage_length_hours: u32,
    /// Split alpha across metrics.
    #[serde(default)]
    pub bonferroni: bool,
    #[serde(default)]
    pub alert_policy: AlertPolicy,
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<()> {
        if self.feature_flag.is_empty() {
            return Err(Error::InvalidConfig("feature_flag must be nonempty".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("at least one guardrail metric is required".into()));
        }
        let mut names: Vec<&str> = self.metrics.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.metrics.len() {
            return Err(Error::InvalidConfig("metric names must be unique".into()));
        }
        for m in &self.metrics {
            if m.name.is_empty() {
                return Err(Error::InvalidConfig("metric name must be nonempty".into()));
            }
            if let Some(mde) = m.mde {
                if !(mde.is_finite() && mde > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "metric {} mde must be positive, got {mde}",
                        m.name
                    )));
                }
            }
        }
        self.policy.validate()?;
        self.sequential_config_for(&self.metrics[0]).validate()?;
        self.power_gate.validate()?;
        if self.partitions < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 partitions, got {}",
                self.partitions
            )));
        }
        if self.check_interval_hours == 0 {
            return Err(Error::InvalidConfig("check_interval_hours must be positive".into()));
        }
        if self.stage_length_hours == 0 {
            return Err(Error::InvalidConfig("stage_length_hours must be positive".into()));
        }
        if self.assignment_salt.is_empty() || self.partition_salt.is_empty() {
            return Err(Error::InvalidConfig("salts must be nonempty".into()));
        }
        if self.assignment_salt == self.partition_salt {
            return Err(Error::InvalidConfig(
                "assignment and partition salts must differ, or partitions correlate with arms"
                    .into(),
            ));
        }
        if !(self.predicted_population_per_stage.is_finite()
            && self.predicted_population_per_stage > 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "predicted_population_per_stage must be positive, got {}",
                self.predicted_population_per_stage
            )));
        }
        if !(self.initial_treatment_pct > 0.0 && self.initial_treatment_pct <= MAX_TREATMENT_PCT) {
            return Err(Error::InvalidConfig(format!(
                "initial_treatment_pct {} outside (0, {MAX_TREATMENT_PCT}]",
                self.initial_treatment_pct
            )));
        }
        Ok(())
    }

    /// Per-look alpha after the optional multiple-testing split.
    pub fn effective_alpha(&self) -> f64 {
        if self.bonferroni {
            self.test.alpha / self.metrics.len() as f64
        } else {
            self.test.alpha
        }
    }

    fn sequential_config_for(&self, metric: &MetricSpec) -> SequentialTestConfig {
        SequentialTestConfig {
            alpha: self.effective_alpha(),
            tau_policy: self.test.tau_policy,
            delta0: self.test.delta0,
            sidedness: if self.test.one_sided {
                Sidedness::OneSided { regression: metric.harmful_direction.as_direction() }
            } else {
                Sidedness::TwoSided
            },
        }
    }

    fn gate_mde_for(&self, metric: &MetricSpec) -> f64 {
        metric.mde.unwrap_or(self.power_gate.mde)
    }

    fn stage_length(&self, stage: u32) -> u32 {
        match &self.policy {
            RampPolicy::TimeBased(cfg) => {
                let idx = (stage as usize).min(cfg.schedule.len() - 1);
                cfg.schedule[idx].duration_hours
            }
            _ => self.stage_length_hours,
        }
    }

    fn initial_pct(&self) -> f64 {
        let raw = match &self.policy {
            RampPolicy::TimeBased(cfg) => cfg.schedule[0].treatment_pct,
            _ => self.initial_treatment_pct,
        };
        raw.min(MAX_TREATMENT_PCT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutStatus {
    Running,
    Completed,
    Reverted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Stay,
    RampTo { pct: f64 },
    Revert,
    Complete,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Stay => write!(f, "stay"),
            Decision::RampTo { pct } => write!(f, "ramp_to {pct:.4}"),
            Decision::Revert => write!(f, "revert"),
            Decision::Complete => write!(f, "complete"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub hour: u32,
    pub decision: Decision,
    /// Sequential outcomes from this hour's check, keyed by metric. Empty
    /// off check hours or while data is insufficient.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outcomes: BTreeMap<String, SequentialOutcome>,
    /// Metrics whose harmful movement triggered this hour's alert.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alerts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<RampRationale>,
}

/// One metric observation delivered to the controller. The hour comes from
/// the `step` call so a batch cannot straddle hours.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricEvent {
    pub metric: String,
    pub unit_id: String,
    pub group: Group,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutState {
    pub status: RolloutStatus,
    pub stage: u32,
    pub treatment_pct: f64,
    /// Mirror share held out as control; equals `treatment_pct` while the
    /// experiment runs, 0 once it ends.
    pub control_pct: f64,
    /// Hours fully processed; the next `step` must use this hour.
    pub hours_processed: u32,
    pub stage_started_hour: u32,
    pub cum_treatment_n: u64,
    /// Tau per metric, resolved at the first sufficient check and reused at
    /// every later look. Re-deriving tau from drifting variance estimates
    /// would break the always-valid guarantee.
    pub frozen_taus: BTreeMap<String, f64>,
    pub alert_active: bool,
    pub accumulators: BTreeMap<String, PartitionedAccumulator>,
    pub decision_log: Vec<DecisionRecord>,
}

impl RolloutState {
    pub fn new(plan: &RolloutPlan) -> Result<Self> {
        plan.validate()?;
        let pct = plan.initial_pct();
        let mut accumulators = BTreeMap::new();
        for m in &plan.metrics {
            accumulators.insert(m.name.clone(), PartitionedAccumulator::new(plan.partitions)?);
        }
        Ok(Self {
            status: RolloutStatus::Running,
            stage: 0,
            treatment_pct: pct,
            control_pct: pct,
            hours_processed: 0,
            stage_started_hour: 0,
            cum_treatment_n: 0,
            frozen_taus: BTreeMap::new(),
            alert_active: false,
            accumulators,
            decision_log: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Treatment,
    Control,
    Untreated,
}

/// Sticky hashed assignment. Treatment occupies [0, t) of the hash line and
/// control [1 - c, 1), so growing t never reassigns an exposed unit and the
/// two arms can never overlap while t and c stay at or below one half.
pub fn assign(plan: &RolloutPlan, state: &RolloutState, unit_id: &str) -> Assignment {
    let b = unit_fraction(&plan.assignment_salt, unit_id);
    if b < state.treatment_pct {
        Assignment::Treatment
    } else if state.control_pct > 0.0 && b >= 1.0 - state.control_pct {
        Assignment::Control
    } else {
        Assignment::Untreated
    }
}

fn check_metrics(
    plan: &RolloutPlan,
    state: &mut RolloutState,
) -> Result<(BTreeMap<String, SequentialOutcome>, Vec<String>)> {
    let mut outcomes = BTreeMap::new();
    let mut alerts = Vec::new();
    for metric in &plan.metrics {
        let acc = &state.accumulators[&metric.name];
        let mut cfg = plan.sequential_config_for(metric);
        if let Some(&tau) = state.frozen_taus.get(&metric.name) {
            cfg.tau_policy = TauPolicy::Fixed { tau };
        }
        match sequential_check(acc, &cfg, plan.variance_method) {
            Ok(outcome) => {
                state.frozen_taus.entry(metric.name.clone()).or_insert(outcome.tau);
                if outcome.significant
                    && outcome.direction == metric.harmful_direction.as_direction()
                {
                    alerts.push(metric.name.clone());
                }
                outcomes.insert(metric.name.clone(), outcome);
            }
            // quiet until the metric has enough data; any other error is real
            Err(Error::InsufficientData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((outcomes, alerts))
}

fn power_gate_passes(plan: &RolloutPlan, state: &RolloutState) -> Result<bool> {
    for metric in &plan.metrics {
        let acc = &state.accumulators[&metric.name];
        let est = match naive_variance(acc) {
            Ok(est) => est,
            Err(Error::InsufficientData(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        if est.var_ctrl + est.var_trt <= 0.0 {
            return Ok(false);
        }
        let power = estimate_power(
            est.n_trt as f64,
            plan.gate_mde_for(metric),
            est.var_ctrl,
            est.var_trt,
            plan.effective_alpha(),
        )?;
        if power < 1.0 - plan.power_gate.beta {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Raw (unclamped) treatment share the policy wants for the next stage.
fn policy_raw_pct(
    plan: &RolloutPlan,
    state: &RolloutState,
    hour: u32,
) -> Result<(f64, RampRationale)> {
    match &plan.policy {
        RampPolicy::TimeBased(cfg) => {
            let elapsed = hour + 1 - state.stage_started_hour;
            let rec = time_based_next(cfg, state.stage as usize, elapsed)?;
            Ok((rec.next_treatment_pct.unwrap_or(0.0), rec.rationale))
        }
        RampPolicy::PowerBased(cfg) => {
            // target the weakest metric: take the largest cumulative deficit
            let mut worst: Option<(u64, RampRationale)> = None;
            for metric in &plan.metrics {
                let acc = &state.accumulators[&metric.name];
                let est = match naive_variance(acc) {
                    Ok(est) if est.var_ctrl + est.var_trt > 0.0 => est,
                    // no usable estimate yet: hold the current split
                    Ok(_) | Err(Error::InsufficientData(_)) => continue,
                    Err(e) => return Err(e),
                };
                let rec = power_based_next(
                    cfg,
                    est.delta_hat(),
                    est.var_ctrl,
                    est.var_trt,
                    state.stage as usize,
                )?;
                let target = match rec.next_treatment_n {
                    Some(NextSampleSize::Bounded(n)) => n,
                    _ => continue,
                };
                let deficit = target.saturating_sub(acc.count(Group::Trt));
                if worst.is_none_or(|(w, _)| deficit > w) {
                    worst = Some((deficit, rec.rationale));
                }
            }
            match worst {
                Some((deficit, rationale)) => {
                    let raw = n_to_pct(
                        NextSampleSize::Bounded(deficit),
                        plan.predicted_population_per_stage,
                    )?;
                    Ok((raw, rationale))
                }
                None => Ok((0.0, RampRationale::PowerMde)),
            }
        }
        RampPolicy::RiskBased(cfg) => {
            // expose no more than the tightest metric budget allows
            let mut tightest: Option<(NextSampleSize, RampRationale)> = None;
            for metric in &plan.metrics {
                let acc = &state.accumulators[&metric.name];
                // flip increase-harmful metrics so the budget formula always
                // sees "negative means harm"
                let mirror = metric.harmful_direction == HarmDirection::Increase;
                let prior = RiskBasedConfig {
                    delta0: if mirror { -cfg.delta0 } else { cfg.delta0 },
                    ..cfg.clone()
                };
                let posterior = match naive_variance(acc) {
                    Ok(est) => {
                        let n = est.n_ctrl.min(est.n_trt);
                        let pooled = (est.n_ctrl as f64 * est.var_ctrl
                            + est.n_trt as f64 * est.var_trt)
                            / (est.n_ctrl + est.n_trt) as f64;
                        if pooled > 0.0 {
                            let (mc, mt) = if mirror {
                                (est.mean_trt, est.mean_ctrl)
                            } else {
                                (est.mean_ctrl, est.mean_trt)
                            };
                            posterior_update(&prior, mc, mt, pooled, n)?
                        } else {
                            posterior_update(&prior, 0.0, 0.0, 1.0, 0)?
                        }
                    }
                    Err(Error::InsufficientData(_)) => posterior_update(&prior, 0.0, 0.0, 1.0, 0)?,
                    Err(e) => return Err(e),
                };
                let rec = risk_based_max_n(&prior, &posterior, acc.count(Group::Trt))?;
                let n = rec.next_treatment_n.expect("risk policy always sets a sample size");
                let tighter = match (&tightest, n) {
                    (None, _) => true,
                    (Some((NextSampleSize::Unbounded, _)), _) => true,
                    (Some((NextSampleSize::Bounded(cur), _)), NextSampleSize::Bounded(new)) => {
                        new < *cur
                    }
                    (Some((NextSampleSize::Bounded(_), _)), NextSampleSize::Unbounded) => false,
                };
                if tighter {
                    tightest = Some((n, rec.rationale));
                }
            }
            let (n, rationale) =
                tightest.unwrap_or((NextSampleSize::Unbounded, RampRationale::RiskUnbounded));
            // the budget is additional sample; a stage at share raw consumes
            // roughly raw * predicted_population of it
            let raw = n_to_pct(n, plan.predicted_population_per_stage)?;
            Ok((raw, rationale))
        }
    }
}

/// Advance the rollout by one hour of events.
///
/// `hour` must equal `state.hours_processed`; feeding hours out of order is
/// an error rather than a silent reordering. Returns the decision taken at
/// the end of this hour.
pub fn step(
    plan: &RolloutPlan,
    state: &mut RolloutState,
    hour: u32,
    events: &[MetricEvent],
) -> Result<Decision> {
    if state.status != RolloutStatus::Running {
        return Err(Error::Terminal(format!(
            "rollout for {} already ended as {:?}",
            plan.feature_flag, state.status
        )));
    }
    if hour != state.hours_processed {
        return Err(Error::InvalidQuery(format!(
            "expected hour {}, got {hour}; hours must arrive in order",
            state.hours_processed
        )));
    }

    for ev in events {
        let acc = state.accumulators.get_mut(&ev.metric).ok_or_else(|| {
            Error::DataQuality(format!("unknown metric '{}' in event stream", ev.metric))
        })?;
        let obs = ObservationEvent {
            hour,
            unit_id: ev.unit_id.clone(),
            group: ev.group,
            value: ev.value,
        };
        acc.ingest(&obs, &plan.partition_salt)?;
    }
    state.cum_treatment_n =
        state.accumulators.values().map(|a| a.count(Group::Trt)).max().unwrap_or(0);

    let check_due = (hour + 1).is_multiple_of(plan.check_interval_hours);
    let (outcomes, alerts) =
        if check_due { check_metrics(plan, state)? } else { (BTreeMap::new(), Vec::new()) };

    if !alerts.is_empty() {
        let decision = match plan.alert_policy {
            AlertPolicy::AutoRevert => {
                state.status = RolloutStatus::Reverted;
                state.treatment_pct = 0.0;
                state.control_pct = 0.0;
                Decision::Revert
            }
            AlertPolicy::PauseAndAlert => {
                state.alert_active = true;
                Decision::Stay
            }
        };
        state.hours_processed = hour + 1;
        state.decision_log.push(DecisionRecord {
            hour,
            decision: decision.clone(),
            outcomes,
            alerts,
            rationale: None,
        });
        return Ok(decision);
    }

    let mut decision = Decision::Stay;
    let mut rationale = None;
    let boundary = hour + 1 - state.stage_started_hour >= plan.stage_length(state.stage);
    if boundary && !state.alert_active {
        if state.treatment_pct >= MAX_TREATMENT_PCT {
            if power_gate_passes(plan, state)? {
                state.status = RolloutStatus::Completed;
                state.treatment_pct = 1.0;
                state.control_pct = 0.0;
                decision = Decision::Complete;
            }
        } else {
            let (raw, why) = policy_raw_pct(plan, state, hour)?;
            let next = clamp_percentage(state.treatment_pct, raw);
            if next > state.treatment_pct {
                state.treatment_pct = next;
                state.control_pct = next;
                decision = Decision::RampTo { pct: next };
                rationale = Some(why);
            }
        }
        state.stage += 1;
        state.stage_started_hour = hour + 1;
    }

    state.hours_processed = hour + 1;
    state.decision_log.push(DecisionRecord {
        hour,
        decision: decision.clone(),
        outcomes,
        alerts,
        rationale,
    });
    Ok(decision)
}
