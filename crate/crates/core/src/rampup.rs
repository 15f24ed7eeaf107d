//! The three ramp-up policies: fixed time schedule, power-based sample
//! targeting, and risk-based Bayesian budgeting. Policies only recommend;
//! the controller owns clamping, monotonicity, and the completion gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal::norm_quantile;
use crate::stats::power::required_sample_size;

/// Hard ceiling on the treatment share while the experiment is running.
/// Above one half the control arm can no longer match the treatment arm,
/// so inference would degrade exactly when the stakes are largest.
pub const MAX_TREATMENT_PCT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub treatment_pct: f64,
    pub duration_hours: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBasedConfig {
    pub schedule: Vec<StageSpec>,
}

impl TimeBasedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::InvalidConfig("time-based schedule is empty".into()));
        }
        let mut prev = 0.0;
        for (i, s) in self.schedule.iter().enumerate() {
            if !(s.treatment_pct > 0.0 && s.treatment_pct <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "schedule stage {i} pct {} outside (0, 1]",
                    s.treatment_pct
                )));
            }
            if s.treatment_pct < prev {
                return Err(Error::InvalidConfig(format!(
                    "schedule pct must be nondecreasing, stage {i} drops to {}",
                    s.treatment_pct
                )));
            }
            if s.duration_hours == 0 {
                return Err(Error::InvalidConfig(format!("schedule stage {i} has zero duration")));
            }
            prev = s.treatment_pct;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBasedConfig {
    /// Smallest effect worth powering for; observed effects below it are
    /// treated as noise when sizing the next stage.
    pub mde: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Per-stage caps on the cumulative treatment sample; the last entry
    /// repeats for later stages. Empty means uncapped.
    #[serde(default)]
    pub stage_limits: Vec<u64>,
    /// Advisory launch deadline; validated but not enforced by the policy.
    #[serde(default)]
    pub deadline_hours: Option<u32>,
}

impl PowerBasedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mde.is_finite() && self.mde > 0.0) {
            return Err(Error::InvalidConfig(format!("mde must be positive, got {}", self.mde)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta {} outside (0, 1)", self.beta)));
        }
        if self.stage_limits.contains(&0) {
            return Err(Error::InvalidConfig("stage limit of zero blocks the rollout".into()));
        }
        if self.deadline_hours == Some(0) {
            return Err(Error::InvalidConfig("deadline_hours must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBasedConfig {
    /// Prior mean of the per-observation effect on the metric's natural
    /// scale (positive means the metric goes up).
    pub delta0: f64,
    /// Prior variance per arm; the prior on the difference has twice this.
    pub sigma0_sq: f64,
    /// Prior mean of the metric level itself. Carried for reporting; the
    /// budget only depends on the effect posterior.
    #[serde(default)]
    pub mu0: f64,
    /// Quantile R of the posterior used as the pessimistic per-unit harm.
    pub risk_tolerance: f64,
    /// Total harm budget C in metric units.
    pub cost_tolerance: f64,
}

impl RiskBasedConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.delta0.is_finite() || !self.mu0.is_finite() {
            return Err(Error::InvalidConfig("risk prior means must be finite".into()));
        }
        if !(self.sigma0_sq.is_finite() && self.sigma0_sq > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma0_sq must be positive, got {}",
                self.sigma0_sq
            )));
        }
        if !(self.risk_tolerance > 0.0 && self.risk_tolerance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "risk_tolerance {} outside (0, 1)",
                self.risk_tolerance
            )));
        }
        if !(self.cost_tolerance.is_finite() && self.cost_tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cost_tolerance must be positive, got {}",
                self.cost_tolerance
            )));
        }
        Ok(())
    }
}

/// Normal posterior over the mean difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub mean: f64,
    pub var: f64,
}

impl PosteriorState {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Additional sample a policy is willing to expose, when it bounds one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextSampleSize {
    Bounded(u64),
    /// No statistical objection to any exposure; the pct cap still applies.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampRationale {
    Time,
    PowerMde,
    PowerObserved,
    StageLimit,
    RiskCap,
    RiskUnbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampRecommendation {
    /// Absolute treatment share, when the policy speaks in percentages.
    pub next_treatment_pct: Option<f64>,
    /// Sample-count recommendation, when the policy speaks in observations.
    /// Time policy leaves it unset.
    pub next_treatment_n: Option<NextSampleSize>,
    pub rationale: RampRationale,
}

/// Time policy: hold each scheduled pct for its duration, then move to the
/// next. Past the end of the schedule the recommendation is full exposure;
/// the controller's clamp and completion gate decide what actually happens.
pub fn time_based_next(
    cfg: &TimeBasedConfig,
    current_stage: usize,
    elapsed_in_stage_hours: u32,
) -> Result<RampRecommendation> {
    cfg.validate()?;
    let pct = if current_stage >= cfg.schedule.len() {
        1.0
    } else if elapsed_in_stage_hours < cfg.schedule[current_stage].duration_hours {
        cfg.schedule[current_stage].treatment_pct
    } else if current_stage + 1 < cfg.schedule.len() {
        cfg.schedule[current_stage + 1].treatment_pct
    } else {
        1.0
    };
    Ok(RampRecommendation {
        next_treatment_pct: Some(pct),
        next_treatment_n: None,
        rationale: RampRationale::Time,
    })
}

/// Power policy: target the cumulative per-arm sample needed to resolve the
/// design MDE, shrinking toward the observed effect's requirement when the
/// observed effect is larger than the MDE, capped by the stage limit.
///
/// The returned size is a cumulative target, not an increment.
pub fn power_based_next(
    cfg: &PowerBasedConfig,
    observed_delta: f64,
    v_ctrl: f64,
    v_trt: f64,
    stage: usize,
) -> Result<RampRecommendation> {
    cfg.validate()?;
    let n_mde = required_sample_size(cfg.mde, cfg.alpha, cfg.beta, v_ctrl, v_trt)?;
    let mut best = (n_mde.ceil() as u64, RampRationale::PowerMde);

    if observed_delta.abs() > cfg.mde {
        let n_obs =
            required_sample_size(observed_delta, cfg.alpha, cfg.beta, v_ctrl, v_trt)?.ceil() as u64;
        if n_obs < best.0 {
            best = (n_obs, RampRationale::PowerObserved);
        }
    }
    if let Some(&limit) = cfg.stage_limits.get(stage).or(cfg.stage_limits.last()) {
        if limit < best.0 {
            best = (limit, RampRationale::StageLimit);
        }
    }
    Ok(RampRecommendation {
        next_treatment_pct: None,
        next_treatment_n: Some(NextSampleSize::Bounded(best.0)),
        rationale: best.1,
    })
}

/// Conjugate normal update of the effect posterior.
///
/// Prior: difference ~ N(delta0, 2 sigma0_sq). Likelihood: observed mean
/// difference ~ N(delta, 2 sigma_sq / n) with `pooled_var` for sigma_sq and
/// n the per-arm sample (use the smaller arm). n = 0 returns the prior.
pub fn posterior_update(
    cfg: &RiskBasedConfig,
    mean_ctrl: f64,
    mean_trt: f64,
    pooled_var: f64,
    n: u64,
) -> Result<PosteriorState> {
    cfg.validate()?;
    if n == 0 {
        return Ok(PosteriorState { mean: cfg.delta0, var: 2.0 * cfg.sigma0_sq });
    }
    if !(pooled_var.is_finite() && pooled_var > 0.0) {
        return Err(Error::InvalidQuery(format!(
            "pooled variance must be positive once data has arrived, got {pooled_var}"
        )));
    }
    let diff = mean_trt - mean_ctrl;
    if !diff.is_finite() {
        return Err(Error::DataQuality(format!("non-finite mean difference {diff}")));
    }
    let nf = n as f64;
    let precision_prior = 1.0 / cfg.sigma0_sq;
    let precision_data = nf / pooled_var;
    let mean =
        (cfg.delta0 * precision_prior + diff * precision_data) / (precision_data + precision_prior);
    let var = 2.0 * pooled_var * cfg.sigma0_sq / (pooled_var + nf * cfg.sigma0_sq);
    Ok(PosteriorState { mean, var })
}

/// Risk policy on the natural scale where harm means the metric going down:
/// g is the R-quantile of the posterior, the pessimistic per-exposure harm.
/// While g is negative, total harm stays within C as long as the additional
/// treated sample does not exceed -C / g minus what has been spent already.
/// Nonnegative g means even the pessimistic view sees no harm: unbounded.
/// Continuous solution of the budget equation: the additional treatment
/// sample at which the posterior probability that per-unit harm exceeds
/// `cost_tolerance / total_n` is exactly `risk_tolerance`. None when the
/// risk quantile of the posterior is nonnegative, so no exposure level
/// breaches the tolerance.
pub fn risk_budget_exact(
    cfg: &RiskBasedConfig,
    posterior: &PosteriorState,
    cum_treatment_n: u64,
) -> Result<Option<f64>> {
    cfg.validate()?;
    if !(posterior.var.is_finite() && posterior.var >= 0.0) || !posterior.mean.is_finite() {
        return Err(Error::InvalidQuery(format!(
            "posterior must be finite with nonnegative variance, got {posterior:?}"
        )));
    }
    let g = posterior.sd() * norm_quantile(cfg.risk_tolerance)? + posterior.mean;
    if g >= 0.0 {
        return Ok(None);
    }
    Ok(Some((-cfg.cost_tolerance / g - cum_treatment_n as f64).max(0.0)))
}

pub fn risk_based_max_n(
    cfg: &RiskBasedConfig,
    posterior: &PosteriorState,
    cum_treatment_n: u64,
) -> Result<RampRecommendation> {
    match risk_budget_exact(cfg, posterior, cum_treatment_n)? {
        None => Ok(RampRecommendation {
            next_treatment_pct: None,
            next_treatment_n: Some(NextSampleSize::Unbounded),
            rationale: RampRationale::RiskUnbounded,
        }),
        Some(budget) => Ok(RampRecommendation {
            next_treatment_pct: None,
            next_treatment_n: Some(NextSampleSize::Bounded(budget.floor() as u64)),
            rationale: RampRationale::RiskCap,
        }),
    }
}

/// Monotone clamp: never shrink treatment, never pass the 50% cap.
pub fn clamp_percentage(current_pct: f64, raw_pct: f64) -> f64 {
    raw_pct.max(current_pct).min(MAX_TREATMENT_PCT)
}

/// Convert a sample recommendation into a raw treatment share of the
/// predicted per-stage population. Unbounded maps to full exposure and lets
/// the clamp cap it.
pub fn n_to_pct(n: NextSampleSize, predicted_population: f64) -> Result<f64> {
    if !(predicted_population.is_finite() && predicted_population > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "predicted stage population must be positive, got {predicted_population}"
        )));
    }
    Ok(match n {
        NextSampleSize::Bounded(n) => n as f64 / predicted_population,
        NextSampleSize::Unbounded => 1.0,
    })
}
