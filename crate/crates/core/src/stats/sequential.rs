//! Always-valid sequential test for a mean difference.
//!
//! The confidence sequence comes from a mixture martingale: the running
//! z-statistic is integrated against a N(0, tau) prior over the alternative,
//! giving a closed-form boundary that holds simultaneously over all sample
//! sizes. Peeking every hour therefore costs nothing: under A/A the chance
//! the interval ever excludes zero over the whole run stays below alpha.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal::norm_quantile;
use crate::stats::variance::estimate;
use crate::stats::{Direction, PartitionedAccumulator, VarianceMethod};

/// How the mixture variance tau gets chosen.
///
/// `MdeScaled` matches tau to the effect size the horizon can resolve:
/// tau = z_{1-alpha/2}^2 (v_ctrl + v_trt) / horizon_n, i.e. the squared
/// minimum detectable effect of a fixed-horizon test with `horizon_n`
/// observations per arm. Expected stopping time is minimized when tau equals
/// the squared true effect, so aiming tau at the design MDE is the natural
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    Fixed { tau: f64 },
    MdeScaled { horizon_n: f64 },
}

impl TauPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TauPolicy::Fixed { tau } if !(tau.is_finite() && tau > 0.0) => Err(
                Error::InvalidConfig(format!("fixed tau must be finite and positive, got {tau}")),
            ),
            TauPolicy::MdeScaled { horizon_n } if !(horizon_n.is_finite() && horizon_n > 0.0) => {
                Err(Error::InvalidConfig(format!(
                    "mde_scaled horizon_n must be finite and positive, got {horizon_n}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// Only movement in `regression` counts as significant; the interval is
    /// the same, so an exclusion the other way is reported but not acted on.
    OneSided { regression: Direction },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialTestConfig {
    pub alpha: f64,
    pub tau_policy: TauPolicy,
    /// Null-hypothesis difference, almost always 0.
    #[serde(default)]
    pub delta0: f64,
    #[serde(default)]
    pub sidedness: Sidedness,
}

impl SequentialTestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.delta0.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "delta0 must be finite, got {}",
                self.delta0
            )));
        }
        if let Sidedness::OneSided { regression: Direction::None } = self.sidedness {
            return Err(Error::InvalidConfig(
                "one-sided test needs a regression direction of increase or decrease".into(),
            ));
        }
        self.tau_policy.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialOutcome {
    pub method: VarianceMethod,
    pub delta_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Estimated Var(delta_hat) at this look.
    pub v: f64,
    pub tau: f64,
    pub n_ctrl: u64,
    pub n_trt: u64,
    pub significant: bool,
    /// Side on which the interval excludes delta0; set even when a one-sided
    /// config declines to call that exclusion significant.
    pub direction: Direction,
}

/// Always-valid interval half-width. The log term is assembled as
/// ln(V + tau) - ln V so tiny V near the start of a rollout cannot overflow
/// the ratio.
pub fn mixture_ci(delta_hat: f64, v: f64, tau: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidQuery(format!("V must be finite and positive, got {v}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidQuery(format!("tau must be finite and positive, got {tau}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidQuery(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let bracket = -2.0 * alpha.ln() + (v + tau).ln() - v.ln();
    let hw = (v * (v + tau) / tau * bracket).sqrt();
    Ok((delta_hat - hw, delta_hat + hw))
}

/// Tau tuned so the boundary at `horizon_n` per-arm observations matches the
/// fixed-horizon z-test's detectable effect.
pub fn select_tau(v_ctrl: f64, v_trt: f64, horizon_n: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidQuery(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(horizon_n.is_finite() && horizon_n > 0.0) {
        return Err(Error::InvalidQuery(format!("horizon_n must be positive, got {horizon_n}")));
    }
    let vsum = v_ctrl + v_trt;
    if !(vsum.is_finite() && vsum > 0.0) {
        return Err(Error::InvalidQuery(format!(
            "variance sum must be positive, got {v_ctrl} + {v_trt}"
        )));
    }
    let z = norm_quantile(1.0 - alpha / 2.0)?;
    Ok(z * z * vsum / horizon_n)
}

/// Run one look of the sequential test against the accumulated data.
pub fn sequential_check(
    acc: &PartitionedAccumulator,
    cfg: &SequentialTestConfig,
    method: VarianceMethod,
) -> Result<SequentialOutcome> {
    cfg.validate().map_err(|e| Error::InvalidQuery(e.to_string()))?;
    let est = estimate(acc, method)?;
    let v = est.v();
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InsufficientData(
            "variance of the mean difference is zero; data is still degenerate".into(),
        ));
    }
    let tau = match cfg.tau_policy {
        TauPolicy::Fixed { tau } => tau,
        TauPolicy::MdeScaled { horizon_n } => {
            if est.var_ctrl + est.var_trt <= 0.0 {
                return Err(Error::InsufficientData(
                    "sample variances are zero; cannot scale tau yet".into(),
                ));
            }
            select_tau(est.var_ctrl, est.var_trt, horizon_n, cfg.alpha)?
        }
    };
    let (ci_low, ci_high) = mixture_ci(est.delta_hat(), v, tau, cfg.alpha)?;

    let direction = if ci_low > cfg.delta0 {
        Direction::Increase
    } else if ci_high < cfg.delta0 {
        Direction::Decrease
    } else {
        Direction::None
    };
    let significant = match cfg.sidedness {
        Sidedness::TwoSided => direction != Direction::None,
        Sidedness::OneSided { regression } => direction == regression,
    };

    Ok(SequentialOutcome {
        method,
        delta_hat: est.delta_hat(),
        ci_low,
        ci_high,
        v,
        tau,
        n_ctrl: est.n_ctrl,
        n_trt: est.n_trt,
        significant,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Group;
    use approx::assert_relative_eq;

    #[test]
    fn half_width_reference_values() {
        let (lo, hi) = mixture_ci(0.0, 1.0, 1.0, 0.05).unwrap();
        assert_relative_eq!(hi - lo, 2.0 * 3.6563948713638483, epsilon = 1e-12);
        let (lo, hi) = mixture_ci(0.0, 1.0, 1.0, 0.01).unwrap();
        assert_relative_eq!(hi - lo, 2.0 * 4.45050279239012, epsilon = 1e-12);
    }

    #[test]
    fn half_width_widens_as_alpha_shrinks() {
        let w = |alpha: f64| {
            let (lo, hi) = mixture_ci(0.0, 0.5, 0.02, alpha).unwrap();
            hi - lo
        };
        assert!(w(0.01) > w(0.05));
        assert!(w(0.001) > w(0.01));
    }

    #[test]
    fn select_tau_reference_value() {
        let tau = select_tau(0.21, 0.21, 1e4, 0.05).unwrap();
        assert_relative_eq!(tau, 1.6134127046915324e-4, max_relative = 1e-9);
        // stricter alpha means a wider z, hence larger tau
        let tau01 = select_tau(0.21, 0.21, 1e4, 0.01).unwrap();
        assert_relative_eq!(tau / tau01, 0.5789779482174394, max_relative = 1e-9);
    }

    fn two_group_acc(delta: f64, n: u32) -> PartitionedAccumulator {
        // deterministic spread with a shift on treatment
        let mut acc = PartitionedAccumulator::new(10).unwrap();
        for i in 0..n {
            let base = (i % 11) as f64 / 10.0;
            acc.record(Group::Ctrl, i % 10, base).unwrap();
            acc.record(Group::Trt, (i + 5) % 10, base + delta).unwrap();
        }
        acc
    }

    fn cfg(alpha: f64, sidedness: Sidedness) -> SequentialTestConfig {
        SequentialTestConfig {
            alpha,
            tau_policy: TauPolicy::Fixed { tau: 1e-3 },
            delta0: 0.0,
            sidedness,
        }
    }

    #[test]
    fn check_flags_a_big_shift_and_reports_direction() {
        let acc = two_group_acc(0.5, 4000);
        let out =
            sequential_check(&acc, &cfg(0.05, Sidedness::TwoSided), VarianceMethod::Naive).unwrap();
        assert!(out.significant);
        assert_eq!(out.direction, Direction::Increase);
        assert!(out.ci_low > 0.0);
        assert_relative_eq!(out.delta_hat, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn one_sided_gate_ignores_the_other_tail() {
        let acc = two_group_acc(0.5, 4000);
        let up = sequential_check(
            &acc,
            &cfg(0.05, Sidedness::OneSided { regression: Direction::Increase }),
            VarianceMethod::Naive,
        )
        .unwrap();
        assert!(up.significant);
        let down = sequential_check(
            &acc,
            &cfg(0.05, Sidedness::OneSided { regression: Direction::Decrease }),
            VarianceMethod::Naive,
        )
        .unwrap();
        // exclusion is upward, so a decrease-watching test stays quiet
        assert!(!down.significant);
        assert_eq!(down.direction, Direction::Increase);
    }

    #[test]
    fn null_data_is_not_flagged() {
        let acc = two_group_acc(0.0, 4000);
        let out =
            sequential_check(&acc, &cfg(0.05, Sidedness::TwoSided), VarianceMethod::Naive).unwrap();
        assert!(!out.significant);
        assert_eq!(out.direction, Direction::None);
    }

    #[test]
    fn mde_scaled_tau_resolves_from_sample_variances() {
        let acc = two_group_acc(0.0, 4000);
        let cfg = SequentialTestConfig {
            alpha: 0.05,
            tau_policy: TauPolicy::MdeScaled { horizon_n: 10_000.0 },
            delta0: 0.0,
            sidedness: Sidedness::TwoSided,
        };
        let out = sequential_check(&acc, &cfg, VarianceMethod::Naive).unwrap();
        let est = crate::stats::naive_variance(&acc).unwrap();
        let expect = select_tau(est.var_ctrl, est.var_trt, 10_000.0, 0.05).unwrap();
        assert_relative_eq!(out.tau, expect);
    }

    #[test]
    fn constant_data_is_insufficient() {
        let mut acc = PartitionedAccumulator::new(4).unwrap();
        for i in 0..40 {
            acc.record(Group::Ctrl, i % 4, 1.0).unwrap();
            acc.record(Group::Trt, i % 4, 1.0).unwrap();
        }
        let res = sequential_check(&acc, &cfg(0.05, Sidedness::TwoSided), VarianceMethod::Naive);
        assert!(matches!(res, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn bad_inputs_are_invalid_queries() {
        assert!(matches!(mixture_ci(0.0, 0.0, 1.0, 0.05), Err(Error::InvalidQuery(_))));
        assert!(matches!(mixture_ci(0.0, 1.0, -1.0, 0.05), Err(Error::InvalidQuery(_))));
        assert!(matches!(mixture_ci(0.0, 1.0, 1.0, 1.5), Err(Error::InvalidQuery(_))));
        assert!(matches!(select_tau(0.2, 0.2, 0.0, 0.05), Err(Error::InvalidQuery(_))));
    }
}
