//! Fixed-effect planning approximations for the mixture sequential test:
//! expected stopping time, required sample size for a target power, and the
//! inverse map from sample size back to power. All are asymptotic fits and
//! get flagged as untrusted for small per-arm sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this per-arm n the fitted sample-size curve was never validated;
/// results are still returned but flagged.
pub const SMALL_SAMPLE_FLOOR: f64 = 500.0;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidQuery(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta != 0.0) {
        return Err(Error::InvalidQuery(format!("delta must be finite and nonzero, got {delta}")));
    }
    Ok(())
}

fn check_variances(v_ctrl: f64, v_trt: f64) -> Result<()> {
    if !(v_ctrl >= 0.0 && v_trt >= 0.0 && (v_ctrl + v_trt) > 0.0)
        || !v_ctrl.is_finite()
        || !v_trt.is_finite()
    {
        return Err(Error::InvalidQuery(format!(
            "variances must be nonnegative with a positive sum, got {v_ctrl} and {v_trt}"
        )));
    }
    Ok(())
}

/// Expected per-arm observations until the interval excludes zero when the
/// true difference is `delta`. Assembled in log space; minimized in tau at
/// tau = delta^2.
pub fn expected_stopping_n(
    delta: f64,
    v_ctrl: f64,
    v_trt: f64,
    alpha: f64,
    tau: f64,
) -> Result<f64> {
    check_delta(delta)?;
    check_variances(v_ctrl, v_trt)?;
    check_alpha(alpha)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidQuery(format!("tau must be finite and positive, got {tau}")));
    }
    let d2 = delta * delta;
    let bracket = std::f64::consts::LN_2 + tau.ln() + (-alpha.ln()).ln() + d2 / tau
        - d2.ln()
        - 2.0 * alpha.ln()
        - 1.0;
    Ok((v_ctrl + v_trt) / d2 * bracket)
}

/// Per-arm n at which the mixture test achieves the design operating point
/// for effect `delta`, with tau tuned to delta^2.
fn unit_sample_size(delta: f64, v_ctrl: f64, v_trt: f64, alpha: f64) -> f64 {
    let d2 = delta * delta;
    (v_ctrl + v_trt) / d2 * ((-2.0 * alpha.ln()).ln() - 2.0 * alpha.ln())
}

/// Per-arm sample size for power 1 - beta against `delta`. Empirical fit:
/// N = (0.35 - 0.79 ln beta) * K with K the unit size above.
pub fn required_sample_size(
    delta: f64,
    alpha: f64,
    beta: f64,
    v_ctrl: f64,
    v_trt: f64,
) -> Result<f64> {
    check_delta(delta)?;
    check_alpha(alpha)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidQuery(format!("beta must lie in (0, 1), got {beta}")));
    }
    check_variances(v_ctrl, v_trt)?;
    Ok((0.35 - 0.79 * beta.ln()) * unit_sample_size(delta, v_ctrl, v_trt, alpha))
}

/// Inverse of `required_sample_size`: power the test reaches against `delta`
/// once `n` observations per arm have accrued. Clamped to [0, 1].
pub fn estimate_power(n: f64, delta: f64, v_ctrl: f64, v_trt: f64, alpha: f64) -> Result<f64> {
    check_delta(delta)?;
    check_alpha(alpha)?;
    check_variances(v_ctrl, v_trt)?;
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidQuery(format!("n must be finite and positive, got {n}")));
    }
    let k = unit_sample_size(delta, v_ctrl, v_trt, alpha);
    let beta = ((0.35 - n / k) / 0.79).exp();
    Ok((1.0 - beta).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerTarget {
    /// Size query: how many observations per arm for power 1 - beta.
    Beta(f64),
    /// Power query: what power does n per arm deliver.
    N(f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerQuery {
    pub delta: f64,
    pub alpha: f64,
    pub v_ctrl: f64,
    pub v_trt: f64,
    pub target: PowerTarget,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerAnswer {
    SampleSize {
        n: f64,
        /// True when n falls at or under `SMALL_SAMPLE_FLOOR`.
        small_sample: bool,
    },
    Power {
        power: f64,
    },
}

pub fn power_query(q: &PowerQuery) -> Result<PowerAnswer> {
    match q.target {
        PowerTarget::Beta(beta) => {
            let n = required_sample_size(q.delta, q.alpha, beta, q.v_ctrl, q.v_trt)?;
            Ok(PowerAnswer::SampleSize { n, small_sample: n <= SMALL_SAMPLE_FLOOR })
        }
        PowerTarget::N(n) => {
            let power = estimate_power(n, q.delta, q.v_ctrl, q.v_trt, q.alpha)?;
            Ok(PowerAnswer::Power { power })
        }
    }
}
