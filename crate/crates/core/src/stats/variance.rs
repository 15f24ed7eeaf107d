use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{Group, PartitionedAccumulator, VarianceMethod};

/// Point estimates plus uncertainty for the two-sample mean difference.
///
/// `var_ctrl` / `var_trt` are plain per-observation sample variances;
/// `var_of_mean_*` is the estimated variance of the group mean, which under
/// the jackknife absorbs within-unit correlation that the naive `s^2 / n`
/// misses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub method: VarianceMethod,
    pub mean_ctrl: f64,
    pub mean_trt: f64,
    pub var_ctrl: f64,
    pub var_trt: f64,
    pub var_of_mean_ctrl: f64,
    pub var_of_mean_trt: f64,
    pub n_ctrl: u64,
    pub n_trt: u64,
}

impl VarianceEstimate {
    pub fn delta_hat(&self) -> f64 {
        self.mean_trt - self.mean_ctrl
    }

    /// V: variance of the difference in means.
    pub fn v(&self) -> f64 {
        self.var_of_mean_ctrl + self.var_of_mean_trt
    }
}

fn sample_variance(sum: f64, sumsq: f64, n: u64) -> f64 {
    // Catastrophic cancellation can push this slightly negative for
    // near-constant data; clamp rather than propagate a negative variance.
    ((sumsq - sum * sum / n as f64) / (n - 1) as f64).max(0.0)
}

fn group_moments(acc: &PartitionedAccumulator, group: Group) -> (f64, f64, u64) {
    (acc.sum(group), acc.sumsq(group), acc.count(group))
}

/// Independent-observations estimator: Var(X̄) = s^2 / n per group.
pub fn naive_variance(acc: &PartitionedAccumulator) -> Result<VarianceEstimate> {
    let (sum_c, sumsq_c, n_c) = group_moments(acc, Group::Ctrl);
    let (sum_t, sumsq_t, n_t) = group_moments(acc, Group::Trt);
    if n_c < 2 || n_t < 2 {
        return Err(Error::InsufficientData(format!(
            "naive variance needs >= 2 observations per group, got ctrl {n_c} trt {n_t}"
        )));
    }
    let var_c = sample_variance(sum_c, sumsq_c, n_c);
    let var_t = sample_variance(sum_t, sumsq_t, n_t);
    Ok(VarianceEstimate {
        method: VarianceMethod::Naive,
        mean_ctrl: sum_c / n_c as f64,
        mean_trt: sum_t / n_t as f64,
        var_ctrl: var_c,
        var_trt: var_t,
        var_of_mean_ctrl: var_c / n_c as f64,
        var_of_mean_trt: var_t / n_t as f64,
        n_ctrl: n_c,
        n_trt: n_t,
    })
}

fn jackknife_var_of_mean(acc: &PartitionedAccumulator, group: Group) -> Result<f64> {
    let cells = acc.cells(group);
    let r = cells.len() as f64;
    let total_sum: f64 = cells.iter().map(|c| c.sum).sum();
    let total_n: u64 = cells.iter().map(|c| c.count).sum();
    let mean = total_sum / total_n as f64;

    let mut ss = 0.0;
    for (i, cell) in cells.iter().enumerate() {
        if cell.count == 0 {
            return Err(Error::InsufficientData(format!(
                "jackknife needs every partition populated; {group:?} partition {i} is empty"
            )));
        }
        if cell.count == total_n {
            return Err(Error::InsufficientData(format!(
                "jackknife degenerate: all {group:?} observations in partition {i}"
            )));
        }
        let loo = (total_sum - cell.sum) / (total_n - cell.count) as f64;
        ss += (loo - mean) * (loo - mean);
    }
    Ok((r - 1.0) / r * ss)
}

/// Delete-a-group jackknife: leave out one unit partition at a time and use
/// the spread of the leave-one-out means. Robust to within-unit correlation
/// because whole units drop together.
pub fn jackknife_variance(acc: &PartitionedAccumulator) -> Result<VarianceEstimate> {
    let (sum_c, sumsq_c, n_c) = group_moments(acc, Group::Ctrl);
    let (sum_t, sumsq_t, n_t) = group_moments(acc, Group::Trt);
    if n_c < 2 || n_t < 2 {
        return Err(Error::InsufficientData(format!(
            "jackknife needs >= 2 observations per group, got ctrl {n_c} trt {n_t}"
        )));
    }
    let vm_c = jackknife_var_of_mean(acc, Group::Ctrl)?;
    let vm_t = jackknife_var_of_mean(acc, Group::Trt)?;
    Ok(VarianceEstimate {
        method: VarianceMethod::Jackknife,
        mean_ctrl: sum_c / n_c as f64,
        mean_trt: sum_t / n_t as f64,
        // sample variances stay the naive ones; only Var(X̄) is robustified
        var_ctrl: sample_variance(sum_c, sumsq_c, n_c),
        var_trt: sample_variance(sum_t, sumsq_t, n_t),
        var_of_mean_ctrl: vm_c,
        var_of_mean_trt: vm_t,
        n_ctrl: n_c,
        n_trt: n_t,
    })
}

pub fn estimate(acc: &PartitionedAccumulator, method: VarianceMethod) -> Result<VarianceEstimate> {
    match method {
        VarianceMethod::Naive => naive_variance(acc),
        VarianceMethod::Jackknife => jackknife_variance(acc),
    }
}
