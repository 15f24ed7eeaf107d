//! Streaming two-sample statistics: partitioned accumulation, variance
//! estimation (naive and delete-a-group jackknife), the always-valid mixture
//! sequential test, and fixed-horizon power approximations.

pub mod accumulator;
pub mod normal;
pub mod power;
pub mod sequential;
pub mod variance;

pub use accumulator::{ObservationEvent, PartitionCell, PartitionedAccumulator};
pub use power::{
    estimate_power, expected_stopping_n, power_query, required_sample_size, PowerAnswer,
    PowerQuery, PowerTarget, SMALL_SAMPLE_FLOOR,
};
pub use sequential::{
    mixture_ci, select_tau, sequential_check, SequentialOutcome, SequentialTestConfig, Sidedness,
    TauPolicy,
};
pub use variance::{jackknife_variance, naive_variance, VarianceEstimate};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Ctrl,
    Trt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Naive,
    Jackknife,
}

/// Direction of an observed or harmful movement in a metric mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    None,
    Increase,
    Decrease,
}
