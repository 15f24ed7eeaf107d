use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::partition_of;
use crate::stats::Group;

/// One raw metric observation as delivered by the event pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationEvent {
    pub hour: u32,
    pub unit_id: String,
    pub group: Group,
    pub value: f64,
}

/// Running moments for one (group, partition) cell. Sums, not means, so cells
/// merge and delete-a-group estimates come straight from arithmetic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    pub sum: f64,
    pub sumsq: f64,
    pub count: u64,
}

impl PartitionCell {
    fn add(&mut self, value: f64) {
        self.sum += value;
        self.sumsq += value * value;
        self.count += 1;
    }
}

/// Per-group observation moments bucketed into R hash partitions of units.
///
/// Units, not observations, are partitioned: every observation from one unit
/// lands in the same cell, which is what makes deleting a partition remove
/// whole units (the jackknife's independence requirement under clustering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedAccumulator {
    partitions: u32,
    ctrl: Vec<PartitionCell>,
    trt: Vec<PartitionCell>,
}

impl PartitionedAccumulator {
    pub fn new(partitions: u32) -> Result<Self> {
        if partitions < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 partitions, got {partitions}"
            )));
        }
        Ok(Self {
            partitions,
            ctrl: vec![PartitionCell::default(); partitions as usize],
            trt: vec![PartitionCell::default(); partitions as usize],
        })
    }

    pub fn partitions(&self) -> u32 {
        self.partitions
    }

    pub fn ingest(&mut self, event: &ObservationEvent, partition_salt: &str) -> Result<()> {
        let p = partition_of(partition_salt, &event.unit_id, self.partitions);
        self.record(event.group, p, event.value)
    }

    /// Hot path used by the simulator, which hashes units once per stage.
    pub fn record(&mut self, group: Group, partition: u32, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::DataQuality(format!("non-finite value {value}")));
        }
        if partition >= self.partitions {
            return Err(Error::DataQuality(format!(
                "partition {partition} out of range (R = {})",
                self.partitions
            )));
        }
        self.cells_mut(group)[partition as usize].add(value);
        Ok(())
    }

    pub fn cells(&self, group: Group) -> &[PartitionCell] {
        match group {
            Group::Ctrl => &self.ctrl,
            Group::Trt => &self.trt,
        }
    }

    fn cells_mut(&mut self, group: Group) -> &mut [PartitionCell] {
        match group {
            Group::Ctrl => &mut self.ctrl,
            Group::Trt => &mut self.trt,
        }
    }

    pub fn count(&self, group: Group) -> u64 {
        self.cells(group).iter().map(|c| c.count).sum()
    }

    pub fn sum(&self, group: Group) -> f64 {
        self.cells(group).iter().map(|c| c.sum).sum()
    }

    pub fn sumsq(&self, group: Group) -> f64 {
        self.cells(group).iter().map(|c| c.sumsq).sum()
    }

    pub fn mean(&self, group: Group) -> Option<f64> {
        let n = self.count(group);
        (n > 0).then(|| self.sum(group) / n as f64)
    }
}
