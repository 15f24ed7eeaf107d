//! Resumable controller state. A snapshot is the full `RolloutState` plus a
//! fingerprint of the plan it was produced under, so resuming against an
//! edited plan fails loudly instead of silently mixing configurations.

use serde::{Deserialize, Serialize};

use crate::controller::{RolloutPlan, RolloutState};
use crate::error::{Error, Result};
use crate::hash::stable_hash64;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub plan_hash: String,
    pub state: RolloutState,
}

pub fn plan_fingerprint(plan: &RolloutPlan) -> Result<String> {
    let canonical = serde_json::to_string(plan)?;
    Ok(format!("{:016x}", stable_hash64("rollout-plan-v1", &canonical)))
}

pub fn save_snapshot(plan: &RolloutPlan, state: &RolloutState) -> Result<String> {
    let snap = Snapshot {
        schema_version: SNAPSHOT_SCHEMA_VERSION,
        plan_hash: plan_fingerprint(plan)?,
        state: state.clone(),
    };
    Ok(serde_json::to_string_pretty(&snap)?)
}

pub fn restore_snapshot(plan: &RolloutPlan, json: &str) -> Result<RolloutState> {
    plan.validate()?;
    let snap: Snapshot = serde_json::from_str(json)?;
    if snap.schema_version != SNAPSHOT_SCHEMA_VERSION {
        return Err(Error::Snapshot(format!(
            "schema version {} unsupported (expected {SNAPSHOT_SCHEMA_VERSION})",
            snap.schema_version
        )));
    }
    let expected = plan_fingerprint(plan)?;
    if snap.plan_hash != expected {
        return Err(Error::Snapshot(format!(
            "snapshot was taken under plan {} but this plan hashes to {expected}; \
             refusing to resume across plan edits",
            snap.plan_hash
        )));
    }
    Ok(snap.state)
}
