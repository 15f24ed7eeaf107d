//! Stable salted hashing for unit assignment and variance partitioning.
//!
//! Assignment must be sticky across process restarts and machines, so we use
//! xxHash64 (stable, well mixed) rather than the std hasher. The salt and the
//! unit id are separated by a 0x1f byte so ("ab", "c") and ("a", "bc") cannot
//! collide by concatenation.

use std::hash::Hasher;

use twox_hash::XxHash64;

pub fn stable_hash64(salt: &str, unit_id: &str) -> u64 {
    let mut h = XxHash64::with_seed(0);
    h.write(salt.as_bytes());
    h.write(&[0x1f]);
    h.write(unit_id.as_bytes());
    h.finish()
}

/// Maps a unit to a uniform fraction in [0, 1). Strictly below 1: the top 53
/// bits are divided by 2^53, so a pct threshold of 1.0 captures every unit.
pub fn unit_fraction(salt: &str, unit_id: &str) -> f64 {
    (stable_hash64(salt, unit_id) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn partition_of(salt: &str, unit_id: &str, partitions: u32) -> u32 {
    debug_assert!(partitions > 0);
    (stable_hash64(salt, unit_id) % partitions as u64) as u32
}
