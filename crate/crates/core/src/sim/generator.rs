//! Synthetic event streams.
//!
//! Clustered populations give each unit a sticky success rate q_i drawn from
//! a beta mixture and a Poisson number of sessions per hour, so repeated
//! sessions from one unit are correlated and the effective sample size is
//! smaller than the raw session count. The iid kind is a fresh-units-each-
//! hour Bernoulli stream with no clustering at all.
//!
//! Every random draw is keyed by (seed, hour, unit), so any subset of units
//! can be generated in any order without disturbing the rest of the stream.

use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha12Rng, ChaCha8Rng};
use rand_distr::{Beta, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Group;

fn default_horizon() -> u32 {
    168
}
fn default_beta_a() -> f64 {
    7.0
}
fn default_beta_b() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationKind {
    /// Every hour brings `users` brand-new units with one Bernoulli(p)
    /// observation each: the naive variance assumptions hold exactly.
    IidBernoulli { p: f64 },
    /// Persistent units with per-unit rates q_i ~ Beta(a, b) and
    /// Poisson(rate) sessions per unit per hour.
    Clustered {
        sessions_per_user_rate: f64,
        #[serde(default = "default_beta_a")]
        beta_a: f64,
        #[serde(default = "default_beta_b")]
        beta_b: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    pub users: u64,
    #[serde(default = "default_horizon")]
    pub horizon_hours: u32,
    pub kind: PopulationKind,
}

impl PopulationModel {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::InvalidConfig("population needs at least one user".into()));
        }
        if self.horizon_hours == 0 {
            return Err(Error::InvalidConfig("horizon_hours must be positive".into()));
        }
        match self.kind {
            PopulationKind::IidBernoulli { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::InvalidConfig(format!("bernoulli rate {p} outside (0, 1)")));
                }
            }
            PopulationKind::Clustered { sessions_per_user_rate, beta_a, beta_b } => {
                if !(sessions_per_user_rate.is_finite() && sessions_per_user_rate > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "sessions_per_user_rate must be positive, got {sessions_per_user_rate}"
                    )));
                }
                if !(beta_a > 0.0 && beta_b > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "beta mixture parameters must be positive, got ({beta_a}, {beta_b})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDirection {
    Increase,
    Decrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectModel {
    /// A/A: treatment identical to control.
    None,
    /// Per-unit relative effect: q_trt = q_ctrl * (1 +/- eps) with
    /// eps ~ Gamma(shape, scale), clamped into [0, 1].
    GammaRelative { shape: f64, scale: f64, direction: EffectDirection },
}

impl EffectModel {
    pub fn validate(&self) -> Result<()> {
        if let EffectModel::GammaRelative { shape, scale, .. } = *self {
            if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "gamma effect needs positive shape and scale, got ({shape}, {scale})"
                )));
            }
        }
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, EffectModel::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitTruth {
    pub q_ctrl: f64,
    pub q_trt: f64,
}

impl UnitTruth {
    pub fn delta(&self) -> f64 {
        self.q_trt - self.q_ctrl
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable derived seed; used for rep seeds and per-(hour, unit) streams.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ splitmix64(a.wrapping_add(0x9E37_79B9)) ^ splitmix64(b))
}

fn apply_effect(q: f64, eps: f64, direction: EffectDirection) -> f64 {
    let shifted = match direction {
        EffectDirection::Increase => q * (1.0 + eps),
        EffectDirection::Decrease => q * (1.0 - eps),
    };
    shifted.clamp(0.0, 1.0)
}

enum StreamKind {
    Iid { p: f64 },
    Clustered { rate: f64, truths: Vec<UnitTruth>, ids: Vec<String> },
}

pub struct StreamGenerator {
    kind: StreamKind,
    effect: EffectModel,
    users: u64,
    horizon: u32,
    seed: u64,
}

impl StreamGenerator {
    pub fn new(pop: &PopulationModel, effect: &EffectModel, seed: u64) -> Result<Self> {
        pop.validate()?;
        effect.validate()?;
        let kind = match pop.kind {
            PopulationKind::IidBernoulli { p } => StreamKind::Iid { p },
            PopulationKind::Clustered { sessions_per_user_rate, beta_a, beta_b } => {
                // one stream for all truths keeps unit i's rate independent
                // of how many units follow it
                let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xA11CE, 0));
                let beta = Beta::new(beta_a, beta_b)
                    .map_err(|e| Error::InvalidConfig(format!("beta mixture: {e}")))?;
                let gamma = match *effect {
                    EffectModel::GammaRelative { shape, scale, .. } => Some(
                        Gamma::new(shape, scale)
                            .map_err(|e| Error::InvalidConfig(format!("gamma effect: {e}")))?,
                    ),
                    EffectModel::None => None,
                };
                let mut truths = Vec::with_capacity(pop.users as usize);
                let mut ids = Vec::with_capacity(pop.users as usize);
                for i in 0..pop.users {
                    let q: f64 = beta.sample(&mut rng);
                    let q_trt = match (&gamma, *effect) {
                        (Some(g), EffectModel::GammaRelative { direction, .. }) => {
                            apply_effect(q, g.sample(&mut rng), direction)
                        }
                        _ => q,
                    };
                    truths.push(UnitTruth { q_ctrl: q, q_trt });
                    ids.push(format!("u{i:06}"));
                }
                StreamKind::Clustered { rate: sessions_per_user_rate, truths, ids }
            }
        };
        Ok(Self { kind, effect: *effect, users: pop.users, horizon: pop.horizon_hours, seed })
    }

    pub fn unit_count(&self) -> usize {
        self.users as usize
    }

    pub fn horizon_hours(&self) -> u32 {
        self.horizon
    }

    /// Iid units are fresh every hour (the id embeds the hour), clustered
    /// units persist. Callers caching assignments must respect this.
    pub fn ids_are_stable(&self) -> bool {
        matches!(self.kind, StreamKind::Clustered { .. })
    }

    pub fn unit_id(&self, hour: u32, idx: usize) -> String {
        match &self.kind {
            StreamKind::Clustered { ids, .. } => ids[idx].clone(),
            StreamKind::Iid { .. } => format!("h{hour}-u{idx:06}"),
        }
    }

    pub fn truth(&self, idx: usize) -> Option<UnitTruth> {
        match &self.kind {
            StreamKind::Clustered { truths, .. } => Some(truths[idx]),
            StreamKind::Iid { .. } => None,
        }
    }

    /// Visit this unit's sessions for one hour under the given arm. The
    /// callback receives (metric value, true per-session effect). Returns
    /// the session count.
    pub fn visit_sessions<F: FnMut(f64, f64)>(
        &self,
        hour: u32,
        idx: usize,
        group: Group,
        mut f: F,
    ) -> u32 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(self.seed, hour as u64 + 1, idx as u64 + 1));
        match &self.kind {
            StreamKind::Iid { p } => {
                let q_ctrl = *p;
                let q_trt = match self.effect {
                    EffectModel::GammaRelative { shape, scale, direction } => {
                        // fresh effect draw per unit-hour: iid units have no
                        // identity to attach a persistent effect to
                        let eps = Gamma::new(shape, scale).unwrap().sample(&mut rng);
                        apply_effect(q_ctrl, eps, direction)
                    }
                    EffectModel::None => q_ctrl,
                };
                let q = if group == Group::Trt { q_trt } else { q_ctrl };
                let u: f64 = rng.random();
                f(if u < q { 1.0 } else { 0.0 }, q_trt - q_ctrl);
                1
            }
            StreamKind::Clustered { rate, truths, .. } => {
                let k = Poisson::new(*rate).unwrap().sample(&mut rng) as u32;
                let t = truths[idx];
                let q = if group == Group::Trt { t.q_trt } else { t.q_ctrl };
                for _ in 0..k {
                    let u: f64 = rng.random();
                    f(if u < q { 1.0 } else { 0.0 }, t.delta());
                }
                k
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clustered(users: u64, rate: f64) -> PopulationModel {
        PopulationModel {
            users,
            horizon_hours: 168,
            kind: PopulationKind::Clustered {
                sessions_per_user_rate: rate,
                beta_a: 7.0,
                beta_b: 3.0,
            },
        }
    }

    #[test]
    fn same_seed_reproduces_the_stream_in_any_visit_order() {
        let pop = clustered(50, 0.5);
        let gen = StreamGenerator::new(&pop, &EffectModel::None, 42).unwrap();
        let collect = |order: &[usize]| {
            let mut out = Vec::new();
            for &i in order {
                gen.visit_sessions(3, i, Group::Ctrl, |v, _| out.push((i, v.to_bits())));
            }
            out.sort_unstable();
            out
        };
        let fwd: Vec<usize> = (0..50).collect();
        let rev: Vec<usize> = (0..50).rev().collect();
        assert_eq!(collect(&fwd), collect(&rev));

        let gen2 = StreamGenerator::new(&pop, &EffectModel::None, 42).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        gen.visit_sessions(7, 11, Group::Trt, |v, _| a.push(v.to_bits()));
        gen2.visit_sessions(7, 11, Group::Trt, |v, _| b.push(v.to_bits()));
        assert_eq!(a, b);

        let gen3 = StreamGenerator::new(&pop, &EffectModel::None, 43).unwrap();
        let mut full_a = Vec::new();
        let mut full_c = Vec::new();
        for i in 0..50 {
            gen.visit_sessions(7, i, Group::Trt, |v, _| full_a.push(v.to_bits()));
            gen3.visit_sessions(7, i, Group::Trt, |v, _| full_c.push(v.to_bits()));
        }
        assert_ne!(full_a, full_c, "different seeds should differ somewhere");
    }

    #[test]
    fn null_effect_means_identical_truths() {
        let gen = StreamGenerator::new(&clustered(200, 0.5), &EffectModel::None, 7).unwrap();
        for i in 0..200 {
            let t = gen.truth(i).unwrap();
            assert_eq!(t.q_ctrl, t.q_trt);
            assert!((0.0..=1.0).contains(&t.q_ctrl));
        }
    }

    #[test]
    fn beta_mixture_centers_near_its_mean() {
        let gen = StreamGenerator::new(&clustered(4000, 0.5), &EffectModel::None, 7).unwrap();
        let mean: f64 = (0..4000).map(|i| gen.truth(i).unwrap().q_ctrl).sum::<f64>() / 4000.0;
        // Beta(7, 3) mean is 0.7 with sd ~ 0.14, so the sample mean of 4000
        // draws should sit within ~0.01
        assert!((mean - 0.7).abs() < 0.01, "got {mean}");
    }

    #[test]
    fn gamma_effect_shifts_the_right_direction() {
        let effect = EffectModel::GammaRelative {
            shape: 6.25,
            scale: 0.008,
            direction: EffectDirection::Increase,
        };
        let gen = StreamGenerator::new(&clustered(2000, 0.5), &effect, 11).unwrap();
        let mut mean_delta = 0.0;
        for i in 0..2000 {
            let t = gen.truth(i).unwrap();
            assert!(t.q_trt >= t.q_ctrl);
            assert!(t.q_trt <= 1.0);
            mean_delta += t.delta();
        }
        mean_delta /= 2000.0;
        // mean relative effect 5% of a 0.7 base rate, minus clamping at 1
        assert!((0.02..0.05).contains(&mean_delta), "got {mean_delta}");
    }

    #[test]
    fn session_counts_follow_the_rate() {
        let gen = StreamGenerator::new(&clustered(500, 2.0), &EffectModel::None, 3).unwrap();
        let mut total = 0u32;
        for h in 0..20 {
            for i in 0..500 {
                total += gen.visit_sessions(h, i, Group::Ctrl, |_, _| {});
            }
        }
        let per_unit_hour = total as f64 / (20.0 * 500.0);
        assert!((per_unit_hour - 2.0).abs() < 0.05, "got {per_unit_hour}");
    }

    #[test]
    fn iid_ids_are_hourly_but_clustered_ids_persist() {
        let iid = PopulationModel {
            users: 10,
            horizon_hours: 24,
            kind: PopulationKind::IidBernoulli { p: 0.7 },
        };
        let gen = StreamGenerator::new(&iid, &EffectModel::None, 1).unwrap();
        assert!(!gen.ids_are_stable());
        assert_ne!(gen.unit_id(0, 3), gen.unit_id(1, 3));

        let gen = StreamGenerator::new(&clustered(10, 1.0), &EffectModel::None, 1).unwrap();
        assert!(gen.ids_are_stable());
        assert_eq!(gen.unit_id(0, 3), gen.unit_id(1, 3));
    }

    #[test]
    fn iid_bernoulli_rate_is_respected() {
        let iid = PopulationModel {
            users: 2000,
            horizon_hours: 24,
            kind: PopulationKind::IidBernoulli { p: 0.7 },
        };
        let gen = StreamGenerator::new(&iid, &EffectModel::None, 9).unwrap();
        let mut sum = 0.0;
        let mut n = 0u32;
        for h in 0..10 {
            for i in 0..2000 {
                n += gen.visit_sessions(h, i, Group::Ctrl, |v, _| sum += v);
            }
        }
        assert_eq!(n, 20_000, "iid emits exactly one observation per unit-hour");
        assert!((sum / n as f64 - 0.7).abs() < 0.01);
    }
}
