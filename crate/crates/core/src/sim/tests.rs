use super::*;
use crate::controller::{MetricSpec, PowerGate, TestSettings};
use crate::rampup::{RiskBasedConfig, StageSpec, TimeBasedConfig};
use crate::stats::TauPolicy;

fn sim_plan(schedule: Vec<StageSpec>) -> RolloutPlan {
    RolloutPlan {
        feature_flag: "sim-flag".into(),
        metrics: vec![MetricSpec {
            name: "session_success".into(),
            harmful_direction: HarmDirection::Decrease,
            mde: None,
        }],
        policy: RampPolicy::TimeBased(TimeBasedConfig { schedule }),
        test: TestSettings {
            alpha: 0.05,
            tau_policy: TauPolicy::MdeScaled { horizon_n: 4000.0 },
            delta0: 0.0,
            one_sided: false,
        },
        variance_method: crate::stats::VarianceMethod::Jackknife,
        partitions: 10,
        check_interval_hours: 1,
        power_gate: PowerGate { mde: 0.5, beta: 0.1 },
        assignment_salt: "sim-assign".into(),
        partition_salt: "sim-part".into(),
        predicted_population_per_stage: 1800.0,
        initial_treatment_pct: 0.01,
        stage_length_hours: 24,
        bonferroni: false,
        alert_policy: crate::controller::AlertPolicy::AutoRevert,
    }
}

fn clustered_pop(users: u64, horizon: u32) -> PopulationModel {
    PopulationModel {
        users,
        horizon_hours: horizon,
        kind: PopulationKind::Clustered { sessions_per_user_rate: 0.5, beta_a: 7.0, beta_b: 3.0 },
    }
}

fn scenario(
    name: &str,
    plan: RolloutPlan,
    pop: PopulationModel,
    effect: EffectModel,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        plan,
        population: pop,
        effect,
        replications: 8,
        seed: 20_240_601,
        loss_tolerance: None,
    }
}

fn fast_schedule() -> Vec<StageSpec> {
    vec![
        StageSpec { treatment_pct: 0.2, duration_hours: 12 },
        StageSpec { treatment_pct: 0.5, duration_hours: 12 },
    ]
}

#[test]
fn aa_run_is_quiet_and_lossless() {
    let sc =
        scenario("aa-smoke", sim_plan(fast_schedule()), clustered_pop(150, 72), EffectModel::None);
    let report = run_experiment(&sc).unwrap();
    assert_eq!(report.replications, 8);
    assert_eq!(report.avg_total_loss, 0.0, "a/a runs cannot accrue loss");
    assert_eq!(report.detected + report.completed + report.censored, 8);
    assert!(report.positive_rate <= 0.25, "got {}", report.positive_rate);
}

#[test]
fn reports_are_deterministic() {
    let sc = scenario(
        "determinism",
        sim_plan(fast_schedule()),
        clustered_pop(120, 48),
        EffectModel::None,
    );
    let a = serde_json::to_string(&run_experiment(&sc).unwrap()).unwrap();
    let b = serde_json::to_string(&run_experiment(&sc).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn replication_is_a_pure_function_of_its_seed() {
    let plan = sim_plan(fast_schedule());
    let pop = clustered_pop(100, 48);
    let a = run_replication(&plan, &pop, &EffectModel::None, 99).unwrap();
    let b = run_replication(&plan, &pop, &EffectModel::None, 99).unwrap();
    assert_eq!(a.outcome, b.outcome);
    assert_eq!(a.treatment_n, b.treatment_n);
    assert_eq!(a.total_loss.to_bits(), b.total_loss.to_bits());
    assert_eq!(a.stage_pcts, b.stage_pcts);
}

#[test]
fn a_gross_regression_is_always_caught() {
    // mean relative drop of 50% on the success rate
    let effect = EffectModel::GammaRelative {
        shape: 6.25,
        scale: 0.08,
        direction: EffectDirection::Decrease,
    };
    let sc =
        scenario("gross-regression", sim_plan(fast_schedule()), clustered_pop(200, 72), effect);
    let report = run_experiment(&sc).unwrap();
    assert_eq!(report.positive_rate, 1.0);
    assert!(report.avg_hours_to_detection.unwrap() < 24.0);
    assert!(report.avg_total_loss > 0.0);
}

#[test]
fn healthy_rollout_completes_through_the_gate() {
    let sc = scenario(
        "healthy-complete",
        sim_plan(vec![StageSpec { treatment_pct: 0.5, duration_hours: 6 }]),
        clustered_pop(200, 48),
        EffectModel::None,
    );
    let report = run_experiment(&sc).unwrap();
    assert_eq!(report.completed, 8, "{report:?}");
    assert_eq!(report.avg_hours_to_full_rollout, Some(5.0));
    assert_eq!(report.positive_rate, 0.0);
}

#[test]
fn risk_policy_reports_loss_against_its_own_tolerance() {
    let mut plan = sim_plan(fast_schedule());
    plan.policy = RampPolicy::RiskBased(RiskBasedConfig {
        delta0: 0.02,
        sigma0_sq: 4e-4,
        mu0: 0.7,
        risk_tolerance: 0.1,
        cost_tolerance: 25.0,
    });
    // harmful increase so the mirrored budget logic gets exercised
    plan.metrics[0].harmful_direction = HarmDirection::Increase;
    let effect = EffectModel::GammaRelative {
        shape: 6.25,
        scale: 0.008,
        direction: EffectDirection::Increase,
    };
    let sc = scenario("risk-loss", plan, clustered_pop(150, 72), effect);
    let report = run_experiment(&sc).unwrap();
    assert_eq!(report.loss_tolerance, Some(25.0));
    let frac = report.frac_exceeding_loss_tolerance.unwrap();
    assert!((0.0..=1.0).contains(&frac));
    assert!(report.avg_total_loss > 0.0);
}

#[test]
fn stage_trajectory_is_monotone() {
    let sc = scenario(
        "trajectory",
        sim_plan(fast_schedule()),
        clustered_pop(150, 60),
        EffectModel::None,
    );
    let report = run_experiment(&sc).unwrap();
    for w in report.avg_stage_pcts.windows(2) {
        assert!(w[1] >= w[0], "stage averages must not shrink: {:?}", report.avg_stage_pcts);
    }
}

#[test]
fn scenario_validation() {
    let mut sc =
        scenario("bad", sim_plan(fast_schedule()), clustered_pop(100, 48), EffectModel::None);
    sc.replications = 0;
    assert!(sc.validate().is_err());

    let mut sc2 = scenario(
        "two-metrics",
        sim_plan(fast_schedule()),
        clustered_pop(100, 48),
        EffectModel::None,
    );
    sc2.plan.metrics.push(MetricSpec {
        name: "latency".into(),
        harmful_direction: HarmDirection::Increase,
        mde: None,
    });
    assert!(sc2.validate().is_err());
}
