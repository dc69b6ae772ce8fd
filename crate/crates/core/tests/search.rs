use std::path::PathBuf;

use autoq_core::accuracy::{derive_sensitivities, AccuracyConfig, AccuracyModelParams};
use autoq_core::cost::{parse_hardware_config, Budgets, HardwareConfig};
use autoq_core::env::{EnvConfig, QuantEnv, RewardTiming, RewardWeights};
use autoq_core::model::parse_network_spec;
use autoq_core::search::{
    brute_force_search, evaluate_policy, layerwise_baseline_search, networkwise_baseline_search, run_search,
    SearchConfig, Searcher, BRUTE_FORCE_LIMIT,
};
use autoq_core::{Error, NetworkSpec, QbnPolicy};

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn tiny() -> (NetworkSpec, HardwareConfig) {
    (
        parse_network_spec(&fixture("tiny2x2.json")).unwrap(),
        parse_hardware_config(&fixture("hw.json")).unwrap(),
    )
}

fn one_layer(c_out: usize, variances: &[f64]) -> NetworkSpec {
    let kernels: Vec<String> = variances.iter().map(|v| format!(r#"{{"variance": {v}}}"#)).collect();
    parse_network_spec(&format!(
        r#"{{"name": "one", "acc_fp": 0.7, "layers": [
        {{"kind": "conv", "c_in": 1, "c_out": {c_out}, "kernel": [2, 2], "stride": 1,
         "feature": [4, 4], "macs_per_kernel": 64, "kernels": [{}]}}]}}"#,
        kernels.join(",")
    ))
    .unwrap()
}

fn accuracy_cfg() -> EnvConfig {
    EnvConfig {
        weights: RewardWeights::accuracy_guaranteed(0.3, 0.3, 0.3).unwrap(),
        budgets: None,
        timing: RewardTiming::PerStep,
    }
}

fn params(net: &NetworkSpec) -> AccuracyModelParams {
    derive_sensitivities(net, &AccuracyConfig::default()).unwrap()
}

fn small_config(weights: RewardWeights, budgets: Option<Budgets>, seed: u64) -> SearchConfig {
    let mut cfg = SearchConfig::new(weights, budgets, seed);
    cfg.hyper.hidden = vec![16, 16];
    cfg.hyper.batch = 8;
    cfg.hyper.buffer_capacity = 64;
    cfg.hyper.explore_episodes = 2;
    cfg.hyper.exploit_episodes = 4;
    cfg.episodes = 6;
    cfg
}

const FULL_W: [u8; 9] = [0, 1, 2, 3, 4, 5, 6, 7, 8];
const FULL_A: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

#[test]
fn single_kernel_brute_force_counts() {
    let net = one_layer(1, &[1.0]);
    let (_, hw) = tiny();
    let r = brute_force_search(&net, &hw, &params(&net), &accuracy_cfg(), &[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap();
    assert_eq!(r.evaluated, 16);
}

#[test]
fn finer_granularity_never_loses() {
    let (net, hw) = tiny();
    let p = params(&net);
    let cfg = accuracy_cfg();
    let k = brute_force_search(&net, &hw, &p, &cfg, &FULL_W, &FULL_A).unwrap();
    let l = layerwise_baseline_search(&net, &hw, &p, &cfg, &FULL_W, &FULL_A).unwrap();
    let n = networkwise_baseline_search(&net, &hw, &p, &cfg, &FULL_W, &FULL_A).unwrap();
    assert_eq!(k.evaluated, 8 * 8 * 81 * 81);
    assert_eq!(l.evaluated, 8 * 8 * 9 * 9);
    assert_eq!(n.evaluated, 8 * 9);
    assert!(k.reward >= l.reward && l.reward >= n.reward);
}

#[test]
fn equal_sensitivities_make_layerwise_optimal() {
    let net = one_layer(3, &[0.5, 0.5, 0.5]);
    let (_, hw) = tiny();
    let p = params(&net);
    let cfg = accuracy_cfg();
    let k = brute_force_search(&net, &hw, &p, &cfg, &FULL_W, &FULL_A).unwrap();
    let l = layerwise_baseline_search(&net, &hw, &p, &cfg, &FULL_W, &FULL_A).unwrap();
    assert!((k.reward - l.reward).abs() < 1e-12);
}

#[test]
fn brute_force_filters_by_budget_before_maximizing() {
    let (net, hw) = tiny();
    let p = params(&net);
    let all8 = evaluate_policy(&net, &hw, &p, &QbnPolicy::uniform(&net, 8, 8)).unwrap();
    let budgets = Budgets {
        latency_s: Some(all8.latency_s * 0.2),
        energy_j: None,
        area_units: None,
    };
    let cfg = EnvConfig {
        weights: RewardWeights::resource_constrained(),
        budgets: Some(budgets),
        timing: RewardTiming::PerStep,
    };
    let r = brute_force_search(&net, &hw, &p, &cfg, &[0, 2, 4, 8], &[1, 2, 4, 8]).unwrap();
    assert!(budgets.admits(&r.report));

    let env = QuantEnv::new(net.clone(), hw.clone(), p.clone(), cfg.clone()).unwrap();
    let mut best = f64::NEG_INFINITY;
    for a0 in [1, 2, 4, 8] {
        for a1 in [1, 2, 4, 8] {
            for w in 0..256u32 {
                let q = |i: u32| [0, 2, 4, 8][((w >> (2 * i)) & 3) as usize];
                let policy = QbnPolicy {
                    act_qbn: vec![a0, a1],
                    weight_qbn: vec![vec![q(0), q(1)], vec![q(2), q(3)]],
                };
                let (report, reward) = env.evaluate(&policy).unwrap();
                if budgets.admits(&report) {
                    best = best.max(reward);
                }
            }
        }
    }
    assert_eq!(r.reward, best);
}

#[test]
fn budget_at_the_minimum_cost_is_met_exactly() {
    let (net, hw) = tiny();
    let p = params(&net);
    let min = evaluate_policy(&net, &hw, &p, &QbnPolicy::uniform(&net, 0, 1)).unwrap();
    let budgets = Budgets {
        latency_s: Some(min.latency_s),
        energy_j: Some(min.energy_j),
        area_units: Some(min.area_units),
    };
    let cfg = EnvConfig {
        weights: RewardWeights::resource_constrained(),
        budgets: Some(budgets),
        timing: RewardTiming::PerStep,
    };
    let r = brute_force_search(&net, &hw, &p, &cfg, &FULL_W, &[1, 2]).unwrap();
    assert!(budgets.admits(&r.report));

    let search = run_search(
        &net,
        &hw,
        &small_config(RewardWeights::resource_constrained(), Some(budgets), 1),
    )
    .unwrap();
    assert!(search.trace.iter().all(|row| budgets.admits(&row.report)));
}

#[test]
fn infeasible_budget_is_reported() {
    let (net, hw) = tiny();
    let budgets = Budgets {
        latency_s: Some(1e-15),
        energy_j: None,
        area_units: None,
    };
    let err = Searcher::new(
        &net,
        &hw,
        &small_config(RewardWeights::resource_constrained(), Some(budgets), 0),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InfeasibleBudget(_)), "{err}");
}

#[test]
fn search_is_deterministic_and_tracks_best() {
    let (net, hw) = tiny();
    let cfg = small_config(RewardWeights::accuracy_guaranteed(0.3, 0.3, 0.3).unwrap(), None, 5);
    let a = run_search(&net, &hw, &cfg).unwrap();
    let b = run_search(&net, &hw, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.len(), cfg.episodes + 1);
    let max = a.trace.iter().map(|r| r.reward).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_reward, max);
    assert_eq!(a.trace[a.best_episode].reward, max);
    let p = derive_sensitivities(&net, &cfg.accuracy).unwrap();
    assert_eq!(evaluate_policy(&net, &hw, &p, &a.best_policy).unwrap(), a.best_report);
}

#[test]
fn resume_continues_bit_exactly() {
    let (net, hw) = tiny();
    let cfg = small_config(RewardWeights::accuracy_guaranteed(0.3, 0.3, 0.3).unwrap(), None, 8);
    let full = run_search(&net, &hw, &cfg).unwrap();

    let mut s = Searcher::new(&net, &hw, &cfg).unwrap();
    for _ in 0..3 {
        s.run_episode().unwrap();
    }
    let bytes = s.checkpoint_bytes();
    drop(s);
    let resumed = Searcher::resume(&net, &hw, &cfg, &bytes).unwrap().finish().unwrap();
    assert_eq!(full, resumed);

    let mut bad = bytes.clone();
    bad.truncate(bytes.len() - 1);
    assert!(Searcher::resume(&net, &hw, &cfg, &bad).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(Searcher::resume(&net, &hw, &cfg, &bad).is_err());
    let mut other = cfg.clone();
    other.seed += 1;
    assert!(Searcher::resume(&net, &hw, &other, &bytes).is_err());
}

#[test]
fn oversized_space_is_refused() {
    let net = one_layer(8, &[1.0; 8]);
    let (_, hw) = tiny();
    let err = brute_force_search(&net, &hw, &params(&net), &accuracy_cfg(), &FULL_W, &FULL_A).unwrap_err();
    match err {
        Error::SpaceTooLarge { points, limit } => {
            assert_eq!(points, 8 * 9u128.pow(8));
            assert_eq!(limit, BRUTE_FORCE_LIMIT);
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn evaluate_policy_extremes() {
    let (net, hw) = tiny();
    let p = params(&net);
    let env = QuantEnv::new(net.clone(), hw.clone(), p.clone(), accuracy_cfg()).unwrap();
    let all8 = evaluate_policy(&net, &hw, &p, &QbnPolicy::uniform(&net, 8, 8)).unwrap();
    assert_eq!(&all8, env.reference());
    let pruned = evaluate_policy(&net, &hw, &p, &QbnPolicy::uniform(&net, 0, 1)).unwrap();
    let low = evaluate_policy(&net, &hw, &p, &QbnPolicy::uniform(&net, 1, 1)).unwrap();
    assert!(
        pruned.latency_s <= low.latency_s && pruned.energy_j <= low.energy_j && pruned.area_units <= low.area_units
    );
    assert!(pruned.accuracy <= low.accuracy);
    let bad = QbnPolicy {
        act_qbn: vec![0, 8],
        weight_qbn: vec![vec![8, 8], vec![8, 8]],
    };
    assert!(evaluate_policy(&net, &hw, &p, &bad).is_err());
}

#[test]
fn config_validation() {
    let w = RewardWeights::accuracy_guaranteed(0.3, 0.3, 0.3).unwrap();
    let base = small_config(w, None, 0);
    assert!(base.validate().is_ok());
    let mut c = base.clone();
    c.episodes = 1;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = base.clone();
    c.zeta_fixed = Some(1.5);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = base.clone();
    c.checkpoint = Some((PathBuf::from("x"), 0));
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = base.clone();
    c.hyper.buffer_capacity = 4;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = base;
    c.budgets = Some(Budgets {
        latency_s: Some(1.0),
        energy_j: None,
        area_units: None,
    });
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn stop_reward_ends_training_early() {
    let (net, hw) = tiny();
    let mut cfg = small_config(RewardWeights::accuracy_guaranteed(0.3, 0.3, 0.3).unwrap(), None, 3);
    cfg.stop_at_reward = Some(f64::NEG_INFINITY);
    let mut s = Searcher::new(&net, &hw, &cfg).unwrap();
    s.run_episode().unwrap();
    assert!(s.is_finished());
    assert_eq!(s.finish().unwrap().trace.len(), 2);
}
