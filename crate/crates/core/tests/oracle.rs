use std::sync::Arc;

use proptest::prelude::*;
use socialcost::envcore::{BilateralTradeEnv, CoinEnv, EnvModel, FactoryEnv, History, RandomSmallEnv};
use socialcost::mechanisms::{argmax_set, welfare, ValuationTable};
use socialcost::oracle::{
    check_bayes_nash_ic, check_ir, expected_cumulative_utility, gum_expected_utility, gum_martingale_check, gum_run,
    rational_tables, realisable_cu, self_rational_q, GameTree, GumTables, PerturbedReports, ReportPolicy, Truthful,
};
use socialcost::Error;

/// max over joint actions of the expected own reward to go, by plain recursion.
fn expectimax(env: &dyn EnvModel, h: &History, i: usize, steps_left: usize) -> f64 {
    if steps_left == 0 {
        return 0.0;
    }
    env.alt()
        .iter()
        .map(|a| q_direct(env, h, a, i, steps_left))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn q_direct(env: &dyn EnvModel, h: &History, a: &socialcost::envcore::JointAction, i: usize, steps_left: usize) -> f64 {
    env.outcomes(h, a)
        .into_iter()
        .map(|(x, p)| {
            let mut next = h.clone();
            next.push(a.clone(), x.clone());
            p * (x.reward(i) + expectimax(env, &next, i, steps_left - 1))
        })
        .sum()
}

fn random_env(seed: u64) -> RandomSmallEnv {
    let k = 1 + (seed % 3) as usize;
    let depth = 1 + ((seed / 3) % 3) as usize;
    let n_actions = if k == 3 && depth == 3 { 1 + (seed % 2) as usize } else { 2 };
    RandomSmallEnv::new(k, n_actions, 2, depth, seed)
}

#[test]
fn valuation_is_q_minus_c_everywhere() {
    for seed in 0..10 {
        let env = random_env(seed);
        let h = vec![env.depth(); env.num_agents()];
        let t = rational_tables(&env, &h, env.depth()).unwrap();
        for node in t.tree.internal_nodes() {
            for i in 0..env.num_agents() {
                let q = t.node_q(node, i);
                let c = t.node_c(node, i);
                let v = t.node_v(node, i);
                for a in 0..q.len() {
                    assert_eq!(v[a], q[a] - c[a]);
                }
                let vbar = t.node_qbar(node, i) - t.node_cbar(node, i);
                let step_payment = t.node_payment(node, i);
                assert!((vbar - (v[t.node_chosen(node)] - step_payment)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_agent_q_matches_direct_expectimax() {
    for seed in [1u64, 4, 7, 10] {
        let env = RandomSmallEnv::new(1, 3, 2, 3, seed);
        let t = rational_tables(&env, &[3], 3).unwrap();
        let root = History::empty();
        for (a, ja) in env.alt().iter().enumerate() {
            let direct = q_direct(&env, &root, ja, 0, 3);
            assert!((t.q(1, 0, &root, a).unwrap() - direct).abs() < 1e-12);
            assert_eq!(t.c(1, 0, &root, a).unwrap(), 0.0);
        }
        let sr = self_rational_q(&env, &[3]).unwrap();
        let rt = t.declared();
        assert_eq!(sr.table(sr.tree.root(), 0), rt.table(rt.tree.root(), 0));
    }
}

#[test]
fn self_rational_matches_expectimax_on_random_envs() {
    for seed in 0..10 {
        let env = RandomSmallEnv::new(2, 2, 2, 2, seed);
        let sr = self_rational_q(&env, &[2, 2]).unwrap();
        let root = History::empty();
        for i in 0..2 {
            for (a, ja) in env.alt().iter().enumerate() {
                let direct = q_direct(&env, &root, ja, i, 2);
                assert!((sr.table(sr.tree.root(), i).values[a] - direct).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn expected_cu_on_factory() {
    let env = FactoryEnv::standard();
    let t = rational_tables(&env, &[2, 2, 2], 2).unwrap();
    assert_eq!(expected_cumulative_utility(&t, 0), 40.0);
    assert_eq!(expected_cumulative_utility(&t, 2), 0.0);
}

#[test]
fn zero_reward_symmetric_agents_have_zero_cu() {
    let env = SymmetricZero;
    let t = rational_tables(&env, &[2, 2], 2).unwrap();
    for i in 0..2 {
        assert_eq!(expected_cumulative_utility(&t, i), 0.0);
    }
}

struct SymmetricZero;

impl EnvModel for SymmetricZero {
    fn id(&self) -> String {
        "zero".into()
    }
    fn num_agents(&self) -> usize {
        2
    }
    fn action_sets(&self) -> &[Vec<u32>] {
        static SETS: std::sync::OnceLock<Vec<Vec<u32>>> = std::sync::OnceLock::new();
        SETS.get_or_init(|| vec![vec![0, 1], vec![0, 1]])
    }
    fn alt(&self) -> &[socialcost::envcore::JointAction] {
        static ALT: std::sync::OnceLock<Vec<socialcost::envcore::JointAction>> = std::sync::OnceLock::new();
        ALT.get_or_init(|| socialcost::envcore::product_alt(&[vec![0, 1], vec![0, 1]]))
    }
    fn outcomes(
        &self,
        _h: &History,
        _a: &socialcost::envcore::JointAction,
    ) -> Vec<(socialcost::envcore::JointPercept, f64)> {
        let x = socialcost::envcore::JointPercept(vec![socialcost::envcore::AgentPercept::new(0, 0.0); 2]);
        vec![(x, 1.0)]
    }
}

#[test]
fn realisable_cu_at_last_step_is_reward_minus_payment() {
    let env = FactoryEnv::standard();
    let t = rational_tables(&env, &[2, 2, 2], 2).unwrap();
    let declared = t.declared();
    let h = {
        let mut h = History::empty();
        let a = env.alt()[0].clone();
        let x = env.outcomes(&h, &a).remove(0).0;
        h.push(a, x);
        h
    };
    let node = declared.tree.locate(&h).unwrap();
    let reports = declared.profile(node).to_vec();
    assert_eq!(realisable_cu(&declared, &h, &reports, 1).unwrap(), 80.0 - 60.0);
    assert_eq!(realisable_cu(&declared, &h, &reports, 2).unwrap(), 0.0);
    assert!(realisable_cu(&declared, &h, &reports[..2], 1).is_err());
}

#[test]
fn factory_ic_and_ir_hold() {
    let env = FactoryEnv::standard();
    let declared = rational_tables(&env, &[2, 2, 2], 2).unwrap().declared();
    let ic = check_bayes_nash_ic(&declared, 200, 7);
    assert!(ic.is_empty(), "{:?}", ic.violations);
    assert!(ic.comparisons >= 200 * 3);
    let ir = check_ir(&declared);
    assert!(ir.is_empty() && ir.out_of_hypothesis.is_empty());
}

#[test]
fn random_env_sweep_ic_and_ir_hold() {
    for seed in 0..50 {
        let env = random_env(seed);
        let h = vec![env.depth(); env.num_agents()];
        let declared = rational_tables(&env, &h, env.depth()).unwrap().declared();
        let ic = check_bayes_nash_ic(&declared, 200, seed);
        assert!(ic.is_empty(), "seed {seed}: {:?}", ic.violations.first());
        let ir = check_ir(&declared);
        assert!(ir.is_empty(), "seed {seed}: {:?}", ir.violations.first());
    }
}

#[test]
fn mixed_horizons_stay_ic() {
    let env = RandomSmallEnv::new(2, 2, 2, 3, 99);
    let declared = rational_tables(&env, &[1, 3], 3).unwrap().declared();
    assert!(check_bayes_nash_ic(&declared, 100, 1).is_empty());
    assert!(check_ir(&declared).is_empty());
}

#[test]
fn single_agent_ic_is_vacuous() {
    let env = CoinEnv::new(0.4);
    let declared = rational_tables(&env, &[2], 2).unwrap().declared();
    assert!(check_bayes_nash_ic(&declared, 50, 0).is_empty());
}

#[test]
fn self_rational_tables_are_flagged() {
    let env = FactoryEnv::standard();
    let declared = self_rational_q(&env, &[2, 2, 2]).unwrap();
    let ic = check_bayes_nash_ic(&declared, 200, 7);
    assert!(!ic.is_empty());
    assert!(ic.violations.iter().any(|v| v.agent == 1 && v.t == 1));
}

#[test]
fn negative_valuations_are_out_of_hypothesis() {
    let env = BilateralTradeEnv::new(100.0, 60.0);
    let declared = rational_tables(&env, &[1, 1], 1).unwrap().declared();
    let ir = check_ir(&declared);
    assert_eq!(ir.out_of_hypothesis.len(), 1);
    assert_eq!(ir.out_of_hypothesis[0].2, 1);
}

#[test]
fn oracle_csv_has_one_row_per_entry() {
    let env = FactoryEnv::standard();
    let t = rational_tables(&env, &[2, 2, 2], 2).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,agent,history_key,action_key,q,c,v");
    assert_eq!(lines.count(), (1 + 3) * 3 * 3);
}

#[test]
fn enumeration_budget_is_enforced() {
    let env = RandomSmallEnv::new(3, 3, 3, 3, 0);
    assert!(matches!(GameTree::build(&env, 3, 1000), Err(Error::BudgetExceeded { .. })));
}

fn gum_envs() -> Vec<Box<dyn EnvModel>> {
    let mut out: Vec<Box<dyn EnvModel>> = vec![Box::new(FactoryEnv::standard())];
    for seed in 0..6 {
        out.push(Box::new(RandomSmallEnv::new(2 + (seed % 2) as usize, 2, 2, 2, seed)));
    }
    out
}

fn policies(k: usize) -> Vec<Box<dyn ReportPolicy>> {
    vec![
        Box::new(Truthful),
        Box::new(PerturbedReports {
            liars: vec![0],
            scale: 0.5,
            seed: 3,
        }),
        Box::new(PerturbedReports {
            liars: (0..k).collect(),
            scale: 50.0,
            seed: 8,
        }),
    ]
}

#[test]
fn gum_is_budget_balanced_on_every_stage() {
    for env in gum_envs() {
        let k = env.num_agents();
        let gum = GumTables::new(env.as_ref(), &vec![2; k]).unwrap();
        for policy in policies(k) {
            for seed in 0..50 {
                let run = gum_run(&gum, policy.as_ref(), seed);
                assert_eq!(run.stages.len(), 3);
                for stage in &run.stages {
                    assert!(stage.p.iter().sum::<f64>().abs() < 1e-9, "{}: {:?}", env.id(), stage.p);
                }
            }
        }
    }
}

#[test]
fn gum_martingale_residuals_vanish() {
    for env in gum_envs() {
        let k = env.num_agents();
        let gum = GumTables::new(env.as_ref(), &vec![2; k]).unwrap();
        for policy in policies(k) {
            for t in 1..=3 {
                for j in 0..k {
                    for i in 0..k {
                        if j == i && !policy.is_truthful_for(i) {
                            continue;
                        }
                        let r = gum_martingale_check(&gum, policy.as_ref(), t, j, i);
                        assert!(r < 1e-9, "{} t {t} j {j} i {i}: {r}", env.id());
                    }
                }
            }
        }
    }
}

#[test]
fn gum_truthful_expectation_is_upsilon() {
    for env in gum_envs() {
        let k = env.num_agents();
        let gum = GumTables::new(env.as_ref(), &vec![2; k]).unwrap();
        let exact = gum_expected_utility(&gum, &Truthful);
        for (i, e) in exact.iter().enumerate() {
            assert!((e - gum.upsilon_root(i)).abs() < 1e-9);
        }
        let lying = PerturbedReports {
            liars: vec![0],
            scale: 0.5,
            seed: 3,
        };
        let exact = gum_expected_utility(&gum, &lying);
        for (i, e) in exact.iter().enumerate().skip(1) {
            assert!((e - gum.upsilon_root(i)).abs() < 1e-9);
        }
    }
}

fn monte_carlo(gum: &GumTables, runs: u64) -> (Vec<f64>, Vec<f64>) {
    let k = gum.k();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for seed in 0..runs {
        let u = gum_run(gum, &Truthful, seed).utilities;
        for i in 0..k {
            sum[i] += u[i];
            sq[i] += u[i] * u[i];
        }
    }
    let n = runs as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = (0..k)
        .map(|i| ((sq[i] / n - mean[i] * mean[i]).max(0.0) / n).sqrt())
        .collect();
    (mean, se)
}

#[test]
fn gum_monte_carlo_matches_upsilon() {
    let env = FactoryEnv::standard();
    let gum = GumTables::new(&env, &[2, 2, 2]).unwrap();
    let (mean, se) = monte_carlo(&gum, 10_000);
    for i in 0..3 {
        assert!((mean[i] - gum.upsilon_root(i)).abs() <= 3.0 * se[i] + 1e-9);
    }
    let run = gum_run(&gum, &Truthful, 42);
    for i in 0..3 {
        assert!((run.utilities[i] - gum.upsilon_root(i)).abs() < 1e-9);
    }

    let env = RandomSmallEnv::new(2, 2, 3, 2, 17);
    let gum = GumTables::new(&env, &[2, 2]).unwrap();
    let (mean, se) = monte_carlo(&gum, 10_000);
    assert!(se.iter().any(|s| *s > 0.0));
    for i in 0..2 {
        assert!((mean[i] - gum.upsilon_root(i)).abs() <= 3.0 * se[i] + 1e-9, "{i}: {} vs {}", mean[i], gum.upsilon_root(i));
    }
}

#[test]
fn gum_rejects_mixed_horizons() {
    let env = FactoryEnv::standard();
    assert!(matches!(GumTables::new(&env, &[2, 1, 2]), Err(Error::Unsupported(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_all_valuations_keeps_the_argmax_set(
        raw in prop::collection::vec(prop::collection::vec(0u8..10, 4), 3),
        c in 1u8..20,
    ) {
        let v: Vec<ValuationTable> = raw.iter().map(|r| ValuationTable::new(r.iter().map(|x| f64::from(*x)).collect())).collect();
        let s: Vec<ValuationTable> = v.iter().map(|t| ValuationTable::new(t.values.iter().map(|x| x * f64::from(c)).collect())).collect();
        prop_assert_eq!(argmax_set(&welfare(&v, 4)), argmax_set(&welfare(&s, 4)));
    }

    #[test]
    fn random_two_agent_envs_are_ic(seed in any::<u64>()) {
        let env = RandomSmallEnv::new(2, 2, 2, 2, seed);
        let declared = Arc::new(rational_tables(&env, &[2, 2], 2).unwrap().declared());
        prop_assert!(check_bayes_nash_ic(&declared, 40, seed).is_empty());
        prop_assert!(check_ir(&declared).is_empty());
    }
}
