use proptest::prelude::*;
use socialcost::markovvcg::{
    check_markov_ic_ir, markov_vcg, markov_vcg_reported, policy_evaluation, random_mdp, value_iteration, EpisodicMdp,
    Policy, RewardTable,
};
use socialcost::mechanisms::{argmax_set, clark_payments, welfare, ValuationTable};

/// Value of a policy by pushing the state distribution forward step by step.
fn forward_value(mdp: &EpisodicMdp, pi: &Policy, r: &RewardTable) -> f64 {
    let mut dist = vec![0.0; mdp.states];
    dist[mdp.x1] = 1.0;
    let mut total = 0.0;
    for h in 0..mdp.horizon {
        let mut next = vec![0.0; mdp.states];
        for s in 0..mdp.states {
            let a = pi[h][s];
            total += dist[s] * r[h][s][a];
            for (s2, p) in mdp.transitions[h][s][a].iter().enumerate() {
                next[s2] += dist[s] * p;
            }
        }
        dist = next;
    }
    total
}

fn all_policies(mdp: &EpisodicMdp) -> Vec<Policy> {
    let cells = mdp.horizon * mdp.states;
    let count = mdp.actions.pow(cells as u32);
    (0..count)
        .map(|mut code| {
            let mut pi = vec![vec![0; mdp.states]; mdp.horizon];
            for row in pi.iter_mut() {
                for a in row.iter_mut() {
                    *a = code % mdp.actions;
                    code /= mdp.actions;
                }
            }
            pi
        })
        .collect()
}

fn add(a: &RewardTable, b: &RewardTable) -> RewardTable {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p + q).collect()).collect())
        .collect()
}

fn total_except(mdp: &EpisodicMdp, skip: Option<usize>) -> RewardTable {
    let mut out = mdp.zero_reward();
    for (j, r) in mdp.rewards.iter().enumerate() {
        if Some(j) != skip {
            out = add(&out, r);
        }
    }
    out
}

fn best_value(mdp: &EpisodicMdp, policies: &[Policy], r: &RewardTable) -> f64 {
    policies.iter().map(|pi| forward_value(mdp, pi, r)).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn prices_match_brute_force_policy_enumeration() {
    for seed in 0..10 {
        let mdp = random_mdp(3, 2, 3, 2, seed % 2 == 0, seed);
        let policies = all_policies(&mdp);
        let out = markov_vcg(&mdp).unwrap();
        let total = total_except(&mdp, None);
        assert!((out.welfare - best_value(&mdp, &policies, &total)).abs() < 1e-12);
        assert!((forward_value(&mdp, &out.pi_star, &total) - out.welfare).abs() < 1e-12);
        for i in 1..=2 {
            let r_minus = total_except(&mdp, Some(i));
            let price = best_value(&mdp, &policies, &r_minus) - forward_value(&mdp, &out.pi_star, &r_minus);
            assert!((out.prices[i - 1] - price).abs() < 1e-12, "seed {seed} agent {i}");
            assert!((out.agent_values[i - 1] - forward_value(&mdp, &out.pi_star, &mdp.rewards[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn random_instances_pass_ic_ir() {
    let mut checked = 0;
    for seed in 0..20u64 {
        let states = 1 + (seed % 3) as usize;
        let horizon = 1 + ((seed / 3) % 3) as usize;
        let agents = 1 + (seed % 2) as usize;
        let mdp = random_mdp(states, 2, horizon, agents, seed % 4 == 0, seed);
        let report = check_markov_ic_ir(&mdp, 100, seed).unwrap();
        assert!(report.is_empty(), "seed {seed}: {:?}", report.violations);
        assert!(report.min_price >= -1e-12);
        checked += report.misreports_checked;
    }
    assert_eq!(checked, 100 * (10 + 2 * 10));
}

#[test]
fn single_step_is_clark_vcg() {
    for seed in 0..30u64 {
        let k = 1 + (seed % 3) as usize;
        let n_alt = 2 + (seed % 3) as usize;
        let mdp = random_mdp(1, n_alt, 1, k, true, seed);
        let out = markov_vcg(&mdp).unwrap();
        let tables: Vec<ValuationTable> =
            mdp.rewards[1..].iter().map(|r| ValuationTable::new(r[0][0].clone())).collect();
        let chosen = argmax_set(&welfare(&tables, n_alt))[0];
        assert_eq!(out.pi_star[0][0], chosen);
        for (p, q) in out.prices.iter().zip(clark_payments(&tables, chosen)) {
            assert!((p - q).abs() < 1e-9);
        }
    }
}

#[test]
fn lone_agent_pays_nothing_and_gets_its_optimum() {
    let mdp = random_mdp(3, 2, 3, 1, true, 8);
    let out = markov_vcg(&mdp).unwrap();
    assert_eq!(out.prices, vec![0.0]);
    let (_, v) = value_iteration(&mdp, &mdp.rewards[1]);
    assert!((out.agent_values[0] - v[0][0]).abs() < 1e-12);
}

#[test]
fn truthful_report_reproduces_the_truthful_outcome() {
    let mdp = random_mdp(3, 3, 2, 2, false, 12);
    let a = markov_vcg(&mdp).unwrap();
    let b = markov_vcg_reported(&mdp, &mdp.rewards).unwrap();
    assert_eq!(a, b);
}

/// Two actions over one step: agent 1 values action 0 at 0.6, agent 2
/// values action 1 at 0.9. Truthfully agent 2 wins and pays 0.6.
fn hand_instance() -> EpisodicMdp {
    EpisodicMdp {
        states: 1,
        actions: 2,
        horizon: 2,
        x1: 0,
        transitions: vec![vec![vec![vec![1.0]; 2]]; 2],
        rewards: vec![
            vec![vec![vec![0.0, 0.0]]; 2],
            vec![vec![vec![0.6, 0.0]], vec![vec![0.0, 0.0]]],
            vec![vec![vec![0.0, 0.9]], vec![vec![0.0, 0.0]]],
        ],
    }
}

#[test]
fn hand_instance_prices() {
    let mdp = hand_instance();
    let out = markov_vcg(&mdp).unwrap();
    assert_eq!(out.pi_star[0][0], 1);
    assert!((out.prices[1] - 0.6).abs() < 1e-12);
    assert_eq!(out.prices[0], 0.0);
    assert!((out.utilities()[1] - 0.3).abs() < 1e-12);
}

#[test]
fn inflating_a_losing_report_does_not_help() {
    let mdp = hand_instance();
    let honest = markov_vcg(&mdp).unwrap().utilities();
    let mut reports = mdp.rewards.clone();
    reports[1][0][0][0] = 1.0;
    let lied = markov_vcg_reported(&mdp, &reports).unwrap();
    assert_eq!(lied.pi_star[0][0], 0);
    // Agent 1 now wins but pays 0.9 for a true value of 0.6.
    assert!((lied.utilities()[0] - (0.6 - 0.9)).abs() < 1e-12);
    assert!(lied.utilities()[0] <= honest[0]);
}

#[test]
fn mdp_json_round_trip() {
    let mdp = random_mdp(2, 2, 2, 1, false, 3);
    let text = serde_json::to_string(&mdp).unwrap();
    assert!(text.contains("\"H\":2"));
    let back: EpisodicMdp = serde_json::from_str(&text).unwrap();
    assert_eq!(back, mdp);
}

#[test]
fn malformed_instances_are_rejected() {
    let mut mdp = random_mdp(2, 2, 2, 1, false, 3);
    mdp.rewards[1][0][0][0] = 1.5;
    assert!(markov_vcg(&mdp).is_err());
    let mut mdp = random_mdp(2, 2, 2, 1, false, 3);
    mdp.x1 = 5;
    assert!(markov_vcg(&mdp).is_err());
    let mdp = random_mdp(2, 2, 2, 1, false, 3);
    assert!(markov_vcg_reported(&mdp, &mdp.rewards[..1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prices_are_non_negative(
        states in 1usize..=3, actions in 1usize..=3, horizon in 1usize..=3, agents in 1usize..=3,
        zero in any::<bool>(), seed in any::<u64>(),
    ) {
        let mdp = random_mdp(states, actions, horizon, agents, zero, seed);
        let out = markov_vcg(&mdp).unwrap();
        prop_assert!(out.prices.iter().all(|p| *p >= -1e-12));
        prop_assert!(out.utilities().iter().all(|u| *u >= -1e-9));
    }

    #[test]
    fn controller_shift_leaves_prices(
        states in 1usize..=3, horizon in 1usize..=3, seed in any::<u64>(), c in 0.0f64..1.0,
    ) {
        let mdp = random_mdp(states, 2, horizon, 2, true, seed);
        let base = markov_vcg(&mdp).unwrap();
        // Shift the controller reward uniformly; validation bounds are [0, 1].
        let mut shifted = mdp.clone();
        for x in shifted.rewards[0].iter_mut().flatten().flatten() {
            *x += c;
        }
        let out = markov_vcg(&shifted).unwrap();
        prop_assert_eq!(&out.pi_minus, &base.pi_minus);
        for (a, b) in out.prices.iter().zip(&base.prices) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let v = policy_evaluation(&mdp, &out.pi_star, &mdp.zero_reward());
        prop_assert_eq!(v[0][mdp.x1], 0.0);
    }
}
