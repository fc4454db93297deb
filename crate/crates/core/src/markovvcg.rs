//! VCG on known tabular episodic MDPs: the welfare-optimal policy for the
//! summed rewards, one counterfactual policy per agent with its reward
//! removed, and pivot prices from the value gap.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envcore::{run_rng, RunRng};
use crate::error::{Error, Result};

/// `[h][s][a]`.
pub type RewardTable = Vec<Vec<Vec<f64>>>;
/// `[h][s]` → action index.
pub type Policy = Vec<Vec<usize>>;
/// `[h][s]` for h = 0..=H; the last row is zero.
pub type ValueTable = Vec<Vec<f64>>;

/// `rewards[0]` belongs to the controller, `rewards[i]` for i ≥ 1 to agent i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMdp {
    pub states: usize,
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub x1: usize,
    /// `[h][s][a][s′]`.
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<RewardTable>,
}

impl EpisodicMdp {
    pub fn num_agents(&self) -> usize {
        self.rewards.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (s_n, a_n, h_n) = (self.states, self.actions, self.horizon);
        if s_n == 0 || a_n == 0 || h_n == 0 {
            return Err(Error::Config("MDP needs states, actions and H ≥ 1".into()));
        }
        if self.x1 >= s_n {
            return Err(Error::Config(format!("x1 = {} is not a state", self.x1)));
        }
        if self.rewards.is_empty() {
            return Err(Error::Config("the controller reward r_0 is required".into()));
        }
        let shape_ok = |t: &RewardTable| {
            t.len() == h_n && t.iter().all(|row| row.len() == s_n && row.iter().all(|r| r.len() == a_n))
        };
        if self.transitions.len() != h_n {
            return Err(Error::Config("transitions need one table per step".into()));
        }
        for (h, step) in self.transitions.iter().enumerate() {
            if step.len() != s_n {
                return Err(Error::Config(format!("transitions[{h}] has the wrong state count")));
            }
            for (s, row) in step.iter().enumerate() {
                if row.len() != a_n {
                    return Err(Error::Config(format!("transitions[{h}][{s}] has the wrong action count")));
                }
                for (a, dist) in row.iter().enumerate() {
                    let total: f64 = dist.iter().sum();
                    if dist.len() != s_n || dist.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                        return Err(Error::Domain(format!(
                            "transitions[{h}][{s}][{a}] is not a distribution over {s_n} states"
                        )));
                    }
                }
            }
        }
        for (j, r) in self.rewards.iter().enumerate() {
            if !shape_ok(r) {
                return Err(Error::Config(format!("rewards[{j}] has the wrong shape")));
            }
            if r.iter().flatten().flatten().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Domain(format!("rewards[{j}] leaves [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn zero_reward(&self) -> RewardTable {
        vec![vec![vec![0.0; self.actions]; self.states]; self.horizon]
    }

    fn expect_next(&self, h: usize, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transitions[h][s][a].iter().zip(v).map(|(p, x)| p * x).sum()
    }
}

/// Sum of reward tables.
pub fn sum_rewards<'a>(mdp: &EpisodicMdp, tables: impl IntoIterator<Item = &'a RewardTable>) -> RewardTable {
    let mut out = mdp.zero_reward();
    for t in tables {
        for (h, row) in t.iter().enumerate() {
            for (s, r) in row.iter().enumerate() {
                for (a, x) in r.iter().enumerate() {
                    out[h][s][a] += x;
                }
            }
        }
    }
    out
}

/// Exact finite-horizon DP; ties go to the lowest action index.
pub fn value_iteration(mdp: &EpisodicMdp, reward: &RewardTable) -> (Policy, ValueTable) {
    let (h_n, s_n, a_n) = (mdp.horizon, mdp.states, mdp.actions);
    let mut v = vec![vec![0.0; s_n]; h_n + 1];
    let mut pi = vec![vec![0; s_n]; h_n];
    for h in (0..h_n).rev() {
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_n {
                let q = reward[h][s][a] + mdp.expect_next(h, s, a, &v[h + 1]);
                if q > best + 1e-12 {
                    best = q;
                    pi[h][s] = a;
                }
            }
            v[h][s] = best;
        }
    }
    (pi, v)
}

/// V^π_h(s; r) for every step and state.
pub fn policy_evaluation(mdp: &EpisodicMdp, policy: &Policy, reward: &RewardTable) -> ValueTable {
    let (h_n, s_n) = (mdp.horizon, mdp.states);
    let mut v = vec![vec![0.0; s_n]; h_n + 1];
    for h in (0..h_n).rev() {
        for s in 0..s_n {
            let a = policy[h][s];
            v[h][s] = reward[h][s][a] + mdp.expect_next(h, s, a, &v[h + 1]);
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovVcgResult {
    pub pi_star: Policy,
    /// π*_{−i} for agents 1..=k, in order.
    pub pi_minus: Vec<Policy>,
    /// V₁^{π*}(x₁; R).
    pub welfare: f64,
    /// V₁^{π*}(x₁; r_i) for agents 1..=k.
    pub agent_values: Vec<f64>,
    /// p_i(x₁) for agents 1..=k.
    pub prices: Vec<f64>,
}

impl MarkovVcgResult {
    /// V₁^{π*}(x₁; r_i) − p_i for agents 1..=k.
    pub fn utilities(&self) -> Vec<f64> {
        self.agent_values.iter().zip(&self.prices).map(|(v, p)| v - p).collect()
    }
}

pub fn markov_vcg(mdp: &EpisodicMdp) -> Result<MarkovVcgResult> {
    mdp.validate()?;
    Ok(vcg_on_reports(mdp, &mdp.rewards))
}

/// The mechanism run on declared rewards (`reports[0]` is the controller's).
/// Agent values are evaluated on the true rewards in `mdp`.
pub fn markov_vcg_reported(mdp: &EpisodicMdp, reports: &[RewardTable]) -> Result<MarkovVcgResult> {
    mdp.validate()?;
    if reports.len() != mdp.rewards.len() {
        return Err(Error::Config("one reported reward table per participant".into()));
    }
    let probe = EpisodicMdp {
        rewards: reports.to_vec(),
        ..mdp.clone()
    };
    probe.validate()?;
    Ok(vcg_on_reports(mdp, reports))
}

fn vcg_on_reports(mdp: &EpisodicMdp, reports: &[RewardTable]) -> MarkovVcgResult {
    let k = reports.len() - 1;
    let x1 = mdp.x1;
    let total = sum_rewards(mdp, reports);
    let (pi_star, v_star) = value_iteration(mdp, &total);
    let mut pi_minus = Vec::with_capacity(k);
    let mut prices = Vec::with_capacity(k);
    let mut agent_values = Vec::with_capacity(k);
    for i in 1..=k {
        let r_minus = sum_rewards(mdp, reports.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r));
        let (pi_i, v_i) = value_iteration(mdp, &r_minus);
        let on_star = policy_evaluation(mdp, &pi_star, &r_minus);
        prices.push(v_i[0][x1] - on_star[0][x1]);
        agent_values.push(policy_evaluation(mdp, &pi_star, &mdp.rewards[i])[0][x1]);
        pi_minus.push(pi_i);
    }
    MarkovVcgResult {
        pi_star,
        pi_minus,
        welfare: v_star[0][x1],
        agent_values,
        prices,
    }
}

/// A random instance with rewards in [0, 1]. `zero_controller` sets r_0 ≡ 0.
pub fn random_mdp(
    states: usize,
    actions: usize,
    horizon: usize,
    agents: usize,
    zero_controller: bool,
    seed: u64,
) -> EpisodicMdp {
    let mut rng = run_rng(seed);
    let transitions = (0..horizon)
        .map(|_| {
            (0..states)
                .map(|_| (0..actions).map(|_| random_dist(states, &mut rng)).collect())
                .collect()
        })
        .collect();
    let rewards = (0..=agents)
        .map(|j| {
            if j == 0 && zero_controller {
                vec![vec![vec![0.0; actions]; states]; horizon]
            } else {
                random_reward(states, actions, horizon, &mut rng)
            }
        })
        .collect();
    EpisodicMdp {
        states,
        actions,
        horizon,
        x1: 0,
        transitions,
        rewards,
    }
}

fn random_dist(n: usize, rng: &mut RunRng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

fn random_reward(states: usize, actions: usize, horizon: usize, rng: &mut RunRng) -> RewardTable {
    (0..horizon)
        .map(|_| {
            (0..states)
                .map(|_| (0..actions).map(|_| rng.random::<f64>()).collect())
                .collect()
        })
        .collect()
}

/// Structured and random reward misreports for one agent: the truth itself,
/// all-zero, all-one, inflation and deflation of the truth, a reversed
/// preference, then uniform draws.
pub fn sample_reward_misreports(
    mdp: &EpisodicMdp,
    truth: &RewardTable,
    count: usize,
    rng: &mut RunRng,
) -> Vec<RewardTable> {
    let map = |f: &dyn Fn(f64) -> f64| -> RewardTable {
        truth
            .iter()
            .map(|row| row.iter().map(|r| r.iter().map(|x| f(*x)).collect()).collect())
            .collect()
    };
    let mut out = vec![
        truth.clone(),
        map(&|_| 0.0),
        map(&|_| 1.0),
        map(&|x| (2.0 * x).min(1.0)),
        map(&|x| x / 2.0),
        map(&|x| 1.0 - x),
        map(&|x| if x >= 0.5 { 1.0 } else { 0.0 }),
    ];
    out.truncate(count);
    while out.len() < count {
        let mut r = random_reward(mdp.states, mdp.actions, mdp.horizon, rng);
        if rng.random_bool(0.5) {
            // Sparse one-hot misreport: all weight on a single cell.
            for row in r.iter_mut().flatten() {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
            let h = rng.random_range(0..mdp.horizon);
            let s = rng.random_range(0..mdp.states);
            let mut acts: Vec<usize> = (0..mdp.actions).collect();
            acts.shuffle(rng);
            r[h][s][acts[0]] = 1.0;
        }
        out.push(r);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovViolation {
    pub agent: usize,
    pub kind: &'static str,
    pub truthful_utility: f64,
    pub deviating_utility: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MarkovIcReport {
    pub misreports_checked: usize,
    pub min_price: f64,
    pub violations: Vec<MarkovViolation>,
}

impl MarkovIcReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For each agent, compares the truthful utility against `per_agent`
/// sampled misreports with the others truthful, and checks IR and p_i ≥ 0.
pub fn check_markov_ic_ir(mdp: &EpisodicMdp, per_agent: usize, seed: u64) -> Result<MarkovIcReport> {
    let truthful = markov_vcg(mdp)?;
    let mut rng = run_rng(seed);
    let mut report = MarkovIcReport {
        min_price: truthful.prices.iter().copied().fold(f64::INFINITY, f64::min),
        ..Default::default()
    };
    let utilities = truthful.utilities();
    for i in 1..=mdp.num_agents() {
        let honest = utilities[i - 1];
        if honest < -1e-9 {
            report.violations.push(MarkovViolation {
                agent: i,
                kind: "ir",
                truthful_utility: honest,
                deviating_utility: 0.0,
            });
        }
        if truthful.prices[i - 1] < -1e-9 {
            report.violations.push(MarkovViolation {
                agent: i,
                kind: "negative-price",
                truthful_utility: honest,
                deviating_utility: truthful.prices[i - 1],
            });
        }
        for fake in sample_reward_misreports(mdp, &mdp.rewards[i], per_agent, &mut rng) {
            let mut reports = mdp.rewards.clone();
            reports[i] = fake;
            let out = markov_vcg_reported(mdp, &reports)?;
            let u = out.utilities()[i - 1];
            report.misreports_checked += 1;
            if u > honest + 1e-9 {
                report.violations.push(MarkovViolation {
                    agent: i,
                    kind: "ic",
                    truthful_utility: honest,
                    deviating_utility: u,
                });
            }
        }
    }
    Ok(report)
}
