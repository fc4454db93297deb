//! Reference environments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{product_alt, ActionId, AgentPercept, EnvModel, History, JointAction, JointPercept};

fn deterministic(rewards: Vec<f64>) -> Vec<(JointPercept, f64)> {
    let x = JointPercept(rewards.into_iter().map(|r| AgentPercept::new(0, r)).collect());
    vec![(x, 1.0)]
}

/// One unit of product per step; the chosen alternative `j` (encoded as the
/// diagonal joint action `j|j|…|j`) gives the unit to agent `j`. Agent `j`
/// arrives at step `arrivals[j]` and values consumption only once.
#[derive(Clone, Debug)]
pub struct FactoryEnv {
    values: Vec<f64>,
    arrivals: Vec<usize>,
    sets: Vec<Vec<ActionId>>,
    alt: Vec<JointAction>,
}

impl FactoryEnv {
    pub fn new(values: Vec<f64>, arrivals: Vec<usize>) -> Self {
        assert_eq!(values.len(), arrivals.len());
        let k = values.len();
        let ids: Vec<ActionId> = (1..=k as ActionId).collect();
        let alt = ids.iter().map(|&j| JointAction::diagonal(j, k)).collect();
        FactoryEnv {
            values,
            arrivals,
            sets: vec![ids; k],
            alt,
        }
    }

    /// Three agents valuing the unit at 100, 80 and 60; the third arrives at step 2.
    pub fn standard() -> Self {
        FactoryEnv::new(vec![100.0, 80.0, 60.0], vec![1, 1, 2])
    }

    fn consumed(&self, h: &History, agent: usize) -> bool {
        let me = agent as ActionId + 1;
        h.steps
            .iter()
            .enumerate()
            .any(|(s, (a, _))| a.0[0] == me && s + 1 >= self.arrivals[agent])
    }
}

impl EnvModel for FactoryEnv {
    fn id(&self) -> String {
        "factory".into()
    }

    fn num_agents(&self) -> usize {
        self.values.len()
    }

    fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.sets
    }

    fn alt(&self) -> &[JointAction] {
        &self.alt
    }

    fn outcomes(&self, h: &History, a: &JointAction) -> Vec<(JointPercept, f64)> {
        let t = h.len() + 1;
        let rewards = (0..self.values.len())
            .map(|i| {
                let gets = a.0[0] == i as ActionId + 1
                    && t >= self.arrivals[i]
                    && !self.consumed(h, i);
                if gets {
                    self.values[i]
                } else {
                    0.0
                }
            })
            .collect();
        deterministic(rewards)
    }
}

/// Single-item auction: alternative `j|…|j` gives the item to bidder `j`.
#[derive(Clone, Debug)]
pub struct SecondPriceEnv {
    values: Vec<f64>,
    sets: Vec<Vec<ActionId>>,
    alt: Vec<JointAction>,
}

impl SecondPriceEnv {
    pub fn new(values: Vec<f64>) -> Self {
        let k = values.len();
        let ids: Vec<ActionId> = (1..=k as ActionId).collect();
        let alt = ids.iter().map(|&j| JointAction::diagonal(j, k)).collect();
        SecondPriceEnv {
            values,
            sets: vec![ids; k],
            alt,
        }
    }
}

impl EnvModel for SecondPriceEnv {
    fn id(&self) -> String {
        "second-price".into()
    }

    fn num_agents(&self) -> usize {
        self.values.len()
    }

    fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.sets
    }

    fn alt(&self) -> &[JointAction] {
        &self.alt
    }

    fn outcomes(&self, _h: &History, a: &JointAction) -> Vec<(JointPercept, f64)> {
        let winner = a.0[0] as usize - 1;
        deterministic(
            (0..self.values.len())
                .map(|i| if i == winner { self.values[i] } else { 0.0 })
                .collect(),
        )
    }
}

/// Buyer (agent 0) and seller (agent 1); `1|1` is trade, `0|0` no trade.
/// Trading gives the buyer θ_B and the seller −θ_S.
#[derive(Clone, Debug)]
pub struct BilateralTradeEnv {
    theta_b: f64,
    theta_s: f64,
    sets: Vec<Vec<ActionId>>,
    alt: Vec<JointAction>,
}

impl BilateralTradeEnv {
    pub fn new(theta_b: f64, theta_s: f64) -> Self {
        BilateralTradeEnv {
            theta_b,
            theta_s,
            sets: vec![vec![0, 1], vec![0, 1]],
            alt: vec![JointAction(vec![0, 0]), JointAction(vec![1, 1])],
        }
    }
}

impl EnvModel for BilateralTradeEnv {
    fn id(&self) -> String {
        "bilateral-trade".into()
    }

    fn num_agents(&self) -> usize {
        2
    }

    fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.sets
    }

    fn alt(&self) -> &[JointAction] {
        &self.alt
    }

    fn outcomes(&self, _h: &History, a: &JointAction) -> Vec<(JointPercept, f64)> {
        if a.0[0] == 1 {
            deterministic(vec![self.theta_b, -self.theta_s])
        } else {
            deterministic(vec![0.0, 0.0])
        }
    }
}

/// One agent, one action, a biased coin paying 1 on heads.
#[derive(Clone, Debug)]
pub struct CoinEnv {
    p: f64,
    sets: Vec<Vec<ActionId>>,
    alt: Vec<JointAction>,
}

impl CoinEnv {
    pub fn new(p: f64) -> Self {
        CoinEnv {
            p,
            sets: vec![vec![0]],
            alt: vec![JointAction(vec![0])],
        }
    }
}

impl EnvModel for CoinEnv {
    fn id(&self) -> String {
        format!("coin-{}", self.p)
    }

    fn num_agents(&self) -> usize {
        1
    }

    fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.sets
    }

    fn alt(&self) -> &[JointAction] {
        &self.alt
    }

    fn outcomes(&self, _h: &History, _a: &JointAction) -> Vec<(JointPercept, f64)> {
        vec![
            (JointPercept(vec![AgentPercept::new(1, 1.0)]), self.p),
            (JointPercept(vec![AgentPercept::new(0, 0.0)]), 1.0 - self.p),
        ]
    }
}

/// A seeded random environment over the full product of action sets. The
/// kernel at every `(h, a)` is drawn from a generator keyed on the seed and
/// the canonical encoding of `(h, a)`, so it is a pure function of its inputs.
/// Rewards lie on the grid {0, 0.25, 0.5, 0.75, 1}.
#[derive(Clone, Debug)]
pub struct RandomSmallEnv {
    k: usize,
    n_obs: usize,
    depth: usize,
    seed: u64,
    sets: Vec<Vec<ActionId>>,
    alt: Vec<JointAction>,
}

impl RandomSmallEnv {
    pub fn new(k: usize, n_actions: usize, n_obs: usize, depth: usize, seed: u64) -> Self {
        assert!(k >= 1 && n_actions >= 1 && n_obs >= 1);
        let sets = vec![(0..n_actions as ActionId).collect::<Vec<_>>(); k];
        let alt = product_alt(&sets);
        RandomSmallEnv {
            k,
            n_obs,
            depth,
            seed,
            sets,
            alt,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EnvModel for RandomSmallEnv {
    fn id(&self) -> String {
        format!("random-k{}-o{}-s{}", self.k, self.n_obs, self.seed)
    }

    fn num_agents(&self) -> usize {
        self.k
    }

    fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.sets
    }

    fn alt(&self) -> &[JointAction] {
        &self.alt
    }

    fn outcomes(&self, h: &History, a: &JointAction) -> Vec<(JointPercept, f64)> {
        let key = format!("{}#{}", h.key(), a.key());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()) ^ self.seed.rotate_left(17));
        let mut out: Vec<(JointPercept, f64)> = Vec::new();
        let mut total = 0.0;
        for _ in 0..self.n_obs {
            let x = JointPercept(
                (0..self.k)
                    .map(|_| {
                        let obs = rng.random_range(0..self.n_obs as u32);
                        let reward = rng.random_range(0..5u32) as f64 * 0.25;
                        AgentPercept::new(obs, reward)
                    })
                    .collect(),
            );
            let w: f64 = 0.05 + rng.random::<f64>();
            total += w;
            match out.iter_mut().find(|(y, _)| *y == x) {
                Some(slot) => slot.1 += w,
                None => out.push((x, w)),
            }
        }
        for slot in &mut out {
            slot.1 /= total;
        }
        out
    }
}

/// Violates the chronological condition: the probability it reports for a
/// percept sequence depends on the last action, so a later action changes the
/// probability of earlier percepts. Its one-step kernel is a fair coin.
#[derive(Clone, Debug)]
pub struct BrokenChronologyEnv {
    sets: Vec<Vec<ActionId>>,
    alt: Vec<JointAction>,
}

impl Default for BrokenChronologyEnv {
    fn default() -> Self {
        BrokenChronologyEnv {
            sets: vec![vec![0, 1]],
            alt: vec![JointAction(vec![0]), JointAction(vec![1])],
        }
    }
}

impl EnvModel for BrokenChronologyEnv {
    fn id(&self) -> String {
        "broken-chronology".into()
    }

    fn num_agents(&self) -> usize {
        1
    }

    fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.sets
    }

    fn alt(&self) -> &[JointAction] {
        &self.alt
    }

    fn outcomes(&self, _h: &History, _a: &JointAction) -> Vec<(JointPercept, f64)> {
        vec![
            (JointPercept(vec![AgentPercept::new(0, 0.0)]), 0.5),
            (JointPercept(vec![AgentPercept::new(1, 1.0)]), 0.5),
        ]
    }

    fn sequence_prob(&self, actions: &[JointAction], percepts: &[JointPercept]) -> f64 {
        let Some(last) = actions.last() else {
            return 1.0;
        };
        let biased = last.0[0] == 1;
        let n = percepts.len();
        percepts
            .iter()
            .enumerate()
            .map(|(s, x)| {
                if biased && s + 1 < n {
                    if x.0[0].obs == 1 {
                        0.8
                    } else {
                        0.2
                    }
                } else {
                    0.5
                }
            })
            .product()
    }
}
