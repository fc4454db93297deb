//! Tabular Q-learning bidders for sequential single-item auctions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envcore::{AgentPolicy, AgentView, JointAction, RunRng};
use crate::error::{Error, Result};
use crate::mechanisms::ValuationTable;

/// Bids `0, step, 2·step, …, max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidGrid {
    pub step: f64,
    pub max: f64,
}

impl Default for BidGrid {
    fn default() -> Self {
        BidGrid {
            step: 50_000.0,
            max: 8_400_000.0,
        }
    }
}

impl BidGrid {
    pub fn validated(self) -> Result<Self> {
        if !(self.step > 0.0 && self.max >= 0.0 && self.max.is_finite()) {
            return Err(Error::Config(format!(
                "bid grid needs step > 0 and max ≥ 0, got step {} max {}",
                self.step, self.max
            )));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        (self.max / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bid(&self, index: usize) -> f64 {
        index as f64 * self.step
    }

    pub fn bids(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.bid(i)).collect()
    }
}

/// ε decays linearly from `start` to `end` over `decay_episodes`, then stays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule {
            start: eps,
            end: eps,
            decay_episodes: 0,
        }
    }

    pub fn value(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Per-tranche learning reward given the winner's profit ρ_{i*} − a_{−i*}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    /// Only the winner is rewarded, with its own profit.
    R1,
    /// Both agents receive the winner's profit.
    R2,
    /// The winner receives its profit and the loser its negation.
    R3,
}

impl RewardVariant {
    pub fn reward(self, agent: usize, winner: usize, winner_profit: f64) -> f64 {
        match (self, agent == winner) {
            (_, true) | (RewardVariant::R2, false) => winner_profit,
            (RewardVariant::R1, false) => 0.0,
            (RewardVariant::R3, false) => -winner_profit,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::R1 => "r1",
            RewardVariant::R2 => "r2",
            RewardVariant::R3 => "r3",
        }
    }
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r1" => Ok(RewardVariant::R1),
            "r2" => Ok(RewardVariant::R2),
            "r3" => Ok(RewardVariant::R3),
            _ => Err(Error::Config(format!("unknown reward variant {s:?}"))),
        }
    }
}

/// Dense Q table with ε-greedy selection; argmax ties are broken uniformly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QLearner {
    pub n_states: usize,
    pub n_actions: usize,
    pub alpha: f64,
    pub gamma: f64,
    q: Vec<f64>,
    visits: Vec<u64>,
}

impl QLearner {
    pub fn new(n_states: usize, n_actions: usize, alpha: f64, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("Q table needs at least one state and action".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) || !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "need 0 < alpha ≤ 1 and 0 ≤ gamma ≤ 1, got {alpha} and {gamma}"
            )));
        }
        Ok(QLearner {
            n_states,
            n_actions,
            alpha,
            gamma,
            q: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states],
        })
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max_q(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Times the state has been updated from.
    pub fn visits(&self, s: usize) -> u64 {
        self.visits[s]
    }

    /// Lowest index attaining the maximum.
    pub fn argmax_lowest(&self, s: usize) -> usize {
        let row = self.row(s);
        let best = self.max_q(s);
        row.iter().position(|x| *x == best).unwrap_or(0)
    }

    pub fn greedy(&self, s: usize, rng: &mut RunRng) -> usize {
        let row = self.row(s);
        let best = self.max_q(s);
        let count = row.iter().filter(|x| **x == best).count();
        if count <= 1 {
            return row.iter().position(|x| *x == best).unwrap_or(0);
        }
        let pick = rng.random_range(0..count);
        row.iter()
            .enumerate()
            .filter(|(_, x)| **x == best)
            .nth(pick)
            .map(|(a, _)| a)
            .unwrap_or(0)
    }

    pub fn act(&self, s: usize, epsilon: f64, rng: &mut RunRng) -> usize {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            rng.random_range(0..self.n_actions)
        } else {
            self.greedy(s, rng)
        }
    }

    /// Q(s,a) ← Q(s,a) + α(r + γ max Q(s′,·) − Q(s,a)); `next = None` is terminal.
    pub fn update(&mut self, s: usize, a: usize, r: f64, next: Option<usize>) {
        let target = r + next.map_or(0.0, |s2| self.gamma * self.max_q(s2));
        let cell = &mut self.q[s * self.n_actions + a];
        *cell += self.alpha * (target - *cell);
        self.visits[s] += 1;
    }
}

/// Holdings-pair state index for a two-bidder auction of `tranches` lots.
pub fn holdings_state(wins: [usize; 2], tranches: usize) -> usize {
    wins[0] * (tranches + 1) + wins[1]
}

/// A [`QLearner`] driving one bidder of a two-bidder sequential auction under
/// the generic protocol. Alternatives are `j|j`, lot to bidder `j − 1`; the
/// declared table is the bid at the own-win alternative and 0 elsewhere.
/// Rewards are learned in units of $m. `R2` and `R3` need full visibility
/// since the loser must see the winner's reward and payment.
pub struct QLearnAgent {
    pub agent: usize,
    pub learner: QLearner,
    pub grid: BidGrid,
    pub schedule: EpsilonSchedule,
    pub variant: RewardVariant,
    pub tranches: usize,
    pub episode: usize,
    pub learning: bool,
    pending: Option<(usize, usize)>,
}

/// Builds a Q-learning bidder for agent `agent` (0 or 1).
pub fn qlearn_policy(
    agent: usize,
    tranches: usize,
    grid: BidGrid,
    alpha: f64,
    gamma: f64,
    schedule: EpsilonSchedule,
    variant: RewardVariant,
) -> Result<QLearnAgent> {
    if agent > 1 {
        return Err(Error::Config("the auction bidder supports two agents".into()));
    }
    let grid = grid.validated()?;
    let n_states = (tranches + 1) * (tranches + 1);
    Ok(QLearnAgent {
        agent,
        learner: QLearner::new(n_states, grid.len(), alpha, gamma)?,
        grid,
        schedule,
        variant,
        tranches,
        episode: 0,
        learning: true,
        pending: None,
    })
}

fn winner_of(a: &JointAction) -> Option<usize> {
    a.0.first().and_then(|&j| (j as usize).checked_sub(1))
}

impl QLearnAgent {
    fn state_of(&self, actions: impl Iterator<Item = JointAction>) -> usize {
        let mut wins = [0usize; 2];
        for a in actions {
            if let Some(w) = winner_of(&a).filter(|w| *w < 2) {
                wins[w] += 1;
            }
        }
        holdings_state(wins, self.tranches)
    }

    fn epsilon(&self) -> f64 {
        if self.learning {
            self.schedule.value(self.episode)
        } else {
            0.0
        }
    }
}

impl AgentPolicy for QLearnAgent {
    fn valuation(&mut self, view: &AgentView<'_>, rng: &mut RunRng) -> Result<ValuationTable> {
        if view.alt.len() != 2 {
            return Err(Error::Domain("the auction bidder expects two alternatives".into()));
        }
        if self.variant != RewardVariant::R1 && (view.full.is_none() || view.all_payments.is_none()) {
            return Err(Error::Config(format!(
                "reward variant {} needs full visibility",
                self.variant.name()
            )));
        }
        let s = self.state_of(view.own.iter().map(|o| o.action.clone()));
        let a = self.learner.act(s, self.epsilon(), rng);
        self.pending = Some((s, a));
        let mut values = vec![0.0; 2];
        let own = view
            .alt
            .iter()
            .position(|x| winner_of(x) == Some(self.agent))
            .ok_or_else(|| Error::Domain("no alternative awards the lot to this bidder".into()))?;
        values[own] = self.grid.bid(a);
        Ok(ValuationTable::new(values))
    }

    fn observe(&mut self, view: &AgentView<'_>) {
        let Some((s, a)) = self.pending.take() else { return };
        let Some(last) = view.own.last() else { return };
        let Some(winner) = winner_of(&last.action) else { return };
        let winner_profit = if winner == self.agent {
            last.percept.reward - last.payment
        } else {
            match (view.full, view.all_payments) {
                (Some(h), Some(pay)) => match (h.steps.last(), pay.last()) {
                    (Some((_, x)), Some(p)) => x.reward(winner) - p[winner],
                    _ => 0.0,
                },
                _ => 0.0,
            }
        };
        let r = self.variant.reward(self.agent, winner, winner_profit) / 1e6;
        let s2 = self.state_of(view.own.iter().map(|o| o.action.clone()));
        let terminal = view.own.len() >= self.tranches;
        if self.learning {
            self.learner.update(s, a, r, (!terminal).then_some(s2));
        }
        if terminal {
            self.episode += 1;
        }
    }
}
