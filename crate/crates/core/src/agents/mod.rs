//! Agent policies: fixed declarations, Hedge mixtures of abstract-MDP
//! specialists (DynamicHedgeAIXI), the swap-regret master, and tabular
//! Q-learning.

pub mod hedge;
pub mod qlearn;
pub mod specialist;
pub mod swap;

use crate::envcore::{AgentPolicy, AgentView, RunRng};
use crate::error::{Error, Result};
use crate::mechanisms::ValuationTable;

pub use hedge::{hedge_step, HedgeState, LossKind, LOSS_CAP};
pub use qlearn::{
    holdings_state, qlearn_policy, BidGrid, EpsilonSchedule, QLearnAgent, QLearner, RewardVariant,
};
pub use specialist::{dha_policy, specialist_value, DhaAgent, PlanPolicy, Specialist};
pub use swap::{fixed_point_residual, swap_fixed_point, SwapMaster};

/// Krichevsky–Trofimov probability that the next bit is 1.
pub fn kt_predict(zero_count: u64, one_count: u64) -> f64 {
    (one_count as f64 + 0.5) / ((zero_count + one_count) as f64 + 1.0)
}

/// KT estimator over an alphabet of `n` symbols: (count + ½) / (total + n/2).
#[derive(Clone, Debug, PartialEq)]
pub struct KtCounts {
    counts: Vec<u64>,
    total: u64,
}

impl KtCounts {
    pub fn new(n: usize) -> Self {
        KtCounts {
            counts: vec![0; n],
            total: 0,
        }
    }

    pub fn predict(&self, symbol: usize) -> f64 {
        (self.counts[symbol] as f64 + 0.5) / (self.total as f64 + self.counts.len() as f64 / 2.0)
    }

    pub fn update(&mut self, symbol: usize) {
        self.counts[symbol] += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Declares the same table at every step.
#[derive(Clone, Debug)]
pub struct FixedAgent {
    pub table: ValuationTable,
}

impl FixedAgent {
    pub fn new(values: Vec<f64>) -> Self {
        FixedAgent {
            table: ValuationTable::new(values),
        }
    }
}

impl AgentPolicy for FixedAgent {
    fn valuation(&mut self, view: &AgentView<'_>, _rng: &mut RunRng) -> Result<ValuationTable> {
        if self.table.len() != view.alt.len() {
            return Err(Error::Domain(format!(
                "fixed table has {} entries, Alt has {}",
                self.table.len(),
                view.alt.len()
            )));
        }
        Ok(self.table.clone())
    }
}
