//! Abstract-MDP specialists and the Hedge agent that mixes them.

use std::collections::BTreeMap;

use crate::envcore::{AgentPolicy, AgentView, OwnStep, RunRng};
use crate::error::{Error, Result};
use crate::mechanisms::ValuationTable;

use super::hedge::{HedgeState, LossKind};
use super::KtCounts;

/// Maps an agent's own history to an abstract state in `0..n_states`.
pub type Abstraction = Box<dyn Fn(&[OwnStep]) -> usize>;

/// How a specialist plans beyond the current step.
#[derive(Clone, Debug, PartialEq)]
pub enum PlanPolicy {
    /// Best action of its own model at every future state.
    Greedy,
    /// A fixed abstract-state → action-index map.
    Fixed(Vec<usize>),
}

enum Model {
    /// KT counts over next states and over (reward, payment) outcomes.
    Learned {
        trans: Vec<KtCounts>,
        outcome: Vec<KtCounts>,
    },
    /// Given probabilities, never updated. `trans[(s, a)][s']`,
    /// `outcome[(s, a, s')][b]`.
    Known {
        trans: Vec<Vec<f64>>,
        outcome: Vec<Vec<f64>>,
    },
}

pub struct Specialist {
    pub name: String,
    psi: Abstraction,
    pub n_states: usize,
    pub n_actions: usize,
    /// Grid of (reward, payment) pairs the model predicts over.
    pub grid: Vec<(f64, f64)>,
    pub policy: PlanPolicy,
    pub horizon: usize,
    model: Model,
}

impl Specialist {
    /// A learning specialist with KT-smoothed counts.
    pub fn learned(
        name: &str,
        psi: Abstraction,
        n_states: usize,
        n_actions: usize,
        grid: Vec<(f64, f64)>,
        policy: PlanPolicy,
        horizon: usize,
    ) -> Self {
        let b = grid.len();
        Specialist {
            name: name.to_string(),
            psi,
            n_states,
            n_actions,
            policy,
            horizon,
            model: Model::Learned {
                trans: (0..n_states * n_actions).map(|_| KtCounts::new(n_states)).collect(),
                outcome: (0..n_states * n_actions * n_states)
                    .map(|_| KtCounts::new(b))
                    .collect(),
            },
            grid,
        }
    }

    /// A specialist with a fixed model.
    #[allow(clippy::too_many_arguments)]
    pub fn known(
        name: &str,
        psi: Abstraction,
        n_states: usize,
        n_actions: usize,
        grid: Vec<(f64, f64)>,
        trans: Vec<Vec<f64>>,
        outcome: Vec<Vec<f64>>,
        policy: PlanPolicy,
        horizon: usize,
    ) -> Result<Self> {
        if trans.len() != n_states * n_actions || outcome.len() != n_states * n_actions * n_states {
            return Err(Error::Domain("model tables have the wrong shape".into()));
        }
        for row in trans.iter().chain(outcome.iter()) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("model row sums to {s}")));
            }
        }
        Ok(Specialist {
            name: name.to_string(),
            psi,
            n_states,
            n_actions,
            grid,
            policy,
            horizon,
            model: Model::Known { trans, outcome },
        })
    }

    pub fn state(&self, own: &[OwnStep]) -> usize {
        (self.psi)(own)
    }

    pub fn p_next(&self, s: usize, a: usize, s2: usize) -> f64 {
        let idx = s * self.n_actions + a;
        match &self.model {
            Model::Learned { trans, .. } => trans[idx].predict(s2),
            Model::Known { trans, .. } => trans[idx][s2],
        }
    }

    pub fn p_outcome(&self, s: usize, a: usize, s2: usize, b: usize) -> f64 {
        let idx = (s * self.n_actions + a) * self.n_states + s2;
        match &self.model {
            Model::Learned { outcome, .. } => outcome[idx].predict(b),
            Model::Known { outcome, .. } => outcome[idx][b],
        }
    }

    /// Nearest grid point to an observed (reward, payment).
    pub fn bin(&self, reward: f64, payment: f64) -> usize {
        let d = |&(r, p): &(f64, f64)| (r - reward).powi(2) + (p - payment).powi(2);
        (0..self.grid.len())
            .min_by(|&x, &y| d(&self.grid[x]).total_cmp(&d(&self.grid[y])))
            .expect("grid is non-empty")
    }

    pub fn update(&mut self, s: usize, a: usize, s2: usize, b: usize) {
        let (na, ns) = (self.n_actions, self.n_states);
        if let Model::Learned { trans, outcome } = &mut self.model {
            trans[s * na + a].update(s2);
            outcome[(s * na + a) * ns + s2].update(b);
        }
    }

    fn expected_gain(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.grid
            .iter()
            .enumerate()
            .map(|(b, (r, p))| self.p_outcome(s, a, s2, b) * (r - p))
            .sum()
    }

    /// Q(s, a) over `steps` remaining steps, for every state and action.
    pub fn plan(&self, steps: usize) -> Vec<Vec<f64>> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut v_next = vec![0.0; ns];
        let mut q = vec![vec![0.0; na]; ns];
        for _ in 0..steps {
            for s in 0..ns {
                for a in 0..na {
                    q[s][a] = (0..ns)
                        .map(|s2| self.p_next(s, a, s2) * (self.expected_gain(s, a, s2) + v_next[s2]))
                        .sum();
                }
            }
            v_next = (0..ns)
                .map(|s| match &self.policy {
                    PlanPolicy::Greedy => q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    PlanPolicy::Fixed(pi) => q[s][pi[s]],
                })
                .collect();
        }
        q
    }

    /// Number of steps from the one about to be played to the horizon.
    pub fn remaining(&self, own: &[OwnStep]) -> usize {
        (self.horizon + 1).saturating_sub(own.len() + 1)
    }
}

/// V^{π}(h, a): expected Σ (r − p) from the next step to the horizon.
pub fn specialist_value(sp: &Specialist, own: &[OwnStep], a: usize) -> f64 {
    let steps = sp.remaining(own);
    if steps == 0 {
        return 0.0;
    }
    sp.plan(steps)[sp.state(own)][a]
}

/// DynamicHedgeAIXI with a fixed set of specialists.
pub struct DhaAgent {
    pub specialists: Vec<Specialist>,
    pub hedge: HedgeState,
    prev_states: Vec<usize>,
    /// Σ_t ℓ_{t,i} for every specialist.
    pub specialist_losses: Vec<f64>,
    pub submitted: Vec<ValuationTable>,
}

/// Mixes `specialists` with prior `priors` and learning rate `eta`.
pub fn dha_policy(specialists: Vec<Specialist>, priors: Vec<f64>, eta: f64) -> Result<DhaAgent> {
    if specialists.is_empty() || priors.len() != specialists.len() {
        return Err(Error::Config("one prior per specialist is required".into()));
    }
    let n = specialists.len();
    Ok(DhaAgent {
        hedge: HedgeState::new(eta, priors.into_iter().enumerate(), LossKind::Log)?,
        prev_states: vec![0; n],
        specialist_losses: vec![0.0; n],
        specialists,
        submitted: Vec::new(),
    })
}

impl DhaAgent {
    pub fn weights(&self) -> Vec<f64> {
        let w = self.hedge.normalized();
        (0..self.specialists.len())
            .map(|i| w.get(&i).copied().unwrap_or(0.0))
            .collect()
    }
}

impl AgentPolicy for DhaAgent {
    fn valuation(&mut self, view: &AgentView<'_>, _rng: &mut RunRng) -> Result<ValuationTable> {
        let n = view.alt.len();
        let w = self.hedge.normalized();
        let mut values = vec![0.0; n];
        for (i, sp) in self.specialists.iter().enumerate() {
            if sp.n_actions != n {
                return Err(Error::Domain(format!(
                    "specialist {} plans over {} actions, Alt has {n}",
                    sp.name, sp.n_actions
                )));
            }
            let s = sp.state(view.own);
            self.prev_states[i] = s;
            let Some(&wi) = w.get(&i) else { continue };
            let steps = sp.remaining(view.own);
            if steps == 0 {
                continue;
            }
            let q = sp.plan(steps);
            for (a, slot) in values.iter_mut().enumerate() {
                *slot += wi * q[s][a];
            }
        }
        let table = ValuationTable::new(values);
        self.submitted.push(table.clone());
        Ok(table)
    }

    fn observe(&mut self, view: &AgentView<'_>) {
        let Some(last) = view.own.last() else { return };
        let Some(a) = view.alt.iter().position(|x| *x == last.action) else {
            return;
        };
        let mut losses = BTreeMap::new();
        let mut updates = Vec::with_capacity(self.specialists.len());
        for (i, sp) in self.specialists.iter().enumerate() {
            let s = self.prev_states[i];
            let s2 = sp.state(view.own);
            let b = sp.bin(last.percept.reward, last.payment);
            let loss = -sp.p_outcome(s, a, s2, b).ln();
            losses.insert(i, loss);
            self.specialist_losses[i] += loss;
            updates.push((s, s2, b));
        }
        self.hedge
            .step(&losses, &[], &[])
            .expect("losses cover every specialist");
        for (sp, (s, s2, b)) in self.specialists.iter_mut().zip(updates) {
            sp.update(s, a, s2, b);
        }
    }
}
