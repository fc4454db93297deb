//! The guaranteed utility mechanism (GUM).
//!
//! Stage `t` (1 ≤ t ≤ T+1) reveals, agent by agent, the components of the
//! percept of step t−1 together with the agents' reports for step t. Each
//! agent is charged for the change its revelation causes in every other
//! agent's anticipated payoff Υ, which makes the transfers budget balanced
//! and pins a truthful agent's expected utility to Υ at the start.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tree::GameTree;
use super::{tables_on_tree, ChoiceBasis, OracleTables};
use crate::envcore::{run_rng, AgentPercept, EnvModel, DEFAULT_NODE_BUDGET};
use crate::error::{Error, Result};
use crate::mechanisms::{argmax_set, lowest_of, welfare, ValuationTable};

/// How an agent reports its q-table at a node, given the true one.
pub trait ReportPolicy: Sync {
    fn report(&self, tree: &GameTree, node: usize, agent: usize, truth: &[f64]) -> Vec<f64>;

    fn is_truthful_for(&self, _agent: usize) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Truthful;

impl ReportPolicy for Truthful {
    fn report(&self, _tree: &GameTree, _node: usize, _agent: usize, truth: &[f64]) -> Vec<f64> {
        truth.to_vec()
    }

    fn is_truthful_for(&self, _agent: usize) -> bool {
        true
    }
}

/// Agents in `liars` add noise of size `scale` to their true table; the
/// noise is a function of the node so reports stay a deterministic policy.
#[derive(Clone, Debug)]
pub struct PerturbedReports {
    pub liars: Vec<usize>,
    pub scale: f64,
    pub seed: u64,
}

impl ReportPolicy for PerturbedReports {
    fn report(&self, _tree: &GameTree, node: usize, agent: usize, truth: &[f64]) -> Vec<f64> {
        if !self.liars.contains(&agent) {
            return truth.to_vec();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ (node as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ agent as u64,
        );
        truth
            .iter()
            .map(|x| x + self.scale * (rng.random::<f64>() * 2.0 - 1.0))
            .collect()
    }

    fn is_truthful_for(&self, agent: usize) -> bool {
        !self.liars.contains(&agent)
    }
}

/// GUM q-functions on a common horizon T: the mechanism's choice is applied
/// to the q-functions themselves.
#[derive(Clone, Debug)]
pub struct GumTables {
    pub tables: OracleTables,
}

impl GumTables {
    pub fn new(env: &dyn EnvModel, horizons: &[usize]) -> Result<GumTables> {
        let t = *horizons
            .first()
            .ok_or_else(|| Error::Config("no agents".into()))?;
        if horizons.iter().any(|&m| m != t) {
            return Err(Error::Unsupported(
                "the guaranteed utility mechanism needs a common horizon for all agents".into(),
            ));
        }
        if horizons.len() != env.num_agents() {
            return Err(Error::Config("one horizon per agent is required".into()));
        }
        let tree = Arc::new(GameTree::build(env, t, DEFAULT_NODE_BUDGET)?);
        Ok(GumTables {
            tables: tables_on_tree(tree, horizons, ChoiceBasis::QFunction),
        })
    }

    pub fn tree(&self) -> &GameTree {
        &self.tables.tree
    }

    pub fn k(&self) -> usize {
        self.tables.tree.k
    }

    pub fn horizon(&self) -> usize {
        self.tables.tree.horizon
    }

    /// Υ^j_1(ε) under truthful reports: q^j_1(ε, f(q_1)).
    pub fn upsilon_root(&self, j: usize) -> f64 {
        self.tables.node_qbar(self.tables.tree.root(), j)
    }

    /// Reported tables of every agent at every internal node.
    pub fn reports(&self, policy: &dyn ReportPolicy) -> Reports {
        let tree = self.tree();
        let tables = (0..tree.nodes.len())
            .map(|node| {
                if tree.is_leaf(node) {
                    return Vec::new();
                }
                (0..tree.k)
                    .map(|i| policy.report(tree, node, i, self.tables.node_q(node, i)))
                    .collect()
            })
            .collect();
        Reports { tables }
    }

    /// Action chosen from the reported tables at a node.
    pub fn reported_choice(&self, reports: &Reports, node: usize) -> usize {
        let tree = self.tree();
        let profile: Vec<ValuationTable> = reports.tables[node]
            .iter()
            .map(|v| ValuationTable::new(v.clone()))
            .collect();
        lowest_of(&argmax_set(&welfare(&profile, tree.n_alt())), &tree.alt)
    }

    /// Past rewards of `j` plus q^j_t(h, f(profile)) where agents `< revealed`
    /// use their reports and the rest their true q.
    fn anticipated(&self, reports: &Reports, node: usize, j: usize, revealed: usize) -> f64 {
        let tree = self.tree();
        let nd = &tree.nodes[node];
        let past = nd.past_rewards[j];
        if tree.is_leaf(node) {
            return past;
        }
        let profile: Vec<ValuationTable> = (0..tree.k)
            .map(|l| {
                let row = if l < revealed {
                    reports.tables[node][l].clone()
                } else {
                    self.tables.node_q(node, l).to_vec()
                };
                ValuationTable::new(row)
            })
            .collect();
        let a = lowest_of(&argmax_set(&welfare(&profile, tree.n_alt())), &tree.alt);
        past + self.tables.node_q(node, j)[a]
    }

    /// Υ^j_t given the first `prefix.len()` components of the percept that
    /// led out of `(parent, action)`, with that many agents reporting.
    pub fn upsilon(
        &self,
        reports: &Reports,
        stage: Stage,
        prefix: &[AgentPercept],
        j: usize,
    ) -> f64 {
        let revealed = prefix.len();
        match stage {
            Stage::Root => self.anticipated(reports, self.tree().root(), j, revealed),
            Stage::After { parent, action } => {
                let edges = &self.tree().nodes[parent].children[action];
                let mut mass = 0.0;
                let mut total = 0.0;
                for e in edges {
                    if e.percept.0[..revealed] == *prefix {
                        mass += e.prob;
                        total += e.prob * self.anticipated(reports, e.node, j, revealed);
                    }
                }
                total / mass
            }
        }
    }

    /// γ^{i→j} for every ordered pair at the stage ending in `node`, and the
    /// net transfers p^i = Σ_{j≠i} γ^{i→j} − Σ_{j≠i} γ^{j→i}.
    pub fn stage_transfers(&self, reports: &Reports, node: usize) -> GumStage {
        let tree = self.tree();
        let k = tree.k;
        let stage = Stage::of(tree, node);
        let full: Vec<AgentPercept> = tree
            .incoming_percept(node)
            .map(|x| x.0.clone())
            .unwrap_or_else(|| vec![AgentPercept::new(0, 0.0); k]);
        let prefix_of = |len: usize| -> &[AgentPercept] {
            match stage {
                Stage::Root => &full[..0],
                Stage::After { .. } => &full[..len],
            }
        };
        let upsilons: Vec<Vec<f64>> = (0..=k)
            .map(|len| {
                (0..k)
                    .map(|j| self.upsilon_revealed(reports, stage, prefix_of(len), len, j))
                    .collect()
            })
            .collect();
        let mut gamma = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                gamma[i][j] = upsilons[i + 1][j] - upsilons[i][j];
            }
        }
        let p = (0..k)
            .map(|i| {
                let out: f64 = (0..k).filter(|&j| j != i).map(|j| gamma[i][j]).sum();
                let inc: f64 = (0..k).filter(|&j| j != i).map(|j| gamma[j][i]).sum();
                out - inc
            })
            .collect();
        GumStage {
            t: tree.nodes[node].t,
            gamma,
            p,
            chosen: None,
        }
    }

    /// Like [`Self::upsilon`] but with the number of reporting agents given
    /// separately, which matters at the first stage where no percept exists.
    fn upsilon_revealed(
        &self,
        reports: &Reports,
        stage: Stage,
        prefix: &[AgentPercept],
        revealed: usize,
        j: usize,
    ) -> f64 {
        match stage {
            Stage::Root => self.anticipated(reports, self.tree().root(), j, revealed),
            Stage::After { .. } => self.upsilon(reports, stage, prefix, j),
        }
    }
}

/// Where a stage's percept comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Root,
    After { parent: usize, action: usize },
}

impl Stage {
    fn of(tree: &GameTree, node: usize) -> Stage {
        match tree.nodes[node].parent {
            None => Stage::Root,
            Some((parent, action, _)) => Stage::After { parent, action },
        }
    }
}

/// Reported tables indexed `[node][agent]`.
#[derive(Clone, Debug)]
pub struct Reports {
    pub tables: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GumStage {
    pub t: usize,
    /// `gamma[i][j]` is γ^{i→j}.
    pub gamma: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub chosen: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GumRun {
    pub stages: Vec<GumStage>,
    pub rewards: Vec<f64>,
    pub transfers: Vec<f64>,
    /// U^i = Σ_t r^i_t + Σ_t p^i_t.
    pub utilities: Vec<f64>,
}

/// One sampled run: transfers at stages 1..=T+1, actions from the reports.
pub fn gum_run(gum: &GumTables, policy: &dyn ReportPolicy, seed: u64) -> GumRun {
    let reports = gum.reports(policy);
    let tree = gum.tree();
    let k = tree.k;
    let mut rng = run_rng(seed);
    let mut node = tree.root();
    let mut stages = Vec::new();
    loop {
        let mut stage = gum.stage_transfers(&reports, node);
        if tree.is_leaf(node) {
            stages.push(stage);
            break;
        }
        let a = gum.reported_choice(&reports, node);
        stage.chosen = Some(tree.alt[a].key());
        stages.push(stage);
        let edges = &tree.nodes[node].children[a];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = edges[edges.len() - 1].node;
        for e in edges {
            acc += e.prob;
            if u < acc {
                next = e.node;
                break;
            }
        }
        node = next;
    }
    let rewards = tree.nodes[node].past_rewards.clone();
    let transfers: Vec<f64> = (0..k)
        .map(|i| stages.iter().map(|s| s.p[i]).sum())
        .collect();
    let utilities = rewards.iter().zip(&transfers).map(|(r, p)| r + p).collect();
    GumRun {
        stages,
        rewards,
        transfers,
        utilities,
    }
}

/// E[U^i] by exact enumeration of every path the reports can produce.
pub fn gum_expected_utility(gum: &GumTables, policy: &dyn ReportPolicy) -> Vec<f64> {
    let reports = gum.reports(policy);
    let k = gum.k();
    let mut acc = vec![0.0; k];
    fn walk(gum: &GumTables, reports: &Reports, node: usize, prob: f64, carried: Vec<f64>, acc: &mut [f64]) {
        let tree = gum.tree();
        let stage = gum.stage_transfers(reports, node);
        let carried: Vec<f64> = carried.iter().zip(&stage.p).map(|(c, p)| c + p).collect();
        if tree.is_leaf(node) {
            for (i, slot) in acc.iter_mut().enumerate() {
                *slot += prob * (carried[i] + tree.nodes[node].past_rewards[i]);
            }
            return;
        }
        let a = gum.reported_choice(reports, node);
        for e in &tree.nodes[node].children[a] {
            walk(gum, reports, e.node, prob * e.prob, carried.clone(), acc);
        }
    }
    walk(gum, &reports, gum.tree().root(), 1.0, vec![0.0; k], &mut acc);
    acc
}

/// Largest violation of the martingale identity for agent `i` when component
/// `j` of the stage-`t` percept is revealed:
/// E[Υ^i after j + transfers to i up to j] = Υ^i before j + transfers before j,
/// over every parent reachable under the reports and every revealed prefix.
pub fn gum_martingale_check(gum: &GumTables, policy: &dyn ReportPolicy, t: usize, j: usize, i: usize) -> f64 {
    let reports = gum.reports(policy);
    let tree = gum.tree();
    let k = tree.k;
    let reachable = reachable_nodes(gum, &reports);
    let mut worst: f64 = 0.0;

    // Transfer to agent i from the first `upto` components, given Υ values
    // indexed by prefix length.
    let credited = |ups: &dyn Fn(usize, usize) -> f64, upto: usize| -> f64 {
        (0..upto)
            .map(|l| {
                let g = |from_len: usize, m: usize| ups(from_len + 1, m) - ups(from_len, m);
                if l == i {
                    (0..k).filter(|&m| m != i).map(|m| g(l, m)).sum::<f64>()
                } else {
                    -g(l, i)
                }
            })
            .sum()
    };

    if t == 1 {
        let stage = Stage::Root;
        let ups = |len: usize, m: usize| gum.upsilon_revealed(&reports, stage, &[], len, m);
        let before = ups(j, i) + credited(&ups, j);
        let after = ups(j + 1, i) + credited(&ups, j + 1);
        return (after - before).abs();
    }

    for &parent in reachable.iter().filter(|&&n| tree.nodes[n].t == t - 1) {
        let action = gum.reported_choice(&reports, parent);
        let stage = Stage::After { parent, action };
        let edges = &tree.nodes[parent].children[action];
        let mut prefixes: Vec<Vec<AgentPercept>> = Vec::new();
        for e in edges {
            let p = e.percept.0[..j].to_vec();
            if !prefixes.contains(&p) {
                prefixes.push(p);
            }
        }
        for prefix in prefixes {
            // Any completion of the prefix gives the same values up to length j.
            let sample: Vec<AgentPercept> = edges
                .iter()
                .find(|e| e.percept.0[..j] == prefix[..])
                .map(|e| e.percept.0.clone())
                .expect("prefix came from an edge");
            let ups_before = |len: usize, m: usize| gum.upsilon(&reports, stage, &sample[..len], m);
            let before = ups_before(j, i) + credited(&ups_before, j);

            let mut mass = 0.0;
            let mut seen: Vec<Vec<AgentPercept>> = Vec::new();
            let mut after = 0.0;
            for e in edges.iter().filter(|e| e.percept.0[..j] == prefix[..]) {
                mass += e.prob;
                let ext = e.percept.0[..=j].to_vec();
                if seen.contains(&ext) {
                    continue;
                }
                seen.push(ext.clone());
                let ext_mass: f64 = edges
                    .iter()
                    .filter(|f| f.percept.0[..=j] == ext[..])
                    .map(|f| f.prob)
                    .sum();
                let full = e.percept.0.clone();
                let ups = |len: usize, m: usize| gum.upsilon(&reports, stage, &full[..len], m);
                after += ext_mass * (ups(j + 1, i) + credited(&ups, j + 1));
            }
            worst = worst.max((after / mass - before).abs());
        }
    }
    worst
}

/// Nodes visited with positive probability when actions follow the reports.
fn reachable_nodes(gum: &GumTables, reports: &Reports) -> Vec<usize> {
    let tree = gum.tree();
    let mut out = vec![tree.root()];
    let mut i = 0;
    while i < out.len() {
        let node = out[i];
        i += 1;
        if tree.is_leaf(node) {
            continue;
        }
        let a = gum.reported_choice(reports, node);
        for e in &tree.nodes[node].children[a] {
            if e.prob > 0.0 {
                out.push(e.node);
            }
        }
    }
    out
}
