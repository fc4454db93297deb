//! Exact backward induction of rational q-functions, social-cost functions
//! and valuation functions, their self-rational and alternative variants,
//! realisable cumulative utility, and Bayes-Nash IC / IR verification.

pub mod gum;
pub mod tree;

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envcore::{
    AgentPolicy, AgentView, EnvModel, History, JointAction, RunRng, DEFAULT_NODE_BUDGET,
};
use crate::error::{Error, Result};
use crate::mechanisms::{argmax_set, clark_payments, lowest_of, welfare, ValuationTable};

pub use gum::{
    gum_expected_utility, gum_martingale_check, gum_run, GumRun, GumStage, GumTables,
    PerturbedReports, ReportPolicy, Truthful,
};
pub use tree::GameTree;

/// Which tables drive the social choice inside the recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChoiceBasis {
    /// f and p applied to the valuations v = q − c.
    Valuation,
    /// f and p applied to the q-functions themselves.
    QFunction,
}

#[derive(Clone, Debug)]
struct NodeTables {
    q: Vec<f64>,
    c: Vec<f64>,
    chosen: usize,
    pay: Vec<f64>,
    qbar: Vec<f64>,
    cbar: Vec<f64>,
}

/// q, c and v for every (t, agent, history, joint action) up to the horizon.
#[derive(Clone, Debug)]
pub struct OracleTables {
    pub tree: Arc<GameTree>,
    pub horizons: Vec<usize>,
    pub basis: ChoiceBasis,
    nodes: Vec<NodeTables>,
}

fn check_horizons(env: &dyn EnvModel, horizons: &[usize], t_max: usize) -> Result<()> {
    if horizons.len() != env.num_agents() {
        return Err(Error::Config(format!(
            "{} horizons for {} agents",
            horizons.len(),
            env.num_agents()
        )));
    }
    if let Some(m) = horizons.iter().find(|&&m| m > t_max) {
        return Err(Error::Config(format!("agent horizon {m} exceeds T = {t_max}")));
    }
    Ok(())
}

/// Rational tables with Clark VCG embedded.
pub fn rational_tables(env: &dyn EnvModel, horizons: &[usize], t_max: usize) -> Result<OracleTables> {
    build_tables(env, horizons, t_max, ChoiceBasis::Valuation, DEFAULT_NODE_BUDGET)
}

/// The variant where the mechanism is applied to q rather than v.
pub fn alternative_q_tables(env: &dyn EnvModel, horizons: &[usize], t_max: usize) -> Result<OracleTables> {
    build_tables(env, horizons, t_max, ChoiceBasis::QFunction, DEFAULT_NODE_BUDGET)
}

pub fn build_tables(
    env: &dyn EnvModel,
    horizons: &[usize],
    t_max: usize,
    basis: ChoiceBasis,
    budget: usize,
) -> Result<OracleTables> {
    check_horizons(env, horizons, t_max)?;
    let tree = Arc::new(GameTree::build(env, t_max, budget)?);
    Ok(tables_on_tree(tree, horizons, basis))
}

pub fn tables_on_tree(tree: Arc<GameTree>, horizons: &[usize], basis: ChoiceBasis) -> OracleTables {
    let k = tree.k;
    let n = tree.n_alt();
    let mut nodes: Vec<NodeTables> = vec![
        NodeTables {
            q: Vec::new(),
            c: Vec::new(),
            chosen: 0,
            pay: vec![0.0; k],
            qbar: vec![0.0; k],
            cbar: vec![0.0; k],
        };
        tree.nodes.len()
    ];
    for id in (0..tree.nodes.len()).rev() {
        let node = &tree.nodes[id];
        if tree.is_leaf(id) {
            continue;
        }
        let t = node.t;
        let mut q = vec![0.0; k * n];
        let mut c = vec![0.0; k * n];
        for a in 0..n {
            for i in 0..k {
                let m = horizons[i];
                if t <= m {
                    q[i * n + a] = node.children[a]
                        .iter()
                        .map(|e| e.prob * (e.percept.0[i].reward + nodes[e.node].qbar[i]))
                        .sum();
                }
                if t < m {
                    c[i * n + a] = node.children[a]
                        .iter()
                        .map(|e| e.prob * nodes[e.node].cbar[i])
                        .sum();
                }
            }
        }
        let declared: Vec<ValuationTable> = (0..k)
            .map(|i| {
                ValuationTable::new(
                    (0..n)
                        .map(|a| match basis {
                            ChoiceBasis::Valuation => q[i * n + a] - c[i * n + a],
                            ChoiceBasis::QFunction => q[i * n + a],
                        })
                        .collect(),
                )
            })
            .collect();
        let chosen = lowest_of(&argmax_set(&welfare(&declared, n)), &tree.alt);
        let pay = clark_payments(&declared, chosen);
        let qbar = (0..k).map(|i| q[i * n + chosen]).collect();
        let cbar = (0..k).map(|i| pay[i] + c[i * n + chosen]).collect();
        nodes[id] = NodeTables {
            q,
            c,
            chosen,
            pay,
            qbar,
            cbar,
        };
    }
    OracleTables {
        tree,
        horizons: horizons.to_vec(),
        basis,
        nodes,
    }
}

impl OracleTables {
    fn node_at(&self, t: usize, h: &History) -> Result<usize> {
        if h.len() + 1 != t {
            return Err(Error::Domain(format!(
                "history of length {} does not belong to step {t}",
                h.len()
            )));
        }
        let id = self
            .tree
            .locate(h)
            .ok_or_else(|| Error::Domain(format!("history {} is not reachable", h.key())))?;
        if self.tree.is_leaf(id) {
            return Err(Error::Domain(format!("step {t} is beyond the horizon")));
        }
        Ok(id)
    }

    fn entry(&self, table: impl Fn(&NodeTables) -> f64, t: usize, h: &History) -> Result<f64> {
        Ok(table(&self.nodes[self.node_at(t, h)?]))
    }

    pub fn q(&self, t: usize, i: usize, h: &History, a: usize) -> Result<f64> {
        let n = self.tree.n_alt();
        self.entry(|nt| nt.q[i * n + a], t, h)
    }

    pub fn c(&self, t: usize, i: usize, h: &History, a: usize) -> Result<f64> {
        let n = self.tree.n_alt();
        self.entry(|nt| nt.c[i * n + a], t, h)
    }

    pub fn v(&self, t: usize, i: usize, h: &History, a: usize) -> Result<f64> {
        Ok(self.q(t, i, h, a)? - self.c(t, i, h, a)?)
    }

    pub fn q_bar(&self, t: usize, i: usize, h: &History) -> Result<f64> {
        self.entry(|nt| nt.qbar[i], t, h)
    }

    pub fn c_bar(&self, t: usize, i: usize, h: &History) -> Result<f64> {
        self.entry(|nt| nt.cbar[i], t, h)
    }

    pub fn v_bar(&self, t: usize, i: usize, h: &History) -> Result<f64> {
        Ok(self.q_bar(t, i, h)? - self.c_bar(t, i, h)?)
    }

    pub fn chosen(&self, t: usize, h: &History) -> Result<usize> {
        self.entry(|nt| nt.chosen as f64, t, h).map(|x| x as usize)
    }

    /// q, c or v rows of agent `i` at a node.
    pub fn node_q(&self, node: usize, i: usize) -> &[f64] {
        let n = self.tree.n_alt();
        &self.nodes[node].q[i * n..(i + 1) * n]
    }

    pub fn node_c(&self, node: usize, i: usize) -> &[f64] {
        let n = self.tree.n_alt();
        &self.nodes[node].c[i * n..(i + 1) * n]
    }

    pub fn node_v(&self, node: usize, i: usize) -> Vec<f64> {
        self.node_q(node, i)
            .iter()
            .zip(self.node_c(node, i))
            .map(|(q, c)| q - c)
            .collect()
    }

    pub fn node_chosen(&self, node: usize) -> usize {
        self.nodes[node].chosen
    }

    pub fn node_qbar(&self, node: usize, i: usize) -> f64 {
        self.nodes[node].qbar[i]
    }

    pub fn node_cbar(&self, node: usize, i: usize) -> f64 {
        self.nodes[node].cbar[i]
    }

    /// Clark payment charged to agent `i` at the node's chosen action.
    pub fn node_payment(&self, node: usize, i: usize) -> f64 {
        self.nodes[node].pay[i]
    }

    /// The tables the agents declare: v for rational tables, q for the
    /// alternative variant.
    pub fn declared(&self) -> DeclaredTables {
        let tree = self.tree.clone();
        let k = tree.k;
        let tables = (0..tree.nodes.len())
            .map(|id| {
                if tree.is_leaf(id) {
                    return Vec::new();
                }
                (0..k)
                    .map(|i| match self.basis {
                        ChoiceBasis::Valuation => ValuationTable::new(self.node_v(id, i)),
                        ChoiceBasis::QFunction => ValuationTable::new(self.node_q(id, i).to_vec()),
                    })
                    .collect()
            })
            .collect();
        let label = match self.basis {
            ChoiceBasis::Valuation => "rational",
            ChoiceBasis::QFunction => "alternative-q",
        };
        DeclaredTables::new(tree, self.horizons.clone(), tables, label)
    }

    /// CSV with columns (t, agent, history_key, action_key, q, c, v).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "agent", "history_key", "action_key", "q", "c", "v"])?;
        for id in self.tree.internal_nodes() {
            let t = self.tree.nodes[id].t;
            let hk = self.tree.history(id).key();
            for i in 0..self.tree.k {
                let (q, c) = (self.node_q(id, i), self.node_c(id, i));
                for (a, action) in self.tree.alt.iter().enumerate() {
                    out.write_record([
                        t.to_string(),
                        (i + 1).to_string(),
                        hk.clone(),
                        action.key(),
                        q[a].to_string(),
                        c[a].to_string(),
                        (q[a] - c[a]).to_string(),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// q̂_{t,i}(h, a) = Σ_x φ(x | h, a) [r_{t,i} + max_{a'} q̂_{t+1,i}(hax, a')].
pub fn self_rational_q(env: &dyn EnvModel, horizons: &[usize]) -> Result<DeclaredTables> {
    let t_max = horizons.iter().copied().max().unwrap_or(0);
    check_horizons(env, horizons, t_max)?;
    let tree = Arc::new(GameTree::build(env, t_max, DEFAULT_NODE_BUDGET)?);
    Ok(self_rational_on_tree(tree, horizons))
}

pub fn self_rational_on_tree(tree: Arc<GameTree>, horizons: &[usize]) -> DeclaredTables {
    let k = tree.k;
    let n = tree.n_alt();
    let mut best = vec![vec![0.0; k]; tree.nodes.len()];
    let mut tables: Vec<Vec<ValuationTable>> = vec![Vec::new(); tree.nodes.len()];
    for id in (0..tree.nodes.len()).rev() {
        if tree.is_leaf(id) {
            continue;
        }
        let node = &tree.nodes[id];
        let mut per_agent = Vec::with_capacity(k);
        for i in 0..k {
            let values: Vec<f64> = (0..n)
                .map(|a| {
                    if node.t > horizons[i] {
                        return 0.0;
                    }
                    node.children[a]
                        .iter()
                        .map(|e| e.prob * (e.percept.0[i].reward + best[e.node][i]))
                        .sum()
                })
                .collect();
            best[id][i] = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            per_agent.push(ValuationTable::new(values));
        }
        tables[id] = per_agent;
    }
    DeclaredTables::new(tree, horizons.to_vec(), tables, "self-rational")
}

/// Tables declared at every node, together with the expected future utility
/// each agent collects when everyone declares them from a node onward (the
/// mechanism picks the lowest tied joint action).
#[derive(Clone, Debug)]
pub struct DeclaredTables {
    pub tree: Arc<GameTree>,
    pub horizons: Vec<usize>,
    pub label: String,
    tables: Vec<Vec<ValuationTable>>,
    continuation: Vec<Vec<f64>>,
}

impl DeclaredTables {
    pub fn new(
        tree: Arc<GameTree>,
        horizons: Vec<usize>,
        tables: Vec<Vec<ValuationTable>>,
        label: &str,
    ) -> Self {
        let k = tree.k;
        let mut continuation = vec![vec![0.0; k]; tree.nodes.len()];
        for id in (0..tree.nodes.len()).rev() {
            if tree.is_leaf(id) {
                continue;
            }
            let node = &tree.nodes[id];
            let declared = &tables[id];
            let chosen = lowest_of(&argmax_set(&welfare(declared, tree.n_alt())), &tree.alt);
            let pay = clark_payments(declared, chosen);
            for i in 0..k {
                if node.t > horizons[i] {
                    continue;
                }
                continuation[id][i] = -pay[i]
                    + node.children[chosen]
                        .iter()
                        .map(|e| e.prob * (e.percept.0[i].reward + continuation[e.node][i]))
                        .sum::<f64>();
            }
        }
        DeclaredTables {
            tree,
            horizons,
            label: label.to_string(),
            tables,
            continuation,
        }
    }

    pub fn table(&self, node: usize, i: usize) -> &ValuationTable {
        &self.tables[node][i]
    }

    pub fn profile(&self, node: usize) -> &[ValuationTable] {
        &self.tables[node]
    }

    /// Expected utility from `node` to agent `i`'s horizon under truthful play.
    pub fn continuation(&self, node: usize, i: usize) -> f64 {
        self.continuation[node][i]
    }

    /// E over the next percept of r_{t,i} − p_i(reports) + (future utility),
    /// with the chosen action forced to `chosen`.
    pub fn cu_given_choice(&self, node: usize, reports: &[ValuationTable], i: usize, chosen: usize) -> f64 {
        let pay = clark_payments(reports, chosen);
        let nd = &self.tree.nodes[node];
        let future: f64 = nd.children[chosen]
            .iter()
            .map(|e| e.prob * (e.percept.0[i].reward + self.continuation[e.node][i]))
            .sum();
        future - pay[i]
    }

    /// Realisable cumulative utility with the deterministic tie rule.
    pub fn realisable_cu_at(&self, node: usize, reports: &[ValuationTable], i: usize) -> f64 {
        let chosen = lowest_of(&argmax_set(&welfare(reports, self.tree.n_alt())), &self.tree.alt);
        self.cu_given_choice(node, reports, i, chosen)
    }

    /// Forward enumeration of Σ_t (r_{t,i} − p_{t,i}) over every percept
    /// sequence, weighted by probability.
    pub fn unrolled_cumulative_utility(&self, i: usize) -> f64 {
        fn walk(d: &DeclaredTables, node: usize, i: usize) -> f64 {
            let tree = &d.tree;
            let nd = &tree.nodes[node];
            if tree.is_leaf(node) || nd.t > d.horizons[i] {
                return 0.0;
            }
            let declared = &d.tables[node];
            let chosen = lowest_of(&argmax_set(&welfare(declared, tree.n_alt())), &tree.alt);
            let pay = clark_payments(declared, chosen)[i];
            let mut total = -pay;
            for e in &nd.children[chosen] {
                total += e.prob * (e.percept.0[i].reward + walk(d, e.node, i));
            }
            total
        }
        walk(self, self.tree.root(), i)
    }
}

/// v̄_{1,i}(ε): the expected cumulative utility of agent `i` under truthful play.
pub fn expected_cumulative_utility(tables: &OracleTables, i: usize) -> f64 {
    let root = tables.tree.root();
    tables.node_qbar(root, i) - tables.node_cbar(root, i)
}

/// Realisable cumulative utility of agent `i` at history `h` when `reports` are declared.
pub fn realisable_cu(
    declared: &DeclaredTables,
    h: &History,
    reports: &[ValuationTable],
    i: usize,
) -> Result<f64> {
    let node = declared
        .tree
        .locate(h)
        .ok_or_else(|| Error::Domain(format!("history {} is not reachable", h.key())))?;
    if declared.tree.is_leaf(node) {
        return Err(Error::Domain("history reaches the horizon".into()));
    }
    if reports.len() != declared.tree.k || reports.iter().any(|r| r.len() != declared.tree.n_alt()) {
        return Err(Error::Domain("reports do not match the step's action set".into()));
    }
    Ok(declared.realisable_cu_at(node, reports, i))
}

#[derive(Clone, Debug, Serialize)]
pub struct IcViolation {
    pub t: usize,
    pub history: String,
    pub agent: usize,
    pub truthful_cu: f64,
    pub misreport_cu: f64,
    pub truthful: Vec<f64>,
    pub misreport: Vec<f64>,
    pub chosen_under_misreport: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IcReport {
    pub tables: String,
    pub comparisons: usize,
    pub violations: Vec<IcViolation>,
}

impl IcReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Candidate misreports: structured attacks first (constant shifts, scalings,
/// +1 inflation of one action, inflation with the rest zeroed, argmax swaps,
/// point valuations), then uniform noise, `count` in total.
pub fn sample_misreports(truth: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = truth.len();
    let scale = truth.iter().fold(0.0f64, |m, x| m.max(x.abs())) + 1.0;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for c in [-10.0, -1.0, 1.0, 10.0] {
        out.push(truth.iter().map(|x| x + c * scale).collect());
    }
    for c in [0.0, 0.5, 2.0, 10.0, -1.0] {
        out.push(truth.iter().map(|x| x * c).collect());
    }
    for a in 0..n {
        let mut up = truth.to_vec();
        up[a] += 1.0;
        out.push(up.clone());
        let mut alone = vec![0.0; n];
        alone[a] = truth[a] + 1.0;
        out.push(alone);
        let mut big = truth.to_vec();
        big[a] += scale;
        out.push(big);
        let mut point = vec![0.0; n];
        point[a] = scale;
        out.push(point);
    }
    let best = argmax_set(truth);
    for &b in &best {
        for a in 0..n {
            if a != b {
                let mut sw = truth.to_vec();
                sw.swap(a, b);
                out.push(sw);
            }
        }
    }
    let lo = truth.iter().copied().fold(f64::INFINITY, f64::min) - scale;
    let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max) + scale;
    while out.len() < count {
        out.push((0..n).map(|_| rng.random_range(lo..=hi)).collect());
    }
    out.truncate(count);
    out
}

/// Bayes-Nash IC: at every node and for every agent within its horizon,
/// truthful realisable CU is at least the CU of every sampled misreport
/// (taking the most favourable tied outcome for the misreport).
pub fn check_bayes_nash_ic(declared: &DeclaredTables, misreports_per_agent: usize, seed: u64) -> IcReport {
    let tree = &declared.tree;
    let n = tree.n_alt();
    let mut report = IcReport {
        tables: declared.label.clone(),
        ..Default::default()
    };
    for node in tree.internal_nodes() {
        let t = tree.nodes[node].t;
        let truthful = declared.profile(node);
        for i in 0..tree.k {
            if t > declared.horizons[i] {
                continue;
            }
            let truthful_cu = declared.realisable_cu_at(node, truthful, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((node as u64) << 8) ^ i as u64);
            for mis in sample_misreports(&truthful[i].values, misreports_per_agent, &mut rng) {
                let mut reports = truthful.to_vec();
                reports[i] = ValuationTable::new(mis.clone());
                let ties = argmax_set(&welfare(&reports, n));
                report.comparisons += 1;
                let (best_cu, best_a) = ties
                    .iter()
                    .map(|&a| (declared.cu_given_choice(node, &reports, i, a), a))
                    .fold((f64::NEG_INFINITY, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
                if best_cu > truthful_cu + 1e-9 {
                    report.violations.push(IcViolation {
                        t,
                        history: tree.history(node).key(),
                        agent: i,
                        truthful_cu,
                        misreport_cu: best_cu,
                        truthful: truthful[i].values.clone(),
                        misreport: mis,
                        chosen_under_misreport: tree.alt[best_a].key(),
                    });
                }
            }
        }
    }
    report
}

#[derive(Clone, Debug, Serialize)]
pub struct IrViolation {
    pub t: usize,
    pub history: String,
    pub agent: usize,
    pub truthful_cu: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IrReport {
    pub tables: String,
    pub checked: usize,
    /// (t, history, agent) where the declared table has a negative entry,
    /// so non-negativity of the valuation does not hold.
    pub out_of_hypothesis: Vec<(usize, String, usize)>,
    pub violations: Vec<IrViolation>,
}

impl IrReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Individual rationality wherever the agent's declared valuation is non-negative.
pub fn check_ir(declared: &DeclaredTables) -> IrReport {
    let tree = &declared.tree;
    let mut report = IrReport {
        tables: declared.label.clone(),
        ..Default::default()
    };
    for node in tree.internal_nodes() {
        let t = tree.nodes[node].t;
        let truthful = declared.profile(node);
        for i in 0..tree.k {
            if t > declared.horizons[i] {
                continue;
            }
            if truthful[i].values.iter().any(|v| *v < -1e-12) {
                report
                    .out_of_hypothesis
                    .push((t, tree.history(node).key(), i));
                continue;
            }
            report.checked += 1;
            let cu = declared.realisable_cu_at(node, truthful, i);
            if cu < -1e-9 {
                report.violations.push(IrViolation {
                    t,
                    history: tree.history(node).key(),
                    agent: i,
                    truthful_cu: cu,
                });
            }
        }
    }
    report
}

/// Declares the tables of one agent from precomputed oracle tables. Past the
/// tables' horizon it declares zero.
pub struct OracleAgent {
    declared: Arc<DeclaredTables>,
    agent: usize,
}

impl OracleAgent {
    pub fn new(declared: Arc<DeclaredTables>, agent: usize) -> Self {
        OracleAgent { declared, agent }
    }
}

impl AgentPolicy for OracleAgent {
    fn valuation(&mut self, view: &AgentView<'_>, _rng: &mut RunRng) -> Result<ValuationTable> {
        let tree = &self.declared.tree;
        if view.t > tree.horizon || view.t > self.declared.horizons[self.agent] {
            return Ok(ValuationTable::zeros(tree.n_alt()));
        }
        let node = match view.full {
            Some(h) => tree
                .locate(h)
                .ok_or_else(|| Error::Domain(format!("history {} not in the tables", h.key())))?,
            None => {
                let own: Vec<(JointAction, _)> =
                    view.own.iter().map(|s| (s.action.clone(), s.percept)).collect();
                tree.locate_from_view(self.agent, &own)?
            }
        };
        Ok(self.declared.table(node, self.agent).clone())
    }
}
