//! History-based multi-agent environments and the mechanism interaction loop.
//!
//! An environment is a pure function from `(history, joint action)` to a finite
//! distribution over joint percepts. The loop in [`run_protocol`] asks every
//! agent for a valuation table over the feasible joint actions, lets a
//! [`Mechanism`] pick an action and charge payments, samples the percept and
//! hands each agent its view of what happened.

pub mod envs;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mechanisms::{Mechanism, ValuationTable};

pub use envs::{
    BilateralTradeEnv, BrokenChronologyEnv, CoinEnv, FactoryEnv, RandomSmallEnv, SecondPriceEnv,
};

pub type ActionId = u32;

/// The single random stream of a run: ChaCha with 8 rounds, seeded from a `u64`.
pub type RunRng = ChaCha8Rng;

pub fn run_rng(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One action per agent. Serialised as the canonical key `"a1|a2|…|ak"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointAction(pub Vec<ActionId>);

impl JointAction {
    pub fn new(per_agent: Vec<ActionId>) -> Self {
        JointAction(per_agent)
    }

    /// The same action for every one of `k` agents.
    pub fn diagonal(action: ActionId, k: usize) -> Self {
        JointAction(vec![action; k])
    }

    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for JointAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for JointAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split('|')
            .map(|p| {
                p.trim()
                    .parse::<ActionId>()
                    .map_err(|_| Error::Domain(format!("bad action key {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JointAction(parts))
    }
}

impl Serialize for JointAction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for JointAction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPercept {
    pub obs: u32,
    pub reward: f64,
}

impl AgentPercept {
    pub fn new(obs: u32, reward: f64) -> Self {
        AgentPercept { obs, reward }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointPercept(pub Vec<AgentPercept>);

impl JointPercept {
    pub fn rewards(&self) -> Vec<f64> {
        self.0.iter().map(|p| p.reward).collect()
    }

    pub fn reward(&self, agent: usize) -> f64 {
        self.0[agent].reward
    }

    pub fn key(&self) -> String {
        self.0
            .iter()
            .map(|p| format!("{}:{}", p.obs, p.reward))
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Alternating joint actions and joint percepts. The empty history is ε.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub steps: Vec<(JointAction, JointPercept)>,
}

impl History {
    pub fn empty() -> Self {
        History::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, a: JointAction, x: JointPercept) {
        self.steps.push((a, x));
    }

    pub fn pop(&mut self) -> Option<(JointAction, JointPercept)> {
        self.steps.pop()
    }

    /// Canonical encoding used for memo keys and CSV export.
    pub fn key(&self) -> String {
        if self.steps.is_empty() {
            return "ε".to_string();
        }
        self.steps
            .iter()
            .map(|(a, x)| format!("{}/{}", a.key(), x.key()))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Agent `i`'s view: every joint action but only its own percepts.
    pub fn project(&self, agent: usize) -> Vec<(JointAction, AgentPercept)> {
        self.steps
            .iter()
            .map(|(a, x)| (a.clone(), x.0[agent]))
            .collect()
    }
}

/// A multi-agent environment given by its conditional percept kernel.
pub trait EnvModel: Send + Sync {
    fn id(&self) -> String;

    fn num_agents(&self) -> usize;

    /// Per-agent finite action sets.
    fn action_sets(&self) -> &[Vec<ActionId>];

    /// Feasible joint actions, in lexicographic order.
    fn alt(&self) -> &[JointAction];

    /// Support of the next joint percept with its probabilities.
    fn outcomes(&self, h: &History, a: &JointAction) -> Vec<(JointPercept, f64)>;

    fn percept_support(&self, h: &History, a: &JointAction) -> Vec<JointPercept> {
        self.outcomes(h, a).into_iter().map(|(x, _)| x).collect()
    }

    fn prob(&self, h: &History, a: &JointAction, x: &JointPercept) -> f64 {
        self.outcomes(h, a)
            .into_iter()
            .filter(|(y, _)| y == x)
            .map(|(_, p)| p)
            .sum()
    }

    /// ϱ_n(x_{1:n} | a_{1:n}); by default the product of the conditionals.
    fn sequence_prob(&self, actions: &[JointAction], percepts: &[JointPercept]) -> f64 {
        let mut h = History::empty();
        let mut p = 1.0;
        for (a, x) in actions.iter().zip(percepts) {
            p *= self.prob(&h, a, x);
            if p == 0.0 {
                return 0.0;
            }
            h.push(a.clone(), x.clone());
        }
        p
    }

    fn alt_index(&self, a: &JointAction) -> Option<usize> {
        self.alt().iter().position(|b| b == a)
    }
}

/// Checks that `a` is a feasible joint action and returns its index in Alt.
pub fn check_feasible(env: &dyn EnvModel, a: &JointAction) -> Result<usize> {
    let sets = env.action_sets();
    if a.0.len() != sets.len() {
        return Err(Error::InfeasibleAction {
            action: a.key(),
            reason: format!("{} components for {} agents", a.0.len(), sets.len()),
        });
    }
    let bad: Vec<String> = a
        .0
        .iter()
        .enumerate()
        .filter(|(i, x)| !sets[*i].contains(x))
        .map(|(i, x)| format!("agent {i} action {x}"))
        .collect();
    if !bad.is_empty() {
        return Err(Error::InfeasibleAction {
            action: a.key(),
            reason: format!("not in the action set: {}", bad.join(", ")),
        });
    }
    env.alt_index(a).ok_or_else(|| Error::InfeasibleAction {
        action: a.key(),
        reason: "components are individually valid but the combination is not in Alt".into(),
    })
}

/// φ(x | h, a).
pub fn env_prob(env: &dyn EnvModel, h: &History, a: &JointAction, x: &JointPercept) -> Result<f64> {
    check_feasible(env, a)?;
    Ok(env.prob(h, a, x))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChronologyViolation {
    pub actions: Vec<JointAction>,
    pub percept_prefix: Vec<String>,
    pub prefix_prob: f64,
    pub marginal: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ChronologyReport {
    pub depth: usize,
    pub sequences_checked: usize,
    pub violations: Vec<ChronologyViolation>,
    /// (history key, action key, total probability) where the kernel does not sum to one.
    pub unnormalized: Vec<(String, String, f64)>,
}

impl ChronologyReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty() && self.unnormalized.is_empty()
    }
}

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

pub fn check_chronological(env: &dyn EnvModel, depth: usize) -> Result<ChronologyReport> {
    check_chronological_with_budget(env, depth, DEFAULT_NODE_BUDGET)
}

pub fn check_chronological_with_budget(
    env: &dyn EnvModel,
    depth: usize,
    budget: usize,
) -> Result<ChronologyReport> {
    let mut report = ChronologyReport {
        depth,
        ..Default::default()
    };
    let mut walk = ChronoWalk {
        env,
        depth,
        budget,
        actions: Vec::new(),
        percepts: Vec::new(),
        history: History::empty(),
        report: &mut report,
    };
    walk.visit(1.0)?;
    Ok(report)
}

struct ChronoWalk<'a> {
    env: &'a dyn EnvModel,
    depth: usize,
    budget: usize,
    actions: Vec<JointAction>,
    percepts: Vec<JointPercept>,
    history: History,
    report: &'a mut ChronologyReport,
}

impl ChronoWalk<'_> {
    fn visit(&mut self, prefix_prob: f64) -> Result<()> {
        if self.actions.len() == self.depth {
            return Ok(());
        }
        for a in self.env.alt().to_vec() {
            self.report.sequences_checked += 1;
            if self.report.sequences_checked > self.budget {
                return Err(Error::BudgetExceeded { limit: self.budget });
            }
            let outcomes = self.env.outcomes(&self.history, &a);
            let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 || outcomes.iter().any(|(_, p)| *p < 0.0) {
                self.report
                    .unnormalized
                    .push((self.history.key(), a.key(), total));
            }
            self.actions.push(a.clone());
            let mut marginal = 0.0;
            let mut joint = Vec::with_capacity(outcomes.len());
            for (x, _) in &outcomes {
                self.percepts.push(x.clone());
                let p = self.env.sequence_prob(&self.actions, &self.percepts);
                self.percepts.pop();
                marginal += p;
                joint.push(p);
            }
            if (marginal - prefix_prob).abs() > 1e-9 {
                self.report.violations.push(ChronologyViolation {
                    actions: self.actions.clone(),
                    percept_prefix: self.percepts.iter().map(|x| x.key()).collect(),
                    prefix_prob,
                    marginal,
                });
            }
            for ((x, _), p) in outcomes.into_iter().zip(joint) {
                if p <= 0.0 {
                    continue;
                }
                self.percepts.push(x.clone());
                self.history.push(a.clone(), x);
                self.visit(p)?;
                self.history.pop();
                self.percepts.pop();
            }
            self.actions.pop();
        }
        Ok(())
    }
}

/// Whether agents see everything or only their own percepts and payments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Visibility {
    Full,
    #[default]
    OwnOnly,
}

/// What one agent saw at one completed step.
#[derive(Clone, Debug, PartialEq)]
pub struct OwnStep {
    pub action: JointAction,
    pub percept: AgentPercept,
    pub payment: f64,
}

/// The information handed to an agent. `t` is the step about to be played
/// when asking for a valuation, and the step just completed when observing.
pub struct AgentView<'a> {
    pub agent: usize,
    pub t: usize,
    pub alt: &'a [JointAction],
    pub own: &'a [OwnStep],
    pub full: Option<&'a History>,
    pub all_payments: Option<&'a [Vec<f64>]>,
}

pub trait AgentPolicy {
    fn valuation(&mut self, view: &AgentView<'_>, rng: &mut RunRng) -> Result<ValuationTable>;

    fn observe(&mut self, _view: &AgentView<'_>) {}
}

impl<T: AgentPolicy + ?Sized> AgentPolicy for &mut T {
    fn valuation(&mut self, view: &AgentView<'_>, rng: &mut RunRng) -> Result<ValuationTable> {
        (**self).valuation(view, rng)
    }

    fn observe(&mut self, view: &AgentView<'_>) {
        (**self).observe(view)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub declared_valuations: Vec<ValuationTable>,
    pub chosen_action: JointAction,
    pub percept: JointPercept,
    pub payments: Vec<f64>,
    pub instantaneous_utilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub records: Vec<StepRecord>,
    pub seed: u64,
    pub env_id: String,
    pub mechanism_id: String,
}

impl ProtocolTrace {
    pub fn cumulative_utilities(&self) -> Vec<f64> {
        let k = self
            .records
            .first()
            .map(|r| r.instantaneous_utilities.len())
            .unwrap_or(0);
        let mut cu = vec![0.0; k];
        for r in &self.records {
            for (c, u) in cu.iter_mut().zip(&r.instantaneous_utilities) {
                *c += u;
            }
        }
        cu
    }

    pub fn chosen_actions(&self) -> Vec<JointAction> {
        self.records.iter().map(|r| r.chosen_action.clone()).collect()
    }

    /// One `StepRecord` per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }
}

/// Σ_i Σ_t (r_{t,i} − p_{t,i}).
pub fn total_social_welfare(trace: &ProtocolTrace) -> f64 {
    trace.cumulative_utilities().iter().sum()
}

pub fn run_protocol(
    env: &dyn EnvModel,
    mech: &dyn Mechanism,
    agents: &mut [Box<dyn AgentPolicy + '_>],
    horizon: usize,
    seed: u64,
) -> Result<ProtocolTrace> {
    run_protocol_with(env, mech, agents, horizon, seed, Visibility::default())
}

pub fn run_protocol_with(
    env: &dyn EnvModel,
    mech: &dyn Mechanism,
    agents: &mut [Box<dyn AgentPolicy + '_>],
    horizon: usize,
    seed: u64,
    visibility: Visibility,
) -> Result<ProtocolTrace> {
    let k = env.num_agents();
    if agents.len() != k {
        return Err(Error::Config(format!(
            "{} agents supplied for an environment with {k}",
            agents.len()
        )));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let alt = env.alt();
    let mut rng = run_rng(seed);
    let mut history = History::empty();
    let mut own: Vec<Vec<OwnStep>> = vec![Vec::new(); k];
    let mut all_payments: Vec<Vec<f64>> = Vec::new();
    let mut records = Vec::with_capacity(horizon);

    for t in 1..=horizon {
        let mut tables = Vec::with_capacity(k);
        for (i, agent) in agents.iter_mut().enumerate() {
            let view = make_view(i, t, alt, &own[i], &history, &all_payments, visibility);
            let table = agent
                .valuation(&view, &mut rng)
                .map_err(|e| Error::Protocol {
                    step: t,
                    reason: format!("agent {i}: {e}"),
                })?;
            if table.values.len() != alt.len() {
                return Err(Error::Protocol {
                    step: t,
                    reason: format!(
                        "agent {i} valued {} actions but Alt has {}",
                        table.values.len(),
                        alt.len()
                    ),
                });
            }
            tables.push(table);
        }
        let outcome = mech
            .decide(&tables, alt, &mut rng)
            .map_err(|e| Error::Protocol {
                step: t,
                reason: e.to_string(),
            })?;
        let support = env.outcomes(&history, &outcome.chosen);
        let percept = sample_percept(&support, &mut rng).ok_or_else(|| Error::Protocol {
            step: t,
            reason: format!("empty percept support after {}", outcome.chosen),
        })?;
        let utilities: Vec<f64> = (0..k)
            .map(|i| percept.0[i].reward - outcome.payments[i])
            .collect();
        for i in 0..k {
            own[i].push(OwnStep {
                action: outcome.chosen.clone(),
                percept: percept.0[i],
                payment: outcome.payments[i],
            });
        }
        history.push(outcome.chosen.clone(), percept.clone());
        all_payments.push(outcome.payments.clone());
        for (i, agent) in agents.iter_mut().enumerate() {
            let view = make_view(i, t, alt, &own[i], &history, &all_payments, visibility);
            agent.observe(&view);
        }
        records.push(StepRecord {
            t,
            declared_valuations: tables,
            chosen_action: outcome.chosen,
            percept,
            payments: outcome.payments,
            instantaneous_utilities: utilities,
        });
    }
    Ok(ProtocolTrace {
        records,
        seed,
        env_id: env.id(),
        mechanism_id: mech.id(),
    })
}

fn make_view<'a>(
    agent: usize,
    t: usize,
    alt: &'a [JointAction],
    own: &'a [OwnStep],
    history: &'a History,
    payments: &'a [Vec<f64>],
    visibility: Visibility,
) -> AgentView<'a> {
    let full = visibility == Visibility::Full;
    AgentView {
        agent,
        t,
        alt,
        own,
        full: full.then_some(history),
        all_payments: full.then_some(payments),
    }
}

/// Inverse-CDF draw from a finite support.
pub fn sample_percept(support: &[(JointPercept, f64)], rng: &mut RunRng) -> Option<JointPercept> {
    let last = support.iter().rposition(|(_, p)| *p > 0.0)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (x, p) in &support[..last] {
        acc += p;
        if u < acc {
            return Some(x.clone());
        }
    }
    Some(support[last].0.clone())
}

/// Lexicographic product of the action sets.
pub fn product_alt(sets: &[Vec<ActionId>]) -> Vec<JointAction> {
    let mut out = vec![Vec::new()];
    for set in sets {
        let mut next = Vec::with_capacity(out.len() * set.len());
        for prefix in &out {
            for a in set {
                let mut v: Vec<ActionId> = prefix.clone();
                v.push(*a);
                next.push(v);
            }
        }
        out = next;
    }
    out.into_iter().map(JointAction).collect()
}
