//! Social choice and payment rules: Clark-pivot VCG and the exponential VCG.
//!
//! Valuations are dense tables aligned with an environment's Alt list, so an
//! alternative is addressed by its index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envcore::{JointAction, RunRng};
use crate::error::{Error, Result};

/// Absolute tolerance used to form the argmax set.
pub const TIE_TOL: f64 = 1e-12;

/// One agent's declared value for every alternative, in Alt order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValuationTable {
    pub values: Vec<f64>,
}

impl ValuationTable {
    pub fn new(values: Vec<f64>) -> Self {
        ValuationTable { values }
    }

    pub fn zeros(n: usize) -> Self {
        ValuationTable {
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn in_unit_range(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// `{agents: [{id, values: {action_key: number}}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuationProfile {
    pub agents: Vec<AgentValues>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentValues {
    pub id: String,
    pub values: std::collections::BTreeMap<String, f64>,
}

impl ValuationProfile {
    pub fn from_tables(tables: &[ValuationTable], alt: &[JointAction]) -> Self {
        ValuationProfile {
            agents: tables
                .iter()
                .enumerate()
                .map(|(i, t)| AgentValues {
                    id: i.to_string(),
                    values: alt.iter().map(|a| a.key()).zip(t.values.iter().copied()).collect(),
                })
                .collect(),
        }
    }

    /// Tables in Alt order; every alternative must be present.
    pub fn to_tables(&self, alt: &[JointAction]) -> Result<Vec<ValuationTable>> {
        self.agents
            .iter()
            .map(|agent| {
                if let Some(extra) = agent
                    .values
                    .keys()
                    .find(|k| !alt.iter().any(|a| a.key() == **k))
                {
                    return Err(Error::Domain(format!(
                        "agent {}: {extra} is not a feasible joint action",
                        agent.id
                    )));
                }
                let values = alt
                    .iter()
                    .map(|a| {
                        agent.values.get(&a.key()).copied().ok_or_else(|| {
                            Error::Domain(format!("agent {}: no value for {}", agent.id, a))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ValuationTable { values })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub chosen: JointAction,
    pub chosen_index: usize,
    pub payments: Vec<f64>,
    pub tie_set: Vec<JointAction>,
}

pub trait Mechanism: Send + Sync {
    fn id(&self) -> String;

    fn decide(
        &self,
        valuations: &[ValuationTable],
        alt: &[JointAction],
        rng: &mut RunRng,
    ) -> Result<MechanismOutcome>;
}

fn validate(valuations: &[ValuationTable], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("empty set of alternatives".into()));
    }
    for (i, v) in valuations.iter().enumerate() {
        if v.values.len() != n {
            return Err(Error::Domain(format!(
                "agent {i} valued {} alternatives, expected {n}",
                v.values.len()
            )));
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("agent {i} declared a non-finite value")));
        }
    }
    Ok(())
}

/// Σ_{j ∉ skip} v_j(r) for every alternative r.
pub fn welfare_except(valuations: &[ValuationTable], n: usize, skip: Option<usize>) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for (j, v) in valuations.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        for (acc, x) in w.iter_mut().zip(&v.values) {
            *acc += x;
        }
    }
    w
}

pub fn welfare(valuations: &[ValuationTable], n: usize) -> Vec<f64> {
    welfare_except(valuations, n, None)
}

/// Indices within [`TIE_TOL`] of the maximum.
pub fn argmax_set(w: &[f64]) -> Vec<usize> {
    let best = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..w.len()).filter(|&r| w[r] >= best - TIE_TOL).collect()
}

/// Welfare maximiser with ties broken uniformly from the run stream.
/// Payments are left empty.
pub fn vcg_choose(
    valuations: &[ValuationTable],
    alt: &[JointAction],
    rng: &mut RunRng,
) -> Result<MechanismOutcome> {
    validate(valuations, alt.len())?;
    let ties = argmax_set(&welfare(valuations, alt.len()));
    let pick = if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    };
    Ok(MechanismOutcome {
        chosen: alt[pick].clone(),
        chosen_index: pick,
        payments: Vec::new(),
        tie_set: ties.iter().map(|&r| alt[r].clone()).collect(),
    })
}

/// Welfare maximiser with the deterministic rule: the lexicographically
/// smallest joint action among the tied ones.
pub fn vcg_choose_lowest(valuations: &[ValuationTable], alt: &[JointAction]) -> Result<usize> {
    validate(valuations, alt.len())?;
    Ok(lowest_of(&argmax_set(&welfare(valuations, alt.len())), alt))
}

pub(crate) fn lowest_of(ties: &[usize], alt: &[JointAction]) -> usize {
    *ties
        .iter()
        .min_by(|&&a, &&b| alt[a].cmp(&alt[b]))
        .expect("argmax set is never empty")
}

/// p_i = max_b Σ_{j≠i} v_j(b) − Σ_{j≠i} v_j(chosen).
pub fn clark_payments(valuations: &[ValuationTable], chosen: usize) -> Vec<f64> {
    let n = valuations.first().map(|v| v.len()).unwrap_or(0);
    (0..valuations.len())
        .map(|i| {
            let others = welfare_except(valuations, n, Some(i));
            let best = others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            best - others[chosen]
        })
        .collect()
}

/// Deterministic Clark-pivot VCG with random tie-breaking.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClarkVcg;

impl Mechanism for ClarkVcg {
    fn id(&self) -> String {
        "clark-vcg".into()
    }

    fn decide(
        &self,
        valuations: &[ValuationTable],
        alt: &[JointAction],
        rng: &mut RunRng,
    ) -> Result<MechanismOutcome> {
        let mut out = vcg_choose(valuations, alt, rng)?;
        out.payments = clark_payments(valuations, out.chosen_index);
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpVcgConfig {
    pub epsilon: f64,
    #[serde(default = "one")]
    pub sensitivity: f64,
}

fn one() -> f64 {
    1.0
}

impl ExpVcgConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        ExpVcgConfig {
            epsilon,
            sensitivity: 1.0,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::Domain(format!(
                "sensitivity must be positive, got {}",
                self.sensitivity
            )));
        }
        Ok(self)
    }

    /// Inverse temperature ε / 2Δ.
    pub fn beta(&self) -> f64 {
        self.epsilon / (2.0 * self.sensitivity)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax of `beta * w`.
pub fn softmax(w: &[f64], beta: f64) -> Vec<f64> {
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|x| (beta * (x - m)).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Shannon entropy in nats with 0·log 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// KL(p ‖ q) in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Agents whose declared values leave [0, 1].
pub fn out_of_unit_range(valuations: &[ValuationTable]) -> Vec<usize> {
    (0..valuations.len())
        .filter(|&i| !valuations[i].in_unit_range())
        .collect()
}

/// The exponential mechanism's distribution over Alt.
pub fn exp_mech_distribution(valuations: &[ValuationTable], cfg: &ExpVcgConfig) -> Vec<f64> {
    let n = valuations.first().map(|v| v.len()).unwrap_or(0);
    softmax(&welfare(valuations, n), cfg.beta())
}

pub fn exp_mech_sample(valuations: &[ValuationTable], cfg: &ExpVcgConfig, rng: &mut RunRng) -> usize {
    sample_index(&exp_mech_distribution(valuations, cfg), rng)
}

pub fn sample_index(p: &[f64], rng: &mut RunRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let last = p.iter().rposition(|x| *x > 0.0).unwrap_or(p.len() - 1);
    for (r, x) in p[..last].iter().enumerate() {
        acc += x;
        if u < acc {
            return r;
        }
    }
    last
}

/// p_i = E_M[−Σ_{j≠i} v_j] − H(M)/β + ln Σ_r exp(β Σ_{j≠i} v_j(r)) / β with β = ε/2Δ.
pub fn exp_vcg_payments(valuations: &[ValuationTable], cfg: &ExpVcgConfig) -> Vec<f64> {
    let n = valuations.first().map(|v| v.len()).unwrap_or(0);
    let beta = cfg.beta();
    let m = exp_mech_distribution(valuations, cfg);
    let h = entropy(&m);
    (0..valuations.len())
        .map(|i| {
            let others = welfare_except(valuations, n, Some(i));
            let expected: f64 = m.iter().zip(&others).map(|(p, w)| -p * w).sum();
            let scaled: Vec<f64> = others.iter().map(|w| beta * w).collect();
            expected - h / beta + log_sum_exp(&scaled) / beta
        })
        .collect()
}

/// h(v) = ln Σ_r exp(β Σ_j v_j(r)) / β over the given agents.
pub fn exp_potential(valuations: &[ValuationTable], n: usize, skip: Option<usize>, cfg: &ExpVcgConfig) -> f64 {
    let beta = cfg.beta();
    let w: Vec<f64> = welfare_except(valuations, n, skip)
        .into_iter()
        .map(|x| beta * x)
        .collect();
    log_sum_exp(&w) / beta
}

/// Expected utility E_{r∼M(reports)}[v_i(r)] − p_i(reports) of agent `i`
/// whose true table is `truth` when `reports` were declared.
pub fn exp_vcg_expected_utility(
    truth: &ValuationTable,
    reports: &[ValuationTable],
    i: usize,
    cfg: &ExpVcgConfig,
) -> f64 {
    let m = exp_mech_distribution(reports, cfg);
    let value: f64 = m.iter().zip(&truth.values).map(|(p, v)| p * v).sum();
    value - exp_vcg_payments(reports, cfg)[i]
}

/// E_ξ[Σ_i v_i] + (2/ε) H(ξ).
pub fn gibbs_welfare(xi: &[f64], valuations: &[ValuationTable], epsilon: f64) -> Result<f64> {
    let n = xi.len();
    validate(valuations, n)?;
    let total: f64 = xi.iter().sum();
    if (total - 1.0).abs() > 1e-9 || xi.iter().any(|p| *p < 0.0) {
        return Err(Error::Domain(format!("ξ is not a distribution (mass {total})")));
    }
    let w = welfare(valuations, n);
    let expected: f64 = xi.iter().zip(&w).map(|(p, x)| p * x).sum();
    Ok(expected + 2.0 / epsilon * entropy(xi))
}

/// Exponential VCG: sample from the exponential mechanism, charge the
/// entropy-adjusted payments. `tie_set` holds every alternative, since each
/// has positive probability.
#[derive(Clone, Copy, Debug)]
pub struct ExpVcg {
    pub cfg: ExpVcgConfig,
}

impl Mechanism for ExpVcg {
    fn id(&self) -> String {
        format!("exp-vcg-eps{}", self.cfg.epsilon)
    }

    fn decide(
        &self,
        valuations: &[ValuationTable],
        alt: &[JointAction],
        rng: &mut RunRng,
    ) -> Result<MechanismOutcome> {
        validate(valuations, alt.len())?;
        let r = exp_mech_sample(valuations, &self.cfg, rng);
        Ok(MechanismOutcome {
            chosen: alt[r].clone(),
            chosen_index: r,
            payments: exp_vcg_payments(valuations, &self.cfg),
            tie_set: alt.to_vec(),
        })
    }
}

/// Largest |log P(r | v) − log P(r | v′)| over every pair of profiles that
/// differ in one agent's table, with `k` agents, `n_alt` alternatives and
/// values drawn from `grid`.
pub fn dp_ratio_check(cfg: &ExpVcgConfig, k: usize, n_alt: usize, grid: &[f64]) -> Result<f64> {
    let tables = all_tables(n_alt, grid);
    let profiles = (tables.len() as f64).powi(k as i32);
    if profiles > 1e6 {
        return Err(Error::BudgetExceeded { limit: 1_000_000 });
    }
    let mut worst: f64 = 0.0;
    let mut idx = vec![0usize; k];
    loop {
        let profile: Vec<ValuationTable> = idx.iter().map(|&j| tables[j].clone()).collect();
        let base: Vec<f64> = exp_mech_distribution(&profile, cfg)
            .into_iter()
            .map(f64::ln)
            .collect();
        for i in 0..k {
            // Each unordered neighbour pair is visited from both ends, so
            // looking at higher indices only is enough.
            for alt_j in idx[i] + 1..tables.len() {
                let mut nb = profile.clone();
                nb[i] = tables[alt_j].clone();
                let other = exp_mech_distribution(&nb, cfg);
                for (a, b) in base.iter().zip(other) {
                    worst = worst.max((a - b.ln()).abs());
                }
            }
        }
        let mut pos = 0;
        loop {
            if pos == k {
                return Ok(worst);
            }
            idx[pos] += 1;
            if idx[pos] < tables.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn all_tables(n_alt: usize, grid: &[f64]) -> Vec<ValuationTable> {
    let mut out = vec![Vec::new()];
    for _ in 0..n_alt {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                grid.iter().map(move |g| {
                    let mut v = prefix.clone();
                    v.push(*g);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(ValuationTable::new).collect()
}
