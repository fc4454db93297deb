//! Refinery cap-and-trade: emission curves, sequential second-price permit
//! auctions with greedy or Q-learning bidders, and fixed-price optima.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{holdings_state, BidGrid, EpsilonSchedule, QLearner, RewardVariant};
use crate::envcore::{
    run_rng, ActionId, AgentPercept, AgentPolicy, AgentView, EnvModel, History, JointAction, JointPercept,
    RunRng,
};
use crate::error::{Error, Result};
use crate::mechanisms::ValuationTable;

/// Dollars of value per million litres at a margin of $1/litre.
const LITRES_PER_UNIT: f64 = 1e6;

/// s(y) = m (y³/5 − 12y² + 200y + 888), cubic tons per day for y million litres.
pub fn emissions(m: f64, y: f64) -> f64 {
    m * (y * y * y / 5.0 - 12.0 * y * y + 200.0 * y + 888.0)
}

/// ds/dy.
pub fn emissions_slope(m: f64, y: f64) -> f64 {
    m * (0.6 * y * y - 24.0 * y + 200.0)
}

/// Real roots of y³ + b y² + c y + d.
fn cubic_roots(b: f64, c: f64, d: f64) -> Vec<f64> {
    let shift = -b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let mut roots = if p.abs() < 1e-300 {
        vec![(-q).cbrt()]
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        vec![(-q / 2.0 + sq).cbrt() + (-q / 2.0 - sq).cbrt()]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    };
    for x in roots.iter_mut() {
        *x += shift;
        // One Newton polish step.
        let f = ((*x + b) * *x + c) * *x + d;
        let df = (3.0 * *x + 2.0 * b) * *x + c;
        if df.abs() > 1e-12 {
            *x -= f / df;
        }
    }
    roots.retain(|x| x.is_finite());
    roots
}

/// s⁻¹(g): the largest real root of s(y) = g together with 0, clamped to
/// `[0, capacity]`.
pub fn inv_emissions(m: f64, g: f64, capacity: f64) -> f64 {
    // Divide s(y) − g = 0 by m/5.
    let d = 5.0 * (888.0 - g / m);
    let roots = cubic_roots(-60.0, 1000.0, d);
    let best = if roots.is_empty() {
        upper_branch_bisect(m, g, capacity)
    } else {
        roots.into_iter().fold(0.0, f64::max)
    };
    best.clamp(0.0, capacity)
}

/// Bisection for s(y) = g on the increasing branch above the local minimum.
fn upper_branch_bisect(m: f64, g: f64, capacity: f64) -> f64 {
    // Local minimum of s at (24 + √96) / 1.2.
    let lo_min = 20.0 + 96.0f64.sqrt() / 1.2;
    if emissions(m, lo_min) > g {
        return 0.0;
    }
    let (mut lo, mut hi) = (lo_min, capacity.max(lo_min));
    while emissions(m, hi) < g {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if emissions(m, mid) < g {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinery {
    /// Inefficiency factor m ≥ 1.
    pub m: f64,
    /// Millions of litres per day.
    #[serde(default = "default_capacity")]
    pub capacity: f64,
    /// Dollars per litre.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_capacity() -> f64 {
    100.0
}

fn default_margin() -> f64 {
    0.20
}

impl Refinery {
    pub fn new(m: f64) -> Self {
        Refinery {
            m,
            capacity: default_capacity(),
            margin: default_margin(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 1.0 && self.m.is_finite()) {
            return Err(Error::Config(format!("inefficiency factor must be ≥ 1, got {}", self.m)));
        }
        if !(self.capacity > 0.0 && self.margin >= 0.0) {
            return Err(Error::Config("capacity must be positive and margin non-negative".into()));
        }
        Ok(())
    }

    pub fn emissions(&self, y: f64) -> f64 {
        emissions(self.m, y)
    }

    /// Millions of litres producible with `permits` permits.
    pub fn production(&self, permits: f64) -> f64 {
        inv_emissions(self.m, permits, self.capacity)
    }

    /// Dollar value of producing `litres_m` million litres.
    pub fn value(&self, litres_m: f64) -> f64 {
        self.margin * LITRES_PER_UNIT * litres_m
    }

    /// ρ = margin · (s⁻¹(g + tranche) − s⁻¹(g)), in dollars.
    pub fn greedy_bid(&self, holdings: f64, tranche: f64) -> f64 {
        self.value(self.production(holdings + tranche) - self.production(holdings))
    }
}

/// Marginal value of one more tranche at the given holdings.
pub fn greedy_bid(refinery: &Refinery, holdings: f64, tranche: f64) -> f64 {
    refinery.greedy_bid(holdings, tranche)
}

fn tranche_count(permit_cap: u64, tranche: u64) -> Result<usize> {
    if tranche == 0 || permit_cap == 0 || permit_cap % tranche != 0 {
        return Err(Error::Config(format!(
            "permit cap {permit_cap} is not a positive multiple of the tranche size {tranche}"
        )));
    }
    Ok((permit_cap / tranche) as usize)
}

/// Highest bid wins, uniform among equal top bids; the winner pays the
/// highest losing bid, or 0 with a single bidder.
pub fn second_price(bids: &[f64], rng: &mut RunRng) -> (usize, f64) {
    let best = bids.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<usize> = (0..bids.len()).filter(|&i| bids[i] == best).collect();
    let winner = if top.len() == 1 {
        top[0]
    } else {
        top[rng.random_range(0..top.len())]
    };
    let payment = (0..bids.len())
        .filter(|&i| i != winner)
        .map(|i| bids[i])
        .fold(0.0, f64::max);
    (winner, payment)
}

/// One row per refinery per tranche, mirroring the printed auction ledger.
/// Money in $m, production in millions of litres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: usize,
    pub agent: usize,
    pub prod: f64,
    pub perm: u64,
    pub prof: f64,
    pub rho: f64,
    pub bid: f64,
    pub win: bool,
    #[serde(rename = "+prof")]
    pub plus_prof: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrancheResult {
    pub t: usize,
    /// Dollars.
    pub bids: Vec<f64>,
    pub rho: Vec<f64>,
    pub winner: usize,
    pub payment: f64,
    pub winner_profit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineryTotals {
    pub permits: u64,
    pub paid: f64,
    pub production: f64,
    pub profit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuctionLedger {
    pub tranches: Vec<TrancheResult>,
    pub rows: Vec<LedgerRow>,
    pub totals: Vec<RefineryTotals>,
    pub collected: f64,
}

impl AuctionLedger {
    pub fn average_price(&self) -> f64 {
        let permits: u64 = self.totals.iter().map(|t| t.permits).sum();
        if permits == 0 {
            0.0
        } else {
            self.collected / permits as f64
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sequential second-price auction where each bidder's bid is chosen by
/// `bid(refinery index, holdings of every refinery, ρ)`.
pub fn run_auction(
    refineries: &[Refinery],
    permit_cap: u64,
    tranche: u64,
    rng: &mut RunRng,
    mut bid: impl FnMut(usize, &[u64], f64) -> f64,
) -> Result<AuctionLedger> {
    let n = tranche_count(permit_cap, tranche)?;
    if refineries.is_empty() {
        return Err(Error::Config("at least one refinery is required".into()));
    }
    for r in refineries {
        r.validate()?;
    }
    let k = refineries.len();
    let mut holdings = vec![0u64; k];
    let mut paid = vec![0.0; k];
    let mut profit = vec![0.0; k];
    let mut tranches = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n * k);
    for t in 1..=n {
        let rho: Vec<f64> = (0..k)
            .map(|i| refineries[i].greedy_bid(holdings[i] as f64, tranche as f64))
            .collect();
        let bids: Vec<f64> = (0..k).map(|i| bid(i, &holdings, rho[i])).collect();
        let (winner, payment) = second_price(&bids, rng);
        let gain = rho[winner] - payment;
        for i in 0..k {
            rows.push(LedgerRow {
                t,
                agent: i + 1,
                prod: refineries[i].production(holdings[i] as f64),
                perm: holdings[i],
                prof: profit[i] / 1e6,
                rho: rho[i] / 1e6,
                bid: bids[i] / 1e6,
                win: i == winner,
                plus_prof: (i == winner).then_some(gain / 1e6),
            });
        }
        holdings[winner] += tranche;
        paid[winner] += payment;
        profit[winner] += gain;
        tranches.push(TrancheResult {
            t,
            bids,
            rho,
            winner,
            payment,
            winner_profit: gain,
        });
    }
    let totals = (0..k)
        .map(|i| RefineryTotals {
            permits: holdings[i],
            paid: paid[i],
            production: refineries[i].production(holdings[i] as f64),
            profit: profit[i],
        })
        .collect();
    Ok(AuctionLedger {
        tranches,
        rows,
        totals,
        collected: paid.iter().sum(),
    })
}

/// Every refinery bids its marginal production value ρ each tranche.
pub fn run_greedy_auction(
    refineries: &[Refinery],
    permit_cap: u64,
    tranche: u64,
    rng: &mut RunRng,
) -> Result<AuctionLedger> {
    run_auction(refineries, permit_cap, tranche, rng, |_, _, rho| rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPriceOptimum {
    pub y: f64,
    /// Daily net profit in dollars: margin·y − price·s(y).
    pub profit: f64,
    pub emissions: f64,
}

/// Maximises margin·y − price·s(y) over [0, capacity] by comparing the
/// endpoints with the stationary points.
pub fn fixed_price_optimum(refinery: &Refinery, price_per_ton: f64) -> Result<FixedPriceOptimum> {
    refinery.validate()?;
    if !(price_per_ton >= 0.0 && price_per_ton.is_finite()) {
        return Err(Error::Config(format!("price must be non-negative, got {price_per_ton}")));
    }
    let net = |y: f64| refinery.value(y) - price_per_ton * refinery.emissions(y);
    let mut candidates = vec![0.0, refinery.capacity];
    // margin·1e6 − price·m(0.6y² − 24y + 200) = 0.
    let a = -price_per_ton * refinery.m * 0.6;
    let b = price_per_ton * refinery.m * 24.0;
    let c = refinery.value(1.0) - price_per_ton * refinery.m * 200.0;
    if a != 0.0 {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            for sign in [-1.0, 1.0] {
                let y = (-b + sign * disc.sqrt()) / (2.0 * a);
                if (0.0..=refinery.capacity).contains(&y) {
                    candidates.push(y);
                }
            }
        }
    }
    let y = candidates
        .into_iter()
        .max_by(|x, y| net(*x).total_cmp(&net(*y)))
        .expect("candidate set includes the endpoints");
    Ok(FixedPriceOptimum {
        y,
        profit: net(y),
        emissions: refinery.emissions(y),
    })
}

/// Total emissions with every refinery at full capacity.
pub fn unpriced_emissions(refineries: &[Refinery]) -> f64 {
    refineries.iter().map(|r| r.emissions(r.capacity)).sum()
}

/// Shared profit of every zero-payment split of the cap between two
/// refineries, in tranche steps: `(permits to the first, profit)`.
pub fn zero_price_splits(refineries: &[Refinery; 2], permit_cap: u64, tranche: u64) -> Result<Vec<(u64, f64)>> {
    let n = tranche_count(permit_cap, tranche)? as u64;
    Ok((0..=n)
        .map(|w| {
            let g1 = w * tranche;
            let g2 = permit_cap - g1;
            let v = refineries[0].value(refineries[0].production(g1 as f64))
                + refineries[1].value(refineries[1].production(g2 as f64));
            (g1, v)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub variant: RewardVariant,
    pub episodes: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub epsilon_schedule: Option<EpsilonSchedule>,
    #[serde(default = "default_bid_step")]
    pub bid_step: f64,
    #[serde(default = "default_bid_max")]
    pub bid_max: f64,
    /// Greedy episodes used to score the final policies.
    #[serde(default = "default_eval")]
    pub eval_episodes: usize,
    /// Learning-curve window in episodes.
    #[serde(default = "default_curve_every")]
    pub curve_every: usize,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    1.0
}
fn default_bid_step() -> f64 {
    50_000.0
}
fn default_bid_max() -> f64 {
    8_400_000.0
}
fn default_eval() -> usize {
    200
}
fn default_curve_every() -> usize {
    1000
}

impl RlConfig {
    pub fn new(variant: RewardVariant, episodes: usize) -> Self {
        RlConfig {
            variant,
            episodes,
            alpha: default_alpha(),
            gamma: default_gamma(),
            epsilon_schedule: None,
            bid_step: default_bid_step(),
            bid_max: default_bid_max(),
            eval_episodes: default_eval(),
            curve_every: default_curve_every(),
        }
    }

    /// The configured schedule, or 1 → 0 linearly over 90% of the episodes.
    pub fn schedule(&self) -> EpsilonSchedule {
        self.epsilon_schedule.unwrap_or(EpsilonSchedule {
            start: 1.0,
            end: 0.0,
            decay_episodes: self.episodes * 9 / 10,
        })
    }

    pub fn grid(&self) -> BidGrid {
        BidGrid {
            step: self.bid_step,
            max: self.bid_max,
        }
    }
}

/// Per-window averages of the training episodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub agent: usize,
    /// Mean per-episode profit ρ − payment over won tranches, $m.
    pub cumulative_utility: f64,
    /// Mean of (total payments / permits), dollars per permit.
    pub avg_permit_price: f64,
    pub epsilon: f64,
}

/// One cell of the holdings-indexed policy matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyCell {
    /// Permits held by the first and second refinery.
    pub holdings: [u64; 2],
    pub terminal: bool,
    pub visited: [bool; 2],
    /// Greedy bids in $m (lowest index among ties).
    pub bid: [f64; 2],
    /// max_a Q(s, a) per agent in $m.
    pub value: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RlEvaluation {
    /// Mean over evaluation episodes, dollars per permit.
    pub avg_permit_price: f64,
    /// Mean per-agent profit, dollars.
    pub profits: [f64; 2],
    /// Mean per-agent permits won.
    pub permits: [f64; 2],
    pub shared_profit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RlRun {
    pub seed: u64,
    pub variant: RewardVariant,
    pub curve: Vec<CurvePoint>,
    pub evaluation: RlEvaluation,
    pub policy: Vec<PolicyCell>,
    /// A single greedy episode in ledger form.
    pub sample: AuctionLedger,
    #[serde(skip)]
    pub learners: [QLearner; 2],
}

struct EpisodeOut {
    price: f64,
    profit: [f64; 2],
    permits: [u64; 2],
}

struct Market {
    n: usize,
    tranche: u64,
    rho: [Vec<f64>; 2],
    grid: BidGrid,
}

impl Market {
    fn new(refineries: &[Refinery; 2], permit_cap: u64, tranche: u64, grid: BidGrid) -> Result<Self> {
        let n = tranche_count(permit_cap, tranche)?;
        let rho_of = |r: &Refinery| -> Vec<f64> {
            (0..=n)
                .map(|w| r.greedy_bid((w as u64 * tranche) as f64, tranche as f64))
                .collect()
        };
        Ok(Market {
            n,
            tranche,
            rho: [rho_of(&refineries[0]), rho_of(&refineries[1])],
            grid: grid.validated()?,
        })
    }

    fn episode(
        &self,
        learners: &mut [QLearner; 2],
        variant: RewardVariant,
        epsilon: f64,
        learn: bool,
        rng: &mut RunRng,
    ) -> EpisodeOut {
        let mut wins = [0usize; 2];
        let mut paid = 0.0;
        let mut profit = [0.0; 2];
        for t in 0..self.n {
            let s = holdings_state(wins, self.n);
            let a = [learners[0].act(s, epsilon, rng), learners[1].act(s, epsilon, rng)];
            let bids = [self.grid.bid(a[0]), self.grid.bid(a[1])];
            let (winner, payment) = second_price(&bids, rng);
            let gain = self.rho[winner][wins[winner]] - payment;
            wins[winner] += 1;
            paid += payment;
            profit[winner] += gain;
            if learn {
                let next = (t + 1 < self.n).then(|| holdings_state(wins, self.n));
                for (i, learner) in learners.iter_mut().enumerate() {
                    learner.update(s, a[i], variant.reward(i, winner, gain) / 1e6, next);
                }
            }
        }
        EpisodeOut {
            price: paid / (self.n as u64 * self.tranche) as f64,
            profit,
            permits: [wins[0] as u64 * self.tranche, wins[1] as u64 * self.tranche],
        }
    }

    fn policy(&self, learners: &[QLearner; 2]) -> Vec<PolicyCell> {
        let mut out = Vec::new();
        for w1 in 0..=self.n {
            for w2 in 0..=self.n - w1 {
                let s = holdings_state([w1, w2], self.n);
                let terminal = w1 + w2 == self.n;
                let cell = |i: usize| {
                    if terminal {
                        (0.0, 0.0)
                    } else {
                        let l = &learners[i];
                        (self.grid.bid(l.argmax_lowest(s)) / 1e6, l.max_q(s))
                    }
                };
                let (b0, v0) = cell(0);
                let (b1, v1) = cell(1);
                out.push(PolicyCell {
                    holdings: [w1 as u64 * self.tranche, w2 as u64 * self.tranche],
                    terminal,
                    visited: [learners[0].visits(s) > 0, learners[1].visits(s) > 0],
                    bid: [b0, b1],
                    value: [v0, v1],
                });
            }
        }
        out
    }
}

/// Trains two independent Q-learning bidders on the permit auction and
/// scores their greedy policies.
pub fn rl_experiment(
    refineries: &[Refinery; 2],
    permit_cap: u64,
    tranche: u64,
    cfg: &RlConfig,
    seed: u64,
) -> Result<RlRun> {
    for r in refineries {
        r.validate()?;
    }
    if cfg.episodes == 0 {
        return Err(Error::Config("at least one training episode is required".into()));
    }
    let market = Market::new(refineries, permit_cap, tranche, cfg.grid())?;
    let n_states = (market.n + 1) * (market.n + 1);
    let mut learners = [
        QLearner::new(n_states, market.grid.len(), cfg.alpha, cfg.gamma)?,
        QLearner::new(n_states, market.grid.len(), cfg.alpha, cfg.gamma)?,
    ];
    let schedule = cfg.schedule();
    let mut rng = run_rng(seed);
    let window = cfg.curve_every.max(1);
    let mut curve = Vec::new();
    let (mut acc_price, mut acc_profit, mut acc_n) = (0.0, [0.0; 2], 0usize);
    for ep in 0..cfg.episodes {
        let eps = schedule.value(ep);
        let out = market.episode(&mut learners, cfg.variant, eps, true, &mut rng);
        acc_price += out.price;
        acc_profit[0] += out.profit[0];
        acc_profit[1] += out.profit[1];
        acc_n += 1;
        if acc_n == window || ep + 1 == cfg.episodes {
            for (i, p) in acc_profit.iter().enumerate() {
                curve.push(CurvePoint {
                    episode: ep + 1,
                    agent: i + 1,
                    cumulative_utility: p / acc_n as f64 / 1e6,
                    avg_permit_price: acc_price / acc_n as f64,
                    epsilon: eps,
                });
            }
            (acc_price, acc_profit, acc_n) = (0.0, [0.0; 2], 0);
        }
    }
    let evaluation = evaluate(&market, &mut learners, cfg.eval_episodes.max(1), &mut rng);
    let policy = market.policy(&learners);
    let sample = {
        let frozen = learners.clone();
        let grid = market.grid;
        let n = market.n;
        let tranche = market.tranche;
        let mut pick_rng = run_rng(seed ^ 0x5eed);
        run_auction(refineries, permit_cap, tranche, &mut rng, |i, holdings, _| {
            let wins = [(holdings[0] / tranche) as usize, (holdings[1] / tranche) as usize];
            grid.bid(frozen[i].greedy(holdings_state(wins, n), &mut pick_rng))
        })?
    };
    Ok(RlRun {
        seed,
        variant: cfg.variant,
        curve,
        evaluation,
        policy,
        sample,
        learners,
    })
}

fn evaluate(market: &Market, learners: &mut [QLearner; 2], episodes: usize, rng: &mut RunRng) -> RlEvaluation {
    let mut price = 0.0;
    let mut profits = [0.0; 2];
    let mut permits = [0.0; 2];
    for _ in 0..episodes {
        let out = market.episode(learners, RewardVariant::R1, 0.0, false, rng);
        price += out.price;
        for i in 0..2 {
            profits[i] += out.profit[i];
            permits[i] += out.permits[i] as f64;
        }
    }
    let e = episodes as f64;
    let profits = [profits[0] / e, profits[1] / e];
    RlEvaluation {
        avg_permit_price: price / e,
        profits,
        permits: [permits[0] / e, permits[1] / e],
        shared_profit: profits[0] + profits[1],
    }
}

/// Runs [`rl_experiment`] for each seed in parallel; results keep seed order.
pub fn rl_batch(
    refineries: &[Refinery; 2],
    permit_cap: u64,
    tranche: u64,
    cfg: &RlConfig,
    seeds: &[u64],
) -> Result<Vec<RlRun>> {
    seeds
        .par_iter()
        .map(|&s| rl_experiment(refineries, permit_cap, tranche, cfg, s))
        .collect()
}

/// Writes the learning curve as CSV.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in curve {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

/// Greedy bids and max-Q returns laid out by holdings, as text matrices.
pub fn format_policy_matrices(policy: &[PolicyCell], permit_cap: u64, tranche: u64) -> String {
    let n = (permit_cap / tranche.max(1)) as usize;
    let find = |w1: usize, w2: usize| {
        policy
            .iter()
            .find(|c| c.holdings == [w1 as u64 * tranche, w2 as u64 * tranche])
    };
    let mut s = String::new();
    for (title, pick) in [
        ("argmax_a Q(s, a): bid in $m", 0usize),
        ("max_a Q(s, a): estimated return in $m", 1usize),
    ] {
        s.push_str(&format!("{title}\n{:>8} ||", "R1 \\ R2"));
        for w2 in 0..=n {
            s.push_str(&format!(" {:^15} |", w2 as u64 * tranche));
        }
        s.push('\n');
        for w1 in 0..=n {
            s.push_str(&format!("{:>8} ||", w1 as u64 * tranche));
            for w2 in 0..=n {
                let text = match find(w1, w2) {
                    None => "?   /   ?".to_string(),
                    Some(c) if c.terminal => "0.0* / 0.0*".to_string(),
                    Some(c) => {
                        let v = if pick == 0 { c.bid } else { c.value };
                        let mark = |i: usize| if c.visited[i] { "" } else { "?" };
                        format!("{:.2}{} / {:.2}{}", v[0], mark(0), v[1], mark(1))
                    }
                };
                s.push_str(&format!(" {text:^15} |"));
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

/// The permit auction as a protocol environment: alternative `j|…|j`
/// awards the next tranche to refinery `j − 1`, whose reward is its
/// marginal production value ρ in dollars. Tranches beyond the cap are
/// worth nothing.
#[derive(Clone, Debug)]
pub struct CapTradeEnv {
    pub refineries: Vec<Refinery>,
    pub permit_cap: u64,
    pub tranche: u64,
    sets: Vec<Vec<ActionId>>,
    alt: Vec<JointAction>,
}

impl CapTradeEnv {
    pub fn new(refineries: Vec<Refinery>, permit_cap: u64, tranche: u64) -> Result<Self> {
        tranche_count(permit_cap, tranche)?;
        for r in &refineries {
            r.validate()?;
        }
        let k = refineries.len();
        let ids: Vec<ActionId> = (1..=k as ActionId).collect();
        Ok(CapTradeEnv {
            alt: ids.iter().map(|&j| JointAction::diagonal(j, k)).collect(),
            sets: vec![ids; k],
            refineries,
            permit_cap,
            tranche,
        })
    }

    pub fn tranches(&self) -> usize {
        (self.permit_cap / self.tranche) as usize
    }

    pub fn holdings(&self, h: &History) -> Vec<u64> {
        let mut out = vec![0; self.refineries.len()];
        for (a, _) in &h.steps {
            out[a.0[0] as usize - 1] += self.tranche;
        }
        out
    }
}

impl EnvModel for CapTradeEnv {
    fn id(&self) -> String {
        "cap-and-trade".into()
    }

    fn num_agents(&self) -> usize {
        self.refineries.len()
    }

    fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.sets
    }

    fn alt(&self) -> &[JointAction] {
        &self.alt
    }

    fn outcomes(&self, h: &History, a: &JointAction) -> Vec<(JointPercept, f64)> {
        let winner = a.0[0] as usize - 1;
        let holdings = self.holdings(h);
        let live = h.len() < self.tranches();
        let percept = (0..self.refineries.len())
            .map(|i| {
                let r = if i == winner && live {
                    self.refineries[i].greedy_bid(holdings[i] as f64, self.tranche as f64)
                } else {
                    0.0
                };
                AgentPercept::new(0, r)
            })
            .collect();
        vec![(JointPercept(percept), 1.0)]
    }
}

/// Declares its marginal production value for winning the next tranche.
#[derive(Clone, Debug)]
pub struct GreedyBidder {
    pub refinery: Refinery,
    pub tranche: u64,
}

impl AgentPolicy for GreedyBidder {
    fn valuation(&mut self, view: &AgentView<'_>, _rng: &mut RunRng) -> Result<ValuationTable> {
        let held = view
            .own
            .iter()
            .filter(|o| o.action.0[0] as usize == view.agent + 1)
            .count() as u64
            * self.tranche;
        let rho = self.refinery.greedy_bid(held as f64, self.tranche as f64);
        Ok(ValuationTable::new(
            view.alt
                .iter()
                .map(|a| if a.0[0] as usize == view.agent + 1 { rho } else { 0.0 })
                .collect(),
        ))
    }
}

/// Scenario file for the cap-and-trade commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub refineries: Vec<Refinery>,
    #[serde(default = "default_cap")]
    pub permit_cap: u64,
    #[serde(default = "default_tranche")]
    pub tranche_size: u64,
    #[serde(default = "default_fixed_price")]
    pub permit_price_fixed: f64,
    #[serde(default)]
    pub rl: Option<RlConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_cap() -> u64 {
    15_000
}
fn default_tranche() -> u64 {
    3_000
}
fn default_fixed_price() -> f64 {
    190.0
}

impl Scenario {
    /// Two refineries with m = 1 and m = 2.
    pub fn standard() -> Self {
        Scenario {
            refineries: vec![Refinery::new(1.0), Refinery::new(2.0)],
            permit_cap: default_cap(),
            tranche_size: default_tranche(),
            permit_price_fixed: default_fixed_price(),
            rl: None,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.refineries.is_empty() {
            return Err(Error::Config("scenario lists no refineries".into()));
        }
        for r in &self.refineries {
            r.validate()?;
        }
        tranche_count(self.permit_cap, self.tranche_size)?;
        Ok(())
    }

    pub fn pair(&self) -> Result<[Refinery; 2]> {
        match self.refineries[..] {
            [a, b] => Ok([a, b]),
            _ => Err(Error::Unsupported(format!(
                "the learning experiment needs exactly two refineries, got {}",
                self.refineries.len()
            ))),
        }
    }
}
