use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialcost::agents::{hedge_step, HedgeState, LossKind, SwapMaster};

/// Predictive probabilities of binary sources: Bernoulli(θ) and a sticky
/// first-order Markov chain.
#[derive(Clone, Copy)]
pub enum Source {
    Bernoulli(f64),
    Sticky(f64),
}

impl Source {
    pub fn p_one(self, prev: Option<u8>) -> f64 {
        match self {
            Source::Bernoulli(th) => th,
            Source::Sticky(stay) => match prev {
                None => 0.5,
                Some(1) => stay,
                Some(_) => 1.0 - stay,
            },
        }
    }

    pub fn prob(self, prev: Option<u8>, x: u8) -> f64 {
        let p = self.p_one(prev);
        if x == 1 {
            p
        } else {
            1.0 - p
        }
    }
}

pub fn sources() -> Vec<Source> {
    vec![
        Source::Bernoulli(0.1),
        Source::Bernoulli(0.35),
        Source::Bernoulli(0.5),
        Source::Bernoulli(0.8),
        Source::Sticky(0.9),
        Source::Sticky(0.2),
    ]
}

pub fn random_prior(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn log_losses(src: &[Source], prev: Option<u8>, x: u8) -> BTreeMap<usize, f64> {
    src.iter().enumerate().map(|(i, s)| (i, -s.prob(prev, x).ln())).collect()
}

/// Runs Hedge for 200 rounds against an adversary that reveals the bit the
/// mixture finds less likely, with occasional random flips. Returns
/// `(regret, (1/η) ln(1/ν_i))` for every source.
pub fn adversarial_regret(eta: f64, stream: u64) -> Vec<(f64, f64)> {
    let src = sources();
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let prior = random_prior(&mut rng, src.len());
    let mut h = HedgeState::new(eta, prior.iter().copied().enumerate(), LossKind::Log).unwrap();
    let mut expert = vec![0.0; src.len()];
    let mut prev = None;
    for _ in 0..200 {
        let w = h.normalized_vec();
        let mix_one: f64 = src.iter().zip(&w).map(|(s, wi)| wi * s.p_one(prev)).sum();
        let x = if rng.random::<f64>() < 0.1 {
            rng.random_range(0..2u8)
        } else if mix_one < 0.5 {
            1
        } else {
            0
        };
        let l = log_losses(&src, prev, x);
        for (i, e) in expert.iter_mut().enumerate() {
            *e += l[&i];
        }
        h.step(&l, &[], &[]).unwrap();
        prev = Some(x);
    }
    expert
        .iter()
        .zip(&prior)
        .map(|(e, p)| (h.cum_loss - e, (1.0 / p).ln() / eta))
        .collect()
}

/// Largest gap between Hedge at η = 1 and the Bayes posterior, over both the
/// mixture loss and the normalised weights, along a random 60-bit stream.
pub fn bayes_gap(seed: u64) -> f64 {
    let src = sources();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = random_prior(&mut rng, src.len());
    let mut h = HedgeState::new(1.0, prior.iter().copied().enumerate(), LossKind::Log).unwrap();
    let mut joint: Vec<f64> = prior.clone();
    let mut prev = None;
    let mut gap: f64 = 0.0;
    for _ in 0..60 {
        let x = rng.random_range(0..2u8);
        let z: f64 = joint.iter().sum();
        let evidence: f64 = joint.iter().zip(&src).map(|(j, s)| j / z * s.prob(prev, x)).sum();
        for (j, s) in joint.iter_mut().zip(&src) {
            *j *= s.prob(prev, x);
        }
        let mix = h.step(&log_losses(&src, prev, x), &[], &[]).unwrap();
        gap = gap.max((mix + evidence.ln()).abs());
        let z: f64 = joint.iter().sum();
        for (w, j) in h.normalized_vec().iter().zip(&joint) {
            gap = gap.max((w - j / z).abs());
        }
        prev = Some(x);
    }
    gap
}

/// Σ_j E_μ[Σ_x (μ(x|h) − ξ(x|h))²] over all binary strings of length `n`.
pub fn squared_error(src: &[Source], prior: &[f64], truth: usize, n: usize) -> f64 {
    fn walk(src: &[Source], truth: usize, h: &HedgeState, prev: Option<u8>, mass: f64, left: usize) -> f64 {
        if left == 0 {
            return 0.0;
        }
        let w = h.normalized_vec();
        let xi_one: f64 = src.iter().zip(&w).map(|(s, wi)| wi * s.p_one(prev)).sum();
        let mu_one = src[truth].p_one(prev);
        let mut total = mass * 2.0 * (mu_one - xi_one).powi(2);
        for x in 0..2u8 {
            let next = hedge_step(h, &log_losses(src, prev, x), &[], &[]).unwrap();
            total += walk(src, truth, &next, Some(x), mass * src[truth].prob(prev, x), left - 1);
        }
        total
    }
    let h = HedgeState::new(1.0, prior.iter().copied().enumerate(), LossKind::Log).unwrap();
    walk(src, truth, &h, None, 1.0, n)
}

/// Loss to a matching-pennies player: the matcher wants equal actions.
pub fn pennies_loss(me: usize, other: usize, matcher: bool) -> f64 {
    if (me == other) == matcher {
        0.0
    } else {
        1.0
    }
}

pub struct PenniesOutcome {
    pub swap_regret: [f64; 2],
    pub ce_violation: f64,
    pub max_residual: f64,
    pub rows_sum_to_one: bool,
}

fn sample(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    if rng.random::<f64>() < p[0] {
        0
    } else {
        1
    }
}

/// Self-play of two swap-regret learners with sampled actions.
pub fn matching_pennies(rounds: usize, eta: f64, seed: u64) -> PenniesOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut players = [SwapMaster::new(2, eta).unwrap(), SwapMaster::new(2, eta).unwrap()];
    // regret[player][played][alternative]
    let mut regret = [[[0.0f64; 2]; 2]; 2];
    let mut joint = [[0usize; 2]; 2];
    let mut max_residual: f64 = 0.0;
    let mut rows_sum_to_one = true;
    for t in 0..rounds {
        let a = [sample(&players[0].p, &mut rng), sample(&players[1].p, &mut rng)];
        for me in 0..2 {
            let other = a[1 - me];
            let loss: Vec<f64> = (0..2).map(|x| pennies_loss(x, other, me == 0)).collect();
            for b in 0..2 {
                regret[me][a[me]][b] += loss[a[me]] - loss[b];
            }
            players[me].step(&loss).unwrap();
            max_residual = max_residual.max(players[me].residual());
            rows_sum_to_one &= players[me].q.iter().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        if t >= rounds / 2 {
            joint[a[0]][a[1]] += 1;
        }
    }
    let swap_regret = [0, 1].map(|me| {
        regret[me].iter().map(|row| row.iter().copied().fold(0.0, f64::max)).sum::<f64>() / rounds as f64
    });
    let n: usize = joint.iter().flatten().sum();
    let pj = |x: usize, y: usize| joint[x][y] as f64 / n as f64;
    let mut ce_violation: f64 = 0.0;
    for me in 0..2 {
        for a in 0..2 {
            let b = 1 - a;
            // Expected gain from playing b whenever a is recommended.
            let gain: f64 = (0..2)
                .map(|o| {
                    let p = if me == 0 { pj(a, o) } else { pj(o, a) };
                    p * (pennies_loss(a, o, me == 0) - pennies_loss(b, o, me == 0))
                })
                .sum();
            ce_violation = ce_violation.max(gain);
        }
    }
    PenniesOutcome {
        swap_regret,
        ce_violation,
        max_residual,
        rows_sum_to_one,
    }
}
