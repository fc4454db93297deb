//! Exponential weights over a changing set of specialists.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::log_sum_exp;

/// Losses above this are clamped so weights stay representable.
pub const LOSS_CAP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LossKind {
    /// Losses are −log ρ_i; the mixture loss is −log Σ ŵ_i ρ_i.
    Log,
    /// Arbitrary losses; the mixture loss is Σ ŵ_i ℓ_i.
    Linear,
}

#[derive(Clone, Debug, Serialize)]
pub struct HedgeState {
    pub eta: f64,
    pub kind: LossKind,
    pub priors: BTreeMap<usize, f64>,
    log_weights: BTreeMap<usize, f64>,
    /// L_t, the cumulative mixture loss.
    pub cum_loss: f64,
}

impl HedgeState {
    pub fn new(eta: f64, priors: impl IntoIterator<Item = (usize, f64)>, kind: LossKind) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {eta}")));
        }
        let priors: BTreeMap<usize, f64> = priors.into_iter().collect();
        if priors.values().any(|p| !(*p > 0.0)) {
            return Err(Error::Domain("priors must be positive".into()));
        }
        let log_weights = priors.iter().map(|(&i, &p)| (i, p.ln())).collect();
        Ok(HedgeState {
            eta,
            kind,
            priors,
            log_weights,
            cum_loss: 0.0,
        })
    }

    /// Uniform prior over `n` specialists numbered from 0.
    pub fn uniform(eta: f64, n: usize, kind: LossKind) -> Result<Self> {
        HedgeState::new(eta, (0..n).map(|i| (i, 1.0 / n as f64)), kind)
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.log_weights.keys().copied()
    }

    pub fn log_weight(&self, id: usize) -> Option<f64> {
        self.log_weights.get(&id).copied()
    }

    /// Unnormalised weights w_{t,i}.
    pub fn weights(&self) -> BTreeMap<usize, f64> {
        self.log_weights.iter().map(|(&i, &lw)| (i, lw.exp())).collect()
    }

    /// ŵ_{t,i}, summing to one over the active set.
    pub fn normalized(&self) -> BTreeMap<usize, f64> {
        let lws: Vec<f64> = self.log_weights.values().copied().collect();
        let z = log_sum_exp(&lws);
        self.log_weights
            .iter()
            .map(|(&i, &lw)| (i, (lw - z).exp()))
            .collect()
    }

    /// Normalised weights in id order.
    pub fn normalized_vec(&self) -> Vec<f64> {
        self.normalized().into_values().collect()
    }

    fn mixture_loss(&self, losses: &BTreeMap<usize, f64>) -> f64 {
        let w = self.normalized();
        match self.kind {
            LossKind::Log => {
                let terms: Vec<f64> = w
                    .iter()
                    .filter(|(_, &wi)| wi > 0.0)
                    .map(|(i, wi)| wi.ln() - losses[i])
                    .collect();
                -log_sum_exp(&terms)
            }
            LossKind::Linear => w.iter().map(|(i, wi)| wi * losses[i]).sum(),
        }
    }

    /// One round: advance L_t by the mixture loss, decay survivors by
    /// e^{−ηℓ_i}, drop departures and seed arrivals at ν_i e^{−ηL_t}.
    /// Returns the mixture loss.
    pub fn step(
        &mut self,
        losses: &BTreeMap<usize, f64>,
        arrivals: &[(usize, f64)],
        departures: &[usize],
    ) -> Result<f64> {
        let mut capped = BTreeMap::new();
        for i in self.log_weights.keys() {
            let l = losses.get(i).ok_or_else(|| {
                Error::Contract(format!("no loss reported for active specialist {i}"))
            })?;
            if l.is_nan() {
                return Err(Error::Contract(format!("loss of specialist {i} is NaN")));
            }
            capped.insert(*i, l.min(LOSS_CAP));
        }
        let mix = self.mixture_loss(&capped);
        self.cum_loss += mix;
        for (i, lw) in self.log_weights.iter_mut() {
            *lw -= self.eta * capped[i];
        }
        for d in departures {
            self.log_weights.remove(d);
        }
        for &(i, nu) in arrivals {
            if !(nu > 0.0) {
                return Err(Error::Domain(format!("prior of arriving specialist {i} must be positive")));
            }
            self.priors.insert(i, nu);
            self.log_weights.insert(i, nu.ln() - self.eta * self.cum_loss);
        }
        if self.log_weights.is_empty() {
            return Err(Error::Contract("no active specialists left".into()));
        }
        Ok(mix)
    }
}

/// Functional form of [`HedgeState::step`].
pub fn hedge_step(
    state: &HedgeState,
    losses: &BTreeMap<usize, f64>,
    arrivals: &[(usize, f64)],
    departures: &[usize],
) -> Result<HedgeState> {
    let mut next = state.clone();
    next.step(losses, arrivals, departures)?;
    Ok(next)
}
