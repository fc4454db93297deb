//! Swap-regret minimisation through the master reduction: one Hedge learner
//! per action, combined through the stationary distribution of their weights.

use crate::error::{Error, Result};

use super::hedge::{HedgeState, LossKind};

const DAMPING: f64 = 1e-6;

/// Stationary distribution p = pQ of a row-stochastic matrix.
///
/// Solves the linear system directly. When the chain has several closed
/// classes the system is singular, and the chain mixed with weight 1e-6 of
/// the uniform matrix is solved instead, which leans toward uniform.
pub fn swap_fixed_point(q: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = q.len();
    if n == 0 || q.iter().any(|row| row.len() != n) {
        return Err(Error::Domain("Q must be a non-empty square matrix".into()));
    }
    for (l, row) in q.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|x| *x < 0.0) {
            return Err(Error::Domain(format!("row {l} of Q is not a distribution")));
        }
    }
    let p = match stationary(q, 0.0) {
        Some(p) => p,
        None => stationary(q, DAMPING)
            .ok_or_else(|| Error::Domain("no stationary distribution found".into()))?,
    };
    Ok(p)
}

fn stationary(q: &[Vec<f64>], damping: f64) -> Option<Vec<f64>> {
    let n = q.len();
    let u = 1.0 / n as f64;
    // Rows of (Qδᵀ − I) with the last equation replaced by Σp = 1.
    let mut m = vec![vec![0.0; n + 1]; n];
    for r in 0..n {
        for c in 0..n {
            let qcr = (1.0 - damping) * q[c][r] + damping * u;
            m[r][c] = qcr - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..n {
        m[n - 1][c] = 1.0;
    }
    m[n - 1][n] = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    let mut p: Vec<f64> = (0..n).map(|r| (m[r][n] / m[r][r]).max(0.0)).collect();
    let s: f64 = p.iter().sum();
    if !(s > 0.0) {
        return None;
    }
    p.iter_mut().for_each(|x| *x /= s);
    Some(p)
}

/// ‖p − pQ‖₁.
pub fn fixed_point_residual(p: &[f64], q: &[Vec<f64>]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|c| (p[c] - (0..n).map(|r| p[r] * q[r][c]).sum::<f64>()).abs())
        .sum()
}

#[derive(Clone, Debug)]
pub struct SwapMaster {
    pub n_actions: usize,
    pub sub_learners: Vec<HedgeState>,
    pub p: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl SwapMaster {
    pub fn new(n_actions: usize, eta: f64) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::Domain("at least one action is required".into()));
        }
        let sub_learners = (0..n_actions)
            .map(|_| HedgeState::uniform(eta, n_actions, LossKind::Linear))
            .collect::<Result<Vec<_>>>()?;
        let u = 1.0 / n_actions as f64;
        Ok(SwapMaster {
            n_actions,
            sub_learners,
            p: vec![u; n_actions],
            q: vec![vec![u; n_actions]; n_actions],
        })
    }

    /// Charges sub-learner l the loss vector scaled by p_l, rebuilds Q from
    /// their weights and returns the new fixed point p.
    pub fn step(&mut self, loss: &[f64]) -> Result<&[f64]> {
        if loss.len() != self.n_actions {
            return Err(Error::Domain(format!(
                "loss vector has {} entries for {} actions",
                loss.len(),
                self.n_actions
            )));
        }
        for (l, learner) in self.sub_learners.iter_mut().enumerate() {
            let charged = loss
                .iter()
                .enumerate()
                .map(|(a, x)| (a, self.p[l] * x))
                .collect();
            learner.step(&charged, &[], &[])?;
        }
        self.q = self.sub_learners.iter().map(|h| h.normalized_vec()).collect();
        self.p = swap_fixed_point(&self.q)?;
        Ok(&self.p)
    }

    pub fn residual(&self) -> f64 {
        fixed_point_residual(&self.p, &self.q)
    }
}
