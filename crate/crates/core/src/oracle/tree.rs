//! Exhaustive enumeration of every history up to a horizon.

use crate::envcore::{AgentPercept, EnvModel, History, JointAction, JointPercept};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Edge {
    pub node: usize,
    pub prob: f64,
    pub percept: JointPercept,
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    /// Step about to be played; the node's history has length `t - 1`.
    pub t: usize,
    /// (parent node, alternative index, outcome index).
    pub parent: Option<(usize, usize, usize)>,
    /// `children[a]` lists the percept outcomes of alternative `a`; empty at the horizon.
    pub children: Vec<Vec<Edge>>,
    /// Σ_{s<t} r_{s,i} along the path.
    pub past_rewards: Vec<f64>,
}

/// Every history of length ≤ `horizon`, nodes in depth-first pre-order so a
/// reverse sweep visits children before parents.
#[derive(Clone, Debug)]
pub struct GameTree {
    pub k: usize,
    pub alt: Vec<JointAction>,
    pub horizon: usize,
    pub nodes: Vec<TreeNode>,
}

impl GameTree {
    pub fn build(env: &dyn EnvModel, horizon: usize, budget: usize) -> Result<GameTree> {
        let k = env.num_agents();
        let mut tree = GameTree {
            k,
            alt: env.alt().to_vec(),
            horizon,
            nodes: Vec::new(),
        };
        let mut h = History::empty();
        tree.expand(env, &mut h, None, vec![0.0; k], budget)?;
        Ok(tree)
    }

    fn expand(
        &mut self,
        env: &dyn EnvModel,
        h: &mut History,
        parent: Option<(usize, usize, usize)>,
        past_rewards: Vec<f64>,
        budget: usize,
    ) -> Result<usize> {
        if self.nodes.len() >= budget {
            return Err(Error::BudgetExceeded { limit: budget });
        }
        let id = self.nodes.len();
        let t = h.len() + 1;
        self.nodes.push(TreeNode {
            t,
            parent,
            children: Vec::new(),
            past_rewards: past_rewards.clone(),
        });
        if t > self.horizon {
            return Ok(id);
        }
        let mut children = Vec::with_capacity(self.alt.len());
        for a in 0..self.alt.len() {
            let action = self.alt[a].clone();
            let outcomes = env.outcomes(h, &action);
            if outcomes.is_empty() {
                return Err(Error::Domain(format!(
                    "empty percept support at {} after {}",
                    h.key(),
                    action
                )));
            }
            let mut edges = Vec::with_capacity(outcomes.len());
            for (o, (x, p)) in outcomes.into_iter().enumerate() {
                let rewards: Vec<f64> = past_rewards
                    .iter()
                    .zip(&x.0)
                    .map(|(acc, pc)| acc + pc.reward)
                    .collect();
                h.push(action.clone(), x.clone());
                let child = self.expand(env, h, Some((id, a, o)), rewards, budget)?;
                h.pop();
                edges.push(Edge {
                    node: child,
                    prob: p,
                    percept: x,
                });
            }
            children.push(edges);
        }
        self.nodes[id].children = children;
        Ok(id)
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn n_alt(&self) -> usize {
        self.alt.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.nodes[node].t > self.horizon
    }

    pub fn history(&self, node: usize) -> History {
        let mut steps = Vec::new();
        let mut cur = node;
        while let Some((p, a, o)) = self.nodes[cur].parent {
            steps.push((
                self.alt[a].clone(),
                self.nodes[p].children[a][o].percept.clone(),
            ));
            cur = p;
        }
        steps.reverse();
        History { steps }
    }

    /// The percept on the edge into `node`.
    pub fn incoming_percept(&self, node: usize) -> Option<&JointPercept> {
        self.nodes[node]
            .parent
            .map(|(p, a, o)| &self.nodes[p].children[a][o].percept)
    }

    /// Node reached by following `h` from the root.
    pub fn locate(&self, h: &History) -> Option<usize> {
        let mut cur = self.root();
        for (a, x) in &h.steps {
            let ai = self.alt.iter().position(|b| b == a)?;
            let edges = self.nodes[cur].children.get(ai)?;
            cur = edges.iter().find(|e| e.percept == *x)?.node;
        }
        Some(cur)
    }

    /// Node reached from agent `i`'s own view (joint actions and its own
    /// percepts). Fails when the view is consistent with several histories.
    pub fn locate_from_view(&self, agent: usize, view: &[(JointAction, AgentPercept)]) -> Result<usize> {
        let mut cur = self.root();
        for (s, (a, x)) in view.iter().enumerate() {
            let ai = self
                .alt
                .iter()
                .position(|b| b == a)
                .ok_or_else(|| Error::Domain(format!("step {}: {a} is not in Alt", s + 1)))?;
            let edges = self.nodes[cur]
                .children
                .get(ai)
                .ok_or_else(|| Error::Domain("history is longer than the tables".into()))?;
            let mut matches = edges.iter().filter(|e| e.percept.0[agent] == *x);
            let first = matches
                .next()
                .ok_or_else(|| Error::Domain(format!("step {}: percept not in support", s + 1)))?;
            if matches.next().is_some() {
                return Err(Error::Domain(format!(
                    "step {}: own percept does not identify the joint history; use full visibility",
                    s + 1
                )));
            }
            cur = first.node;
        }
        Ok(cur)
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&n| !self.is_leaf(n))
    }
}
