use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use socialcost::agents::FixedAgent;
use socialcost::envcore::{
    AgentPolicy, BilateralTradeEnv, BrokenChronologyEnv, CoinEnv, EnvModel, FactoryEnv, RandomSmallEnv,
    SecondPriceEnv,
};
use socialcost::mechanisms::{ClarkVcg, ExpVcg, ExpVcgConfig, Mechanism};
use socialcost::oracle::{alternative_q_tables, rational_tables, self_rational_q, DeclaredTables, OracleAgent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    Factory,
    SecondPrice {
        values: Vec<f64>,
    },
    BilateralTrade {
        buyer: f64,
        seller: f64,
    },
    Coin {
        p: f64,
    },
    Random {
        agents: usize,
        actions: usize,
        observations: usize,
        depth: usize,
        seed: u64,
    },
    BrokenChronology,
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn EnvModel>> {
        Ok(match self {
            EnvSpec::Factory => Box::new(FactoryEnv::standard()),
            EnvSpec::SecondPrice { values } => {
                if values.is_empty() {
                    bail!("second-price needs at least one bidder");
                }
                Box::new(SecondPriceEnv::new(values.clone()))
            }
            EnvSpec::BilateralTrade { buyer, seller } => Box::new(BilateralTradeEnv::new(*buyer, *seller)),
            EnvSpec::Coin { p } => {
                if !(0.0..=1.0).contains(p) {
                    bail!("coin probability {p} is outside [0, 1]");
                }
                Box::new(CoinEnv::new(*p))
            }
            EnvSpec::Random {
                agents,
                actions,
                observations,
                depth,
                seed,
            } => {
                if *agents == 0 || *actions == 0 || *observations == 0 || *depth == 0 {
                    bail!("random env sizes must be positive");
                }
                Box::new(RandomSmallEnv::new(*agents, *actions, *observations, *depth, *seed))
            }
            EnvSpec::BrokenChronology => Box::new(BrokenChronologyEnv::default()),
        })
    }

    /// Reference environment by name with its standard parameters.
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "factory" => EnvSpec::Factory,
            "second-price" => EnvSpec::SecondPrice {
                values: vec![3.0, 5.0, 4.0],
            },
            "bilateral-trade" => EnvSpec::BilateralTrade {
                buyer: 0.7,
                seller: 0.4,
            },
            "coin" => EnvSpec::Coin { p: 0.5 },
            "random" => EnvSpec::Random {
                agents: 2,
                actions: 2,
                observations: 2,
                depth: 3,
                seed: 0,
            },
            "broken-chronology" => EnvSpec::BrokenChronology,
            other => bail!(
                "unknown environment `{other}` (factory, second-price, bilateral-trade, coin, random, broken-chronology)"
            ),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MechanismSpec {
    #[default]
    Clark,
    ExpVcg {
        epsilon: f64,
        #[serde(default = "unit")]
        sensitivity: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl MechanismSpec {
    pub fn build(&self) -> Result<Box<dyn Mechanism>> {
        Ok(match self {
            MechanismSpec::Clark => Box::new(ClarkVcg),
            MechanismSpec::ExpVcg { epsilon, sensitivity } => {
                let cfg = ExpVcgConfig {
                    epsilon: *epsilon,
                    sensitivity: *sensitivity,
                }
                .validated()
                .map_err(|e| anyhow!(e))?;
                Box::new(ExpVcg { cfg })
            }
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum AgentSpec {
    /// Every agent declares its rational valuation table.
    #[default]
    RationalOracle,
    /// Valuations from the alternative q-function that ignores future payments.
    AlternativeOracle,
    /// Every agent declares its self-rational q-function.
    SelfRationalOracle,
    /// Fixed valuation table per agent, indexed like the environment's Alt.
    Fixed(Vec<Vec<f64>>),
}

impl AgentSpec {
    pub fn build(&self, env: &dyn EnvModel, horizon: usize) -> Result<Vec<Box<dyn AgentPolicy>>> {
        let k = env.num_agents();
        let horizons = vec![horizon; k];
        let oracle = |declared: DeclaredTables| -> Vec<Box<dyn AgentPolicy>> {
            let declared = Arc::new(declared);
            (0..k)
                .map(|i| Box::new(OracleAgent::new(declared.clone(), i)) as Box<dyn AgentPolicy>)
                .collect()
        };
        Ok(match self {
            AgentSpec::RationalOracle => oracle(rational_tables(env, &horizons, horizon)?.declared()),
            AgentSpec::AlternativeOracle => oracle(alternative_q_tables(env, &horizons, horizon)?.declared()),
            AgentSpec::SelfRationalOracle => oracle(self_rational_q(env, &horizons)?),
            AgentSpec::Fixed(tables) => {
                if tables.len() != k {
                    bail!("{} fixed tables for {k} agents", tables.len());
                }
                tables
                    .iter()
                    .map(|t| Box::new(FixedAgent::new(t.clone())) as Box<dyn AgentPolicy>)
                    .collect()
            }
        })
    }
}

/// Input of `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolScenario {
    pub env: EnvSpec,
    pub horizon: usize,
    #[serde(default)]
    pub mechanism: MechanismSpec,
    #[serde(default)]
    pub agents: AgentSpec,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
