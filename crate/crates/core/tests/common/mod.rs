#![allow(dead_code)]

pub mod learning;

use std::sync::Arc;

use socialcost::envcore::{run_protocol, AgentPolicy, EnvModel, History, ProtocolTrace};
use socialcost::mechanisms::ClarkVcg;
use socialcost::oracle::{DeclaredTables, OracleAgent, OracleTables};

pub fn run_oracle(env: &dyn EnvModel, declared: &Arc<DeclaredTables>, horizon: usize, seed: u64) -> ProtocolTrace {
    let mut agents: Vec<Box<dyn AgentPolicy>> = (0..env.num_agents())
        .map(|i| Box::new(OracleAgent::new(declared.clone(), i)) as Box<dyn AgentPolicy>)
        .collect();
    run_protocol(env, &ClarkVcg, &mut agents, horizon, seed).expect("protocol run")
}

/// First seed whose step-1 choice is Alt index `first`.
pub fn seed_forcing(env: &dyn EnvModel, declared: &Arc<DeclaredTables>, horizon: usize, first: usize) -> (u64, ProtocolTrace) {
    for seed in 0..10_000 {
        let trace = run_oracle(env, declared, horizon, seed);
        if trace.records[0].chosen_action == env.alt()[first] {
            return (seed, trace);
        }
    }
    panic!("no seed picks alternative {first} first");
}

/// History after playing Alt index `a` at the root of a deterministic env.
pub fn after(env: &dyn EnvModel, a: usize) -> History {
    let mut h = History::empty();
    let x = env.outcomes(&h, &env.alt()[a]).remove(0).0;
    h.push(env.alt()[a].clone(), x);
    h
}

/// (value, reward, payment) per agent per step of a trace, with `value`
/// the declared value at the chosen action.
pub fn cells(trace: &ProtocolTrace, env: &dyn EnvModel) -> Vec<Vec<(f64, f64, f64)>> {
    trace
        .records
        .iter()
        .map(|r| {
            let a = env.alt_index(&r.chosen_action).unwrap();
            (0..env.num_agents())
                .map(|i| (r.declared_valuations[i].values[a], r.percept.reward(i), r.payments[i]))
                .collect()
        })
        .collect()
}

/// c_{t,i} at the chosen action for each step of a trace.
pub fn costs(trace: &ProtocolTrace, tables: &OracleTables, env: &dyn EnvModel) -> Vec<Vec<f64>> {
    let mut h = History::empty();
    let mut out = Vec::new();
    for r in &trace.records {
        let a = env.alt_index(&r.chosen_action).unwrap();
        out.push(
            (0..env.num_agents())
                .map(|i| tables.c(r.t, i, &h, a).unwrap())
                .collect(),
        );
        h.push(r.chosen_action.clone(), r.percept.clone());
    }
    out
}
