use anyhow::Result;
use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Value};
use socialcost::captrade::{CapTradeEnv, Refinery};
use socialcost::envcore::{check_chronological, BrokenChronologyEnv, EnvModel, FactoryEnv, RandomSmallEnv};
use socialcost::mechanisms::{dp_ratio_check, ExpVcgConfig};
use socialcost::oracle::{
    check_bayes_nash_ic, check_ir, gum_expected_utility, gum_martingale_check, gum_run, rational_tables,
    self_rational_q, DeclaredTables, GumTables, PerturbedReports, ReportPolicy, Truthful,
};

use crate::scenario::EnvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Ic,
    Ir,
    Dp,
    Gum,
    Chronological,
    All,
}

impl Suite {
    pub fn is_stochastic(self) -> bool {
        matches!(self, Suite::Ic | Suite::Gum | Suite::All)
    }
}

pub struct VerifyOptions {
    pub seed: Option<u64>,
    pub misreports: usize,
    pub random_envs: u64,
    pub self_rational: bool,
    pub broken_env: bool,
    pub env: Option<EnvSpec>,
}

#[derive(Serialize)]
pub struct Check {
    pub suite: Suite,
    pub target: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Environments checked by the IC, IR and GUM suites: the factory (or the
/// `--env` override) and seeded random small environments.
fn targets(opts: &VerifyOptions) -> Result<Vec<(Box<dyn EnvModel>, usize)>> {
    let mut out: Vec<(Box<dyn EnvModel>, usize)> = Vec::new();
    match &opts.env {
        Some(spec) => {
            let env = spec.build()?;
            let depth = match spec {
                EnvSpec::Random { depth, .. } => *depth,
                _ => 2,
            };
            out.push((env, depth));
        }
        None => {
            out.push((Box::new(FactoryEnv::standard()), 2));
            for seed in 0..opts.random_envs {
                let k = 1 + (seed % 3) as usize;
                let depth = 1 + ((seed / 3) % 3) as usize;
                let n_actions = if k == 3 && depth == 3 { 1 + (seed % 2) as usize } else { 2 };
                out.push((Box::new(RandomSmallEnv::new(k, n_actions, 2, depth, seed)), depth));
            }
        }
    }
    Ok(out)
}

fn declared(env: &dyn EnvModel, depth: usize, self_rational: bool) -> Result<DeclaredTables> {
    let horizons = vec![depth; env.num_agents()];
    Ok(if self_rational {
        self_rational_q(env, &horizons)?
    } else {
        rational_tables(env, &horizons, depth)?.declared()
    })
}

fn ic(opts: &VerifyOptions, seed: u64, checks: &mut Vec<Check>) -> Result<()> {
    for (env, depth) in targets(opts)? {
        let d = declared(env.as_ref(), depth, opts.self_rational)?;
        let report = check_bayes_nash_ic(&d, opts.misreports, seed);
        checks.push(Check {
            suite: Suite::Ic,
            target: env.id(),
            passed: report.is_empty(),
            detail: json!({
                "tables": report.tables,
                "comparisons": report.comparisons,
                "violations": report.violations.len(),
                "witness": report.violations.first(),
            }),
        });
    }
    Ok(())
}

fn ir(opts: &VerifyOptions, checks: &mut Vec<Check>) -> Result<()> {
    for (env, depth) in targets(opts)? {
        let d = declared(env.as_ref(), depth, opts.self_rational)?;
        let report = check_ir(&d);
        checks.push(Check {
            suite: Suite::Ir,
            target: env.id(),
            passed: report.is_empty(),
            detail: serde_json::to_value(&report)?,
        });
    }
    Ok(())
}

fn dp(checks: &mut Vec<Check>) -> Result<()> {
    for eps in [0.1, 1.0] {
        let cfg = ExpVcgConfig::new(eps)?;
        let worst = dp_ratio_check(&cfg, 2, 3, &[0.0, 0.5, 1.0])?;
        checks.push(Check {
            suite: Suite::Dp,
            target: format!("exp-vcg eps={eps} k=2 alt=3"),
            passed: worst <= eps + 1e-9,
            detail: json!({ "epsilon": eps, "worst_log_ratio": worst }),
        });
    }
    Ok(())
}

fn gum(opts: &VerifyOptions, seed: u64, checks: &mut Vec<Check>) -> Result<()> {
    for (env, depth) in targets(opts)? {
        let k = env.num_agents();
        let tables = match GumTables::new(env.as_ref(), &vec![depth; k]) {
            Ok(t) => t,
            Err(e) => {
                checks.push(Check {
                    suite: Suite::Gum,
                    target: env.id(),
                    passed: false,
                    detail: json!({ "error": e.to_string() }),
                });
                continue;
            }
        };
        let policies: Vec<Box<dyn ReportPolicy>> = vec![
            Box::new(Truthful),
            Box::new(PerturbedReports {
                liars: vec![0],
                scale: 0.5,
                seed,
            }),
            Box::new(PerturbedReports {
                liars: (0..k).collect(),
                scale: 50.0,
                seed: seed.wrapping_add(1),
            }),
        ];
        let mut balance: f64 = 0.0;
        let mut martingale: f64 = 0.0;
        for policy in &policies {
            for run in 0..50 {
                for stage in gum_run(&tables, policy.as_ref(), seed.wrapping_add(run)).stages {
                    balance = balance.max(stage.p.iter().sum::<f64>().abs());
                }
            }
            for t in 1..=tables.horizon() {
                for j in 0..k {
                    for i in 0..k {
                        if j != i || policy.is_truthful_for(i) {
                            martingale = martingale.max(gum_martingale_check(&tables, policy.as_ref(), t, j, i));
                        }
                    }
                }
            }
        }
        let expected = gum_expected_utility(&tables, &Truthful);
        let upsilon: Vec<f64> = (0..k).map(|i| tables.upsilon_root(i)).collect();
        let gap = expected
            .iter()
            .zip(&upsilon)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        checks.push(Check {
            suite: Suite::Gum,
            target: env.id(),
            passed: balance < 1e-9 && martingale < 1e-9 && gap < 1e-9,
            detail: json!({
                "max_budget_imbalance": balance,
                "max_martingale_residual": martingale,
                "upsilon": upsilon,
                "expected_utility_gap": gap,
            }),
        });
    }
    Ok(())
}

fn chronological(opts: &VerifyOptions, checks: &mut Vec<Check>) -> Result<()> {
    let mut envs: Vec<Box<dyn EnvModel>> = match &opts.env {
        Some(spec) => vec![spec.build()?],
        None => ["factory", "second-price", "bilateral-trade", "coin", "random"]
            .iter()
            .map(|n| EnvSpec::named(n).and_then(|s| s.build()))
            .collect::<Result<_>>()?,
    };
    if opts.env.is_none() {
        envs.push(Box::new(CapTradeEnv::new(
            vec![Refinery::new(1.0), Refinery::new(2.0)],
            15_000,
            3_000,
        )?));
    }
    if opts.broken_env {
        envs.push(Box::new(BrokenChronologyEnv::default()));
    }
    for env in envs {
        let report = check_chronological(env.as_ref(), 3)?;
        checks.push(Check {
            suite: Suite::Chronological,
            target: env.id(),
            passed: report.is_empty(),
            detail: json!({
                "depth": report.depth,
                "sequences_checked": report.sequences_checked,
                "violations": report.violations.len(),
                "witness": report.violations.first(),
                "unnormalized": report.unnormalized,
            }),
        });
    }
    Ok(())
}

pub fn run(suite: Suite, opts: &VerifyOptions) -> Result<VerifyReport> {
    let seed = opts.seed.unwrap_or(0);
    let mut checks = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Ic {
        ic(opts, seed, &mut checks)?;
    }
    if all || suite == Suite::Ir {
        ir(opts, &mut checks)?;
    }
    if all || suite == Suite::Dp {
        dp(&mut checks)?;
    }
    if all || suite == Suite::Gum {
        gum(opts, seed, &mut checks)?;
    }
    if all || suite == Suite::Chronological {
        chronological(opts, &mut checks)?;
    }
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
