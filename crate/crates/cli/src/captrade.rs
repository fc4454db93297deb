use anyhow::{bail, Result};
use serde::Serialize;
use socialcost::agents::RewardVariant;
use socialcost::captrade::{
    fixed_price_optimum, format_policy_matrices, rl_batch, run_greedy_auction, write_curve_csv, RlConfig, RlEvaluation,
    Scenario,
};
use socialcost::envcore::run_rng;

use crate::output::{emit_json, OutDir};

#[derive(Serialize)]
struct GreedySummary {
    seed: u64,
    permits: Vec<u64>,
    paid: Vec<f64>,
    production: Vec<f64>,
    profit: Vec<f64>,
    collected: f64,
    average_price: f64,
}

pub fn greedy(scenario: &Scenario, seed: u64, out: Option<&OutDir>) -> Result<()> {
    let ledger = run_greedy_auction(
        &scenario.refineries,
        scenario.permit_cap,
        scenario.tranche_size,
        &mut run_rng(seed),
    )?;
    let summary = GreedySummary {
        seed,
        permits: ledger.totals.iter().map(|t| t.permits).collect(),
        paid: ledger.totals.iter().map(|t| t.paid).collect(),
        production: ledger.totals.iter().map(|t| t.production).collect(),
        profit: ledger.totals.iter().map(|t| t.profit).collect(),
        collected: ledger.collected,
        average_price: ledger.average_price(),
    };
    match out {
        Some(dir) => {
            dir.write_with("ledger.csv", |w| Ok(ledger.write_csv(w)?))?;
            dir.write_json("summary.json", &summary)?;
        }
        None => {
            ledger.write_csv(std::io::stdout())?;
            eprintln!("{}", serde_json::to_string(&summary)?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct FixedPriceRow {
    refinery: usize,
    m: f64,
    price_per_ton: f64,
    y: f64,
    profit: f64,
    emissions: f64,
}

pub fn fixed_price(scenario: &Scenario, price: Option<f64>, out: Option<&OutDir>) -> Result<()> {
    let price = price.unwrap_or(scenario.permit_price_fixed);
    let rows = scenario
        .refineries
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let o = fixed_price_optimum(r, price)?;
            Ok(FixedPriceRow {
                refinery: i + 1,
                m: r.m,
                price_per_ton: price,
                y: o.y,
                profit: o.profit,
                emissions: o.emissions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let write = |w: &mut dyn std::io::Write| -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for row in &rows {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    };
    match out {
        Some(dir) => {
            dir.write_with("fixed_price.csv", write)?;
        }
        None => write(&mut std::io::stdout())?,
    }
    let total: f64 = rows.iter().map(|r| r.emissions).sum();
    eprintln!("combined emissions at the optima: {total:.1} t/day");
    Ok(())
}

#[derive(Serialize)]
struct NoPrice {
    per_refinery: Vec<f64>,
    total: f64,
}

pub fn no_price(scenario: &Scenario, out: Option<&OutDir>) -> Result<()> {
    let per_refinery: Vec<f64> = scenario.refineries.iter().map(|r| r.emissions(r.capacity)).collect();
    let total = per_refinery.iter().sum();
    emit_json(out, "no_price.json", &NoPrice { per_refinery, total })
}

#[derive(Serialize)]
struct RlSummary {
    seed: u64,
    variant: RewardVariant,
    episodes: usize,
    evaluation: RlEvaluation,
}

pub fn rl(
    scenario: &Scenario,
    variant: Option<RewardVariant>,
    episodes: Option<usize>,
    seed: u64,
    runs: u64,
    out: &OutDir,
) -> Result<()> {
    let pair = scenario.pair()?;
    let mut cfg = match (&scenario.rl, variant) {
        (Some(cfg), _) => cfg.clone(),
        (None, Some(v)) => RlConfig::new(v, 100_000),
        (None, None) => bail!("the scenario has no `rl` block; pass --variant"),
    };
    if let Some(v) = variant {
        cfg.variant = v;
    }
    if let Some(n) = episodes {
        cfg.episodes = n;
    }
    if runs == 0 {
        bail!("--runs must be at least 1");
    }
    let seeds: Vec<u64> = (0..runs).map(|i| seed.wrapping_add(i)).collect();
    let results = rl_batch(&pair, scenario.permit_cap, scenario.tranche_size, &cfg, &seeds)?;
    let mut summaries = Vec::new();
    for run in &results {
        let tag = if runs == 1 { String::new() } else { format!("_seed{}", run.seed) };
        out.write_with(&format!("curve{tag}.csv"), |w| Ok(write_curve_csv(&run.curve, w)?))?;
        out.write_bytes(
            &format!("policy{tag}.txt"),
            format_policy_matrices(&run.policy, scenario.permit_cap, scenario.tranche_size).as_bytes(),
        )?;
        out.write_json(&format!("policy{tag}.json"), &run.policy)?;
        out.write_with(&format!("sample_ledger{tag}.csv"), |w| Ok(run.sample.write_csv(w)?))?;
        summaries.push(RlSummary {
            seed: run.seed,
            variant: cfg.variant,
            episodes: cfg.episodes,
            evaluation: run.evaluation.clone(),
        });
    }
    out.write_json("summary.json", &summaries)?;
    for s in &summaries {
        eprintln!(
            "seed {}: avg permit price ${:.2}, profits ${:.2}m / ${:.2}m",
            s.seed,
            s.evaluation.avg_permit_price,
            s.evaluation.profits[0] / 1e6,
            s.evaluation.profits[1] / 1e6
        );
    }
    Ok(())
}
