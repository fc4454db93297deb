mod captrade;
mod output;
mod scenario;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use socialcost::agents::RewardVariant;
use socialcost::captrade::Scenario;
use socialcost::envcore::{run_protocol, total_social_welfare, JointAction};
use socialcost::markovvcg::{check_markov_ic_ir, markov_vcg, EpisodicMdp, MarkovIcReport, MarkovVcgResult};
use socialcost::oracle::{alternative_q_tables, rational_tables};

use output::{emit_json, OutDir};
use scenario::{load_json, AgentSpec, EnvSpec, MechanismSpec, ProtocolScenario};
use verify::{Suite, VerifyOptions};

/// Mechanism-controlled multi-agent environments: protocol runs, exact
/// oracle checks and the refinery permit auction.
#[derive(Parser)]
#[command(name = "socialcost", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mechanism protocol and write the trace and a summary.
    Simulate(SimulateArgs),
    /// Run a property suite; exits 1 on any violation.
    Verify(VerifyArgs),
    /// Cap-and-trade experiments.
    Captrade {
        #[command(subcommand)]
        command: CaptradeCommand,
    },
    /// Exact oracle tables.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// VCG on a tabular episodic MDP; exits 1 if the IC/IR check fails.
    MarkovVcg(MarkovArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Protocol scenario file (JSON).
    #[arg(long, conflicts_with = "env")]
    scenario: Option<PathBuf>,
    /// Reference environment with rational oracle agents and Clark VCG.
    #[arg(long)]
    env: Option<String>,
    /// Number of steps (with --env).
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory; the JSON report goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Misreports sampled per agent and node by the IC suite.
    #[arg(long, default_value_t = 200)]
    misreports: usize,
    /// Random small environments added to the factory.
    #[arg(long, default_value_t = 50)]
    random_envs: u64,
    /// Check the self-rational tables instead of the rational ones.
    #[arg(long)]
    self_rational: bool,
    /// Add the broken-chronology fixture to the chronological suite.
    #[arg(long)]
    broken_env: bool,
    /// Restrict the suites to one reference environment.
    #[arg(long)]
    env: Option<String>,
}

#[derive(Args)]
struct CaptradeArgs {
    /// Cap-and-trade scenario file (JSON); defaults to the m = 1, 2 pair.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CaptradeCommand {
    /// Sequential second-price auction with marginal-value bids.
    Greedy {
        #[command(flatten)]
        common: CaptradeArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two Q-learning bidders; writes learning curves and policy matrices.
    Rl {
        #[command(flatten)]
        common: CaptradeArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_parser = clap::value_parser!(RewardVariant))]
        variant: Option<RewardVariant>,
        /// Independent runs with seeds seed, seed + 1, ...
        #[arg(long, default_value_t = 1)]
        runs: u64,
    },
    /// Profit-maximising production at a fixed emissions price.
    FixedPrice {
        #[command(flatten)]
        common: CaptradeArgs,
        /// Dollars per ton; defaults to the scenario's price.
        #[arg(long)]
        price: Option<f64>,
    },
    /// Emissions with every refinery at capacity.
    NoPrice {
        #[command(flatten)]
        common: CaptradeArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableKind {
    Rational,
    Alternative,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Write q, c and v for every agent, history and action as CSV.
    Export {
        #[arg(long, default_value = "factory")]
        env: String,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum, default_value = "rational")]
        tables: TableKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MarkovArgs {
    /// MDP description (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Reward misreports per agent for the IC/IR check; 0 skips it.
    #[arg(long, default_value_t = 0)]
    misreports: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Status {
    Ok,
    Violations,
}

fn out_dir(path: Option<&PathBuf>) -> Result<Option<OutDir>> {
    path.map(|p| OutDir::create(p)).transpose()
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.with_context(|| format!("--seed is required for {what}"))
}

#[derive(Serialize)]
struct SimulateSummary {
    env: String,
    mechanism: String,
    seed: u64,
    horizon: usize,
    chosen_actions: Vec<JointAction>,
    cumulative_utilities: Vec<f64>,
    total_welfare: f64,
}

fn simulate(args: SimulateArgs) -> Result<Status> {
    let scenario = match (&args.scenario, &args.env) {
        (Some(path), _) => load_json::<ProtocolScenario>(path)?,
        (None, Some(name)) => {
            let env = EnvSpec::named(name)?;
            let horizon = args.horizon.unwrap_or(match env {
                EnvSpec::Random { depth, .. } => depth,
                _ => 2,
            });
            ProtocolScenario {
                env,
                horizon,
                mechanism: MechanismSpec::Clark,
                agents: AgentSpec::RationalOracle,
                seed: None,
            }
        }
        (None, None) => bail!("pass --scenario or --env"),
    };
    let seed = require_seed(args.seed.or(scenario.seed), "simulate")?;
    if scenario.horizon == 0 {
        bail!("horizon must be at least 1");
    }
    let env = scenario.env.build()?;
    let mech = scenario.mechanism.build()?;
    let mut agents = scenario.agents.build(env.as_ref(), scenario.horizon)?;
    let trace = run_protocol(env.as_ref(), mech.as_ref(), &mut agents, scenario.horizon, seed)?;
    let summary = SimulateSummary {
        env: trace.env_id.clone(),
        mechanism: trace.mechanism_id.clone(),
        seed,
        horizon: scenario.horizon,
        chosen_actions: trace.chosen_actions(),
        cumulative_utilities: trace.cumulative_utilities(),
        total_welfare: total_social_welfare(&trace),
    };
    let out = OutDir::create(&args.out)?;
    out.write_with("trace.jsonl", |w| Ok(trace.write_jsonl(w)?))?;
    out.write_json("summary.json", &summary)?;
    eprintln!(
        "CU {:?}, welfare {}",
        summary.cumulative_utilities, summary.total_welfare
    );
    Ok(Status::Ok)
}

fn run_verify(args: VerifyArgs) -> Result<Status> {
    if args.suite.is_stochastic() {
        require_seed(args.seed, "the ic, gum and all suites")?;
    }
    let env = args.env.as_deref().map(EnvSpec::named).transpose()?;
    let opts = VerifyOptions {
        seed: args.seed,
        misreports: args.misreports,
        random_envs: args.random_envs,
        self_rational: args.self_rational,
        broken_env: args.broken_env,
        env,
    };
    let report = verify::run(args.suite, &opts)?;
    emit_json(out_dir(args.out.as_ref())?.as_ref(), "report.json", &report)?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("violation: {} on {}", format!("{:?}", c.suite).to_lowercase(), c.target);
    }
    Ok(if report.passed { Status::Ok } else { Status::Violations })
}

fn load_captrade(args: &CaptradeArgs) -> Result<Scenario> {
    let scenario = match &args.scenario {
        Some(path) => load_json::<Scenario>(path)?,
        None => Scenario::standard(),
    };
    scenario.validate()?;
    Ok(scenario)
}

fn run_captrade(cmd: CaptradeCommand) -> Result<Status> {
    match cmd {
        CaptradeCommand::Greedy { common, seed } => {
            let scenario = load_captrade(&common)?;
            let seed = require_seed(seed.or(scenario.seed), "captrade greedy")?;
            captrade::greedy(&scenario, seed, out_dir(common.out.as_ref())?.as_ref())?;
        }
        CaptradeCommand::Rl {
            common,
            seed,
            episodes,
            variant,
            runs,
        } => {
            let scenario = load_captrade(&common)?;
            let seed = require_seed(seed.or(scenario.seed), "captrade rl")?;
            let out = out_dir(common.out.as_ref())?.context("--out is required for captrade rl")?;
            if episodes == Some(0) {
                bail!("--episodes must be at least 1");
            }
            captrade::rl(&scenario, variant, episodes, seed, runs, &out)?;
        }
        CaptradeCommand::FixedPrice { common, price } => {
            let scenario = load_captrade(&common)?;
            captrade::fixed_price(&scenario, price, out_dir(common.out.as_ref())?.as_ref())?;
        }
        CaptradeCommand::NoPrice { common } => {
            let scenario = load_captrade(&common)?;
            captrade::no_price(&scenario, out_dir(common.out.as_ref())?.as_ref())?;
        }
    }
    Ok(Status::Ok)
}

fn run_oracle(cmd: OracleCommand) -> Result<Status> {
    let OracleCommand::Export {
        env,
        horizon,
        tables,
        out,
    } = cmd;
    let spec = EnvSpec::named(&env)?;
    let horizon = horizon.unwrap_or(match spec {
        EnvSpec::Random { depth, .. } => depth,
        _ => 2,
    });
    if horizon == 0 {
        bail!("horizon must be at least 1");
    }
    let env = spec.build()?;
    let horizons = vec![horizon; env.num_agents()];
    let t = match tables {
        TableKind::Rational => rational_tables(env.as_ref(), &horizons, horizon)?,
        TableKind::Alternative => alternative_q_tables(env.as_ref(), &horizons, horizon)?,
    };
    match out_dir(out.as_ref())? {
        Some(dir) => {
            let path = dir.write_with("oracle.csv", |w| Ok(t.write_csv(w)?))?;
            eprintln!("wrote {}", path.display());
        }
        None => t.write_csv(std::io::stdout())?,
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct MarkovOutput {
    result: MarkovVcgResult,
    utilities: Vec<f64>,
    ic_ir: Option<MarkovIcReport>,
}

fn run_markov(args: MarkovArgs) -> Result<Status> {
    let mdp: EpisodicMdp = load_json(&args.scenario)?;
    let result = markov_vcg(&mdp)?;
    let ic_ir = if args.misreports > 0 {
        let seed = require_seed(args.seed, "markov-vcg with --misreports")?;
        Some(check_markov_ic_ir(&mdp, args.misreports, seed)?)
    } else {
        None
    };
    let failed = ic_ir.as_ref().is_some_and(|r| !r.is_empty());
    let output = MarkovOutput {
        utilities: result.utilities(),
        result,
        ic_ir,
    };
    emit_json(out_dir(args.out.as_ref())?.as_ref(), "markov_vcg.json", &output)?;
    Ok(if failed { Status::Violations } else { Status::Ok })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Verify(args) => run_verify(args),
        Command::Captrade { command } => run_captrade(command),
        Command::Oracle { command } => run_oracle(command),
        Command::MarkovVcg(args) => run_markov(args),
    };
    match outcome {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violations) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
