//! Command-line front end: scenario loading, solver dispatch, sweeps and CSV output.
//!
//! Every run writes the resolved scenario (SI units, defaults materialised)
//! next to its CSV files, and every CSV row carries the scenario hash and the
//! seed. Delays in CSV files are in milliseconds; column names carry units.

pub mod config;
pub mod output;
pub mod sweep;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{self, Encoding, SearchSpace, DEFAULT_ENUMERATION_CAP};
use crate::delaymodel::{self, BlocklengthPlan, Scenario};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::marl::{self, MarlConfig};
use crate::simulate::{self, SimConfig, SimMode};

pub use config::{load_scenario, parse_scenario};
use output::{ms, Output};
pub use sweep::{Axis, SweepSpec};

/// LTE-like fixed TTI, seconds.
pub const LTE_TTI: f64 = 1e-3;
/// NR-like fixed TTI, seconds.
pub const NR_TTI: f64 = 0.5e-3;

#[derive(Debug, Parser)]
#[command(name = "adablock", version, about = "Over-the-air delay analysis and blocklength optimisation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-device delay breakdown of a plan.
    Analyze(AnalyzeArgs),
    /// Search for a delay-minimising plan.
    Optimize(SolveArgs),
    /// Train the cooperative multi-agent DQN.
    Train(SolveArgs),
    /// Monte Carlo simulation of a plan.
    Simulate(SimulateArgs),
    /// Sweep one scenario axis for several solvers.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario JSON; omitted means the default scenario with no devices.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    /// Fixed 1 ms TTI, even subchannel split.
    Lte,
    /// Fixed 0.5 ms TTI, even subchannel split.
    Nr,
    Exhaustive,
    /// Exact optimum over per-unit tables and a subchannel knapsack.
    Decomposed,
    Random,
    /// Hill climbing started from the NR plan.
    Local,
    Marl,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Lte => "lte",
            Solver::Nr => "nr",
            Solver::Exhaustive => "exhaustive",
            Solver::Decomposed => "decomposed",
            Solver::Random => "random",
            Solver::Local => "local",
            Solver::Marl => "marl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingArg {
    Group,
    Device,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// TTI levels `L`; the grid is `T_max * i / L`.
    #[arg(long, default_value_t = 10)]
    pub levels: usize,
    #[arg(long, value_enum, default_value_t = EncodingArg::Group)]
    pub encoding: EncodingArg,
    /// Random search samples.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Local search iterations.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Exhaustive search enumeration cap.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub cap: f64,
    /// MARL configuration JSON; missing fields take their defaults.
    #[arg(long)]
    pub marl_config: Option<PathBuf>,
    /// Overrides the MARL episode count.
    #[arg(long)]
    pub episodes: Option<usize>,
}

impl Default for SolverArgs {
    fn default() -> Self {
        Self {
            levels: 10,
            encoding: EncodingArg::Group,
            samples: 1000,
            iters: 1000,
            cap: DEFAULT_ENUMERATION_CAP,
            marl_config: None,
            episodes: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Plan JSON (TTIs in seconds); takes precedence over `--solver`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Solver::Lte)]
    pub solver: Solver,
    #[command(flatten)]
    pub solver_args: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = Solver::Decomposed)]
    pub solver: Solver,
    #[command(flatten)]
    pub solver_args: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Model,
    Protocol,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Solver::Lte)]
    pub solver: Solver,
    #[command(flatten)]
    pub solver_args: SolverArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Model)]
    pub mode: ModeArg,
    /// Chain steps or contention rounds, warmup included.
    #[arg(long, default_value_t = 1_000_000)]
    pub steps: u64,
    /// Keep every queue non-empty so all devices always contend.
    #[arg(long)]
    pub force_active: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `axis:start:stop:step` with axis one of bits_per_packet, device_count,
    /// blocklength (symbols) or tti (ms).
    #[arg(long)]
    pub sweep: String,
    /// Solvers compared on the bits_per_packet and device_count axes.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Solver::Lte, Solver::Nr, Solver::Decomposed])]
    pub solver: Vec<Solver>,
    #[command(flatten)]
    pub solver_args: SolverArgs,
}

/// How a command ended when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Infeasible,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Infeasible => 2,
        }
    }
}

/// A plan produced by a solver.
#[derive(Debug, Clone)]
pub struct Solved {
    pub plan: BlocklengthPlan,
    pub evaluations: u64,
    pub training: Option<marl::MarlRun>,
}

pub fn search_space(scenario: &Scenario, args: &SolverArgs) -> Result<SearchSpace> {
    match args.encoding {
        EncodingArg::Group => SearchSpace::per_group(scenario, args.levels),
        EncodingArg::Device => SearchSpace::per_device(scenario, args.levels),
    }
}

pub fn marl_config(args: &SolverArgs) -> Result<MarlConfig> {
    let mut cfg = match &args.marl_config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config("marl_config", format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)?
        }
        None => MarlConfig {
            tti_levels: args.levels,
            ..MarlConfig::default()
        },
    };
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one solver on a scenario.
pub fn solve(scenario: &Scenario, solver: Solver, args: &SolverArgs, seed: u64, exec: Exec) -> Result<Solved> {
    let plain = |s: baselines::Solution| Solved {
        plan: s.plan,
        evaluations: s.evaluations,
        training: None,
    };
    let fixed = |tti: f64| -> Result<Solved> {
        Ok(Solved {
            plan: baselines::fixed_tti_plan(scenario, tti)?,
            evaluations: 1,
            training: None,
        })
    };
    match solver {
        Solver::Lte => fixed(LTE_TTI),
        Solver::Nr => fixed(NR_TTI),
        Solver::Exhaustive => Ok(plain(baselines::exhaustive_search_with(
            scenario,
            &search_space(scenario, args)?,
            args.cap,
            exec,
        )?)),
        Solver::Decomposed => Ok(plain(baselines::decomposed_search(scenario, &search_space(scenario, args)?, exec)?)),
        Solver::Random => Ok(plain(baselines::random_search_with(
            scenario,
            &search_space(scenario, args)?,
            args.samples,
            seed,
            exec,
        )?)),
        Solver::Local => {
            let space = search_space(scenario, args)?;
            let init = local_start(scenario, &space)?;
            Ok(plain(baselines::local_search_with(scenario, &space, &init, args.iters, seed, exec)?))
        }
        Solver::Marl => {
            let run = marl::train(scenario, &marl_config(args)?, seed)?;
            Ok(Solved {
                plan: run.greedy.plan.clone(),
                evaluations: run.curve.len() as u64,
                training: Some(run),
            })
        }
    }
}

/// The NR plan snapped onto the search grid: shortest level, even split.
fn local_start(scenario: &Scenario, space: &SearchSpace) -> Result<BlocklengthPlan> {
    let units = space.units(scenario);
    let shares = baselines::split_even(scenario.subchannel_count, units.len());
    let choices = units
        .iter()
        .zip(shares)
        .map(|(u, share)| {
            let per_member = match space.encoding {
                Encoding::PerGroup => share,
                Encoding::PerDevice => share / u.members.len().max(1) as u32,
            };
            let subch = space
                .subch_options
                .iter()
                .rposition(|&o| o <= per_member.max(space.subch_options[0]))
                .unwrap_or(0);
            baselines::UnitChoice {
                ttis: vec![0; u.queue_len],
                subch,
            }
        })
        .collect::<Vec<_>>();
    space.decode(scenario, &units, &choices)
}

fn resolve_scenario(common: &CommonArgs) -> Result<Scenario> {
    match &common.scenario {
        Some(p) => load_scenario(p),
        None => Ok(Scenario::default()),
    }
}

pub fn load_plan(path: &Path) -> Result<BlocklengthPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config("plan", format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn plan_for(scenario: &Scenario, plan: &Option<PathBuf>, solver: Solver, args: &SolverArgs, seed: u64) -> Result<BlocklengthPlan> {
    match plan {
        Some(p) => {
            let plan = load_plan(p)?;
            plan.validate(scenario)?;
            Ok(plan)
        }
        None => Ok(solve(scenario, solver, args, seed, Exec::default())?.plan),
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Analyze(a) => analyze(&a),
        Command::Optimize(a) => optimize(&a),
        Command::Train(a) => optimize(&SolveArgs {
            solver: Solver::Marl,
            ..a
        }),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
    }
}

/// Parses arguments, runs the command and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(o) => o.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn analyze(a: &AnalyzeArgs) -> Result<Outcome> {
    let scenario = resolve_scenario(&a.common)?;
    let out = Output::create(&a.common.out, &scenario, a.common.seed)?;
    let plan = plan_for(&scenario, &a.plan, a.solver, &a.solver_args, a.common.seed)?;
    out.write_json("plan.json", &plan)?;
    let feasible = output::write_delay_report(&out, "delays.csv", &scenario, &plan)?;
    Ok(if feasible { Outcome::Success } else { Outcome::Infeasible })
}

fn optimize(a: &SolveArgs) -> Result<Outcome> {
    let scenario = resolve_scenario(&a.common)?;
    let out = Output::create(&a.common.out, &scenario, a.common.seed)?;
    let seed = a.common.seed;
    let mut w = out.csv("result.csv", &["solver", "status", "objective_ms", "feasible", "evaluations", "message"])?;
    let solved = match solve(&scenario, a.solver, &a.solver_args, seed, Exec::default()) {
        Ok(s) => s,
        Err(e) => {
            let status = match e {
                Error::NoFeasiblePlan => "infeasible",
                Error::EnumerationCap { .. } => "enumeration_cap",
                _ => return Err(e),
            };
            w.row(&[a.solver.name().into(), status.into(), String::new(), "false".into(), "0".into(), e.to_string()])?;
            w.finish()?;
            return match e {
                Error::NoFeasiblePlan => Ok(Outcome::Infeasible),
                _ => Err(e),
            };
        }
    };
    out.write_json("plan.json", &solved.plan)?;
    let report = delaymodel::evaluate(&scenario, &solved.plan)?;
    let feasible = report.feasibility.all_ok();
    w.row(&[
        a.solver.name().into(),
        if feasible { "ok" } else { "infeasible" }.into(),
        ms(report.average),
        feasible.to_string(),
        solved.evaluations.to_string(),
        String::new(),
    ])?;
    w.finish()?;
    if let Some(run) = &solved.training {
        output::write_training(&out, run, &marl_config(&a.solver_args)?)?;
    }
    Ok(if feasible { Outcome::Success } else { Outcome::Infeasible })
}

fn simulate_cmd(a: &SimulateArgs) -> Result<Outcome> {
    let scenario = resolve_scenario(&a.common)?;
    let out = Output::create(&a.common.out, &scenario, a.common.seed)?;
    let plan = plan_for(&scenario, &a.plan, a.solver, &a.solver_args, a.common.seed)?;
    out.write_json("plan.json", &plan)?;
    let mode = match a.mode {
        ModeArg::Model => SimMode::Model,
        ModeArg::Protocol => SimMode::Protocol,
    };
    let mut cfg = SimConfig::new(mode, a.steps, a.common.seed);
    cfg.force_active = a.force_active;
    let stats = simulate::run(&scenario, &plan, &cfg)?;
    output::write_simulation(&out, &scenario, &plan, &stats)?;
    Ok(Outcome::Success)
}

fn sweep_cmd(a: &SweepArgs) -> Result<Outcome> {
    let scenario = resolve_scenario(&a.common)?;
    let spec: SweepSpec = a.sweep.parse()?;
    let out = Output::create(&a.common.out, &scenario, a.common.seed)?;
    let rows = sweep::run_sweep(&scenario, &spec, &a.solver, &a.solver_args, a.common.seed, Exec::default())?;
    sweep::write_sweep(&out, &spec, &a.solver, &rows)?;
    Ok(Outcome::Success)
}
