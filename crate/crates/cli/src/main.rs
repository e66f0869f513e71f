//! `impulseflow` command-line front end.
//!
//! Exit codes: 0 pass, 1 acceptance failure, 2 configuration error,
//! 3 numeric failure. Machine-readable output goes to stdout, summaries and
//! warnings to stderr.

mod checks;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use impulseflow::export::{result_record, sample_times, summary, trajectory_csv};
use impulseflow::reproduce::{reproduce, ReproTable, CASES};
use impulseflow::{Simulation, SolveOverrides};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
}

impl From<impulseflow::Error> for CliError {
    fn from(e: impulseflow::Error) -> Self {
        if e.is_configuration() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "impulseflow",
    version,
    about = "Limit solutions of impulsive control systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a scenario and write its trajectory and result record.
    Simulate(SimulateArgs),
    /// Run a hypothesis audit or validation study.
    Check {
        #[arg(value_enum)]
        kind: checks::CheckKind,
        #[command(flatten)]
        args: checks::CheckArgs,
    },
    /// Run a pinned reproduction case and print its table.
    Reproduce(ReproduceArgs),
    /// List the built-in scenarios and their control pairs.
    List,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Built-in scenario name.
    #[arg(long)]
    pub scenario: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Registered control pair of the scenario.
    #[arg(long)]
    pub controls: Option<String>,
    /// Output directory for report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Integrator and flow tolerance (audit tolerance for `check commute`
    /// and `check pushforward`).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Radius around accumulation points left unresolved.
    #[arg(long = "eps-accum")]
    pub eps_accum: Option<f64>,
    /// Format of the machine-readable output on stdout.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl CommonArgs {
    pub fn resolve(&self, tol_is_solver: bool) -> Result<config::Resolved, CliError> {
        let cfg = self.config.as_deref().map(config::load).transpose()?;
        let overrides = SolveOverrides {
            tol: if tol_is_solver { self.tol } else { None },
            eps_accumulation: self.eps_accum,
        };
        config::resolve(
            self.scenario.as_deref(),
            cfg.as_ref(),
            self.controls.as_deref(),
            &overrides,
        )
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of uniform sample intervals in the trajectory table.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Add rows at the adjacent floats around every declared breakpoint.
    #[arg(long)]
    one_sided: bool,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// One of example25, nullset-jump, noncommutative-loop, trivial.
    case: String,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "eps-accum")]
    eps_accum: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(passed: bool) -> Self {
        if passed {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn simulate(args: &SimulateArgs) -> Result<Verdict, CliError> {
    let run = args.common.resolve(true)?;
    let sim = Simulation::run(&run.scenario, &run.controls, &run.cfg)?;
    let record = result_record(&run.scenario, &sim, &run.cfg)?;
    let times = sample_times(
        sim.interval(),
        args.samples,
        &sim.breakpoints(),
        args.one_sided,
    );
    let csv = trajectory_csv(&sim, &times)?;
    let json = to_json(&record);
    if let Some(dir) = &args.common.out {
        write_file(dir, "traj.csv", &csv)?;
        write_file(dir, "result.json", &json)?;
    }
    match (args.common.format, &args.common.out) {
        (Some(Format::Csv), _) => print!("{csv}"),
        (Some(Format::Json), _) | (None, None) => print!("{json}"),
        (None, Some(_)) => {}
    }
    eprint!("{}", summary(&record));
    Ok(Verdict::from_bool(record.passed))
}

fn reproduce_cmd(args: &ReproduceArgs) -> Result<Verdict, CliError> {
    let overrides = SolveOverrides {
        tol: args.tol,
        eps_accumulation: args.eps_accum,
    };
    let table: ReproTable = reproduce(&args.case, &overrides)?;
    let csv = repro_csv(&table);
    let json = to_json(&table);
    if let Some(dir) = &args.out {
        write_file(dir, "reproduce.csv", &csv)?;
        write_file(dir, "reproduce.json", &json)?;
    }
    match args.format {
        Some(Format::Csv) => print!("{csv}"),
        Some(Format::Json) => print!("{json}"),
        None => println!("{table}"),
    }
    Ok(Verdict::from_bool(table.passed))
}

fn repro_csv(table: &ReproTable) -> String {
    let mut s = String::from("quantity,expected,got,tol,verdict\n");
    for r in &table.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.quantity.replace(',', ";"),
            impulseflow::export::fmt_f64(r.expected),
            impulseflow::export::fmt_f64(r.got),
            impulseflow::export::fmt_f64(r.tol),
            if r.passed { "pass" } else { "fail" }
        ));
    }
    s
}

fn list() -> Result<Verdict, CliError> {
    for sc in impulseflow::scenarios::all() {
        let controls: Vec<&str> = sc.controls.iter().map(|c| c.name.as_str()).collect();
        println!(
            "{:<20} {:<28} {}",
            sc.name,
            controls.join(","),
            sc.description
        );
    }
    println!("reproduce cases: {}", CASES.join(", "));
    Ok(Verdict::Pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Check { kind, args } => checks::run(*kind, args),
        Command::Reproduce(args) => reproduce_cmd(args),
        Command::List => list(),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            let (CliError::Config(msg) | CliError::Numeric(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
