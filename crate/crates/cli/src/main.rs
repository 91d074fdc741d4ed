use std::path::PathBuf;
use std::process::ExitCode;

use agrisim::runner::{exit_code, resolve_out, run, RunOptions, Subcommand};
use agrisim::scenario::Scenario;
use agrisim::Error;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Gen,
    Rows,
    Localize,
    Register,
    Plan,
    Mission,
    Treat,
    Report,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Gen => Subcommand::Gen,
            Command::Rows => Subcommand::Rows,
            Command::Localize => Subcommand::Localize,
            Command::Register => Subcommand::Register,
            Command::Plan => Subcommand::Plan,
            Command::Mission => Subcommand::Mission,
            Command::Treat => Subcommand::Treat,
            Command::Report => Subcommand::Report,
        }
    }
}

/// Runs one stage of an agrisim scenario and writes its artifacts.
#[derive(Debug, Parser)]
#[command(name = "agrisim", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (JSON). Optional for `report`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output root; defaults to $AGRISIM_OUT, then the scenario's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace a named seed, e.g. `--seed-override mission=7`. Repeatable.
    #[arg(long = "seed-override", value_name = "NAME=U64")]
    seed_override: Vec<String>,
    /// Monte Carlo repetitions for localize, register and plan.
    #[arg(long)]
    trials: Option<usize>,
    /// rows: directory holding r/g/b PGM layers to read instead of rendering.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// register: aerial cloud (PLY); needs --ugv.
    #[arg(long, requires = "ugv")]
    uav: Option<PathBuf>,
    /// register: ground cloud (PLY); needs --uav.
    #[arg(long, requires = "uav")]
    ugv: Option<PathBuf>,
}

fn load(cli: &Cli) -> agrisim::Result<Scenario> {
    let mut sc = match (&cli.scenario, cli.command) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Command::Report) => Scenario::default(),
        (None, _) => return Err(Error::Config("--scenario <path> is required".into())),
    };
    for o in &cli.seed_override {
        sc.seeds.apply_override(o)?;
    }
    Ok(sc)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let sc = match load(&cli) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("agrisim: {e}");
            return ExitCode::from(if e.is_config() { 2 } else { 1 });
        }
    };
    let env = std::env::var("AGRISIM_OUT").ok();
    let out = resolve_out(cli.out.as_deref(), env.as_deref(), &sc);
    let opts = RunOptions {
        trials: cli.trials,
        grid: cli.grid.clone(),
        clouds: cli.uav.clone().zip(cli.ugv.clone()),
    };
    let cmd: Subcommand = cli.command.into();
    let result = run(cmd, &sc, &out, &opts);
    match &result {
        Ok(o) => {
            println!("{}: wrote {} files to {}", cmd.as_str(), o.manifest.files.len() + 1, o.dir.display());
            for f in &o.failures {
                eprintln!("agrisim: {f}");
            }
        }
        Err(e) => eprintln!("agrisim {}: {e}", cmd.as_str()),
    }
    ExitCode::from(exit_code(&result) as u8)
}
