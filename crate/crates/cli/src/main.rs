//! `gmfe` — solve, audit and simulate graphon mean-field games from a TOML
//! experiment config.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmfe::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gmfe", version, about = "Graphon mean-field equilibrium solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Backward recursion over stage fixed points; writes the policy table.
    SolveFinite(Common),
    /// Modified policy iteration on the stationary value; writes the policy table.
    SolveInfinite(Common),
    /// Best-response gap along the equilibrium path plus a full-table audit.
    Verify(Common),
    /// Closed-loop mean-field path from the configured initial state.
    Trajectory(Common),
    /// Finite-population simulation on a sampled graph.
    Nsim(Common),
    /// Policy, one-step map and path data for every figure graphon.
    Figures(Common),
}

#[derive(Args, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; overrides `threads` in the config.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the policy table here.
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    /// Use this policy table instead of solving.
    #[arg(long)]
    pub policy_in: Option<PathBuf>,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    status: &'static str,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

fn report(e: &Error) -> ExitCode {
    let (kind, field, code) = match e {
        Error::Config { field, .. } => ("config", Some(field.as_str()), 2),
        Error::PolicyFormat(_) => ("policy", None, 1),
        Error::Io(_) | Error::Csv(_) => ("io", None, 1),
        _ => ("solver", None, 1),
    };
    let line = ErrorLine {
        status: "error",
        kind,
        field,
        message: e.to_string(),
    };
    eprintln!("{}", serde_json::to_string(&line).expect("error line"));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::SolveFinite(a) => ("solve-finite", a),
        Command::SolveInfinite(a) => ("solve-infinite", a),
        Command::Verify(a) => ("verify", a),
        Command::Trajectory(a) => ("trajectory", a),
        Command::Nsim(a) => ("nsim", a),
        Command::Figures(a) => ("figures", a),
    };
    match commands::run(name, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => report(&e),
    }
}
