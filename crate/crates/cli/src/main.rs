//! `agentsim`: serve the world to clients, run and record scenarios, replay
//! and export logs, and score presence questionnaires.
//!
//! Exit status: 0 success, 2 configuration error, 3 runtime fault,
//! 4 scenario assertion failed.

mod commands;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use agentsim_core::Execution;
use agentsim_net::transport::{DEFAULT_TCP_PORT, DEFAULT_WS_PORT};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use tracing::Level;

#[derive(Parser)]
#[command(name = "agentsim", version, about = "Headless pedestrian-in-the-loop driving simulator")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Run sensor, traffic and export stages on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a world over TCP and web sockets until interrupted.
    Serve(ServeArgs),
    /// Run a scenario headless in lockstep and record every tick.
    Run(RunArgs),
    /// Play a recorded log back, paced by its tick length.
    Replay(ReplayArgs),
    /// Render sensor datasets from a recorded log.
    Export(ExportArgs),
    /// Score a presence questionnaire CSV.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lockstep,
    Realtime,
}

#[derive(Args)]
struct ServeArgs {
    /// Road map: a JSON scene, or OpenDRIVE when the extension is .xodr.
    #[arg(long, conflicts_with = "scenario")]
    map: Option<PathBuf>,
    /// Scenario whose map and actors populate the world. The bundled
    /// crosswalk demo is used when neither --map nor --scenario is given.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Realtime)]
    mode: Mode,
    #[arg(long, env = "AGENTSIM_PORT", default_value_t = DEFAULT_TCP_PORT)]
    port: u16,
    #[arg(long, default_value_t = DEFAULT_WS_PORT)]
    ws_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory of web assets served on the web-socket port.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Where uploaded questionnaire responses are stored.
    #[arg(long)]
    responses: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Record log to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the run summary as JSON.
    #[arg(long)]
    summary_json: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Playback rate relative to real time; 0 plays as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Emit only this frame.
    #[arg(long)]
    frame: Option<u64>,
    /// Print each snapshot as one JSON line instead of a summary line.
    #[arg(long)]
    json: bool,
    /// Re-record the replayed snapshots into a new log.
    #[arg(long, conflicts_with = "frame")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    log: PathBuf,
    /// Sensor suite JSON (ego actor, lidars, cameras).
    #[arg(long)]
    sensors: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    responses: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .init();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let outcome = match cli.command {
        Command::Serve(a) => commands::serve(a, exec),
        Command::Run(a) => commands::run(a, exec),
        Command::Replay(a) => commands::replay(a),
        Command::Export(a) => commands::export(a, exec),
        Command::Score(a) => commands::score(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code())
        }
    }
}
