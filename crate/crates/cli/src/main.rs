//! `innervsense`: simulate, emulate, record, serve, analyze and report.
//!
//! JSON summaries go to stdout, diagnostics to stderr. Exit status is 0 on
//! success, 1 on a runtime error and 2 on a usage error.

mod analyze;
mod live;
mod report;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};
use innervsense_core::session::Session;
use innervsense_core::sim::{run_scenario, Scenario, ScenarioName};
use innervsense_core::stats::PosthocMethod;
use innervsense_core::telemetry::Pacing;
use serde_json::{json, Value};

const SCENARIOS: &str =
    "ramp_hold_unload, step_hold_relax, dynamometer_trial, bicep_full_cycles, bicep_stepwise, squats";

#[derive(Debug, Parser)]
#[command(
    name = "innervsense",
    version,
    about = "Fluidic pressure pad toolkit: simulation, device emulation, live ingest and analysis",
    after_help = "Log verbosity is read from INNERVSENSE_LOG (error, warn, info, debug, trace; default warn)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario through the pad model and write a session directory.
    Simulate(SimulateArgs),
    /// Stream a scenario (or stored session) as device frames to TCP clients.
    DeviceEmu(DeviceEmuArgs),
    /// Record a device stream into a new session directory.
    Record(RecordArgs),
    /// Host the live dashboard endpoints for a device or a stored session.
    Serve(ServeArgs),
    /// Run one analysis on a session and store the result under derived/.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run every applicable analysis and write report.md and report.json.
    Report(ReportArgs),
}

/// Scenario selection shared by `simulate` and `device-emu`.
#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario name: ramp_hold_unload, step_hold_relax, dynamometer_trial,
    /// bicep_full_cycles, bicep_stepwise or squats.
    #[arg(long, value_name = "NAME")]
    scenario: Option<ScenarioName>,
    /// TOML scenario file (keys: scenario, seed, [params], [pad]); unset keys
    /// take defaults. Must agree with --scenario when both are given.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Noise seed; overrides the config file. Defaults to 0.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Measurement noise SD in Pa; overrides the config file.
    #[arg(long, value_name = "PA")]
    noise_sigma: Option<f64>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<Scenario> {
        let mut sc = match (&self.config, self.scenario) {
            (Some(path), name) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let sc = Scenario::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
                if let Some(name) = name {
                    if name != sc.name() {
                        bail!("--scenario {name} disagrees with {} which describes {}", path.display(), sc.name());
                    }
                }
                sc
            }
            (None, Some(name)) => Scenario::new(name, 0),
            (None, None) => bail!("one of --scenario or --config is required (scenarios: {SCENARIOS})"),
        };
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(sigma) = self.noise_sigma {
            sc.pad.noise_sigma = sigma;
        }
        Ok(sc)
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").args(["scenario", "config"]).required(true).multiple(true)))]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output session directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Replace an existing session directory.
    #[arg(long)]
    overwrite: bool,
    /// Device id stamped on the frame log.
    #[arg(long, default_value_t = 1)]
    device_id: u16,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").args(["scenario", "config", "session"]).required(true).multiple(true)))]
struct DeviceEmuArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Replay this stored session instead of simulating.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["scenario", "config"])]
    session: Option<PathBuf>,
    /// Address to accept clients on (port 0 picks a free port; the bound
    /// address is printed on stderr).
    #[arg(long, value_name = "ADDR")]
    listen: SocketAddr,
    /// realtime (50 Hz wall-clock spacing) or max (as fast as possible).
    #[arg(long, default_value_t = Pacing::Realtime)]
    pacing: Pacing,
    /// Number of clients to serve, one after another; 0 serves forever.
    #[arg(long, default_value_t = 1)]
    connections: u32,
    #[arg(long, default_value_t = 1)]
    device_id: u16,
}

#[derive(Debug, Args)]
struct RecordArgs {
    /// Device address to dial.
    #[arg(long, value_name = "ADDR")]
    connect: String,
    /// Output session directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
    /// Seconds to keep retrying the connection.
    #[arg(long, default_value_t = 10.0, value_name = "S")]
    connect_timeout: f64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// `host:port` to dial a device, `listen:host:port` to accept devices,
    /// or a session directory to replay.
    #[arg(long, value_name = "ADDR|DIR")]
    source: String,
    /// Dashboard HTTP/WebSocket port.
    #[arg(long, value_name = "PORT")]
    ui_port: u16,
    /// Interface for the dashboard listener.
    #[arg(long, default_value = "127.0.0.1", value_name = "IP")]
    ui_host: std::net::IpAddr,
    /// Directory of dashboard assets served at `/`.
    #[arg(long, value_name = "DIR")]
    ui_dir: Option<PathBuf>,
    /// Also record the stream and annotations into this new session.
    #[arg(long, value_name = "DIR")]
    record: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
    /// Replay pacing for a session directory source.
    #[arg(long, default_value_t = Pacing::Realtime)]
    pacing: Pacing,
    /// Exit once the source ends instead of waiting for Ctrl-C.
    #[arg(long)]
    exit_on_end: bool,
}

#[derive(Debug, Args)]
struct SessionArg {
    /// Session directory.
    #[arg(long, value_name = "DIR")]
    session: PathBuf,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Linear fit of pad pressure against the reference force.
    Calibrate(SessionArg),
    /// Exponential relaxation fit over the first hold.
    Relax(SessionArg),
    /// Rest-offset, low-pass filtered torque-pressure regression.
    Condition {
        #[command(flatten)]
        s: SessionArg,
        /// Rest window start, seconds into the session.
        #[arg(long, default_value_t = innervsense_core::analysis::DEFAULT_REST_WINDOW.0)]
        rest_start: f64,
        /// Rest window end, seconds.
        #[arg(long, default_value_t = innervsense_core::analysis::DEFAULT_REST_WINDOW.1)]
        rest_end: f64,
        /// Low-pass cutoff, Hz.
        #[arg(long, default_value_t = innervsense_core::analysis::DEFAULT_CUTOFF_HZ)]
        cutoff: f64,
    },
    /// Segment, normalize and ensemble-average cycles per mass.
    Cycles {
        #[command(flatten)]
        s: SessionArg,
        /// Points per normalized cycle.
        #[arg(long, default_value_t = innervsense_core::analysis::DEFAULT_N_POINTS)]
        n_points: usize,
    },
    /// Minimum-CoV steady value in every pause (or cycle).
    Steady {
        #[command(flatten)]
        s: SessionArg,
        /// Window length, seconds.
        #[arg(long, default_value_t = innervsense_core::analysis::DEFAULT_STEADY_WINDOW_S)]
        window: f64,
    },
    /// Two-way ANOVA with post-hoc comparisons.
    Anova {
        /// CSV with header `<factor_a>,<factor_b>,rep,<value>`.
        #[arg(long, value_name = "CSV", required_unless_present = "session", conflicts_with = "session")]
        table: Option<PathBuf>,
        /// Build the angle x mass table from a session's steady values.
        #[arg(long, value_name = "DIR")]
        session: Option<PathBuf>,
        /// Steady window for --session, seconds.
        #[arg(long, default_value_t = innervsense_core::analysis::DEFAULT_STEADY_WINDOW_S)]
        window: f64,
        /// fisher_lsd or tukey_hsd.
        #[arg(long, default_value = "fisher_lsd")]
        method: PosthocMethod,
        #[arg(long, default_value_t = innervsense_core::analysis::DEFAULT_ALPHA)]
        alpha: f64,
        /// json, or table for a fixed-width ANOVA table.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    s: SessionArg,
}

fn simulate(a: &SimulateArgs) -> Result<Value> {
    let sc = a.scenario.resolve()?;
    let data = run_scenario(&sc, &sc.pad)?;
    let session = Session::from_simulation(&data, a.device_id)?;
    session.write(&a.out, a.overwrite).with_context(|| format!("writing session {}", a.out.display()))?;
    log::info!("wrote {} samples to {}", data.pressure.len(), a.out.display());
    Ok(json!({
        "out": a.out,
        "id": session.manifest.id,
        "scenario": sc.name(),
        "seed": sc.seed,
        "samples": data.pressure.len(),
        "duration_s": data.pressure.duration_s(),
        "events": data.events.len(),
        "truth": session.manifest.truth,
    }))
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
pub(crate) fn emit_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json(v: &Value) -> Result<()> {
    emit_stdout(&(serde_json::to_string_pretty(v)? + "\n"))
}

pub(crate) fn read_session(dir: &Path) -> Result<Session> {
    let (s, _) = Session::read(dir).with_context(|| format!("reading session {}", dir.display()))?;
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => print_json(&simulate(&a)?),
        Command::DeviceEmu(a) => print_json(&live::device_emu(&a)?),
        Command::Record(a) => print_json(&live::record(&a)?),
        Command::Serve(a) => print_json(&live::serve(&a)?),
        Command::Analyze(c) => analyze::run(c),
        Command::Report(a) => print_json(&report::run(&a.s.session)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INNERVSENSE_LOG", "warn")).init();
    // clap exits 0 for --help/--version and 2 for usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
