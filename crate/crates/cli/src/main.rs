//! `swarmsim` command line: headless runs, replays, live serving and scoring.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use swarmsim::engine::{
    gateway_serve, replay, replay_serve, score_mission, EventLog, Fault, MissionReport, ServeOptions, SimConfig, Simulation,
};
use swarmsim::scenario::{parse_scenario, ScenarioSpec};

#[derive(Parser)]
#[command(name = "swarmsim", version, about = "Deterministic multi-layer UAS swarm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct RunOpts {
    /// Overrides the scenario's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the network's base loss probability.
    #[arg(long = "loss-base", allow_negative_numbers = true)]
    loss_base: Option<f64>,
    /// Fault injection, `KIND:DRONE[@TIME][+DURATION]`; repeatable.
    #[arg(long = "fault")]
    faults: Vec<String>,
    /// Writes the event log here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Writes the JSON mission report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs a scenario headless, as fast as possible.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Re-emits telemetry from a log without re-simulating.
    Replay {
        evlog: PathBuf,
        /// Playback speed; 0 is unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Serves the replay over WebSocket instead of printing frames.
        #[arg(long)]
        serve: Option<u16>,
    },
    /// Runs a scenario behind the live gateway.
    Serve {
        scenario: PathBuf,
        #[arg(long)]
        port: u16,
        /// Sim seconds per wall second; 0 is unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Waits for a Resume command before starting.
        #[arg(long)]
        paused: bool,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Scores a complete event log.
    Report { evlog: PathBuf },
}

fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_log(path: &Path) -> Result<EventLog> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EventLog::parse(&text).with_context(|| format!("reading event log {}", path.display()))
}

fn config(path: &Path, opts: &RunOpts) -> Result<SimConfig> {
    let mut spec = load_scenario(path)?;
    if let Some(lb) = opts.loss_base {
        if !(0.0..1.0).contains(&lb) {
            bail!("--loss-base must be within [0, 1)");
        }
        spec.network_params.loss_base = lb;
    }
    let faults = opts.faults.iter().map(|f| f.parse::<Fault>()).collect::<Result<Vec<_>, _>>()?;
    let mut cfg = SimConfig::new(spec).with_faults(faults);
    if let Some(seed) = opts.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn write_outputs(opts: &RunOpts, log: &EventLog, report: &MissionReport) -> Result<()> {
    if let Some(p) = &opts.log {
        fs::write(p, log.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &opts.report {
        fs::write(p, report.to_json() + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn print_summary(report: &MissionReport, sim_time: f64) {
    // Output may be piped into something that stops reading early.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "outcome: {} at t={sim_time:.2}s", report.outcome.name());
    for (swarm, tasks) in &report.per_swarm {
        for t in tasks {
            let _ = writeln!(out, "  {swarm:<10} {:<28} {}/{}", t.task, t.actual, t.desired);
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run { scenario, opts } => {
            let cfg = config(&scenario, &opts)?;
            let started = Instant::now();
            let mut sim = Simulation::new(cfg)?;
            sim.run_to_end()?;
            let (log, report) = (sim.event_log(), sim.report());
            write_outputs(&opts, &log, &report)?;
            print_summary(&report, sim.time());
            let _ = writeln!(std::io::stdout(), "wall-clock: {:.2}s", started.elapsed().as_secs_f64());
        }
        Cmd::Replay { evlog, speed, serve } => {
            if speed < 0.0 {
                bail!("--speed must be non-negative");
            }
            let log = load_log(&evlog)?;
            match serve {
                Some(port) => {
                    let handle = replay_serve(&log, ServeOptions { port, speed, ..Default::default() })?;
                    eprintln!("replaying on ws://{}", handle.addr);
                    handle.wait()?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut out = stdout.lock();
                    replay(&log, speed, |frame| writeln!(out, "{frame}").is_ok())?;
                }
            }
        }
        Cmd::Serve { scenario, port, speed, paused, opts } => {
            if speed < 0.0 {
                bail!("--speed must be non-negative");
            }
            let cfg = config(&scenario, &opts)?;
            let sim = Simulation::new(cfg)?;
            let handle = gateway_serve(sim, ServeOptions { port, speed, start_paused: paused, telemetry_rate: None })?;
            eprintln!("serving on ws://{}", handle.addr);
            if let Some((log, report)) = handle.wait()? {
                write_outputs(&opts, &log, &report)?;
                print_summary(&report, log.duration());
            }
        }
        Cmd::Report { evlog } => {
            let log = load_log(&evlog)?;
            let spec = parse_scenario(&log.scenario).context("scenario embedded in the log")?;
            println!("{}", score_mission(&log.records, &spec).to_json());
        }
    }
    Ok(())
}
