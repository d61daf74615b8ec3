use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cosim_core::config::SystemConfig;
use cosim_core::dse::{
    calibrate_figure_of_merit, read_results_csv, report, sweep, write_results_csv, Campaign, ComparisonSpec,
    Execution, ExperimentConfig, Harness, RunResult, Transport,
};
use cosim_core::energy::BatteryCatalog;
use cosim_core::protocol::{Endpoint, Registry};
use cosim_core::world::{serve, Scenario, World, WorldServer};

/// Lock-step drone co-simulation and design-space exploration.
#[derive(Parser)]
#[command(name = "cosim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly one mission.
    Run(RunArgs),
    /// Run every experiment of a campaign file.
    Sweep(SweepArgs),
    /// Recompute the summary of a results directory.
    Report {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
    },
    /// Serve the world simulator on an endpoint until SHUTDOWN.
    Serve {
        /// `unix:/path` or `tcp:host:port`.
        #[arg(long, env = "COSIM_ENDPOINT")]
        endpoint: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario loaded before the first RESET.
        #[arg(long, default_value = "easy")]
        scenario: String,
    },
    /// Fit the motor figure of merit to a hover endurance.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "stock")]
        battery: String,
        #[arg(long, default_value_t = 410.0)]
        target_s: f64,
        #[arg(long, default_value_t = 0.5)]
        tolerance_s: f64,
    },
}

#[derive(Args)]
struct Common {
    /// System configuration; the bundled one when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Battery catalog; the bundled one when omitted.
    #[arg(long)]
    batteries: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Connect to a running world server instead of spawning one.
    #[arg(long, env = "COSIM_ENDPOINT", conflicts_with = "in_process")]
    attach: Option<String>,
    /// Keep the world inside this process.
    #[arg(long)]
    in_process: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "stock")]
    battery: String,
    #[arg(long, conflicts_with = "adaptive")]
    speed: Option<f64>,
    #[arg(long)]
    adaptive: bool,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, value_name = "G")]
    weight_override: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    campaign: PathBuf,
    /// Run experiments concurrently.
    #[arg(long)]
    parallel: bool,
}

fn load_system(path: Option<&Path>) -> Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SystemConfig::bundled()),
    }
}

fn harness(common: &Common) -> Result<Harness> {
    let mut h = Harness::new(load_system(common.config.as_deref())?)?;
    if let Some(p) = &common.batteries {
        h.catalog = BatteryCatalog::load(p)?;
    }
    h.system_path = common.config.as_ref().map(std::path::absolute).transpose()?;
    h.transport = if let Some(ep) = &common.attach {
        Transport::Attach(ep.parse()?)
    } else if common.in_process {
        Transport::InProcess
    } else {
        Transport::Spawn {
            program: std::env::current_exe().context("locating the cosim executable")?,
        }
    };
    h.out_dir = Some(common.out.clone());
    Ok(h)
}

/// Writes results and summary; returns the number of failed runs.
fn finish(out: &Path, results: &[RunResult], comparisons: &[ComparisonSpec]) -> Result<usize> {
    write_results_csv(&out.join("results.csv"), results)?;
    let rep = report(results, comparisons)?;
    rep.write(out)?;
    print!("{}", rep.to_text());
    for r in results.iter().filter(|r| r.is_error()) {
        eprintln!("run {} failed: {}", r.id, r.error.as_deref().unwrap_or_default());
    }
    Ok(rep.errored())
}

fn run(args: RunArgs) -> Result<usize> {
    let h = harness(&args.common)?;
    let scenario = args.scenario.unwrap_or_else(|| h.system.mission.scenario.clone());
    let v = args.speed.unwrap_or(h.system.mission.v_kmh);
    let mut cfg = ExperimentConfig::new("", &scenario, &args.battery, v);
    let adaptive = args.adaptive
        || (args.speed.is_none() && h.system.mission.policy == cosim_core::config::PolicyKind::Adaptive);
    if adaptive {
        cfg = cfg.adaptive();
    }
    cfg.weight_override_g = args.weight_override;
    cfg.seed = args.seed;
    if let Some(t) = args.max_time {
        cfg.max_sim_time_s = t;
    }
    cfg.id = args.id.unwrap_or_else(|| {
        let label = if adaptive { "adaptive".to_owned() } else { format!("{v}") };
        let scen = Path::new(&scenario).file_stem().map_or(scenario.clone(), |s| s.to_string_lossy().into());
        format!("{scen}-{}-{label}", args.battery)
    });
    let results = sweep(&h, &[cfg], Execution::Sequential)?;
    finish(&args.common.out, &results, &[])
}

fn run_sweep(args: SweepArgs) -> Result<usize> {
    let h = harness(&args.common)?;
    let campaign = Campaign::load(&args.campaign)?;
    let configs = campaign.expand()?;
    log::info!("{}: {} runs", campaign.name, configs.len());
    let exec = if args.parallel { Execution::Parallel } else { Execution::Sequential };
    let results = sweep(&h, &configs, exec)?;
    // Kept next to the results so that `report` can recompute the comparisons.
    std::fs::write(args.common.out.join("campaign.json"), serde_json::to_string_pretty(&campaign)?)?;
    finish(&args.common.out, &results, &campaign.all_comparisons())
}

fn run_report(dir: &Path) -> Result<usize> {
    let results = read_results_csv(&dir.join("results.csv"))?;
    let campaign_path = dir.join("campaign.json");
    let comparisons = if campaign_path.exists() {
        Campaign::load(&campaign_path)?.all_comparisons()
    } else {
        Vec::new()
    };
    let rep = report(&results, &comparisons)?;
    rep.write(dir)?;
    print!("{}", rep.to_text());
    Ok(0)
}

fn run_serve(endpoint: &str, config: Option<&Path>, scenario: &str) -> Result<usize> {
    let system = load_system(config)?;
    let registry = Arc::new(Registry::from_config(&system)?);
    let world = World::new(Scenario::resolve(scenario)?, system.world.clone());
    let endpoint: Endpoint = endpoint.parse()?;
    log::info!("serving on {endpoint}");
    serve(&endpoint, WorldServer::new(world, registry))?;
    Ok(0)
}

fn run_calibrate(config: Option<&Path>, battery: &str, target_s: f64, tolerance_s: f64) -> Result<usize> {
    let h = Harness::new(load_system(config)?)?;
    if !(target_s > 0.0 && tolerance_s > 0.0) {
        bail!("target and tolerance must be positive");
    }
    let (fm, t) = calibrate_figure_of_merit(&h, battery, target_s, tolerance_s)?;
    println!("figure_of_merit = {fm:.6}  (hover endurance {t:.1} s on `{battery}`)");
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report { input } => run_report(&input),
        Command::Serve {
            endpoint,
            config,
            scenario,
        } => run_serve(&endpoint, config.as_deref(), &scenario),
        Command::Calibrate {
            config,
            battery,
            target_s,
            tolerance_s,
        } => run_calibrate(config.as_deref(), &battery, target_s, tolerance_s),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} run(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
