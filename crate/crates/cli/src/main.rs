use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use acan_core::oracle;
use acan_core::params::ParamsError;
use acan_core::realtime::{self, RealtimeOptions, Transport};
use acan_core::scenario::metrics::{write_loss_csv, write_perf_csv};
use acan_core::scenario::{
    loss_ratio, pearson, ConfigError, Experiment, RunConfig, SimError, Simulation,
};
use acan_core::taskgraph::ModelSpec;
use acan_core::tuplespace::{serve, TupleSpace};
use acan_core::verify::{self, Verdict};

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_STALL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "acan",
    version,
    about = "Tuple-space micro-task training simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment on the virtual clock (or in real time).
    Run(RunArgs),
    /// Train with the sequential reference trainer.
    Oracle(OracleArgs),
    /// Compare two params.json files (or output directories).
    Verify { run: PathBuf, reference: PathBuf },
    /// Serve a tuple space over TCP.
    ServeTs {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpArg {
    Exp1,
    Exp2,
    Exp3,
    Custom,
}

impl From<ExpArg> for Experiment {
    fn from(e: ExpArg) -> Self {
        match e {
            ExpArg::Exp1 => Experiment::Exp1,
            ExpArg::Exp2 => Experiment::Exp2,
            ExpArg::Exp3 => Experiment::Exp3,
            ExpArg::Custom => Experiment::Custom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Inprocess,
    Tcp,
}

/// Config sources, lowest precedence first: preset, `--config`, `ACAN_SEED`, flags.
#[derive(Args)]
struct ConfigArgs {
    /// JSON file overlaid on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model layers as JSON, e.g. `{"layers":[{"in":8,"out":8},{"in":8,"out":1}]}`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f32>,
    #[arg(long)]
    pouch_size: Option<usize>,
    #[arg(long)]
    max_task_size: Option<usize>,
    #[arg(long)]
    handlers: Option<usize>,
    #[arg(long)]
    speed_unit: Option<f64>,
    #[arg(long)]
    max_sim_time: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(value_enum)]
    experiment: ExpArg,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use wall-clock threads instead of the virtual clock.
    #[arg(long)]
    realtime: bool,
    #[arg(long, value_enum, default_value = "inprocess")]
    transport: TransportArg,
    /// Wall seconds per virtual second in real-time mode.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

#[derive(Args)]
struct OracleArgs {
    /// Preset whose data, model and seed to use.
    #[arg(long, value_enum, default_value = "exp1")]
    experiment: ExpArg,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "oracle-out")]
    out: PathBuf,
}

fn build_config(exp: ExpArg, args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(exp.into());
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(ConfigError::from)?;
        cfg = cfg.merged(&text)?;
    }
    if let Ok(seed) = std::env::var("ACAN_SEED") {
        cfg.scenario.seed = seed
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("ACAN_SEED={seed:?} is not an integer")))?;
    }
    if let Some(path) = &args.model {
        cfg.model = ModelSpec::load(path).map_err(ConfigError::from)?;
    }
    let a = args;
    if let Some(v) = a.seed {
        cfg.scenario.seed = v;
    }
    if let Some(v) = a.samples {
        cfg.samples = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.eta {
        cfg.eta = v;
    }
    if let Some(v) = a.pouch_size {
        cfg.pouch_size = v;
    }
    if let Some(v) = a.max_task_size {
        cfg.cost.max_task_size = v;
    }
    if let Some(v) = a.handlers {
        cfg.scenario.handler_count = v;
    }
    if let Some(v) = a.speed_unit {
        cfg.scenario.speed_unit = v;
    }
    if a.max_sim_time.is_some() {
        cfg.scenario.max_sim_time = a.max_sim_time;
    }
    cfg.validate()?;
    cfg.plan()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = build_config(args.experiment, &args.cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("config.json"), &cfg)?;
    info!(
        "running {} samples x {} epochs, seed {}",
        cfg.samples, cfg.epochs, cfg.scenario.seed
    );

    if args.realtime {
        let opts = RealtimeOptions {
            transport: match args.transport {
                TransportArg::Inprocess => Transport::InProcess,
                TransportArg::Tcp => Transport::Tcp,
            },
            time_scale: args.time_scale,
        };
        let report = realtime::run(&cfg, opts)?;
        write_loss_csv(&args.out.join("loss.csv"), &report.losses)?;
        report.params.save(&args.out.join("params.json"))?;
        println!(
            "done: {} samples committed in {:.2?} wall",
            report.summary.samples_committed, report.wall
        );
        return Ok(());
    }

    let report = Simulation::new(&cfg)?.run()?;
    write_loss_csv(&args.out.join("loss.csv"), &report.losses)?;
    write_perf_csv(&args.out.join("perf.csv"), &report.perf)?;
    report.params.save(&args.out.join("params.json"))?;
    write_json(&args.out.join("summary.json"), &report.counters)?;

    let timeout: Vec<f64> = report.perf.iter().map(|r| r.timeout).collect();
    let power: Vec<f64> = report.perf.iter().map(|r| r.total_power).collect();
    println!("samples committed: {}", report.summary.samples_committed);
    println!("virtual time:      {:.3} s", report.sim_time);
    println!(
        "pouches:           {}  reissues: {}  crashes: {}",
        report.counters.pouches, report.counters.reissues, report.counters.crashes
    );
    match loss_ratio(&report.losses, 20) {
        Some(r) => println!("loss last20/first20: {r:.4}"),
        None => println!("loss last20/first20: n/a"),
    }
    match pearson(&timeout, &power) {
        Some(r) => println!("corr(timeout, power): {r:.4}"),
        None => println!("corr(timeout, power): n/a"),
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let cfg = build_config(args.experiment, &args.cfg)?;
    let (data, init) = acan_core::scenario::setup(&cfg);
    let run = oracle::train(&cfg.plan()?, init, &data, cfg.epochs)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    run.params.save(&args.out.join("params.json"))?;
    oracle::write_loss_csv(&args.out.join("loss.csv"), &run.losses)?;
    println!(
        "oracle: {} steps, outputs in {}",
        run.losses.len(),
        args.out.display()
    );
    Ok(())
}

fn params_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("params.json")
    } else {
        p.to_path_buf()
    }
}

fn cmd_verify(run: &Path, reference: &Path) -> Result<ExitCode> {
    let report = verify::compare_files(&params_path(run), &params_path(reference))?;
    println!("{report}");
    Ok(match report.verdict {
        Verdict::Exact | Verdict::WithinTolerance => ExitCode::SUCCESS,
        Verdict::Mismatch => ExitCode::from(EXIT_MISMATCH),
    })
}

fn cmd_serve(addr: &str) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    let handle = serve(listener, Arc::new(TupleSpace::new()))?;
    println!("tuple space listening on {}", handle.addr());
    handle.join();
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<SimError>() {
        return match e {
            SimError::Config(_) => EXIT_CONFIG,
            e if e.is_stall() => EXIT_STALL,
            _ => 1,
        };
    }
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    if let Some(ParamsError::Shape(_)) = err.downcast_ref::<ParamsError>() {
        return EXIT_CONFIG;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a).map(|()| ExitCode::SUCCESS),
        Command::Oracle(a) => cmd_oracle(a).map(|()| ExitCode::SUCCESS),
        Command::Verify { run, reference } => cmd_verify(&run, &reference),
        Command::ServeTs { addr } => cmd_serve(&addr).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
