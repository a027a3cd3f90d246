use std::path::PathBuf;
use std::process::ExitCode;

use arcset_sim::config::{Controller, Experiment, ExperimentConfig};
use arcset_sim::{export, run_experiment, Result, SimError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arcset", version, about = "Adaptive robust control with ellipsoidal set learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Number of Monte Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated controllers to run (arc, orc, rc).
    #[arg(long, value_delimiter = ',')]
    controllers: Option<Vec<Controller>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampled disturbances checked against every solved bound.
    #[arg(long)]
    adversary_draws: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the bundled two-state regulation preset.
    Example1 {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the bundled three-state tracking preset.
    Example2 {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute the metric table from an existing output directory.
    Report {
        /// Directory holding steps.csv (and summary.json for the horizons).
        dir: PathBuf,
        /// Horizons to report; defaults to the checkpoints in summary.json.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
    /// Print a bundled preset as TOML.
    Preset { name: String },
}

fn apply(mut cfg: ExperimentConfig, o: Overrides) -> ExperimentConfig {
    if let Some(r) = o.runs {
        cfg.runs = r;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(c) = o.controllers {
        cfg.controllers = c;
    }
    if let Some(d) = o.adversary_draws {
        cfg.adversary_draws = d;
    }
    if o.out.is_some() {
        cfg.output_dir = o.out;
    }
    cfg
}

fn run(cfg: ExperimentConfig) -> Result<bool> {
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let exp = Experiment::new(cfg)?;
    log::info!("running {} ({} runs)", exp.config.name, exp.config.runs);
    let res = run_experiment(&exp);
    let files = export::write_all(&out, &res)?;
    print!("{}", export::format_table(&exp.config.name, &res.metrics.checkpoints));
    let cert = &res.metrics.certificates;
    println!(
        "solves {}  min LMI eigenvalue {:.3e}  max adversary excess {}  fallbacks {}",
        cert.solves,
        cert.min_lmi_eigenvalue,
        cert.max_adversary_excess.map_or("-".into(), |x| format!("{x:.3e}")),
        cert.control_fallbacks
    );
    for f in &files {
        println!("wrote {}", f.display());
    }
    for f in &res.metrics.failed {
        eprintln!("run {} ({}) failed: {}", f.run, f.controller, f.message);
    }
    Ok(res.all_succeeded())
}

fn main_inner(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, overrides } => run(apply(ExperimentConfig::load(&config)?, overrides)),
        Command::Example1 { overrides } => run(apply(ExperimentConfig::example1(), overrides)),
        Command::Example2 { overrides } => run(apply(ExperimentConfig::example2(), overrides)),
        Command::Report { dir, horizons } => {
            let horizons = match horizons {
                Some(h) => h,
                None => export::read_summary(&dir)?.config.checkpoints,
            };
            let table = export::report(&dir, &horizons)?;
            print!("{}", export::format_table(&dir.display().to_string(), &table));
            Ok(true)
        }
        Command::Preset { name } => {
            let cfg = match name.as_str() {
                "example1" => ExperimentConfig::example1(),
                "example2" => ExperimentConfig::example2(),
                other => return Err(SimError::Config(format!("unknown preset {other:?}"))),
            };
            print!("{}", cfg.to_toml());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
