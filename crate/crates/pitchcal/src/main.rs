use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use pitchcal::config::{ConfigError, RunConfig};
use pitchcal::pipeline::{self, PipelineError, Variant};

/// Extrinsic recalibration of a multi-camera rig over a crowned field.
///
/// Exit codes: 0 success, 2 configuration error, 3 I/O error,
/// 4 invariant violation. Set ESC_LOG=error|info|debug for diagnostics.
#[derive(Debug, Parser)]
#[command(name = "pitchcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for loss evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides lambda_tradeoff.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Overrides the number of generations.
    #[arg(long, global = true)]
    generations: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate from mask images listed in the config.
    Calibrate,
    /// Synthesize a drifted scene, render its masks and recalibrate.
    Simulate,
    /// Synthetic run with part of the method disabled.
    Ablate {
        #[arg(long, value_enum)]
        variant: VariantArg,
    },
    /// One synthetic run per lambda_tradeoff value; writes sweep.csv.
    SweepLambda {
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        values: Vec<f64>,
    },
    /// Write the binary and blurred field templates.
    RenderTemplate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    #[value(name = "no_3d")]
    No3d,
    #[value(name = "no_stitch")]
    NoStitch,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::No3d => Variant::No3d,
            VariantArg::NoStitch => Variant::NoStitch,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = RunConfig::from_json(&text, path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(lambda) = cli.lambda {
        cfg.loss.lambda_tradeoff = lambda;
    }
    if let Some(g) = cli.generations {
        cfg.es.generations = g;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<PathBuf, PipelineError> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Calibrate => pipeline::cmd_calibrate(&cfg),
        Command::Simulate => pipeline::cmd_simulate(&cfg),
        Command::Ablate { variant } => pipeline::cmd_ablate(&cfg, (*variant).into()),
        Command::SweepLambda { values } => pipeline::cmd_sweep_lambda(&cfg, values),
        Command::RenderTemplate => pipeline::cmd_render_template(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ESC_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            error!("{e}");
        }
    }
    match run(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
