use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgnn::datasets::SbmSpec;
use cgnn::model::Variant;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::RunConfig;
use error::{CliError, Result};

/// Graph ODE node classification: training, oracle checks and reports.
#[derive(Debug, Parser)]
#[command(name = "cgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model; writes metrics.csv, summary.json and a checkpoint.
    Train(RunArgs),
    /// Accuracy of a saved checkpoint on every split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint directory [default: <out>/checkpoint].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train once per end time (and variant); writes sweep.csv.
    SweepTime {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        t_list: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the oracle suite; exits 0 iff every oracle passes.
    Verify {
        /// Set every tolerance to zero so the suite must fail.
        #[arg(long)]
        fault_inject: bool,
        /// Also write oracles.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Peak live state buffers per end time, adjoint against stored trajectory.
    MemReport {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        t_list: Option<Vec<f64>>,
    },
    /// Write a stochastic-block-model dataset in the neutral format.
    GenSynth(GenArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON SBM spec; the flags below are ignored when given, except --seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 100)]
    nodes_per_block: usize,
    #[arg(long, default_value_t = 0.05)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    signal: f64,
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    #[arg(long, default_value_t = 0.25)]
    val_fraction: f64,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

const DEFAULT_T_LIST: [f64; 4] = [5.0, 10.0, 20.0, 40.0];
const DEFAULT_MEM_T_LIST: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(v) = args.variant {
        cfg.train.variant = v;
    }
    Ok(cfg)
}

fn sbm_spec(args: &GenArgs) -> Result<SbmSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|source| CliError::Config {
                path: path.clone(),
                source,
            })?
        }
        None => SbmSpec {
            blocks: args.blocks,
            nodes_per_block: args.nodes_per_block,
            p_in: args.p_in,
            p_out: args.p_out,
            feature_dim: args.feature_dim,
            signal: args.signal,
            seed: 7,
            train_per_class: args.train_per_class,
            val_fraction: args.val_fraction,
        },
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load(&args)?;
            commands::cmd_train(&cfg, &cfg.output_dir(args.out.as_deref())?)?;
        }
        Command::Eval { run, checkpoint } => {
            let cfg = load(&run)?;
            let checkpoint = match checkpoint {
                Some(dir) => dir,
                None => cfg.output_dir(run.out.as_deref())?.join(commands::CHECKPOINT_DIR),
            };
            commands::cmd_eval(&cfg, &checkpoint)?;
        }
        Command::SweepTime {
            run,
            t_list,
            variants,
            jobs,
        } => {
            let cfg = load(&run)?;
            let t_list = t_list.or_else(|| cfg.t_list.clone()).unwrap_or(DEFAULT_T_LIST.to_vec());
            let variants = variants
                .or_else(|| cfg.variants.clone())
                .unwrap_or_else(|| vec![cfg.train.variant]);
            let out = cfg.output_dir(run.out.as_deref())?;
            commands::cmd_sweep_time(&cfg, &variants, &t_list, jobs, &out)?;
        }
        Command::Verify { fault_inject, out } => return commands::cmd_verify(fault_inject, out.as_deref()),
        Command::MemReport { run, t_list } => {
            let cfg = load(&run)?;
            let t_list = t_list.or_else(|| cfg.t_list.clone()).unwrap_or(DEFAULT_MEM_T_LIST.to_vec());
            commands::cmd_mem_report(&cfg, &t_list, &cfg.output_dir(run.out.as_deref())?)?;
        }
        Command::GenSynth(args) => commands::cmd_gen_synth(&sbm_spec(&args)?, Path::new(&args.out))?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap would exit with 2 on usage errors, which is reserved for numeric aborts.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
