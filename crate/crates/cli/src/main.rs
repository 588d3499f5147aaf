use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use forenlab_cli::{self as cli, InferArgs, RunConfig, Split};

#[derive(Parser)]
#[command(name = "forenlab", version, about = "Frequency-aware super-resolution for gridded fields")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `-s epochs=50`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for `-s data=PATH`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Shorthand for `-s out=PATH`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Shorthand for `-s checkpoint=PATH`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Shorthand for `-s seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic ensemble and its manifest.
    Gen,
    /// Train a model and write its checkpoint and epoch report.
    Train,
    /// Score reconstructions against the fields of a manifest.
    Eval {
        /// Compare against the fields of this manifest instead of a checkpoint.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train one model per value and report final validation PSNR.
    Sweep {
        /// omega0, fc or layers.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Super-resolve one grid with a checkpoint.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// The input is HR; downsample it by the checkpoint's scale first.
        #[arg(long)]
        from_hr: bool,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Radial band energies of a field and a reconstruction.
    Spectrum {
        #[arg(long)]
        input: PathBuf,
        /// Reconstruction to compare with.
        #[arg(long, conflicts_with = "model")]
        recon: Option<PathBuf>,
        /// Reconstruct the input with the checkpoint.
        #[arg(long)]
        model: bool,
        #[arg(long, default_value_t = 8)]
        bands: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_env()?;
    if let Some(p) = &c.config {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", p.display()))?;
    }
    for kv in &c.set {
        cfg.apply_override(kv)?;
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    for (key, value) in [
        ("data", path(&c.data)),
        ("out", path(&c.out)),
        ("checkpoint", path(&c.checkpoint)),
        ("seed", c.seed.map(|s| s.to_string())),
    ] {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    Ok(cfg)
}

fn emit(text: &str, csv: Option<&PathBuf>) -> Result<()> {
    match csv {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Gen => {
            let m = cli::cmd_gen(&cfg)?;
            println!("{}", m.display());
        }
        Command::Train => {
            let ckpt = cli::cmd_train(&cfg)?;
            println!("{}", ckpt.display());
        }
        Command::Eval { pred, split, csv } => {
            let split = match split {
                SplitArg::All => Split::All,
                SplitArg::Val => Split::Val,
            };
            emit(&cli::cmd_eval(&cfg, pred.as_deref(), split)?, csv.as_ref())?;
        }
        Command::Sweep { param, values, workers, csv } => {
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let values = cli::parse_values(&values)?;
            emit(&cli::cmd_sweep(&cfg, &param, &values)?, csv.as_ref())?;
        }
        Command::Infer { input, output, from_hr, pgm } => {
            let args = InferArgs { input: &input, output: &output, from_hr, pgm: pgm.as_deref() };
            let sr = cli::cmd_infer(&cfg, &args)?;
            println!("{}x{} -> {}", sr.height, sr.width, output.display());
        }
        Command::Spectrum { input, recon, model, bands, csv } => {
            emit(&cli::cmd_spectrum(&cfg, &input, recon.as_deref(), model, bands)?, csv.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(cli::exit_code(&e))
        }
    }
}
