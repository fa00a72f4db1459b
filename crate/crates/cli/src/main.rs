use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sscgan_cli::config::load_config_text;
use sscgan_cli::{cmd_eval, cmd_generate, cmd_train, cmd_verify, CliError, RunConfig};

/// Environment variable capping worker threads.
const THREADS_ENV: &str = "SSCGAN_THREADS";

#[derive(Parser)]
#[command(
    name = "sscgan",
    version,
    about = "Semi-supervised conditional GAN for IDC patch classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per --omega and evaluate it on the held-out split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint's classifier on the test split of --data.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a grid of generated patches per class.
    Generate {
        checkpoint: PathBuf,
        /// Class to condition on; both classes when omitted.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the numerical self-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file, or `paper-repro`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root, or `synth` for a generated stand-in.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Width multiplier, or a comma-separated list for a sweep.
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// patient or patch.
    #[arg(long = "split-unit")]
    split_unit: Option<String>,
    /// generator-only or both.
    #[arg(long)]
    conditioning: Option<String>,
    #[arg(long = "lambda-gp")]
    lambda_gp: Option<f64>,
    #[arg(long = "lambda-cls")]
    lambda_cls: Option<f64>,
    /// minimax or non-saturating.
    #[arg(long = "adv-form")]
    adv_form: Option<String>,
}

impl RunArgs {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let fields: [(&'static str, Option<String>); 12] = [
            ("data", path(&self.data)),
            ("out", path(&self.out)),
            ("omega", self.omega.clone()),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("split-unit", self.split_unit.clone()),
            ("conditioning", self.conditioning.clone()),
            ("lambda-gp", self.lambda_gp.map(|v| v.to_string())),
            ("lambda-cls", self.lambda_cls.map(|v| v.to_string())),
            ("adv-form", self.adv_form.clone()),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect()
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = self.config.as_deref().map(load_config_text).transpose()?;
        Ok(RunConfig::resolve(
            file.as_ref()
                .map(|(label, text)| (label.as_str(), text.as_str())),
            &self.flags(),
        )?)
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!("{THREADS_ENV}={raw:?} is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let mut out = std::io::stdout();
    match cli.command {
        Command::Train { run, resume } => {
            let cfg = run.resolve()?;
            cmd_train(&cfg, resume.as_deref(), &mut out)?;
        }
        Command::Eval { checkpoint, run } => {
            let cfg = run.resolve()?;
            cmd_eval(&checkpoint, &cfg, &mut out)?;
        }
        Command::Generate {
            checkpoint,
            class,
            count,
            seed,
            out: dir,
        } => {
            cmd_generate(&checkpoint, class, count, seed, Path::new(&dir), &mut out)?;
        }
        Command::Verify { seed } => {
            cmd_verify(seed, &mut out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
