//! `eoren`: fit, compose and evaluate implicit image representations.
//!
//! Exit codes: 0 success, 2 bad arguments or configuration, 3 I/O or
//! decoding failure, 4 numerical failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Failure { code: 2, message }
    }

    pub fn io(message: String) -> Self {
        Failure { code: 3, message }
    }

    pub fn numeric(message: String) -> Self {
        Failure { code: 4, message }
    }
}

impl From<eoren::Error> for Failure {
    fn from(e: eoren::Error) -> Self {
        use eoren::Error::*;
        let code = match e {
            Config(_) | Shape(_) | InvalidFilter(_) => 2,
            Io { .. } | Decode(_) | Unsupported(_) => 3,
            NonFinite(_) | DegenerateChannel { .. } => 4,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "eoren",
    version,
    about = "Fit, compose and evaluate implicit image representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, Failure> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = config::split_setting(s)?;
            out.push((k.to_string(), v.to_string()));
        }
        if let Some(seed) = self.seed {
            out.push(("seed".into(), seed.to_string()));
        }
        Ok(out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit one image
    Fit {
        #[arg(long, value_parser = ["pixel", "grad", "eoren"])]
        mode: String,
        #[arg(long)]
        input: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Gradient-domain composition of two images
    Compose {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Weight of image a
        #[arg(long)]
        lambda: f64,
        /// Edge-stage learning rate
        #[arg(long)]
        gamma1: Option<f64>,
        /// Tuner learning rate
        #[arg(long)]
        gamma2: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// PSNR, SSIM and histogram of a prediction against a reference
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also write the report (and a manifest) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the gradient field of an image
    Grad {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Unscaled Sobel responses instead of magnitude-adjusted ones
        #[arg(long)]
        raw_sobel: bool,
    },
    /// Repeat a recorded run
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit {
            mode,
            input,
            out,
            cfg,
        } => {
            let mut overrides = vec![("mode".to_string(), mode)];
            overrides.extend(cfg.overrides()?);
            let resolved = config::resolve(cfg.config.as_deref(), &overrides)?;
            commands::fit(&input, &out, &resolved)
        }
        Command::Compose {
            a,
            b,
            lambda,
            gamma1,
            gamma2,
            out,
            cfg,
        } => {
            let mut overrides = vec![
                ("mode".to_string(), "compose".to_string()),
                ("lambda".to_string(), lambda.to_string()),
            ];
            if let Some(g) = gamma1 {
                overrides.push(("lr_edge".into(), g.to_string()));
            }
            if let Some(g) = gamma2 {
                overrides.push(("lr_tuner".into(), g.to_string()));
            }
            overrides.extend(cfg.overrides()?);
            let resolved = config::resolve(cfg.config.as_deref(), &overrides)?;
            commands::compose(&a, &b, &out, &resolved)
        }
        Command::Eval {
            pred,
            reference,
            out,
        } => commands::eval(&pred, &reference, out.as_deref()),
        Command::Grad {
            input,
            out,
            raw_sobel,
        } => commands::grad(&input, &out, raw_sobel),
        Command::Rerun { manifest, out } => commands::rerun(&manifest, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let mut cmd = Cli::command();
            let sub = std::env::args().nth(1).unwrap_or_default();
            let usage = match cmd.find_subcommand_mut(&sub) {
                Some(sub) => sub.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("\n{usage}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
