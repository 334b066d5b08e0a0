//! Command line front end: generate a data bank, estimate every trial,
//! score the estimates and cross-check the kernel closed forms.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ctkrm::covariance::Combo;
use ctkrm::experiment::{
    cmd_estimate, cmd_evaluate, cmd_generate, cmd_validate_kernels, write_validation_report, ExperimentConfig,
    ValidateSettings,
};
use ctkrm::simulator::DataBankSpec;

#[derive(Parser)]
#[command(name = "ctkrm", version, about = "Continuous-time kernel-regularized impulse response estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Monte Carlo data bank.
    Generate(GenerateArgs),
    /// Tune hyperparameters and estimate every trial of a bank.
    Estimate(EstimateArgs),
    /// Score estimates against the noiseless truth.
    Evaluate(EvaluateArgs),
    /// Compare closed-form kernel integrals with quadrature and series oracles.
    ValidateKernels(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Bank {
    D1,
    D2,
    D3,
    D4,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComboArg {
    ZohPa,
    ZohZa,
    BlPa,
}

impl From<ComboArg> for Combo {
    fn from(c: ComboArg) -> Self {
        match c {
            ComboArg::ZohPa => Combo::ZohPa,
            ComboArg::ZohZa => Combo::ZohZa,
            ComboArg::BlPa => Combo::BlPa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::read(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "d1", ignore_case = true)]
    bank: Bank,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Data bank directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the input's declared intersample and past behavior.
    #[arg(long, value_enum)]
    combo: Option<ComboArg>,
    #[arg(long, value_enum)]
    transient: Option<Switch>,
    /// Multi-start count of the hyperparameter search.
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Only the first `n` trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Also write per-start optimizer traces.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    estimates: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    combo: Option<ComboArg>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Relative error injected into λ₁; the sweep must then fail.
    #[arg(long, default_value_t = 0.0, hide = true)]
    perturb_lambda1: f64,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Generate(a) => {
            let cfg = a.common.load()?;
            let mut bank = match a.bank {
                Bank::Custom => match cfg.bank.clone() {
                    Some(b) => b,
                    None => bail!("--bank custom needs a --config with a `bank` entry"),
                },
                Bank::D1 => DataBankSpec::d1(),
                Bank::D2 => DataBankSpec::d2(),
                Bank::D3 => DataBankSpec::d3(),
                Bank::D4 => DataBankSpec::d4(),
            };
            if let Some(t) = a.trials {
                bank.trials = t;
            }
            let seed = a.seed.unwrap_or(cfg.seed);
            let m = cmd_generate(&bank, seed, cfg.jobs, &a.out)?;
            println!("wrote {} trials of {} to {}", m.trials.len(), bank.name, a.out.display());
            Ok(true)
        }
        Command::Estimate(a) => {
            let mut cfg = a.common.load()?;
            if let Some(c) = a.combo {
                cfg.combo = Some(c.into());
            }
            if let Some(t) = a.transient {
                cfg.optimizer.transient = matches!(t, Switch::On);
            }
            if let Some(s) = a.starts {
                cfg.optimizer.n_starts = s;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
                cfg.optimizer.seed = s;
            }
            cfg.verbose |= a.verbose;
            let summary = cmd_estimate(&a.data, &a.out, &cfg, a.trials)?;
            println!("estimated {} trials, {} failed", summary.succeeded.len(), summary.failed.len());
            for (i, e) in &summary.failed {
                eprintln!("trial {i}: {e}");
            }
            Ok(summary.failed.is_empty())
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a.data, &a.estimates)?;
            let s = report.summary()?;
            println!(
                "FIT_g {:.2} ± {:.2}  FIT_y {:.2} ± {:.2}  over {} trials{}",
                s.fit_g.mean,
                s.fit_g.std,
                s.fit_y.mean,
                s.fit_y.std,
                s.trials,
                if s.partial { format!(" (missing {:?})", s.missing) } else { String::new() }
            );
            Ok(true)
        }
        Command::ValidateKernels(a) => {
            let settings = ValidateSettings {
                draws: a.draws,
                seed: a.seed,
                combo: a.combo.map(Into::into),
                tolerance: a.tol,
                perturb_lambda1: a.perturb_lambda1,
            };
            let report = cmd_validate_kernels(&settings)?;
            for c in &report.checks {
                println!(
                    "{} {:<28} worst {:.3e} over {} checks",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst_rel_error,
                    c.checks
                );
            }
            match &a.out {
                Some(p) => write_validation_report(p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
