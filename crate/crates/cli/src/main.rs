//! `gecm-hem`: simulate data, fit, predict and evaluate from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gecm_hem::pipeline::{self, Mode, RunConfig, WORKERS_ENV};
use gecm_hem::Error;

#[derive(Debug, Parser)]
#[command(name = "gecm-hem", version, about = "Sparse Bayesian regression with hyperbolic errors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scenario preset.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scenario preset: I, II, III or IV.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        n_signals: Option<usize>,
        #[arg(long)]
        signal_value: Option<f64>,
        /// Extra rows from the same model written to test.csv.
        #[arg(long)]
        test_n: Option<usize>,
    },
    /// Cross-validate, screen with ECM and sample the reduced model.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        response: Option<String>,
        /// Fixed spike scale; skips cross-validation.
        #[arg(long)]
        kappa0: Option<f64>,
        #[arg(long)]
        eta_fixed: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        /// Run the sampler on all columns without screening.
        #[arg(long)]
        skip_screening: bool,
        /// Stop after the screening step.
        #[arg(long)]
        ecm_only: bool,
    },
    /// Predictive medians and intervals for new rows.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit_dir: Option<PathBuf>,
        #[arg(long)]
        new_data: Option<PathBuf>,
        #[arg(long)]
        level: Option<f64>,
    },
    /// Score a fit against the truth and held-out rows, or aggregate reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit_dir: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Training data; defaults to the path recorded by the fit.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        level: Option<f64>,
        /// Summarize eval reports from these directories instead.
        #[arg(long, num_args = 1.., value_name = "DIR")]
        aggregate: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long = "out")]
    out_dir: Option<PathBuf>,
    /// Any configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(o: &mut Overrides, key: &'static str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key, v.to_string()));
    }
}

fn path(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

fn build_config(mode: Mode, common: Common, flags: Overrides) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    let mut o = Overrides::new();
    push(&mut o, "seed", common.seed);
    push(&mut o, "workers", common.workers);
    push(&mut o, "out_dir", path(common.out_dir));
    for (k, v) in o.into_iter().chain(flags) {
        cfg.set(k, &v)?;
    }
    cfg.mode = mode;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            common,
            scenario,
            n,
            p,
            n_signals,
            signal_value,
            test_n,
        } => {
            let mut o = Overrides::new();
            push(&mut o, "scenario", scenario);
            push(&mut o, "n", n);
            push(&mut o, "p", p);
            push(&mut o, "n_signals", n_signals);
            push(&mut o, "signal_value", signal_value);
            push(&mut o, "test_n", test_n);
            let cfg = build_config(Mode::Simulate, common, o)?;
            pipeline::cmd_simulate(&cfg)?;
            eprintln!("wrote simulation to {}", cfg.out_dir.display());
        }
        Command::Fit {
            common,
            data,
            response,
            kappa0,
            eta_fixed,
            iters,
            burnin,
            thin,
            skip_screening,
            ecm_only,
        } => {
            let mut o = Overrides::new();
            push(&mut o, "data", path(data));
            push(&mut o, "response", response);
            push(&mut o, "kappa0", kappa0);
            push(&mut o, "eta_fixed", eta_fixed);
            push(&mut o, "iters", iters);
            push(&mut o, "burnin", burnin);
            push(&mut o, "thin", thin);
            push(&mut o, "skip_screening", skip_screening.then_some(true));
            push(&mut o, "ecm_only", ecm_only.then_some(true));
            let cfg = build_config(Mode::Fit, common, o)?;
            let out = pipeline::cmd_fit(&cfg)?;
            if let Some(k) = out.kappa0 {
                eprintln!("kappa0 = {k}");
            }
            eprintln!(
                "{} of {} columns kept; results in {}",
                out.reduced_indices.len(),
                out.data.p(),
                cfg.out_dir.display()
            );
        }
        Command::Predict {
            common,
            fit_dir,
            new_data,
            level,
        } => {
            let mut o = Overrides::new();
            push(&mut o, "fit_dir", path(fit_dir));
            push(&mut o, "new_data", path(new_data));
            push(&mut o, "level", level);
            let cfg = build_config(Mode::Predict, common, o)?;
            let pred = pipeline::cmd_predict(&cfg)?;
            eprintln!("predicted {} rows into {}", pred.len(), cfg.out_dir.display());
        }
        Command::Evaluate {
            common,
            fit_dir,
            truth,
            test,
            data,
            level,
            aggregate,
        } => {
            if !aggregate.is_empty() {
                let out = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
                print!("{}", pipeline::cmd_aggregate(&aggregate, &out)?);
                return Ok(());
            }
            let mut o = Overrides::new();
            push(&mut o, "fit_dir", path(fit_dir));
            push(&mut o, "truth", path(truth));
            push(&mut o, "test", path(test));
            push(&mut o, "data", path(data));
            push(&mut o, "level", level);
            let cfg = build_config(Mode::Evaluate, common, o)?;
            print!("{}", pipeline::cmd_evaluate(&cfg)?.to_text());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if e.is_data() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
