use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use noiseprop::harness::{
    fc_demo, finite_difference_validate, jacobian_exact_chi, monte_carlo_chi, run_experiment, Realizations,
};
use noiseprop::io::{emit_fc_demo, emit_noise_validation, emit_results, fit_report, parse_config, read_aggregate, FitMode};
use noiseprop::tensor::SeedStream;
use noiseprop::Error;

#[derive(Parser)]
#[command(name = "noiseprop", version, about = "Signal and noise moment propagation through random deep nets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write its statistics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the first-order noise approximation at several noise scales.
    ValidateNoise {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4,1e-5")]
        sigmas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact Jacobian sensitivity of a fully-connected net next to a Monte-Carlo estimate.
    OracleChi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Fit the mean sensitivity curve of an aggregate file.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Inclusive layer range `a:b`.
        #[arg(long)]
        layers: String,
    },
    /// Scalar-input demo: tanh layer, linear layer, deep normalized ReLU net.
    FcDemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Power,
    Exp,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>, Error> {
    let bad = || Error::Config {
        key: "layers".into(),
        message: format!("expected `a:b`, got `{s}`"),
    };
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok(a.trim().parse().map_err(|_| bad())?..=b.trim().parse().map_err(|_| bad())?)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            realizations,
            threads,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = realizations {
                cfg.realizations = r;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let output = run_experiment(&cfg)?;
            emit_results(&output, &out)?;
            println!(
                "{} realizations, {} degenerate at depth {}, results in {}",
                output.record.realizations,
                output.record.degenerate_counts.get(&cfg.depth).copied().unwrap_or(0),
                cfg.depth,
                out.display()
            );
        }
        Command::ValidateNoise { config, sigmas, out } => {
            let cfg = parse_config(&config)?;
            let reals = Realizations::new(&cfg)?;
            let signal = reals.raw_signal(0)?;
            let direction = reals.raw_noise(0, 1.0)?;
            let shaped = reals.shape_input(0, signal, direction)?;
            let checks = finite_difference_validate(&reals.arch, &shaped.signal, &shaped.noise, &sigmas, reals.weights(0))?;
            emit_noise_validation(&checks, &out)?;
            for c in &checks {
                println!("sigma {:e}  ratio {:e}", c.sigma, c.ratio);
            }
        }
        Command::OracleChi { config, draws } => {
            let cfg = parse_config(&config)?;
            if cfg.initial_conv_stride.is_some() {
                return Err(Error::Config {
                    key: "initial_conv_stride".into(),
                    message: "the Jacobian oracle works on the raw input; remove the initial conv".into(),
                });
            }
            let reals = Realizations::new(&cfg)?;
            let input = reals.raw_signal(0)?;
            let exact = jacobian_exact_chi(&reals.arch, &input, reals.weights(0))?;
            let mc = monte_carlo_chi(
                &reals.arch,
                &input,
                reals.weights(0),
                cfg.sigma_dx,
                draws,
                reals.stream(0).child(SeedStream::PROBE),
            )?;
            println!("exact chi        {}", exact.chi);
            println!("monte-carlo chi  {} +- {} ({} draws)", mc.chi, mc.stderr, mc.draws);
            println!("difference       {:.2} stderr", (exact.chi - mc.chi) / mc.stderr);
        }
        Command::Fit { input, mode, layers } => {
            let rows = read_aggregate(&input)?;
            let mode = match mode {
                Mode::Power => FitMode::Power,
                Mode::Exp => FitMode::Exponential,
            };
            let report = fit_report(&rows, mode, parse_range(&layers)?)?;
            match mode {
                FitMode::Power => println!("tau_hat {}", report.estimate),
                FitMode::Exponential => println!("gamma_hat {}", report.estimate),
            }
            println!("r_squared {}", report.r_squared);
            match report.tau_reference {
                Some(t) => println!("tau_reference {t}"),
                None => println!("tau_reference n/a"),
            }
        }
        Command::FcDemo { out, seed } => {
            let panels = fc_demo(seed)?;
            emit_fc_demo(&panels, &out)?;
            for p in &panels {
                println!("{:<14} chi {}", p.name, p.chi);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
