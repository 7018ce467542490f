//! `noon-gyro`: simulate, coincide, fit and report.
//!
//! ```bash
//! noon-gyro simulate --mode rate
//! noon-gyro fit out/series_n1.txt --n 1 -o out/fit_n1.json
//! noon-gyro fit out/series_n2.txt --n 2 -o out/fit_n2.json
//! noon-gyro report out/fit_n1.json out/fit_n2.json out/series_n1.txt out/series_n2.txt
//! ```
//!
//! Exit status: 0 success, 2 invalid input, 3 unparseable file, 4 fit
//! failure, 5 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use noon_gyro::commands::{self, CoincideOptions, FitCommandOptions, Manifest, ReportOptions, SimulateOptions, SimulationMode};
use noon_gyro::config::RunConfig;
use noon_gyro::estimator::Weighting;
use noon_gyro::precision::OmegaReference;
use noon_gyro::Error;

#[derive(Parser)]
#[command(
    name = "noon-gyro",
    version,
    about = "One- and two-photon Sagnac gyroscope simulation and analysis"
)]
struct Cli {
    /// Run configuration (TOML); built-in reference setup when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rate,
    Tags,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Poisson,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Instantaneous,
    BlockAverage,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured runs
    Simulate {
        #[arg(long, value_enum, default_value = "rate")]
        mode: Mode,
        /// Photon number of the run to simulate; both runs when omitted
        #[arg(long = "n", value_parser = clap::value_parser!(u32).range(1..=2))]
        n: Option<u32>,
        /// Simulate only the first DURATION seconds of each profile
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Bin singles and coincidences of an event file
    Coincide {
        events: PathBuf,
        #[arg(long = "n", value_parser = clap::value_parser!(u32).range(1..=2))]
        n: u32,
        /// Coincidence window, s
        #[arg(long)]
        window: Option<f64>,
        /// Bin duration, s
        #[arg(long)]
        tau: Option<f64>,
        /// Binned interval as T0,T1 in seconds
        #[arg(long, value_delimiter = ',', value_name = "T0,T1")]
        span: Option<Vec<f64>>,
    },
    /// Fit the fringe model to a binned series
    Fit {
        series: PathBuf,
        #[arg(long = "n")]
        n: u32,
        #[arg(long, value_enum, default_value = "poisson")]
        weighting: WeightingArg,
        /// Bootstrap resamples for parameter spreads (at least 100)
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Output file; `fit_n<N>.json` in the output directory by default
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Precision report and plot data from both runs
    Report {
        fit1: PathBuf,
        fit2: PathBuf,
        series1: PathBuf,
        series2: PathBuf,
        #[arg(long, value_enum, default_value = "instantaneous")]
        reference: ReferenceArg,
    },
}

fn print_manifest(m: &Manifest) {
    println!("{}", serde_json::to_string_pretty(m).expect("manifest serialises"));
}

fn run(cli: Cli) -> noon_gyro::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out_dir = commands::output_directory(&config);

    match cli.command {
        Command::Simulate { mode, n, duration } => {
            let opts = SimulateOptions {
                mode: match mode {
                    Mode::Rate => SimulationMode::Rate,
                    Mode::Tags => SimulationMode::Tags,
                },
                photon_numbers: n.map_or(vec![1, 2], |n| vec![n]),
                duration,
                out_dir,
            };
            print_manifest(&commands::simulate(&config, &opts)?);
        }
        Command::Coincide {
            events,
            n,
            window,
            tau,
            span,
        } => {
            let span = match span.as_deref() {
                None => None,
                Some(&[t0, t1]) => Some((t0, t1)),
                Some(_) => {
                    return Err(Error::InvalidParameter {
                        name: "span",
                        reason: "expected T0,T1".into(),
                    })
                }
            };
            let opts = CoincideOptions {
                photon_number: n,
                window,
                tau,
                span,
                out_dir,
            };
            print_manifest(&commands::coincide(&config, &events, &opts)?);
        }
        Command::Fit {
            series,
            n,
            weighting,
            bootstrap,
            output,
        } => {
            let weighting = match weighting {
                WeightingArg::Poisson => Weighting::Poisson,
                WeightingArg::Uniform => Weighting::Uniform,
            };
            let opts = FitCommandOptions {
                photon_number: n,
                fit: commands::fit_options(weighting),
                bootstrap,
                seed: config.seed,
                output: output.unwrap_or_else(|| out_dir.join(format!("fit_n{n}.json"))),
            };
            let (manifest, _) = commands::fit(&series, &opts)?;
            print_manifest(&manifest);
        }
        Command::Report {
            fit1,
            fit2,
            series1,
            series2,
            reference,
        } => {
            let opts = ReportOptions {
                reference: match reference {
                    ReferenceArg::Instantaneous => OmegaReference::Instantaneous,
                    ReferenceArg::BlockAverage => OmegaReference::BlockAverage,
                },
                out_dir,
            };
            let (manifest, _) = commands::report((&fit1, &fit2), (&series1, &series2), &opts)?;
            print_manifest(&manifest);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::RankDeficient { .. } | Error::NotIdentifiable(_) = e {
                eprintln!("hint: the series must sweep Ω over at least part of a fringe");
            }
            ExitCode::from(e.class() as u8)
        }
    }
}
