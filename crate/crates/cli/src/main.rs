use std::fs;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use homotomo::experiment::{self, Experiment, ExperimentConfig};
use homotomo::sampler::{CountRecord, RunSeed};
use homotomo::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "homotomo",
    version,
    about = "Photon-counting homodyne tomography experiments"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Information spectrum, e_P and loss distribution at the true state.
    Analyze(Common),
    /// One simulated experiment, written as counts.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run index within the master seed.
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
    /// Reconstruct the state from a counts CSV.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        counts: PathBuf,
    },
    /// Monte-Carlo campaign of simulate, reconstruct and evaluate cycles.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's run count.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Q-function grid (single mode) or coordinate wave function (two modes).
    Qfunc(Common),
    /// Summarise a campaign directory.
    Report {
        /// Campaign directory.
        #[arg(long)]
        out: PathBuf,
        /// Also render histogram.svg.
        #[arg(long)]
        svg: bool,
        /// Exit with status 4 unless the campaign passes the acceptance checks.
        #[arg(long)]
        check: bool,
    },
}

enum Failure {
    Error(Error),
    Check(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn load(common: &Common) -> Result<(Experiment, PathBuf), Error> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());
    Ok((Experiment::new(config)?, out))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze(common) => {
            let (exp, out) = load(&common)?;
            let report = experiment::write_analysis(&out, &exp)?;
            print_json(&report)?;
        }
        Command::Simulate { common, run } => {
            let (exp, out) = load(&common)?;
            fs::create_dir_all(&out)?;
            let counts = exp.simulate(exp.run_seed(run))?;
            let path = out.join("counts.csv");
            counts.write_csv(BufWriter::new(fs::File::create(&path)?))?;
            eprintln!("wrote {}", path.display());
        }
        Command::Reconstruct { common, counts } => {
            let (exp, out) = load(&common)?;
            let file = fs::File::open(&counts)
                .map_err(|e| Error::Config(format!("{}: {e}", counts.display())))?;
            let record = CountRecord::read_csv(io::BufReader::new(file))?;
            let seed = record
                .seed
                .unwrap_or(RunSeed::new(exp.config.master_seed, 0));
            let rec = exp.reconstruct(&record, seed)?;
            let fidelity = exp.fidelity(&rec)?;
            let (adequacy, adequacy_errors) = exp.adequacy(&record, &rec)?;
            fs::create_dir_all(&out)?;
            let doc = rec.document(exp.config_hash(), record.seed);
            let text = serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n";
            fs::write(out.join("reconstruction.json"), text)?;
            print_json(&serde_json::json!({
                "fidelity": fidelity,
                "loss": 1.0 - fidelity,
                "log_likelihood": rec.result.log_likelihood,
                "iterations": rec.result.iterations,
                "converged": rec.result.converged,
                "adequacy": adequacy,
                "adequacy_errors": adequacy_errors,
            }))?;
        }
        Command::Montecarlo { common, runs } => {
            let (exp, out) = load(&common)?;
            let runs = runs.unwrap_or(exp.config.runs);
            if runs == 0 {
                return Err(Error::Config("runs must be positive".into()).into());
            }
            let summary = experiment::run_campaign(&exp, runs, &out)?;
            print_json(&summary)?;
        }
        Command::Qfunc(common) => {
            let (exp, out) = load(&common)?;
            fs::create_dir_all(&out)?;
            let name = if exp.config.state.modes() == 1 {
                "qfunc.csv"
            } else {
                "wavefunction.csv"
            };
            let path = out.join(name);
            experiment::write_qfunc_csv(&exp, fs::File::create(&path)?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Report { out, svg, check } => {
            let summary = experiment::report(&out, svg)?;
            print_json(&summary)?;
            if check {
                let failures = summary.check();
                if !failures.is_empty() {
                    return Err(Failure::Check(failures));
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::MissingArtifacts(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), Error> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(failures)) => {
            for f in failures {
                eprintln!("check failed: {f}");
            }
            ExitCode::from(EXIT_CHECK)
        }
    }
}
