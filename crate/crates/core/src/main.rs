use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robustnn::config::read_sweep_config;
use robustnn::experiment::{contaminated_data, probe_run};
use robustnn::report::{format_float, read_summary, report_to_dir, run_to_dir};
use robustnn::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "robustnn", version, about = "Robust regression networks and contamination simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation sweep and write results.csv and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Overrides base_seed from the configuration.
        #[arg(long, env = "ROBUSTNN_SEED")]
        seed: Option<u64>,
    },
    /// Draw one SVG bar chart per scenario from a summary.csv.
    Report {
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the training and test sets of one configuration as CSV.
    Datagen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Index into the expanded configuration list.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long, env = "ROBUSTNN_SEED")]
        seed: Option<u64>,
    },
    /// Train one configuration and print the parameter-norm trajectory.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        rep: usize,
        /// Print every k-th epoch (the last epoch is always printed).
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[arg(long, env = "ROBUSTNN_SEED")]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, parallel, seed } => cmd_run(&config, &out, parallel, seed),
        Command::Report { summary, out } => cmd_report(&summary, &out),
        Command::Datagen { config, out, index, rep, seed } => cmd_datagen(&config, &out, index, rep, seed),
        Command::Probe { config, index, rep, every, seed } => cmd_probe(&config, index, rep, every, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 3,
        _ => 2,
    }
}

fn load(config: &Path, seed: Option<u64>) -> Result<Vec<ExperimentConfig>, Error> {
    let mut sweep = read_sweep_config(config)?;
    if let Some(seed) = seed {
        sweep.base_seed = seed;
    }
    Ok(sweep.expand())
}

fn select(cfgs: Vec<ExperimentConfig>, index: usize) -> Result<ExperimentConfig, Error> {
    let n = cfgs.len();
    cfgs.into_iter()
        .nth(index)
        .ok_or_else(|| Error::config("--index", format!("configuration {index} out of range (have {n})")))
}

fn cmd_run(config: &Path, out: &Path, parallel: usize, seed: Option<u64>) -> Result<(), Error> {
    let cfgs = load(config, seed)?;
    let runs: usize = cfgs.iter().map(|c| c.replications).sum();
    eprintln!("running {} configurations, {runs} trainings", cfgs.len());
    let records = run_to_dir(&cfgs, out, parallel.max(1))?;
    let converged = records.iter().filter(|r| r.converged).count();
    eprintln!("{converged}/{} runs converged; wrote {}", records.len(), out.display());
    Ok(())
}

fn cmd_report(summary: &Path, out: &Path) -> Result<(), Error> {
    let rows = read_summary(File::open(summary)?)?;
    if rows.is_empty() {
        println!("summary is empty; nothing to report");
        return Ok(());
    }
    let paths = report_to_dir(&rows, out)?;
    println!("wrote {} charts to {}", paths.len(), out.display());
    Ok(())
}

fn cmd_datagen(config: &Path, out: &Path, index: usize, rep: usize, seed: Option<u64>) -> Result<(), Error> {
    let cfg = select(load(config, seed)?, index)?;
    let (train, test) = contaminated_data(&cfg, rep);
    fs::create_dir_all(out)?;
    train.write_csv(BufWriter::new(File::create(out.join("train.csv"))?))?;
    test.write_csv(BufWriter::new(File::create(out.join("test.csv"))?))?;
    println!("wrote train.csv ({} rows) and test.csv ({} rows) to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn cmd_probe(config: &Path, index: usize, rep: usize, every: usize, seed: Option<u64>) -> Result<(), Error> {
    let cfg = select(load(config, seed)?, index)?;
    let outcome = probe_run(&cfg, rep)?;
    let trace = outcome.norm_trace.as_deref().unwrap_or_default();
    let every = every.max(1);
    let mut stdout = BufWriter::new(io::stdout().lock());
    writeln!(stdout, "epoch,norm,sup_norm")?;
    let mut sup = f64::NEG_INFINITY;
    for (epoch, &norm) in trace.iter().enumerate() {
        if norm > sup || norm.is_nan() {
            sup = norm;
        }
        if epoch % every == 0 || epoch + 1 == trace.len() {
            writeln!(stdout, "{epoch},{},{}", format_float(norm), format_float(sup))?;
        }
    }
    writeln!(
        stdout,
        "# status={} epochs={} initial_norm={} sup_norm={} ratio={} breakdown={}",
        outcome.status.as_str(),
        outcome.epochs_used,
        format_float(outcome.initial_norm),
        format_float(outcome.sup_weight_norm),
        format_float(outcome.sup_weight_norm / outcome.initial_norm),
        outcome.breakdown
    )?;
    stdout.flush()?;
    Ok(())
}
