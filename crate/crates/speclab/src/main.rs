//! Command-line front end for the speculative-decoding laboratory.
//!
//! Subcommands: `train` (persist target model and drafter), `run` (one
//! experiment → report file), `compare` (per-architecture table), `theory`
//! (ordering-theorem sweep), and `report` (format conversion).
//!
//! Exit codes: 0 success; 2 configuration/validation error; 3 infeasible or
//! violated mathematical constraint; 4 I/O or file-format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use speclab::harness::{
    compare_architectures, comparison_csv, parse_report_text, run_experiment, theory_csv,
    write_report, ExperimentConfig, ReportFormat,
};
use speclab::rng::Rng;
use speclab::theory::sweep_ordering;

/// Speculative-decoding laboratory: exact n-gram target, hybrid
/// serial/parallel drafter, lossless tree verification, acceptance-length
/// theory, and an abstract cost model.
#[derive(Debug, Parser)]
#[command(name = "speclab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the target model and drafter, then persist both.
    Train {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output path for the target model.
        #[arg(long)]
        model_out: PathBuf,
        /// Output path for the drafter.
        #[arg(long)]
        drafter_out: PathBuf,
    },
    /// Run one experiment and write its report.
    Run {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output path for the report.
        #[arg(long)]
        out: PathBuf,
        /// Write the per-round CSV instead of the structured-text report.
        #[arg(long)]
        csv: bool,
    },
    /// Run all three drafting architectures and write the comparison CSV.
    Compare {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output path for the comparison CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep random acceptance profiles through the ordering theorem and
    /// write the results CSV. Any violated ordering is a constraint error.
    Theory {
        /// Number of random profiles to draw.
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        /// Minimum draft length (inclusive).
        #[arg(long, default_value_t = 2)]
        dmin: usize,
        /// Maximum draft length (inclusive).
        #[arg(long, default_value_t = 12)]
        dmax: usize,
        /// Seed for the profile generator.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output path for the sweep CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a structured-text report to another format.
    Report {
        /// Input structured-text report.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output format: `csv` or `text`.
        #[arg(long)]
        format: String,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Map library errors onto the documented exit codes.
fn exit_code(err: &speclab::Error) -> u8 {
    use speclab::Error;
    match err {
        Error::Config(_)
        | Error::BadParameter { .. }
        | Error::BadWeights(_)
        | Error::BadTemperature(_)
        | Error::BadCosts(_)
        | Error::UnknownSymbol(_)
        | Error::EmptyCorpus
        | Error::CorpusTooShort { .. } => 2,
        Error::ConstraintViolation { .. } | Error::Infeasible(_) => 3,
        Error::Io { .. } | Error::Persist(_) => 4,
    }
}

fn read_file(path: &Path) -> speclab::Result<String> {
    std::fs::read_to_string(path).map_err(|e| speclab::Error::io(path, e))
}

fn write_file(path: &Path, content: &str) -> speclab::Result<()> {
    std::fs::write(path, content).map_err(|e| speclab::Error::io(path, e))
}

fn cmd_train(config: &Path, model_out: &Path, drafter_out: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config)?;
    let prepared = speclab::harness::prepare(&config)?;
    prepared.target.save(model_out)?;
    prepared.drafter.save(drafter_out)?;
    println!(
        "trained on {} tokens ({} held out), vocab size {}",
        prepared.train_len,
        prepared.tokens.len() - prepared.train_len,
        prepared.target.vocab().size()
    );
    println!(
        "target (order {}) -> {}",
        config.target.order,
        model_out.display()
    );
    println!(
        "drafter ({}) -> {}",
        config.drafter.architecture,
        drafter_out.display()
    );
    Ok(())
}

fn cmd_run(config: &Path, out: &Path, csv: bool) -> Result<()> {
    let config = ExperimentConfig::load(config)?;
    let report = run_experiment(&config)?;
    let format = if csv {
        ReportFormat::Csv
    } else {
        ReportFormat::Text
    };
    write_report(&report, format, out)?;
    if report.empty_run {
        println!("empty run (gen_len = 0): no rounds executed");
    } else {
        println!(
            "tau {:.4} over {} rounds ({} tokens); cost speedup {:.4}",
            report.tau,
            report.round_count(),
            report.total_tokens,
            report.cost_speedup
        );
    }
    println!("report -> {}", out.display());
    Ok(())
}

fn cmd_compare(config: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config)?;
    let table = compare_architectures(&config)?;
    let rendered = comparison_csv(&table);
    write_file(out, &rendered)?;
    print!("{rendered}");
    println!("comparison -> {}", out.display());
    Ok(())
}

fn cmd_theory(count: usize, dmin: usize, dmax: usize, seed: u64, out: &Path) -> Result<()> {
    let mut rng = Rng::new(seed);
    let rows = sweep_ordering(count, dmin, dmax, &mut rng)?;
    write_file(out, &theory_csv(&rows))?;
    let violations = rows.iter().filter(|r| !r.ok).count();
    println!(
        "sweep: {} profiles, {} violations -> {}",
        rows.len(),
        violations,
        out.display()
    );
    if violations > 0 {
        return Err(speclab::Error::ConstraintViolation {
            clause: "ordering",
            detail: format!(
                "{violations} of {} profiles violated the ordering theorem",
                rows.len()
            ),
        }
        .into());
    }
    Ok(())
}

fn cmd_report(input: &Path, format: &str, out: &Path) -> Result<()> {
    let format = ReportFormat::parse(format)?;
    let report = parse_report_text(&read_file(input)?)?;
    write_report(&report, format, out)?;
    println!("report -> {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            model_out,
            drafter_out,
        } => cmd_train(&config, &model_out, &drafter_out),
        Command::Run { config, out, csv } => cmd_run(&config, &out, csv),
        Command::Compare { config, out } => cmd_compare(&config, &out),
        Command::Theory {
            count,
            dmin,
            dmax,
            seed,
            out,
        } => cmd_theory(count, dmin, dmax, seed, &out),
        Command::Report { input, format, out } => cmd_report(&input, &format, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<speclab::Error>() {
                Some(lib_err) => exit_code(lib_err),
                None if err.downcast_ref::<std::io::Error>().is_some() => 4,
                None => 1,
            };
            ExitCode::from(code)
        }
    }
}
