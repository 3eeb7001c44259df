use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lrmpc::harness::commands::{self, format_summary};
use lrmpc::harness::ExperimentConfig;
use lrmpc::{Error, Result};

#[derive(Parser)]
#[command(name = "lrmpc", about = "Learned-region tube MPC experiments")]
struct Cli {
    /// JSON experiment config; the built-in cube-root experiment when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run and dataset seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the offline dataset.
    GenerateData,
    /// Nonparametric estimate and bootstrap band over the query grid.
    Estimate {
        /// Existing dataset CSV; collected from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Closed-loop comparison of the configured controllers.
    Compare,
    /// Proposed controller against the naive controller at every tolerance.
    SweepNaive,
    /// Property suites.
    Selftest,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenerateData => {
            let r = commands::generate_data(&cfg, &out)?;
            println!("wrote {} records to {}", r.records, r.dataset_path.display());
            Ok(())
        }
        Command::Estimate { dataset } => {
            let r = commands::estimate(&cfg, dataset.as_deref(), &out)?;
            println!(
                "{} query points, max band width {:.4}, max truth excess {:.4}",
                r.bands.len(),
                r.max_width(),
                r.max_truth_excess()
            );
            println!("wrote {} and {}", r.csv_path.display(), r.svg_path.display());
            Ok(())
        }
        Command::Compare => {
            let r = commands::compare(&cfg, &out)?;
            print!("{}", format_summary(&r.summary));
            println!("wrote {} traces under {}", r.trace_paths.len(), out.display());
            Ok(())
        }
        Command::SweepNaive => {
            let r = commands::sweep_naive(&cfg, &out)?;
            print!("{}", format_summary(&r.compare.summary));
            if let Some(ratio) = r.cost_ratio {
                println!("smallest-tolerance cost / proposed cost = {ratio:.3}");
            }
            Ok(())
        }
        Command::Selftest => {
            let r = commands::selftest(&cfg, cli.out.as_deref())?;
            for s in &r.suites {
                println!("{}", s.line());
            }
            r.into_result().map(|_| ())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
