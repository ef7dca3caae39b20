use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use reglab::problems::REGISTRY;
use reglab_cli::records::{fit_records, read_records};
use reglab_cli::{run, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "reglab", version, about = "Empirical metric-regularity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the sample loop (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the built-in problems.
    List {
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Only problems of this module.
        #[arg(long)]
        module: Option<String>,
    },
    /// Refit a stored records.csv.
    Fit {
        records: PathBuf,
        #[arg(long, default_value_t = reglab::geneq::DEFAULT_MIN_DIST)]
        min_dist: f64,
    },
}

fn run_command(config: PathBuf, out: Option<PathBuf>, jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    let start = Instant::now();
    let output = run(&cfg)?;
    output.write()?;
    for w in &output.report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{} {} finished in {:.3} s; outputs in {}",
        cfg.problem_id,
        cfg.experiment.name(),
        start.elapsed().as_secs_f64(),
        cfg.output_dir.display()
    );
    if let Some(f) = &output.report.fit {
        println!("kappa = {:e}, beta = {:.6}, r2 = {:.6}, n = {}", f.kappa, f.beta, f.r_squared, f.n_points);
    }
    Ok(())
}

fn list(format: Option<Format>, module: Option<String>) {
    let rows = REGISTRY
        .iter()
        .filter(|(_, m, _)| module.as_deref().is_none_or(|want| want == *m));
    match format {
        None => {
            for (id, m, d) in rows {
                println!("{id:<26} {m:<14} {d}");
            }
        }
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            let _ = w.write_record(["id", "module", "description"]);
            for (id, m, d) in rows {
                let _ = w.write_record([id, m, d]);
            }
            let _ = w.flush();
        }
        Some(Format::Json) => {
            for (id, m, d) in rows {
                println!("{}", serde_json::json!({"id": id, "module": m, "description": d}));
            }
        }
    }
}

fn fit(records: PathBuf, min_dist: f64) -> Result<(), CliError> {
    let recs = read_records(&records)?;
    let f = fit_records(&recs, min_dist)?;
    println!("kappa = {:.16e}", f.kappa);
    println!("beta = {:.16e}", f.beta);
    println!("r_squared = {:.16e}", f.r_squared);
    println!("n_points = {}", f.n_points);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, jobs } => run_command(config, out, jobs),
        Command::List { format, module } => {
            list(format, module);
            Ok(())
        }
        Command::Fit { records, min_dist } => fit(records, min_dist),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
