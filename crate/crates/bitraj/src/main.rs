use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bitraj::config::{parse_config, LoadedConfig};
use bitraj::runner::{self, SuiteOptions};
use bitraj::Error;

#[derive(Parser)]
#[command(
    name = "bitraj",
    about = "Multi-time measurement probabilities and complex bi-probability \
             distributions for finite-dimensional quantum systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite (table properties, phenomenology, composite
    /// and master identities) on seeded random instances plus any
    /// experiments defined in the config; writes report.json.
    Check {
        /// optional run configuration (JSON)
        #[arg(long)]
        config: Option<PathBuf>,
        /// seed for the random-instance generator
        #[arg(long)]
        seed: Option<u64>,
        /// restrict the random suite to one Hilbert space dimension
        #[arg(long)]
        dim: Option<usize>,
        /// maximum schedule length for the random suite
        #[arg(long)]
        n: Option<usize>,
        /// base grid for the convergence ladders (runs m, 2m, 4m, 8m)
        #[arg(long)]
        grid: Option<usize>,
        /// equality tolerance override
        #[arg(long, value_name = "X")]
        tol_equality: Option<f64>,
        /// PSD tolerance override
        #[arg(long, value_name = "X")]
        tol_psd: Option<f64>,
        /// output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run one named experiment from the config; writes <name>.json and
    /// any convergence CSVs.
    Experiment {
        /// experiment name as defined in the config
        name: String,
        #[arg(long)]
        config: PathBuf,
        /// override the repetition count (e.g. Zeno n)
        #[arg(long)]
        n: Option<usize>,
        /// override the base convergence grid
        #[arg(long)]
        grid: Option<usize>,
        /// output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Emit the bi-probability table of every configured schedule as CSV.
    Table {
        #[arg(long)]
        config: PathBuf,
        /// output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<LoadedConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e.to_string()))?;
    parse_config(&text)
}

fn write_artifact(out: &Path, filename: &str, contents: &str) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io(e.to_string()))?;
    let path = out.join(filename);
    let tmp = out.join(format!(".{filename}.tmp"));
    std::fs::write(&tmp, contents).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(path)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Check { config, seed, dim, n, grid, tol_equality, tol_psd, out } => {
            let cfg = config.as_deref().map(load_config).transpose()?;
            let mut opts = SuiteOptions::default();
            if let Some(cfg) = &cfg {
                opts.seed = cfg.seed;
                opts.tol_equality = cfg.tol_equality;
                opts.tol_psd = cfg.tol_psd;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(d) = dim {
                opts.dims = vec![d];
            }
            if let Some(max_n) = n {
                opts.ns = (1..=max_n.max(1)).collect();
            }
            if let Some(g) = grid {
                opts.convergence_grids = vec![g, 2 * g, 4 * g, 8 * g];
            }
            if let Some(t) = tol_equality {
                opts.tol_equality = t;
            }
            if let Some(t) = tol_psd {
                opts.tol_psd = t;
            }
            let report = runner::run_check(cfg.as_ref(), &opts)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Io(e.to_string()))?;
            let path = write_artifact(&out, "report.json", &json)?;
            for r in &report.results {
                println!(
                    "{} {} deviation={:e} threshold={:e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.deviation,
                    r.threshold
                );
            }
            println!(
                "{} checks, {} failed; report written to {}",
                report.results.len(),
                report.results.iter().filter(|r| !r.passed).count(),
                path.display()
            );
            Ok(report.passed)
        }
        Command::Experiment { name, config, n, grid, out } => {
            let cfg = load_config(&config)?;
            let (reports, artifacts) = runner::run_experiment(&cfg, &name, n, grid)?;
            let json = serde_json::to_string_pretty(&reports)
                .map_err(|e| Error::Io(e.to_string()))?;
            write_artifact(&out, &format!("{name}.json"), &json)?;
            for artifact in &artifacts {
                write_artifact(&out, &artifact.filename, &artifact.contents)?;
            }
            println!("{json}");
            Ok(reports.iter().all(|r| r.passed))
        }
        Command::Table { config, out } => {
            let cfg = load_config(&config)?;
            let artifacts = runner::run_table(&cfg)?;
            for artifact in &artifacts {
                let path = write_artifact(&out, &artifact.filename, &artifact.contents)?;
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
