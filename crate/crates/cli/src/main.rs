//! `metafuse` command line.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the
//! `--config` TOML file, command-line flags. `METAFUSE_OUTPUT_ROOT` (or
//! `--output-root`) prefixes every relative output path.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on pipeline
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metafuse::eval::split::SplitMode;
use metafuse::pipeline::{self, RunConfig};
use metafuse::Error;

#[derive(Parser, Debug)]
#[command(name = "metafuse", version, about = "Multimodal metastasis prediction pipeline")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed for generation, splits, training and explanations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid search (0 = logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Prefix for relative output paths.
    #[arg(long, global = true, env = "METAFUSE_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Tripod2a,
    Nested,
}

#[derive(Args, Debug, Default)]
struct CohortArgs {
    /// Cohort shape: breast-like, colon-like, lung-like or prostate-like.
    #[arg(long)]
    fixture: Option<String>,
    /// Number of patients.
    #[arg(long)]
    n: Option<usize>,
    /// Share of positive patients.
    #[arg(long)]
    pos_frac: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort file.
    Generate {
        #[command(flatten)]
        cohort: CohortArgs,
        /// Output file.
        #[arg(short, long, default_value = "cohort.jsonl")]
        out: PathBuf,
    },
    /// Select, train and save the unimodal and fusion models.
    Train {
        #[command(flatten)]
        cohort: CohortArgs,
        /// Existing cohort file instead of generating one.
        #[arg(long)]
        cohort_file: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Add KNN to the static and early-fusion grids.
        #[arg(long)]
        include_knn: bool,
        /// Run directory.
        #[arg(long, default_value = "run")]
        run: PathBuf,
    },
    /// Test metrics, rank statistics and the CD diagram of a trained run.
    Evaluate {
        #[arg(long, default_value = "run")]
        run: PathBuf,
    },
    /// SHAP attributions, perturbation curves and the censored re-test.
    Explain {
        #[arg(long, default_value = "run")]
        run: PathBuf,
    },
    /// Markdown summary of a run's tables.
    Report {
        #[arg(long, default_value = "run")]
        run: PathBuf,
    },
}

fn under_root(root: &Option<PathBuf>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

fn base_config(cli: &Cli) -> metafuse::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn apply_cohort(cfg: &mut RunConfig, c: &CohortArgs) -> metafuse::Result<()> {
    if let Some(f) = &c.fixture {
        cfg.cohort.fixture = Some(f.clone());
    }
    // explicit sizes win over the fixture shape, so resolve it first
    let mut resolved = cfg.clone().resolve()?;
    if let Some(n) = c.n {
        resolved.cohort.generator.n_patients = n;
    }
    if let Some(p) = c.pos_frac {
        resolved.cohort.generator.positive_fraction = p;
    }
    resolved.validate()?;
    *cfg = resolved;
    Ok(())
}

fn run(cli: Cli) -> metafuse::Result<()> {
    let root = cli.output_root.clone();
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::Generate { cohort, out } => {
            apply_cohort(&mut cfg, cohort)?;
            let path = under_root(&root, out);
            let n = pipeline::cmd_generate(&cfg, &path)?;
            println!("{n} patients -> {}", path.display());
        }
        Command::Train {
            cohort,
            cohort_file,
            mode,
            include_knn,
            run,
        } => {
            if let Some(f) = cohort_file {
                cfg.cohort.file = Some(f.clone());
            }
            if let Some(m) = mode {
                cfg.split.mode = match m {
                    Mode::Tripod2a => SplitMode::Tripod2a,
                    Mode::Nested => SplitMode::Nested,
                };
            }
            cfg.grid.include_knn |= include_knn;
            apply_cohort(&mut cfg, cohort)?;
            let dir = under_root(&root, run);
            let m = pipeline::cmd_train(&cfg, &dir)?;
            println!("trained {} fold(s) -> {}", m.folds.len(), dir.display());
        }
        Command::Evaluate { run } => {
            let dir = under_root(&root, run);
            for (name, r) in pipeline::cmd_evaluate(&dir)? {
                println!("{name:<16} AUPRC {:.3}  AUROC {:.3}", r.auprc, r.auroc);
            }
        }
        Command::Explain { run } => {
            let dir = under_root(&root, run);
            let s = pipeline::cmd_explain(&dir)?;
            let g = s.global_relevance;
            println!(
                "relevance static {:.3} labs {:.3} meds {:.3} text {:.3}",
                g[0], g[1], g[2], g[3]
            );
            for (name, r) in &s.censoring {
                println!("{name:<16} AUROC {:.3}", r.auroc);
            }
        }
        Command::Report { run } => {
            let dir = under_root(&root, run);
            println!("{}", pipeline::cmd_report(&dir)?.display());
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
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
