use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pinlab::lab::{run_experiment, Experiment, ExperimentConfig, Volumes, CONFIG_SCHEMA};

/// Runs a pinlab experiment and reports one line per criterion.
///
/// Flags override the fields of the configuration file.
#[derive(Debug, Parser)]
#[command(name = "pinlab", version)]
struct Cli {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    #[arg(long, conflicts_with = "eps_rel")]
    eps: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    /// Volume(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_r: Option<f64>,
    #[arg(long)]
    grid_m: Option<usize>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Kernel cache directory (default: $PINLAB_CACHE_DIR).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Write this many sample paths per volume to `paths/`.
    #[arg(long)]
    dump_paths: Option<usize>,
    /// Print the configuration schema and exit.
    #[arg(long)]
    print_schema: bool,
}

fn config(cli: Cli) -> pinlab::Result<ExperimentConfig> {
    let missing = |f: &str| pinlab::Error::Config { path: f.into(), msg: "required (flag or config file)".into() };
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::new(
            cli.experiment.ok_or_else(|| missing("experiment"))?,
            cli.seed.ok_or_else(|| missing("seed"))?,
        ),
    };
    if let Some(e) = cli.experiment {
        cfg.experiment = e;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.eps {
        cfg.eps = Some(e);
        cfg.eps_rel = None;
    }
    if let Some(e) = cli.eps_rel {
        cfg.eps_rel = Some(e);
        cfg.eps = None;
    }
    if let Some(n) = cli.n {
        cfg.n = Some(Volumes::Many(n));
    }
    if let Some(r) = cli.replicas {
        cfg.replicas = Some(r);
    }
    if let Some(r) = cli.grid_r {
        cfg.grid.r = Some(r);
    }
    if let Some(m) = cli.grid_m {
        cfg.grid.m = m;
    }
    if let Some(n) = cli.nmax {
        cfg.nmax = n;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(c) = cli.cache_dir {
        cfg.cache_dir = Some(c);
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(d) = cli.dump_paths {
        cfg.dump_paths = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_schema {
        print!("{CONFIG_SCHEMA}");
        return ExitCode::SUCCESS;
    }
    let result = config(cli).and_then(|cfg| run_experiment(&cfg).map(|r| (cfg, r)));
    match result {
        Ok((cfg, report)) => {
            for c in &report.criteria {
                println!("{c}");
            }
            println!("{}: results in {}", report.experiment.name(), cfg.out.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
