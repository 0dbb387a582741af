use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sigscore::error::{Error, Result};
use sigscore::experiments::{export_dependency, export_focus, export_power, DependencyConfig, ExportShape, FocusConfig};
use sigscore::harness::{default_sweep_quantiles, emit_report, run_eval, EvalManifest};
use sigscore::plot::heatmap;
use sigscore::powerlab::{power_grid, Metric, PowerOptions, DEFAULT_PERMUTATIONS};
use sigscore::synthgen::{ScenarioKind, ScenarioSpec};

#[derive(Parser)]
#[command(name = "sigscore", version, about = "Signature-kernel scoring of probabilistic multivariate forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every model in a manifest and write report.json plus CSV tables.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Censoring quantile (overrides the manifest).
        #[arg(long)]
        quantile: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate a seeded subset of this many windows.
        #[arg(long)]
        subsample: Option<usize>,
        /// One two-sample comparison per model over all windows.
        #[arg(long)]
        pool_windows: bool,
        /// Also recompute CSig over a grid of censoring quantiles.
        #[arg(long)]
        sweep: bool,
    },
    /// Write a synthetic dataset and its manifest.
    Synth {
        #[arg(long, value_enum)]
        experiment: Experiment,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Truth windows (dependency, focus).
        #[arg(long, default_value_t = 16)]
        windows: usize,
        /// Forecast samples per window (dependency, focus).
        #[arg(long, default_value_t = 32)]
        samples: usize,
        /// Vector dimension (power).
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// Vectors per set (power).
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Permutation-test power over a grid of dimensions and sample sizes.
    Power {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value = "sig")]
        metric: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        perms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario discrepancy (defaults per scenario).
        #[arg(long)]
        param: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Dependency,
    Focus,
    Power,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SIGSCORE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("SIGSCORE_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn eval(
    manifest: &Path,
    out: &Path,
    quantile: Option<f64>,
    seed: Option<u64>,
    subsample: Option<usize>,
    pool_windows: bool,
    sweep: bool,
) -> Result<()> {
    let mut manifest = EvalManifest::load(manifest)?;
    let config = &mut manifest.config;
    if let Some(q) = quantile {
        config.censor_quantile = q;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if subsample.is_some() {
        config.subsample = subsample;
    }
    config.pool_windows |= pool_windows;
    if sweep && config.sweep_quantiles.is_empty() {
        config.sweep_quantiles = default_sweep_quantiles();
    }
    let report = run_eval(&manifest)?;
    for path in emit_report(&report, out)? {
        log::info!("wrote {}", path.display());
    }
    print!("{}", report.scores_csv());
    Ok(())
}

fn synth(experiment: Experiment, out: &Path, seed: u64, windows: usize, samples: usize, dim: usize, size: usize) -> Result<()> {
    let shape = ExportShape {
        windows,
        samples,
        seed,
        ..ExportShape::default()
    };
    let written = match experiment {
        Experiment::Dependency => vec![export_dependency(out, &DependencyConfig::default(), &shape)?],
        Experiment::Focus => vec![export_focus(out, &FocusConfig::default(), &shape)?],
        Experiment::Power => export_power(out, dim, size, seed)?,
    };
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn power(
    scenario: &str,
    dims: &[usize],
    sizes: &[usize],
    reps: usize,
    metric: &str,
    alpha: f64,
    perms: usize,
    seed: u64,
    param: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let mut spec = ScenarioSpec::new(ScenarioKind::parse(scenario)?);
    if let Some(p) = param {
        spec = spec.with_param(p);
    }
    let opts = PowerOptions {
        metric: Metric::parse(metric)?,
        alpha,
        permutations: perms,
        seed,
        ..PowerOptions::default()
    };
    let grid = power_grid(&spec, dims, sizes, reps, &opts)?;
    let csv = grid.to_csv();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write(&dir.join("power.csv"), &csv)?;
        let svg = heatmap(
            &format!("{} power ({metric}, alpha {alpha})", spec.kind.name()),
            "d",
            "m",
            &grid.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
            &grid.sizes.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            &grid.power,
        );
        write(&dir.join("power.svg"), &svg)?;
    }
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Eval {
            manifest,
            out,
            quantile,
            seed,
            subsample,
            pool_windows,
            sweep,
        } => eval(&manifest, &out, quantile, seed, subsample, pool_windows, sweep),
        Command::Synth {
            experiment,
            out,
            seed,
            windows,
            samples,
            dim,
            size,
        } => synth(experiment, &out, seed, windows, samples, dim, size),
        Command::Power {
            scenario,
            dims,
            sizes,
            reps,
            metric,
            alpha,
            perms,
            seed,
            param,
            out,
        } => power(&scenario, &dims, &sizes, reps, &metric, alpha, perms, seed, param, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
