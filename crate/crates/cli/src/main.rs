use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use pdrloop::gp::GpMeanModel;
use pdrloop::harness::config::{parse_windows, scenario_from_kv};
use pdrloop::harness::metrics::lap_tail_windows;
use pdrloop::harness::plot::training_from_track;
use pdrloop::harness::{
    compute_metrics, emit_plot_data, gp_grid, load_dataset, run_pipeline, write_dataset, Dataset,
    EvalWindow, GridSpec, KeyValues, Method, RunOptions, RunReport,
};
use pdrloop::{align_observations, ApId};

/// Overrides `rng_seed` for `run` and `seed` for `simulate`.
const SEED_ENV: &str = "PDRLOOP_SEED";

#[derive(Parser)]
#[command(
    name = "pdrloop",
    version,
    about = "IMU step + WiFi loop-closure particle filter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a walk and write it as a dataset directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run one method over a dataset and write a JSON report.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print per-window mean errors of reports against a dataset's truth.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        report: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Epoch ranges like `75..100,175..200`; defaults to the report's.
        #[arg(long)]
        windows: Option<String>,
    },
    /// Write trajectory, error and optional GP map CSVs.
    PlotData {
        #[arg(long, required = true, num_args = 1..)]
        report: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Needed for truth.csv and the GP map.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// AP id whose GP surface is mapped from the first report's
        /// corrected trajectory.
        #[arg(long, requires = "dataset")]
        gp_map: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        #[arg(long, default_value_t = 5.0)]
        margin: f64,
    },
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key = value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set n_particles=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Raw,
    Proposed,
    Gp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Raw => Method::Raw,
            MethodArg::Proposed => Method::Proposed,
            MethodArg::Gp => Method::Gp,
        }
    }
}

impl ConfigArgs {
    /// File values, then the seed env var into `seed_key`, then `--set`.
    fn key_values(&self, seed_key: &str) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            info!("{SEED_ENV}={seed} overrides {seed_key}");
            kv.set(seed_key, seed);
        }
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set {o:?}: expected KEY=VALUE");
            };
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }
}

fn simulate(out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let kv = cfg.key_values("seed")?;
    let scenario = scenario_from_kv(&kv)?;
    kv.reject_unused()?;
    let walk = scenario.generate()?;
    let ds = Dataset::from_simulation(&walk, scenario.laps);
    let files = write_dataset(out, &ds)?;
    println!(
        "seed {} env_seed {}: {} steps, {} scans, {} APs",
        scenario.seed,
        scenario.env_seed,
        ds.steps.len(),
        ds.scans.len(),
        walk.env.aps.len()
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn load(dir: &Path) -> Result<Dataset> {
    let ds = load_dataset(dir)?;
    for w in &ds.warnings {
        warn!("{w}");
    }
    Ok(ds)
}

fn run(dataset: &Path, method: Method, out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let kv = cfg.key_values("rng_seed")?;
    let opts = RunOptions::from_kv(&kv)?;
    kv.reject_unused()?;
    let ds = load(dataset)?;
    let report = run_pipeline(&ds, &opts, method)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{method}: seed {} epochs {} engine {:.3} s",
        report.seed,
        report.epochs.len(),
        report.wall_clock_s
    );
    for w in &report.windows {
        println!(
            "  window {}..{}: mean error {:.3} m",
            w.start, w.end, w.mean_error
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn eval(reports: &[PathBuf], dataset: &Path, windows: Option<&str>) -> Result<()> {
    let ds = load(dataset)?;
    let Some(truth) = &ds.truth else {
        bail!("{} has no truth.jsonl", dataset.display());
    };
    let explicit = windows.map(parse_windows).transpose()?;
    println!(
        "{:<10} {:>6} {:>8} {:>8} {:>12} {:>10}",
        "method", "seed", "start", "end", "mean_err_m", "engine_s"
    );
    for path in reports {
        let r = read_report(path)?;
        let windows: Vec<EvalWindow> = match (&explicit, r.windows.is_empty()) {
            (Some(w), _) => w.clone(),
            (None, false) => r
                .windows
                .iter()
                .map(|w| EvalWindow {
                    start: w.start,
                    end: w.end,
                })
                .collect(),
            (None, true) => match ds.meta.steps_per_lap {
                Some(spl) => lap_tail_windows(spl, r.epochs.len()),
                None => vec![EvalWindow {
                    start: 0,
                    end: r.epochs.len(),
                }],
            },
        };
        let means = compute_metrics(&r.trajectory(), &truth.positions, &windows)?;
        for (w, m) in windows.iter().zip(means) {
            println!(
                "{:<10} {:>6} {:>8} {:>8} {:>12.3} {:>10.3}",
                r.method.to_string(),
                r.seed,
                w.start,
                w.end,
                m,
                r.wall_clock_s
            );
        }
    }
    Ok(())
}

fn plot_data(
    reports: &[PathBuf],
    out: &Path,
    dataset: Option<&Path>,
    gp_ap: Option<&str>,
    resolution: f64,
    margin: f64,
) -> Result<()> {
    let reports = reports
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>>>()?;
    let ds = dataset.map(load).transpose()?;
    let truth = ds
        .as_ref()
        .and_then(|d| d.truth.as_ref())
        .map(|t| t.positions.as_slice());

    let map = match (gp_ap, &ds) {
        (Some(ap), Some(ds)) => {
            let r = &reports[0];
            let hp = r.gp.unwrap_or_default();
            let epochs = align_observations(&ds.steps, &ds.scans)?;
            let train = training_from_track(&r.corrected_trajectory, &epochs, &ApId::from(ap));
            if train.is_empty() {
                bail!(
                    "AP {ap:?} never heard in {}",
                    dataset.unwrap_or(Path::new("")).display()
                );
            }
            let mean = GpMeanModel::Constant {
                c: train.iter().map(|s| s.rss).sum::<f64>() / train.len() as f64,
            };
            let spec = GridSpec::around(&r.corrected_trajectory, margin, resolution)?;
            Some(gp_grid(&train, &hp, &mean, spec)?)
        }
        _ => None,
    };
    for f in emit_plot_data(out, &reports, truth, map.as_deref())? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { out, cfg } => simulate(out, cfg),
        Command::Run {
            dataset,
            method,
            out,
            cfg,
        } => run(dataset, (*method).into(), out, cfg),
        Command::Eval {
            report,
            dataset,
            windows,
        } => eval(report, dataset, windows.as_deref()),
        Command::PlotData {
            report,
            out,
            dataset,
            gp_map,
            resolution,
            margin,
        } => plot_data(
            report,
            out,
            dataset.as_deref(),
            gp_map.as_deref(),
            *resolution,
            *margin,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
