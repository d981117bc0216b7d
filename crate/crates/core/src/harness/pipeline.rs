//! Runs one positioning method over a dataset and records a [`RunReport`].

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunOptions;
use super::dataset::Dataset;
use super::metrics::{epoch_errors, lap_tail_windows, window_mean, EvalWindow};
use crate::error::{Error, Result};
use crate::filter::{dead_reckon, Ensemble};
use crate::gp::{gp_update_weights, GpHyperparams};
use crate::model::{FilterConfig, Position};
use crate::sync::align_observations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Noise-free integration of the step stream.
    Raw,
    /// Trajectory particle filter with RSS loop-closure weighting.
    Proposed,
    /// Same particle filter weighted by GP likelihoods.
    Gp,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Raw => "raw",
            Method::Proposed => "proposed",
            Method::Gp => "gp",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Method::Raw),
            "proposed" => Ok(Method::Proposed),
            "gp" => Ok(Method::Gp),
            _ => Err(Error::InvalidInput(format!(
                "unknown method {s:?} (expected raw, proposed or gp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
}

impl EpochRecord {
    pub fn position(&self) -> Position {
        Position::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowError {
    pub start: usize,
    pub end: usize,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpHyperparams>,
    /// Online estimate per epoch; epoch 0 is the start.
    pub epochs: Vec<EpochRecord>,
    /// Highest-weight particle's full trajectory after the last epoch.
    pub corrected_trajectory: Vec<Position>,
    pub windows: Vec<WindowError>,
    pub resample_count: usize,
    pub degeneracy_events: usize,
    /// GP training samples used per epoch, summed over particles and APs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub training_samples: Vec<usize>,
    /// Engine wall-clock time, alignment included, I/O excluded.
    pub wall_clock_s: f64,
    /// Engine time per step epoch (index 0 is step 1).
    pub epoch_seconds: Vec<f64>,
}

impl RunReport {
    pub fn trajectory(&self) -> Vec<Position> {
        self.epochs.iter().map(EpochRecord::position).collect()
    }

    pub fn errors(&self) -> Option<Vec<f64>> {
        self.epochs.iter().map(|e| e.error).collect()
    }

    /// Copy with every timing field zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_clock_s: 0.0,
            epoch_seconds: vec![0.0; self.epoch_seconds.len()],
            ..self.clone()
        }
    }
}

/// Aligns scans to steps, runs `method` over every epoch and scores the
/// result against ground truth when the dataset has it.
pub fn run_pipeline(ds: &Dataset, opts: &RunOptions, method: Method) -> Result<RunReport> {
    let (mut start, mut heading) = ds.start_pose();
    if let Some(s) = opts.start {
        start = s;
    }
    if let Some(h) = opts.start_heading {
        heading = h;
    }
    if let Some(truth) = &ds.truth {
        if truth.positions.len() != ds.steps.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "truth has {} records, expected steps + 1 = {}",
                truth.positions.len(),
                ds.steps.len() + 1
            )));
        }
    }
    let t0 = ds
        .truth
        .as_ref()
        .and_then(|t| t.times.first().copied())
        .unwrap_or(0.0);

    let clock = Instant::now();
    let epochs = align_observations(&ds.steps, &ds.scans)?;
    let mut epoch_seconds = Vec::with_capacity(epochs.len());
    let mut estimates = Vec::with_capacity(epochs.len() + 1);
    let mut training_samples = Vec::new();
    estimates.push(start);

    let (corrected, resample_count, degeneracy_events) = match method {
        Method::Raw => {
            let traj = dead_reckon(start, heading, &ds.steps);
            epoch_seconds.resize(ds.steps.len(), 0.0);
            estimates = traj.clone();
            (traj, 0, 0)
        }
        Method::Proposed | Method::Gp => {
            let means = match method {
                Method::Gp => Some(opts.gp_mean.build(ds.env.as_ref())?),
                _ => None,
            };
            let mut ens = Ensemble::initialize(start, heading, opts.filter.clone())?
                .with_execution(opts.execution);
            for epoch in &epochs {
                let tick = Instant::now();
                match &means {
                    None => {
                        ens.step(epoch)?;
                    }
                    Some(means) => {
                        ens.propagate(epoch)?;
                        let mut used = 0;
                        if let Some(rss) = &epoch.rss {
                            used =
                                gp_update_weights(&mut ens, rss, &opts.gp, means)?.training_samples;
                        }
                        ens.maybe_resample();
                        training_samples.push(used);
                    }
                }
                estimates.push(ens.estimate().0);
                epoch_seconds.push(tick.elapsed().as_secs_f64());
            }
            let best = ens.estimate().1.trajectory.clone();
            (best, ens.resample_count(), ens.degeneracy_events())
        }
    };
    let wall_clock_s = clock.elapsed().as_secs_f64();

    let mut times = Vec::with_capacity(estimates.len());
    times.push(t0);
    times.extend(ds.steps.iter().map(|s| s.t));

    let errors = match &ds.truth {
        Some(truth) => Some(epoch_errors(&estimates, &truth.positions)?),
        None => None,
    };
    let windows: Vec<EvalWindow> = match (&opts.windows, ds.meta.steps_per_lap) {
        (Some(w), _) => w.clone(),
        (None, Some(spl)) => lap_tail_windows(spl, estimates.len()),
        (None, None) => Vec::new(),
    };
    let window_errors = match &errors {
        Some(errs) => windows
            .iter()
            .map(|w| {
                Ok(WindowError {
                    start: w.start,
                    end: w.end,
                    mean_error: window_mean(errs, w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let epochs = estimates
        .iter()
        .enumerate()
        .map(|(k, p)| EpochRecord {
            epoch: k,
            t: times[k],
            x: p.x,
            y: p.y,
            error: errors.as_ref().map(|e| e[k]),
        })
        .collect();

    let uses_filter = method != Method::Raw;
    Ok(RunReport {
        method,
        seed: opts.filter.rng_seed,
        filter: uses_filter.then(|| opts.filter.clone()),
        gp: (method == Method::Gp).then_some(opts.gp),
        epochs,
        corrected_trajectory: corrected,
        windows: window_errors,
        resample_count,
        degeneracy_events,
        training_samples,
        wall_clock_s,
        epoch_seconds,
    })
}
