//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys mirror the field names of
//! [`FilterConfig`], [`GpHyperparams`] and [`Scenario`]. Unknown keys are an
//! error so typos do not silently fall back to defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use super::metrics::EvalWindow;
use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, GpMeanModel, MeanModels};
use crate::model::{FilterConfig, Heading, Position};
use crate::par::Execution;
use crate::sim::{Environment, ImuErrorModel, Scenario};

#[derive(Debug, Default)]
pub struct KeyValues {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected key = value",
                    i + 1
                )));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", i + 1)));
            }
            values.insert(k.to_owned(), v.trim().to_owned());
        }
        Ok(KeyValues {
            values,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Later values win.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.values.insert(key.into(), value.into());
    }

    pub fn merge(&mut self, other: KeyValues) {
        self.values.extend(other.values);
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some(raw) = self.values.get(key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_owned());
        raw.parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {raw:?}")))
    }

    fn get_into<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn reject_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GpMeanChoice {
    Constant {
        c: f64,
    },
    /// Needs AP positions from the dataset.
    Linear {
        k: f64,
        d: f64,
    },
    /// Needs AP positions from the dataset.
    LogDistance {
        s: f64,
        q: f64,
    },
}

impl GpMeanChoice {
    pub fn build(&self, env: Option<&Environment>) -> Result<MeanModels> {
        let per_ap = |f: &dyn Fn(Position) -> GpMeanModel| -> Result<MeanModels> {
            let env = env.ok_or_else(|| {
                Error::InvalidConfig("gp_mean needs AP positions (aps.jsonl) in the dataset".into())
            })?;
            Ok(MeanModels {
                fallback: GpMeanModel::Constant { c: -80.0 },
                per_ap: env
                    .aps
                    .iter()
                    .map(|ap| (ap.id.clone(), f(ap.pos)))
                    .collect(),
            })
        };
        match *self {
            GpMeanChoice::Constant { c } => Ok(MeanModels::constant(c)),
            GpMeanChoice::Linear { k, d } => per_ap(&|ap_pos| GpMeanModel::Linear { k, d, ap_pos }),
            GpMeanChoice::LogDistance { s, q } => {
                per_ap(&|ap_pos| GpMeanModel::LogDistanceAsPrinted { s, q, ap_pos })
            }
        }
    }
}

/// Everything `run` needs besides the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub filter: FilterConfig,
    pub gp: GpHyperparams,
    pub gp_mean: GpMeanChoice,
    /// Evaluation windows as epoch ranges; `None` derives them from the
    /// dataset's lap metadata.
    pub windows: Option<Vec<EvalWindow>>,
    pub execution: Execution,
    pub start: Option<Position>,
    pub start_heading: Option<Heading>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            filter: FilterConfig::default(),
            gp: GpHyperparams::default(),
            gp_mean: GpMeanChoice::Constant { c: -80.0 },
            windows: None,
            execution: Execution::default(),
            start: None,
            start_heading: None,
        }
    }
}

pub fn parse_windows(s: &str) -> Result<Vec<EvalWindow>> {
    s.split(',')
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(|w| {
            let (a, b) = w.split_once("..").ok_or_else(|| {
                Error::InvalidConfig(format!("window {w:?}: expected start..end"))
            })?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("window {w:?}: bad bound {x:?}")))
            };
            let (start, end) = (parse(a)?, parse(b)?);
            if start >= end {
                return Err(Error::InvalidConfig(format!("window {w:?} is empty")));
            }
            Ok(EvalWindow { start, end })
        })
        .collect()
}

impl RunOptions {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut o = RunOptions::default();
        let f = &mut o.filter;
        kv.get_into("n_particles", &mut f.n_particles)?;
        kv.get_into("sigma_step", &mut f.sigma_step)?;
        kv.get_into("sigma_heading", &mut f.sigma_heading)?;
        kv.get_into("d_rss_thres", &mut f.d_rss_thres)?;
        kv.get_into("d_pos_thres", &mut f.d_pos_thres)?;
        kv.get_into("min_gap_time", &mut f.min_gap_time)?;
        kv.get_into("min_gap_dist", &mut f.min_gap_dist)?;
        kv.get_into("penalty_factor", &mut f.penalty_factor)?;
        kv.get_into("missing_fill_dbm", &mut f.missing_fill_dbm)?;
        kv.get_into("rng_seed", &mut f.rng_seed)?;
        kv.get_into("ess_fraction", &mut f.ess_fraction)?;
        f.validate()?;

        let g = &mut o.gp;
        kv.get_into("signal_variance", &mut g.signal_variance)?;
        kv.get_into("length_scale", &mut g.length_scale)?;
        kv.get_into("noise_variance", &mut g.noise_variance)?;
        kv.get_into("training_radius", &mut g.training_radius)?;
        g.validate()?;

        let kind: String = kv.get("gp_mean")?.unwrap_or_else(|| "constant".into());
        o.gp_mean = match kind.as_str() {
            "constant" => GpMeanChoice::Constant {
                c: kv.get("gp_mean_c")?.unwrap_or(-80.0),
            },
            "linear" => GpMeanChoice::Linear {
                k: kv.get("gp_mean_k")?.unwrap_or(-1.0),
                d: kv.get("gp_mean_d")?.unwrap_or(-50.0),
            },
            "log_distance" => GpMeanChoice::LogDistance {
                s: kv.get("gp_mean_s")?.unwrap_or(-50.0),
                q: kv.get("gp_mean_q")?.unwrap_or(1.0),
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "gp_mean: expected constant, linear or log_distance, got {other:?}"
                )))
            }
        };

        if let Some(w) = kv.get::<String>("windows")? {
            o.windows = Some(parse_windows(&w)?);
        }
        if let Some(e) = kv.get::<String>("execution")? {
            o.execution = match e.as_str() {
                "parallel" => Execution::Parallel,
                "sequential" => Execution::Sequential,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "execution: expected parallel or sequential, got {other:?}"
                    )))
                }
            };
        }
        o.start = match (kv.get::<f64>("start_x")?, kv.get::<f64>("start_y")?) {
            (Some(x), Some(y)) => Some(Position::new(x, y)),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidConfig(
                    "start_x and start_y go together".into(),
                ))
            }
        };
        o.start_heading = kv.get::<f64>("start_heading")?.map(Heading);
        Ok(o)
    }
}

pub fn scenario_from_kv(kv: &KeyValues) -> Result<Scenario> {
    let mut s = Scenario::default();
    kv.get_into("width", &mut s.width)?;
    kv.get_into("height", &mut s.height)?;
    kv.get_into("laps", &mut s.laps)?;
    kv.get_into("step_length", &mut s.step_length)?;
    kv.get_into("step_period", &mut s.step_period)?;
    kv.get_into("scan_period", &mut s.scan_period)?;
    kv.get_into("scan_phase", &mut s.scan_phase)?;
    let imu: &mut ImuErrorModel = &mut s.imu;
    kv.get_into("step_noise_sigma", &mut imu.step_noise_sigma)?;
    kv.get_into("heading_noise_sigma", &mut imu.heading_noise_sigma)?;
    kv.get_into("heading_bias_per_step", &mut imu.heading_bias_per_step)?;
    kv.get_into("n_aps", &mut s.n_aps)?;
    kv.get_into("ap_margin", &mut s.ap_margin)?;
    kv.get_into("tx_power_dbm", &mut s.tx_power_dbm)?;
    kv.get_into("path_loss_exponent", &mut s.path_loss_exponent)?;
    kv.get_into("shadowing_sigma", &mut s.shadowing_sigma)?;
    kv.get_into("detection_floor", &mut s.detection_floor)?;
    kv.get_into("env_seed", &mut s.env_seed)?;
    kv.get_into("seed", &mut s.seed)?;
    if !(s.width > 0.0 && s.height > 0.0) || s.laps == 0 {
        return Err(Error::InvalidConfig(
            "width, height and laps must be positive".into(),
        ));
    }
    Ok(s)
}
