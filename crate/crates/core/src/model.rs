//! Domain types shared across the filter, the GP baseline and the simulator,
//! plus the RSS-space metric.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weakest representable RSS. Missing readings are filled with this value and
/// ingested readings below it are clamped up to it.
pub const RSS_FLOOR_DBM: f64 = -110.0;
pub const RSS_CEIL_DBM: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Heading in radians, kept unwrapped. Use [`Heading::approx_eq`] for
/// comparisons modulo a full turn.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Heading(pub f64);

impl Heading {
    pub fn radians(self) -> f64 {
        self.0
    }

    /// Wrapped into `(-pi, pi]`.
    pub fn wrapped(self) -> f64 {
        wrap_angle(self.0)
    }

    pub fn unit(self) -> (f64, f64) {
        let (s, c) = self.0.sin_cos();
        (c, s)
    }

    pub fn approx_eq(self, other: Heading, tol: f64) -> bool {
        wrap_angle(self.0 - other.0).abs() <= tol
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > std::f64::consts::PI {
        w - TAU
    } else {
        w
    }
}

/// One detected step from the foot-mounted IMU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMeasurement {
    pub t: f64,
    pub delta_l: f64,
    pub delta_theta: f64,
}

/// Opaque access-point identifier (SSID, MAC, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApId(pub String);

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ApId {
    fn from(s: &str) -> Self {
        ApId(s.to_owned())
    }
}

impl From<String> for ApId {
    fn from(s: String) -> Self {
        ApId(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RssReading {
    pub ap_id: ApId,
    pub rss_dbm: f64,
}

/// Clamps an RSS value into the representable range. Returns the clamped
/// value and whether clamping happened.
pub fn clamp_rss(rss_dbm: f64) -> (f64, bool) {
    let c = rss_dbm.clamp(RSS_FLOOR_DBM, RSS_CEIL_DBM);
    (c, c != rss_dbm)
}

/// One WiFi scan: every AP heard, at most once each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RssVector {
    pub t: f64,
    readings: BTreeMap<ApId, f64>,
}

impl RssVector {
    pub fn new(t: f64) -> Self {
        RssVector {
            t,
            readings: BTreeMap::new(),
        }
    }

    /// Builds a scan from readings, clamping each value into `[-110, 0]` dBm.
    /// A repeated AP id is an error.
    pub fn from_readings<I>(t: f64, readings: I) -> Result<Self>
    where
        I: IntoIterator<Item = RssReading>,
    {
        let mut v = RssVector::new(t);
        for r in readings {
            if !r.rss_dbm.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite rss for {} at t={t}",
                    r.ap_id
                )));
            }
            let (rss, _) = clamp_rss(r.rss_dbm);
            if v.readings.insert(r.ap_id.clone(), rss).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate ap {} in scan at t={t}",
                    r.ap_id
                )));
            }
        }
        Ok(v)
    }

    /// Builder used mostly by tests and the simulator. Replaces an existing
    /// reading for the same AP.
    pub fn with(mut self, ap: impl Into<ApId>, rss_dbm: f64) -> Self {
        self.readings.insert(ap.into(), clamp_rss(rss_dbm).0);
        self
    }

    pub fn get(&self, ap: &ApId) -> Option<f64> {
        self.readings.get(ap).copied()
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    /// Readings in ascending AP-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&ApId, f64)> + '_ {
        self.readings.iter().map(|(k, v)| (k, *v))
    }

    pub fn ap_ids(&self) -> impl Iterator<Item = &ApId> + '_ {
        self.readings.keys()
    }
}

/// Densifies two scans over the union of their AP ids (ascending id order).
/// An AP missing on one side contributes `fill` there.
pub fn fill_union(a: &RssVector, b: &RssVector, fill: f64) -> (Vec<f64>, Vec<f64>) {
    let mut da = Vec::with_capacity(a.len().max(b.len()));
    let mut db = Vec::with_capacity(a.len().max(b.len()));
    merge_union(a, b, fill, |x, y| {
        da.push(x);
        db.push(y);
    });
    (da, db)
}

fn merge_union(a: &RssVector, b: &RssVector, fill: f64, mut f: impl FnMut(f64, f64)) {
    let mut ia = a.readings.iter().peekable();
    let mut ib = b.readings.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((ka, va)), Some((kb, vb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    f(**va, fill);
                    ia.next();
                }
                std::cmp::Ordering::Greater => {
                    f(fill, **vb);
                    ib.next();
                }
                std::cmp::Ordering::Equal => {
                    f(**va, **vb);
                    ia.next();
                    ib.next();
                }
            },
            (Some((_, va)), None) => {
                f(**va, fill);
                ia.next();
            }
            (None, Some((_, vb))) => {
                f(fill, **vb);
                ib.next();
            }
            (None, None) => break,
        }
    }
}

/// Normalized Euclidean distance between two scans: root-mean-square
/// difference over the filled union of their APs.
pub fn rss_distance(a: &RssVector, b: &RssVector, fill: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    merge_union(a, b, fill, |x, y| {
        let d = x - y;
        sum += d * d;
        n += 1;
    });
    if n == 0 {
        return Err(Error::EmptySignalSpace);
    }
    Ok((sum / n as f64).sqrt())
}

/// A candidate trajectory. `trajectory[0]` is the known start.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub trajectory: Vec<Position>,
    pub heading: Heading,
    pub weight: f64,
}

impl Particle {
    pub fn current(&self) -> Position {
        *self
            .trajectory
            .last()
            .expect("particle trajectory always holds the start position")
    }
}

/// One entry of the shared observation list, one per processed step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEntry {
    /// Trajectory index this entry belongs to (1 for the first step).
    pub step_index: usize,
    /// Step time.
    pub t: f64,
    pub rss: Option<RssVector>,
    /// Dead-reckoned path length walked up to this step.
    pub walked_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Std of the per-particle step-length perturbation, meters.
    pub sigma_step: f64,
    /// Std of the per-particle heading-change perturbation, radians.
    pub sigma_heading: f64,
    /// Scans closer than this in RSS space (dB) count as similar.
    pub d_rss_thres: f64,
    /// Particles whose fingerprint estimate lies further than this (m) are penalized.
    pub d_pos_thres: f64,
    pub min_gap_time: f64,
    pub min_gap_dist: f64,
    pub penalty_factor: f64,
    pub missing_fill_dbm: f64,
    pub rng_seed: u64,
    /// Resample when ESS drops below this fraction of `n_particles`.
    pub ess_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 1000,
            sigma_step: 0.03,
            sigma_heading: 0.04,
            d_rss_thres: 8.0,
            d_pos_thres: 10.0,
            min_gap_time: 10.0,
            min_gap_dist: 20.0,
            penalty_factor: 0.01,
            missing_fill_dbm: RSS_FLOOR_DBM,
            rng_seed: 0,
            ess_fraction: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1");
        }
        if !(self.sigma_step >= 0.0 && self.sigma_step.is_finite()) {
            return bad("sigma_step must be finite and >= 0");
        }
        if !(self.sigma_heading >= 0.0 && self.sigma_heading.is_finite()) {
            return bad("sigma_heading must be finite and >= 0");
        }
        for (name, v) in [
            ("d_rss_thres", self.d_rss_thres),
            ("d_pos_thres", self.d_pos_thres),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        for (name, v) in [
            ("min_gap_time", self.min_gap_time),
            ("min_gap_dist", self.min_gap_dist),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if !(self.penalty_factor > 0.0 && self.penalty_factor <= 1.0) {
            return bad("penalty_factor must lie in (0, 1]");
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            return bad("ess_fraction must lie in (0, 1]");
        }
        if !(RSS_FLOOR_DBM..=RSS_CEIL_DBM).contains(&self.missing_fill_dbm) {
            return bad("missing_fill_dbm must lie in [-110, 0]");
        }
        Ok(())
    }
}
