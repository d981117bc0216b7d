//! Synthetic walks: closed-loop ground truth, drifting IMU steps and
//! path-loss WiFi scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clamp_rss, wrap_angle, ApId, Heading, Position, RssVector, StepMeasurement};

const STEP_STREAM: u64 = 0;
const SCAN_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: ApId,
    pub pos: Position,
    /// RSS at 1 m, dBm.
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma: f64,
    /// Readings below this are not reported.
    pub detection_floor: f64,
}

impl AccessPoint {
    /// Noise-free received power at `p`.
    pub fn mean_rss(&self, p: &Position) -> f64 {
        let d = self.pos.distance(p).max(1.0);
        self.tx_power_dbm - 10.0 * self.path_loss_exponent * d.log10()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Environment {
    pub aps: Vec<AccessPoint>,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        for ap in &self.aps {
            if !(ap.path_loss_exponent > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "ap {}: path_loss_exponent must be > 0",
                    ap.id
                )));
            }
            if !(ap.detection_floor >= crate::model::RSS_FLOOR_DBM) {
                return Err(Error::InvalidConfig(format!(
                    "ap {}: detection_floor must be >= -110",
                    ap.id
                )));
            }
            if !(ap.shadowing_sigma >= 0.0) || !ap.pos.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "ap {}: invalid parameters",
                    ap.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuErrorModel {
    pub step_noise_sigma: f64,
    pub heading_noise_sigma: f64,
    /// Systematic heading drift added to every step.
    pub heading_bias_per_step: f64,
}

/// True poses at every step; index 0 is the start.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub times: Vec<f64>,
    pub positions: Vec<Position>,
    pub headings: Vec<Heading>,
}

impl GroundTruth {
    pub fn n_steps(&self) -> usize {
        self.positions.len().saturating_sub(1)
    }

    /// Linear interpolation of the true position, clamped to the ends.
    pub fn position_at(&self, t: f64) -> Position {
        let ts = &self.times;
        if t <= ts[0] {
            return self.positions[0];
        }
        let i = ts.partition_point(|&x| x <= t);
        if i >= ts.len() {
            return *self.positions.last().unwrap();
        }
        let (t0, t1) = (ts[i - 1], ts[i]);
        let a = (t - t0) / (t1 - t0);
        let (p0, p1) = (self.positions[i - 1], self.positions[i]);
        Position::new(p0.x + a * (p1.x - p0.x), p0.y + a * (p1.y - p0.y))
    }
}

/// Equally spaced steps along a closed polyline walked `laps` times. The
/// ring closes implicitly from the last vertex back to the first. Step `k`
/// happens at `k * step_period` seconds. Headings follow each step's chord so
/// integrating chord lengths and heading changes reproduces the positions.
pub fn generate_path(
    polyline: &[Position],
    laps: usize,
    step_length: f64,
    step_period: f64,
) -> Result<GroundTruth> {
    if !(step_length > 0.0) || !(step_period > 0.0) {
        return Err(Error::InvalidInput(
            "step_length and step_period must be > 0".into(),
        ));
    }
    let mut ring: Vec<Position> = polyline.to_vec();
    if ring.len() >= 2 && ring.first() == ring.last() {
        ring.pop();
    }
    let seg_len: Vec<f64> = (0..ring.len())
        .map(|i| ring[i].distance(&ring[(i + 1) % ring.len()]))
        .collect();
    let perimeter: f64 = seg_len.iter().sum();
    if ring.len() < 2 || !(perimeter > 0.0) {
        return Err(Error::InvalidInput("polyline has zero length".into()));
    }

    let point_at = |s: f64| -> Position {
        let mut s = s.rem_euclid(perimeter);
        for (i, &l) in seg_len.iter().enumerate() {
            if s <= l || i + 1 == seg_len.len() {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                let f = if l > 0.0 { (s / l).min(1.0) } else { 0.0 };
                return Position::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
            }
            s -= l;
        }
        unreachable!()
    };

    let total = perimeter * laps as f64;
    let n_steps = (total / step_length + 1e-9).floor() as usize;
    let mut positions = Vec::with_capacity(n_steps + 1);
    positions.push(ring[0]);
    for k in 1..=n_steps {
        let s = k as f64 * step_length;
        // Snap a closing step exactly onto the start.
        let p = if ((s / perimeter).round() * perimeter - s).abs() < 1e-9 {
            ring[0]
        } else {
            point_at(s)
        };
        positions.push(p);
    }

    let first = ring[1 % ring.len()];
    let mut headings = Vec::with_capacity(n_steps + 1);
    let mut theta = (first.y - ring[0].y).atan2(first.x - ring[0].x);
    headings.push(Heading(theta));
    for w in positions.windows(2) {
        let chord = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
        theta += wrap_angle(chord - theta);
        headings.push(Heading(theta));
    }
    let times = (0..=n_steps).map(|k| k as f64 * step_period).collect();
    Ok(GroundTruth {
        times,
        positions,
        headings,
    })
}

/// IMU step stream for `truth`: chord length and heading change per step,
/// plus Gaussian noise and a constant heading bias. Step lengths are clamped
/// at zero.
pub fn corrupt_steps(truth: &GroundTruth, err: &ImuErrorModel, seed: u64) -> Vec<StepMeasurement> {
    let mut rng = stream_rng(seed, STEP_STREAM);
    (1..truth.positions.len())
        .map(|k| {
            let n_l: f64 = rng.sample(StandardNormal);
            let n_h: f64 = rng.sample(StandardNormal);
            let len = truth.positions[k].distance(&truth.positions[k - 1]);
            let dth = truth.headings[k].0 - truth.headings[k - 1].0;
            StepMeasurement {
                t: truth.times[k],
                delta_l: (len + err.step_noise_sigma * n_l).max(0.0),
                delta_theta: dth + err.heading_bias_per_step + err.heading_noise_sigma * n_h,
            }
        })
        .collect()
}

/// Scans every `scan_period` seconds starting `phase` seconds after the walk
/// begins. Each AP contributes path loss plus lognormal shadowing; readings
/// under the AP's detection floor are left out of the scan.
pub fn simulate_rss(
    truth: &GroundTruth,
    env: &Environment,
    scan_period: f64,
    phase: f64,
    seed: u64,
) -> Result<Vec<RssVector>> {
    if !(scan_period > 0.0) || !(phase >= 0.0) {
        return Err(Error::InvalidInput(
            "scan_period must be > 0 and phase >= 0".into(),
        ));
    }
    env.validate()?;
    let (Some(&t0), Some(&t_end)) = (truth.times.first(), truth.times.last()) else {
        return Ok(Vec::new());
    };
    let mut rng = stream_rng(seed, SCAN_STREAM);
    let mut scans = Vec::new();
    for j in 0.. {
        let t = t0 + phase + j as f64 * scan_period;
        if t > t_end {
            break;
        }
        let p = truth.position_at(t);
        let mut scan = RssVector::new(t);
        for ap in &env.aps {
            let noise: f64 = rng.sample(StandardNormal);
            let rss = ap.mean_rss(&p) + ap.shadowing_sigma * noise;
            if rss >= ap.detection_floor {
                scan = scan.with(ap.id.clone(), clamp_rss(rss).0);
            }
        }
        scans.push(scan);
    }
    Ok(scans)
}

/// A rectangular walk with randomly placed APs, the default desk-scale
/// experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub width: f64,
    pub height: f64,
    pub laps: usize,
    pub step_length: f64,
    pub step_period: f64,
    pub scan_period: f64,
    pub scan_phase: f64,
    pub imu: ImuErrorModel,
    pub n_aps: usize,
    /// APs are placed uniformly in the rectangle grown by this margin.
    pub ap_margin: f64,
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma: f64,
    pub detection_floor: f64,
    /// Seed for AP placement.
    pub env_seed: u64,
    /// Seed for IMU and RSS noise.
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            width: 40.0,
            height: 20.0,
            laps: 3,
            step_length: 0.7,
            step_period: 0.5,
            scan_period: 1.0,
            scan_phase: 0.25,
            imu: ImuErrorModel {
                step_noise_sigma: 0.03,
                heading_noise_sigma: 0.01,
                heading_bias_per_step: 0.003,
            },
            n_aps: 12,
            ap_margin: 10.0,
            tx_power_dbm: -40.0,
            path_loss_exponent: 4.0,
            shadowing_sigma: 3.0,
            detection_floor: -100.0,
            env_seed: 7,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedWalk {
    pub truth: GroundTruth,
    pub steps: Vec<StepMeasurement>,
    pub scans: Vec<RssVector>,
    pub env: Environment,
    pub start_heading: Heading,
    pub steps_per_lap: usize,
}

impl Scenario {
    /// Counter-clockwise rectangle starting at the origin heading along +x.
    pub fn polyline(&self) -> Vec<Position> {
        vec![
            Position::new(0.0, 0.0),
            Position::new(self.width, 0.0),
            Position::new(self.width, self.height),
            Position::new(0.0, self.height),
        ]
    }

    pub fn environment(&self) -> Environment {
        let mut rng = ChaCha8Rng::seed_from_u64(self.env_seed);
        let m = self.ap_margin;
        let aps = (0..self.n_aps)
            .map(|i| AccessPoint {
                id: ApId(format!("ap{i:02}")),
                pos: Position::new(
                    rng.random_range(-m..=self.width + m),
                    rng.random_range(-m..=self.height + m),
                ),
                tx_power_dbm: self.tx_power_dbm,
                path_loss_exponent: self.path_loss_exponent,
                shadowing_sigma: self.shadowing_sigma,
                detection_floor: self.detection_floor,
            })
            .collect();
        Environment { aps }
    }

    pub fn generate(&self) -> Result<SimulatedWalk> {
        let truth = generate_path(
            &self.polyline(),
            self.laps,
            self.step_length,
            self.step_period,
        )?;
        let env = self.environment();
        let steps = corrupt_steps(&truth, &self.imu, self.seed);
        let scans = simulate_rss(&truth, &env, self.scan_period, self.scan_phase, self.seed)?;
        let perimeter = 2.0 * (self.width + self.height);
        Ok(SimulatedWalk {
            start_heading: truth.headings[0],
            steps_per_lap: (perimeter / self.step_length).round() as usize,
            truth,
            steps,
            scans,
            env,
        })
    }
}
