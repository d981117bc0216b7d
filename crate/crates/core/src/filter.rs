//! Trajectory-history particle filter.
//!
//! Each particle carries its whole position history. Steps from the IMU are
//! propagated with per-particle noise; when the current WiFi scan resembles
//! scans recorded earlier in the walk, every particle's own past positions at
//! those scans give a fingerprint estimate of where it should be now, and
//! particles that disagree by more than `d_pos_thres` are down-weighted.
//!
//! Noise is drawn from counter-based streams keyed by `(seed, particle slot,
//! step)`, so results do not depend on evaluation order or thread count.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    rss_distance, FilterConfig, Heading, ObservationEntry, Particle, Position, RssVector,
    StepMeasurement,
};
use crate::par::{self, Execution};
use crate::sync::AlignedEpoch;

/// Words of keystream reserved per (slot, step) pair.
const WORDS_PER_STEP_LOG2: u32 = 16;
/// Stream id used for the resampler's offset draw.
const RESAMPLE_STREAM: u64 = u64::MAX;

pub(crate) fn counter_rng(seed: u64, stream: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((step as u128) << WORDS_PER_STEP_LOG2);
    rng
}

/// An earlier observation-list entry whose scan resembles the current one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureMatch {
    pub entry_index: usize,
    /// Index into each particle's trajectory for that entry.
    pub trajectory_index: usize,
    pub d_rss: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WeightUpdate {
    pub matches: usize,
    pub penalized: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub update: WeightUpdate,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    particles: Vec<Particle>,
    observations: Vec<ObservationEntry>,
    step_count: usize,
    config: FilterConfig,
    execution: Execution,
    degeneracy_events: usize,
    resample_count: usize,
}

impl Ensemble {
    /// `n_particles` copies of the known start, uniformly weighted.
    pub fn initialize(
        start: Position,
        start_heading: Heading,
        config: FilterConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !start.is_finite() || !start_heading.0.is_finite() {
            return Err(Error::InvalidInput("start pose must be finite".into()));
        }
        let n = config.n_particles;
        let particle = Particle {
            trajectory: vec![start],
            heading: start_heading,
            weight: 1.0 / n as f64,
        };
        Ok(Ensemble {
            particles: vec![particle; n],
            observations: Vec::new(),
            step_count: 0,
            config,
            execution: Execution::default(),
            degeneracy_events: 0,
            resample_count: 0,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn observations(&self) -> &[ObservationEntry] {
        &self.observations
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn degeneracy_events(&self) -> usize {
        self.degeneracy_events
    }

    pub fn resample_count(&self) -> usize {
        self.resample_count
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Propagation, RSS-consistency weighting, then resampling when the
    /// effective sample size has collapsed.
    pub fn step(&mut self, epoch: &AlignedEpoch) -> Result<StepOutcome> {
        self.propagate(epoch)?;
        let update = self.update_weights(epoch.rss.as_ref());
        let resampled = self.maybe_resample();
        Ok(StepOutcome { update, resampled })
    }

    /// Appends one noisy step to every particle and one entry to the
    /// observation list.
    pub fn propagate(&mut self, epoch: &AlignedEpoch) -> Result<()> {
        let step = &epoch.step;
        if !(step.delta_l >= 0.0 && step.delta_l.is_finite() && step.delta_theta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step at t={} has invalid increments",
                step.t
            )));
        }
        if let Some(prev) = self.observations.last() {
            if !(step.t > prev.t) {
                return Err(Error::NonMonotoneTimestamps(format!(
                    "step at t={} follows t={}",
                    step.t, prev.t
                )));
            }
        }

        let k = self.step_count + 1;
        let seed = self.config.rng_seed;
        let (sigma_l, sigma_h) = (self.config.sigma_step, self.config.sigma_heading);
        par::for_each_mut(self.execution, &mut self.particles, |slot, p| {
            let mut rng = counter_rng(seed, slot as u64, k);
            let n_l: f64 = rng.sample(StandardNormal);
            let n_h: f64 = rng.sample(StandardNormal);
            propagate_particle(p, step, sigma_l * n_l, sigma_h * n_h);
        });

        let walked = self.observations.last().map_or(0.0, |e| e.walked_dist) + step.delta_l;
        self.observations.push(ObservationEntry {
            step_index: k,
            t: step.t,
            rss: epoch.rss.clone(),
            walked_dist: walked,
        });
        self.step_count = k;
        Ok(())
    }

    /// Earlier entries similar to `current` in RSS space, far enough back in
    /// both time and walked distance. The newest entry (the current epoch) is
    /// never a candidate.
    pub fn find_similar_rss(&self, current: &RssVector) -> Vec<ClosureMatch> {
        let cfg = &self.config;
        let Some((_, history)) = self.observations.split_last() else {
            return Vec::new();
        };
        let walked_now = self.observations.last().map_or(0.0, |e| e.walked_dist);
        history
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let rss = e.rss.as_ref()?;
                if !(current.t - rss.t > cfg.min_gap_time) {
                    return None;
                }
                if !(walked_now - e.walked_dist > cfg.min_gap_dist) {
                    return None;
                }
                let d = rss_distance(current, rss, cfg.missing_fill_dbm).ok()?;
                (d < cfg.d_rss_thres).then_some(ClosureMatch {
                    entry_index: i,
                    trajectory_index: e.step_index,
                    d_rss: d,
                })
            })
            .collect()
    }

    /// Scales inconsistent particles by `penalty_factor` and renormalizes.
    /// With no scan, or no similar earlier scan, weights stay as they are.
    pub fn update_weights(&mut self, current: Option<&RssVector>) -> WeightUpdate {
        let Some(current) = current else {
            return WeightUpdate::default();
        };
        let matches = self.find_similar_rss(current);
        if matches.is_empty() {
            return WeightUpdate::default();
        }
        let thres = self.config.d_pos_thres;
        let penalty = self.config.penalty_factor;
        let flags = par::map(self.execution, &self.particles, |_, p| {
            let est = knn_estimate(p, &matches).expect("matches are non-empty");
            est.distance(&p.current()) > thres
        });
        let mut penalized = 0;
        for (p, hit) in self.particles.iter_mut().zip(&flags) {
            if *hit {
                p.weight *= penalty;
                penalized += 1;
            }
        }
        let degenerate = self.normalize();
        debug!(
            "step {}: {} closure matches, {} of {} particles penalized",
            self.step_count,
            matches.len(),
            penalized,
            self.particles.len()
        );
        WeightUpdate {
            matches: matches.len(),
            penalized,
            degenerate,
        }
    }

    /// Normalizes weights to sum to one. Returns true when every weight had
    /// vanished and the ensemble was reset to uniform.
    pub(crate) fn normalize(&mut self) -> bool {
        let sum: f64 = self.particles.iter().map(|p| p.weight).sum();
        if sum > 0.0 && sum.is_finite() {
            self.particles.iter_mut().for_each(|p| p.weight /= sum);
            false
        } else {
            warn!(
                "step {}: all particle weights vanished, resetting to uniform",
                self.step_count
            );
            let w = 1.0 / self.particles.len() as f64;
            self.particles.iter_mut().for_each(|p| p.weight = w);
            self.degeneracy_events += 1;
            true
        }
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self
            .particles
            .iter()
            .map(|p| p.weight * p.weight)
            .sum::<f64>()
    }

    /// Systematic resampling of whole trajectories when the effective sample
    /// size drops below `ess_fraction * n_particles`.
    pub fn maybe_resample(&mut self) -> bool {
        let n = self.particles.len();
        if !(self.effective_sample_size() < self.config.ess_fraction * n as f64) {
            return false;
        }
        let mut rng = counter_rng(self.config.rng_seed, RESAMPLE_STREAM, self.step_count);
        let offset: f64 = rng.random();
        let weights = self.weights();
        let picks = systematic_indices(&weights, offset);
        let w = 1.0 / n as f64;
        self.particles = picks
            .into_iter()
            .map(|i| Particle {
                weight: w,
                ..self.particles[i].clone()
            })
            .collect();
        self.resample_count += 1;
        true
    }

    /// Weighted mean of current positions, plus the highest-weight particle
    /// (lowest index on ties) as the corrected full trajectory.
    pub fn estimate(&self) -> (Position, &Particle) {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            let c = p.current();
            sx += p.weight * c.x;
            sy += p.weight * c.y;
            sw += p.weight;
            if p.weight > self.particles[best].weight {
                best = i;
            }
        }
        (Position::new(sx / sw, sy / sw), &self.particles[best])
    }

    pub(crate) fn particles_mut(&mut self) -> &mut [Particle] {
        &mut self.particles
    }
}

/// One step of the motion model: turn by `delta_theta + heading_noise`, then
/// move `delta_l + step_noise` (never backwards) along the new heading.
pub fn propagate_particle(
    p: &mut Particle,
    step: &StepMeasurement,
    step_noise: f64,
    heading_noise: f64,
) {
    p.heading = Heading(p.heading.0 + step.delta_theta + heading_noise);
    let len = (step.delta_l + step_noise).max(0.0);
    let (c, s) = p.heading.unit();
    let last = p.current();
    p.trajectory
        .push(Position::new(last.x + len * c, last.y + len * s));
}

/// Inverse-RSS-distance weighted mean of this particle's own positions at the
/// matched entries. A zero distance returns that match's position directly.
/// `None` when there are no matches.
pub fn knn_estimate(particle: &Particle, matches: &[ClosureMatch]) -> Option<Position> {
    if let Some(m) = matches.iter().find(|m| m.d_rss == 0.0) {
        return Some(particle.trajectory[m.trajectory_index]);
    }
    let (mut sx, mut sy, mut nf) = (0.0, 0.0, 0.0);
    for m in matches {
        let w = 1.0 / m.d_rss;
        let p = particle.trajectory[m.trajectory_index];
        sx += w * p.x;
        sy += w * p.y;
        nf += w;
    }
    (nf > 0.0).then(|| Position::new(sx / nf, sy / nf))
}

/// Systematic resampling: `n` pointers `(offset + j) / n` over the cumulative
/// weights, `offset` in `[0, 1)`. Weights need not be normalized.
pub fn systematic_indices(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cum = weights.first().copied().unwrap_or(0.0);
    for j in 0..n {
        let ptr = (offset + j as f64) / n as f64 * total;
        while ptr >= cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        // Rounding can leave the last pointers past a zero-weight tail.
        while weights[i] == 0.0 && i > 0 {
            i -= 1;
        }
        out.push(i);
    }
    out
}

/// Noise-free integration of a step stream from a known start pose. Returns
/// `steps.len() + 1` positions.
pub fn dead_reckon(
    start: Position,
    start_heading: Heading,
    steps: &[StepMeasurement],
) -> Vec<Position> {
    let mut p = Particle {
        trajectory: Vec::with_capacity(steps.len() + 1),
        heading: start_heading,
        weight: 1.0,
    };
    p.trajectory.push(start);
    for s in steps {
        propagate_particle(&mut p, s, 0.0, 0.0);
    }
    p.trajectory
}
