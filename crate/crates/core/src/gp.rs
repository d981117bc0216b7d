//! Gaussian-process likelihood weighting, the comparison baseline.
//!
//! For every particle and every AP in the current scan, the RSS values the
//! particle's own trajectory recorded within `training_radius` of its current
//! position train a GP (squared-exponential kernel on residuals from a mean
//! model). The particle weight is multiplied by the Gaussian likelihood of
//! the observed RSS under the GP prediction, APs treated as independent.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Ensemble, WeightUpdate};
use crate::model::{ApId, ObservationEntry, Position, RssVector};
use crate::par;

/// Per-AP likelihood floor so a single AP cannot annihilate a particle.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;
const JITTER_SCALE: f64 = 1e-8;

/// Prior mean of the RSS field around one AP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GpMeanModel {
    Constant {
        c: f64,
    },
    /// `k * |p - ap| + d`
    Linear {
        k: f64,
        d: f64,
        ap_pos: Position,
    },
    /// `s - q * |p - ap|`. Linear in distance despite the name.
    LogDistanceAsPrinted {
        s: f64,
        q: f64,
        ap_pos: Position,
    },
}

impl GpMeanModel {
    pub fn value(&self, p: &Position) -> f64 {
        match *self {
            GpMeanModel::Constant { c } => c,
            GpMeanModel::Linear { k, d, ap_pos } => k * p.distance(&ap_pos) + d,
            GpMeanModel::LogDistanceAsPrinted { s, q, ap_pos } => s - q * p.distance(&ap_pos),
        }
    }
}

/// Mean models keyed by AP, with a fallback for APs not listed.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModels {
    pub fallback: GpMeanModel,
    pub per_ap: HashMap<ApId, GpMeanModel>,
}

impl MeanModels {
    pub fn constant(c: f64) -> Self {
        MeanModels {
            fallback: GpMeanModel::Constant { c },
            per_ap: HashMap::new(),
        }
    }

    pub fn for_ap(&self, ap: &ApId) -> &GpMeanModel {
        self.per_ap.get(ap).unwrap_or(&self.fallback)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    /// dB^2
    pub signal_variance: f64,
    /// meters
    pub length_scale: f64,
    /// dB^2
    pub noise_variance: f64,
    /// meters
    pub training_radius: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        GpHyperparams {
            signal_variance: 36.0,
            length_scale: 4.0,
            noise_variance: 9.0,
            training_radius: 10.0,
        }
    }
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_variance", self.signal_variance),
            ("length_scale", self.length_scale),
            ("noise_variance", self.noise_variance),
            ("training_radius", self.training_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn kernel(&self, a: &Position, b: &Position) -> f64 {
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        self.signal_variance
            * (-(dx * dx + dy * dy) / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub pos: Position,
    pub rss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Predictive variance of an observation, noise included.
    pub variance: f64,
}

impl Prediction {
    pub fn likelihood(&self, observed: f64) -> f64 {
        let r = observed - self.mean;
        (-0.5 * r * r / self.variance).exp() / (2.0 * std::f64::consts::PI * self.variance).sqrt()
    }
}

/// Training pairs for `ap` from every entry whose trajectory position lies in
/// the closed ball of `radius` around `center`.
pub fn sparse_select(
    trajectory: &[Position],
    entries: &[ObservationEntry],
    center: Position,
    radius: f64,
    ap: &ApId,
) -> Vec<TrainingSample> {
    entries
        .iter()
        .filter_map(|e| {
            let rss = e.rss.as_ref()?.get(ap)?;
            let pos = *trajectory.get(e.step_index)?;
            (pos.distance(&center) <= radius).then_some(TrainingSample { pos, rss })
        })
        .collect()
}

/// GP regression at `query`. An empty training set yields the prior.
pub fn gp_predict(
    train: &[TrainingSample],
    query: Position,
    hp: &GpHyperparams,
    mean: &GpMeanModel,
) -> Result<Prediction> {
    let prior_mean = mean.value(&query);
    let n = train.len();
    if n == 0 {
        return Ok(Prediction {
            mean: prior_mean,
            variance: hp.signal_variance + hp.noise_variance,
        });
    }

    let gram = DMatrix::from_fn(n, n, |i, j| {
        let k = hp.kernel(&train[i].pos, &train[j].pos);
        if i == j {
            k + hp.noise_variance
        } else {
            k
        }
    });
    let chol = match gram.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = JITTER_SCALE * hp.signal_variance;
            let mut g = gram;
            for i in 0..n {
                g[(i, i)] += jitter;
            }
            g.cholesky().ok_or(Error::SingularGram(n))?
        }
    };

    let residuals = DVector::from_iterator(n, train.iter().map(|s| s.rss - mean.value(&s.pos)));
    let k_star = DVector::from_iterator(n, train.iter().map(|s| hp.kernel(&s.pos, &query)));
    let alpha = chol.solve(&residuals);
    let mut v = k_star.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let latent = (hp.signal_variance - v.dot(&v)).max(0.0);
    Ok(Prediction {
        mean: prior_mean + k_star.dot(&alpha),
        variance: latent + hp.noise_variance,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GpUpdate {
    pub weights: WeightUpdate,
    /// Training samples used, summed over particles and APs.
    pub training_samples: usize,
}

/// Multiplies each particle's weight by the likelihood of `current` under
/// its own GP predictions, then normalizes. APs absent from `current` are
/// skipped. The newest observation entry (the current epoch) is excluded
/// from training.
pub fn gp_update_weights(
    ens: &mut Ensemble,
    current: &RssVector,
    hp: &GpHyperparams,
    means: &MeanModels,
) -> Result<GpUpdate> {
    hp.validate()?;
    if current.is_empty() {
        return Ok(GpUpdate::default());
    }
    let history = match ens.observations().split_last() {
        Some((_, h)) => h,
        None => &[],
    };
    let per_particle = par::map(ens.execution(), ens.particles(), |_, p| {
        let here = p.current();
        let mut log_lik = 0.0;
        let mut samples = 0;
        for (ap, observed) in current.iter() {
            let train = sparse_select(&p.trajectory, history, here, hp.training_radius, ap);
            samples += train.len();
            let pred = gp_predict(&train, here, hp, means.for_ap(ap))?;
            log_lik += pred.likelihood(observed).max(LIKELIHOOD_FLOOR).ln();
        }
        Ok((log_lik, samples))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let max_ll = per_particle
        .iter()
        .map(|(ll, _)| *ll)
        .fold(f64::NEG_INFINITY, f64::max);
    let training_samples = per_particle.iter().map(|(_, s)| s).sum();
    for (p, (ll, _)) in ens.particles_mut().iter_mut().zip(&per_particle) {
        p.weight *= (ll - max_ll).exp();
    }
    let degenerate = ens.normalize();
    Ok(GpUpdate {
        weights: WeightUpdate {
            matches: 0,
            penalized: 0,
            degenerate,
        },
        training_samples,
    })
}
