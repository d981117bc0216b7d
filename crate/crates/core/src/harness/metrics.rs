use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Position;

/// Half-open range of epoch indices, epoch 0 being the start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub start: usize,
    pub end: usize,
}

impl EvalWindow {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Euclidean error per epoch. Both tracks must cover the same epochs.
pub fn epoch_errors(estimate: &[Position], truth: &[Position]) -> Result<Vec<f64>> {
    if estimate.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "estimate has {} epochs, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| a.distance(b))
        .collect())
}

/// Mean error inside each window.
pub fn compute_metrics(
    estimate: &[Position],
    truth: &[Position],
    windows: &[EvalWindow],
) -> Result<Vec<f64>> {
    let errors = epoch_errors(estimate, truth)?;
    windows.iter().map(|w| window_mean(&errors, w)).collect()
}

pub fn window_mean(errors: &[f64], w: &EvalWindow) -> Result<f64> {
    if w.is_empty() || w.end > errors.len() {
        return Err(Error::WindowOutOfRange {
            start: w.start,
            end: w.end,
            len: errors.len(),
        });
    }
    Ok(errors[w.start..w.end].iter().sum::<f64>() / w.len() as f64)
}

/// The last quarter of every lap, clipped to the available epochs.
pub fn lap_tail_windows(steps_per_lap: usize, n_epochs: usize) -> Vec<EvalWindow> {
    if steps_per_lap == 0 {
        return Vec::new();
    }
    let tail = (steps_per_lap / 4).max(1);
    (1..)
        .map(|lap| lap * steps_per_lap)
        .take_while(|&end| end - tail < n_epochs)
        .map(|end| EvalWindow {
            start: end - tail,
            end: end.min(n_epochs),
        })
        .filter(|w| !w.is_empty())
        .collect()
}
