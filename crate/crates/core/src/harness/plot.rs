//! CSV exports for external plotting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::pipeline::RunReport;
use crate::error::{Error, Result};
use crate::gp::{gp_predict, GpHyperparams, GpMeanModel, TrainingSample};
use crate::model::{ApId, Position};
use crate::sync::AlignedEpoch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl GridSpec {
    /// Bounding box of `points` grown by `margin` on every side.
    pub fn around(points: &[Position], margin: f64, resolution: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("no points to frame".into()));
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, get: fn(&Position) -> f64| {
            points.iter().map(get).fold(init, f)
        };
        Ok(GridSpec {
            x_min: fold(f64::min, f64::INFINITY, |p| p.x) - margin,
            x_max: fold(f64::max, f64::NEG_INFINITY, |p| p.x) + margin,
            y_min: fold(f64::min, f64::INFINITY, |p| p.y) - margin,
            y_max: fold(f64::max, f64::NEG_INFINITY, |p| p.y) + margin,
            resolution,
        })
    }

    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).floor() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    }

    fn validate(&self) -> Result<()> {
        let ok = [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.resolution,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.resolution > 0.0
            && self.x_max >= self.x_min
            && self.y_max >= self.y_min;
        if !ok {
            return Err(Error::InvalidInput(format!("bad grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub mu: f64,
    pub var: f64,
}

/// Training pairs for `ap` taken from a trajectory indexed by epoch, so that
/// `track[k]` is the position after step `k`.
pub fn training_from_track(
    track: &[Position],
    epochs: &[AlignedEpoch],
    ap: &ApId,
) -> Vec<TrainingSample> {
    epochs
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let rss = e.rss.as_ref()?.get(ap)?;
            let pos = *track.get(i + 1)?;
            Some(TrainingSample { pos, rss })
        })
        .collect()
}

/// GP mean and variance over a grid. Each cell uses only the samples within
/// the training radius, as the filter does.
pub fn gp_grid(
    train: &[TrainingSample],
    hp: &GpHyperparams,
    mean: &GpMeanModel,
    spec: GridSpec,
) -> Result<Vec<GridCell>> {
    hp.validate()?;
    spec.validate()?;
    let xs = GridSpec::axis(spec.x_min, spec.x_max, spec.resolution);
    let ys = GridSpec::axis(spec.y_min, spec.y_max, spec.resolution);
    let mut cells = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let q = Position::new(x, y);
            let local: Vec<TrainingSample> = train
                .iter()
                .filter(|s| s.pos.distance(&q) <= hp.training_radius)
                .copied()
                .collect();
            let pred = gp_predict(&local, q, hp, mean)?;
            cells.push(GridCell {
                x,
                y,
                mu: pred.mean,
                var: pred.variance,
            });
        }
    }
    Ok(cells)
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from(header);
    body.push('\n');
    for r in rows {
        body.push_str(&r);
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `trajectory_<method>.csv` and, when errors are known,
/// `errors_<method>.csv` per report, plus `truth.csv` and `gp_map.csv` when
/// given. Returns the files written.
pub fn emit_plot_data(
    out_dir: impl AsRef<Path>,
    reports: &[RunReport],
    truth: Option<&[Position]>,
    gp_map: Option<&[GridCell]>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    for r in reports {
        let path = dir.join(format!("trajectory_{}.csv", r.method));
        write_csv(
            &path,
            "epoch,x,y",
            r.epochs
                .iter()
                .map(|e| format!("{},{},{}", e.epoch, e.x, e.y)),
        )?;
        written.push(path);

        if let Some(errors) = r.errors() {
            let path = dir.join(format!("errors_{}.csv", r.method));
            write_csv(
                &path,
                "epoch,error",
                errors.iter().enumerate().map(|(k, e)| format!("{k},{e}")),
            )?;
            written.push(path);
        }
    }
    if let Some(truth) = truth {
        let path = dir.join("truth.csv");
        write_csv(
            &path,
            "epoch,x,y",
            truth
                .iter()
                .enumerate()
                .map(|(k, p)| format!("{k},{},{}", p.x, p.y)),
        )?;
        written.push(path);
    }
    if let Some(cells) = gp_map {
        let path = dir.join("gp_map.csv");
        write_csv(
            &path,
            "x,y,mu,var",
            cells
                .iter()
                .map(|c| format!("{},{},{},{}", c.x, c.y, c.mu, c.var)),
        )?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunOptions;
    use crate::harness::dataset::Dataset;
    use crate::harness::pipeline::{run_pipeline, Method};
    use crate::model::{FilterConfig, RssVector};
    use crate::sim::Scenario;

    fn spec() -> GridSpec {
        GridSpec {
            x_min: 0.0,
            x_max: 30.0,
            y_min: 0.0,
            y_max: 10.0,
            resolution: 1.0,
        }
    }

    #[test]
    fn variance_grows_away_from_samples() {
        let hp = GpHyperparams::default();
        let train = vec![
            TrainingSample {
                pos: Position::new(1.0, 1.0),
                rss: -60.0,
            },
            TrainingSample {
                pos: Position::new(2.0, 1.0),
                rss: -62.0,
            },
        ];
        let mean = GpMeanModel::Constant { c: -80.0 };
        let cells = gp_grid(&train, &hp, &mean, spec()).unwrap();
        assert_eq!(cells.len(), 31 * 11);
        let near = cells.iter().find(|c| c.x == 1.0 && c.y == 1.0).unwrap();
        let far = cells.iter().find(|c| c.x == 30.0 && c.y == 10.0).unwrap();
        let max_var = cells.iter().map(|c| c.var).fold(f64::MIN, f64::max);
        assert_eq!(far.var, max_var);
        assert_eq!(far.var, hp.signal_variance + hp.noise_variance);
        assert_eq!(far.mu, -80.0);
        assert!(near.var < far.var);
        assert!(near.mu > -70.0);
    }

    #[test]
    fn bad_grid_rejected() {
        let hp = GpHyperparams::default();
        let mean = GpMeanModel::Constant { c: -80.0 };
        let s = GridSpec {
            resolution: 0.0,
            ..spec()
        };
        assert!(gp_grid(&[], &hp, &mean, s).is_err());
        assert!(GridSpec::around(&[], 1.0, 1.0).is_err());
    }

    #[test]
    fn training_from_track_skips_missing() {
        let ap = ApId::from("a");
        let track = vec![
            Position::ORIGIN,
            Position::new(1.0, 0.0),
            Position::new(2.0, 0.0),
        ];
        let step = crate::model::StepMeasurement {
            t: 1.0,
            delta_l: 1.0,
            delta_theta: 0.0,
        };
        let epochs = vec![
            AlignedEpoch {
                step,
                rss: Some(RssVector::new(1.0).with("a", -50.0)),
            },
            AlignedEpoch {
                step: crate::model::StepMeasurement { t: 2.0, ..step },
                rss: None,
            },
        ];
        let t = training_from_track(&track, &epochs, &ap);
        assert_eq!(
            t,
            vec![TrainingSample {
                pos: Position::new(1.0, 0.0),
                rss: -50.0
            }]
        );
    }

    #[test]
    fn writes_expected_files() {
        let sc = Scenario {
            width: 20.0,
            height: 10.0,
            laps: 1,
            ..Scenario::default()
        };
        let ds = Dataset::from_simulation(&sc.generate().unwrap(), sc.laps);
        let opts = RunOptions {
            filter: FilterConfig {
                n_particles: 30,
                ..FilterConfig::default()
            },
            ..RunOptions::default()
        };
        let raw = run_pipeline(&ds, &opts, Method::Raw).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cells = [GridCell {
            x: 0.0,
            y: 0.0,
            mu: -70.0,
            var: 9.0,
        }];
        let truth = &ds.truth.as_ref().unwrap().positions;
        let files = emit_plot_data(
            dir.path(),
            std::slice::from_ref(&raw),
            Some(truth),
            Some(&cells),
        )
        .unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(
            names,
            [
                "trajectory_raw.csv",
                "errors_raw.csv",
                "truth.csv",
                "gp_map.csv"
            ]
        );
        let traj = fs::read_to_string(dir.path().join("trajectory_raw.csv")).unwrap();
        assert_eq!(traj.lines().count(), raw.epochs.len() + 1);
        assert!(traj.starts_with("epoch,x,y\n0,"));
        let map = fs::read_to_string(dir.path().join("gp_map.csv")).unwrap();
        assert_eq!(map, "x,y,mu,var\n0,0,-70,9\n");
    }

    #[test]
    fn unwritable_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, "x").unwrap();
        assert!(matches!(
            emit_plot_data(file.join("sub"), &[], None, None).unwrap_err(),
            Error::Io { .. }
        ));
    }
}
