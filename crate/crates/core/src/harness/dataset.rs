//! Dataset directories.
//!
//! ```text
//! steps.jsonl   {"t":s,"dl":m,"dtheta":rad}
//! scans.jsonl   {"t":s,"readings":[{"ap":"id","rss":dbm},...]}
//! truth.jsonl   {"t":s,"x":m,"y":m}            optional, first record is the start
//! meta.cfg      start_x / start_y / start_heading / steps_per_lap / laps   optional
//! aps.jsonl     simulated access points                                    optional
//! ```
//!
//! One record per line, fields in the order shown. Writing a loaded
//! canonical dataset reproduces it byte for byte.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::{clamp_rss, Heading, Position, RssReading, RssVector, StepMeasurement};
use crate::sim::{AccessPoint, Environment, SimulatedWalk};

pub const STEPS_FILE: &str = "steps.jsonl";
pub const SCANS_FILE: &str = "scans.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const META_FILE: &str = "meta.cfg";
pub const APS_FILE: &str = "aps.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    t: f64,
    dl: f64,
    dtheta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadingRecord {
    ap: String,
    rss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanRecord {
    t: f64,
    readings: Vec<ReadingRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthRecord {
    t: f64,
    x: f64,
    y: f64,
}

/// Ground-truth track aligned with epochs: `positions[0]` is the start and
/// `positions[k]` the true position at step `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruthTrack {
    pub times: Vec<f64>,
    pub positions: Vec<Position>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub start: Option<Position>,
    pub start_heading: Option<Heading>,
    pub steps_per_lap: Option<usize>,
    pub laps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub steps: Vec<StepMeasurement>,
    pub scans: Vec<RssVector>,
    pub truth: Option<TruthTrack>,
    pub meta: DatasetMeta,
    pub env: Option<Environment>,
    /// Non-fatal ingestion notes, e.g. clamped RSS values.
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn from_simulation(walk: &SimulatedWalk, laps: usize) -> Self {
        Dataset {
            steps: walk.steps.clone(),
            scans: walk.scans.clone(),
            truth: Some(TruthTrack {
                times: walk.truth.times.clone(),
                positions: walk.truth.positions.clone(),
            }),
            meta: DatasetMeta {
                start: Some(walk.truth.positions[0]),
                start_heading: Some(walk.start_heading),
                steps_per_lap: Some(walk.steps_per_lap),
                laps: Some(laps),
            },
            env: Some(walk.env.clone()),
            warnings: Vec::new(),
        }
    }

    /// Start pose: metadata first, then the first truth record, then the origin.
    pub fn start_pose(&self) -> (Position, Heading) {
        let pos = self
            .meta
            .start
            .or_else(|| {
                self.truth
                    .as_ref()
                    .and_then(|t| t.positions.first().copied())
            })
            .unwrap_or_default();
        (pos, self.meta.start_heading.unwrap_or_default())
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        msg: msg.into(),
    }
}

/// Loads and validates a dataset directory. Step times must increase
/// strictly, scan times must not decrease, step lengths must be
/// non-negative. RSS values outside `[-110, 0]` dBm are clamped with a
/// warning.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut warnings = Vec::new();

    let steps_path = dir.join(STEPS_FILE);
    let mut steps = Vec::new();
    for (line, r) in read_jsonl::<StepRecord>(&steps_path)? {
        if !(r.t.is_finite() && r.dl.is_finite() && r.dtheta.is_finite()) {
            return Err(parse_err(&steps_path, line, "non-finite value"));
        }
        if r.dl < 0.0 {
            return Err(parse_err(
                &steps_path,
                line,
                format!("negative step length {}", r.dl),
            ));
        }
        if let Some(prev) = steps.last().map(|s: &StepMeasurement| s.t) {
            if !(r.t > prev) {
                return Err(Error::NonMonotoneTimestamps(format!(
                    "{}:{line}: t={} after t={prev}",
                    steps_path.display(),
                    r.t
                )));
            }
        }
        steps.push(StepMeasurement {
            t: r.t,
            delta_l: r.dl,
            delta_theta: r.dtheta,
        });
    }

    let scans_path = dir.join(SCANS_FILE);
    let mut scans: Vec<RssVector> = Vec::new();
    for (line, r) in read_jsonl::<ScanRecord>(&scans_path)? {
        if !r.t.is_finite() {
            return Err(parse_err(&scans_path, line, "non-finite time"));
        }
        if let Some(prev) = scans.last().map(|s| s.t) {
            if !(r.t >= prev) {
                return Err(Error::NonMonotoneTimestamps(format!(
                    "{}:{line}: t={} after t={prev}",
                    scans_path.display(),
                    r.t
                )));
            }
        }
        let mut readings = Vec::with_capacity(r.readings.len());
        for rd in r.readings {
            if !rd.rss.is_finite() {
                return Err(parse_err(
                    &scans_path,
                    line,
                    format!("non-finite rss for {}", rd.ap),
                ));
            }
            let (clamped, changed) = clamp_rss(rd.rss);
            if changed {
                let msg = format!(
                    "{}:{line}: rss {} dBm for {} clamped to {clamped}",
                    scans_path.display(),
                    rd.rss,
                    rd.ap
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            readings.push(RssReading {
                ap_id: rd.ap.into(),
                rss_dbm: clamped,
            });
        }
        let scan = RssVector::from_readings(r.t, readings)
            .map_err(|e| parse_err(&scans_path, line, e.to_string()))?;
        scans.push(scan);
    }

    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        let mut track = TruthTrack::default();
        for (line, r) in read_jsonl::<TruthRecord>(&truth_path)? {
            if !(r.t.is_finite() && r.x.is_finite() && r.y.is_finite()) {
                return Err(parse_err(&truth_path, line, "non-finite value"));
            }
            if let Some(&prev) = track.times.last() {
                if !(r.t > prev) {
                    return Err(Error::NonMonotoneTimestamps(format!(
                        "{}:{line}: t={} after t={prev}",
                        truth_path.display(),
                        r.t
                    )));
                }
            }
            track.times.push(r.t);
            track.positions.push(Position::new(r.x, r.y));
        }
        Some(track)
    } else {
        None
    };

    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        let kv = KeyValues::load(&meta_path)?;
        let meta = DatasetMeta {
            start: match (kv.get::<f64>("start_x")?, kv.get::<f64>("start_y")?) {
                (Some(x), Some(y)) => Some(Position::new(x, y)),
                (None, None) => None,
                _ => {
                    return Err(Error::InvalidConfig(
                        "meta.cfg: start_x and start_y go together".into(),
                    ))
                }
            },
            start_heading: kv.get::<f64>("start_heading")?.map(Heading),
            steps_per_lap: kv.get("steps_per_lap")?,
            laps: kv.get("laps")?,
        };
        kv.reject_unused()?;
        meta
    } else {
        DatasetMeta::default()
    };

    let aps_path = dir.join(APS_FILE);
    let env = if aps_path.exists() {
        let aps = read_jsonl::<AccessPoint>(&aps_path)?
            .into_iter()
            .map(|(_, ap)| ap)
            .collect();
        Some(Environment { aps })
    } else {
        None
    };

    Ok(Dataset {
        steps,
        scans,
        truth,
        meta,
        env,
        warnings,
    })
}

/// Writes a dataset directory, creating it if needed. Returns the files
/// written.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let p = dir.join(STEPS_FILE);
    write_jsonl(
        &p,
        ds.steps.iter().map(|s| StepRecord {
            t: s.t,
            dl: s.delta_l,
            dtheta: s.delta_theta,
        }),
    )?;
    written.push(p);

    let p = dir.join(SCANS_FILE);
    write_jsonl(
        &p,
        ds.scans.iter().map(|s| ScanRecord {
            t: s.t,
            readings: s
                .iter()
                .map(|(ap, rss)| ReadingRecord {
                    ap: ap.0.clone(),
                    rss,
                })
                .collect(),
        }),
    )?;
    written.push(p);

    if let Some(truth) = &ds.truth {
        let p = dir.join(TRUTH_FILE);
        write_jsonl(
            &p,
            truth
                .times
                .iter()
                .zip(&truth.positions)
                .map(|(&t, p)| TruthRecord { t, x: p.x, y: p.y }),
        )?;
        written.push(p);
    }

    let m = &ds.meta;
    let mut kv = Vec::new();
    if let Some(s) = m.start {
        kv.push(("start_x", s.x.to_string()));
        kv.push(("start_y", s.y.to_string()));
    }
    if let Some(h) = m.start_heading {
        kv.push(("start_heading", h.0.to_string()));
    }
    if let Some(n) = m.steps_per_lap {
        kv.push(("steps_per_lap", n.to_string()));
    }
    if let Some(n) = m.laps {
        kv.push(("laps", n.to_string()));
    }
    if !kv.is_empty() {
        let p = dir.join(META_FILE);
        let body: String = kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }

    if let Some(env) = &ds.env {
        let p = dir.join(APS_FILE);
        write_jsonl(&p, &env.aps)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scenario;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn simulated_dataset_round_trips_bytes() {
        let sc = Scenario {
            laps: 1,
            ..Scenario::default()
        };
        let ds = Dataset::from_simulation(&sc.generate().unwrap(), 1);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = write_dataset(a.path(), &ds).unwrap();
        assert_eq!(files.len(), 5);
        let loaded = load_dataset(a.path()).unwrap();
        assert_eq!(loaded.steps, ds.steps);
        assert_eq!(loaded.scans, ds.scans);
        assert_eq!(loaded.truth, ds.truth);
        assert_eq!(loaded.meta, ds.meta);
        assert_eq!(loaded.env, ds.env);
        assert_eq!(loaded, ds);
        write_dataset(b.path(), &loaded).unwrap();
        for f in [STEPS_FILE, SCANS_FILE, TRUTH_FILE, META_FILE, APS_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn negative_step_length_rejected_with_line() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            STEPS_FILE,
            "{\"t\":0.5,\"dl\":0.7,\"dtheta\":0.0}\n{\"t\":1.0,\"dl\":-0.1,\"dtheta\":0.0}\n",
        );
        write(d.path(), SCANS_FILE, "");
        let e = load_dataset(d.path()).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("steps.jsonl:2"), "{msg}");
        assert!(msg.contains("negative step length"), "{msg}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            STEPS_FILE,
            "{\"t\":0.5,\"dl\":0.7,\"dtheta\":0.0}\n",
        );
        write(
            d.path(),
            SCANS_FILE,
            "{\"t\":0.2,\"readings\":[]}\n{\"t\":0.4,\"readings\":[{\"ap\":\"a\"}]}\n",
        );
        match load_dataset(d.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn weak_rss_clamped_with_warning() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            STEPS_FILE,
            "{\"t\":0.5,\"dl\":0.7,\"dtheta\":0.0}\n",
        );
        write(
            d.path(),
            SCANS_FILE,
            "{\"t\":0.2,\"readings\":[{\"ap\":\"a\",\"rss\":-130},{\"ap\":\"b\",\"rss\":-60.5}]}\n",
        );
        let ds = load_dataset(d.path()).unwrap();
        assert_eq!(ds.scans[0].get(&"a".into()), Some(-110.0));
        assert_eq!(ds.scans[0].get(&"b".into()), Some(-60.5));
        assert_eq!(ds.warnings.len(), 1);
        assert!(ds.truth.is_none());
    }

    #[test]
    fn non_monotone_steps_rejected() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            STEPS_FILE,
            "{\"t\":1.0,\"dl\":0.7,\"dtheta\":0.0}\n{\"t\":0.5,\"dl\":0.7,\"dtheta\":0.0}\n",
        );
        write(d.path(), SCANS_FILE, "");
        assert!(matches!(
            load_dataset(d.path()).unwrap_err(),
            Error::NonMonotoneTimestamps(_)
        ));
    }

    #[test]
    fn duplicate_ap_in_scan_rejected() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), STEPS_FILE, "");
        write(
            d.path(),
            SCANS_FILE,
            "{\"t\":0.2,\"readings\":[{\"ap\":\"a\",\"rss\":-50},{\"ap\":\"a\",\"rss\":-51}]}\n",
        );
        assert!(matches!(
            load_dataset(d.path()).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let e = load_dataset("/nonexistent/pdrloop/dataset").unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }
}
