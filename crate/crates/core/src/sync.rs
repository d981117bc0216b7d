//! Pairing asynchronous WiFi scans with IMU steps.
//!
//! The filter is driven by steps. Each step takes the most recent scan whose
//! timestamp lies in `(previous step time, step time]`; older scans in the
//! same interval are shadowed and dropped, and scans after the last step are
//! discarded. The first step's interval is unbounded below.

use crate::error::{Error, Result};
use crate::model::{RssVector, StepMeasurement};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEpoch {
    pub step: StepMeasurement,
    pub rss: Option<RssVector>,
}

impl AlignedEpoch {
    pub fn dead_reckoning(step: StepMeasurement) -> Self {
        AlignedEpoch { step, rss: None }
    }
}

/// Aligns scans to steps. Steps must be strictly increasing in time, scans
/// non-decreasing; on equal scan timestamps the later one in the list wins.
pub fn align_observations(
    steps: &[StepMeasurement],
    scans: &[RssVector],
) -> Result<Vec<AlignedEpoch>> {
    if let Some(w) = steps.windows(2).find(|w| !(w[1].t > w[0].t)) {
        return Err(Error::NonMonotoneTimestamps(format!(
            "step at t={} follows t={}",
            w[1].t, w[0].t
        )));
    }
    if let Some(w) = scans.windows(2).find(|w| !(w[1].t >= w[0].t)) {
        return Err(Error::NonMonotoneTimestamps(format!(
            "scan at t={} follows t={}",
            w[1].t, w[0].t
        )));
    }

    let mut out = Vec::with_capacity(steps.len());
    let mut next_scan = 0;
    for step in steps {
        let mut chosen = None;
        while next_scan < scans.len() && scans[next_scan].t <= step.t {
            chosen = Some(next_scan);
            next_scan += 1;
        }
        out.push(AlignedEpoch {
            step: *step,
            rss: chosen.map(|i| scans[i].clone()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(t: f64) -> StepMeasurement {
        StepMeasurement {
            t,
            delta_l: 0.7,
            delta_theta: 0.0,
        }
    }

    fn scan(t: f64) -> RssVector {
        RssVector::new(t).with("ap", -60.0)
    }

    #[test]
    fn most_recent_scan_before_step() {
        let out = align_observations(&[step(5.0), step(10.0)], &[scan(9.8)]).unwrap();
        assert!(out[0].rss.is_none());
        assert_eq!(out[1].rss.as_ref().unwrap().t, 9.8);
    }

    #[test]
    fn gap_without_scan_is_absent() {
        let out = align_observations(&[step(1.0), step(2.0), step(3.0)], &[scan(0.5), scan(2.5)])
            .unwrap();
        assert_eq!(out[0].rss.as_ref().unwrap().t, 0.5);
        assert!(out[1].rss.is_none());
        assert_eq!(out[2].rss.as_ref().unwrap().t, 2.5);
    }

    #[test]
    fn later_scan_shadows_earlier() {
        let out = align_observations(&[step(5.0), step(10.0)], &[scan(9.1), scan(9.8)]).unwrap();
        assert_eq!(out[1].rss.as_ref().unwrap().t, 9.8);
        assert!(out[0].rss.is_none());
    }

    #[test]
    fn scan_at_step_time_is_included_and_trailing_dropped() {
        let out = align_observations(&[step(1.0)], &[scan(1.0), scan(1.5)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rss.as_ref().unwrap().t, 1.0);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let e = align_observations(&[step(2.0), step(1.0)], &[]).unwrap_err();
        assert!(e.to_string().starts_with("non-monotone timestamps"));
        let e = align_observations(&[step(1.0)], &[scan(3.0), scan(2.0)]).unwrap_err();
        assert!(matches!(e, Error::NonMonotoneTimestamps(_)));
    }

    /// Reference alignment: merge both streams into one time-ordered event
    /// stream (scans before steps on ties) and keep the last pending scan.
    fn merge_oracle(steps: &[StepMeasurement], scans: &[RssVector]) -> Vec<Option<f64>> {
        enum Ev {
            Scan(f64),
            Step,
        }
        let mut evs: Vec<(f64, u8, Ev)> = scans.iter().map(|s| (s.t, 0, Ev::Scan(s.t))).collect();
        evs.extend(steps.iter().map(|s| (s.t, 1, Ev::Step)));
        evs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut pending = None;
        let mut out = Vec::new();
        for (_, _, ev) in evs {
            match ev {
                Ev::Scan(t) => pending = Some(t),
                Ev::Step => out.push(pending.take()),
            }
        }
        out
    }

    fn sorted_times(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(1u32..400, 0..max_len).prop_map(|mut v| {
            v.sort_unstable();
            v.dedup();
            v.into_iter().map(|x| x as f64 * 0.25).collect()
        })
    }

    proptest! {
        #[test]
        fn alignment_properties(step_ts in sorted_times(40), scan_ts in sorted_times(60)) {
            let steps: Vec<_> = step_ts.iter().map(|&t| step(t)).collect();
            let scans: Vec<_> = scan_ts.iter().map(|&t| scan(t)).collect();
            let out = align_observations(&steps, &scans).unwrap();

            prop_assert_eq!(out.len(), steps.len());
            let mut prev = f64::NEG_INFINITY;
            for e in &out {
                if let Some(r) = &e.rss {
                    prop_assert!(r.t <= e.step.t);
                    prop_assert!(r.t > prev);
                }
                prev = e.step.t;
            }
            let got: Vec<_> = out.iter().map(|e| e.rss.as_ref().map(|r| r.t)).collect();
            prop_assert_eq!(got, merge_oracle(&steps, &scans));

            let again = align_observations(&steps, &scans).unwrap();
            prop_assert_eq!(out, again);
        }
    }
}
