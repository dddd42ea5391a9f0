//! Stream-level transforms: polarity filtering, time windows and saccade selection.
//!
//! Every transform returns an order-preserving subsequence of its input and
//! keeps the stream's dimensions.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::aer::{EventStream, Polarity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A time interval in microseconds. `closed_end` makes the upper bound inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub end: u64,
    pub closed_end: bool,
}

impl Window {
    pub fn contains(&self, t: u64) -> bool {
        t >= self.start && (t < self.end || (self.closed_end && t == self.end))
    }
}

/// Partition of a recording into saccades.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaccadePlan {
    windows: Vec<Window>,
}

impl SaccadePlan {
    /// Splits `[0, span]` into `k` equal windows `[i*span/k, (i+1)*span/k)`,
    /// the last one closed at `span`. Boundaries are floored to whole microseconds.
    pub fn equal(span: u64, k: usize) -> Result<Self, OpsError> {
        if k == 0 {
            return Err(OpsError::InvalidArgument(
                "saccade count must be at least 1".into(),
            ));
        }
        let k64 = k as u64;
        let bound = |i: u64| ((u128::from(span) * u128::from(i)) / u128::from(k64)) as u64;
        let windows = (0..k64)
            .map(|i| Window {
                start: bound(i),
                end: bound(i + 1),
                closed_end: i + 1 == k64,
            })
            .collect();
        Ok(SaccadePlan { windows })
    }

    /// Explicit half-open windows; they must be non-empty, ordered and disjoint.
    pub fn from_boundaries(bounds: &[(u64, u64)]) -> Result<Self, OpsError> {
        if bounds.is_empty() {
            return Err(OpsError::InvalidArgument("no saccade windows given".into()));
        }
        let mut prev_end = 0;
        for (i, &(s, e)) in bounds.iter().enumerate() {
            if s >= e {
                return Err(OpsError::InvalidArgument(format!(
                    "window {i} [{s}, {e}) is empty"
                )));
            }
            if i > 0 && s < prev_end {
                return Err(OpsError::InvalidArgument(format!(
                    "window {i} [{s}, {e}) overlaps or precedes its predecessor"
                )));
            }
            prev_end = e;
        }
        Ok(SaccadePlan {
            windows: bounds
                .iter()
                .map(|&(start, end)| Window {
                    start,
                    end,
                    closed_end: false,
                })
                .collect(),
        })
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn count(&self) -> usize {
        self.windows.len()
    }
}

pub fn filter_polarity(stream: &EventStream, keep: Polarity) -> EventStream {
    stream.derive(
        stream
            .events
            .iter()
            .filter(|e| e.polarity == keep)
            .copied()
            .collect(),
    )
}

/// Equal division of `[0, t_last]` into `k` saccades, where `t_last` is the
/// stream's largest timestamp.
pub fn plan_saccades(stream: &EventStream, k: usize) -> Result<SaccadePlan, OpsError> {
    SaccadePlan::equal(u64::from(stream.max_timestamp()), k)
}

pub fn select_saccades(
    stream: &EventStream,
    plan: &SaccadePlan,
    indices: &BTreeSet<usize>,
) -> Result<EventStream, OpsError> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= plan.count()) {
        return Err(OpsError::InvalidArgument(format!(
            "saccade index {bad} out of range for a {}-saccade plan",
            plan.count()
        )));
    }
    let chosen: Vec<Window> = indices.iter().map(|&i| plan.windows[i]).collect();
    Ok(stream.derive(
        stream
            .events
            .iter()
            .filter(|e| chosen.iter().any(|w| w.contains(u64::from(e.timestamp))))
            .copied()
            .collect(),
    ))
}

/// Keeps events with `t0 <= t < t1`.
pub fn time_window(stream: &EventStream, t0: u64, t1: u64) -> Result<EventStream, OpsError> {
    if t0 > t1 {
        return Err(OpsError::InvalidArgument(format!(
            "window start {t0} exceeds end {t1}"
        )));
    }
    let w = Window {
        start: t0,
        end: t1,
        closed_end: false,
    };
    Ok(stream.derive(
        stream
            .events
            .iter()
            .filter(|e| w.contains(u64::from(e.timestamp)))
            .copied()
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aer::Event;
    use proptest::prelude::*;

    fn at(ts: &[u32]) -> EventStream {
        EventStream::with_inferred_dims(
            ts.iter().map(|&t| Event::new(0, 0, Polarity::On, t)).collect(),
        )
    }

    fn times(s: &EventStream) -> Vec<u32> {
        s.events.iter().map(|e| e.timestamp).collect()
    }

    #[test]
    fn polarity_filter() {
        let s = EventStream::new(
            vec![
                Event::new(0, 0, Polarity::On, 1),
                Event::new(1, 0, Polarity::Off, 2),
                Event::new(2, 1, Polarity::On, 3),
            ],
            4,
            4,
        )
        .unwrap();
        assert_eq!(times(&filter_polarity(&s, Polarity::On)), vec![1, 3]);

        let off = s.derive(vec![Event::new(0, 0, Polarity::Off, 5)]);
        let kept = filter_polarity(&off, Polarity::On);
        assert!(kept.is_empty());
        assert_eq!((kept.width, kept.height), (4, 4));
        assert!(filter_polarity(&at(&[]), Polarity::On).is_empty());
    }

    #[test]
    fn saccade_plans() {
        let s = at(&[0, 300_000]);
        let p = plan_saccades(&s, 3).unwrap();
        let w: Vec<_> = p.windows().iter().map(|w| (w.start, w.end, w.closed_end)).collect();
        assert_eq!(
            w,
            vec![
                (0, 100_000, false),
                (100_000, 200_000, false),
                (200_000, 300_000, true)
            ]
        );
        let one = plan_saccades(&s, 1).unwrap();
        assert_eq!(one.windows(), &[Window { start: 0, end: 300_000, closed_end: true }]);

        let degenerate = plan_saccades(&at(&[]), 3).unwrap();
        assert_eq!(degenerate.count(), 3);
        assert!(degenerate.windows().iter().all(|w| w.start == 0 && w.end == 0));

        assert!(plan_saccades(&s, 0).is_err());
    }

    #[test]
    fn saccade_selection() {
        let s = at(&[50_000, 150_000, 250_000]);
        let plan = SaccadePlan::equal(300_000, 3).unwrap();
        let first = select_saccades(&s, &plan, &BTreeSet::from([0])).unwrap();
        assert_eq!(times(&first), vec![50_000]);
        let all = select_saccades(&s, &plan, &BTreeSet::from([0, 1, 2])).unwrap();
        assert_eq!(all, s);
        assert!(select_saccades(&s, &plan, &BTreeSet::from([5])).is_err());
    }

    #[test]
    fn last_window_is_closed() {
        let s = at(&[0, 150, 300]);
        let plan = plan_saccades(&s, 3).unwrap();
        let last = select_saccades(&s, &plan, &BTreeSet::from([2])).unwrap();
        assert_eq!(times(&last), vec![300]);
    }

    #[test]
    fn explicit_boundaries() {
        let plan = SaccadePlan::from_boundaries(&[(0, 10), (10, 20)]).unwrap();
        let s = at(&[0, 10, 20]);
        let sel = select_saccades(&s, &plan, &BTreeSet::from([0, 1])).unwrap();
        assert_eq!(times(&sel), vec![0, 10]);
        assert!(SaccadePlan::from_boundaries(&[(5, 5)]).is_err());
        assert!(SaccadePlan::from_boundaries(&[(0, 10), (5, 20)]).is_err());
        assert!(SaccadePlan::from_boundaries(&[]).is_err());
    }

    #[test]
    fn windows() {
        let s = at(&[10, 20, 30]);
        assert_eq!(times(&time_window(&s, 10, 30).unwrap()), vec![10, 20]);
        assert!(time_window(&s, 0, 0).unwrap().is_empty());
        assert!(time_window(&s, 5, 3).is_err());
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        proptest::collection::vec((0u16..8, 0u16..8, any::<bool>(), 0u32..1000), 0..60).prop_map(
            |v| {
                let events = v
                    .into_iter()
                    .map(|(x, y, on, t)| {
                        Event::new(x, y, if on { Polarity::On } else { Polarity::Off }, t)
                    })
                    .collect();
                EventStream::new(events, 8, 8).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn polarity_split_is_a_partition(s in arb_stream()) {
            let on = filter_polarity(&s, Polarity::On);
            let off = filter_polarity(&s, Polarity::Off);
            let mut merged: Vec<_> = on.events.iter().chain(&off.events).copied().collect();
            let mut orig = s.events.clone();
            let key = |e: &Event| (e.timestamp, e.x, e.y, e.polarity);
            merged.sort_by_key(key);
            orig.sort_by_key(key);
            prop_assert_eq!(merged, orig);
        }

        #[test]
        fn full_selection_is_identity(s in arb_stream(), k in 1usize..6) {
            let plan = plan_saccades(&s, k).unwrap();
            let all: BTreeSet<usize> = (0..k).collect();
            prop_assert_eq!(select_saccades(&s, &plan, &all).unwrap(), s.clone());
            let end = u64::from(s.max_timestamp()) + 1;
            prop_assert_eq!(time_window(&s, 0, end).unwrap(), s);
        }

        #[test]
        fn filter_and_select_commute(s in arb_stream(), k in 1usize..5, pick in 0usize..5) {
            let plan = SaccadePlan::equal(1000, k).unwrap();
            let idx = BTreeSet::from([pick % k]);
            let a = select_saccades(&filter_polarity(&s, Polarity::On), &plan, &idx).unwrap();
            let b = filter_polarity(&select_saccades(&s, &plan, &idx).unwrap(), Polarity::On);
            prop_assert_eq!(a, b);
        }
    }
}
