//! Model-based property tests for the store: every query is checked against
//! a shadow BTreeMap per version, and changed_ranges against full raw diffs.

use std::collections::BTreeMap;

use gridphasor_core::store::{PhaseLabel, Store, StoreError, StreamKey, VersionId};
use proptest::prelude::*;

fn batch_strategy() -> impl Strategy<Value = Vec<(i64, f64)>> {
    prop::collection::vec(
        (
            // cluster timestamps so some batches share leaves and some do not
            prop_oneof![
                0i64..200_000_000,
                1_000_000_000_000i64..1_000_200_000_000,
                -300_000_000i64..0,
            ],
            -1e3f64..1e3,
        ),
        1..120,
    )
    .prop_map(|mut pts| {
        pts.sort_by_key(|p| p.0);
        pts.dedup_by_key(|p| p.0);
        pts
    })
}

struct Shadow {
    snapshots: Vec<BTreeMap<i64, f64>>,
}

impl Shadow {
    fn new() -> Self {
        Shadow {
            snapshots: vec![BTreeMap::new()],
        }
    }

    fn insert(&mut self, pts: &[(i64, f64)]) {
        let mut next = self.snapshots.last().unwrap().clone();
        for &(t, v) in pts {
            next.insert(t, v);
        }
        self.snapshots.push(next);
    }
}

fn check_version(store: &Store, key: &StreamKey, shadow: &Shadow, v: usize) {
    let version = VersionId(v as u64);
    let model = &shadow.snapshots[v];
    let all: Vec<(i64, f64)> = model.iter().map(|(&t, &x)| (t, x)).collect();
    let got = store
        .query_raw(key, i64::MIN / 4, i64::MAX / 4, version)
        .unwrap();
    assert_eq!(got, all, "full scan mismatch at version {v}");

    // a few subranges
    if let (Some(&(lo, _)), Some(&(hi, _))) = (all.first(), all.last()) {
        let span = (hi - lo).max(1);
        for k in 0..4 {
            let t0 = lo + span * k / 5;
            let t1 = lo + span * (k + 2) / 5;
            let want: Vec<(i64, f64)> = model
                .range(t0..t1)
                .map(|(&t, &x)| (t, x))
                .collect();
            let got = store.query_raw(key, t0, t1, version).unwrap();
            assert_eq!(got, want, "range [{t0},{t1}) at version {v}");
        }

        // windows at a few pointwidths against brute force
        for pw in [18u8, 24, 31, 38] {
            let width = 1i64 << pw;
            let t1 = hi + 1;
            let n_windows = (t1 - lo) / width + 2;
            if n_windows > 2_000 {
                continue;
            }
            let wins = store.query_windows(key, lo, t1, pw, version).unwrap();
            for w in &wins {
                let vals: Vec<f64> = model
                    .range(w.window_start..w.window_start.saturating_add(width))
                    .map(|(_, &x)| x)
                    .collect();
                assert_eq!(w.count as usize, vals.len());
                if vals.is_empty() {
                    assert!(w.min.is_none() && w.max.is_none() && w.mean.is_none());
                } else {
                    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    assert_eq!(w.min, Some(min));
                    assert_eq!(w.max, Some(max));
                    let m = w.mean.unwrap();
                    assert!((m - mean).abs() <= 1e-9 * mean.abs().max(1.0));
                    assert!(w.min.unwrap() <= m + 1e-12 && m <= w.max.unwrap() + 1e-12);
                }
            }
        }
    }
}

fn check_changed_ranges(store: &Store, key: &StreamKey, shadow: &Shadow, va: usize, vb: usize) {
    let pw = 20u8;
    let width = 1i64 << pw;
    let a = &shadow.snapshots[va];
    let b = &shadow.snapshots[vb];
    let mut differing: Vec<i64> = Vec::new();
    for (t, v) in b {
        match a.get(t) {
            Some(x) if x.to_bits() == v.to_bits() => {}
            _ => differing.push(*t),
        }
    }
    for (t, _) in a {
        if !b.contains_key(t) {
            differing.push(*t);
        }
    }
    differing.sort_unstable();

    let ranges = store
        .changed_ranges(key, VersionId(va as u64), VersionId(vb as u64), pw)
        .unwrap();

    // aligned, disjoint, sorted
    let mut prev_end = i64::MIN;
    for r in &ranges {
        assert!(r.start.rem_euclid(width) == 0 && r.end.rem_euclid(width) == 0);
        assert!(r.start < r.end);
        assert!(r.start >= prev_end, "ranges overlap or are unsorted");
        prev_end = r.end;
    }
    // soundness: every differing timestamp is covered
    for t in &differing {
        assert!(
            ranges.iter().any(|r| r.start <= *t && *t < r.end),
            "difference at {t} not covered (va={va} vb={vb})"
        );
    }
    // aligned-completeness: every window in every range contains a difference
    for r in &ranges {
        let mut w = r.start;
        while w < r.end {
            assert!(
                differing.iter().any(|t| w <= *t && *t < w + width),
                "window at {w} contains no differing timestamp"
            );
            w += width;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn store_against_shadow_model(batches in prop::collection::vec(batch_strategy(), 1..6)) {
        let store = Store::in_memory();
        let key = StreamKey::v_mag("prop", PhaseLabel::A);
        let mut shadow = Shadow::new();

        for pts in &batches {
            store.insert(&key, pts).unwrap();
            shadow.insert(pts);
        }
        let latest = store.latest_version(&key).unwrap().0 as usize;
        prop_assert_eq!(latest, batches.len());

        for v in 0..=latest {
            check_version(&store, &key, &shadow, v);
        }
        for va in 0..=latest {
            for vb in va..=latest {
                check_changed_ranges(&store, &key, &shadow, va, vb);
            }
        }
        store.verify_aggregates(&key, VersionId(latest as u64)).unwrap();
    }

    #[test]
    fn old_versions_are_byte_stable(first in batch_strategy(), second in batch_strategy()) {
        let store = Store::in_memory();
        let key = StreamKey::v_mag("stable", PhaseLabel::B);
        let v1 = store.insert(&key, &first).unwrap();
        let before = format!("{:?}", store.query_raw(&key, i64::MIN/4, i64::MAX/4, v1).unwrap());
        let before_w = format!("{:?}", store.query_windows(&key,
            first.first().map(|p| p.0).unwrap_or(0),
            first.last().map(|p| p.0 + 1).unwrap_or(1), 26, v1).unwrap());
        store.insert(&key, &second).unwrap();
        let after = format!("{:?}", store.query_raw(&key, i64::MIN/4, i64::MAX/4, v1).unwrap());
        let after_w = format!("{:?}", store.query_windows(&key,
            first.first().map(|p| p.0).unwrap_or(0),
            first.last().map(|p| p.0 + 1).unwrap_or(1), 26, v1).unwrap());
        prop_assert_eq!(before, after);
        prop_assert_eq!(before_w, after_w);
    }
}

#[test]
fn duplicate_batch_timestamps_conflict() {
    let store = Store::in_memory();
    let key = StreamKey::v_mag("dup", PhaseLabel::C);
    let e = store.insert(&key, &[(7, 0.0), (7, 1.0)]).unwrap_err();
    assert!(matches!(e, StoreError::BatchConflict(7)));
}
