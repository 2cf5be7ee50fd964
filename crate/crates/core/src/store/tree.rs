//! Copy-on-write time-partitioned tree with fan-out 64.
//!
//! Timestamps are mapped into an unsigned key space `u = t + 2^62`; the root
//! node covers `[0, 2^63)` at pointwidth 63 and each internal level divides
//! its window into 64 children (pointwidth - 6). Nodes at pointwidth 27
//! (~134 ms) are leaves holding raw points. Parents cache per-child
//! aggregates so windowed statistics resolve without descending into
//! fully-covered subtrees.

use super::backend::NodeStore;
use super::StoreError;

pub(crate) const ROOT_PW: u8 = 63;
pub(crate) const LEAF_PW: u8 = 27;
pub(crate) const FANOUT_BITS: u8 = 6;
pub(crate) const FANOUT: usize = 1 << FANOUT_BITS;

const OFFSET: i128 = 1i128 << 62;

/// Supported timestamp domain, inclusive.
pub const MIN_TIMESTAMP: i64 = -(1i64 << 62);
pub const MAX_TIMESTAMP: i64 = (1i64 << 62) - 1;

pub(crate) fn to_u(t: i64) -> u64 {
    ((t as i128) + OFFSET) as u64
}

pub(crate) fn to_t(u: u64) -> i64 {
    ((u as i128) - OFFSET) as i64
}

pub(crate) fn in_domain(t: i64) -> bool {
    (MIN_TIMESTAMP..=MAX_TIMESTAMP).contains(&t)
}

/// Windowed min/max/sum/count aggregate. The mean is `sum / count`, which
/// makes merging exact under count weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Agg {
    pub count: u64,
    pub min: f64,
    pub max: f64,
    pub sum: f64,
}

impl Agg {
    pub const EMPTY: Agg = Agg {
        count: 0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    pub fn add_value(&mut self, v: f64) {
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.sum += v;
    }

    pub fn merge(&mut self, o: &Agg) {
        if o.count == 0 {
            return;
        }
        self.count += o.count;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
        self.sum += o.sum;
    }

    pub fn from_points(points: &[(i64, f64)]) -> Agg {
        let mut a = Agg::EMPTY;
        for &(_, v) in points {
            a.add_value(v);
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ChildEntry {
    pub node: u64,
    pub agg: Agg,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Internal {
        pointwidth: u8,
        start: u64,
        children: Vec<Option<ChildEntry>>,
    },
    Leaf {
        pointwidth: u8,
        start: u64,
        points: Vec<(i64, f64)>,
    },
}

fn child_width(pw: u8) -> u64 {
    1u64 << (pw - FANOUT_BITS)
}

fn slot_of(u: u64, start: u64, pw: u8) -> usize {
    ((u - start) >> (pw - FANOUT_BITS)) as usize
}

/// Copy-on-write insert of sorted, de-duplicated points (u ascending) into
/// the subtree `(old, pw, start)`. Returns the new node reference and its
/// total aggregate.
pub(crate) fn insert_rec(
    store: &dyn NodeStore,
    old: Option<u64>,
    pw: u8,
    start: u64,
    points: &[(u64, f64)],
) -> Result<(u64, Agg), StoreError> {
    if pw == LEAF_PW {
        let mut merged: Vec<(i64, f64)> = Vec::new();
        let old_points: Vec<(i64, f64)> = match old {
            Some(r) => match store.get(r)?.as_ref() {
                Node::Leaf { points, .. } => points.clone(),
                Node::Internal { .. } => {
                    return Err(StoreError::Corrupt("internal node at leaf level".into()))
                }
            },
            None => Vec::new(),
        };
        let mut i = 0;
        let mut j = 0;
        while i < old_points.len() || j < points.len() {
            if i >= old_points.len() {
                merged.push((to_t(points[j].0), points[j].1));
                j += 1;
            } else if j >= points.len() {
                merged.push(old_points[i]);
                i += 1;
            } else {
                let tu = to_u(old_points[i].0);
                match tu.cmp(&points[j].0) {
                    std::cmp::Ordering::Less => {
                        merged.push(old_points[i]);
                        i += 1;
                    }
                    std::cmp::Ordering::Greater => {
                        merged.push((to_t(points[j].0), points[j].1));
                        j += 1;
                    }
                    std::cmp::Ordering::Equal => {
                        // last writer wins
                        merged.push((to_t(points[j].0), points[j].1));
                        i += 1;
                        j += 1;
                    }
                }
            }
        }
        let agg = Agg::from_points(&merged);
        let r = store.put(&Node::Leaf {
            pointwidth: LEAF_PW,
            start,
            points: merged,
        })?;
        return Ok((r, agg));
    }

    let mut children: Vec<Option<ChildEntry>> = match old {
        Some(r) => match store.get(r)?.as_ref() {
            Node::Internal { children, .. } => children.clone(),
            Node::Leaf { .. } => {
                return Err(StoreError::Corrupt("leaf node above leaf level".into()))
            }
        },
        None => vec![None; FANOUT],
    };

    let cw = child_width(pw);
    let mut i = 0;
    while i < points.len() {
        let slot = slot_of(points[i].0, start, pw);
        let mut j = i + 1;
        while j < points.len() && slot_of(points[j].0, start, pw) == slot {
            j += 1;
        }
        let child_start = start + slot as u64 * cw;
        let old_child = children[slot].as_ref().map(|e| e.node);
        let (nref, agg) = insert_rec(
            store,
            old_child,
            pw - FANOUT_BITS,
            child_start,
            &points[i..j],
        )?;
        children[slot] = Some(ChildEntry { node: nref, agg });
        i = j;
    }

    let mut total = Agg::EMPTY;
    for e in children.iter().flatten() {
        total.merge(&e.agg);
    }
    let r = store.put(&Node::Internal {
        pointwidth: pw,
        start,
        children,
    })?;
    Ok((r, total))
}

/// Collect raw points with `lo <= u < hi`, ascending.
pub(crate) fn query_raw_rec(
    store: &dyn NodeStore,
    r: u64,
    lo: u64,
    hi: u64,
    out: &mut Vec<(i64, f64)>,
) -> Result<(), StoreError> {
    match store.get(r)?.as_ref() {
        Node::Leaf { points, .. } => {
            for &(t, v) in points {
                let u = to_u(t);
                if u >= lo && u < hi {
                    out.push((t, v));
                }
            }
        }
        Node::Internal {
            pointwidth,
            start,
            children,
        } => {
            let cw = child_width(*pointwidth);
            for (slot, entry) in children.iter().enumerate() {
                let Some(entry) = entry else { continue };
                let cs = start + slot as u64 * cw;
                if cs >= hi || cs + cw <= lo {
                    continue;
                }
                query_raw_rec(store, entry.node, lo, hi, out)?;
            }
        }
    }
    Ok(())
}

/// Aggregate of all points with `lo <= u < hi` under the subtree rooted at
/// `r`. Fully-covered children resolve through their cached aggregates.
pub(crate) fn agg_range(
    store: &dyn NodeStore,
    r: u64,
    lo: u64,
    hi: u64,
) -> Result<Agg, StoreError> {
    let mut out = Agg::EMPTY;
    match store.get(r)?.as_ref() {
        Node::Leaf { points, .. } => {
            for &(t, v) in points {
                let u = to_u(t);
                if u >= lo && u < hi {
                    out.add_value(v);
                }
            }
        }
        Node::Internal {
            pointwidth,
            start,
            children,
        } => {
            let cw = child_width(*pointwidth);
            for (slot, entry) in children.iter().enumerate() {
                let Some(entry) = entry else { continue };
                let cs = start + slot as u64 * cw;
                if cs >= hi || cs.saturating_add(cw) <= lo {
                    continue;
                }
                if cs >= lo && cs + cw <= hi {
                    out.merge(&entry.agg);
                } else {
                    out.merge(&agg_range(store, entry.node, lo, hi)?);
                }
            }
        }
    }
    Ok(out)
}

/// First and last point timestamps in the subtree, if any.
pub(crate) fn extent(store: &dyn NodeStore, r: u64) -> Result<Option<(i64, i64)>, StoreError> {
    match store.get(r)?.as_ref() {
        Node::Leaf { points, .. } => Ok(points
            .first()
            .map(|f| (f.0, points.last().expect("nonempty").0))),
        Node::Internal { children, .. } => {
            let mut first = None;
            let mut last = None;
            for entry in children.iter().flatten() {
                if entry.agg.count == 0 {
                    continue;
                }
                if let Some((lo, hi)) = extent(store, entry.node)? {
                    if first.is_none() {
                        first = Some(lo);
                    }
                    last = Some(hi);
                }
            }
            Ok(first.map(|f| (f, last.expect("last set with first"))))
        }
    }
}

/// Timestamps (as `u`) whose values differ between the two subtrees. Shared
/// references are skipped wholesale; leaves are compared point by point, so
/// an overwrite with an identical value does not count as a difference.
pub(crate) fn diff_rec(
    store: &dyn NodeStore,
    a: Option<u64>,
    b: Option<u64>,
    out: &mut Vec<u64>,
) -> Result<(), StoreError> {
    match (a, b) {
        (None, None) => Ok(()),
        (Some(x), Some(y)) if x == y => Ok(()),
        (None, Some(r)) | (Some(r), None) => collect_all(store, r, out),
        (Some(x), Some(y)) => {
            let na = store.get(x)?;
            let nb = store.get(y)?;
            match (na.as_ref(), nb.as_ref()) {
                (Node::Leaf { points: pa, .. }, Node::Leaf { points: pb, .. }) => {
                    let mut i = 0;
                    let mut j = 0;
                    while i < pa.len() || j < pb.len() {
                        if i >= pa.len() {
                            out.push(to_u(pb[j].0));
                            j += 1;
                        } else if j >= pb.len() {
                            out.push(to_u(pa[i].0));
                            i += 1;
                        } else {
                            match pa[i].0.cmp(&pb[j].0) {
                                std::cmp::Ordering::Less => {
                                    out.push(to_u(pa[i].0));
                                    i += 1;
                                }
                                std::cmp::Ordering::Greater => {
                                    out.push(to_u(pb[j].0));
                                    j += 1;
                                }
                                std::cmp::Ordering::Equal => {
                                    if pa[i].1.to_bits() != pb[j].1.to_bits() {
                                        out.push(to_u(pa[i].0));
                                    }
                                    i += 1;
                                    j += 1;
                                }
                            }
                        }
                    }
                    Ok(())
                }
                (
                    Node::Internal { children: ca, .. },
                    Node::Internal { children: cb, .. },
                ) => {
                    for slot in 0..FANOUT {
                        diff_rec(
                            store,
                            ca[slot].as_ref().map(|e| e.node),
                            cb[slot].as_ref().map(|e| e.node),
                            out,
                        )?;
                    }
                    Ok(())
                }
                _ => Err(StoreError::Corrupt(
                    "mismatched node kinds at the same tree position".into(),
                )),
            }
        }
    }
}

fn collect_all(store: &dyn NodeStore, r: u64, out: &mut Vec<u64>) -> Result<(), StoreError> {
    match store.get(r)?.as_ref() {
        Node::Leaf { points, .. } => {
            out.extend(points.iter().map(|&(t, _)| to_u(t)));
            Ok(())
        }
        Node::Internal { children, .. } => {
            for entry in children.iter().flatten() {
                collect_all(store, entry.node, out)?;
            }
            Ok(())
        }
    }
}

/// Recompute the subtree aggregate from raw leaves, checking every cached
/// child aggregate along the way.
pub(crate) fn verify_aggregates(store: &dyn NodeStore, r: u64) -> Result<Agg, StoreError> {
    match store.get(r)?.as_ref() {
        Node::Leaf { points, .. } => Ok(Agg::from_points(points)),
        Node::Internal { children, .. } => {
            let mut total = Agg::EMPTY;
            for entry in children.iter().flatten() {
                let got = verify_aggregates(store, entry.node)?;
                let cached = entry.agg;
                let same = got.count == cached.count
                    && (got.count == 0
                        || (got.min == cached.min
                            && got.max == cached.max
                            && (got.sum - cached.sum).abs()
                                <= 1e-9 * got.sum.abs().max(1.0)));
                if !same {
                    return Err(StoreError::Corrupt(format!(
                        "cached child aggregate {cached:?} does not match recomputed {got:?}"
                    )));
                }
                total.merge(&got);
            }
            Ok(total)
        }
    }
}
