//! Multi-resolution, versioned, tree-structured time-series store.
//!
//! Streams are scalar channels (value by nanosecond timestamp). Every insert
//! produces a new immutable version via copy-on-write path materialization;
//! any committed version stays queryable forever (append-only, no garbage
//! collection). Windowed statistics resolve against cached subtree
//! aggregates, and `changed_ranges` diffs two versions structurally.
//!
//! Concurrency: one writer per stream at a time (writers on the same stream
//! serialize on a per-stream lock); readers pin a version and never block
//! the writer or observe partial inserts.

mod backend;
mod tree;

pub use tree::{MAX_TIMESTAMP, MIN_TIMESTAMP};

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use backend::{FileBackend, MemBackend, NodeStore};
use tree::{in_domain, to_t, to_u, Agg};

/// Store file name inside a store directory.
pub const STORE_FILE: &str = "store.log";

/// Hard cap on the number of windows a single aggregate query may produce.
pub const MAX_QUERY_WINDOWS: u64 = 1 << 22;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate timestamp {0} within one insert batch")]
    BatchConflict(i64),
    #[error("unknown stream {0}")]
    UnknownStream(String),
    #[error("unknown version {0} for stream {1}")]
    UnknownVersion(u64, String),
    #[error("pointwidth {0} outside [0, 62]")]
    InvalidPointwidth(u8),
    #[error("timestamp {0} outside the supported domain")]
    OutOfRange(i64),
    #[error("value at timestamp {0} is not finite")]
    InvalidValue(i64),
    #[error("invalid time range: t0 {0} > t1 {1}")]
    InvalidRange(i64, i64),
    #[error("version order violated: vA {0} > vB {1}")]
    VersionOrder(u64, u64),
    #[error("query would produce {0} windows (limit {MAX_QUERY_WINDOWS})")]
    TooManyWindows(u64),
    #[error("invalid stream key: {0}")]
    InvalidKey(String),
    #[error("storage io: {0}")]
    Io(#[from] std::io::Error),
    #[error("store file corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseLabel {
    A,
    B,
    C,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 3] = [PhaseLabel::A, PhaseLabel::B, PhaseLabel::C];

    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseLabel::A => "a",
            PhaseLabel::B => "b",
            PhaseLabel::C => "c",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            PhaseLabel::A => 0,
            PhaseLabel::B => 1,
            PhaseLabel::C => 2,
        }
    }
}

/// Raw measurement channels plus named distiller outputs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    VMag(PhaseLabel),
    VAng(PhaseLabel),
    IMag(PhaseLabel),
    IAng(PhaseLabel),
    Derived(String),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::VMag(p) => write!(f, "V_mag/{}", p.as_str()),
            Channel::VAng(p) => write!(f, "V_ang/{}", p.as_str()),
            Channel::IMag(p) => write!(f, "I_mag/{}", p.as_str()),
            Channel::IAng(p) => write!(f, "I_ang/{}", p.as_str()),
            Channel::Derived(name) => write!(f, "derived/{name}"),
        }
    }
}

/// Identifies one scalar stream: a meter (or logical producer) plus channel.
///
/// The canonical text form is `meter/V_mag/a`, `meter/I_ang/c`,
/// `meter/derived/<name>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey {
    pub meter: String,
    pub channel: Channel,
}

impl StreamKey {
    pub fn new(meter: impl Into<String>, channel: Channel) -> Self {
        Self {
            meter: meter.into(),
            channel,
        }
    }

    pub fn v_mag(meter: impl Into<String>, p: PhaseLabel) -> Self {
        Self::new(meter, Channel::VMag(p))
    }

    pub fn v_ang(meter: impl Into<String>, p: PhaseLabel) -> Self {
        Self::new(meter, Channel::VAng(p))
    }

    pub fn i_mag(meter: impl Into<String>, p: PhaseLabel) -> Self {
        Self::new(meter, Channel::IMag(p))
    }

    pub fn i_ang(meter: impl Into<String>, p: PhaseLabel) -> Self {
        Self::new(meter, Channel::IAng(p))
    }

    pub fn derived(meter: impl Into<String>, name: impl Into<String>) -> Self {
        Self::new(meter, Channel::Derived(name.into()))
    }

    pub fn canon(&self) -> String {
        format!("{}/{}", self.meter, self.channel)
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.meter.is_empty() || self.meter.contains('/') {
            return Err(StoreError::InvalidKey(self.canon()));
        }
        if let Channel::Derived(name) = &self.channel {
            if name.is_empty() || name.contains('/') {
                return Err(StoreError::InvalidKey(self.canon()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canon())
    }
}

impl FromStr for StreamKey {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, StoreError> {
        let bad = || StoreError::InvalidKey(s.to_string());
        let mut parts = s.splitn(3, '/');
        let meter = parts.next().filter(|m| !m.is_empty()).ok_or_else(bad)?;
        let kind = parts.next().ok_or_else(bad)?;
        let rest = parts.next().ok_or_else(bad)?;
        let channel = if kind == "derived" {
            if rest.is_empty() || rest.contains('/') {
                return Err(bad());
            }
            Channel::Derived(rest.to_string())
        } else {
            let phase = match rest {
                "a" => PhaseLabel::A,
                "b" => PhaseLabel::B,
                "c" => PhaseLabel::C,
                _ => return Err(bad()),
            };
            match kind {
                "V_mag" => Channel::VMag(phase),
                "V_ang" => Channel::VAng(phase),
                "I_mag" => Channel::IMag(phase),
                "I_ang" => Channel::IAng(phase),
                _ => return Err(bad()),
            }
        };
        Ok(StreamKey {
            meter: meter.to_string(),
            channel,
        })
    }
}

impl Serialize for StreamKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canon())
    }
}

impl<'de> Deserialize<'de> for StreamKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Monotonically increasing per-stream version. Version 0 is the empty
/// stream; every insert produces version v+1.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct VersionId(pub u64);

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Statistics of one aligned window. `count == 0` means the window holds no
/// points and min/max/mean are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatPoint {
    pub window_start: i64,
    pub pointwidth: u8,
    pub count: u64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

impl StatPoint {
    fn from_agg(window_start: i64, pointwidth: u8, agg: &Agg) -> Self {
        if agg.count == 0 {
            StatPoint {
                window_start,
                pointwidth,
                count: 0,
                min: None,
                max: None,
                mean: None,
            }
        } else {
            StatPoint {
                window_start,
                pointwidth,
                count: agg.count,
                min: Some(agg.min),
                max: Some(agg.max),
                mean: Some(agg.sum / agg.count as f64),
            }
        }
    }
}

/// Half-open time interval in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

struct StreamMeta {
    /// Root reference per version; index v holds version v (0 = empty).
    versions: Vec<Option<u64>>,
    writer: Arc<Mutex<()>>,
}

/// The store: a catalog of streams over a shared node backend.
pub struct Store {
    backend: Arc<dyn NodeStore>,
    catalog: Mutex<HashMap<String, StreamMeta>>,
}

impl Store {
    pub fn in_memory() -> Store {
        Store {
            backend: Arc::new(MemBackend::default()),
            catalog: Mutex::new(HashMap::new()),
        }
    }

    /// Open (or create) a store directory backed by a single append-only
    /// segment log.
    pub fn open(dir: &Path) -> Result<Store, StoreError> {
        std::fs::create_dir_all(dir)?;
        let (backend, roots) = FileBackend::open(&dir.join(STORE_FILE))?;
        let mut catalog: HashMap<String, StreamMeta> = HashMap::new();
        for (key, version, root) in roots {
            let meta = catalog.entry(key.clone()).or_insert_with(|| StreamMeta {
                versions: vec![None],
                writer: Arc::new(Mutex::new(())),
            });
            if version as usize != meta.versions.len() {
                return Err(StoreError::Corrupt(format!(
                    "stream {key} has version {version} after {}",
                    meta.versions.len() - 1
                )));
            }
            meta.versions.push(root);
        }
        Ok(Store {
            backend: Arc::new(backend),
            catalog: Mutex::new(catalog),
        })
    }

    /// Insert a batch of points, producing a new version. Duplicate
    /// timestamps within the batch are rejected; duplicates against existing
    /// data overwrite (last writer wins).
    pub fn insert(&self, key: &StreamKey, points: &[(i64, f64)]) -> Result<VersionId, StoreError> {
        key.validate()?;
        let mut sorted: Vec<(u64, f64)> = Vec::with_capacity(points.len());
        for &(t, v) in points {
            if !in_domain(t) {
                return Err(StoreError::OutOfRange(t));
            }
            if !v.is_finite() {
                return Err(StoreError::InvalidValue(t));
            }
            sorted.push((to_u(t), v));
        }
        sorted.sort_by_key(|p| p.0);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(StoreError::BatchConflict(to_t(w[0].0)));
            }
        }

        let canon = key.canon();
        let writer = {
            let mut cat = self.catalog.lock().expect("catalog poisoned");
            cat.entry(canon.clone())
                .or_insert_with(|| StreamMeta {
                    versions: vec![None],
                    writer: Arc::new(Mutex::new(())),
                })
                .writer
                .clone()
        };
        let _writing = writer.lock().expect("writer lock poisoned");

        let old_root = {
            let cat = self.catalog.lock().expect("catalog poisoned");
            let meta = &cat[&canon];
            *meta.versions.last().expect("at least version 0")
        };
        let new_root = if sorted.is_empty() {
            old_root
        } else {
            let (r, _) = tree::insert_rec(
                self.backend.as_ref(),
                old_root,
                tree::ROOT_PW,
                0,
                &sorted,
            )?;
            Some(r)
        };

        let mut cat = self.catalog.lock().expect("catalog poisoned");
        let meta = cat.get_mut(&canon).expect("stream registered above");
        let version = meta.versions.len() as u64;
        self.backend.commit_root(&canon, version, new_root)?;
        meta.versions.push(new_root);
        Ok(VersionId(version))
    }

    fn root_for(&self, key: &StreamKey, version: VersionId) -> Result<Option<u64>, StoreError> {
        let canon = key.canon();
        let cat = self.catalog.lock().expect("catalog poisoned");
        let meta = cat
            .get(&canon)
            .ok_or_else(|| StoreError::UnknownStream(canon.clone()))?;
        meta.versions
            .get(version.0 as usize)
            .copied()
            .ok_or(StoreError::UnknownVersion(version.0, canon))
    }

    pub fn latest_version(&self, key: &StreamKey) -> Result<VersionId, StoreError> {
        let canon = key.canon();
        let cat = self.catalog.lock().expect("catalog poisoned");
        let meta = cat
            .get(&canon)
            .ok_or(StoreError::UnknownStream(canon))?;
        Ok(VersionId(meta.versions.len() as u64 - 1))
    }

    pub fn streams(&self) -> Vec<(StreamKey, VersionId)> {
        let cat = self.catalog.lock().expect("catalog poisoned");
        let mut out: Vec<(StreamKey, VersionId)> = cat
            .iter()
            .filter_map(|(k, m)| {
                k.parse::<StreamKey>()
                    .ok()
                    .map(|key| (key, VersionId(m.versions.len() as u64 - 1)))
            })
            .collect();
        out.sort_by_key(|(k, _)| k.canon());
        out
    }

    /// All points with `t0 <= t < t1` at the given version, ascending.
    pub fn query_raw(
        &self,
        key: &StreamKey,
        t0: i64,
        t1: i64,
        version: VersionId,
    ) -> Result<Vec<(i64, f64)>, StoreError> {
        if t0 > t1 {
            return Err(StoreError::InvalidRange(t0, t1));
        }
        let root = self.root_for(key, version)?;
        let mut out = Vec::new();
        if let Some(r) = root {
            if t0 < t1 {
                let lo = to_u(t0.max(MIN_TIMESTAMP));
                let hi = to_u(t1.min(MAX_TIMESTAMP));
                tree::query_raw_rec(self.backend.as_ref(), r, lo, hi, &mut out)?;
            }
        }
        Ok(out)
    }

    /// Windowed statistics on the aligned `2^pointwidth` grid covering
    /// `[t0, t1)`. Bounds are aligned outward (t0 floored, t1 ceiled to the
    /// grid); empty windows are reported with count 0.
    pub fn query_windows(
        &self,
        key: &StreamKey,
        t0: i64,
        t1: i64,
        pointwidth: u8,
        version: VersionId,
    ) -> Result<Vec<StatPoint>, StoreError> {
        if pointwidth > 62 {
            return Err(StoreError::InvalidPointwidth(pointwidth));
        }
        if t0 > t1 {
            return Err(StoreError::InvalidRange(t0, t1));
        }
        if !in_domain(t0) || (t1 != t0 && !in_domain(t1 - 1)) {
            return Err(StoreError::OutOfRange(if in_domain(t0) { t1 } else { t0 }));
        }
        let root = self.root_for(key, version)?;
        if t0 == t1 {
            return Ok(Vec::new());
        }
        let width = 1u64 << pointwidth;
        let lo = to_u(t0) >> pointwidth; // first window index
        let hi = (to_u(t1 - 1) >> pointwidth) + 1; // one past last
        let n = hi - lo;
        if n > MAX_QUERY_WINDOWS {
            return Err(StoreError::TooManyWindows(n));
        }
        let mut out = Vec::with_capacity(n as usize);
        for w in lo..hi {
            let wlo = w * width;
            let whi = wlo + width;
            let agg = match root {
                Some(r) => tree::agg_range(self.backend.as_ref(), r, wlo, whi)?,
                None => Agg::EMPTY,
            };
            out.push(StatPoint::from_agg(to_t(wlo), pointwidth, &agg));
        }
        Ok(out)
    }

    /// Disjoint, sorted intervals at `2^pointwidth` granularity covering
    /// every timestamp whose value differs between the two versions. Each
    /// returned window contains at least one differing timestamp.
    pub fn changed_ranges(
        &self,
        key: &StreamKey,
        va: VersionId,
        vb: VersionId,
        pointwidth: u8,
    ) -> Result<Vec<TimeRange>, StoreError> {
        if pointwidth > 62 {
            return Err(StoreError::InvalidPointwidth(pointwidth));
        }
        if va > vb {
            return Err(StoreError::VersionOrder(va.0, vb.0));
        }
        let ra = self.root_for(key, va)?;
        let rb = self.root_for(key, vb)?;
        let mut changed_u = Vec::new();
        tree::diff_rec(self.backend.as_ref(), ra, rb, &mut changed_u)?;
        changed_u.sort_unstable();
        changed_u.dedup();

        let mut out: Vec<TimeRange> = Vec::new();
        for u in changed_u {
            let w = u >> pointwidth;
            let start = to_t(w << pointwidth);
            let end = to_t((w + 1) << pointwidth);
            match out.last_mut() {
                Some(last) if last.end >= start => {
                    if end > last.end {
                        last.end = end;
                    }
                }
                _ => out.push(TimeRange { start, end }),
            }
        }
        Ok(out)
    }

    /// First and last point timestamps at a version, if the stream holds any
    /// points.
    pub fn extent(
        &self,
        key: &StreamKey,
        version: VersionId,
    ) -> Result<Option<(i64, i64)>, StoreError> {
        match self.root_for(key, version)? {
            Some(r) => tree::extent(self.backend.as_ref(), r),
            None => Ok(None),
        }
    }

    /// Walk the whole tree of a version, checking every cached aggregate
    /// against a recomputation from raw points.
    pub fn verify_aggregates(
        &self,
        key: &StreamKey,
        version: VersionId,
    ) -> Result<(), StoreError> {
        if let Some(r) = self.root_for(key, version)? {
            tree::verify_aggregates(self.backend.as_ref(), r)?;
        }
        Ok(())
    }
}
