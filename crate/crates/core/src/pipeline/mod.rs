//! Chunk-driven derived-stream computation with lineage.
//!
//! Distillers declare input streams, a compiled-in kernel, and an output
//! stream. `propagate` recomputes only the output chunks whose inputs
//! changed since the distiller's last consumed versions (widened by the
//! kernel's lookback and the join tolerance), cascading through the
//! dependency DAG in topological order. The materialization log records the
//! lineage of every recomputation; kernels are pure, so incremental
//! propagation is point-identical to a full recomputation from final inputs.

mod kernels;

pub use kernels::{Kernel, KernelError};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::REPORT_INTERVAL_NS;
use crate::store::{Store, StoreError, StreamKey, TimeRange, VersionId};

/// Default chunk granularity: 2^22 ns (~4.2 ms), sub-cycle at 120 frames/s.
pub const DEFAULT_CHUNK_POINTWIDTH: u8 = 22;

/// Default join tolerance: half the nominal report interval.
pub const DEFAULT_JOIN_TOLERANCE_NS: i64 = REPORT_INTERVAL_NS / 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("output stream {0} already claimed by distiller {1}")]
    OutputClaimed(String, String),
    #[error("dependency cycle through distillers {0:?}")]
    CyclicDependency(Vec<String>),
    #[error("invalid distiller spec: {0}")]
    InvalidSpec(String),
    #[error("unknown distiller {0}")]
    UnknownDistiller(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("registry persistence: {0}")]
    Persist(String),
}

/// A derived-stream declaration: pure kernel from time-aligned input chunks
/// to output points, plus the maximum lookback the kernel needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillerSpec {
    pub name: String,
    pub inputs: Vec<StreamKey>,
    pub output: StreamKey,
    pub kernel: Kernel,
    pub kernel_version: u32,
    pub lag_ns: i64,
}

impl DistillerSpec {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<StreamKey>,
        output: StreamKey,
        kernel: Kernel,
    ) -> Self {
        let lag_ns = kernel.min_lag_ns();
        Self {
            name: name.into(),
            inputs,
            output,
            kernel,
            kernel_version: 1,
            lag_ns,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.name.is_empty() {
            return Err(PipelineError::InvalidSpec("empty name".into()));
        }
        if self.inputs.len() != self.kernel.arity() {
            return Err(PipelineError::InvalidSpec(format!(
                "kernel expects {} inputs, got {}",
                self.kernel.arity(),
                self.inputs.len()
            )));
        }
        if self.lag_ns < self.kernel.min_lag_ns() {
            return Err(PipelineError::InvalidSpec(format!(
                "lag {} ns below the kernel minimum {} ns",
                self.lag_ns,
                self.kernel.min_lag_ns()
            )));
        }
        if self.inputs.iter().any(|i| *i == self.output) {
            return Err(PipelineError::InvalidSpec(
                "output stream cannot be one of the inputs".into(),
            ));
        }
        Ok(())
    }
}

/// One recomputation event: which input versions were consumed, which output
/// version was produced, and exactly which ranges were recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Materialization {
    pub distiller: String,
    pub input_versions: Vec<(StreamKey, u64)>,
    pub output_version: u64,
    pub recomputed: Vec<TimeRange>,
    pub failed: Vec<TimeRange>,
    pub skipped_points: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegisteredDistiller {
    spec: DistillerSpec,
    last_versions: BTreeMap<String, u64>,
    needs_full: bool,
}

/// The distiller registry and materialization log.
#[derive(Debug, Serialize, Deserialize)]
pub struct Registry {
    distillers: Vec<RegisteredDistiller>,
    log: Vec<Materialization>,
    chunk_pointwidth: u8,
    join_tolerance_ns: i64,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        Registry {
            distillers: Vec::new(),
            log: Vec::new(),
            chunk_pointwidth: DEFAULT_CHUNK_POINTWIDTH,
            join_tolerance_ns: DEFAULT_JOIN_TOLERANCE_NS,
        }
    }

    pub fn with_chunk_pointwidth(mut self, pw: u8) -> Self {
        self.chunk_pointwidth = pw;
        self
    }

    pub fn specs(&self) -> impl Iterator<Item = &DistillerSpec> {
        self.distillers.iter().map(|d| &d.spec)
    }

    pub fn log(&self) -> &[Materialization] {
        &self.log
    }

    pub fn load(path: &Path) -> Result<Registry, PipelineError> {
        let data = std::fs::read(path).map_err(|e| PipelineError::Persist(e.to_string()))?;
        serde_json::from_slice(&data).map_err(|e| PipelineError::Persist(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let data =
            serde_json::to_vec_pretty(self).map_err(|e| PipelineError::Persist(e.to_string()))?;
        std::fs::write(path, data).map_err(|e| PipelineError::Persist(e.to_string()))
    }

    /// Register a distiller (or bump an existing one's kernel version).
    /// Registration schedules a full materialization on the next propagate.
    pub fn register(&mut self, spec: DistillerSpec) -> Result<usize, PipelineError> {
        spec.validate()?;
        for d in &self.distillers {
            if d.spec.name != spec.name && d.spec.output == spec.output {
                return Err(PipelineError::OutputClaimed(
                    spec.output.canon(),
                    d.spec.name.clone(),
                ));
            }
        }
        let existing = self.distillers.iter().position(|d| d.spec.name == spec.name);
        let idx = match existing {
            Some(i) => {
                let old = &self.distillers[i].spec;
                if old.output != spec.output {
                    return Err(PipelineError::InvalidSpec(format!(
                        "distiller {} cannot change its output stream",
                        spec.name
                    )));
                }
                if spec.kernel_version < old.kernel_version {
                    return Err(PipelineError::InvalidSpec(format!(
                        "kernel version may not decrease ({} < {})",
                        spec.kernel_version, old.kernel_version
                    )));
                }
                let force = spec.kernel_version > old.kernel_version || spec != *old;
                self.distillers[i].spec = spec;
                if force {
                    self.distillers[i].needs_full = true;
                }
                i
            }
            None => {
                self.distillers.push(RegisteredDistiller {
                    spec,
                    last_versions: BTreeMap::new(),
                    needs_full: true,
                });
                self.distillers.len() - 1
            }
        };
        if let Err(e) = self.topo_order() {
            self.distillers.remove(idx);
            return Err(e);
        }
        Ok(idx)
    }

    /// Topological order over the distiller DAG (producers before
    /// consumers), stable by registration order.
    fn topo_order(&self) -> Result<Vec<usize>, PipelineError> {
        let producer: HashMap<String, usize> = self
            .distillers
            .iter()
            .enumerate()
            .map(|(i, d)| (d.spec.output.canon(), i))
            .collect();
        let n = self.distillers.len();
        let mut deps: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for (i, d) in self.distillers.iter().enumerate() {
            for input in &d.spec.inputs {
                if let Some(&p) = producer.get(&input.canon()) {
                    deps[p].push(i);
                    indegree[i] += 1;
                }
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.first().copied() {
            ready.remove(0);
            order.push(i);
            for &j in &deps[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    // keep the scan deterministic
                    let pos = ready.partition_point(|&k| k < j);
                    ready.insert(pos, j);
                }
            }
        }
        if order.len() != n {
            let stuck: Vec<String> = (0..n)
                .filter(|i| !order.contains(i))
                .map(|i| self.distillers[i].spec.name.clone())
                .collect();
            return Err(PipelineError::CyclicDependency(stuck));
        }
        Ok(order)
    }

    fn chunk_align(&self, r: TimeRange) -> TimeRange {
        let w = 1i64 << self.chunk_pointwidth;
        TimeRange {
            start: r.start.div_euclid(w) * w,
            end: r.end.div_euclid(w) * w + if r.end.rem_euclid(w) == 0 { 0 } else { w },
        }
    }

    /// Recompute every distiller whose inputs changed since its last
    /// consumed versions. Returns the materializations performed, in
    /// execution (topological) order.
    pub fn propagate(&mut self, store: &Store) -> Result<Vec<Materialization>, PipelineError> {
        let order = self.topo_order()?;
        let mut out = Vec::new();
        for idx in order {
            if let Some(m) = self.run_distiller(idx, store)? {
                self.log.push(m.clone());
                out.push(m);
            }
        }
        Ok(out)
    }

    fn run_distiller(
        &mut self,
        idx: usize,
        store: &Store,
    ) -> Result<Option<Materialization>, PipelineError> {
        let d = &self.distillers[idx];
        let spec = d.spec.clone();
        let tol = self.join_tolerance_ns;
        let lag = spec.lag_ns;

        // Current input versions; streams that do not exist yet read as the
        // empty version 0.
        let mut current: Vec<(StreamKey, u64)> = Vec::with_capacity(spec.inputs.len());
        for input in &spec.inputs {
            let v = match store.latest_version(input) {
                Ok(v) => v.0,
                Err(StoreError::UnknownStream(_)) => 0,
                Err(e) => return Err(e.into()),
            };
            current.push((input.clone(), v));
        }

        // Affected ranges, chunk aligned.
        let mut ranges: Vec<TimeRange> = Vec::new();
        if d.needs_full {
            let mut lo = i64::MAX;
            let mut hi = i64::MIN;
            for (input, v) in &current {
                if *v == 0 {
                    continue;
                }
                if let Some((a, b)) = store.extent(input, VersionId(*v))? {
                    lo = lo.min(a);
                    hi = hi.max(b + 1);
                }
            }
            if lo < hi {
                ranges.push(self.chunk_align(TimeRange { start: lo, end: hi }));
            }
        } else {
            for (input, v) in &current {
                let last = d.last_versions.get(&input.canon()).copied().unwrap_or(0);
                if last == *v {
                    continue;
                }
                if last > *v {
                    return Err(PipelineError::InvalidSpec(format!(
                        "input {} regressed from version {last} to {v}",
                        input.canon()
                    )));
                }
                let changed = if last == 0 {
                    match store.extent(input, VersionId(*v))? {
                        Some((a, b)) => vec![TimeRange { start: a, end: b + 1 }],
                        None => Vec::new(),
                    }
                } else {
                    store.changed_ranges(
                        input,
                        VersionId(last),
                        VersionId(*v),
                        self.chunk_pointwidth,
                    )?
                };
                for r in changed {
                    // inputs at time s influence outputs in
                    // [s - tol, s + lag + tol]
                    ranges.push(self.chunk_align(TimeRange {
                        start: r.start.saturating_sub(tol),
                        end: r.end.saturating_add(lag + tol),
                    }));
                }
            }
            ranges.sort_by_key(|r| r.start);
            let mut merged: Vec<TimeRange> = Vec::new();
            for r in ranges {
                match merged.last_mut() {
                    Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
                    _ => merged.push(r),
                }
            }
            ranges = merged;
        }

        if ranges.is_empty() {
            // nothing to do; still advance the consumed versions
            let d = &mut self.distillers[idx];
            for (input, v) in &current {
                d.last_versions.insert(input.canon(), *v);
            }
            let had_work = std::mem::take(&mut d.needs_full);
            let _ = had_work;
            return Ok(None);
        }

        // Evaluate chunk by chunk; a kernel failure quarantines its chunk.
        let chunk_w = 1i64 << self.chunk_pointwidth;
        let mut produced: Vec<(i64, f64)> = Vec::new();
        let mut failed: Vec<TimeRange> = Vec::new();
        let mut skipped = 0u64;
        for range in &ranges {
            // one fetch per contiguous range, sliced per chunk
            let fetch_lo = range.start.saturating_sub(lag + tol);
            let fetch_hi = range.end.saturating_add(tol);
            let mut fetched: Vec<Vec<(i64, f64)>> = Vec::with_capacity(current.len());
            for (input, v) in &current {
                let pts = if *v == 0 {
                    Vec::new()
                } else {
                    store.query_raw(input, fetch_lo, fetch_hi, VersionId(*v))?
                };
                fetched.push(pts);
            }
            let mut c = range.start;
            while c < range.end {
                let c_end = (c + chunk_w).min(range.end);
                match kernels::eval(&spec.kernel, &fetched, c, c_end, tol) {
                    Ok(outp) => {
                        produced.extend(outp.points);
                        skipped += outp.skipped;
                    }
                    Err(_) => match failed.last_mut() {
                        Some(last) if last.end == c => last.end = c_end,
                        _ => failed.push(TimeRange { start: c, end: c_end }),
                    },
                }
                c = c_end;
            }
        }

        let output_version = if produced.is_empty() {
            match store.latest_version(&spec.output) {
                Ok(v) => v.0,
                Err(StoreError::UnknownStream(_)) => 0,
                Err(e) => return Err(e.into()),
            }
        } else {
            store.insert(&spec.output, &produced)?.0
        };

        let d = &mut self.distillers[idx];
        for (input, v) in &current {
            d.last_versions.insert(input.canon(), *v);
        }
        d.needs_full = false;

        Ok(Some(Materialization {
            distiller: spec.name,
            input_versions: current,
            output_version,
            recomputed: ranges,
            failed,
            skipped_points: skipped,
        }))
    }
}
