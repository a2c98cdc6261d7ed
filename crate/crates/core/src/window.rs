//! Sliding temporal window maintained by rotating phase buckets.
//!
//! With `alpha = pi / (L tau)` the last `L` unit intervals of length `tau`
//! occupy the half-turn `[0, pi)` once the phase origin is shifted by
//! `phi = n * delta_theta`. Advancing the window only rotates `phi` and retires
//! whole buckets; stored vectors are never re-encoded.
//!
//! The shift step `n` is the index of the oldest live unit interval, so the
//! aperture covers intervals `n .. n + L` and the interval containing "now" is
//! always the newest bucket (`L - 1`) after a fresh advance. During cold start
//! (`now` in the first `L` intervals) `n` stays at 0 and nothing retires.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::ann::{Deactivate, HnswIndex, NodeId};
use crate::encoding::{Schema, TemporalScale};
use crate::error::{invalid, Result};
use crate::{RecordId, SpatRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Seconds per unit step.
    pub tau: f64,
    /// Bucket count `L`.
    pub buckets: usize,
    /// Epoch boundary `T0`.
    pub t0: f64,
    /// Accept out-of-order timestamps that still fall inside the live window.
    #[serde(default)]
    pub lenient: bool,
}

impl WindowConfig {
    pub fn new(tau: f64, buckets: usize, t0: f64) -> Result<Self> {
        let cfg = Self {
            tau,
            buckets,
            t0,
            lenient: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lenient(mut self, lenient: bool) -> Self {
        self.lenient = lenient;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.buckets < 2 {
            return Err(invalid("a window needs at least 2 buckets"));
        }
        if !self.t0.is_finite() {
            return Err(invalid("T0 must be finite"));
        }
        Ok(())
    }

    pub fn scale(&self) -> TemporalScale {
        TemporalScale::new(self.alpha()).expect("validated window has a positive scale")
    }

    /// `pi / (L tau)`.
    pub fn alpha(&self) -> f64 {
        PI / (self.buckets as f64 * self.tau)
    }

    /// Phase step per unit interval, `alpha tau = pi / L`.
    pub fn delta_theta(&self) -> f64 {
        PI / self.buckets as f64
    }

    /// Window length `L tau`.
    pub fn horizon(&self) -> f64 {
        self.buckets as f64 * self.tau
    }

    /// `alpha (t - T0) mod 2pi`.
    pub fn phase_of(&self, t: f64) -> f64 {
        (self.alpha() * (t - self.t0)).rem_euclid(TAU)
    }

    /// Index of the unit interval `[T0 + j tau, T0 + (j + 1) tau)` containing `t`.
    pub fn interval_of(&self, t: f64) -> i64 {
        ((t - self.t0) / self.tau).floor() as i64
    }

    pub fn interval_start(&self, interval: i64) -> f64 {
        self.t0 + interval as f64 * self.tau
    }
}

/// Where a timestamp falls relative to the current aperture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Relative bucket position, 0 oldest and `L - 1` newest.
    Bucket(usize),
    Expired,
}

/// Records of one live unit interval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BucketManifest {
    /// Ring slot in `[0, L)`.
    pub bucket_index: usize,
    /// Absolute unit interval held by this slot, if any.
    pub interval: Option<i64>,
    pub record_ids: Vec<RecordId>,
    /// Smallest NodeId in the bucket.
    pub start_offset: Option<NodeId>,
    /// One past the largest NodeId in the bucket.
    pub end_offset: Option<NodeId>,
}

impl BucketManifest {
    fn erase(&mut self) {
        self.interval = None;
        self.record_ids.clear();
        self.start_offset = None;
        self.end_offset = None;
    }

    fn note_node(&mut self, node: NodeId) {
        self.start_offset = Some(self.start_offset.map_or(node, |s| s.min(node)));
        let end = NodeId(node.0 + 1);
        self.end_offset = Some(self.end_offset.map_or(end, |e| e.max(end)));
    }
}

/// One bucket taken out of the window by `advance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Retirement {
    pub bucket_index: usize,
    pub interval: i64,
    pub record_ids: Vec<RecordId>,
    /// Entries the index actually switched from active to inactive.
    pub deactivated: usize,
}

/// Outcome of routing one record into the window.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub placement: Placement,
    pub node: Option<NodeId>,
    pub retired: Vec<Retirement>,
}

/// Aperture position plus the `L` bucket manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    config: WindowConfig,
    shift_step: u64,
    current_interval: Option<i64>,
    buckets: Vec<BucketManifest>,
    last_advance_time: Option<f64>,
    last_ingest_time: Option<f64>,
}

impl WindowState {
    pub fn new(config: WindowConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            buckets: (0..config.buckets)
                .map(|i| BucketManifest {
                    bucket_index: i,
                    ..Default::default()
                })
                .collect(),
            config,
            shift_step: 0,
            current_interval: None,
            last_advance_time: None,
            last_ingest_time: None,
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn shift_step(&self) -> u64 {
        self.shift_step
    }

    pub fn current_interval(&self) -> Option<i64> {
        self.current_interval
    }

    pub fn last_advance_time(&self) -> Option<f64> {
        self.last_advance_time
    }

    pub fn last_ingest_time(&self) -> Option<f64> {
        self.last_ingest_time
    }

    pub fn buckets(&self) -> &[BucketManifest] {
        &self.buckets
    }

    /// Current aperture shift `phi = (n mod 2L) delta_theta`.
    pub fn shift(&self) -> f64 {
        let l = self.config.buckets as u64;
        (self.shift_step % (2 * l)) as f64 * self.config.delta_theta()
    }

    /// `(theta - phi) mod 2pi`.
    pub fn active_phase(&self, theta: f64) -> f64 {
        active_phase(theta, self.shift())
    }

    /// Start of the live window, `T0 + n tau`.
    pub fn window_start(&self) -> f64 {
        self.config.interval_start(self.shift_step as i64)
    }

    /// End (exclusive) of the live window, `T0 + (n + L) tau`.
    pub fn window_end(&self) -> f64 {
        self.config
            .interval_start(self.shift_step as i64 + self.config.buckets as i64)
    }

    pub fn in_window(&self, t: f64) -> bool {
        matches!(self.bucket_of(t), Placement::Bucket(_))
    }

    /// Relative bucket of `t`, `floor(theta* / delta_theta)` when
    /// `theta* in [0, pi)`.
    ///
    /// Evaluated on unit-interval indices, which is the same test carried out
    /// in integers so that timestamps lying exactly on a boundary are not
    /// misrouted by rounding in the phase subtraction.
    pub fn bucket_of(&self, t: f64) -> Placement {
        if !t.is_finite() {
            return Placement::Expired;
        }
        let rel = self.config.interval_of(t) - self.shift_step as i64;
        if (0..self.config.buckets as i64).contains(&rel) {
            Placement::Bucket(rel as usize)
        } else {
            Placement::Expired
        }
    }

    fn slot_of_interval(&self, interval: i64) -> usize {
        interval.rem_euclid(self.config.buckets as i64) as usize
    }

    /// Number of live records across all manifests.
    pub fn live_count(&self) -> usize {
        self.buckets.iter().map(|b| b.record_ids.len()).sum()
    }

    /// Rotates the aperture up to `now`, retiring every bucket whose interval
    /// left the window and tombstoning its records in `index`.
    pub fn advance<D: Deactivate + ?Sized>(
        &mut self,
        now: f64,
        index: &mut D,
    ) -> Result<Vec<Retirement>> {
        if !now.is_finite() {
            return Err(invalid("advance time must be finite"));
        }
        if let Some(last) = self.last_advance_time {
            if now < last {
                return Err(invalid(format!("advance moving backwards: {now} < {last}")));
            }
        }
        let interval = self.config.interval_of(now);
        let current = self.current_interval.map_or(interval, |c| c.max(interval));
        self.current_interval = Some(current);
        self.last_advance_time = Some(now);

        let target = (current - (self.config.buckets as i64 - 1)).max(0) as u64;
        if target <= self.shift_step {
            return Ok(Vec::new());
        }
        self.shift_step = target;
        let oldest_live = target as i64;
        let mut stale: Vec<usize> = (0..self.buckets.len())
            .filter(|&i| self.buckets[i].interval.is_some_and(|iv| iv < oldest_live))
            .collect();
        stale.sort_by_key(|&i| self.buckets[i].interval);
        let mut retired = Vec::with_capacity(stale.len());
        for slot in stale {
            let bucket = &mut self.buckets[slot];
            let interval = bucket.interval.expect("stale bucket has an interval");
            let ids = std::mem::take(&mut bucket.record_ids);
            bucket.erase();
            let deactivated = index.deactivate(&ids);
            retired.push(Retirement {
                bucket_index: slot,
                interval,
                record_ids: ids,
                deactivated,
            });
        }
        Ok(retired)
    }

    /// Validates ordering and records `id` in its bucket manifest. Returns
    /// `Expired` (and records nothing) for timestamps outside the window.
    pub fn admit(&mut self, id: RecordId, t: f64, node: Option<NodeId>) -> Result<Placement> {
        self.check_order(t)?;
        let placement = self.bucket_of(t);
        if let Placement::Bucket(_) = placement {
            let interval = self.config.interval_of(t);
            let slot = self.slot_of_interval(interval);
            let bucket = &mut self.buckets[slot];
            if bucket.interval != Some(interval) {
                debug_assert!(
                    bucket.record_ids.is_empty(),
                    "slot reused before retirement"
                );
                bucket.erase();
                bucket.interval = Some(interval);
            }
            bucket.record_ids.push(id);
            if let Some(n) = node {
                bucket.note_node(n);
            }
        }
        if self.last_ingest_time.is_none_or(|last| t > last) {
            self.last_ingest_time = Some(t);
        }
        Ok(placement)
    }

    fn check_order(&self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(invalid("timestamp must be finite"));
        }
        if !self.config.lenient {
            if let Some(last) = self.last_ingest_time {
                if t < last {
                    return Err(invalid(format!("non-monotone timestamp {t} after {last}")));
                }
            }
        }
        Ok(())
    }

    /// Advances to the record time if needed, encodes the record with its
    /// absolute phase and inserts it into `index` when it lands in the window.
    pub fn ingest(
        &mut self,
        record: &SpatRecord,
        schema: &Schema,
        index: &mut HnswIndex,
    ) -> Result<IngestOutcome> {
        let t = record.timestamp;
        self.check_order(t)?;
        let retired = if self.last_advance_time.is_none_or(|a| t > a) {
            let before = index.counters().compactions;
            let r = self.advance(t, index)?;
            if index.counters().compactions != before {
                self.refresh_offsets(index);
            }
            r
        } else {
            Vec::new()
        };
        if self.bucket_of(t) == Placement::Expired {
            self.admit(record.id, t, None)?;
            return Ok(IngestOutcome {
                placement: Placement::Expired,
                node: None,
                retired,
            });
        }
        let composite = record.compose(schema, self.config.phase_of(t))?;
        let node = index.insert(composite.values(), record.id)?;
        let placement = self.admit(record.id, t, Some(node))?;
        Ok(IngestOutcome {
            placement,
            node: Some(node),
            retired,
        })
    }

    /// Recomputes manifest offsets after the index renumbered its nodes.
    pub fn refresh_offsets(&mut self, index: &HnswIndex) {
        for b in &mut self.buckets {
            b.start_offset = None;
            b.end_offset = None;
            let nodes: Vec<NodeId> = b
                .record_ids
                .iter()
                .filter_map(|id| index.node_id(*id))
                .collect();
            for n in nodes {
                b.note_node(n);
            }
        }
    }

    pub(crate) fn from_parts(
        config: WindowConfig,
        shift_step: u64,
        current_interval: Option<i64>,
        buckets: Vec<BucketManifest>,
        last_advance_time: Option<f64>,
        last_ingest_time: Option<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if buckets.len() != config.buckets {
            return Err(invalid("manifest count does not match bucket count"));
        }
        Ok(Self {
            config,
            shift_step,
            current_interval,
            buckets,
            last_advance_time,
            last_ingest_time,
        })
    }
}

/// `(theta - phi) mod 2pi`.
pub fn active_phase(theta: f64, phi: f64) -> f64 {
    (theta - phi).rem_euclid(TAU)
}

/// Deactivation sink that does nothing; used when no index holds the records.
pub struct NoIndex;

impl Deactivate for NoIndex {
    fn deactivate(&mut self, ids: &[RecordId]) -> usize {
        ids.len()
    }
}
