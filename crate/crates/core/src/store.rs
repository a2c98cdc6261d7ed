//! Windowed record store: the window state, the composite HNSW index and the
//! payloads of every live record behind one single-writer handle.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::ann::{AnnConfig, HnswIndex, NodeId};
use crate::encoding::{encode_geo, CompositeVector, GeoEncoding, Schema, TimeEncoding};
use crate::error::{invalid, schema, Result};
use crate::window::{NoIndex, Placement, Retirement, WindowConfig, WindowState};
use crate::{RecordId, SpatRecord};

/// How the store keeps phases inside the live half-turn as time moves on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaintenanceMode {
    /// Rotate the aperture and tombstone the retired bucket.
    #[default]
    Circular,
    /// Re-encode every live timestamp relative to the window start and
    /// rebuild the index at each boundary. Kept as the cost baseline.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub content_dims: Vec<usize>,
    pub window: WindowConfig,
    /// `dim` is overwritten with the schema dimension.
    pub ann: AnnConfig,
    #[serde(default)]
    pub mode: MaintenanceMode,
}

/// Work done by one call to [`SpatialStore::advance`] (or summed over many).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceReport {
    pub boundaries_crossed: u64,
    pub retired_buckets: u64,
    pub retired_records: u64,
    pub tombstones_marked: u64,
    pub reencoded: u64,
    pub rebuild_distance_computations: u64,
    pub compactions: u64,
    pub compaction_distance_computations: u64,
}

impl MaintenanceReport {
    /// Foreground work caused by the boundary: tombstones, re-encodings and
    /// rebuild insertions.
    pub fn maintenance_ops(&self) -> u64 {
        self.tombstones_marked + self.reencoded + self.rebuild_distance_computations
    }

    /// Background graph compaction work, kept apart from the boundary cost.
    pub fn compaction_ops(&self) -> u64 {
        self.compaction_distance_computations
    }
}

impl AddAssign for MaintenanceReport {
    fn add_assign(&mut self, r: Self) {
        self.boundaries_crossed += r.boundaries_crossed;
        self.retired_buckets += r.retired_buckets;
        self.retired_records += r.retired_records;
        self.tombstones_marked += r.tombstones_marked;
        self.reencoded += r.reencoded;
        self.rebuild_distance_computations += r.rebuild_distance_computations;
        self.compactions += r.compactions;
        self.compaction_distance_computations += r.compaction_distance_computations;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreIngest {
    pub placement: Placement,
    pub node: Option<NodeId>,
    pub maintenance: MaintenanceReport,
    pub retired: Vec<Retirement>,
}

/// A live record with the encodings its composite was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRecord {
    pub record: SpatRecord,
    pub time: TimeEncoding,
    pub geo: GeoEncoding,
    pub(crate) seq: u64,
}

#[derive(Debug, Clone)]
pub struct SpatialStore {
    schema: Schema,
    config: StoreConfig,
    window: WindowState,
    index: HnswIndex,
    records: HashMap<RecordId, StoredRecord>,
    next_seq: u64,
    /// Phase origin: `T0` in circular mode, the window start at the last
    /// rebuild in naive mode.
    time_origin: f64,
}

impl SpatialStore {
    pub fn new(mut config: StoreConfig) -> Result<Self> {
        let schema = Schema::spatiotemporal(&config.content_dims)?;
        config.ann.dim = schema.dim();
        let index = HnswIndex::new(config.ann.clone())?;
        let window = WindowState::new(config.window)?;
        Ok(Self {
            time_origin: config.window.t0,
            schema,
            config,
            window,
            index,
            records: HashMap::new(),
            next_seq: 0,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn mode(&self) -> MaintenanceMode {
        self.config.mode
    }

    pub fn window(&self) -> &WindowState {
        &self.window
    }

    pub fn index(&self) -> &HnswIndex {
        &self.index
    }

    pub fn live_count(&self) -> usize {
        self.window.live_count()
    }

    pub fn time_origin(&self) -> f64 {
        self.time_origin
    }

    pub fn get(&self, id: RecordId) -> Option<&StoredRecord> {
        self.records.get(&id)
    }

    /// Live records in arbitrary order.
    pub fn iter_live(&self) -> impl Iterator<Item = &StoredRecord> + '_ {
        self.records.values()
    }

    /// Live records in ingest order.
    pub fn live_records(&self) -> Vec<&StoredRecord> {
        let mut v: Vec<_> = self.records.values().collect();
        v.sort_by_key(|r| r.seq);
        v
    }

    /// Phase of `t` under the store's current origin.
    pub fn phase(&self, t: f64) -> f64 {
        (self.config.window.alpha() * (t - self.time_origin)).rem_euclid(TAU)
    }

    pub fn encode_time(&self, t: f64) -> TimeEncoding {
        TimeEncoding::from_phase(self.phase(t))
    }

    /// Rotates the window to `now`. In naive mode any boundary crossing also
    /// re-encodes the live set and rebuilds the index.
    pub fn advance(&mut self, now: f64) -> Result<(MaintenanceReport, Vec<Retirement>)> {
        let before_interval = self.window.current_interval();
        let before = self.index.counters();
        let retired = match self.config.mode {
            MaintenanceMode::Circular => self.window.advance(now, &mut self.index)?,
            MaintenanceMode::Naive => self.window.advance(now, &mut NoIndex)?,
        };
        let mut report = MaintenanceReport {
            boundaries_crossed: match (before_interval, self.window.current_interval()) {
                (Some(a), Some(b)) => (b - a) as u64,
                _ => 0,
            },
            retired_buckets: retired.len() as u64,
            ..Default::default()
        };
        for r in &retired {
            report.retired_records += r.record_ids.len() as u64;
            for id in &r.record_ids {
                self.records.remove(id);
            }
        }
        match self.config.mode {
            MaintenanceMode::Circular => {
                let after = self.index.counters();
                report.tombstones_marked = after.tombstones_marked - before.tombstones_marked;
                report.compactions = after.compactions - before.compactions;
                report.compaction_distance_computations = after.compaction_distance_computations
                    - before.compaction_distance_computations;
                if report.compactions > 0 {
                    self.window.refresh_offsets(&self.index);
                }
            }
            MaintenanceMode::Naive if report.boundaries_crossed > 0 => {
                let (reencoded, dc) = self.rebuild()?;
                report.reencoded = reencoded;
                report.rebuild_distance_computations = dc;
            }
            MaintenanceMode::Naive => {}
        }
        Ok((report, retired))
    }

    fn rebuild(&mut self) -> Result<(u64, u64)> {
        self.time_origin = self.window.window_start();
        let mut index = HnswIndex::new(self.config.ann.clone())?;
        let mut order: Vec<RecordId> = self.records.keys().copied().collect();
        order.sort_by_key(|id| self.records[id].seq);
        for id in &order {
            let t = self.records[id].record.timestamp;
            let time = self.encode_time(t);
            let stored = self.records.get_mut(id).expect("listed id");
            stored.time = time;
            let v = compose_stored(&self.schema, stored)?;
            index.insert(v.values(), *id)?;
        }
        let dc = index.counters().insert_distance_computations;
        self.index = index;
        self.window.refresh_offsets(&self.index);
        Ok((order.len() as u64, dc))
    }

    /// Advances to the record's timestamp, then encodes and indexes it when it
    /// falls inside the window. Expired records are dropped.
    pub fn ingest(&mut self, record: SpatRecord) -> Result<StoreIngest> {
        if record.content.len() != self.schema.content_count() {
            return Err(schema(format!(
                "record {} has {} content blocks, schema expects {}",
                record.id,
                record.content.len(),
                self.schema.content_count()
            )));
        }
        if self.records.contains_key(&record.id) || self.index.node_id(record.id).is_some() {
            return Err(invalid(format!("record {} already ingested", record.id)));
        }
        let t = record.timestamp;
        if !t.is_finite() {
            return Err(invalid("timestamp must be finite"));
        }
        if !self.config.window.lenient {
            if let Some(last) = self.window.last_ingest_time() {
                if t < last {
                    return Err(invalid(format!("non-monotone timestamp {t} after {last}")));
                }
            }
        }
        let (maintenance, retired) = if self.window.last_advance_time().is_none_or(|a| t > a) {
            self.advance(t)?
        } else {
            (MaintenanceReport::default(), Vec::new())
        };
        if self.window.bucket_of(t) == Placement::Expired {
            self.window.admit(record.id, t, None)?;
            return Ok(StoreIngest {
                placement: Placement::Expired,
                node: None,
                maintenance,
                retired,
            });
        }
        let stored = StoredRecord {
            time: self.encode_time(t),
            geo: encode_geo(&record.location),
            record,
            seq: self.next_seq,
        };
        let v = compose_stored(&self.schema, &stored)?;
        let id = stored.record.id;
        let node = self.index.insert(v.values(), id)?;
        let placement = self.window.admit(id, t, Some(node))?;
        self.next_seq += 1;
        self.records.insert(id, stored);
        Ok(StoreIngest {
            placement,
            node: Some(node),
            maintenance,
            retired,
        })
    }

    pub(crate) fn from_parts(
        config: StoreConfig,
        window: WindowState,
        time_origin: f64,
        live: Vec<SpatRecord>,
    ) -> Result<Self> {
        let mut store = Self::new(config)?;
        store.time_origin = time_origin;
        let mut window = window;
        for rec in live {
            let stored = StoredRecord {
                time: store.encode_time(rec.timestamp),
                geo: encode_geo(&rec.location),
                record: rec,
                seq: store.next_seq,
            };
            let v = compose_stored(&store.schema, &stored)?;
            store.index.insert(v.values(), stored.record.id)?;
            store.next_seq += 1;
            store.records.insert(stored.record.id, stored);
        }
        for b in window.buckets() {
            for id in &b.record_ids {
                if !store.records.contains_key(id) {
                    return Err(crate::Error::Load(format!(
                        "manifest lists record {id} with no payload"
                    )));
                }
            }
        }
        if window.live_count() != store.records.len() {
            return Err(crate::Error::Load(format!(
                "{} payloads but manifests list {} live records",
                store.records.len(),
                window.live_count()
            )));
        }
        window.refresh_offsets(&store.index);
        store.window = window;
        Ok(store)
    }
}

pub(crate) fn compose_stored(schema: &Schema, s: &StoredRecord) -> Result<CompositeVector> {
    schema.compose_record(&s.record.content_embeddings()?, &s.time, &s.geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::Deactivate;
    use crate::encoding::GeoCoordinate;

    const MONTH: f64 = 2_592_000.0;

    fn config(mode: MaintenanceMode) -> StoreConfig {
        StoreConfig {
            content_dims: vec![2],
            window: WindowConfig::new(MONTH, 6, 0.0).unwrap(),
            ann: AnnConfig {
                ef_construction: 32,
                ..AnnConfig::new(1)
            },
            mode,
        }
    }

    fn rec(id: u64, t: f64) -> SpatRecord {
        let a = id as f64 * 0.37;
        SpatRecord {
            id,
            content: vec![vec![a.cos(), a.sin()]],
            timestamp: t,
            location: GeoCoordinate::from_degrees(30.0, 120.0 + (id % 10) as f64 * 0.01).unwrap(),
        }
    }

    fn fill(store: &mut SpatialStore, months: usize, per_month: usize) -> Vec<MaintenanceReport> {
        let mut reports = vec![];
        let mut id = 0;
        for m in 0..months {
            let (r, _) = store.advance(m as f64 * MONTH).unwrap();
            reports.push(r);
            for j in 0..per_month {
                let t = m as f64 * MONTH + (j as f64 + 0.5) * MONTH / per_month as f64;
                store.ingest(rec(id, t)).unwrap();
                id += 1;
            }
        }
        reports
    }

    #[test]
    fn circular_boundaries_cost_one_bucket() {
        let mut s = SpatialStore::new(config(MaintenanceMode::Circular)).unwrap();
        let reports = fill(&mut s, 13, 20);
        for (m, r) in reports.iter().enumerate() {
            if m >= 6 {
                assert_eq!(r.retired_records, 20, "month {m}");
                assert_eq!(r.maintenance_ops(), 20);
            } else {
                assert_eq!(r.maintenance_ops(), 0);
            }
        }
        assert_eq!(s.live_count(), 120);
        assert_eq!(s.index().active_len(), 120);
    }

    #[test]
    fn naive_boundaries_cost_live_set() {
        let mut s = SpatialStore::new(config(MaintenanceMode::Naive)).unwrap();
        let reports = fill(&mut s, 13, 20);
        for (m, r) in reports.iter().enumerate().skip(1) {
            let live_after = (m.min(6) * 20) as u64 - if m >= 6 { 20 } else { 0 };
            assert_eq!(r.reencoded, live_after, "month {m}");
            assert!(r.maintenance_ops() >= live_after);
        }
        assert_eq!(s.index().len(), 120);
        assert!(s.time_origin() > 0.0);
    }

    #[test]
    fn modes_rank_identically() {
        let mut a = SpatialStore::new(config(MaintenanceMode::Circular)).unwrap();
        let mut b = SpatialStore::new(config(MaintenanceMode::Naive)).unwrap();
        fill(&mut a, 10, 15);
        fill(&mut b, 10, 15);
        let mut ids_a: Vec<_> = a.live_records().iter().map(|r| r.record.id).collect();
        let mut ids_b: Vec<_> = b.live_records().iter().map(|r| r.record.id).collect();
        ids_a.sort();
        ids_b.sort();
        assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn stored_vectors_never_change_in_circular_mode() {
        let mut s = SpatialStore::new(config(MaintenanceMode::Circular)).unwrap();
        s.ingest(rec(1000, 5.5 * MONTH)).unwrap();
        let snapshot = s.index().vector(1000).unwrap().to_vec();
        for (id, m) in (6..13).enumerate() {
            s.advance(m as f64 * MONTH).unwrap();
            s.ingest(rec(id as u64, m as f64 * MONTH + 10.0)).unwrap();
            if let Some(v) = s.index().vector(1000) {
                assert_eq!(v, snapshot.as_slice());
            }
        }
        assert!(s.get(1000).is_none());
    }

    #[test]
    fn ingest_errors() {
        let mut s = SpatialStore::new(config(MaintenanceMode::Circular)).unwrap();
        s.ingest(rec(1, 10.0)).unwrap();
        assert!(matches!(
            s.ingest(rec(1, 20.0)),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(matches!(
            s.ingest(rec(2, 5.0)),
            Err(crate::Error::InvalidArgument(_))
        ));
        let mut bad = rec(3, 30.0);
        bad.content.push(vec![1.0, 0.0]);
        assert!(matches!(s.ingest(bad), Err(crate::Error::Schema(_))));
        let mut nonunit = rec(4, 30.0);
        nonunit.content[0] = vec![2.0, 0.0];
        assert!(s.ingest(nonunit).is_err());
        assert!(s.index().node_id(4).is_none());
    }

    #[test]
    fn compaction_keeps_manifest_offsets_valid() {
        let mut cfg = config(MaintenanceMode::Circular);
        cfg.ann.compaction_threshold = Some(0.2);
        let mut s = SpatialStore::new(cfg).unwrap();
        let reports = fill(&mut s, 13, 10);
        assert!(reports.iter().any(|r| r.compactions > 0));
        for b in s.window().buckets() {
            for id in &b.record_ids {
                let n = s.index().node_id(*id).unwrap();
                assert!(b.start_offset.unwrap() <= n && n < b.end_offset.unwrap());
            }
        }
        // deactivating twice reports nothing new
        let live: Vec<_> = s.window().buckets()[0].record_ids.clone();
        let mut idx = s.index().clone();
        assert_eq!(idx.deactivate(&live), live.len());
        assert_eq!(idx.deactivate(&live), 0);
    }
}
