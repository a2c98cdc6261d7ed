//! Comparison methods instrumented with the same counters as the composite
//! index: hard-filtered content search and per-modality hybrid search.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ann::{AnnConfig, Hit, HnswIndex, NodeId, SearchResult, SearchStats, TopK};
use crate::encoding::{GeoCoordinate, ModalityEmbedding, Schema, WeightVector};
use crate::error::{invalid, schema, Result};
use crate::retrieval::ScoredResult;
use crate::{dot, RecordId, SpatRecord};

/// Scalar attributes stored next to each content vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payload {
    pub timestamp: f64,
    pub location: GeoCoordinate,
}

/// Time interval plus a latitude/longitude box, all bounds inclusive, angles
/// in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPredicate {
    pub t_lo: f64,
    pub t_hi: f64,
    pub lat_lo: f64,
    pub lat_hi: f64,
    pub lon_lo: f64,
    pub lon_hi: f64,
}

impl FilterPredicate {
    pub fn new(time: (f64, f64), lat: (f64, f64), lon: (f64, f64)) -> Result<Self> {
        let p = Self {
            t_lo: time.0,
            t_hi: time.1,
            lat_lo: lat.0,
            lat_hi: lat.1,
            lon_lo: lon.0,
            lon_hi: lon.1,
        };
        if p.t_lo.is_nan() || p.t_hi.is_nan() || p.t_lo > p.t_hi {
            return Err(invalid(format!(
                "time window [{}, {}] is reversed",
                p.t_lo, p.t_hi
            )));
        }
        if !(p.lat_lo <= p.lat_hi && p.lon_lo <= p.lon_hi) {
            return Err(invalid("geo box bounds are not ordered"));
        }
        Ok(p)
    }

    /// Predicate accepting every record.
    pub fn everything() -> Self {
        Self {
            t_lo: f64::NEG_INFINITY,
            t_hi: f64::INFINITY,
            lat_lo: f64::NEG_INFINITY,
            lat_hi: f64::INFINITY,
            lon_lo: f64::NEG_INFINITY,
            lon_hi: f64::INFINITY,
        }
    }

    pub fn matches(&self, p: &Payload) -> bool {
        (self.t_lo..=self.t_hi).contains(&p.timestamp)
            && (self.lat_lo..=self.lat_hi).contains(&p.location.lat())
            && (self.lon_lo..=self.lon_hi).contains(&p.location.lon())
    }
}

/// HNSW over content-only composites with scalar payloads, searched with a
/// growing budget until enough candidates pass the predicate.
#[derive(Debug, Clone)]
pub struct FilteredIndex {
    schema: Schema,
    index: HnswIndex,
    payloads: HashMap<RecordId, Payload>,
}

impl FilteredIndex {
    pub fn new(content_dims: &[usize], mut ann: AnnConfig) -> Result<Self> {
        let schema = Schema::content_only(content_dims)?;
        ann.dim = schema.dim();
        Ok(Self {
            index: HnswIndex::new(ann)?,
            schema,
            payloads: HashMap::new(),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn insert_distance_computations(&self) -> u64 {
        self.index.counters().insert_distance_computations
    }

    pub fn insert(&mut self, record: &SpatRecord) -> Result<NodeId> {
        let v = self.schema.compose(&record.content_embeddings()?)?;
        let node = self.index.insert(v.values(), record.id)?;
        self.payloads.insert(
            record.id,
            Payload {
                timestamp: record.timestamp,
                location: record.location,
            },
        );
        Ok(node)
    }

    /// Weighted content query over the content-only layout.
    pub fn content_query(
        &self,
        cues: &[ModalityEmbedding],
        weights: &WeightVector,
    ) -> Result<Vec<f64>> {
        self.schema.compose_query(cues, weights, false)
    }

    /// Doubles the candidate budget, starting at `k` and capped at the index
    /// size, until `k` candidates satisfy `pred`. Every search, including the
    /// rejected candidates, is charged to the returned stats.
    pub fn filtered_search(
        &self,
        query: &[f64],
        pred: &FilterPredicate,
        k: usize,
        ef_search: usize,
    ) -> Result<SearchResult> {
        if k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        let n = self.index.len();
        let mut stats = SearchStats::default();
        if n == 0 {
            return Ok(SearchResult::default());
        }
        let mut budget = k.min(n);
        loop {
            let res = self.index.search(query, budget, ef_search.max(budget))?;
            stats += res.stats;
            let survivors: Vec<Hit> = res
                .hits
                .into_iter()
                .filter(|h| pred.matches(&self.payloads[&h.record_id]))
                .take(k)
                .collect();
            if survivors.len() >= k || budget >= n {
                return Ok(SearchResult {
                    hits: survivors,
                    stats,
                });
            }
            budget = (budget * 2).min(n);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Rescore the candidate union by `sum_i w_i <v_i, q_i>`.
    #[default]
    WeightedSum,
    /// `sum_i 1 / (c + rank_i)` over the lists a candidate appears in.
    ReciprocalRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub per_modality_k: usize,
    #[serde(default)]
    pub merge_rule: MergeRule,
    #[serde(default = "default_rrf")]
    pub rrf_constant: f64,
}

fn default_rrf() -> f64 {
    60.0
}

impl HybridConfig {
    /// Per-modality depth equal to the final `k`, weighted-sum merge.
    pub fn new(k: usize) -> Self {
        Self {
            per_modality_k: k,
            merge_rule: MergeRule::WeightedSum,
            rrf_constant: default_rrf(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutcome {
    pub results: Vec<ScoredResult>,
    /// All per-modality traversals plus the block products spent rescoring.
    pub stats: SearchStats,
    /// Size of the candidate union.
    pub candidates: usize,
}

impl HybridOutcome {
    pub fn ids(&self) -> Vec<RecordId> {
        self.results.iter().map(|r| r.record_id).collect()
    }
}

/// One HNSW per modality; top lists are merged per query.
#[derive(Debug, Clone)]
pub struct HybridIndex {
    schema: Schema,
    indexes: Vec<HnswIndex>,
    /// Unit blocks concatenated in schema order (not divided by `sqrt(m)`).
    blocks: HashMap<RecordId, Vec<f64>>,
}

impl HybridIndex {
    pub fn new(schema: Schema, ann: &AnnConfig) -> Result<Self> {
        let indexes = schema
            .blocks()
            .iter()
            .map(|b| {
                HnswIndex::new(AnnConfig {
                    dim: b.dim,
                    seed: ann.seed.wrapping_add(b.modality as u64),
                    ..ann.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema,
            indexes,
            blocks: HashMap::new(),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Summed over the per-modality indexes.
    pub fn insert_distance_computations(&self) -> u64 {
        self.indexes
            .iter()
            .map(|i| i.counters().insert_distance_computations)
            .sum()
    }

    /// Inserts one unit block per modality.
    pub fn insert(&mut self, id: RecordId, blocks: &[ModalityEmbedding]) -> Result<()> {
        if self.blocks.contains_key(&id) {
            return Err(invalid(format!("record {id} already indexed")));
        }
        let flat = self.flatten(blocks, true)?;
        for (b, idx) in self.schema.blocks().iter().zip(&mut self.indexes) {
            idx.insert(&flat[b.offset..b.offset + b.dim], id)?;
        }
        self.blocks.insert(id, flat);
        Ok(())
    }

    fn flatten(&self, blocks: &[ModalityEmbedding], require_all: bool) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.schema.dim()];
        let mut seen = vec![false; self.schema.modality_count()];
        for e in blocks {
            let b = *self
                .schema
                .blocks()
                .get(e.modality())
                .ok_or_else(|| schema(format!("unknown modality {}", e.modality())))?;
            if e.dim() != b.dim {
                return Err(schema(format!(
                    "modality {} expects {} dims, got {}",
                    e.modality(),
                    b.dim,
                    e.dim()
                )));
            }
            if std::mem::replace(&mut seen[e.modality()], true) {
                return Err(schema(format!("duplicate modality {}", e.modality())));
            }
            out[b.offset..b.offset + b.dim].copy_from_slice(e.values());
        }
        if require_all {
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(schema(format!("missing modality {i}")));
            }
        }
        Ok(out)
    }

    /// Runs one search per weighted modality, merges the candidate union and
    /// returns the top `k`. Zero-weight modalities are skipped.
    pub fn hybrid_search(
        &self,
        cues: &[ModalityEmbedding],
        weights: &WeightVector,
        k: usize,
        ef_search: usize,
        cfg: &HybridConfig,
    ) -> Result<HybridOutcome> {
        let m = self.schema.modality_count();
        if weights.len() != m {
            return Err(schema(format!(
                "{} weights for {m} modalities",
                weights.len()
            )));
        }
        if k == 0 || cfg.per_modality_k < k {
            return Err(invalid(format!(
                "need 1 <= k <= per_modality_k, got k = {k}, per_modality_k = {}",
                cfg.per_modality_k
            )));
        }
        if cfg.rrf_constant.is_nan() || cfg.rrf_constant <= 0.0 {
            return Err(invalid("rrf_constant must be > 0"));
        }
        let q = self.flatten(cues, false)?;
        let provided: Vec<bool> = (0..m)
            .map(|i| cues.iter().any(|c| c.modality() == i))
            .collect();
        if let Some(i) = (0..m).find(|&i| weights.get(i) > 0.0 && !provided[i]) {
            return Err(schema(format!("missing cue for weighted modality {i}")));
        }
        let active: Vec<usize> = (0..m).filter(|&i| weights.get(i) > 0.0).collect();
        let mut stats = SearchStats::default();
        // BTreeMap keeps the union in id order so merging is deterministic.
        let mut ranks: BTreeMap<RecordId, f64> = BTreeMap::new();
        let ef = ef_search.max(cfg.per_modality_k);
        for &i in &active {
            let b = self.schema.blocks()[i];
            let res =
                self.indexes[i].search(&q[b.offset..b.offset + b.dim], cfg.per_modality_k, ef)?;
            stats += res.stats;
            for (rank, h) in res.hits.iter().enumerate() {
                *ranks.entry(h.record_id).or_default() +=
                    1.0 / (cfg.rrf_constant + (rank + 1) as f64);
            }
        }
        let sqrt_m = (m as f64).sqrt();
        let mut top = TopK::new(k);
        for (&id, &rrf) in &ranks {
            let score = match cfg.merge_rule {
                MergeRule::WeightedSum => {
                    let v = &self.blocks[&id];
                    let mut s = 0.0;
                    for &i in &active {
                        let b = self.schema.blocks()[i];
                        let r = b.offset..b.offset + b.dim;
                        s += weights.get(i) * dot(&v[r.clone()], &q[r]);
                    }
                    stats.distance_computations += active.len() as u64;
                    s / sqrt_m
                }
                MergeRule::ReciprocalRank => rrf,
            };
            top.push(score, id);
        }
        Ok(HybridOutcome {
            results: top
                .into_hits()
                .into_iter()
                .map(|h| ScoredResult {
                    record_id: h.record_id,
                    score: h.score,
                    per_field_scores: None,
                })
                .collect(),
            stats,
            candidates: ranks.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode_geo, TimeEncoding};

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn record(id: u64) -> SpatRecord {
        let a = id as f64 * 0.7;
        SpatRecord {
            id,
            content: vec![unit(vec![a.cos(), a.sin(), 0.3])],
            timestamp: id as f64 * 10.0,
            location: GeoCoordinate::from_degrees(30.0 + (id % 7) as f64 * 0.1, 120.0).unwrap(),
        }
    }

    fn filtered(n: u64) -> FilteredIndex {
        let mut f = FilteredIndex::new(&[3], AnnConfig::new(1)).unwrap();
        for i in 0..n {
            f.insert(&record(i)).unwrap();
        }
        f
    }

    #[test]
    fn predicate_validation() {
        assert!(FilterPredicate::new((2.0, 1.0), (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(FilterPredicate::new((1.0, 2.0), (1.0, 0.0), (0.0, 1.0)).is_err());
        let p = FilterPredicate::new((0.0, 10.0), (-1.0, 1.0), (-3.0, 3.0)).unwrap();
        let inside = Payload {
            timestamp: 10.0,
            location: GeoCoordinate::new(0.5, 2.0).unwrap(),
        };
        assert!(p.matches(&inside));
        assert!(!p.matches(&Payload {
            timestamp: 10.5,
            ..inside
        }));
    }

    #[test]
    fn unrestricted_filter_equals_plain_search() {
        let f = filtered(300);
        let q = f
            .content_query(
                &[ModalityEmbedding::new(0, unit(vec![1.0, 0.2, 0.1])).unwrap()],
                &WeightVector::uniform(1),
            )
            .unwrap();
        let a = f
            .filtered_search(&q, &FilterPredicate::everything(), 10, 50)
            .unwrap();
        let b = f.index.search(&q, 10, 50).unwrap();
        assert_eq!(a.ids(), b.ids());
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn empty_filter_exhausts_budget() {
        let f = filtered(200);
        let q = f
            .content_query(
                &[ModalityEmbedding::new(0, unit(vec![1.0, 0.0, 0.0])).unwrap()],
                &WeightVector::uniform(1),
            )
            .unwrap();
        let none = FilterPredicate::new((1e9, 1e9 + 1.0), (-1.0, 1.0), (-4.0, 4.0)).unwrap();
        let r = f.filtered_search(&q, &none, 10, 10).unwrap();
        assert!(r.is_empty());
        // budgets 10, 20, 40, 80, 160, 200
        let one = f
            .index
            .search(&q, 10, 10)
            .unwrap()
            .stats
            .distance_computations;
        assert!(r.stats.distance_computations > 5 * one);
    }

    #[test]
    fn filtered_results_satisfy_predicate() {
        let f = filtered(500);
        let q = f
            .content_query(
                &[ModalityEmbedding::new(0, unit(vec![0.3, 1.0, 0.0])).unwrap()],
                &WeightVector::uniform(1),
            )
            .unwrap();
        let pred = FilterPredicate::new((1000.0, 2000.0), (-1.0, 1.0), (-4.0, 4.0)).unwrap();
        let r = f.filtered_search(&q, &pred, 20, 20).unwrap();
        assert_eq!(r.len(), 20);
        for h in &r.hits {
            assert!(pred.matches(&f.payloads[&h.record_id]));
        }
    }

    fn hybrid(n: u64) -> HybridIndex {
        let schema = Schema::spatiotemporal(&[3]).unwrap();
        let mut h = HybridIndex::new(schema, &AnnConfig::new(1)).unwrap();
        for i in 0..n {
            let r = record(i);
            h.insert(i, &blocks(&r)).unwrap();
        }
        h
    }

    fn blocks(r: &SpatRecord) -> Vec<ModalityEmbedding> {
        vec![
            ModalityEmbedding::new(0, r.content[0].clone()).unwrap(),
            TimeEncoding::from_phase(r.timestamp * 1e-3).into_embedding(1),
            encode_geo(&r.location).into_embedding(2),
        ]
    }

    #[test]
    fn single_modality_matches_one_search() {
        let h = hybrid(300);
        let cue = ModalityEmbedding::new(0, unit(vec![0.5, 0.5, 0.1])).unwrap();
        let w = WeightVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let out = h
            .hybrid_search(
                std::slice::from_ref(&cue),
                &w,
                10,
                40,
                &HybridConfig::new(10),
            )
            .unwrap();
        let direct = h.indexes[0].search(cue.values(), 10, 40).unwrap();
        let mut a = out.ids();
        let mut b = direct.ids();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn dominant_item_wins_under_both_rules() {
        let h = hybrid(200);
        let r = record(77);
        let w = WeightVector::new(vec![1.0, 0.5, 0.25]).unwrap();
        for rule in [MergeRule::WeightedSum, MergeRule::ReciprocalRank] {
            let cfg = HybridConfig {
                merge_rule: rule,
                ..HybridConfig::new(20)
            };
            let out = h.hybrid_search(&blocks(&r), &w, 5, 50, &cfg).unwrap();
            assert_eq!(out.results[0].record_id, 77, "{rule:?}");
        }
    }

    #[test]
    fn hybrid_argument_errors() {
        let h = hybrid(10);
        let w = WeightVector::uniform(3);
        let r = record(1);
        assert!(h
            .hybrid_search(&blocks(&r), &w, 10, 10, &HybridConfig::new(5))
            .is_err());
        assert!(h
            .hybrid_search(&blocks(&r)[..1], &w, 1, 10, &HybridConfig::new(5))
            .is_err());
        assert!(h
            .hybrid_search(
                &blocks(&r),
                &WeightVector::uniform(2),
                1,
                10,
                &HybridConfig::new(5)
            )
            .is_err());
    }
}
