use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Deactivate, NodeId, Ranked, SearchResult, SearchStats, TopK};
use crate::error::{invalid, schema, Result};
use crate::{dot, RecordId};

const MAX_LEVEL: usize = 16;

/// Construction and search parameters. The metric is always inner product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub dim: usize,
    /// Graph degree `M` on upper layers; layer 0 allows `2 * M`.
    pub max_neighbors: usize,
    pub ef_construction: usize,
    pub default_ef_search: usize,
    /// Seeds the level generator.
    pub seed: u64,
    /// Rebuild once the tombstoned fraction exceeds this value. `None` disables it.
    pub compaction_threshold: Option<f64>,
}

impl AnnConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            max_neighbors: 16,
            ef_construction: 200,
            default_ef_search: 100,
            seed: 0x5eed,
            compaction_threshold: Some(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("index dimension must be >= 1"));
        }
        if self.max_neighbors < 2 {
            return Err(invalid("max_neighbors must be >= 2"));
        }
        if self.ef_construction < self.max_neighbors {
            return Err(invalid("ef_construction must be >= max_neighbors"));
        }
        if self.default_ef_search == 0 {
            return Err(invalid("default_ef_search must be >= 1"));
        }
        if let Some(t) = self.compaction_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(invalid(format!("compaction threshold {t} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Cumulative work counters, used for maintenance-cost accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IndexCounters {
    pub inserts: u64,
    pub insert_distance_computations: u64,
    pub tombstones_marked: u64,
    pub compactions: u64,
    pub compaction_reinserts: u64,
    pub compaction_distance_computations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompactionSummary {
    pub dropped: usize,
    pub new_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Entry {
    rank: Ranked,
    idx: u32,
}

struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Self(vec![0; n / 64 + 1])
    }

    /// Returns true when `i` was not yet marked.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        let fresh = self.0[w] & (1 << b) == 0;
        self.0[w] |= 1 << b;
        fresh
    }
}

/// Hierarchical navigable small-world graph over inner product.
///
/// Deleted records become tombstones: they stay in the graph and are still
/// traversed, but never enter a result set. [`HnswIndex::compact`] rebuilds the
/// graph from the active records only.
#[derive(Debug, Clone)]
pub struct HnswIndex {
    config: AnnConfig,
    level_norm: f64,
    vectors: Vec<f64>,
    record_ids: Vec<RecordId>,
    links: Vec<Vec<Vec<u32>>>,
    active: Vec<bool>,
    inactive: usize,
    by_record: HashMap<RecordId, u32>,
    entry: Option<u32>,
    max_level: usize,
    base_id: u64,
    rng: ChaCha8Rng,
    counters: IndexCounters,
}

impl HnswIndex {
    pub fn new(config: AnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            level_norm: 1.0 / (config.max_neighbors as f64).ln(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            vectors: Vec::new(),
            record_ids: Vec::new(),
            links: Vec::new(),
            active: Vec::new(),
            inactive: 0,
            by_record: HashMap::new(),
            entry: None,
            max_level: 0,
            base_id: 0,
            counters: IndexCounters::default(),
        })
    }

    pub fn config(&self) -> &AnnConfig {
        &self.config
    }

    pub fn counters(&self) -> IndexCounters {
        self.counters
    }

    /// Number of nodes in the graph, tombstones included.
    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn active_len(&self) -> usize {
        self.len() - self.inactive
    }

    pub fn inactive_len(&self) -> usize {
        self.inactive
    }

    pub fn node_id(&self, record: RecordId) -> Option<NodeId> {
        self.by_record
            .get(&record)
            .map(|&i| NodeId(self.base_id + i as u64))
    }

    pub fn is_active(&self, record: RecordId) -> bool {
        self.by_record
            .get(&record)
            .is_some_and(|&i| self.active[i as usize])
    }

    /// Stored vector of `record` (active or tombstoned).
    pub fn vector(&self, record: RecordId) -> Option<&[f64]> {
        self.by_record.get(&record).map(|&i| self.row(i))
    }

    /// Active record ids in insertion order.
    pub fn active_records(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.record_ids
            .iter()
            .zip(&self.active)
            .filter(|(_, a)| **a)
            .map(|(id, _)| *id)
    }

    fn row(&self, i: u32) -> &[f64] {
        let d = self.config.dim;
        &self.vectors[i as usize * d..(i as usize + 1) * d]
    }

    fn score(&self, q: &[f64], i: u32) -> Entry {
        Entry {
            rank: Ranked {
                score: dot(q, self.row(i)),
                id: self.record_ids[i as usize],
            },
            idx: i,
        }
    }

    fn layer_capacity(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.config.max_neighbors
        } else {
            self.config.max_neighbors
        }
    }

    pub fn insert(&mut self, vector: &[f64], record_id: RecordId) -> Result<NodeId> {
        if vector.len() != self.config.dim {
            return Err(schema(format!(
                "vector has {} dims, index expects {}",
                vector.len(),
                self.config.dim
            )));
        }
        if self.by_record.contains_key(&record_id) {
            return Err(invalid(format!("record {record_id} already indexed")));
        }
        if self.record_ids.len() >= u32::MAX as usize {
            return Err(invalid("index is at capacity"));
        }
        let dc = self.insert_unchecked(vector, record_id);
        self.counters.inserts += 1;
        self.counters.insert_distance_computations += dc;
        Ok(NodeId(self.base_id + self.len() as u64 - 1))
    }

    fn random_level(&mut self) -> usize {
        let u: f64 = self.rng.random();
        ((-(1.0 - u).ln() * self.level_norm) as usize).min(MAX_LEVEL)
    }

    /// Returns the number of distance computations spent.
    fn insert_unchecked(&mut self, vector: &[f64], record_id: RecordId) -> u64 {
        let level = self.random_level();
        let idx = self.record_ids.len() as u32;
        self.vectors.extend_from_slice(vector);
        self.record_ids.push(record_id);
        self.links.push(vec![Vec::new(); level + 1]);
        self.active.push(true);
        self.by_record.insert(record_id, idx);

        let Some(entry) = self.entry else {
            self.entry = Some(idx);
            self.max_level = level;
            return 0;
        };

        let mut stats = SearchStats::default();
        let q: Vec<f64> = vector.to_vec();
        let mut ep = vec![self.score(&q, entry)];
        stats.distance_computations += 1;
        for layer in (level + 1..=self.max_level).rev() {
            let mut visited = Visited::new(self.len());
            ep = self.search_layer(&q, &ep, 1, layer, false, &mut visited, &mut stats);
            ep.truncate(1);
        }
        for layer in (0..=level.min(self.max_level)).rev() {
            let mut visited = Visited::new(self.len());
            let found = self.search_layer(
                &q,
                &ep,
                self.config.ef_construction,
                layer,
                false,
                &mut visited,
                &mut stats,
            );
            let cap = self.layer_capacity(layer);
            let chosen = self.select_neighbors(&found, cap, &mut stats);
            for &nb in &chosen {
                self.links[nb as usize][layer].push(idx);
                if self.links[nb as usize][layer].len() > cap {
                    self.prune(nb, layer, cap, &mut stats);
                }
            }
            self.links[idx as usize][layer] = chosen;
            ep = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(idx);
        }
        stats.distance_computations
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept, then top up with the rejected ones.
    fn select_neighbors(&self, sorted: &[Entry], cap: usize, stats: &mut SearchStats) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(cap);
        let mut rejected: Vec<u32> = Vec::new();
        for c in sorted {
            if kept.len() >= cap {
                break;
            }
            let crow = self.row(c.idx);
            let diverse = kept.iter().all(|&s| {
                stats.distance_computations += 1;
                dot(crow, self.row(s)) < c.rank.score
            });
            if diverse {
                kept.push(c.idx);
            } else {
                rejected.push(c.idx);
            }
        }
        for r in rejected {
            if kept.len() >= cap {
                break;
            }
            kept.push(r);
        }
        kept
    }

    fn prune(&mut self, node: u32, layer: usize, cap: usize, stats: &mut SearchStats) {
        let base = self.row(node).to_vec();
        let mut cands: Vec<Entry> = self.links[node as usize][layer]
            .iter()
            .map(|&n| self.score(&base, n))
            .collect();
        stats.distance_computations += cands.len() as u64;
        cands.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&cands, cap, stats);
        self.links[node as usize][layer] = kept;
    }

    #[allow(clippy::too_many_arguments)]
    fn search_layer(
        &self,
        q: &[f64],
        entries: &[Entry],
        ef: usize,
        layer: usize,
        active_only: bool,
        visited: &mut Visited,
        stats: &mut SearchStats,
    ) -> Vec<Entry> {
        let mut candidates: BinaryHeap<Entry> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Entry>> = BinaryHeap::new();
        for &e in entries {
            if !visited.insert(e.idx) {
                continue;
            }
            stats.nodes_visited += 1;
            candidates.push(e);
            if !active_only || self.active[e.idx as usize] {
                results.push(Reverse(e));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(c) = candidates.pop() {
            if results.len() >= ef {
                if let Some(worst) = results.peek() {
                    if c < worst.0 {
                        break;
                    }
                }
            }
            let Some(nbrs) = self.links[c.idx as usize].get(layer) else {
                continue;
            };
            for &nb in nbrs {
                if !visited.insert(nb) {
                    continue;
                }
                let e = self.score(q, nb);
                stats.distance_computations += 1;
                stats.nodes_visited += 1;
                let admit = results.len() < ef || results.peek().is_none_or(|w| e > w.0);
                if admit {
                    candidates.push(e);
                    if !active_only || self.active[nb as usize] {
                        results.push(Reverse(e));
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }
        let mut out: Vec<Entry> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate top-`k` among active records, with beam width `ef_search`.
    pub fn search(&self, query: &[f64], k: usize, ef_search: usize) -> Result<SearchResult> {
        if query.len() != self.config.dim {
            return Err(schema(format!(
                "query has {} dims, index expects {}",
                query.len(),
                self.config.dim
            )));
        }
        if ef_search < k {
            return Err(invalid(format!("ef_search {ef_search} < k {k}")));
        }
        let mut stats = SearchStats::default();
        let Some(entry) = self.entry else {
            return Ok(SearchResult::default());
        };
        if k == 0 {
            return Ok(SearchResult::default());
        }
        let mut ep = vec![self.score(query, entry)];
        stats.distance_computations += 1;
        for layer in (1..=self.max_level).rev() {
            let mut visited = Visited::new(self.len());
            ep = self.search_layer(query, &ep, 1, layer, false, &mut visited, &mut stats);
            ep.truncate(1);
        }
        let mut visited = Visited::new(self.len());
        let found = self.search_layer(query, &ep, ef_search, 0, true, &mut visited, &mut stats);
        let mut top = TopK::new(k);
        for e in found {
            top.push(e.rank.score, e.rank.id);
        }
        Ok(SearchResult {
            hits: top.into_hits(),
            stats,
        })
    }

    /// Exact top-`k` over the active records by scanning stored vectors.
    pub fn exact_topk(&self, query: &[f64], k: usize) -> Result<SearchResult> {
        if query.len() != self.config.dim {
            return Err(schema("query dimension mismatch"));
        }
        let mut top = TopK::new(k);
        let mut n = 0;
        for i in 0..self.len() as u32 {
            if self.active[i as usize] {
                n += 1;
                top.push(dot(query, self.row(i)), self.record_ids[i as usize]);
            }
        }
        Ok(SearchResult {
            hits: top.into_hits(),
            stats: SearchStats {
                distance_computations: n,
                nodes_visited: n,
            },
        })
    }

    /// Rebuilds the graph from active records. NodeIds continue after the old range.
    pub fn compact(&mut self) -> CompactionSummary {
        let dropped = self.inactive;
        if dropped == 0 {
            return CompactionSummary {
                dropped: 0,
                new_size: self.len(),
            };
        }
        let survivors: Vec<(RecordId, Vec<f64>)> = (0..self.len() as u32)
            .filter(|&i| self.active[i as usize])
            .map(|i| (self.record_ids[i as usize], self.row(i).to_vec()))
            .collect();
        let next_base = self.base_id + self.len() as u64;
        self.vectors = Vec::with_capacity(survivors.len() * self.config.dim);
        self.record_ids = Vec::with_capacity(survivors.len());
        self.links = Vec::with_capacity(survivors.len());
        self.active = Vec::with_capacity(survivors.len());
        self.by_record = HashMap::with_capacity(survivors.len());
        self.inactive = 0;
        self.entry = None;
        self.max_level = 0;
        self.base_id = next_base;
        let mut dc = 0;
        for (id, v) in &survivors {
            dc += self.insert_unchecked(v, *id);
        }
        self.counters.compactions += 1;
        self.counters.compaction_reinserts += survivors.len() as u64;
        self.counters.compaction_distance_computations += dc;
        CompactionSummary {
            dropped,
            new_size: self.len(),
        }
    }

    fn maybe_compact(&mut self) {
        if let Some(th) = self.config.compaction_threshold {
            if !self.is_empty() && self.inactive as f64 / self.len() as f64 > th {
                self.compact();
            }
        }
    }
}

impl Deactivate for HnswIndex {
    /// Tombstones the given records; unknown ids are skipped. May trigger compaction.
    fn deactivate(&mut self, ids: &[RecordId]) -> usize {
        let mut n = 0;
        for id in ids {
            if let Some(&i) = self.by_record.get(id) {
                if std::mem::replace(&mut self.active[i as usize], false) {
                    n += 1;
                }
            }
        }
        self.inactive += n;
        self.counters.tombstones_marked += n as u64;
        self.maybe_compact();
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::FlatIndex;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = crate::l2_norm(&v);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    }

    fn config(dim: usize) -> AnnConfig {
        AnnConfig {
            max_neighbors: 8,
            ef_construction: 64,
            compaction_threshold: None,
            ..AnnConfig::new(dim)
        }
    }

    #[test]
    fn node_ids_are_sequential() {
        let mut idx = HnswIndex::new(config(4)).unwrap();
        for (i, v) in unit_vectors(20, 4, 1).iter().enumerate() {
            assert_eq!(idx.insert(v, 100 + i as u64).unwrap(), NodeId(i as u64));
        }
    }

    #[test]
    fn self_retrieval() {
        let data = unit_vectors(500, 8, 2);
        let mut idx = HnswIndex::new(config(8)).unwrap();
        for (i, v) in data.iter().enumerate() {
            idx.insert(v, i as u64).unwrap();
        }
        for (i, v) in data.iter().enumerate().step_by(7) {
            let r = idx.search(v, 1, 32).unwrap();
            assert_eq!(r.hits[0].record_id, i as u64);
            assert!((r.hits[0].score - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_index_and_argument_errors() {
        let idx = HnswIndex::new(config(3)).unwrap();
        assert!(idx.search(&[1.0, 0.0, 0.0], 5, 10).unwrap().is_empty());
        assert!(matches!(
            idx.search(&[1.0, 0.0, 0.0], 5, 4),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(matches!(
            idx.search(&[1.0], 1, 4),
            Err(crate::Error::Schema(_))
        ));
        let mut idx = HnswIndex::new(config(3)).unwrap();
        assert!(idx.insert(&[1.0, 0.0], 0).is_err());
        idx.insert(&[1.0, 0.0, 0.0], 0).unwrap();
        assert!(idx.insert(&[0.0, 1.0, 0.0], 0).is_err());
        assert!(HnswIndex::new(AnnConfig {
            max_neighbors: 1,
            ..config(3)
        })
        .is_err());
        assert!(HnswIndex::new(AnnConfig {
            ef_construction: 4,
            ..config(3)
        })
        .is_err());
    }

    #[test]
    fn wide_beam_on_small_index_is_exact() {
        let data = unit_vectors(100, 12, 3);
        let mut idx = HnswIndex::new(config(12)).unwrap();
        let mut flat = FlatIndex::new(12);
        for (i, v) in data.iter().enumerate() {
            idx.insert(v, i as u64).unwrap();
            flat.insert(v, i as u64).unwrap();
        }
        for q in unit_vectors(50, 12, 4) {
            let a = idx.search(&q, 10, 100).unwrap();
            let b = flat.flat_topk(&q, 10, true).unwrap();
            assert_eq!(a.hits, b.hits);
            assert!(a.stats.distance_computations >= a.len() as u64);
            assert!(a.stats.nodes_visited >= a.len() as u64);
        }
    }

    #[test]
    fn deactivated_records_never_returned() {
        let data = unit_vectors(400, 8, 5);
        let mut idx = HnswIndex::new(config(8)).unwrap();
        for (i, v) in data.iter().enumerate() {
            idx.insert(v, i as u64).unwrap();
        }
        let dead: Vec<u64> = (0..400).filter(|i| i % 3 == 0).collect();
        assert_eq!(idx.deactivate(&dead), dead.len());
        assert_eq!(idx.deactivate(&dead), 0);
        assert_eq!(idx.deactivate(&[10_000]), 0);
        for (i, v) in data.iter().enumerate() {
            let r = idx.search(v, 10, 40).unwrap();
            assert!(r.hits.iter().all(|h| h.record_id % 3 != 0));
            if i % 3 != 0 {
                assert_eq!(r.hits[0].record_id, i as u64);
            }
        }
    }

    #[test]
    fn compaction_edge_cases() {
        let data = unit_vectors(50, 4, 6);
        let mut idx = HnswIndex::new(config(4)).unwrap();
        for (i, v) in data.iter().enumerate() {
            idx.insert(v, i as u64).unwrap();
        }
        assert_eq!(
            idx.compact(),
            CompactionSummary {
                dropped: 0,
                new_size: 50
            }
        );
        let all: Vec<u64> = (0..50).collect();
        idx.deactivate(&all);
        assert_eq!(
            idx.compact(),
            CompactionSummary {
                dropped: 50,
                new_size: 0
            }
        );
        assert!(idx.is_empty());
        assert!(idx.search(&data[0], 1, 10).unwrap().is_empty());
        // ids keep increasing after a rebuild
        assert_eq!(idx.insert(&data[0], 0).unwrap(), NodeId(50));
    }

    #[test]
    fn automatic_compaction_past_threshold() {
        let data = unit_vectors(100, 4, 8);
        let mut idx = HnswIndex::new(AnnConfig {
            compaction_threshold: Some(0.5),
            ..config(4)
        })
        .unwrap();
        for (i, v) in data.iter().enumerate() {
            idx.insert(v, i as u64).unwrap();
        }
        idx.deactivate(&(0..50).collect::<Vec<_>>());
        assert_eq!(idx.counters().compactions, 0);
        idx.deactivate(&[50]);
        assert_eq!(idx.counters().compactions, 1);
        assert_eq!(idx.len(), 49);
        assert_eq!(idx.inactive_len(), 0);
        assert!(!idx.is_active(10));
        assert!(idx.is_active(60));
    }

    #[test]
    fn deterministic_under_seed() {
        let data = unit_vectors(300, 6, 9);
        let build = || {
            let mut idx = HnswIndex::new(config(6)).unwrap();
            for (i, v) in data.iter().enumerate() {
                idx.insert(v, i as u64).unwrap();
            }
            idx
        };
        let (a, b) = (build(), build());
        for q in unit_vectors(30, 6, 10) {
            assert_eq!(a.search(&q, 5, 20).unwrap(), b.search(&q, 5, 20).unwrap());
        }
    }
}
