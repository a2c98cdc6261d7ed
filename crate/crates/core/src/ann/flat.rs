use std::collections::HashMap;

use super::{Deactivate, NodeId, SearchResult, SearchStats, TopK};
use crate::error::{invalid, schema, Result};
use crate::{dot, RecordId};

/// Brute-force inner-product index. Exact, used as ground truth.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    dim: usize,
    vectors: Vec<f64>,
    record_ids: Vec<RecordId>,
    active: Vec<bool>,
    by_record: HashMap<RecordId, usize>,
    active_count: usize,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
            record_ids: Vec::new(),
            active: Vec::new(),
            by_record: HashMap::new(),
            active_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn active_len(&self) -> usize {
        self.active_count
    }

    pub fn insert(&mut self, vector: &[f64], record_id: RecordId) -> Result<NodeId> {
        if vector.len() != self.dim {
            return Err(schema(format!(
                "vector has {} dims, index expects {}",
                vector.len(),
                self.dim
            )));
        }
        if self.by_record.contains_key(&record_id) {
            return Err(invalid(format!("record {record_id} already indexed")));
        }
        let pos = self.record_ids.len();
        self.vectors.extend_from_slice(vector);
        self.record_ids.push(record_id);
        self.active.push(true);
        self.by_record.insert(record_id, pos);
        self.active_count += 1;
        Ok(NodeId(pos as u64))
    }

    /// Exact top-`k` by inner product.
    pub fn flat_topk(&self, query: &[f64], k: usize, active_only: bool) -> Result<SearchResult> {
        if query.len() != self.dim {
            return Err(schema(format!(
                "query has {} dims, index expects {}",
                query.len(),
                self.dim
            )));
        }
        let mut top = TopK::new(k);
        let mut computed = 0u64;
        for (i, v) in self.vectors.chunks_exact(self.dim.max(1)).enumerate() {
            if active_only && !self.active[i] {
                continue;
            }
            computed += 1;
            top.push(dot(v, query), self.record_ids[i]);
        }
        Ok(SearchResult {
            hits: top.into_hits(),
            stats: SearchStats {
                distance_computations: computed,
                nodes_visited: computed,
            },
        })
    }
}

impl Deactivate for FlatIndex {
    fn deactivate(&mut self, ids: &[RecordId]) -> usize {
        let mut n = 0;
        for id in ids {
            if let Some(&pos) = self.by_record.get(id) {
                if std::mem::replace(&mut self.active[pos], false) {
                    n += 1;
                }
            }
        }
        self.active_count -= n;
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_ranking_and_single_vector() {
        let mut f = FlatIndex::new(2);
        f.insert(&[1.0, 0.0], 7).unwrap();
        let r = f.flat_topk(&[0.0, 1.0], 5, true).unwrap();
        assert_eq!(r.ids(), vec![7]);
        f.insert(&[0.0, 1.0], 3).unwrap();
        f.insert(&[0.6, 0.8], 5).unwrap();
        let r = f.flat_topk(&[0.0, 1.0], 10, true).unwrap();
        assert_eq!(r.ids(), vec![3, 5, 7]);
        assert_eq!(r.stats.distance_computations, 3);
    }

    #[test]
    fn active_only_counts_actives() {
        let mut f = FlatIndex::new(1);
        for i in 0..5 {
            f.insert(&[i as f64], i).unwrap();
        }
        assert_eq!(f.deactivate(&[4, 3, 99]), 2);
        assert_eq!(f.deactivate(&[4]), 0);
        let r = f.flat_topk(&[1.0], 2, true).unwrap();
        assert_eq!(r.ids(), vec![2, 1]);
        assert_eq!(r.stats.distance_computations, 3);
        let r = f.flat_topk(&[1.0], 2, false).unwrap();
        assert_eq!(r.ids(), vec![4, 3]);
    }

    #[test]
    fn agrees_with_sorting_every_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 6;
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut f = FlatIndex::new(dim);
        for (i, v) in data.iter().enumerate() {
            f.insert(v, i as u64).unwrap();
        }
        for _ in 0..1_000 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut all: Vec<(f64, u64)> = data
                .iter()
                .enumerate()
                .map(|(i, v)| (v.iter().zip(&q).map(|(a, b)| a * b).sum(), i as u64))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expect: Vec<u64> = all.iter().take(10).map(|p| p.1).collect();
            assert_eq!(f.flat_topk(&q, 10, true).unwrap().ids(), expect);
        }
    }

    #[test]
    fn dimension_checked() {
        let mut f = FlatIndex::new(3);
        assert!(f.insert(&[1.0], 0).is_err());
        assert!(f.flat_topk(&[1.0], 1, true).is_err());
    }
}
