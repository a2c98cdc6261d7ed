//! Inner-product nearest-neighbor indexes.
//!
//! [`HnswIndex`] is the approximate graph index used for serving; [`FlatIndex`]
//! scans every stored vector and is the exact oracle. Both report
//! [`SearchStats`] so query cost can be compared across methods.
//!
//! Ordering everywhere is by descending score, ties broken by ascending record id.

mod flat;
mod hnsw;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::AddAssign;

pub use flat::FlatIndex;
pub use hnsw::{AnnConfig, CompactionSummary, HnswIndex, IndexCounters};

use crate::RecordId;

/// Index-internal identifier, assigned in ascending insertion order and never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

/// Work done by one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub distance_computations: u64,
    pub nodes_visited: u64,
}

impl AddAssign for SearchStats {
    fn add_assign(&mut self, rhs: Self) {
        self.distance_computations += rhs.distance_computations;
        self.nodes_visited += rhs.nodes_visited;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub record_id: RecordId,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
    pub stats: SearchStats,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<RecordId> {
        self.hits.iter().map(|h| h.record_id).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Implemented by anything that can tombstone records by external id.
pub trait Deactivate {
    /// Returns the number of records that were active before the call.
    fn deactivate(&mut self, ids: &[RecordId]) -> usize;
}

/// Score with the crate-wide tie-break; `Greater` means ranks ahead.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ranked {
    pub score: f64,
    pub id: RecordId,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Bounded selection of the `k` best (score, id) pairs.
pub(crate) struct TopK {
    k: usize,
    // min-heap on rank: the worst kept entry sits on top
    heap: BinaryHeap<std::cmp::Reverse<Ranked>>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 16) + 1),
        }
    }

    pub fn push(&mut self, score: f64, id: RecordId) {
        if self.k == 0 {
            return;
        }
        let r = Ranked { score, id };
        if self.heap.len() < self.k {
            self.heap.push(std::cmp::Reverse(r));
        } else if let Some(worst) = self.heap.peek() {
            if r > worst.0 {
                self.heap.pop();
                self.heap.push(std::cmp::Reverse(r));
            }
        }
    }

    pub fn into_hits(self) -> Vec<Hit> {
        let mut v: Vec<Ranked> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.cmp(a));
        v.into_iter()
            .map(|r| Hit {
                record_id: r.id,
                score: r.score,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_orders_and_breaks_ties_by_id() {
        let mut t = TopK::new(3);
        for (s, id) in [(0.5, 9), (0.9, 4), (0.5, 2), (0.1, 1), (0.9, 3)] {
            t.push(s, id);
        }
        let ids: Vec<_> = t.into_hits().iter().map(|h| h.record_id).collect();
        assert_eq!(ids, vec![3, 4, 2]);
    }

    #[test]
    fn topk_zero_is_empty() {
        let mut t = TopK::new(0);
        t.push(1.0, 1);
        assert!(t.into_hits().is_empty());
    }
}
