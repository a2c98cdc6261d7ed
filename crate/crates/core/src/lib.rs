//! Spatiotemporal vector retrieval over a single similarity space.
//!
//! Time and geolocation are mapped to unit vectors (a point on the circle and
//! a point on the sphere) whose inner products depend only on the temporal lag
//! and the great-circle separation. These blocks are concatenated with
//! L2-normalized content embeddings into one composite vector, so that a
//! per-query weighted sum of per-field similarities becomes a single inner
//! product and can be served by one HNSW traversal.
//!
//! Module map:
//!
//! * [`encoding`] - temporal/geographic encoders, composite layout, precision bounds.
//! * [`ann`] - HNSW graph index with tombstones, plus the exact flat oracle.
//! * [`window`] - phase buckets and the rotating aperture for sliding windows.
//! * [`store`] - ties window, index and live record payloads together.
//! * [`retrieval`] - weighted top-k queries, exact ground truth and recall.
//! * [`baselines`] - scalar-filtered and hybrid multi-index search.
//! * [`harness`] - synthetic data, ablation experiments, metrics, snapshots.

pub mod ann;
pub mod baselines;
pub mod encoding;
mod error;
pub mod harness;
mod record;
pub mod retrieval;
pub mod store;
pub mod window;

pub use error::{Error, Result};
pub use record::SpatRecord;

/// External identifier of a record.
pub type RecordId = u64;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
