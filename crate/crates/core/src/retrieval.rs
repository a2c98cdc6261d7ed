//! Weighted top-k retrieval over a [`SpatialStore`], brute-force ground truth
//! and recall@k.

use std::collections::HashSet;

use crate::ann::{SearchStats, TopK};
use crate::encoding::{encode_geo, GeoCoordinate, ModalityEmbedding, Schema, WeightVector};
use crate::error::{invalid, schema as schema_err, Result};
use crate::store::{SpatialStore, StoredRecord};
use crate::{dot, RecordId};

/// A weighted query: one cue per modality plus interest weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryProfile {
    /// One unit vector per content modality. A cue may be left out only when
    /// its weight is zero.
    pub content_cues: Vec<ModalityEmbedding>,
    pub time_cue: f64,
    pub location_cue: GeoCoordinate,
    /// Over all modalities: content blocks first, then time, then geo.
    pub weights: WeightVector,
    pub k: usize,
    pub ef_search: usize,
    /// Divide the query by `|w|`. Orderings do not depend on it.
    pub normalize: bool,
    /// Also report the per-modality similarities of every result.
    pub field_scores: bool,
}

impl QueryProfile {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        if self.ef_search < self.k {
            return Err(invalid(format!(
                "ef_search {} < k {}",
                self.ef_search, self.k
            )));
        }
        if self.weights.len() != schema.modality_count() {
            return Err(schema_err(format!(
                "{} weights for {} modalities",
                self.weights.len(),
                schema.modality_count()
            )));
        }
        if !self.time_cue.is_finite() {
            return Err(invalid("time cue must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResult {
    pub record_id: RecordId,
    /// Inner product in composite space, `S / sqrt(m)` (further divided by
    /// `|w|` for normalized queries).
    pub score: f64,
    /// `<v_i, q_i>` on the unit blocks, when requested.
    pub per_field_scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub results: Vec<ScoredResult>,
    pub stats: SearchStats,
    /// Set when the time cue lies outside the live window. Such queries are
    /// still answered; the temporal similarity then reflects folded phases.
    pub time_cue_outside_window: bool,
}

impl QueryOutcome {
    pub fn ids(&self) -> Vec<RecordId> {
        self.results.iter().map(|r| r.record_id).collect()
    }
}

/// Unit cue blocks in schema order, `None` where a cue is absent.
fn unit_cues(store: &SpatialStore, profile: &QueryProfile) -> Result<Vec<Option<Vec<f64>>>> {
    let schema = store.schema();
    let mut cues: Vec<Option<Vec<f64>>> = vec![None; schema.modality_count()];
    for c in &profile.content_cues {
        let slot = cues
            .get_mut(c.modality())
            .filter(|_| c.modality() < schema.content_count())
            .ok_or_else(|| schema_err(format!("cue for non-content modality {}", c.modality())))?;
        if c.dim() != schema.blocks()[c.modality()].dim {
            return Err(schema_err(format!(
                "content cue {} has {} dims, expected {}",
                c.modality(),
                c.dim(),
                schema.blocks()[c.modality()].dim
            )));
        }
        if slot.replace(c.values().to_vec()).is_some() {
            return Err(schema_err(format!(
                "duplicate cue for modality {}",
                c.modality()
            )));
        }
    }
    let t = schema
        .time_modality()
        .expect("store schema has a time block");
    let g = schema.geo_modality().expect("store schema has a geo block");
    cues[t] = Some(store.encode_time(profile.time_cue).0.to_vec());
    cues[g] = Some(encode_geo(&profile.location_cue).0.to_vec());
    for (i, c) in cues.iter().enumerate() {
        if c.is_none() && profile.weights.get(i) > 0.0 {
            return Err(schema_err(format!("missing cue for weighted modality {i}")));
        }
    }
    Ok(cues)
}

/// Builds `q~` for the profile against the store's schema and phase origin.
pub fn encode_query(store: &SpatialStore, profile: &QueryProfile) -> Result<Vec<f64>> {
    profile.validate(store.schema())?;
    let cues = unit_cues(store, profile)?;
    compose_weighted(store.schema(), &cues, &profile.weights, profile.normalize)
}

fn compose_weighted(
    schema: &Schema,
    cues: &[Option<Vec<f64>>],
    weights: &WeightVector,
    normalize: bool,
) -> Result<Vec<f64>> {
    let embeddings = cues
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.as_ref().map(|v| (i, v)))
        .map(|(i, v)| ModalityEmbedding::normalized(i, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    schema.compose_query(&embeddings, weights, normalize)
}

fn per_field(schema: &Schema, stored: &[f64], cues: &[Option<Vec<f64>>]) -> Vec<f64> {
    let sqrt_m = (schema.modality_count() as f64).sqrt();
    cues.iter()
        .enumerate()
        .map(|(i, c)| match c {
            Some(c) => sqrt_m * dot(schema.block(stored, i), c),
            None => 0.0,
        })
        .collect()
}

/// One graph search for the weighted query. Results exclude expired records
/// and come in descending score order.
pub fn query(store: &SpatialStore, profile: &QueryProfile) -> Result<QueryOutcome> {
    profile.validate(store.schema())?;
    let cues = unit_cues(store, profile)?;
    let q = compose_weighted(store.schema(), &cues, &profile.weights, profile.normalize)?;
    let found = store.index().search(&q, profile.k, profile.ef_search)?;
    let results = found
        .hits
        .iter()
        .map(|h| ScoredResult {
            record_id: h.record_id,
            score: h.score,
            per_field_scores: profile.field_scores.then(|| {
                let v = store.index().vector(h.record_id).expect("hit is indexed");
                per_field(store.schema(), v, &cues)
            }),
        })
        .collect();
    Ok(QueryOutcome {
        results,
        stats: found.stats,
        time_cue_outside_window: !store.window().in_window(profile.time_cue),
    })
}

/// Brute-force top-k over every live record by `S = sum_i w_i <v_i, q_i>`,
/// computed from the record payloads rather than the stored composites.
pub fn exact_topk(store: &SpatialStore, profile: &QueryProfile) -> Result<Vec<ScoredResult>> {
    profile.validate(store.schema())?;
    let cues = unit_cues(store, profile)?;
    let schema = store.schema();
    let m = schema.modality_count();
    let t = schema.time_modality().expect("time block");
    let g = schema.geo_modality().expect("geo block");
    let fields = |s: &StoredRecord| -> Vec<f64> {
        let mut f = vec![0.0; m];
        for (i, c) in s.record.content.iter().enumerate() {
            if let Some(q) = &cues[i] {
                f[i] = dot(c, q);
            }
        }
        f[t] = dot(&s.time.0, cues[t].as_deref().expect("time cue"));
        f[g] = dot(&s.geo.0, cues[g].as_deref().expect("geo cue"));
        f
    };
    let w = profile.weights.as_slice();
    let mut top = TopK::new(profile.k);
    for s in store.iter_live() {
        let total: f64 = fields(s).iter().zip(w).map(|(f, w)| f * w).sum();
        top.push(total, s.record.id);
    }
    let mut scale = 1.0 / (m as f64).sqrt();
    if profile.normalize {
        scale /= profile.weights.norm();
    }
    Ok(top
        .into_hits()
        .into_iter()
        .map(|h| ScoredResult {
            record_id: h.record_id,
            score: h.score * scale,
            per_field_scores: profile
                .field_scores
                .then(|| fields(store.get(h.record_id).expect("live record"))),
        })
        .collect())
}

/// `|R_k ∩ G_k| / k`, counting only the first `k` retrieved ids.
pub fn recall_at_k(retrieved: &[RecordId], truth: &[RecordId], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if truth.len() != k {
        return Err(invalid(format!(
            "ground truth has {} ids, expected k = {k}",
            truth.len()
        )));
    }
    let g: HashSet<RecordId> = truth.iter().copied().collect();
    let r: HashSet<RecordId> = retrieved.iter().take(k).copied().collect();
    Ok(r.intersection(&g).count() as f64 / k as f64)
}
