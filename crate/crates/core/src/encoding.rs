//! Rotary encoders for time and geolocation, composite layouts, and the
//! precision calculators that bound the temporal scale and spatial resolution.
//!
//! Timestamps are plain `f64` seconds since a fixed epoch. All encodings are
//! computed in double precision.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, schema, Result};
use crate::{dot, l2_norm};

/// Tolerance for unit-norm checks on content embeddings and composites.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Mean Earth radius used to convert central angles to distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(invalid(format!("{what} must be finite, got {value}")))
    }
}

/// Angular speed of the temporal encoder, in radians per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalScale {
    alpha: f64,
}

impl TemporalScale {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid(format!("temporal scale must be > 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    /// Scale that must keep every lag up to `max_interval` inside the monotone
    /// half-turn, i.e. `alpha * max_interval <= pi`.
    pub fn with_max_interval(alpha: f64, max_interval: f64) -> Result<Self> {
        let scale = Self::new(alpha)?;
        finite(max_interval, "max interval")?;
        if alpha * max_interval > PI * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "alpha * max_interval = {} exceeds pi",
                alpha * max_interval
            )));
        }
        Ok(scale)
    }

    /// The scale for which `buckets` unit steps of `tau` seconds span half a turn.
    pub fn for_window(tau: f64, buckets: usize) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) || buckets == 0 {
            return Err(invalid("window needs tau > 0 and at least one bucket"));
        }
        Self::new(PI / (buckets as f64 * tau))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Phase `alpha * t` reduced to `[0, 2pi)`.
    pub fn phase(&self, t: f64) -> f64 {
        (self.alpha * t).rem_euclid(TAU)
    }

    /// Lag covered by half a turn, `pi / alpha`.
    pub fn horizon(&self) -> f64 {
        horizon_for_scale(*self)
    }
}

/// Point on the unit circle encoding a timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEncoding(pub [f64; 2]);

/// Point on the unit sphere encoding a location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoEncoding(pub [f64; 3]);

impl TimeEncoding {
    pub fn from_phase(phase: f64) -> Self {
        let reduced = phase.rem_euclid(TAU);
        let (sin, cos) = reduced.sin_cos();
        Self([cos, sin])
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1]
    }

    pub fn into_embedding(self, modality: usize) -> ModalityEmbedding {
        ModalityEmbedding {
            modality,
            values: self.0.to_vec(),
        }
    }
}

impl GeoEncoding {
    pub fn dot(&self, other: &Self) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn into_embedding(self, modality: usize) -> ModalityEmbedding {
        ModalityEmbedding {
            modality,
            values: self.0.to_vec(),
        }
    }
}

/// Maps `t` to `(cos(alpha t), sin(alpha t))`.
pub fn encode_time(t: f64, scale: TemporalScale) -> Result<TimeEncoding> {
    finite(t, "timestamp")?;
    Ok(TimeEncoding::from_phase(scale.phase(t)))
}

/// `cos(alpha (a - b))`, the inner product of the two time encodings.
pub fn time_similarity(a: f64, b: f64, scale: TemporalScale) -> Result<f64> {
    finite(a, "timestamp")?;
    finite(b, "timestamp")?;
    Ok((scale.alpha * (a - b)).rem_euclid(TAU).cos())
}

/// Latitude and longitude in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    lat: f64,
    lon: f64,
}

impl GeoCoordinate {
    /// Latitude must lie in `[-pi/2, pi/2]` and longitude in `[-pi, pi)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        finite(lat, "latitude")?;
        finite(lon, "longitude")?;
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&lat) {
            return Err(invalid(format!("latitude {lat} outside [-pi/2, pi/2]")));
        }
        if !(-PI..PI).contains(&lon) {
            return Err(invalid(format!("longitude {lon} outside [-pi, pi)")));
        }
        Ok(Self { lat, lon })
    }

    pub fn from_degrees(lat: f64, lon: f64) -> Result<Self> {
        Self::new(lat.to_radians(), lon.to_radians())
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

pub fn encode_geo(g: &GeoCoordinate) -> GeoEncoding {
    let (sin_lat, cos_lat) = g.lat.sin_cos();
    let (sin_lon, cos_lon) = g.lon.sin_cos();
    GeoEncoding([cos_lat * cos_lon, cos_lat * sin_lon, sin_lat])
}

/// Cosine of the central angle between `a` and `b`.
pub fn geo_similarity(a: &GeoCoordinate, b: &GeoCoordinate) -> f64 {
    let c = a.lat.sin() * b.lat.sin() + a.lat.cos() * b.lat.cos() * (a.lon - b.lon).cos();
    c.clamp(-1.0, 1.0)
}

/// One L2-normalized sub-embedding tagged with its modality index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding {
    modality: usize,
    values: Vec<f64>,
}

impl ModalityEmbedding {
    /// Wraps an already unit-norm vector.
    pub fn new(modality: usize, values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !norm.is_finite() || norm == 0.0 {
            return Err(invalid(format!("modality {modality}: zero-norm embedding")));
        }
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(invalid(format!(
                "modality {modality}: embedding norm {norm} is not 1"
            )));
        }
        Ok(Self { modality, values })
    }

    /// Normalizes `values` to unit length.
    pub fn normalized(modality: usize, mut values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !norm.is_finite() || norm == 0.0 {
            return Err(invalid(format!("modality {modality}: zero-norm embedding")));
        }
        values.iter_mut().for_each(|x| *x /= norm);
        Ok(Self { modality, values })
    }

    pub fn modality(&self) -> usize {
        self.modality
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Kind of one block in a composite layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Content(usize),
    Time,
    Geo,
}

impl Modality {
    pub fn dim(&self) -> usize {
        match self {
            Modality::Content(d) => *d,
            Modality::Time => 2,
            Modality::Geo => 3,
        }
    }
}

/// Position of one modality inside a composite vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub modality: usize,
    pub offset: usize,
    pub dim: usize,
}

/// Declared layout: content modalities first (ascending index), then the time
/// block, then the geo block. Records and queries assembled against the same
/// schema are bit-compatible.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    modalities: Vec<Modality>,
    blocks: Vec<Block>,
    dim: usize,
}

impl Schema {
    pub fn new(modalities: Vec<Modality>) -> Result<Self> {
        if modalities.is_empty() {
            return Err(schema("a schema needs at least one modality"));
        }
        let mut seen_time = false;
        let mut seen_geo = false;
        for m in &modalities {
            match m {
                Modality::Content(0) => return Err(schema("content modality with zero dims")),
                Modality::Content(_) if seen_time || seen_geo => {
                    return Err(schema("content modalities must precede time and geo"))
                }
                Modality::Content(_) => {}
                Modality::Time if seen_time || seen_geo => {
                    return Err(schema("time block must appear once, before geo"))
                }
                Modality::Time => seen_time = true,
                Modality::Geo if seen_geo => return Err(schema("geo block must appear once")),
                Modality::Geo => seen_geo = true,
            }
        }
        let mut offset = 0;
        let blocks = modalities
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let b = Block {
                    modality: i,
                    offset,
                    dim: m.dim(),
                };
                offset += m.dim();
                b
            })
            .collect();
        Ok(Self {
            modalities,
            blocks,
            dim: offset,
        })
    }

    /// Content blocks of the given dims followed by time and geo.
    pub fn spatiotemporal(content_dims: &[usize]) -> Result<Self> {
        let mut m: Vec<_> = content_dims.iter().map(|&d| Modality::Content(d)).collect();
        m.push(Modality::Time);
        m.push(Modality::Geo);
        Self::new(m)
    }

    pub fn content_only(content_dims: &[usize]) -> Result<Self> {
        Self::new(content_dims.iter().map(|&d| Modality::Content(d)).collect())
    }

    /// Number of modalities `m`.
    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn content_count(&self) -> usize {
        self.modalities
            .iter()
            .filter(|m| matches!(m, Modality::Content(_)))
            .count()
    }

    pub fn content_dims(&self) -> Vec<usize> {
        self.modalities
            .iter()
            .filter_map(|m| match m {
                Modality::Content(d) => Some(*d),
                _ => None,
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn time_modality(&self) -> Option<usize> {
        self.modalities.iter().position(|m| *m == Modality::Time)
    }

    pub fn geo_modality(&self) -> Option<usize> {
        self.modalities.iter().position(|m| *m == Modality::Geo)
    }

    /// Slice of block `modality` inside a vector laid out by this schema.
    pub fn block<'a>(&self, v: &'a [f64], modality: usize) -> &'a [f64] {
        let b = self.blocks[modality];
        &v[b.offset..b.offset + b.dim]
    }

    fn check_block(&self, e: &ModalityEmbedding) -> Result<Block> {
        let b = *self
            .blocks
            .get(e.modality)
            .ok_or_else(|| schema(format!("unknown modality {}", e.modality)))?;
        if e.dim() != b.dim {
            return Err(schema(format!(
                "modality {} expects {} dims, got {}",
                e.modality,
                b.dim,
                e.dim()
            )));
        }
        Ok(b)
    }

    /// Concatenates one unit block per modality and divides by the global norm.
    pub fn compose(&self, blocks: &[ModalityEmbedding]) -> Result<CompositeVector> {
        let mut values = vec![0.0; self.dim];
        let mut present = vec![false; self.modality_count()];
        for e in blocks {
            let b = self.check_block(e)?;
            if std::mem::replace(&mut present[e.modality], true) {
                return Err(schema(format!("duplicate modality {}", e.modality)));
            }
            values[b.offset..b.offset + b.dim].copy_from_slice(&e.values);
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(schema(format!("missing modality {missing}")));
        }
        let norm = l2_norm(&values);
        values.iter_mut().for_each(|x| *x /= norm);
        Ok(CompositeVector { values })
    }

    /// Composite for a record with content blocks plus its time and geo encodings.
    pub fn compose_record(
        &self,
        content: &[ModalityEmbedding],
        time: &TimeEncoding,
        geo: &GeoEncoding,
    ) -> Result<CompositeVector> {
        let (Some(t), Some(g)) = (self.time_modality(), self.geo_modality()) else {
            return Err(schema("schema has no time/geo blocks"));
        };
        let mut blocks = content.to_vec();
        blocks.push(time.into_embedding(t));
        blocks.push(geo.into_embedding(g));
        self.compose(&blocks)
    }

    /// Builds `[w_1 q_1; ...; w_m q_m]`, optionally divided by `|w|`.
    ///
    /// A cue may be omitted for a modality whose weight is zero; its block is
    /// left at zero.
    pub fn compose_query(
        &self,
        cues: &[ModalityEmbedding],
        weights: &WeightVector,
        normalize: bool,
    ) -> Result<Vec<f64>> {
        let m = self.modality_count();
        if weights.len() != m {
            return Err(schema(format!(
                "weight vector has {} entries, schema has {m} modalities",
                weights.len()
            )));
        }
        let mut out = vec![0.0; self.dim];
        let mut present = vec![false; m];
        for cue in cues {
            let b = self.check_block(cue)?;
            if std::mem::replace(&mut present[cue.modality], true) {
                return Err(schema(format!(
                    "duplicate cue for modality {}",
                    cue.modality
                )));
            }
            let w = weights.get(cue.modality);
            for (o, x) in out[b.offset..b.offset + b.dim].iter_mut().zip(&cue.values) {
                *o = w * x;
            }
        }
        if let Some(i) = (0..m).find(|&i| !present[i] && weights.get(i) > 0.0) {
            return Err(schema(format!("missing cue for weighted modality {i}")));
        }
        if normalize {
            let norm = weights.norm();
            out.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(out)
    }

    /// Per-modality inner products between two vectors in this layout.
    pub fn per_field_dots(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|blk| {
                let r = blk.offset..blk.offset + blk.dim;
                dot(&a[r.clone()], &b[r])
            })
            .collect()
    }
}

/// Concatenated and globally normalized record embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeVector {
    values: Vec<f64>,
}

impl CompositeVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Block `modality` rescaled by `sqrt(m)`, which undoes the global normalization.
    pub fn recover_block(&self, schema: &Schema, modality: usize) -> Vec<f64> {
        let scale = (schema.modality_count() as f64).sqrt();
        schema
            .block(&self.values, modality)
            .iter()
            .map(|x| x * scale)
            .collect()
    }
}

/// Non-negative per-modality interest weights, not all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("weight vector is empty"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(invalid(format!("weights must be finite and >= 0, got {w}")));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(invalid("at least one weight must be positive"));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0; m.max(1)])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// `c * w` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid(format!("scale factor must be > 0, got {c}")));
        }
        Self::new(self.0.iter().map(|w| w * c).collect())
    }
}

/// Inputs to the precision calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    /// Smallest cosine decrement the engine can resolve.
    pub eps_cos: f64,
    /// Smallest lag, in seconds, that must stay distinguishable.
    pub dt_min: f64,
    pub earth_radius_km: f64,
}

impl PrecisionSpec {
    pub fn new(eps_cos: f64, dt_min: f64) -> Result<Self> {
        Self::with_radius(eps_cos, dt_min, EARTH_RADIUS_KM)
    }

    /// `eps_cos` may be at most 2, the largest possible cosine decrement.
    pub fn with_radius(eps_cos: f64, dt_min: f64, earth_radius_km: f64) -> Result<Self> {
        if !(eps_cos.is_finite() && eps_cos > 0.0 && eps_cos <= 2.0) {
            return Err(invalid(format!("eps_cos must be in (0, 2], got {eps_cos}")));
        }
        if !(dt_min.is_finite() && dt_min > 0.0) {
            return Err(invalid(format!("dt_min must be > 0, got {dt_min}")));
        }
        if !(earth_radius_km.is_finite() && earth_radius_km > 0.0) {
            return Err(invalid("earth radius must be > 0"));
        }
        Ok(Self {
            eps_cos,
            dt_min,
            earth_radius_km,
        })
    }
}

/// Smallest `alpha` for which a lag of `dt_min` lowers the cosine by `eps_cos`
/// (small-angle approximation): `sqrt(2 eps / dt_min^2)`.
pub fn min_scale_for_resolution(spec: &PrecisionSpec) -> Result<TemporalScale> {
    TemporalScale::new((2.0 * spec.eps_cos / (spec.dt_min * spec.dt_min)).sqrt())
}

/// Seconds covered by half a turn, `pi / alpha`.
pub fn horizon_for_scale(scale: TemporalScale) -> f64 {
    PI / scale.alpha
}

/// Smallest resolvable great-circle distance in kilometers, `sqrt(2 eps) R`.
pub fn min_distinguishable_distance(spec: &PrecisionSpec) -> f64 {
    (2.0 * spec.eps_cos).sqrt() * spec.earth_radius_km
}
