use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{validate_box, ContentDistribution, DataSection, QuerySection};
use crate::encoding::GeoCoordinate;
use crate::error::Result;
use crate::{l2_norm, SpatRecord};

fn gaussian_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = l2_norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `base + sigma * g / sqrt(dim)`, renormalized.
fn perturb(rng: &mut impl Rng, base: &[f64], sigma: f64) -> Vec<f64> {
    let s = sigma / (base.len() as f64).sqrt();
    loop {
        let v: Vec<f64> = base
            .iter()
            .map(|x| {
                let g: f64 = StandardNormal.sample(rng);
                x + s * g
            })
            .collect();
        let n = l2_norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Seeded synthetic stream: uniform timestamps sorted ascending, uniform
/// coordinates in the box, unit content blocks. Ids follow timestamp order.
pub fn generate_dataset(data: &DataSection, content_dims: &[usize]) -> Result<Vec<SpatRecord>> {
    validate_box(
        data.lat_min_deg,
        data.lat_max_deg,
        data.lon_min_deg,
        data.lon_max_deg,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(data.seed);
    let centres: Vec<Vec<Vec<f64>>> = match data.content {
        ContentDistribution::RandomUnit => Vec::new(),
        ContentDistribution::GaussianClusters => content_dims
            .iter()
            .map(|&d| {
                (0..data.clusters.max(1))
                    .map(|_| gaussian_unit(&mut rng, d))
                    .collect()
            })
            .collect(),
    };
    let mut raw: Vec<(f64, GeoCoordinate, Vec<Vec<f64>>)> = Vec::with_capacity(data.count);
    for _ in 0..data.count {
        let t = data.start + rng.random::<f64>() * data.span;
        let lat = rng.random_range(data.lat_min_deg..=data.lat_max_deg);
        let lon = rng.random_range(data.lon_min_deg..data.lon_max_deg);
        let content = match data.content {
            ContentDistribution::RandomUnit => content_dims
                .iter()
                .map(|&d| gaussian_unit(&mut rng, d))
                .collect(),
            ContentDistribution::GaussianClusters => centres
                .iter()
                .map(|cs| {
                    let c = cs.choose(&mut rng).expect("at least one cluster");
                    perturb(&mut rng, c, data.cluster_spread)
                })
                .collect(),
        };
        raw.push((t, GeoCoordinate::from_degrees(lat, lon)?, content));
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(i, (timestamp, location, content))| SpatRecord {
            id: i as u64,
            content,
            timestamp,
            location,
        })
        .collect())
}

/// Raw query intent, independent of any index.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    /// The record the cues were derived from.
    pub anchor: u64,
    pub content: Vec<Vec<f64>>,
    pub time: f64,
    pub location: GeoCoordinate,
    /// Over all modalities, content first, then time and geo.
    pub weights: Vec<f64>,
}

/// Queries perturbed from randomly chosen anchor records, with per-modality
/// weights drawn from `queries.weight_levels`.
pub fn generate_queries(
    records: &[SpatRecord],
    queries: &QuerySection,
    data: &DataSection,
    count: usize,
    seed: u64,
) -> Result<Vec<QuerySpec>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = records[0].content.len() + 2;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = &records[rng.random_range(0..records.len())];
        let content = anchor
            .content
            .iter()
            .map(|c| perturb(&mut rng, c, queries.content_noise))
            .collect();
        let dt: f64 = StandardNormal.sample(&mut rng);
        let dlat: f64 = StandardNormal.sample(&mut rng);
        let dlon: f64 = StandardNormal.sample(&mut rng);
        let lat = (anchor.location.lat().to_degrees() + dlat * queries.location_noise_deg)
            .clamp(data.lat_min_deg, data.lat_max_deg);
        let lon = (anchor.location.lon().to_degrees() + dlon * queries.location_noise_deg)
            .clamp(data.lon_min_deg, data.lon_max_deg);
        let weights = (0..m)
            .map(|_| {
                *queries
                    .weight_levels
                    .choose(&mut rng)
                    .expect("non-empty levels")
            })
            .collect();
        out.push(QuerySpec {
            anchor: anchor.id,
            content,
            time: (anchor.timestamp + dt * queries.time_noise)
                .clamp(data.start, data.start + data.span),
            location: GeoCoordinate::from_degrees(lat, lon)?,
            weights,
        });
    }
    Ok(out)
}
