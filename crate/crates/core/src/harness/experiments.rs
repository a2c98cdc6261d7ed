use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{DataSection, ExperimentConfig, Method, MONTH_SECONDS};
use super::dataset::{generate_dataset, generate_queries, QuerySpec};
use super::metrics::{mean, median, write_csv_file, MetricRow};
use crate::ann::{FlatIndex, TopK};
use crate::baselines::{FilterPredicate, FilteredIndex, HybridConfig, HybridIndex};
use crate::encoding::{ModalityEmbedding, WeightVector};
use crate::error::{Error, Result};
use crate::retrieval::{encode_query, exact_topk, query, recall_at_k, QueryProfile};
use crate::store::{MaintenanceMode, SpatialStore, StoreConfig};
use crate::window::WindowConfig;
use crate::{RecordId, SpatRecord};

/// Rows for the CSV file plus the structured summary of one run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub name: String,
    pub rows: Vec<MetricRow>,
    pub summary: serde_json::Value,
}

impl ExperimentOutput {
    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.name));
        let js = dir.join(format!("{}.json", self.name));
        write_csv_file(&csv, &self.rows)?;
        std::fs::write(&js, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok((csv, js))
    }
}

fn summary(name: &str, cfg: &ExperimentConfig, results: impl Serialize) -> serde_json::Value {
    json!({ "experiment": name, "config": cfg, "results": results })
}

fn timed<T>(timing: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    let start = Instant::now();
    let out = f();
    (out, timing.then(|| start.elapsed().as_secs_f64() * 1e3))
}

fn sum_latency(xs: &[Option<f64>]) -> Option<f64> {
    xs.iter().copied().sum::<Option<f64>>()
}

fn mean_latency(xs: &[Option<f64>]) -> Option<f64> {
    sum_latency(xs).map(|s| s / xs.len().max(1) as f64)
}

/// A window whose `L` buckets cover the whole data span, so that every record
/// stays live and the temporal block never aliases.
pub fn full_span_window(data: &DataSection, buckets: usize) -> Result<WindowConfig> {
    WindowConfig::new(data.span / buckets as f64, buckets, data.start)
}

pub fn profile_for(
    spec: &QuerySpec,
    weights: &[f64],
    k: usize,
    ef_search: usize,
    normalize: bool,
) -> Result<QueryProfile> {
    Ok(QueryProfile {
        content_cues: spec
            .content
            .iter()
            .enumerate()
            .map(|(i, c)| ModalityEmbedding::new(i, c.clone()))
            .collect::<Result<_>>()?,
        time_cue: spec.time,
        location_cue: spec.location,
        weights: WeightVector::new(weights.to_vec())?,
        k,
        ef_search,
        normalize,
        field_scores: false,
    })
}

/// Records, a store holding all of them, the query set and its weighted
/// ground truth. Shared by the comparison, ef and weight experiments.
pub struct StaticFixture {
    pub records: Vec<SpatRecord>,
    pub store: SpatialStore,
    pub queries: Vec<QuerySpec>,
    /// Exact top-`max_k` under each query's own weights.
    pub truth: Vec<Vec<RecordId>>,
    pub insert_ops: u64,
    pub insert_latency_ms: Option<f64>,
}

pub fn prepare_static(cfg: &ExperimentConfig) -> Result<StaticFixture> {
    cfg.validate()?;
    let k = cfg.max_k();
    if cfg.data.count < k {
        return Err(Error::Config(format!(
            "data.count {} is smaller than the largest k {k}",
            cfg.data.count
        )));
    }
    let records = generate_dataset(&cfg.data, &cfg.schema.content_dims)?;
    let mut store = SpatialStore::new(StoreConfig {
        content_dims: cfg.schema.content_dims.clone(),
        window: full_span_window(&cfg.data, cfg.window.buckets)?,
        ann: cfg.ann.to_ann(cfg.data.seed),
        mode: MaintenanceMode::Circular,
    })?;
    let (res, insert_latency_ms) = timed(cfg.output.timing, || -> Result<()> {
        for r in &records {
            store.ingest(r.clone())?;
        }
        Ok(())
    });
    res?;
    let queries = generate_queries(
        &records,
        &cfg.queries,
        &cfg.data,
        cfg.queries.count,
        cfg.data.seed.wrapping_add(1),
    )?;
    let truth = queries
        .par_iter()
        .map(|q| {
            let p = profile_for(q, &q.weights, k, k, cfg.queries.normalize)?;
            Ok(exact_topk(&store, &p)?
                .iter()
                .map(|r| r.record_id)
                .collect())
        })
        .collect::<Result<Vec<Vec<RecordId>>>>()?;
    Ok(StaticFixture {
        insert_ops: store.index().counters().insert_distance_computations,
        records,
        store,
        queries,
        truth,
        insert_latency_ms,
    })
}

struct QueryRun {
    ids: Vec<RecordId>,
    dc: u64,
    latency: Option<f64>,
}

fn fill_recalls(
    row: &mut MetricRow,
    ks: &[usize],
    runs: &[QueryRun],
    truth: &[Vec<RecordId>],
) -> Result<()> {
    for &k in ks {
        let r = runs
            .iter()
            .zip(truth)
            .map(|(run, t)| recall_at_k(&run.ids, &t[..k.min(t.len())], k))
            .collect::<Result<Vec<_>>>()?;
        row.set_recall(k, mean(&r));
    }
    Ok(())
}

fn row_from_runs(
    experiment: &str,
    method: &str,
    step: f64,
    live: usize,
    runs: &[QueryRun],
) -> MetricRow {
    let dcs: Vec<f64> = runs.iter().map(|r| r.dc as f64).collect();
    let lat: Vec<Option<f64>> = runs.iter().map(|r| r.latency).collect();
    MetricRow {
        experiment: experiment.into(),
        method: method.into(),
        step,
        live_records: live as u64,
        query_ops: runs.iter().map(|r| r.dc).sum(),
        query_latency_ms: mean_latency(&lat),
        distance_computations: median(&dcs),
        ..Default::default()
    }
}

fn composite_runs(
    fx: &StaticFixture,
    cfg: &ExperimentConfig,
    weights: Option<&[f64]>,
    k: usize,
    ef: usize,
) -> Result<Vec<QueryRun>> {
    fx.queries
        .par_iter()
        .map(|q| {
            let p = profile_for(
                q,
                weights.unwrap_or(&q.weights),
                k,
                ef.max(k),
                cfg.queries.normalize,
            )?;
            let (out, latency) = timed(cfg.output.timing, || query(&fx.store, &p));
            let out = out?;
            Ok(QueryRun {
                ids: out.ids(),
                dc: out.stats.distance_computations,
                latency,
            })
        })
        .collect()
}

/// Recall and cost of each enabled method on one dataset and query set.
pub fn run_method_comparison(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let fx = prepare_static(cfg)?;
    run_method_comparison_on(&fx, cfg)
}

pub fn run_method_comparison_on(
    fx: &StaticFixture,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutput> {
    let name = "compare";
    let k = cfg.max_k();
    let ef = cfg.ann.ef_search;
    let live = fx.store.live_count();
    let c = cfg.schema.content_dims.len();
    let mut rows = Vec::new();
    for method in cfg.methods() {
        let (runs, insert_ops, insert_latency_ms) = match method {
            Method::Spatcode => (
                composite_runs(fx, cfg, None, k, ef)?,
                fx.insert_ops,
                fx.insert_latency_ms,
            ),
            Method::Filtered => {
                let mut idx =
                    FilteredIndex::new(&cfg.schema.content_dims, cfg.ann.to_ann(cfg.data.seed))?;
                let (res, lat) = timed(cfg.output.timing, || -> Result<()> {
                    for r in &fx.records {
                        idx.insert(r)?;
                    }
                    Ok(())
                });
                res?;
                let d = &cfg.data;
                let half = cfg.queries.filter_time_fraction * d.span / 2.0;
                let runs = fx
                    .queries
                    .par_iter()
                    .map(|q| {
                        let cues = q
                            .content
                            .iter()
                            .enumerate()
                            .map(|(i, v)| ModalityEmbedding::new(i, v.clone()))
                            .collect::<Result<Vec<_>>>()?;
                        let qv =
                            idx.content_query(&cues, &WeightVector::new(q.weights[..c].to_vec())?)?;
                        let pred = FilterPredicate::new(
                            (q.time - half, q.time + half),
                            (d.lat_min_deg.to_radians(), d.lat_max_deg.to_radians()),
                            (d.lon_min_deg.to_radians(), d.lon_max_deg.to_radians()),
                        )?;
                        let (out, latency) =
                            timed(cfg.output.timing, || idx.filtered_search(&qv, &pred, k, ef));
                        let out = out?;
                        Ok(QueryRun {
                            ids: out.ids(),
                            dc: out.stats.distance_computations,
                            latency,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (runs, idx.insert_distance_computations(), lat)
            }
            Method::Hybrid => {
                let schema = fx.store.schema().clone();
                let mut idx = HybridIndex::new(schema, &cfg.ann.to_ann(cfg.data.seed))?;
                let (res, lat) = timed(cfg.output.timing, || -> Result<()> {
                    for s in fx.store.live_records() {
                        let mut blocks = s.record.content_embeddings()?;
                        blocks.push(s.time.into_embedding(c));
                        blocks.push(s.geo.into_embedding(c + 1));
                        idx.insert(s.record.id, &blocks)?;
                    }
                    Ok(())
                });
                res?;
                let hcfg = HybridConfig {
                    per_modality_k: cfg.hybrid.per_modality_k.unwrap_or(k),
                    merge_rule: cfg.hybrid.merge_rule,
                    rrf_constant: cfg.hybrid.rrf_constant,
                };
                let runs = fx
                    .queries
                    .par_iter()
                    .map(|q| {
                        let mut cues = q
                            .content
                            .iter()
                            .enumerate()
                            .map(|(i, v)| ModalityEmbedding::new(i, v.clone()))
                            .collect::<Result<Vec<_>>>()?;
                        cues.push(fx.store.encode_time(q.time).into_embedding(c));
                        cues.push(crate::encoding::encode_geo(&q.location).into_embedding(c + 1));
                        let w = WeightVector::new(q.weights.clone())?;
                        let (out, latency) = timed(cfg.output.timing, || {
                            idx.hybrid_search(&cues, &w, k, ef, &hcfg)
                        });
                        let out = out?;
                        Ok(QueryRun {
                            ids: out.ids(),
                            dc: out.stats.distance_computations,
                            latency,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (runs, idx.insert_distance_computations(), lat)
            }
        };
        let mut row = row_from_runs(name, method.name(), ef as f64, live, &runs);
        row.insert_ops = insert_ops;
        row.insert_latency_ms = insert_latency_ms;
        fill_recalls(&mut row, &cfg.queries.k, &runs, &fx.truth)?;
        rows.push(row);
    }
    Ok(ExperimentOutput {
        name: name.into(),
        summary: summary(name, cfg, &rows),
        rows,
    })
}

/// Mean recall@10 and median distance computations per swept `ef_search`.
pub fn run_ef_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let fx = prepare_static(cfg)?;
    run_ef_sweep_on(&fx, cfg)
}

pub fn run_ef_sweep_on(fx: &StaticFixture, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let name = "ef-sweep";
    let k = 10.min(cfg.max_k());
    let mut rows = Vec::new();
    for &ef in &cfg.ann.ef_sweep {
        let runs = composite_runs(fx, cfg, None, k, ef)?;
        let mut row = row_from_runs(
            name,
            "spatcode",
            ef.max(k) as f64,
            fx.store.live_count(),
            &runs,
        );
        fill_recalls(&mut row, &[k], &runs, &fx.truth)?;
        rows.push(row);
    }
    Ok(ExperimentOutput {
        name: name.into(),
        summary: summary(name, cfg, &rows),
        rows,
    })
}

/// Recall@10 against the weighted ground truth, querying with the users'
/// weights versus with uniform weights.
pub fn run_weight_ablation(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let fx = prepare_static(cfg)?;
    run_weight_ablation_on(&fx, cfg)
}

pub fn run_weight_ablation_on(
    fx: &StaticFixture,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutput> {
    let name = "weight-ablation";
    let k = 10.min(cfg.max_k());
    let ef = cfg.ann.ef_search;
    let uniform = vec![1.0; fx.store.schema().modality_count()];
    let mut rows = Vec::new();
    for (method, weights) in [("weighted", None), ("uniform", Some(uniform.as_slice()))] {
        let runs = composite_runs(fx, cfg, weights, k, ef)?;
        let mut row = row_from_runs(name, method, ef as f64, fx.store.live_count(), &runs);
        fill_recalls(&mut row, &[k], &runs, &fx.truth)?;
        rows.push(row);
    }
    Ok(ExperimentOutput {
        name: name.into(),
        summary: summary(name, cfg, &rows),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaPoint {
    pub factor: f64,
    pub alpha: f64,
    pub recall: f64,
}

/// Exact search over single-precision time encodings of random timestamps,
/// scored against the true nearest-in-time ranking, per temporal scale.
pub fn run_alpha_sweep(cfg: &ExperimentConfig) -> Result<(ExperimentOutput, Vec<AlphaPoint>)> {
    cfg.validate()?;
    let name = "alpha-sweep";
    let a = &cfg.alpha;
    let d = &cfg.data;
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed.wrapping_add(2));
    let times: Vec<f64> = (0..a.count).map(|_| rng.random::<f64>() * d.span).collect();
    let probes: Vec<f64> = (0..a.queries)
        .map(|_| rng.random::<f64>() * d.span)
        .collect();
    let truth: Vec<Vec<RecordId>> = probes
        .iter()
        .map(|&q| {
            let mut top = TopK::new(a.k);
            for (i, &t) in times.iter().enumerate() {
                top.push(-(t - q).abs(), i as u64);
            }
            top.into_hits().iter().map(|h| h.record_id).collect()
        })
        .collect();
    let encode = |alpha: f64, t: f64| -> (f32, f32) {
        let phase = (alpha * t).rem_euclid(TAU) as f32;
        (phase.cos(), phase.sin())
    };
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for &factor in &a.factors {
        let alpha = factor * PI / d.span;
        let enc: Vec<(f32, f32)> = times.iter().map(|&t| encode(alpha, t)).collect();
        let recalls = probes
            .par_iter()
            .zip(&truth)
            .map(|(&q, t)| {
                let (qc, qs) = encode(alpha, q);
                let mut top = TopK::new(a.k);
                for (i, &(c, s)) in enc.iter().enumerate() {
                    top.push((c * qc + s * qs) as f64, i as u64);
                }
                let ids: Vec<RecordId> = top.into_hits().iter().map(|h| h.record_id).collect();
                recall_at_k(&ids, t, a.k)
            })
            .collect::<Result<Vec<_>>>()?;
        let recall = mean(&recalls);
        points.push(AlphaPoint {
            factor,
            alpha,
            recall,
        });
        let mut row = MetricRow {
            experiment: name.into(),
            method: "f32-phase".into(),
            step: alpha,
            live_records: a.count as u64,
            query_ops: (a.count * a.queries) as u64,
            distance_computations: a.count as f64,
            ..Default::default()
        };
        row.set_recall(a.k, recall);
        rows.push(row);
    }
    Ok((
        ExperimentOutput {
            name: name.into(),
            summary: summary(name, cfg, &points),
            rows,
        },
        points,
    ))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StreamMonth {
    pub month: usize,
    pub live_records: usize,
    /// Live count right after the boundary was processed.
    pub live_at_boundary: usize,
    pub retired_records: u64,
    pub maintenance_ops: u64,
    pub compaction_ops: u64,
    pub insert_ops: u64,
    pub queries: usize,
    /// Queries whose exact windowed top-k equals the fresh live-only top-k.
    pub rank_equivalent: usize,
    /// Result entries outside the live window, over all queries.
    pub stale_hits: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamRun {
    pub size: usize,
    pub mode: MaintenanceMode,
    pub months: Vec<StreamMonth>,
}

impl StreamRun {
    pub fn total_maintenance_ops(&self) -> u64 {
        self.months.iter().map(|m| m.maintenance_ops).sum()
    }
}

/// Thirteen months of ingest with a monthly sliding window, in circular and
/// naive mode, for every configured dataset size.
pub fn run_streaming_ablation(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentOutput, Vec<StreamRun>)> {
    cfg.validate()?;
    let s = &cfg.streaming;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &size in &s.sizes {
        let data = DataSection {
            count: size,
            span: s.months as f64 * MONTH_SECONDS,
            ..cfg.data.clone()
        };
        let records = generate_dataset(&data, &cfg.schema.content_dims)?;
        for mode in [MaintenanceMode::Circular, MaintenanceMode::Naive] {
            let (run, mut month_rows) = stream_once(cfg, &data, &records, mode)?;
            rows.append(&mut month_rows);
            runs.push(run);
        }
    }
    let name = "stream-ablation";
    Ok((
        ExperimentOutput {
            name: name.into(),
            summary: summary(name, cfg, &runs),
            rows,
        },
        runs,
    ))
}

fn stream_once(
    cfg: &ExperimentConfig,
    data: &DataSection,
    records: &[SpatRecord],
    mode: MaintenanceMode,
) -> Result<(StreamRun, Vec<MetricRow>)> {
    let s = &cfg.streaming;
    let mode_name = match mode {
        MaintenanceMode::Circular => "circular",
        MaintenanceMode::Naive => "naive",
    };
    let timing = cfg.output.timing;
    let window = WindowConfig::new(MONTH_SECONDS, cfg.window.buckets, data.start)?;
    let mut ann = cfg.ann.to_ann(data.seed);
    ann.ef_construction = s.ef_construction;
    let mut store = SpatialStore::new(StoreConfig {
        content_dims: cfg.schema.content_dims.clone(),
        window,
        ann,
        mode,
    })?;
    let l = cfg.window.buckets as i64;
    let mut next = 0;
    let mut months = Vec::with_capacity(s.months);
    let mut rows = Vec::with_capacity(s.months);
    for month in 0..s.months {
        let boundary = data.start + month as f64 * MONTH_SECONDS;
        let (adv, adv_latency) = timed(timing, || store.advance(boundary));
        let (mut report, _) = adv?;
        let live_at_boundary = store.live_count();
        let base_inserts = store.index().counters();
        let month_end = boundary + MONTH_SECONDS;
        let (res, insert_latency) = timed(timing, || -> Result<()> {
            while next < records.len() && records[next].timestamp < month_end {
                let out = store.ingest(records[next].clone())?;
                report += out.maintenance;
                next += 1;
            }
            Ok(())
        });
        res?;
        let after = store.index().counters();
        let insert_ops =
            after.insert_distance_computations - base_inserts.insert_distance_computations;

        // live set recomputed from raw timestamps, independent of the manifests
        let oldest = (month as i64 - (l - 1)).max(0);
        let live: Vec<&SpatRecord> = records[..next]
            .iter()
            .filter(|r| window.interval_of(r.timestamp) >= oldest)
            .collect();
        let live_ids: HashSet<RecordId> = live.iter().map(|r| r.id).collect();
        let mut fresh = FlatIndex::new(store.schema().dim());
        for r in &live {
            fresh.insert(
                r.compose(store.schema(), store.phase(r.timestamp))?
                    .values(),
                r.id,
            )?;
        }
        let owned: Vec<SpatRecord> = live.iter().map(|r| (*r).clone()).collect();
        let qseed = data.seed ^ ((records.len() as u64) << 20) ^ month as u64;
        let k = s.k.min(live.len());
        let specs = generate_queries(&owned, &cfg.queries, data, s.queries, qseed)?;
        let evals = specs
            .par_iter()
            .map(|q| -> Result<(bool, usize, f64, u64, Option<f64>)> {
                let mut spec = q.clone();
                spec.time = spec.time.min(month_end);
                let p = profile_for(&spec, &spec.weights, k, cfg.ann.ef_search.max(k), false)?;
                let qv = encode_query(&store, &p)?;
                let windowed = store.index().exact_topk(&qv, k)?.ids();
                let reference = fresh.flat_topk(&qv, k, true)?.ids();
                let same = windowed.iter().collect::<HashSet<_>>()
                    == reference.iter().collect::<HashSet<_>>();
                let (approx, latency) = timed(timing, || query(&store, &p));
                let approx = approx?;
                let stale = approx
                    .ids()
                    .iter()
                    .filter(|id| !live_ids.contains(id))
                    .count();
                let truth: Vec<RecordId> = exact_topk(&store, &p)?
                    .iter()
                    .map(|r| r.record_id)
                    .collect();
                let recall = recall_at_k(&approx.ids(), &truth, k)?;
                Ok((
                    same,
                    stale,
                    recall,
                    approx.stats.distance_computations,
                    latency,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let dcs: Vec<f64> = evals.iter().map(|e| e.3 as f64).collect();
        let lats: Vec<Option<f64>> = evals.iter().map(|e| e.4).collect();
        let stats = StreamMonth {
            month,
            live_records: store.live_count(),
            live_at_boundary,
            retired_records: report.retired_records,
            maintenance_ops: report.maintenance_ops(),
            compaction_ops: report.compaction_ops(),
            insert_ops,
            queries: evals.len(),
            rank_equivalent: evals.iter().filter(|e| e.0).count(),
            stale_hits: evals.iter().map(|e| e.1).sum(),
            recall: mean(&evals.iter().map(|e| e.2).collect::<Vec<_>>()),
        };
        let mut row = MetricRow {
            experiment: format!("stream-ablation/n={}", records.len()),
            method: mode_name.into(),
            step: month as f64,
            live_records: stats.live_records as u64,
            insert_ops,
            insert_latency_ms: sum_latency(&[adv_latency, insert_latency]),
            maintenance_ops: stats.maintenance_ops,
            compaction_ops: stats.compaction_ops,
            query_ops: evals.iter().map(|e| e.3).sum(),
            query_latency_ms: mean_latency(&lats),
            distance_computations: median(&dcs),
            ..Default::default()
        };
        row.set_recall(s.k, stats.recall);
        rows.push(row);
        months.push(stats);
    }
    Ok((
        StreamRun {
            size: records.len(),
            mode,
            months,
        },
        rows,
    ))
}
