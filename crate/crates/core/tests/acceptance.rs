//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! `cargo test -p stvr-core --test acceptance -- 1 2 3` runs a subset.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stvr::encoding::{
    encode_geo, encode_time, horizon_for_scale, min_distinguishable_distance,
    min_scale_for_resolution, GeoCoordinate, ModalityEmbedding, PrecisionSpec, Schema,
    TemporalScale, TimeEncoding, WeightVector,
};
use stvr::harness::experiments::{
    profile_for, run_ef_sweep_on, run_method_comparison_on, run_weight_ablation_on,
};
use stvr::harness::metrics::csv_string;
use stvr::harness::snapshot::{decode_snapshot, encode_snapshot};
use stvr::harness::{
    generate_dataset, generate_queries, prepare_static, run_alpha_sweep, run_method_comparison,
    run_streaming_ablation, ExperimentConfig, ExperimentOutput, MetricRow, StaticFixture,
    StreamRun, MONTH_SECONDS,
};
use stvr::retrieval::exact_topk;
use stvr::store::{MaintenanceMode, SpatialStore, StoreConfig};
use stvr::window::WindowConfig;

type Verdict = Result<String, String>;

fn within(value: f64, target: f64, rel: f64) -> bool {
    ((value - target) / target).abs() <= rel
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn precision_golden_numbers() -> Verdict {
    let map = |e: stvr::Error| e.to_string();
    let spec = PrecisionSpec::new(1e-6, 14_400.0).map_err(map)?;
    let alpha = min_scale_for_resolution(&spec).map_err(map)?;
    let horizon = horizon_for_scale(alpha);
    let dist = min_distinguishable_distance(&spec);
    let fine = PrecisionSpec::new(1e-15, 1.0).map_err(map)?;
    let fine_days = horizon_for_scale(min_scale_for_resolution(&fine).map_err(map)?) / 86_400.0;
    let fine_m = min_distinguishable_distance(&fine) * 1e3;
    check(
        within(alpha.alpha(), 9.82e-8, 0.01)
            && within(horizon, 3.20e7, 0.01)
            && within(dist, 9.01, 0.01)
            && within(fine_days, 813.0, 0.01)
            && within(fine_m, 0.285, 0.02),
        format!(
            "alpha {:.4e} 1/s, horizon {horizon:.4e} s ({:.1} d), distance {dist:.3} km, \
             eps 1e-15: {fine_days:.1} d and {fine_m:.4} m",
            alpha.alpha(),
            horizon / 86_400.0
        ),
    )
}

/// Central angle by the haversine formula.
fn haversine(a: &GeoCoordinate, b: &GeoCoordinate) -> f64 {
    let h = ((b.lat() - a.lat()) / 2.0).sin().powi(2)
        + a.lat().cos() * b.lat().cos() * ((b.lon() - a.lon()) / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin()
}

fn encoder_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scale = TemporalScale::for_window(MONTH_SECONDS, 6).map_err(|e| e.to_string())?;
    let (mut worst_t, mut worst_g, mut worst_n) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (a, b) = (rng.random_range(0.0..4e7), rng.random_range(0.0..4e7));
        let (ea, eb) = (
            encode_time(a, scale).unwrap(),
            encode_time(b, scale).unwrap(),
        );
        worst_t = worst_t.max((ea.dot(&eb) - (scale.alpha() * (a - b)).cos()).abs());
        let p = GeoCoordinate::new(
            rng.random_range(-PI / 2.0..=PI / 2.0),
            rng.random_range(-PI..PI),
        )
        .unwrap();
        let q = GeoCoordinate::new(
            rng.random_range(-PI / 2.0..=PI / 2.0),
            rng.random_range(-PI..PI),
        )
        .unwrap();
        let (gp, gq) = (encode_geo(&p), encode_geo(&q));
        worst_g = worst_g.max((gp.dot(&gq) - haversine(&p, &q).cos()).abs());
        for n in [ea.dot(&ea), eb.dot(&eb), gp.dot(&gp), gq.dot(&gq)] {
            worst_n = worst_n.max((n.sqrt() - 1.0).abs());
        }
    }
    check(
        worst_t <= 1e-12 && worst_g <= 1e-12 && worst_n <= 1e-12,
        format!("max errors: time {worst_t:.2e}, geo {worst_g:.2e}, norm {worst_n:.2e} over 10000 pairs"),
    )
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn weighted_sum_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [32, 32];
    let schema = Schema::spatiotemporal(&dims).map_err(|e| e.to_string())?;
    let m = schema.modality_count();
    struct Rec {
        content: Vec<Vec<f64>>,
        time: TimeEncoding,
        geo: [f64; 3],
        composite: Vec<f64>,
    }
    let recs: Vec<Rec> = (0..1_000)
        .map(|_| {
            let content: Vec<Vec<f64>> = dims.iter().map(|&d| unit(&mut rng, d)).collect();
            let time = TimeEncoding::from_phase(rng.random_range(0.0..PI));
            let g = GeoCoordinate::from_degrees(
                rng.random_range(29.0..31.0),
                rng.random_range(118.0..121.0),
            )
            .unwrap();
            let blocks: Vec<ModalityEmbedding> = content
                .iter()
                .enumerate()
                .map(|(i, c)| ModalityEmbedding::new(i, c.clone()).unwrap())
                .collect();
            let composite = schema
                .compose_record(&blocks, &time, &encode_geo(&g))
                .unwrap()
                .into_values();
            Rec {
                content,
                time,
                geo: encode_geo(&g).0,
                composite,
            }
        })
        .collect();
    let (mut worst, mut mismatched) = (0.0f64, 0usize);
    for _ in 0..100 {
        let qc: Vec<Vec<f64>> = dims.iter().map(|&d| unit(&mut rng, d)).collect();
        let qt = TimeEncoding::from_phase(rng.random_range(0.0..PI));
        let qg = encode_geo(
            &GeoCoordinate::from_degrees(
                rng.random_range(29.0..31.0),
                rng.random_range(118.0..121.0),
            )
            .unwrap(),
        );
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut cues: Vec<ModalityEmbedding> = qc
            .iter()
            .enumerate()
            .map(|(i, c)| ModalityEmbedding::new(i, c.clone()).unwrap())
            .collect();
        cues.push(qt.into_embedding(2));
        cues.push(qg.into_embedding(3));
        let q = schema
            .compose_query(&cues, &WeightVector::new(w.clone()).unwrap(), false)
            .unwrap();
        let mut single = Vec::with_capacity(recs.len());
        let mut oracle = Vec::with_capacity(recs.len());
        for r in &recs {
            let s = (m as f64).sqrt() * dot(&r.composite, &q);
            let f = w[0] * dot(&r.content[0], &qc[0])
                + w[1] * dot(&r.content[1], &qc[1])
                + w[2] * r.time.dot(&qt)
                + w[3] * dot(&r.geo, &qg.0);
            worst = worst.max((s - f).abs());
            single.push(s);
            oracle.push(f);
        }
        if ranking(&single) != ranking(&oracle) {
            mismatched += 1;
        }
    }
    check(
        worst <= 1e-9 && mismatched == 0,
        format!("max |sqrt(m)<v,q> - sum| = {worst:.2e}; {mismatched}/100 rankings differ from the per-field oracle"),
    )
}

fn stream_run(
    runs: &[StreamRun],
    size: usize,
    mode: MaintenanceMode,
) -> Result<&StreamRun, String> {
    runs.iter()
        .find(|r| r.size == size && r.mode == mode)
        .ok_or_else(|| format!("no {mode:?} run at n={size}"))
}

fn window_rank_equivalence(runs: &[StreamRun]) -> Verdict {
    let run = stream_run(runs, 60_000, MaintenanceMode::Circular)?;
    let queries: usize = run.months.iter().map(|m| m.queries).sum();
    let equal: usize = run.months.iter().map(|m| m.rank_equivalent).sum();
    let stale: usize = runs
        .iter()
        .flat_map(|r| &r.months)
        .map(|m| m.stale_hits)
        .sum();
    let full = run.months.len() == 13 && run.months.iter().all(|m| m.queries == 100);
    check(
        full && equal == queries && stale == 0,
        format!(
            "{equal}/{queries} top-100 sets equal over {} months; {stale} expired ids in results",
            run.months.len()
        ),
    )
}

fn maintenance_cost(runs: &[StreamRun]) -> Verdict {
    let mut ratios = Vec::new();
    let mut problems = Vec::new();
    for size in [10_000, 30_000, 60_000] {
        let circ = stream_run(runs, size, MaintenanceMode::Circular)?;
        let naive = stream_run(runs, size, MaintenanceMode::Naive)?;
        for m in &circ.months {
            if m.maintenance_ops > 2 * m.retired_records {
                problems.push(format!(
                    "circular n={size} month {}: {} ops for {} retired",
                    m.month, m.maintenance_ops, m.retired_records
                ));
            }
        }
        for m in &naive.months {
            if m.maintenance_ops < m.live_at_boundary as u64 {
                problems.push(format!(
                    "naive n={size} month {}: {} ops for {} live",
                    m.month, m.maintenance_ops, m.live_at_boundary
                ));
            }
        }
        ratios.push(
            naive.total_maintenance_ops() as f64 / circ.total_maintenance_ops().max(1) as f64,
        );
    }
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    if !increasing {
        problems.push("naive/circular ratio not increasing".into());
    }
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.0}")).collect();
    check(
        problems.is_empty(),
        format!(
            "naive/circular ops at 10k/30k/60k = {}; {}",
            shown.join(" < "),
            if problems.is_empty() {
                "bounds hold".into()
            } else {
                problems.join("; ")
            }
        ),
    )
}

fn row_metric<'a>(
    out: &'a ExperimentOutput,
    method: &str,
    step: Option<f64>,
) -> Result<&'a MetricRow, String> {
    out.rows
        .iter()
        .find(|r| r.method == method && step.is_none_or(|s| r.step == s))
        .ok_or_else(|| format!("{}: no row for {method}", out.name))
}

fn desk_scale_recall(compare: &ExperimentOutput) -> Verdict {
    let row = row_metric(compare, "spatcode", Some(100.0))?;
    let r = row.recall(10).ok_or("recall@10 missing")?;
    check(
        r >= 0.9,
        format!(
            "mean recall@10 = {r:.4} at ef=100 on {} records",
            row.live_records
        ),
    )
}

fn ef_sweep_direction(sweep: &ExperimentOutput) -> Verdict {
    let lo = row_metric(sweep, "spatcode", Some(10.0))?
        .recall(10)
        .ok_or("recall missing")?;
    let hi = row_metric(sweep, "spatcode", Some(80.0))?
        .recall(10)
        .ok_or("recall missing")?;
    let dcs: Vec<f64> = sweep.rows.iter().map(|r| r.distance_computations).collect();
    let monotone = dcs.windows(2).all(|w| w[1] >= w[0]);
    let shown: Vec<String> = dcs.iter().map(|d| format!("{d:.0}")).collect();
    check(
        hi - lo >= 0.1 && monotone,
        format!(
            "recall@10 {lo:.4} at ef=10, {hi:.4} at ef=80; median dc {}",
            shown.join(", ")
        ),
    )
}

fn alpha_sweep_unimodal(cfg: &ExperimentConfig) -> Verdict {
    let (_, points) = run_alpha_sweep(cfg).map_err(|e| e.to_string())?;
    let recalls: Vec<f64> = points.iter().map(|p| p.recall).collect();
    let best = ranking(&recalls)[0];
    let peak = recalls[best];
    let (first, last) = (recalls[0], recalls[recalls.len() - 1]);
    let shown: Vec<String> = points
        .iter()
        .map(|p| format!("{:.0e}:{:.3}", p.factor, p.recall))
        .collect();
    check(
        points.len() >= 7
            && best > 0
            && best + 1 < points.len()
            && peak - first >= 0.05
            && peak - last >= 0.05,
        format!(
            "recall by scale factor [{}], argmax index {best}",
            shown.join(" ")
        ),
    )
}

fn cost_ordering(compare: &ExperimentOutput, cfg: &ExperimentConfig) -> Verdict {
    let s = row_metric(compare, "spatcode", None)?.distance_computations;
    let h = row_metric(compare, "hybrid", None)?.distance_computations;
    let f = row_metric(compare, "filtered", None)?.distance_computations;
    check(
        s < h && h < f && cfg.queries.filter_time_fraction <= 0.1 && cfg.max_k() == 100,
        format!("median dc at k=100: spatcode {s:.0} < hybrid {h:.0} < filtered {f:.0}"),
    )
}

fn weight_ablation(out: &ExperimentOutput) -> Verdict {
    let w = row_metric(out, "weighted", None)?
        .recall(10)
        .ok_or("recall missing")?;
    let u = row_metric(out, "uniform", None)?
        .recall(10)
        .ok_or("recall missing")?;
    check(
        w > u,
        format!("recall@10 weighted {w:.4} vs uniform {u:.4}"),
    )
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.count = 3_000;
    cfg.queries.count = 20;
    cfg.streaming.sizes = vec![2_000];
    cfg.streaming.queries = 10;
    cfg.streaming.k = 10;
    cfg.output.timing = false;
    cfg
}

fn determinism_and_persistence() -> Verdict {
    let cfg = small_config();
    let run = || -> stvr::Result<(String, String)> {
        let a = run_method_comparison(&cfg)?;
        let b = run_streaming_ablation(&cfg)?.0;
        Ok((
            csv_string(&a.rows)? + &csv_string(&b.rows)?,
            serde_json::to_string(&a.summary)? + &serde_json::to_string(&b.summary)?,
        ))
    };
    let first = run().map_err(|e| e.to_string())?;
    let second = run().map_err(|e| e.to_string())?;
    let identical = first == second;

    // windowed store over the 13-month span, so snapshots carry retired buckets
    let mut data = cfg.data.clone();
    data.span = 13.0 * MONTH_SECONDS;
    let records = generate_dataset(&data, &cfg.schema.content_dims).map_err(|e| e.to_string())?;
    let mut store = SpatialStore::new(StoreConfig {
        content_dims: cfg.schema.content_dims.clone(),
        window: WindowConfig::new(MONTH_SECONDS, 6, data.start).map_err(|e| e.to_string())?,
        ann: cfg.ann.to_ann(data.seed),
        mode: MaintenanceMode::Circular,
    })
    .map_err(|e| e.to_string())?;
    for r in &records {
        store.ingest(r.clone()).map_err(|e| e.to_string())?;
    }
    let back = decode_snapshot(&encode_snapshot(&store)).map_err(|e| e.to_string())?;
    let live: Vec<_> = store
        .live_records()
        .into_iter()
        .map(|s| s.record.clone())
        .collect();
    let specs = generate_queries(&live, &cfg.queries, &data, 50, 11).map_err(|e| e.to_string())?;
    let mut same = 0;
    for q in &specs {
        let p = profile_for(q, &q.weights, 10, 10, false).map_err(|e| e.to_string())?;
        if exact_topk(&store, &p).map_err(|e| e.to_string())?
            == exact_topk(&back, &p).map_err(|e| e.to_string())?
        {
            same += 1;
        }
    }
    check(
        identical && same == specs.len() && back.live_count() == store.live_count(),
        format!(
            "repeat runs {}; snapshot of {} live records: {same}/{} exact top-10 lists identical",
            if identical {
                "byte-identical"
            } else {
                "DIFFER"
            },
            store.live_count(),
            specs.len()
        ),
    )
}

struct Report {
    failed: usize,
}

impl Report {
    fn emit(&mut self, n: usize, name: &str, started: Instant, v: Verdict) {
        let secs = started.elapsed().as_secs_f64();
        match v {
            Ok(d) => println!("PASS {n:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                self.failed += 1;
                println!("FAIL {n:>2} {name}: {d} [{secs:.1}s]");
            }
        }
    }
}

fn main() -> ExitCode {
    let picked: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: usize| picked.is_empty() || picked.contains(&n);
    let mut report = Report { failed: 0 };
    let cfg = ExperimentConfig::default();

    let t = Instant::now();
    if want(1) {
        report.emit(1, "precision golden numbers", t, precision_golden_numbers());
    }
    let t = Instant::now();
    if want(2) {
        report.emit(2, "encoder identities", t, encoder_identities());
    }
    let t = Instant::now();
    if want(3) {
        report.emit(3, "weighted-sum identity", t, weighted_sum_identity());
    }

    if want(4) || want(5) {
        let t = Instant::now();
        match run_streaming_ablation(&cfg) {
            Ok((_, runs)) => {
                if want(4) {
                    report.emit(
                        4,
                        "window rank equivalence",
                        t,
                        window_rank_equivalence(&runs),
                    );
                }
                if want(5) {
                    report.emit(5, "maintenance cost", t, maintenance_cost(&runs));
                }
            }
            Err(e) => {
                for (n, name) in [(4, "window rank equivalence"), (5, "maintenance cost")] {
                    if want(n) {
                        report.emit(n, name, t, Err(e.to_string()));
                    }
                }
            }
        }
    }

    if want(6) || want(7) || want(9) || want(10) {
        let t = Instant::now();
        let fixture: Result<StaticFixture, String> =
            prepare_static(&cfg).map_err(|e| e.to_string());
        let compare = fixture.as_ref().map_err(Clone::clone).and_then(|fx| {
            if want(6) || want(9) {
                run_method_comparison_on(fx, &cfg)
                    .map(Some)
                    .map_err(|e| e.to_string())
            } else {
                Ok(None)
            }
        });
        if want(6) {
            let v = compare
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|c| desk_scale_recall(c.as_ref().expect("computed")));
            report.emit(6, "recall at desk scale", t, v);
        }
        if want(7) {
            let t = Instant::now();
            let v = fixture
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|fx| run_ef_sweep_on(fx, &cfg).map_err(|e| e.to_string()))
                .and_then(|s| ef_sweep_direction(&s));
            report.emit(7, "ef sweep direction", t, v);
        }
        if want(9) {
            let v = compare
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|c| cost_ordering(c.as_ref().expect("computed"), &cfg));
            report.emit(9, "cost ordering", t, v);
        }
        if want(10) {
            let t = Instant::now();
            let v = fixture
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|fx| run_weight_ablation_on(fx, &cfg).map_err(|e| e.to_string()))
                .and_then(|o| weight_ablation(&o));
            report.emit(10, "weight ablation", t, v);
        }
    }

    let t = Instant::now();
    if want(8) {
        report.emit(8, "scale sweep unimodality", t, alpha_sweep_unimodal(&cfg));
    }
    let t = Instant::now();
    if want(11) {
        report.emit(
            11,
            "determinism and persistence",
            t,
            determinism_and_persistence(),
        );
    }

    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}
