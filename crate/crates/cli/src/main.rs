use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use stvr::harness::experiments::profile_for;
use stvr::harness::{
    generate_dataset, generate_queries, restore, run_alpha_sweep, run_ef_sweep,
    run_method_comparison, run_streaming_ablation, run_weight_ablation, snapshot, ExperimentConfig,
    ExperimentOutput, Method,
};
use stvr::retrieval::exact_topk;
use stvr::store::{MaintenanceMode, SpatialStore, StoreConfig};

#[derive(Parser)]
#[command(
    name = "stvr",
    version,
    about = "Spatiotemporal vector retrieval benchmarks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply for anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides data.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restricts `compare` to one method: spatcode, filtered or hybrid.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Leave latency columns empty so metric files are byte-identical per seed.
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic dataset as CSV.
    Generate,
    /// Circular vs naive window maintenance over a monthly stream.
    StreamAblation,
    /// Recall and cost against ef_search.
    EfSweep,
    /// Recall of single-precision time encodings against the temporal scale.
    AlphaSweep,
    /// Query-matched weights versus uniform weights.
    WeightAblation,
    /// Composite index versus filtered and hybrid search.
    Compare,
    /// Ingest the dataset into a windowed store and save it.
    Snapshot,
    /// Load a snapshot and report its state.
    Restore { path: PathBuf },
}

fn load_config(c: &Common) -> stvr::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.data.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(m) = &c.method {
        cfg.method = Some(m.parse::<Method>()?);
    }
    if c.no_timing {
        cfg.output.timing = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: &ExperimentOutput, dir: &Path) -> stvr::Result<()> {
    let (csv, js) = out.write(dir)?;
    println!("wrote {} and {}", csv.display(), js.display());
    Ok(())
}

fn write_dataset(cfg: &ExperimentConfig) -> stvr::Result<PathBuf> {
    let records = generate_dataset(&cfg.data, &cfg.schema.content_dims)?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    let path = cfg.output.dir.join("dataset.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec![
        "id".to_string(),
        "timestamp".into(),
        "lat_deg".into(),
        "lon_deg".into(),
    ];
    header.extend((0..cfg.schema.content_dims.len()).map(|i| format!("content_{i}")));
    w.write_record(&header)?;
    for r in &records {
        let mut row = vec![
            r.id.to_string(),
            r.timestamp.to_string(),
            r.location.lat().to_degrees().to_string(),
            r.location.lon().to_degrees().to_string(),
        ];
        row.extend(r.content.iter().map(|c| {
            c.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(path)
}

fn build_store(cfg: &ExperimentConfig) -> stvr::Result<SpatialStore> {
    let mut store = SpatialStore::new(StoreConfig {
        content_dims: cfg.schema.content_dims.clone(),
        window: cfg.window.to_window()?,
        ann: cfg.ann.to_ann(cfg.data.seed),
        mode: MaintenanceMode::Circular,
    })?;
    for r in generate_dataset(&cfg.data, &cfg.schema.content_dims)? {
        store.ingest(r)?;
    }
    Ok(store)
}

fn describe(store: &SpatialStore) -> serde_json::Value {
    let w = store.window();
    json!({
        "live_records": store.live_count(),
        "index_size": store.index().len(),
        "shift_step": w.shift_step(),
        "window_start": w.window_start(),
        "window_end": w.window_end(),
        "buckets": w.buckets().iter().map(|b| json!({
            "bucket_index": b.bucket_index,
            "interval": b.interval,
            "records": b.record_ids.len(),
        })).collect::<Vec<_>>(),
    })
}

fn run(cli: Cli) -> stvr::Result<()> {
    let cfg = load_config(&cli.common)?;
    let dir = cfg.output.dir.clone();
    match cli.cmd {
        Cmd::Generate => println!("wrote {}", write_dataset(&cfg)?.display()),
        Cmd::StreamAblation => emit(&run_streaming_ablation(&cfg)?.0, &dir)?,
        Cmd::EfSweep => emit(&run_ef_sweep(&cfg)?, &dir)?,
        Cmd::AlphaSweep => emit(&run_alpha_sweep(&cfg)?.0, &dir)?,
        Cmd::WeightAblation => emit(&run_weight_ablation(&cfg)?, &dir)?,
        Cmd::Compare => emit(&run_method_comparison(&cfg)?, &dir)?,
        Cmd::Snapshot => {
            let store = build_store(&cfg)?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("store.snap");
            snapshot(&store, &path)?;
            println!("wrote {}", path.display());
            println!("{}", serde_json::to_string_pretty(&describe(&store))?);
        }
        Cmd::Restore { path } => {
            let store = restore(&path)?;
            let mut report = describe(&store);
            let live: Vec<_> = store
                .live_records()
                .into_iter()
                .map(|s| s.record.clone())
                .collect();
            let k = 10.min(live.len());
            if k > 0 {
                let q = &generate_queries(&live, &cfg.queries, &cfg.data, 1, cfg.data.seed)?[0];
                let p = profile_for(q, &q.weights, k, k, false)?;
                let top: Vec<_> = exact_topk(&store, &p)?
                    .iter()
                    .map(|r| json!({"record_id": r.record_id, "score": r.score}))
                    .collect();
                report["sample_exact_top"] = json!(top);
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
