use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stvr_core::ann::AnnConfig;
use stvr_core::encoding::{
    self, GeoCoordinate, ModalityEmbedding, PrecisionSpec, TemporalScale, WeightVector,
};
use stvr_core::harness;
use stvr_core::retrieval::{self, QueryProfile, ScoredResult};
use stvr_core::store::{MaintenanceMode, MaintenanceReport, SpatialStore, StoreConfig};
use stvr_core::window::{Placement, WindowConfig};
use stvr_core::{Error, SpatRecord};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn scale(alpha: f64) -> PyResult<TemporalScale> {
    TemporalScale::new(alpha).map_err(py_err)
}

/// `(cos(alpha t), sin(alpha t))`.
#[pyfunction]
fn encode_time(t: f64, alpha: f64) -> PyResult<(f64, f64)> {
    let e = encoding::encode_time(t, scale(alpha)?).map_err(py_err)?;
    Ok((e.0[0], e.0[1]))
}

/// Unit-sphere embedding of a point given in degrees.
#[pyfunction]
fn encode_geo(lat_deg: f64, lon_deg: f64) -> PyResult<(f64, f64, f64)> {
    let g = GeoCoordinate::from_degrees(lat_deg, lon_deg).map_err(py_err)?;
    let e = encoding::encode_geo(&g);
    Ok((e.0[0], e.0[1], e.0[2]))
}

#[pyfunction]
fn time_similarity(a: f64, b: f64, alpha: f64) -> PyResult<f64> {
    encoding::time_similarity(a, b, scale(alpha)?).map_err(py_err)
}

#[pyfunction]
fn geo_similarity(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    let a = GeoCoordinate::from_degrees(a.0, a.1).map_err(py_err)?;
    let b = GeoCoordinate::from_degrees(b.0, b.1).map_err(py_err)?;
    Ok(encoding::geo_similarity(&a, &b))
}

#[pyfunction]
fn min_scale_for_resolution(eps_cos: f64, dt_min: f64) -> PyResult<f64> {
    let spec = PrecisionSpec::new(eps_cos, dt_min).map_err(py_err)?;
    Ok(encoding::min_scale_for_resolution(&spec)
        .map_err(py_err)?
        .alpha())
}

#[pyfunction]
fn horizon_for_scale(alpha: f64) -> PyResult<f64> {
    Ok(encoding::horizon_for_scale(scale(alpha)?))
}

/// Smallest resolvable great-circle distance in kilometers.
#[pyfunction]
#[pyo3(signature = (eps_cos, earth_radius_km = encoding::EARTH_RADIUS_KM))]
fn min_distinguishable_distance(eps_cos: f64, earth_radius_km: f64) -> PyResult<f64> {
    let spec = PrecisionSpec::with_radius(eps_cos, 1.0, earth_radius_km).map_err(py_err)?;
    Ok(encoding::min_distinguishable_distance(&spec))
}

#[pyfunction]
fn recall_at_k(retrieved: Vec<u64>, truth: Vec<u64>, k: usize) -> PyResult<f64> {
    retrieval::recall_at_k(&retrieved, &truth, k).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &MaintenanceReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("boundaries_crossed", r.boundaries_crossed)?;
    d.set_item("retired_buckets", r.retired_buckets)?;
    d.set_item("retired_records", r.retired_records)?;
    d.set_item("tombstones_marked", r.tombstones_marked)?;
    d.set_item("reencoded", r.reencoded)?;
    d.set_item("maintenance_ops", r.maintenance_ops())?;
    d.set_item("compaction_ops", r.compaction_ops())?;
    Ok(d)
}

fn results(rs: Vec<ScoredResult>) -> Vec<(u64, f64)> {
    rs.into_iter().map(|r| (r.record_id, r.score)).collect()
}

/// Sliding-window spatiotemporal store backed by one HNSW graph.
#[pyclass(name = "SpatialStore", module = "stvr")]
struct PyStore {
    inner: SpatialStore,
}

impl PyStore {
    #[allow(clippy::too_many_arguments)]
    fn profile(
        &self,
        content: Vec<Vec<f64>>,
        time: f64,
        location: (f64, f64),
        weights: Vec<f64>,
        k: usize,
        ef_search: Option<usize>,
        normalize: bool,
    ) -> PyResult<QueryProfile> {
        let content_cues = content
            .into_iter()
            .enumerate()
            .map(|(i, c)| ModalityEmbedding::normalized(i, c))
            .collect::<stvr_core::Result<Vec<_>>>()
            .map_err(py_err)?;
        Ok(QueryProfile {
            content_cues,
            time_cue: time,
            location_cue: GeoCoordinate::from_degrees(location.0, location.1).map_err(py_err)?,
            weights: WeightVector::new(weights).map_err(py_err)?,
            k,
            ef_search: ef_search
                .unwrap_or(self.inner.config().ann.default_ef_search)
                .max(k),
            normalize,
            field_scores: false,
        })
    }
}

#[pymethods]
impl PyStore {
    #[new]
    #[pyo3(signature = (content_dims, tau, buckets, t0 = 0.0, mode = "circular", max_neighbors = 16, ef_construction = 200, ef_search = 100, seed = 0x5eed))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        content_dims: Vec<usize>,
        tau: f64,
        buckets: usize,
        t0: f64,
        mode: &str,
        max_neighbors: usize,
        ef_construction: usize,
        ef_search: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let mode = match mode {
            "circular" => MaintenanceMode::Circular,
            "naive" => MaintenanceMode::Naive,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        };
        let mut ann = AnnConfig::new(0);
        ann.max_neighbors = max_neighbors;
        ann.ef_construction = ef_construction;
        ann.default_ef_search = ef_search;
        ann.seed = seed;
        let inner = SpatialStore::new(StoreConfig {
            content_dims,
            window: WindowConfig::new(tau, buckets, t0).map_err(py_err)?,
            ann,
            mode,
        })
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Adds one record. Returns the bucket index, or `None` if it arrived expired.
    fn ingest(
        &mut self,
        id: u64,
        content: Vec<Vec<f64>>,
        timestamp: f64,
        lat_deg: f64,
        lon_deg: f64,
    ) -> PyResult<Option<usize>> {
        let record = SpatRecord {
            id,
            content,
            timestamp,
            location: GeoCoordinate::from_degrees(lat_deg, lon_deg).map_err(py_err)?,
        };
        Ok(match self.inner.ingest(record).map_err(py_err)?.placement {
            Placement::Bucket(b) => Some(b),
            Placement::Expired => None,
        })
    }

    /// Moves the window to `now` and returns the maintenance counters.
    fn advance<'py>(&mut self, py: Python<'py>, now: f64) -> PyResult<Bound<'py, PyDict>> {
        let (report, _) = self.inner.advance(now).map_err(py_err)?;
        report_dict(py, &report)
    }

    #[pyo3(signature = (content, time, location, weights, k = 10, ef_search = None, normalize = false))]
    #[allow(clippy::too_many_arguments)]
    fn query(
        &self,
        content: Vec<Vec<f64>>,
        time: f64,
        location: (f64, f64),
        weights: Vec<f64>,
        k: usize,
        ef_search: Option<usize>,
        normalize: bool,
    ) -> PyResult<Vec<(u64, f64)>> {
        let p = self.profile(content, time, location, weights, k, ef_search, normalize)?;
        Ok(results(
            retrieval::query(&self.inner, &p).map_err(py_err)?.results,
        ))
    }

    /// Brute-force ranking over the live records.
    #[pyo3(signature = (content, time, location, weights, k = 10, normalize = false))]
    fn exact_topk(
        &self,
        content: Vec<Vec<f64>>,
        time: f64,
        location: (f64, f64),
        weights: Vec<f64>,
        k: usize,
        normalize: bool,
    ) -> PyResult<Vec<(u64, f64)>> {
        let p = self.profile(content, time, location, weights, k, Some(k), normalize)?;
        Ok(results(
            retrieval::exact_topk(&self.inner, &p).map_err(py_err)?,
        ))
    }

    fn live_count(&self) -> usize {
        self.inner.live_count()
    }

    fn live_ids(&self) -> Vec<u64> {
        self.inner
            .live_records()
            .iter()
            .map(|s| s.record.id)
            .collect()
    }

    fn window_start(&self) -> f64 {
        self.inner.window().window_start()
    }

    fn window_end(&self) -> f64 {
        self.inner.window().window_end()
    }

    fn shift_step(&self) -> u64 {
        self.inner.window().shift_step()
    }

    fn snapshot(&self, path: PathBuf) -> PyResult<()> {
        harness::snapshot(&self.inner, &path).map_err(py_err)
    }

    #[staticmethod]
    fn restore(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: harness::restore(&path).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.live_count()
    }

    fn __repr__(&self) -> String {
        let w = self.inner.window();
        format!(
            "SpatialStore(live={}, window=[{}, {}), mode={:?})",
            self.inner.live_count(),
            w.window_start(),
            w.window_end(),
            self.inner.mode()
        )
    }
}

#[pymodule]
fn stvr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStore>()?;
    m.add_function(wrap_pyfunction!(encode_time, m)?)?;
    m.add_function(wrap_pyfunction!(encode_geo, m)?)?;
    m.add_function(wrap_pyfunction!(time_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(geo_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(min_scale_for_resolution, m)?)?;
    m.add_function(wrap_pyfunction!(horizon_for_scale, m)?)?;
    m.add_function(wrap_pyfunction!(min_distinguishable_distance, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    Ok(())
}
