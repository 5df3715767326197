//! Python bindings for the dual-band simulator.

use std::path::PathBuf;

use ::dualband as db;

use ::dualband::experiment::{self, ExperimentSpec};
use ::dualband::metrics::fraction_favoring_868;
use ::dualband::rng::derive_stream;
use ::dualband::topology::{generate_linear, generate_random, DEFAULT_RESAMPLE_BUDGET};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: db::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn band_id(name: &str) -> PyResult<db::BandId> {
    db::BandId::from_tag(name).ok_or_else(|| PyValueError::new_err(format!("unknown band {name:?}")))
}

/// Radio parameters of one band. Construct with `"2.4GHz"` or `"868MHz"`.
#[pyclass(module = "dualband", from_py_object)]
#[derive(Clone)]
struct BandConfig {
    inner: db::BandConfig,
}

#[pymethods]
impl BandConfig {
    #[new]
    fn new(band: &str) -> PyResult<Self> {
        Ok(BandConfig { inner: db::BandConfig::reference(band_id(band)?) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: db::BandConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        db::validate_band_config(&inner, false).map_err(py_err)?;
        Ok(BandConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("band config serializes")
    }

    #[getter]
    fn band(&self) -> &'static str {
        self.inner.band_id.tag()
    }

    #[getter]
    fn channel_count(&self) -> u32 {
        self.inner.channel_count
    }

    #[getter]
    fn bitrate_bps(&self) -> u32 {
        self.inner.bitrate_bps
    }

    #[getter]
    fn slot_duration_us(&self) -> u64 {
        self.inner.slot_duration.as_micros()
    }

    #[getter]
    fn radio_sensitivity_dbm(&self) -> f64 {
        self.inner.radio_sensitivity_dbm
    }

    fn __repr__(&self) -> String {
        format!(
            "BandConfig({}, channels={}, slot={}us)",
            self.inner.band_id.tag(),
            self.inner.channel_count,
            self.inner.slot_duration.as_micros()
        )
    }
}

/// Traffic and timing; durations are seconds.
#[pyclass(module = "dualband", from_py_object)]
#[derive(Clone)]
struct AppConfig {
    inner: db::AppConfig,
}

#[pymethods]
impl AppConfig {
    #[new]
    #[pyo3(signature = (message_interval=10.0, max_retransmissions=3, setup_time=5400.0, duration=7200.0, seed=None))]
    fn new(
        message_interval: f64,
        max_retransmissions: u32,
        setup_time: f64,
        duration: f64,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let defaults = db::AppConfig::default();
        let inner = db::AppConfig {
            message_interval,
            max_retransmissions,
            setup_time,
            duration,
            seed: seed.unwrap_or(defaults.seed),
            ..defaults
        };
        inner.validate().map_err(py_err)?;
        Ok(AppConfig { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn message_interval(&self) -> f64 {
        self.inner.message_interval
    }

    #[getter]
    fn setup_time(&self) -> f64 {
        self.inner.setup_time
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }
}

/// Node placement; node 0 is the root.
#[pyclass(module = "dualband", from_py_object)]
#[derive(Clone)]
struct Topology {
    inner: db::Topology,
}

#[pymethods]
impl Topology {
    #[staticmethod]
    #[pyo3(signature = (nodes, side_length=100.0))]
    fn linear(nodes: usize, side_length: f64) -> PyResult<Self> {
        Ok(Topology { inner: generate_linear(nodes, side_length).map_err(py_err)? })
    }

    /// Random placement where every node hears some other node above
    /// `connect_threshold_dbm` at 2.4 GHz.
    #[staticmethod]
    #[pyo3(signature = (nodes, seed, side_length=100.0, connect_threshold_dbm=-97.0))]
    fn random(nodes: usize, seed: u64, side_length: f64, connect_threshold_dbm: f64) -> PyResult<Self> {
        let inner = generate_random(
            nodes,
            side_length,
            &mut derive_stream(seed, "topology"),
            &db::BandConfig::reference_24ghz(),
            connect_threshold_dbm,
            DEFAULT_RESAMPLE_BUDGET,
        )
        .map_err(py_err)?;
        Ok(Topology { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Topology { inner: db::Topology::parse(text).map_err(py_err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn positions(&self) -> Vec<(f64, f64)> {
        self.inner.positions.iter().map(|p| (p.x, p.y)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Per-packet record of one band's run.
#[pyclass(module = "dualband", from_py_object)]
#[derive(Clone)]
struct RunTrace {
    inner: db::RunTrace,
}

#[pymethods]
impl RunTrace {
    #[getter]
    fn band(&self) -> &'static str {
        self.inner.band.tag()
    }

    #[getter]
    fn generated(&self) -> usize {
        self.inner.generated()
    }

    #[getter]
    fn delivered(&self) -> usize {
        self.inner.delivered().count()
    }

    fn pdr(&self) -> PyResult<f64> {
        db::band_pdr(&self.inner).map_err(py_err)
    }

    /// Mean end-to-end latency in seconds, `None` when nothing arrived.
    fn mean_latency(&self) -> Option<f64> {
        db::band_latency(&self.inner).map(|l| l.mean_s)
    }

    /// `(total retries, mean retries per non-root node)`.
    fn retries(&self) -> (u64, f64) {
        db::retry_statistics(&self.inner)
    }

    /// Hop count of a delivered packet.
    fn hop_count(&self, source: u32, sequence: u32) -> PyResult<u32> {
        let packet = db::PacketId { source, sequence };
        db::hop_count(&self.inner, packet).map_err(py_err)
    }

    /// `(generated, delivered, queue, retry, not_joined, in_flight)`.
    fn conservation(&self) -> (u64, u64, u64, u64, u64, u64) {
        let c = self.inner.conservation();
        (c.generated, c.delivered, c.queue_dropped, c.retry_dropped, c.not_joined, c.in_flight)
    }

    fn to_text(&self) -> String {
        self.inner.to_text(None)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(RunTrace { inner: db::RunTrace::from_json(text).map_err(py_err)? })
    }
}

/// Per-band and first-arrival metrics of a run pair.
#[pyclass(module = "dualband", from_py_object)]
#[derive(Clone)]
struct MetricsReport {
    inner: db::MetricsReport,
}

#[pymethods]
impl MetricsReport {
    /// Series are `"2.4GHz"` (or `"24ghz"`), `"868MHz"` (or `"868mhz"`) and `"combined"`.
    fn pdr(&self, series: &str) -> PyResult<f64> {
        self.series(series).map(|b| b.pdr)
    }

    fn mean_latency(&self, series: &str) -> PyResult<Option<f64>> {
        self.series(series).map(|b| b.mean_latency_s)
    }

    fn total_retries(&self, series: &str) -> PyResult<u64> {
        self.series(series).map(|b| b.total_retries)
    }

    fn mean_hops(&self, series: &str) -> PyResult<Option<f64>> {
        self.series(series).map(|b| b.mean_hops)
    }

    /// Node id to the band with the lower mean latency (`None` for ties or
    /// nodes with no delivered packet on a band).
    fn winning_bands(&self) -> Vec<(u32, Option<&'static str>)> {
        self.inner.nodes.iter().map(|n| (n.node, n.winning_band.map(|b| b.tag()))).collect()
    }

    fn fraction_favoring_868(&self) -> Option<f64> {
        fraction_favoring_868(&self.inner.nodes)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }
}

impl MetricsReport {
    fn series(&self, name: &str) -> PyResult<&db::metrics::BandMetrics> {
        self.inner.band(name).ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }
}

/// Simulates one band over `topology`. The GIL is released while running.
#[pyfunction]
#[pyo3(signature = (topology, band, app, per_link=false))]
fn run_band(
    py: Python<'_>,
    topology: &Topology,
    band: &BandConfig,
    app: &AppConfig,
    per_link: bool,
) -> PyResult<RunTrace> {
    let mut config = db::RunConfig::new(topology.inner.clone(), band.inner.clone(), app.inner.clone());
    if per_link {
        config.link_variation = db::propagation::LinkVariation::PerLink;
    }
    let inner = py.detach(|| db::run_band(&config)).map_err(py_err)?;
    Ok(RunTrace { inner })
}

/// First-arrival combination of a 2.4 GHz and an 868 MHz trace.
#[pyfunction]
fn combine(trace24: &RunTrace, trace868: &RunTrace) -> PyResult<MetricsReport> {
    let (_, inner) = db::combine(&trace24.inner, &trace868.inner).map_err(py_err)?;
    Ok(MetricsReport { inner })
}

/// `(case name, seed, metrics)`.
type CaseRow = (String, u64, MetricsReport);

/// Runs an experiment described by a JSON document (`"quick"` selects the
/// quick preset). Writes result files when `out` is given. Returns the spec
/// hash and a list of `(case, seed, MetricsReport)`.
#[pyfunction]
#[pyo3(signature = (spec, out=None, workers=None))]
fn run_experiment(
    py: Python<'_>,
    spec: &str,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<(String, Vec<CaseRow>)> {
    let mut spec =
        if spec == "quick" { ExperimentSpec::quick() } else { ExperimentSpec::from_json(spec).map_err(py_err)? };
    if workers.is_some() {
        spec.workers = workers;
    }
    let result = py.detach(|| -> db::Result<_> {
        let r = experiment::run_experiment(&spec)?;
        if let Some(dir) = &out {
            experiment::write_outputs(&r, dir)?;
        }
        Ok(r)
    });
    let result = result.map_err(py_err)?;
    if let Some((case, err)) = result.failures.first() {
        return Err(PyValueError::new_err(format!("{} seed {} failed: {err}", case.name(), case.seed)));
    }
    let mut rows: Vec<_> = result.results.into_iter().map(|r| (r.case, MetricsReport { inner: r.report })).collect();
    rows.sort_by_key(|(c, _)| *c);
    Ok((result.spec_hash, rows.into_iter().map(|(c, m)| (c.name(), c.seed, m)).collect()))
}

#[pymodule]
fn dualband(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<BandConfig>()?;
    m.add_class::<AppConfig>()?;
    m.add_class::<Topology>()?;
    m.add_class::<RunTrace>()?;
    m.add_class::<MetricsReport>()?;
    m.add_function(wrap_pyfunction!(run_band, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("REFERENCE_SEED", db::model::REFERENCE_SEED)?;
    Ok(())
}
