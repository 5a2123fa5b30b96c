//! Python bindings: MI estimation, architectures and the training harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use infoplane::harness::{self, MiEndpoint};
use infoplane::mi::{self, Ensemble, KnnBackend};
use infoplane::mnist;
use infoplane::nn::{capture, Mode};
use infoplane::numerics::{self, Matrix, SeededRng};
use infoplane::optim::initialize;
use infoplane::topology::{self, Architecture, ArchitectureKind, ArchitectureSpec};
use infoplane::Error;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Divergence(_) => PyArithmeticError::new_err(msg),
        Error::Csv(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &Matrix) -> Rows {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

#[pyclass(frozen, get_all, skip_from_py_object, module = "infoplane")]
#[derive(Clone)]
struct MiEstimate {
    nats: f64,
    bits: f64,
    k: usize,
    n: usize,
}

#[pymethods]
impl MiEstimate {
    fn __repr__(&self) -> String {
        format!("MiEstimate(nats={}, bits={}, k={}, n={})", self.nats, self.bits, self.k, self.n)
    }
}

/// KSG (estimator 1) mutual information between two ensembles with one sample per row.
#[pyfunction]
#[pyo3(signature = (x, y, k = 3, backend = "brute-force"))]
fn ksg_mi(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, k: usize, backend: &str) -> PyResult<MiEstimate> {
    let backend = match backend {
        "brute-force" => KnnBackend::BruteForce,
        "kd-tree" => KnnBackend::KdTree,
        other => return Err(PyValueError::new_err(format!("unknown backend {other:?}"))),
    };
    let x = Ensemble::new(to_matrix(x)?).map_err(py_err)?;
    let y = Ensemble::new(to_matrix(y)?).map_err(py_err)?;
    let e = mi::ksg_mi_with(&x, &y, k, backend).map_err(py_err)?;
    Ok(MiEstimate {
        nats: e.nats,
        bits: e.bits,
        k: e.k,
        n: e.n,
    })
}

#[pyfunction]
fn digamma(x: f64) -> PyResult<f64> {
    numerics::digamma(x).map_err(py_err)
}

/// `log2` of the state-space reduction factor `2^(n_layers · mi_bits)`.
#[pyfunction]
fn reduction_log2_factor(mi_bits: f64, n_layers: usize) -> PyResult<f64> {
    Ok(mi::reduction_report(mi_bits, n_layers).map_err(py_err)?.log2_factor)
}

#[pyfunction]
#[pyo3(signature = (architecture, width, depth, input_width = 784, classes = 10))]
fn parameter_count(architecture: &str, width: usize, depth: usize, input_width: usize, classes: usize) -> PyResult<usize> {
    let spec = ArchitectureSpec {
        kind: parse(architecture)?,
        width,
        depth,
        input_width,
        classes,
    };
    topology::parameter_count(&spec).map_err(py_err)
}

/// A freshly initialized network, evaluated with batch-norm running statistics.
#[pyclass(module = "infoplane")]
struct Network {
    architecture: Architecture,
    params: infoplane::nn::ParameterStore,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (architecture, width, depth, seed = 0, input_width = 784, classes = 10))]
    fn new(architecture: &str, width: usize, depth: usize, seed: u64, input_width: usize, classes: usize) -> PyResult<Self> {
        let spec = ArchitectureSpec {
            kind: parse(architecture)?,
            width,
            depth,
            input_width,
            classes,
        };
        let architecture = topology::build(&spec).map_err(py_err)?;
        let params = initialize(&architecture.topology, &mut SeededRng::new(seed).substream(1)).map_err(py_err)?;
        Ok(Self { architecture, params })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    fn logits(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_matrix(x)?;
        let (logits, _) = infoplane::nn::forward(&self.architecture.topology, &self.params, &x, Mode::Eval).map_err(py_err)?;
        Ok(to_rows(&logits))
    }

    /// Activations of the first hidden layer and of the MI endpoint
    /// (`"softmax-input"` or `"last-hidden"`).
    #[pyo3(signature = (x, endpoint = "softmax-input"))]
    fn mi_activations(&self, x: Vec<Vec<f64>>, endpoint: &str) -> PyResult<(Rows, Rows)> {
        let endpoint: MiEndpoint = parse(endpoint)?;
        let (first, last) = harness::mi_nodes(&self.architecture, endpoint);
        let x = to_matrix(x)?;
        let out = capture(&self.architecture.topology, &self.params, &x, &[first, last]).map_err(py_err)?;
        Ok((to_rows(&out[0]), to_rows(&out[1])))
    }
}

#[pyclass(frozen, get_all, skip_from_py_object, module = "infoplane")]
#[derive(Clone)]
struct TrajectoryRecord {
    epoch: usize,
    train_loss: f64,
    test_error: f64,
    mi_nats: f64,
    mi_bits: f64,
    wall_ms: u64,
}

impl From<&harness::TrajectoryRecord> for TrajectoryRecord {
    fn from(r: &harness::TrajectoryRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            test_error: r.test_error,
            mi_nats: r.mi_nats,
            mi_bits: r.mi_bits,
            wall_ms: r.wall_ms,
        }
    }
}

#[pymethods]
impl TrajectoryRecord {
    fn __repr__(&self) -> String {
        format!(
            "TrajectoryRecord(epoch={}, train_loss={}, test_error={}, mi_bits={})",
            self.epoch, self.train_loss, self.test_error, self.mi_bits
        )
    }
}

#[pyclass(frozen, get_all, module = "infoplane")]
struct Trajectory {
    records: Vec<TrajectoryRecord>,
    diverged: bool,
    optimizer_steps: u64,
}

/// Run configuration; every field is optional and defaults like the CLI.
#[pyclass(get_all, set_all, skip_from_py_object, module = "infoplane")]
#[derive(Clone)]
struct ExperimentConfig {
    architecture: String,
    width: usize,
    depth: usize,
    epochs: usize,
    seed: u64,
    learning_rate: f64,
    rho: f64,
    rmsprop_eps: f64,
    bn_eps: f64,
    bn_momentum: f64,
    k: usize,
    mi_subsample: usize,
    jitter_amplitude: f64,
    mi_endpoint: String,
    data_dir: PathBuf,
    out: PathBuf,
    timing: bool,
}

impl ExperimentConfig {
    fn to_core(&self) -> PyResult<harness::ExperimentConfig> {
        let kind: ArchitectureKind = parse(&self.architecture)?;
        Ok(harness::ExperimentConfig {
            architecture: kind,
            width: self.width,
            depth: self.depth,
            epochs: self.epochs,
            seed: self.seed,
            learning_rate: self.learning_rate,
            rho: self.rho,
            rmsprop_eps: self.rmsprop_eps,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            k: self.k,
            mi_subsample: self.mi_subsample,
            jitter_amplitude: self.jitter_amplitude,
            mi_endpoint: parse(&self.mi_endpoint)?,
            data_dir: self.data_dir.clone(),
            out: self.out.clone(),
            timing: self.timing,
        })
    }

    fn from_core(c: &harness::ExperimentConfig) -> Self {
        Self {
            architecture: c.architecture.to_string(),
            width: c.width,
            depth: c.depth,
            epochs: c.epochs,
            seed: c.seed,
            learning_rate: c.learning_rate,
            rho: c.rho,
            rmsprop_eps: c.rmsprop_eps,
            bn_eps: c.bn_eps,
            bn_momentum: c.bn_momentum,
            k: c.k,
            mi_subsample: c.mi_subsample,
            jitter_amplitude: c.jitter_amplitude,
            mi_endpoint: c.mi_endpoint.to_string(),
            data_dir: c.data_dir.clone(),
            out: c.out.clone(),
            timing: c.timing,
        }
    }
}

#[pymethods]
impl ExperimentConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let obj = Self::from_core(&harness::ExperimentConfig::default());
        let Some(kwargs) = kwargs else { return Ok(obj) };
        let py = kwargs.py();
        let cell = Bound::new(py, obj)?;
        for (key, value) in kwargs.iter() {
            let name: String = key.extract()?;
            if !cell.hasattr(name.as_str())? || name.starts_with('_') {
                return Err(PyValueError::new_err(format!("unknown config field {name:?}")));
            }
            cell.setattr(name.as_str(), value)?;
        }
        let out = cell.borrow().clone();
        Ok(out)
    }

    fn validate(&self) -> PyResult<()> {
        self.to_core()?.validate().map_err(py_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.to_core()?.to_toml().map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self::from_core(&harness::ExperimentConfig::from_toml(text).map_err(py_err)?))
    }

    /// Content hash of everything except the data and output paths.
    fn hash(&self) -> PyResult<String> {
        Ok(self.to_core()?.hash())
    }

    fn run_name(&self) -> PyResult<String> {
        Ok(self.to_core()?.run_name())
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(architecture={:?}, width={}, depth={}, epochs={}, seed={})",
            self.architecture, self.width, self.depth, self.epochs, self.seed
        )
    }
}

/// Trains one network on the MNIST files in `config.data_dir`. The GIL is
/// released while training.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &ExperimentConfig) -> PyResult<Trajectory> {
    let core = config.to_core()?;
    let t = py.detach(|| harness::run_experiment(&core)).map_err(py_err)?;
    Ok(Trajectory {
        records: t.records.iter().map(TrajectoryRecord::from).collect(),
        diverged: t.diverged,
        optimizer_steps: t.optimizer_steps,
    })
}

#[pyfunction]
fn read_csv(path: PathBuf) -> PyResult<Vec<TrajectoryRecord>> {
    Ok(harness::read_csv(&path).map_err(py_err)?.iter().map(TrajectoryRecord::from).collect())
}

/// Writes an information-plane SVG for the trajectories in `csv_paths`.
#[pyfunction]
fn plot(csv_paths: Vec<PathBuf>, out: PathBuf) -> PyResult<()> {
    let runs = csv_paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            harness::read_csv(p).map(|r| (name, r))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    harness::emit_svg_infoplane(&runs, &out).map_err(py_err)
}

/// Downloads and checksum-verifies MNIST into `data_dir`.
#[pyfunction]
fn fetch_mnist(py: Python<'_>, data_dir: PathBuf) -> PyResult<()> {
    py.detach(|| mnist::fetch(&data_dir, &mnist::default_sources())).map_err(py_err)
}

#[pymodule(name = "infoplane")]
mod infoplane_py {
    #[pymodule_export]
    use super::{
        digamma, fetch_mnist, ksg_mi, parameter_count, plot, read_csv, reduction_log2_factor, run_experiment,
        ExperimentConfig, MiEstimate, Network, Trajectory, TrajectoryRecord,
    };
}
