//! Python bindings: build dataflow graphs, compile them to per-location
//! plans, and run them, all from Python.
//!
//! Staged code crosses the language boundary as source text plus a dict of
//! captured constants, mirroring how plans carry it between machines:
//!
//! ```python
//! flow = weft_py.Flow()
//! a, b = flow.process(), flow.process()
//! items = flow.source_iter(a, "0 .. 5")
//! items.filter("|v| v > 2").map("|v| v * 2").send(b).for_each("|v| print(v)")
//! logs = flow.finish().run_local("tcp")
//! ```

use pyo3::exceptions::{PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString, PyTuple};

use weft::deploy::{bind, DeployClusterSpec, DeployProcessSpec, HostSpec, LocalhostCluster,
    LocalhostProcess};
use weft::ir::{
    ClusterHandle, FlowBuilder, FlowGraph, Location as _, ProcessHandle, Stream as CoreStream,
};
use weft::runtime::{graph_cluster_sizes, run_distributed, run_oracle_seeded, RunResult, Transport};
use weft::staging::{quote_with, Quoted, Value};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn py_to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_instance_of::<PyBool>() {
        return Ok(Value::Bool(obj.extract()?));
    }
    if let Ok(n) = obj.extract::<i64>() {
        return Ok(Value::Int(n));
    }
    if obj.is_instance_of::<PyString>() {
        return Ok(Value::Str(obj.extract()?));
    }
    if let Ok(t) = obj.cast::<PyTuple>() {
        let items: PyResult<Vec<Value>> = t.iter().map(|v| py_to_value(&v)).collect();
        return Ok(Value::Tuple(items?));
    }
    if let Ok(l) = obj.cast::<PyList>() {
        let items: PyResult<Vec<Value>> = l.iter().map(|v| py_to_value(&v)).collect();
        return Ok(Value::List(items?));
    }
    Err(PyTypeError::new_err(format!(
        "cannot capture {}: use int, bool, str, tuple, or list",
        obj.get_type().name()?
    )))
}

fn to_quoted(expr: &str, captures: Option<&Bound<'_, PyDict>>) -> PyResult<Quoted> {
    let mut pairs: Vec<(String, Value)> = Vec::new();
    if let Some(dict) = captures {
        for (key, value) in dict.iter() {
            pairs.push((key.extract::<String>()?, py_to_value(&value)?));
        }
    }
    let borrowed: Vec<(&str, Value)> =
        pairs.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    quote_with(expr, &borrowed).map_err(err)
}

fn logs_to_py(py: Python<'_>, result: &RunResult) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    for (instance, log) in &result.instances {
        dict.set_item(instance, log.clone())?;
    }
    Ok(dict.into())
}

/// Stage one: a dataflow graph under construction.
#[pyclass(unsendable)]
struct Flow {
    inner: FlowBuilder,
}

#[pymethods]
impl Flow {
    #[new]
    fn new() -> Flow {
        Flow { inner: FlowBuilder::new() }
    }

    /// Register a process location. With no arguments it is bound to
    /// localhost; pass all three cloud parameters to bind a cloud machine.
    #[pyo3(signature = (machine_type=None, image=None, region=None))]
    fn process(
        &self,
        machine_type: Option<String>,
        image: Option<String>,
        region: Option<String>,
    ) -> PyResult<Process> {
        let handle = match cloud_host(machine_type, image, region)? {
            Some(host) => self.inner.process(&DeployProcessSpec::new(move || host.clone())),
            None => self.inner.process(&LocalhostProcess),
        };
        Ok(Process { inner: handle })
    }

    /// Register a cluster of `size` identical members.
    #[pyo3(signature = (size, machine_type=None, image=None, region=None))]
    fn cluster(
        &self,
        size: u32,
        machine_type: Option<String>,
        image: Option<String>,
        region: Option<String>,
    ) -> PyResult<Cluster> {
        let handle = match cloud_host(machine_type, image, region)? {
            Some(host) => self.inner.cluster(&DeployClusterSpec::new(move || {
                (0..size).map(|_| host.clone()).collect()
            })),
            None => self.inner.cluster(&LocalhostCluster { size }),
        };
        Ok(Cluster { inner: handle })
    }

    /// A finite source at `at` from a staged list expression.
    #[pyo3(signature = (at, expr, captures=None))]
    fn source_iter(
        &self,
        at: &Bound<'_, PyAny>,
        expr: &str,
        captures: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Stream> {
        let quoted = to_quoted(expr, captures)?;
        let stream = if let Ok(p) = at.extract::<PyRef<Process>>() {
            self.inner.source_iter(&p.inner, quoted)
        } else if let Ok(c) = at.extract::<PyRef<Cluster>>() {
            self.inner.source_iter(&c.inner, quoted)
        } else {
            return Err(PyTypeError::new_err("at must be a Process or a Cluster"));
        };
        stream.map(|inner| Stream { inner }).map_err(err)
    }

    /// A source at `at` listing every member id of `of`, in order.
    fn member_ids(&self, at: &Bound<'_, PyAny>, of: &Cluster) -> PyResult<Stream> {
        let stream = if let Ok(p) = at.extract::<PyRef<Process>>() {
            self.inner.member_ids(&p.inner, &of.inner)
        } else if let Ok(c) = at.extract::<PyRef<Cluster>>() {
            self.inner.member_ids(&c.inner, &of.inner)
        } else {
            return Err(PyTypeError::new_err("at must be a Process or a Cluster"));
        };
        stream.map(|inner| Stream { inner }).map_err(err)
    }

    /// A source on a cluster where each member emits its own id, once.
    fn self_ids(&self, at: &Cluster) -> PyResult<Stream> {
        self.inner.self_id_source(&at.inner).map(|inner| Stream { inner }).map_err(err)
    }

    /// Validate and freeze the graph.
    fn finish(&self) -> PyResult<Graph> {
        self.inner.finish().map(|inner| Graph { inner }).map_err(err)
    }
}

fn cloud_host(
    machine_type: Option<String>,
    image: Option<String>,
    region: Option<String>,
) -> PyResult<Option<HostSpec>> {
    match (machine_type, image, region) {
        (None, None, None) => Ok(None),
        (Some(machine_type), Some(image), Some(region)) => {
            Ok(Some(HostSpec::CloudMachine { machine_type, image, region }))
        }
        _ => Err(PyValueError::new_err(
            "pass machine_type, image, and region together, or none of them",
        )),
    }
}

/// A single-process location.
#[pyclass(unsendable)]
struct Process {
    inner: ProcessHandle,
}

#[pymethods]
impl Process {
    fn __repr__(&self) -> String {
        format!("Process({})", self.inner.location_id())
    }
}

/// A cluster location of identical members.
#[pyclass(unsendable)]
struct Cluster {
    inner: ClusterHandle,
}

#[pymethods]
impl Cluster {
    #[getter]
    fn size(&self) -> u32 {
        self.inner.size()
    }

    fn __repr__(&self) -> String {
        format!("Cluster({}, size={})", self.inner.location_id(), self.inner.size())
    }
}

/// A typed, placed, linear stream of values.
#[pyclass(unsendable)]
struct Stream {
    inner: CoreStream,
}

#[pymethods]
impl Stream {
    #[pyo3(signature = (expr, captures=None))]
    fn map(&self, expr: &str, captures: Option<&Bound<'_, PyDict>>) -> PyResult<Stream> {
        self.inner
            .map(to_quoted(expr, captures)?)
            .map(|inner| Stream { inner })
            .map_err(err)
    }

    #[pyo3(signature = (expr, captures=None))]
    fn filter(&self, expr: &str, captures: Option<&Bound<'_, PyDict>>) -> PyResult<Stream> {
        self.inner
            .filter(to_quoted(expr, captures)?)
            .map(|inner| Stream { inner })
            .map_err(err)
    }

    #[pyo3(signature = (init, step, captures=None))]
    fn fold(
        &self,
        init: &str,
        step: &str,
        captures: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Stream> {
        self.inner
            .fold(to_quoted(init, captures)?, to_quoted(step, captures)?)
            .map(|inner| Stream { inner })
            .map_err(err)
    }

    #[pyo3(signature = (expr, captures=None))]
    fn for_each(&self, expr: &str, captures: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
        self.inner.for_each(to_quoted(expr, captures)?).map_err(err)
    }

    fn cross(&self, other: &Stream) -> PyResult<Stream> {
        self.inner.cross_product(&other.inner).map(|inner| Stream { inner }).map_err(err)
    }

    fn join(&self, other: &Stream) -> PyResult<Stream> {
        self.inner.join(&other.inner).map(|inner| Stream { inner }).map_err(err)
    }

    fn difference(&self, other: &Stream) -> PyResult<Stream> {
        self.inner.difference(&other.inner).map(|inner| Stream { inner }).map_err(err)
    }

    fn union(&self, other: &Stream) -> PyResult<Stream> {
        self.inner.union(&other.inner).map(|inner| Stream { inner }).map_err(err)
    }

    /// Ship this stream to another location; the network pattern follows
    /// from the two endpoint kinds.
    fn send(&self, dest: &Bound<'_, PyAny>) -> PyResult<Stream> {
        let stream = if let Ok(p) = dest.extract::<PyRef<Process>>() {
            self.inner.send(&p.inner)
        } else if let Ok(c) = dest.extract::<PyRef<Cluster>>() {
            self.inner.send(&c.inner)
        } else {
            return Err(PyTypeError::new_err("dest must be a Process or a Cluster"));
        };
        stream.map(|inner| Stream { inner }).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Stream(at={}, elem={})", self.inner.location(), self.inner.element_type())
    }
}

/// Stage two: a validated graph, ready to compile and run.
#[pyclass]
struct Graph {
    inner: FlowGraph,
}

#[pymethods]
impl Graph {
    /// The graph in DOT form, one subgraph per location.
    fn dot(&self) -> String {
        weft::compile::emit_dot(&self.inner)
    }

    /// Per-location plan texts, keyed by location (like "process:0").
    fn plans(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        let plans = weft::compile::compile(&self.inner).map_err(err)?;
        let dict = PyDict::new(py);
        for plan in plans {
            dict.set_item(plan.location.to_string(), plan.to_text())?;
        }
        Ok(dict.into())
    }

    /// Deployment config and manifest JSON for this graph.
    #[pyo3(signature = (base_port=35000))]
    fn deploy(&self, base_port: u16) -> PyResult<(String, String)> {
        let (config, manifest) = bind(&self.inner, base_port).map_err(err)?;
        Ok((config.to_json(), manifest.to_json()))
    }

    /// Run single-process and return {instance: [log lines]}.
    #[pyo3(signature = (seed=0))]
    fn run_oracle(&self, py: Python<'_>, seed: u64) -> PyResult<Py<PyDict>> {
        let sizes = graph_cluster_sizes(&self.inner);
        let result = run_oracle_seeded(&self.inner, &sizes, seed).map_err(err)?;
        logs_to_py(py, &result)
    }

    /// Run one worker per instance in this process; transport is "mem" or
    /// "tcp" (loopback sockets, ephemeral ports unless base_port is set).
    #[pyo3(signature = (transport="tcp", base_port=0))]
    fn run_local(&self, py: Python<'_>, transport: &str, base_port: u16) -> PyResult<Py<PyDict>> {
        let transport = match transport {
            "mem" | "memory" => Transport::Memory,
            "tcp" => Transport::Tcp,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown transport {other:?}: use \"mem\" or \"tcp\""
                )))
            }
        };
        let result = run_distributed(&self.inner, transport, base_port).map_err(err)?;
        logs_to_py(py, &result)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.nodes.len()
    }

    /// Every location in the graph, like ["process:0", "cluster:0"].
    fn locations(&self) -> Vec<String> {
        self.inner.locations.iter().map(|(loc, _)| loc.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, locations={})", self.inner.nodes.len(), self.inner.locations.len())
    }
}

/// Build one of the bundled example programs on localhost bindings.
#[pyfunction]
#[pyo3(signature = (name, cluster_size=2))]
fn build_example(name: &str, cluster_size: u32) -> PyResult<Graph> {
    weft::programs::build_example(name, &LocalhostProcess, &LocalhostCluster {
        size: cluster_size,
    })
    .map(|inner| Graph { inner })
    .map_err(err)
}

/// Names accepted by `build_example`.
#[pyfunction]
fn examples() -> Vec<&'static str> {
    weft::programs::EXAMPLE_NAMES.to_vec()
}

/// The partitioning hash used by staged `hash(w)`.
#[pyfunction]
fn fnv1a64(text: &str) -> i64 {
    weft::staging::eval::fnv1a64(text)
}

/// The seeded member sampler used by staged `pick(seed, draw, n)`.
#[pyfunction]
fn pick_member(seed: i64, draw: i64, n: i64) -> PyResult<u32> {
    weft::staging::eval::pick_member(seed, draw, n).map_err(err)
}

/// Pump `messages` 8-byte values through one loopback TCP channel and
/// return the sustained messages-per-second rate.
#[pyfunction]
fn bench_channel(messages: u64) -> PyResult<f64> {
    weft::runtime::bench_channel(messages).map_err(err)
}

#[pymodule]
fn weft_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Flow>()?;
    m.add_class::<Process>()?;
    m.add_class::<Cluster>()?;
    m.add_class::<Stream>()?;
    m.add_class::<Graph>()?;
    m.add_function(wrap_pyfunction!(build_example, m)?)?;
    m.add_function(wrap_pyfunction!(examples, m)?)?;
    m.add_function(wrap_pyfunction!(fnv1a64, m)?)?;
    m.add_function(wrap_pyfunction!(pick_member, m)?)?;
    m.add_function(wrap_pyfunction!(bench_channel, m)?)?;
    Ok(())
}
