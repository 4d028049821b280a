//! Python bindings: feeders, DERs, single T-DOPF solves and full market cases.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use gridclear::der::{self, DerPopulation};
use gridclear::lindistflow::build_matrices;
use gridclear::pipeline::{CaseKind, LmpSource};
use gridclear::polygon;
use gridclear::retail::retail_signals;
use gridclear::tdopf::{self, Restrictions, TdopfParams, TdopfProblem};
use gridclear::{Error, GenerationSpec, PhaseSet};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Internal(_) | Error::Solver(_) | Error::Infeasible { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, value_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

/// A validated radial feeder.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    inner: gridclear::Network,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: gridclear::load_network(path).map_err(py_err)?,
        })
    }

    /// Number of non-head buses.
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn s_base_kva(&self) -> f64 {
        self.inner.s_base_kva()
    }

    /// Bus labels, head first, in internal order.
    fn buses(&self) -> Vec<u32> {
        self.inner.buses().iter().map(|b| b.index).collect()
    }

    fn bus_phases(&self, label: u32) -> PyResult<String> {
        self.inner
            .bus(label)
            .map(|b| b.phases.to_string())
            .ok_or_else(|| PyValueError::new_err(format!("no bus {label}")))
    }

    /// Total fixed load `(kW, kVAr)`.
    fn fixed_load(&self) -> (f64, f64) {
        self.inner.total_fixed_load()
    }

    fn __repr__(&self) -> String {
        format!("Network({} buses)", self.inner.n() + 1)
    }
}

/// A bid (consumption) or offer (production).
#[pyclass(name = "Der", frozen)]
#[derive(Clone)]
struct PyDer {
    inner: gridclear::Der,
}

#[pymethods]
impl PyDer {
    #[new]
    #[pyo3(signature = (id, bus, phases, side, price, volume_kw, power_factor = 0.9))]
    fn new(id: String, bus: u32, phases: &str, side: &str, price: f64, volume_kw: f64, power_factor: f64) -> PyResult<Self> {
        let phases: PhaseSet = phases.parse().map_err(py_err)?;
        let inner = match side {
            "bid" => gridclear::Der::bid(id, bus, phases, price, volume_kw, power_factor),
            "offer" => gridclear::Der::offer(id, bus, phases, price, volume_kw, power_factor),
            other => return Err(PyValueError::new_err(format!("side must be 'bid' or 'offer', got {other:?}"))),
        }
        .map_err(py_err)?;
        Ok(PyDer { inner })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn bus(&self) -> u32 {
        self.inner.bus
    }

    #[getter]
    fn phases(&self) -> String {
        self.inner.phases.to_string()
    }

    #[getter]
    fn side(&self) -> &'static str {
        if self.inner.is_bid() {
            "bid"
        } else {
            "offer"
        }
    }

    #[getter]
    fn price(&self) -> f64 {
        self.inner.price
    }

    /// Signed volume, kW: negative for bids.
    #[getter]
    fn volume_kw(&self) -> f64 {
        self.inner.volume
    }

    #[getter]
    fn power_factor(&self) -> f64 {
        self.inner.power_factor
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta()
    }

    fn __repr__(&self) -> String {
        let d = &self.inner;
        format!("Der({:?}, bus={}, phases={}, {} {} kW at {} ¢/kWh)", d.id, d.bus, d.phases, self.side(), d.volume.abs(), d.price)
    }
}

fn params(m: f64, dt: f64, big_m: f64, polygon_edges: usize) -> PyResult<TdopfParams> {
    let p = TdopfParams {
        m,
        dt,
        big_m,
        polygon: polygon::polygon_coefficients(polygon_edges).map_err(py_err)?,
    };
    p.validate().map_err(py_err)?;
    Ok(p)
}

fn population(network: &PyNetwork, ders: Vec<PyRef<'_, PyDer>>) -> PyResult<DerPopulation> {
    DerPopulation::new(&network.inner, ders.iter().map(|d| d.inner.clone()).collect()).map_err(py_err)
}

#[pyfunction]
fn reactive_ratio(power_factor: f64) -> PyResult<f64> {
    der::reactive_ratio(power_factor).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (der, big_m = 1000.0))]
fn gamma_price(der: &PyDer, big_m: f64) -> f64 {
    der::gamma_price(&der.inner, big_m)
}

/// Qualification price from per-phase nodal duals at the DER's bus.
#[pyfunction]
#[pyo3(signature = (der, lambda_p, lambda_q, big_m = 1000.0, s_base_kva = 1.0, dt = 1.0))]
fn qualification_price(der: &PyDer, lambda_p: [f64; 3], lambda_q: [f64; 3], big_m: f64, s_base_kva: f64, dt: f64) -> f64 {
    tdopf::qualification_price(&der.inner, lambda_p, lambda_q, big_m, s_base_kva, dt)
}

/// `(beta, delta, gamma)` per polygon edge.
#[pyfunction]
#[pyo3(signature = (edges = polygon::DEFAULT_EDGES))]
fn polygon_coefficients(edges: usize) -> PyResult<Vec<(f64, f64, f64)>> {
    let p = polygon::polygon_coefficients(edges).map_err(py_err)?;
    Ok(p.edges().iter().map(|e| (e.beta, e.delta, e.gamma)).collect())
}

#[pyfunction]
#[pyo3(signature = (network, bids = 200, offers = 100, seed = 2023, power_factor = 0.9))]
fn generate_ders(network: &PyNetwork, bids: usize, offers: usize, seed: u64, power_factor: f64) -> PyResult<Vec<PyDer>> {
    let spec = GenerationSpec {
        bids,
        offers,
        seed,
        power_factor,
        ..GenerationSpec::default()
    };
    let ders = gridclear::generate::generate_ders(&network.inner, &spec).map_err(py_err)?;
    Ok(ders.into_iter().map(|inner| PyDer { inner }).collect())
}

/// One T-DOPF solve. `clamps` maps DER ids to fixed fractions.
#[pyfunction]
#[pyo3(signature = (network, ders, m = 2.5, dt = 1.0, big_m = 1000.0, polygon_edges = 12, clamps = None))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    network: &PyNetwork,
    ders: Vec<PyRef<'_, PyDer>>,
    m: f64,
    dt: f64,
    big_m: f64,
    polygon_edges: usize,
    clamps: Option<Vec<(String, f64)>>,
) -> PyResult<Bound<'py, PyDict>> {
    let net = &network.inner;
    let pop = population(network, ders)?;
    let mut r = Restrictions::none(pop.len());
    for (id, v) in clamps.unwrap_or_default() {
        let i = pop.index_of(&id).ok_or_else(|| PyValueError::new_err(format!("no DER {id:?}")))?;
        r = r.clamp(i, v);
    }
    let mx = build_matrices(net).map_err(py_err)?;
    let pb = TdopfProblem::assemble(net, &mx, &pop, params(m, dt, big_m, polygon_edges)?, r).map_err(py_err)?;
    let sol = pb.solve().map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("status", format!("{:?}", sol.status).to_lowercase())?;
    if !sol.is_optimal() {
        out.set_item("hint", sol.infeasibility_hint.clone())?;
        return Ok(out);
    }
    let s = net.s_base_kva();
    out.set_item("objective", sol.objective)?;
    let alpha = PyDict::new(py);
    let qp = PyDict::new(py);
    for (i, d) in pop.ders().iter().enumerate() {
        alpha.set_item(&d.id, sol.alpha[i] + 0.0)?;
        qp.set_item(&d.id, sol.qualification_price(&pop, i, pb.params(), s))?;
    }
    out.set_item("alpha", alpha)?;
    out.set_item("qualification_prices", qp)?;
    out.set_item("p0_kw", sol.p0.map(|p| p * s))?;
    out.set_item("q0_kvar", sol.q0.map(|q| q * s))?;
    let voltages = PyDict::new(py);
    let lambda_p = PyDict::new(py);
    let lambda_q = PyDict::new(py);
    for (k, bus) in net.buses().iter().enumerate().skip(1) {
        for ph in bus.phases.iter() {
            let i = 3 * (k - 1) + ph.index();
            let key = (bus.index, ph.label().to_string());
            voltages.set_item(key.clone(), sol.voltages[i].sqrt())?;
            lambda_p.set_item(key.clone(), sol.lambda_p[i])?;
            lambda_q.set_item(key, sol.lambda_q[i])?;
        }
    }
    out.set_item("voltages_pu", voltages)?;
    out.set_item("lambda_p", lambda_p)?;
    out.set_item("lambda_q", lambda_q)?;
    let kkt = tdopf::kkt_residuals(&sol, &pb).map_err(py_err)?;
    out.set_item("kkt_residual", kkt.max())?;
    Ok(out)
}

/// Runs one market case ("a", "b", "c", "test-case-1", "test-case-2") and returns the clearing
/// outcome with retail signals.
#[pyfunction]
#[pyo3(signature = (network, ders, case = "c", lmp = 13.0, m = 2.5, dt = 1.0, big_m = 1000.0, polygon_edges = 12))]
#[allow(clippy::too_many_arguments)]
fn run_case<'py>(
    py: Python<'py>,
    network: &PyNetwork,
    ders: Vec<PyRef<'_, PyDer>>,
    case: &str,
    lmp: f64,
    m: f64,
    dt: f64,
    big_m: f64,
    polygon_edges: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let case: CaseKind = case.parse().map_err(py_err)?;
    let net = &network.inner;
    let pop = population(network, ders)?;
    let mx = build_matrices(net).map_err(py_err)?;
    let p = params(m, dt, big_m, polygon_edges)?;
    let res = gridclear::run_case(net, &mx, &pop, &p, &LmpSource::Fixed { price: lmp }, case).map_err(py_err)?;
    let ids = |v: &[usize]| -> Vec<String> { v.iter().map(|&i| pop.ders()[i].id.clone()).collect() };
    let o = &res.outcome;
    let out = PyDict::new(py);
    out.set_item("case", case.to_string())?;
    out.set_item("lmp", o.lmp)?;
    out.set_item("cleared_bids", ids(&o.cleared_bids))?;
    out.set_item("cleared_offers", ids(&o.cleared_offers))?;
    out.set_item("cleared_mc", ids(&o.cleared_mc))?;
    let mc = res.bins.as_ref().map(|b| ids(&b.psi_mc)).unwrap_or_default();
    out.set_item("mutually_contingent", mc)?;
    out.set_item("scheduled_net_interchange_kw", o.scheduled_net_interchange_kw)?;
    out.set_item("final_net_withdrawal_kw", res.dispatch.der_net_withdrawal_kw)?;
    out.set_item("violations", to_py(py, &res.violations)?)?;
    out.set_item("dissatisfied", ids(&res.dissatisfied))?;
    out.set_item("diagnostics", o.diagnostics.clone())?;
    out.set_item("quotes", to_py(py, &res.quotes)?)?;
    let retail = retail_signals(&pop, o, &res.dispatch.alpha, &res.qualification_prices, m).map_err(py_err)?;
    out.set_item("retail", to_py(py, &retail)?)?;
    Ok(out)
}

/// Runs a scenario config end to end and writes its exports; returns a summary.
#[pyfunction]
#[pyo3(signature = (config, output_dir = None))]
fn run_scenario<'py>(py: Python<'py>, config: PathBuf, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = gridclear::ScenarioConfig::load(&config).map_err(py_err)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let s = gridclear::run_scenario(&cfg).map_err(|e| {
        let msg = e.to_string();
        match e.source {
            Error::Io { .. } => PyIOError::new_err(msg),
            Error::Infeasible { .. } | Error::Internal(_) | Error::Solver(_) => PyRuntimeError::new_err(msg),
            _ => PyValueError::new_err(msg),
        }
    })?;
    let out = PyDict::new(py);
    out.set_item("run_dir", s.run_dir)?;
    out.set_item("case", s.case.to_string())?;
    out.set_item("lmp", s.lmp)?;
    out.set_item("cleared_bids", s.cleared_bids)?;
    out.set_item("cleared_offers", s.cleared_offers)?;
    out.set_item("cleared_mc", s.cleared_mc)?;
    out.set_item("scheduled_net_interchange_kw", s.scheduled_net_interchange_kw)?;
    out.set_item("violations", s.violations)?;
    out.set_item("files", s.files)?;
    Ok(out)
}

#[pymodule]
fn gridclear_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDer>()?;
    m.add_function(wrap_pyfunction!(reactive_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_price, m)?)?;
    m.add_function(wrap_pyfunction!(qualification_price, m)?)?;
    m.add_function(wrap_pyfunction!(polygon_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(generate_ders, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_case, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
