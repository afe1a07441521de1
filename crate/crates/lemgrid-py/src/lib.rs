//! Python bindings for the simulator.
//!
//! Exposes the feeder model, the AC power flow, the sensitivity
//! coefficients, the double-auction book, and whole-day scenario runs as a
//! `lemgrid_py` extension module:
//!
//!     import lemgrid_py
//!     net = lemgrid_py.Network.from_file("fixtures/fig4.net")
//!     op = net.solve([0, -0.04, 0.06, -0.05, 0.03], [0.0] * 5)
//!     sens = net.sensitivities([0, -0.04, 0.06, -0.05, 0.03], [0.0] * 5)
//!
//! Scenario reports cross the boundary as JSON strings so Python can
//! `json.loads` them without a schema dependency on this module.

use lemgrid::agents::{
    generate_profiles, hems_schedule, BatterySpec, Census, HouseholdKind, HouseholdProfile,
    TariffSchedule,
};
use lemgrid::io::RunConfig;
use lemgrid::market::{AlwaysApprove, OrderBook, OrderInput, Side};
use lemgrid::net::{
    build_matrices, line_loadings, solve_power_flow, Network, NetworkMatrices, OperatingPoint,
};
use lemgrid::scenario::{run_scenario, Scheme};
use lemgrid::sensitivity::SensitivityBundle;
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::path::Path;

fn value_err<T, E: std::fmt::Display>(r: Result<T, E>) -> PyResult<T> {
    r.map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    match name.to_lowercase().as_str() {
        "p2p" => Ok(Scheme::P2P),
        "redcap" => Ok(Scheme::RedCap),
        "tripping" => Ok(Scheme::Tripping),
        "apcolp" => Ok(Scheme::ApcOlp),
        _ => Err(PyValueError::new_err(format!(
            "unknown scheme {name:?}; expected p2p, redcap, tripping or apcolp"
        ))),
    }
}

fn parse_side(name: &str) -> PyResult<Side> {
    match name.to_lowercase().as_str() {
        "bid" | "buy" => Ok(Side::Bid),
        "ask" | "sell" => Ok(Side::Ask),
        _ => Err(PyValueError::new_err(format!(
            "unknown side {name:?}; expected bid or ask"
        ))),
    }
}

fn to_injections(n: usize, p: &[f64], q: &[f64]) -> PyResult<Vec<Complex64>> {
    if p.len() != n || q.len() != n {
        return Err(PyValueError::new_err(format!(
            "expected {n} active and reactive injections, got {} / {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&p, &q)| Complex64::new(p, q))
        .collect())
}

/// A radial feeder plus its assembled matrices.
#[pyclass(name = "Network")]
struct PyNetwork {
    net: Network,
    mats: NetworkMatrices,
}

#[pymethods]
impl PyNetwork {
    /// Load a feeder description from disk.
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let net = value_err(Network::from_file(Path::new(path)))?;
        let mats = value_err(build_matrices(&net))?;
        Ok(PyNetwork { net, mats })
    }

    fn n_nodes(&self) -> usize {
        self.net.n_nodes()
    }

    /// Node bound to a household id, if the feeder binds one.
    fn node_of(&self, id: &str) -> Option<usize> {
        self.net.node_of(id)
    }

    fn kw_to_pu(&self, kw: f64) -> f64 {
        self.net.kw_to_pu(kw)
    }

    /// Line indices and flow signs on the unique path from `i` to `j`.
    fn path_between(&self, i: usize, j: usize) -> PyResult<Vec<(usize, f64)>> {
        let n = self.net.n_nodes();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!(
                "nodes {i}, {j} out of range for {n} nodes"
            )));
        }
        Ok(self.net.path_between(i, j))
    }

    /// Solve the AC power flow at per-unit injections (slack entry ignored).
    fn solve(&self, p: Vec<f64>, q: Vec<f64>) -> PyResult<PyOperatingPoint> {
        let inj = to_injections(self.net.n_nodes(), &p, &q)?;
        let op = value_err(solve_power_flow(&self.net, &self.mats, &inj))?;
        let loadings = line_loadings(&self.net, &op);
        Ok(PyOperatingPoint { op, loadings })
    }

    /// Solve, then derive the sensitivity coefficients at that state.
    fn sensitivities(&self, p: Vec<f64>, q: Vec<f64>) -> PyResult<PySensitivities> {
        let inj = to_injections(self.net.n_nodes(), &p, &q)?;
        let op = value_err(solve_power_flow(&self.net, &self.mats, &inj))?;
        let bundle = value_err(SensitivityBundle::compute(&self.net, &self.mats, &op))?;
        Ok(PySensitivities {
            bundle,
            n_nodes: self.net.n_nodes(),
            n_lines: self.net.lines().len(),
        })
    }
}

/// A solved power-flow state.
#[pyclass(name = "OperatingPoint")]
struct PyOperatingPoint {
    op: OperatingPoint,
    loadings: Vec<f64>,
}

#[pymethods]
impl PyOperatingPoint {
    fn voltage_magnitudes(&self) -> Vec<f64> {
        self.op.voltage_magnitudes()
    }

    /// Complex voltage at a node as (re, im).
    fn voltage(&self, node: usize) -> PyResult<(f64, f64)> {
        let v = self
            .op
            .voltages
            .get(node)
            .ok_or_else(|| PyValueError::new_err(format!("node {node} out of range")))?;
        Ok((v.re, v.im))
    }

    /// Total series loss (pu).
    fn p_loss(&self) -> f64 {
        self.op.p_loss
    }

    fn iterations(&self) -> usize {
        self.op.iterations
    }

    /// Apparent-power loading of each line as a fraction of its rating.
    fn line_loadings(&self) -> Vec<f64> {
        self.loadings.clone()
    }
}

/// Sensitivity coefficients derived at one operating point.
#[pyclass(name = "Sensitivities")]
struct PySensitivities {
    bundle: SensitivityBundle,
    n_nodes: usize,
    n_lines: usize,
}

impl PySensitivities {
    fn check_node(&self, node: usize) -> PyResult<()> {
        if node == 0 || node >= self.n_nodes {
            return Err(PyValueError::new_err(format!(
                "node {node} out of range (1..{})",
                self.n_nodes
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PySensitivities {
    /// ∂|V_m|/∂P_k (pu per pu).
    fn voltage(&self, m: usize, k: usize) -> PyResult<f64> {
        self.check_node(m)?;
        self.check_node(k)?;
        Ok(self.bundle.dvmag(m, k))
    }

    /// ∂P_loss/∂P_k.
    fn loss(&self, k: usize) -> PyResult<f64> {
        self.check_node(k)?;
        Ok(self.bundle.dploss(k))
    }

    /// Loss change per pu transferred from seller node `i` to buyer `j`.
    fn bilateral_loss(&self, i: usize, j: usize) -> PyResult<f64> {
        self.check_node(i)?;
        self.check_node(j)?;
        Ok(self.bundle.bec(i, j))
    }

    /// Per-line flow change for a unit transfer from `i` to `j`.
    fn transfer_factors(&self, i: usize, j: usize) -> PyResult<Vec<f64>> {
        self.check_node(i)?;
        self.check_node(j)?;
        Ok(self.bundle.shift_factors().ptdf(i, j))
    }

    fn n_lines(&self) -> usize {
        self.n_lines
    }
}

/// One executed fill.
#[pyclass(name = "Trade", skip_from_py_object)]
#[derive(Clone)]
struct PyTrade {
    #[pyo3(get)]
    buyer: usize,
    #[pyo3(get)]
    seller: usize,
    #[pyo3(get)]
    price: f64,
    #[pyo3(get)]
    quantity: f64,
}

/// Price–time priority double-auction book for one slot.
#[pyclass(name = "OrderBook")]
struct PyOrderBook {
    book: OrderBook,
}

#[pymethods]
impl PyOrderBook {
    #[new]
    fn new(slot: usize) -> Self {
        PyOrderBook {
            book: OrderBook::new(slot),
        }
    }

    /// Shout an order; returns (order_id, fills, quantity left resting).
    fn submit(
        &mut self,
        trader: usize,
        side: &str,
        price: f64,
        quantity: f64,
        time: f64,
    ) -> PyResult<(u64, Vec<PyTrade>, f64)> {
        let input = OrderInput {
            trader,
            side: parse_side(side)?,
            price,
            quantity,
            time,
            slot: self.book.slot(),
            bounds: None,
        };
        let out = value_err(self.book.submit(input, &mut AlwaysApprove))?;
        let trades = out
            .trades
            .iter()
            .map(|t| PyTrade {
                buyer: t.buyer,
                seller: t.seller,
                price: t.price,
                quantity: t.quantity,
            })
            .collect();
        Ok((out.order_id, trades, out.rested))
    }

    /// Best standing (price, quantity) on each side, or None.
    fn best_bid(&self) -> Option<(f64, f64)> {
        self.book.best_bid().map(|o| (o.price, o.quantity))
    }

    fn best_ask(&self) -> Option<(f64, f64)> {
        self.book.best_ask().map(|o| (o.price, o.quantity))
    }

    /// Close the book and return resting orders as (trader, side, price, quantity).
    fn drain(&mut self) -> Vec<(usize, String, f64, f64)> {
        self.book
            .drain()
            .into_iter()
            .map(|o| {
                let side = match o.side {
                    Side::Bid => "bid".to_string(),
                    Side::Ask => "ask".to_string(),
                };
                (o.trader, side, o.price, o.quantity)
            })
            .collect()
    }
}

/// Run one scheme over a day described by a TOML run file and return the
/// full report as a JSON string.
#[pyfunction]
#[pyo3(signature = (config_path, scheme = "p2p", seed = None))]
fn run_day(config_path: &str, scheme: &str, seed: Option<u64>) -> PyResult<String> {
    let scheme = parse_scheme(scheme)?;
    let (rc, base) = value_err(RunConfig::load(Path::new(config_path)))?;
    let mut config = value_err(rc.resolve(&base))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let report = value_err(run_scenario(&config, scheme))?;
    value_err(serde_json::to_string(&report))
}

/// Cost-optimal battery schedule for one household day. Returns per-slot
/// (charge, discharge, state of charge) in kWh plus the day cost.
#[pyfunction]
#[pyo3(signature = (demand, pv, import_price, export_price, power_kw, capacity_kwh, efficiency, initial_soc_kwh, slot_hours, soc_step = 0.1))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn hems(
    demand: Vec<f64>,
    pv: Vec<f64>,
    import_price: Vec<f64>,
    export_price: Vec<f64>,
    power_kw: f64,
    capacity_kwh: f64,
    efficiency: f64,
    initial_soc_kwh: f64,
    slot_hours: f64,
    soc_step: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    let profile = HouseholdProfile {
        id: "hems".to_string(),
        kind: HouseholdKind::Prosumer2,
        node: None,
        demand,
        pv,
    };
    let battery = BatterySpec {
        power_kw,
        capacity_kwh,
        efficiency,
        initial_soc_kwh,
    };
    let tariffs = TariffSchedule {
        import: import_price,
        export: export_price,
    };
    value_err(tariffs.validate())?;
    let d = value_err(hems_schedule(
        &profile, &battery, &tariffs, slot_hours, soc_step,
    ))?;
    Ok((d.charge, d.discharge, d.soc, d.cost))
}

/// Seeded synthetic household profiles as (id, kind, demand, pv) tuples.
#[pyfunction]
#[pyo3(signature = (consumers, prosumers1, prosumers2, slots, slot_hours, pv_kwp = 5.0, seed = 42))]
fn gen_profiles(
    consumers: usize,
    prosumers1: usize,
    prosumers2: usize,
    slots: usize,
    slot_hours: f64,
    pv_kwp: f64,
    seed: u64,
) -> Vec<(String, String, Vec<f64>, Vec<f64>)> {
    let census = Census {
        consumers,
        prosumers1,
        prosumers2,
    };
    generate_profiles(&census, slots, slot_hours, pv_kwp, seed)
        .into_iter()
        .map(|h| {
            let kind = match h.kind {
                HouseholdKind::Consumer => "consumer",
                HouseholdKind::Prosumer1 => "prosumer1",
                HouseholdKind::Prosumer2 => "prosumer2",
                HouseholdKind::Ces => "ces",
            };
            (h.id, kind.to_string(), h.demand, h.pv)
        })
        .collect()
}

#[pymodule]
fn lemgrid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyOperatingPoint>()?;
    m.add_class::<PySensitivities>()?;
    m.add_class::<PyOrderBook>()?;
    m.add_class::<PyTrade>()?;
    m.add_function(wrap_pyfunction!(run_day, m)?)?;
    m.add_function(wrap_pyfunction!(hems, m)?)?;
    m.add_function(wrap_pyfunction!(gen_profiles, m)?)?;
    Ok(())
}
