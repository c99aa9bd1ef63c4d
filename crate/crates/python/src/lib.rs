use std::f64::consts::PI;
use std::sync::Arc;

use pyo3::exceptions::{PyMemoryError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bhring::analysis;
use bhring::exact;
use bhring::groundstate::{find_ground_state, GsConfig};
use bhring::model::{current_terms, hamiltonian_terms, AnnealSchedule, BHParams};
use bhring::perturb::PerturbGap;
use bhring::tdvp::{run_annealing, TdvpConfig, TimeSeries};
use bhring::ttn::{expectation, TTNState, TreeTopology};
use bhring::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Invalid(_) => PyValueError::new_err(e.to_string()),
        Error::Capacity(_) => PyMemoryError::new_err(e.to_string()),
        Error::Io(_) | Error::Format(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Ring parameters; energies in units of J.
#[pyclass(name = "Params", skip_from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: BHParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (L, U, phi = 0.7 * PI, d = 5, N = None, J = 1.0))]
    #[allow(non_snake_case)]
    fn new(L: usize, U: f64, phi: f64, d: usize, N: Option<usize>, J: f64) -> PyResult<Self> {
        let inner = BHParams { l: L, j: J, u: U, phi, d, n: N.unwrap_or(L) };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter(L)]
    fn l(&self) -> usize {
        self.inner.l
    }

    #[getter(U)]
    fn u(&self) -> f64 {
        self.inner.u
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter(N)]
    fn n(&self) -> usize {
        self.inner.n
    }

    fn with_u(&self, u: f64) -> Self {
        Self { inner: self.inner.with_u(u) }
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("Params(L={}, U={}, phi={}, d={}, N={}, J={})", p.l, p.u, p.phi, p.d, p.n, p.j)
    }
}

/// Interaction ramp `U_i(1 + γt)` up to `t0`, then constant `U_f`.
#[pyclass(name = "Schedule", skip_from_py_object)]
#[derive(Clone)]
struct PySchedule {
    inner: AnnealSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (U_i, U_f, total_time, gamma = None, ramp_time = None))]
    #[allow(non_snake_case)]
    fn new(U_i: f64, U_f: f64, total_time: f64, gamma: Option<f64>, ramp_time: Option<f64>) -> PyResult<Self> {
        let inner = match (gamma, ramp_time) {
            (Some(g), None) => AnnealSchedule::from_rate(U_i, U_f, g, total_time),
            (None, Some(t0)) => AnnealSchedule::from_ramp_time(U_i, U_f, t0, total_time),
            (None, None) => AnnealSchedule::constant(U_i, total_time),
            _ => return Err(PyValueError::new_err("give gamma or ramp_time, not both")),
        }
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    fn u_at(&self, t: f64) -> PyResult<f64> {
        self.inner.u_at(t).map_err(py_err)
    }

    #[getter]
    fn t0(&self) -> f64 {
        self.inner.t0
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn total_time(&self) -> f64 {
        self.inner.t_total
    }
}

/// Tree tensor network state with fixed particle number.
#[pyclass(name = "TreeState", skip_from_py_object)]
#[derive(Clone)]
struct PyTreeState {
    inner: TTNState,
}

#[pymethods]
impl PyTreeState {
    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn max_bond(&self) -> usize {
        self.inner.max_bond_dim()
    }

    #[getter]
    fn particles(&self) -> usize {
        self.inner.particles()
    }

    fn amplitude(&self, occupations: Vec<usize>) -> PyResult<(f64, f64)> {
        let z = self.inner.amplitude(&occupations).map_err(py_err)?;
        Ok((z.re, z.im))
    }

    fn energy(&self, params: &PyParams) -> PyResult<f64> {
        let h = hamiltonian_terms(&params.inner).map_err(py_err)?;
        Ok(expectation(&self.inner, &h).map_err(py_err)?.re)
    }

    fn current(&self, params: &PyParams) -> PyResult<f64> {
        let c = current_terms(&params.inner).map_err(py_err)?;
        Ok(expectation(&self.inner, &c).map_err(py_err)?.re)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: TTNState::load(&path).map_err(py_err)? })
    }
}

fn series_dict<'py>(py: Python<'py>, s: &TimeSeries) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", s.times())?;
    d.set_item("U", s.rows.iter().map(|r| r.u).collect::<Vec<_>>())?;
    d.set_item("current", s.currents())?;
    d.set_item("local", s.rows.iter().map(|r| r.local.clone()).collect::<Vec<_>>())?;
    d.set_item("energy", s.rows.iter().map(|r| r.energy).collect::<Vec<_>>())?;
    d.set_item("norm", s.rows.iter().map(|r| r.norm).collect::<Vec<_>>())?;
    d.set_item("max_bond", s.rows.iter().map(|r| r.max_bond).collect::<Vec<_>>())?;
    d.set_item("discarded", s.rows.iter().map(|r| r.discarded).collect::<Vec<_>>())?;
    Ok(d)
}

/// Variational ground state on the tree; returns `(state, energy)`.
#[pyfunction]
#[pyo3(signature = (params, max_bond = 60, rel_threshold = 1e-10, seed = 0))]
fn ground_state(py: Python<'_>, params: &PyParams, max_bond: usize, rel_threshold: f64, seed: u64) -> PyResult<(PyTreeState, f64)> {
    let p = params.inner.clone();
    let gs = py
        .detach(move || -> bhring::Result<_> {
            let topo = Arc::new(TreeTopology::new(p.l)?);
            let cfg = GsConfig { max_bond, rel_threshold, ..GsConfig::default() };
            find_ground_state(&hamiltonian_terms(&p)?, topo, p.n, &cfg, seed)
        })
        .map_err(py_err)?;
    Ok((PyTreeState { inner: gs.state }, gs.energy))
}

/// Two-site TDVP annealing run; returns `(series, final_state)`.
#[pyfunction]
#[pyo3(signature = (state, params, schedule, dt = 2e-3, max_bond = 60, rel_threshold = 1e-10, stride = 10))]
#[allow(clippy::too_many_arguments)]
fn anneal<'py>(
    py: Python<'py>,
    state: &PyTreeState,
    params: &PyParams,
    schedule: &PySchedule,
    dt: f64,
    max_bond: usize,
    rel_threshold: f64,
    stride: usize,
) -> PyResult<(Bound<'py, PyDict>, PyTreeState)> {
    let (s0, p, sched) = (state.inner.clone(), params.inner.clone(), schedule.inner.clone());
    let cfg = TdvpConfig { dt, max_bond, rel_threshold, stride, ..TdvpConfig::default() };
    let r = py.detach(move || run_annealing(&s0, &p, &sched, &cfg, |_| {})).map_err(py_err)?;
    Ok((series_dict(py, &r.series)?, PyTreeState { inner: r.state }))
}

/// Ground energy of the particle-number sector by exact diagonalization.
#[pyfunction]
fn exact_ground_energy(py: Python<'_>, params: &PyParams) -> PyResult<f64> {
    let p = params.inner.clone();
    Ok(py.detach(move || exact::ground_state(&p)).map_err(py_err)?.0)
}

/// Gap between the two lowest unit-translation eigenstates.
#[pyfunction]
fn translation_one_gap(py: Python<'_>, params: &PyParams) -> PyResult<f64> {
    let p = params.inner.clone();
    py.detach(move || {
        let (basis, h) = exact::build_sector_hamiltonian(&p)?;
        exact::low_spectrum(&h, &basis, 12)?.translation_one_gap()
    })
    .map_err(py_err)
}

/// Exact propagation of the ground state at `params.U` under the ramp.
#[pyfunction]
#[pyo3(signature = (params, schedule, dt = 2e-3, stride = 10))]
fn exact_anneal<'py>(py: Python<'py>, params: &PyParams, schedule: &PySchedule, dt: f64, stride: usize) -> PyResult<Bound<'py, PyDict>> {
    let (p, sched) = (params.inner.clone(), schedule.inner.clone());
    let ts = py
        .detach(move || -> bhring::Result<_> {
            let (_, psi0) = exact::ground_state(&p)?;
            Ok(exact::exact_evolve(&psi0, &p, &sched, dt, stride)?.0)
        })
        .map_err(py_err)?;
    series_dict(py, &ts)
}

/// Strong-coupling gap `aU + bJ + cJ²/U` as a dict of coefficients.
#[pyfunction]
#[pyo3(signature = (L, phi = 0.7 * PI))]
#[allow(non_snake_case)]
fn perturb_gap<'py>(py: Python<'py>, L: usize, phi: f64) -> PyResult<Bound<'py, PyDict>> {
    let g = PerturbGap::new(L, phi).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("a", g.a)?;
    d.set_item("b", g.b)?;
    d.set_item("c", g.c)?;
    d.set_item("e0", g.e0.to_vec())?;
    d.set_item("e1", g.e1.to_vec())?;
    Ok(d)
}

fn check_samples(t: &[f64], i: &[f64]) -> PyResult<()> {
    if t.len() != i.len() {
        return Err(PyValueError::new_err("t and current have different lengths"));
    }
    Ok(())
}

/// Half the peak-to-peak range of `current` for `t1 ≤ t ≤ t2`.
#[pyfunction]
fn amplitude(t: Vec<f64>, current: Vec<f64>, t1: f64, t2: f64) -> PyResult<f64> {
    check_samples(&t, &current)?;
    let w: Vec<f64> = t.iter().zip(&current).filter(|(t, _)| **t >= t1 && **t <= t2).map(|(_, i)| *i).collect();
    analysis::half_range(&w).map_err(py_err)
}

/// `(omega0, peak)` of the mean-subtracted, zero-padded spectrum.
#[pyfunction]
fn fourier_peak(t: Vec<f64>, current: Vec<f64>) -> PyResult<(f64, f64)> {
    check_samples(&t, &current)?;
    let s = analysis::fourier_peak_samples(&t, &current).map_err(py_err)?;
    Ok((s.omega0, s.peak))
}

#[pymodule]
fn bhring_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyTreeState>()?;
    m.add_function(wrap_pyfunction!(ground_state, m)?)?;
    m.add_function(wrap_pyfunction!(anneal, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ground_energy, m)?)?;
    m.add_function(wrap_pyfunction!(translation_one_gap, m)?)?;
    m.add_function(wrap_pyfunction!(exact_anneal, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_gap, m)?)?;
    m.add_function(wrap_pyfunction!(amplitude, m)?)?;
    m.add_function(wrap_pyfunction!(fourier_peak, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
