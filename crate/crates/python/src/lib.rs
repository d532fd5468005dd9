use loopgas_core::analytic::{self, SERIES_TOL};
use loopgas_core::bridge;
use loopgas_core::mc::{estimate_density, Chain, ChainParams, FreeSpace};
use loopgas_core::model::point;
use loopgas_core::oracle::{self, Boundary, LatticeModel};
use loopgas_core::{Cube, ExternalCC, ModelParams, PairPotential};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn free_model(dim: usize, beta: f64, z: Vec<f64>) -> PyResult<ModelParams> {
    ModelParams::new(dim, beta, z).checked().map_err(value_err)
}

/// Theta series of index `a` at fugacity `z`. Returns `(value, tail_bound)`.
#[pyfunction]
#[pyo3(signature = (a, z, dim = 2, beta = 1.0))]
fn theta(a: i32, z: f64, dim: usize, beta: f64) -> PyResult<(f64, f64)> {
    let m = free_model(dim, beta, vec![z])?;
    let r = analytic::theta(a, z, &m).map_err(value_err)?;
    Ok((r.value, r.tail_bound))
}

/// Free-gas kernel between two points `r` apart. Returns `(value, tail_bound)`.
#[pyfunction]
#[pyo3(signature = (r, z, dim = 2, beta = 1.0))]
fn free_kernel(r: f64, z: f64, dim: usize, beta: f64) -> PyResult<(f64, f64)> {
    let m = free_model(dim, beta, vec![z])?;
    let s = analytic::free_kernel(&point(&[0.0]), &point(&[r]), z, &m, SERIES_TOL).map_err(value_err)?;
    Ok((s.value, s.tail_bound))
}

/// Probability that a one-dimensional bridge of length `k beta` leaves `(-a, a)`.
#[pyfunction]
#[pyo3(signature = (a, k = 1, displacement = 0.0, beta = 1.0))]
fn bridge_max_tail(a: f64, k: u32, displacement: f64, beta: f64) -> PyResult<f64> {
    bridge::bridge_max_tail(a, k, displacement, beta).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (half_side, beta = 1.0, n_terms = 50))]
fn dirichlet_trace(half_side: f64, beta: f64, n_terms: usize) -> f64 {
    analytic::dirichlet_trace_series(half_side, beta, n_terms)
}

#[pyfunction]
#[pyo3(signature = (k0, z, box0_half = 0.5, dim = 2, beta = 1.0))]
fn tightness_bound(k0: u32, z: Vec<f64>, box0_half: f64, dim: usize, beta: f64) -> PyResult<f64> {
    let m = free_model(dim, beta, z)?;
    let b0 = Cube::centered(dim, box0_half).map_err(value_err)?;
    analytic::tightness_bound(k0, &b0, &m).map_err(value_err)
}

/// Largest gap between the two routes of nested partial traces on a line
/// of `sites` sites, with a hard core of diameter `hard_core` between
/// different types.
#[pyfunction]
#[pyo3(signature = (sites, z, n_max, lambda0, lambda1, hard_core = 0.0, spacing = 1.0))]
fn compatibility_deviation(
    sites: usize,
    z: Vec<f64>,
    n_max: Vec<usize>,
    lambda0: Vec<usize>,
    lambda1: Vec<usize>,
    hard_core: f64,
    spacing: f64,
) -> PyResult<f64> {
    let q = z.len();
    let mut m = free_model(1, 1.0, z)?;
    if hard_core > 0.0 {
        let hc = PairPotential::hard_core(hard_core).map_err(value_err)?;
        for i in 0..q {
            for j in i + 1..q {
                m.set_potential(i, j, hc.clone());
            }
        }
    }
    let lm = LatticeModel::line(sites, spacing, m, n_max, Boundary::Dirichlet).map_err(value_err)?;
    oracle::check_compatibility(&lm, &ExternalCC::empty(q), &lambda0, &lambda1).map_err(value_err)
}

/// Free-gas anchor density in a centred window. Returns `(value, std_error)`.
#[pyfunction]
#[pyo3(signature = (z, home_half, window_half, sweeps, seed = 1, dim = 2, k_max = 20, burn_in = 1000))]
#[allow(clippy::too_many_arguments)]
fn window_density(
    py: Python<'_>,
    z: f64,
    home_half: f64,
    window_half: f64,
    sweeps: u64,
    seed: u64,
    dim: usize,
    k_max: u32,
    burn_in: u64,
) -> PyResult<(f64, f64)> {
    let m = free_model(dim, 1.0, vec![z])?;
    let home = Cube::centered(dim, home_half).map_err(value_err)?;
    let window = Cube::centered(dim, window_half).map_err(value_err)?;
    let params = ChainParams { k_max, ..Default::default() };
    let mut chain = Chain::new(m, FreeSpace::new(home), params, seed).map_err(value_err)?;
    let est = py.allow_threads(move || {
        chain.run(burn_in, |_| {});
        estimate_density(&mut chain, &window, sweeps)
    });
    Ok((est.total.value, est.total.std_error))
}

#[pymodule]
fn pyloopgas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    m.add_function(wrap_pyfunction!(free_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(bridge_max_tail, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_trace, m)?)?;
    m.add_function(wrap_pyfunction!(tightness_bound, m)?)?;
    m.add_function(wrap_pyfunction!(compatibility_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(window_density, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
