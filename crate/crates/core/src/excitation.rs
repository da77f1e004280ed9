//! Regressor banks and cooperative persistency-of-excitation analysis.
//!
//! Each agent owns a time-dependent regressor `C_i(t)` (an `N_y x N`
//! matrix). Excitation is measured through windowed integrals of
//! `sum_i C_i^T C_i`; the extracted constants feed every Gramian and
//! Lyapunov bound downstream.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::linalg::{spectral_norm, sym_eig_extrema};
use crate::{Error, Result};

/// Evaluator type for one agent's regressor.
pub type RegressorFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Windows whose smallest excitation eigenvalue falls below this threshold
/// count as violating cooperative persistency of excitation.
pub const DEFAULT_CPE_TOL: f64 = 1e-10;

/// Per-agent regressor evaluators with shared dimensions.
#[derive(Clone)]
pub struct RegressorBank {
    agents: Vec<RegressorFn>,
    n_params: usize,
    n_outputs: usize,
}

impl std::fmt::Debug for RegressorBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegressorBank")
            .field("agents", &self.agents.len())
            .field("n_params", &self.n_params)
            .field("n_outputs", &self.n_outputs)
            .finish()
    }
}

/// Excitation constants over a fixed window length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationReport {
    /// Window length `T`.
    pub window: f64,
    /// Smallest eigenvalue of any sampled excitation window.
    pub iota1_lower: f64,
    /// Largest eigenvalue of any sampled excitation window.
    pub iota1_upper: f64,
    /// Uniform bound on `||C_i^T(t) C_i(t)||` over agents and sampled times.
    pub r2: f64,
}

impl ExcitationReport {
    /// Combined excitation constant `r4 = r2 + alpha * r3`.
    pub fn r4(&self, alpha: f64, r3: f64) -> f64 {
        assert!(
            alpha > 0.0,
            "consensus gain alpha must be strictly positive"
        );
        assert!(r3 >= 0.0, "Laplacian norm bound must be non-negative");
        self.r2 + alpha * r3
    }
}

impl RegressorBank {
    /// Build a bank from per-agent evaluators; every evaluator must produce
    /// an `n_outputs x n_params` matrix.
    pub fn new(agents: Vec<RegressorFn>, n_params: usize, n_outputs: usize) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidParameter(
                "regressor bank needs at least one agent".into(),
            ));
        }
        let bank = Self {
            agents,
            n_params,
            n_outputs,
        };
        for i in 0..bank.agent_count() {
            let c = bank.eval(i, 0.0);
            if c.nrows() != n_outputs || c.ncols() != n_params {
                return Err(Error::DimensionMismatch(format!(
                    "agent {i} regressor is {}x{}, expected {n_outputs}x{n_params}",
                    c.nrows(),
                    c.ncols()
                )));
            }
        }
        Ok(bank)
    }

    /// Bank from sampled trajectories with linear interpolation between the
    /// grid nodes. `tables[i]` holds agent `i`'s regressor at each time in
    /// `times`; evaluation clamps outside the grid.
    pub fn from_tables(
        times: Vec<f64>,
        tables: Vec<Vec<DMatrix<f64>>>,
        n_params: usize,
        n_outputs: usize,
    ) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidParameter(
                "regressor table needs >= 2 samples".into(),
            ));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "regressor table times must increase".into(),
            ));
        }
        let times = Arc::new(times);
        let mut agents: Vec<RegressorFn> = Vec::with_capacity(tables.len());
        for (i, table) in tables.into_iter().enumerate() {
            if table.len() != times.len() {
                return Err(Error::DimensionMismatch(format!(
                    "agent {i} table has {} rows for {} times",
                    table.len(),
                    times.len()
                )));
            }
            let times = Arc::clone(&times);
            let table = Arc::new(table);
            agents.push(Arc::new(move |t: f64| interp_table(&times, &table, t)));
        }
        Self::new(agents, n_params, n_outputs)
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Evaluate agent `i`'s regressor `C_i(t)`.
    pub fn eval(&self, agent: usize, t: f64) -> DMatrix<f64> {
        (self.agents[agent])(t)
    }

    /// `sum_i C_i^T(t) C_i(t)`, the instantaneous cooperative excitation.
    pub fn sum_ctc(&self, t: f64) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.n_params, self.n_params);
        for i in 0..self.agent_count() {
            let c = self.eval(i, t);
            acc += c.transpose() * c;
        }
        acc
    }

    /// Per-agent blocks `C_i^T(t) C_i(t)` in agent order.
    pub fn blocks_ctc(&self, t: f64) -> Vec<DMatrix<f64>> {
        (0..self.agent_count())
            .map(|i| {
                let c = self.eval(i, t);
                c.transpose() * c
            })
            .collect()
    }
}

fn interp_table(times: &[f64], table: &[DMatrix<f64>], t: f64) -> DMatrix<f64> {
    if t <= times[0] {
        return table[0].clone();
    }
    if t >= times[times.len() - 1] {
        return table[table.len() - 1].clone();
    }
    let idx = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => return table[i].clone(),
        Err(i) => i - 1,
    };
    let w = (t - times[idx]) / (times[idx + 1] - times[idx]);
    &table[idx] * (1.0 - w) + &table[idx + 1] * w
}

/// Composite-Simpson quadrature of `sum_i C_i^T C_i` over `[t - window, t]`.
///
/// `quad_step` bounds the subinterval length; the count is rounded up to an
/// even number as Simpson requires. Summation order is fixed (nodes outer,
/// agents inner), so repeated evaluations are bitwise identical.
pub fn cpe_window(
    bank: &RegressorBank,
    t: f64,
    window: f64,
    quad_step: f64,
) -> Result<DMatrix<f64>> {
    if !(window > 0.0) || t < window {
        return Err(Error::BadWindow {
            t0: t - window,
            t1: t,
        });
    }
    simpson_matrix(t - window, t, quad_step, |s| bank.sum_ctc(s))
}

/// Composite Simpson for a matrix-valued integrand.
pub(crate) fn simpson_matrix(
    a: f64,
    b: f64,
    max_step: f64,
    f: impl Fn(f64) -> DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if !(b > a) {
        return Err(Error::BadWindow { t0: a, t1: b });
    }
    if !(max_step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quadrature step must be positive, got {max_step}"
        )));
    }
    let len = b - a;
    let mut m = ((len / max_step - 1e-12).ceil() as usize).max(2);
    if m % 2 == 1 {
        m += 1;
    }
    let h = len / (m as f64);
    let mut acc = f(a);
    for k in 1..m {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + h * (k as f64)) * weight;
    }
    acc += f(b);
    Ok(acc * (h / 3.0))
}

/// Scan windows `[t - T, t]` for `t` on a uniform grid over `[T, horizon]`
/// and extract the excitation constants. Fails with the worst window when
/// cooperative excitation falls below `DEFAULT_CPE_TOL`.
pub fn cpe_bounds(
    bank: &RegressorBank,
    window: f64,
    horizon: f64,
    samples: usize,
    quad_step: f64,
) -> Result<ExcitationReport> {
    if !(horizon >= 2.0 * window) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must cover at least two windows of length {window}"
        )));
    }
    let samples = samples.max(2);
    let ends: Vec<f64> = (0..samples)
        .map(|k| window + (horizon - window) * (k as f64) / ((samples - 1) as f64))
        .collect();

    let extrema: Vec<(f64, f64)> = ends
        .par_iter()
        .map(|&t| {
            let w = cpe_window(bank, t, window, quad_step)?;
            Ok(sym_eig_extrema(&w))
        })
        .collect::<Result<_>>()?;

    let mut iota1_lower = f64::INFINITY;
    let mut iota1_upper = f64::NEG_INFINITY;
    let mut t_worst = ends[0];
    for (&t, &(lo, hi)) in ends.iter().zip(&extrema) {
        if lo < iota1_lower {
            iota1_lower = lo;
            t_worst = t;
        }
        iota1_upper = iota1_upper.max(hi);
    }
    if iota1_lower < DEFAULT_CPE_TOL {
        return Err(Error::CpeViolated {
            t_worst,
            lambda_min: iota1_lower,
        });
    }

    // r2 is the uniform bound on the instantaneous regressor Gram norm.
    let r2_times: Vec<f64> = (0..samples)
        .map(|k| horizon * (k as f64) / ((samples - 1) as f64))
        .collect();
    let r2 = r2_times
        .par_iter()
        .map(|&s| {
            (0..bank.agent_count())
                .map(|i| {
                    let c = bank.eval(i, s);
                    spectral_norm(&(c.transpose() * c))
                })
                .fold(0.0f64, f64::max)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0f64, f64::max);

    Ok(ExcitationReport {
        window,
        iota1_lower,
        iota1_upper,
        r2,
    })
}
