//! The consensus + innovations estimator and its error dynamics.
//!
//! Each agent runs a gradient-descent update on its local measurement
//! residual plus a consensus term penalizing disagreement with its
//! neighbors. Stacked over agents the estimate obeys
//!
//! ```text
//! xhat' = -alpha Gbar Lbar xhat - Gbar Cbar^T (Cbar xhat - ybar)
//! ```
//!
//! which is a plain gradient flow for the stacked output map
//! `Lambda(t) = [Cbar(t); sqrt(alpha) D^T(t) (x) I_N]`. Both right-hand
//! side formulations are implemented and cross-checked; simulations use
//! fixed-step RK4 on grids aligned with every graph breakpoint.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::excitation::RegressorBank;
use crate::linalg::{kron_identity_right, sym_eigenvalues};
use crate::netgraph::GraphSchedule;
use crate::stepper::{integrate, time_grid};
use crate::{Error, Result};

/// Block-diagonal SPD gradient gain, one `N x N` block per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaBar {
    blocks: Vec<DMatrix<f64>>,
    n_params: usize,
}

impl GammaBar {
    /// Validate symmetry and positive definiteness (via Cholesky) of every
    /// block.
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidParameter(
                "gain needs at least one block".into(),
            ));
        }
        let n_params = blocks[0].nrows();
        for (index, b) in blocks.iter().enumerate() {
            if b.nrows() != n_params || b.ncols() != n_params {
                return Err(Error::GainNotSpd {
                    index,
                    reason: format!(
                        "block is {}x{}, expected {n_params}x{n_params}",
                        b.nrows(),
                        b.ncols()
                    ),
                });
            }
            let asym = (b - b.transpose()).norm();
            if asym > 1e-12 * b.norm().max(1.0) {
                return Err(Error::GainNotSpd {
                    index,
                    reason: format!("asymmetry norm {asym:.3e}"),
                });
            }
            if nalgebra::Cholesky::new(b.clone()).is_none() {
                return Err(Error::GainNotSpd {
                    index,
                    reason: "Cholesky factorization failed".into(),
                });
            }
        }
        Ok(Self { blocks, n_params })
    }

    /// `g * I` blocks for every agent.
    pub fn uniform(n_agents: usize, n_params: usize, g: f64) -> Result<Self> {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::GainNotSpd {
                index: 0,
                reason: format!("scalar gain must be positive and finite, got {g}"),
            });
        }
        Self::new(vec![DMatrix::identity(n_params, n_params) * g; n_agents])
    }

    pub fn agent_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.len() * self.n_params
    }

    /// Apply the block-diagonal gain to a stacked vector.
    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        let np = self.n_params;
        for (i, b) in self.blocks.iter().enumerate() {
            let seg = v.rows(i * np, np);
            out.rows_mut(i * np, np).copy_from(&(b * seg));
        }
        out
    }

    /// `Gbar * M` for a stacked matrix.
    pub fn apply_mat_left(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        let np = self.n_params;
        for (i, b) in self.blocks.iter().enumerate() {
            let rows = m.rows(i * np, np);
            out.rows_mut(i * np, np).copy_from(&(b * rows));
        }
        out
    }

    /// `M * Gbar` for a stacked matrix.
    pub fn apply_mat_right(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        let np = self.n_params;
        for (i, b) in self.blocks.iter().enumerate() {
            let cols = m.columns(i * np, np);
            out.columns_mut(i * np, np).copy_from(&(cols * b));
        }
        out
    }

    /// Dense `nN x nN` materialization.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut out = DMatrix::zeros(dim, dim);
        let np = self.n_params;
        for (i, b) in self.blocks.iter().enumerate() {
            out.view_mut((i * np, i * np), (np, np)).copy_from(b);
        }
        out
    }

    /// Block-diagonal inverse (blocks are SPD by construction).
    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut out = DMatrix::zeros(dim, dim);
        let np = self.n_params;
        for (i, b) in self.blocks.iter().enumerate() {
            let inv = nalgebra::Cholesky::new(b.clone())
                .expect("blocks validated SPD at construction")
                .inverse();
            out.view_mut((i * np, i * np), (np, np)).copy_from(&inv);
        }
        out
    }

    /// Smallest and largest eigenvalue over all blocks.
    pub fn eig_extrema(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for b in &self.blocks {
            let ev = sym_eigenvalues(b);
            lo = lo.min(ev[0]);
            hi = hi.max(ev[ev.len() - 1]);
        }
        (lo, hi)
    }

    /// `r1 = ||Gbar||` (the largest block eigenvalue, blocks being SPD).
    pub fn norm(&self) -> f64 {
        self.eig_extrema().1
    }
}

/// Gains, consensus weight, and integration settings for one estimator run.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub gamma: GammaBar,
    pub alpha: f64,
    pub step: f64,
    pub horizon: f64,
}

impl EstimatorConfig {
    pub fn new(gamma: GammaBar, alpha: f64, step: f64, horizon: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "consensus gain alpha must be strictly positive, got {alpha}"
            )));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {step}"
            )));
        }
        if !(horizon >= step) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} must be at least one step {step}"
            )));
        }
        Ok(Self {
            gamma,
            alpha,
            step,
            horizon,
        })
    }
}

/// Assembled stacked output map at one time instant.
#[derive(Debug, Clone)]
pub struct OutputMap {
    /// `Lambda(t)`, dimensions `(n N_y + N n_e(t)) x nN`.
    pub lambda: DMatrix<f64>,
    pub n_edges: usize,
    pub n_agents: usize,
    pub n_params: usize,
    pub n_outputs: usize,
}

impl OutputMap {
    /// `Lambda^T Lambda`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.lambda.transpose() * &self.lambda
    }

    /// Rows of the consensus block (below the measurement block).
    pub fn consensus_rows(&self) -> std::ops::Range<usize> {
        self.n_agents * self.n_outputs..self.lambda.nrows()
    }
}

fn check_bank_graph(bank: &RegressorBank, graph: &GraphSchedule) -> Result<()> {
    if bank.agent_count() != graph.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "bank has {} agents, graph has {} nodes",
            bank.agent_count(),
            graph.node_count()
        )));
    }
    Ok(())
}

/// Assemble `Lambda(t) = [Cbar(t); sqrt(alpha) D^T(t) (x) I_N]`.
pub fn assemble_lambda(
    bank: &RegressorBank,
    graph: &GraphSchedule,
    alpha: f64,
    t: f64,
) -> Result<OutputMap> {
    check_bank_graph(bank, graph)?;
    let n = bank.agent_count();
    let np = bank.n_params();
    let ny = bank.n_outputs();
    let edges = graph.edges_at(t)?.to_vec();
    let ne = edges.len();
    let mut lambda = DMatrix::zeros(n * ny + np * ne, n * np);
    for i in 0..n {
        let c = bank.eval(i, t);
        lambda.view_mut((i * ny, i * np), (ny, np)).copy_from(&c);
    }
    let sa = alpha.sqrt();
    for (e, &(i, j)) in edges.iter().enumerate() {
        for k in 0..np {
            let row = n * ny + e * np + k;
            lambda[(row, (i - 1) * np + k)] = sa;
            lambda[(row, (j - 1) * np + k)] = -sa;
        }
    }
    Ok(OutputMap {
        lambda,
        n_edges: ne,
        n_agents: n,
        n_params: np,
        n_outputs: ny,
    })
}

/// `Lambda^T(t) Lambda(t) = Cbar^T Cbar + alpha Lbar`, assembled blockwise
/// without forming `Lambda` itself.
pub fn lambda_gram(
    bank: &RegressorBank,
    graph: &GraphSchedule,
    alpha: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    check_bank_graph(bank, graph)?;
    let np = bank.n_params();
    let mut s = kron_identity_right(&graph.laplacian(t)?, np) * alpha;
    for (i, block) in bank.blocks_ctc(t).into_iter().enumerate() {
        let mut view = s.view_mut((i * np, i * np), (np, np));
        view += block;
    }
    Ok(s)
}

/// Stack `n` copies of a parameter vector: `1_n (x) theta`.
pub fn stack_copies(n: usize, theta: &DVector<f64>) -> DVector<f64> {
    let np = theta.len();
    let mut out = DVector::zeros(n * np);
    for i in 0..n {
        out.rows_mut(i * np, np).copy_from(theta);
    }
    out
}

/// Estimator right-hand side in consensus + innovations form:
/// `-alpha Gbar Lbar xhat - Gbar Cbar^T (Cbar xhat - ybar)`.
///
/// `y_measured` stacks the agents' measured outputs at time `t`.
pub fn ci_rhs(
    xhat: &DVector<f64>,
    config: &EstimatorConfig,
    bank: &RegressorBank,
    graph: &GraphSchedule,
    y_measured: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    check_bank_graph(bank, graph)?;
    let n = bank.agent_count();
    let np = bank.n_params();
    let ny = bank.n_outputs();
    if xhat.len() != n * np {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, expected {}",
            xhat.len(),
            n * np
        )));
    }
    if y_measured.len() != n * ny {
        return Err(Error::DimensionMismatch(format!(
            "measurement has length {}, expected {}",
            y_measured.len(),
            n * ny
        )));
    }
    let l = graph.laplacian(t)?;
    let mut drive = DVector::zeros(n * np);
    for i in 0..n {
        // Consensus term: (Lbar xhat)_i = sum_j L_ij xhat_j.
        let mut cons = DVector::zeros(np);
        for j in 0..n {
            let lij = l[(i, j)];
            if lij != 0.0 {
                cons.axpy(lij, &xhat.rows(j * np, np).into_owned(), 1.0);
            }
        }
        let c = bank.eval(i, t);
        let residual = &c * xhat.rows(i * np, np) - y_measured.rows(i * ny, ny);
        let innov = c.transpose() * residual;
        drive
            .rows_mut(i * np, np)
            .copy_from(&(cons * config.alpha + innov));
    }
    Ok(-config.gamma.apply_vec(&drive))
}

/// Same right-hand side in gradient-descent form
/// `-Gbar Lambda^T (Lambda xhat - y)` with the zero-padded stacked output.
pub fn ci_rhs_gradient_form(
    xhat: &DVector<f64>,
    config: &EstimatorConfig,
    bank: &RegressorBank,
    graph: &GraphSchedule,
    y_measured: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let map = assemble_lambda(bank, graph, config.alpha, t)?;
    let n_y = bank.agent_count() * bank.n_outputs();
    let mut y_full = DVector::zeros(map.lambda.nrows());
    y_full.rows_mut(0, n_y).copy_from(y_measured);
    let residual = &map.lambda * xhat - y_full;
    Ok(-config.gamma.apply_vec(&(map.lambda.transpose() * residual)))
}

/// Error dynamics under an additive affine disturbance:
/// `-Gbar Lambda^T Lambda xtilde + delta_iss`.
pub fn affine_disturbed_rhs(
    xtilde: &DVector<f64>,
    config: &EstimatorConfig,
    bank: &RegressorBank,
    graph: &GraphSchedule,
    delta_iss: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let s = lambda_gram(bank, graph, config.alpha, t)?;
    Ok(-config.gamma.apply_vec(&(&s * xtilde)) + delta_iss)
}

/// Nominal estimator trajectory: stacked estimates plus the constant truth.
#[derive(Debug, Clone)]
pub struct NominalTrajectory {
    pub times: Vec<f64>,
    pub xhat: Vec<DVector<f64>>,
    pub theta: DVector<f64>,
    pub n_agents: usize,
}

impl NominalTrajectory {
    pub fn xtilde(&self, k: usize) -> DVector<f64> {
        &self.xhat[k] - stack_copies(self.n_agents, &self.theta)
    }

    pub fn error_norms(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|k| self.xtilde(k).norm())
            .collect()
    }
}

/// Integrate the estimator from `x0` against exact measurements of a
/// constant parameter vector.
pub fn simulate_nominal(
    config: &EstimatorConfig,
    bank: &RegressorBank,
    graph: &GraphSchedule,
    x0: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<NominalTrajectory> {
    check_bank_graph(bank, graph)?;
    let n = bank.agent_count();
    let ny = bank.n_outputs();
    if theta.len() != bank.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, expected {}",
            theta.len(),
            bank.n_params()
        )));
    }
    let grid = time_grid(0.0, config.horizon, config.step, &graph.breakpoints())?;
    let measure = |t: f64| -> DVector<f64> {
        let mut y = DVector::zeros(n * ny);
        for i in 0..n {
            y.rows_mut(i * ny, ny).copy_from(&(bank.eval(i, t) * theta));
        }
        y
    };
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    integrate(
        &grid,
        x0.clone(),
        |t, x| ci_rhs(x, config, bank, graph, &measure(t), t).expect("dims validated"),
        |t, x| {
            times.push(t);
            states.push(x.clone());
        },
    )?;
    Ok(NominalTrajectory {
        times,
        xhat: states,
        theta: theta.clone(),
        n_agents: n,
    })
}

/// Disturbance channel: signal, parameter-drift projection and output
/// projection split into measurement rows and one template row repeated
/// across every consensus row (the row count tracks `n_e(t)`).
#[derive(Clone)]
pub struct DisturbanceSpec {
    pub delta: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    pub dim: usize,
    /// Per-agent drift projection `Delta_1` (`N x r`); stacked as
    /// `1_n (x) Delta_1`.
    pub delta1: DMatrix<f64>,
    /// Measurement-row block of `Delta_2` (`n N_y x r`).
    pub delta2_meas: DMatrix<f64>,
    /// Template repeated across all `N n_e(t)` consensus rows (`1 x r`).
    pub delta2_comm_row: DMatrix<f64>,
}

impl std::fmt::Debug for DisturbanceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DisturbanceSpec")
            .field("dim", &self.dim)
            .finish()
    }
}

impl DisturbanceSpec {
    /// Stacked drift projection `1_n (x) Delta_1`.
    pub fn delta1_bar(&self, n_agents: usize) -> DMatrix<f64> {
        let (np, r) = (self.delta1.nrows(), self.delta1.ncols());
        let mut out = DMatrix::zeros(n_agents * np, r);
        for i in 0..n_agents {
            out.view_mut((i * np, 0), (np, r)).copy_from(&self.delta1);
        }
        out
    }

    /// Output projection for a graph interval with `n_edges` edges.
    pub fn delta2_bar(&self, n_params: usize, n_edges: usize) -> DMatrix<f64> {
        let r = self.delta2_meas.ncols();
        let meas_rows = self.delta2_meas.nrows();
        let mut out = DMatrix::zeros(meas_rows + n_params * n_edges, r);
        out.view_mut((0, 0), (meas_rows, r))
            .copy_from(&self.delta2_meas);
        for row in meas_rows..out.nrows() {
            out.row_mut(row).copy_from(&self.delta2_comm_row.row(0));
        }
        out
    }

    /// All-zero disturbance with the dimensions of `bank`/`graph`.
    pub fn zero(n_agents: usize, n_params: usize, n_outputs: usize, r: usize) -> Self {
        Self {
            delta: Arc::new(move |_t: f64| DVector::zeros(r)),
            dim: r,
            delta1: DMatrix::zeros(n_params, r),
            delta2_meas: DMatrix::zeros(n_agents * n_outputs, r),
            delta2_comm_row: DMatrix::zeros(1, r),
        }
    }
}

/// Performance output selection.
#[derive(Debug, Clone)]
pub enum PerformanceOutput {
    /// `z = Q xtilde + W delta`, `Q: p x nN`.
    Standard { q: DMatrix<f64>, w: DMatrix<f64> },
    /// `z = Q Lambda xtilde + W delta`, `Q: p x (n N_y + N n_e)`.
    OutputError { q: DMatrix<f64>, w: DMatrix<f64> },
}

impl PerformanceOutput {
    pub fn p_dim(&self) -> usize {
        match self {
            PerformanceOutput::Standard { q, .. } | PerformanceOutput::OutputError { q, .. } => {
                q.nrows()
            }
        }
    }

    fn evaluate(
        &self,
        xtilde: &DVector<f64>,
        map: &OutputMap,
        delta: &DVector<f64>,
    ) -> DVector<f64> {
        match self {
            PerformanceOutput::Standard { q, w } => q * xtilde + w * delta,
            PerformanceOutput::OutputError { q, w } => q * (&map.lambda * xtilde) + w * delta,
        }
    }
}

/// Disturbed error trajectory with the sampled performance output and
/// disturbance.
#[derive(Debug, Clone)]
pub struct DisturbedTrajectory {
    pub times: Vec<f64>,
    pub xtilde: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub delta: Vec<DVector<f64>>,
}

/// Integrate the disturbed error dynamics
/// `xtilde' = -Gbar Lambda^T Lambda xtilde + (Gbar Lambda^T Delta2 - Delta1) delta(t)`
/// and record the performance output at every node.
pub fn simulate_disturbed(
    config: &EstimatorConfig,
    bank: &RegressorBank,
    graph: &GraphSchedule,
    dist: &DisturbanceSpec,
    perf: &PerformanceOutput,
    x0_err: &DVector<f64>,
) -> Result<DisturbedTrajectory> {
    check_bank_graph(bank, graph)?;
    let n = bank.agent_count();
    let np = bank.n_params();
    if dist.delta1.nrows() != np || dist.delta1.ncols() != dist.dim {
        return Err(Error::DimensionMismatch(format!(
            "delta1 is {}x{}, expected {}x{}",
            dist.delta1.nrows(),
            dist.delta1.ncols(),
            np,
            dist.dim
        )));
    }
    if dist.delta2_meas.nrows() != n * bank.n_outputs() || dist.delta2_meas.ncols() != dist.dim {
        return Err(Error::DimensionMismatch(
            "delta2 measurement block shape".into(),
        ));
    }
    let delta1_bar = dist.delta1_bar(n);
    let grid = time_grid(0.0, config.horizon, config.step, &graph.breakpoints())?;

    let rhs = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        let map = assemble_lambda(bank, graph, config.alpha, t).expect("dims validated");
        let d2 = dist.delta2_bar(np, map.n_edges);
        let delta = (dist.delta)(t);
        let residual = &map.lambda * x - d2 * &delta;
        -config.gamma.apply_vec(&(map.lambda.transpose() * residual)) - &delta1_bar * delta
    };

    let mut times = Vec::with_capacity(grid.len());
    let mut xs = Vec::with_capacity(grid.len());
    let mut zs = Vec::with_capacity(grid.len());
    let mut deltas = Vec::with_capacity(grid.len());
    integrate(&grid, x0_err.clone(), rhs, |t, x| {
        let map = assemble_lambda(bank, graph, config.alpha, t).expect("dims validated");
        let delta = (dist.delta)(t);
        zs.push(perf.evaluate(x, &map, &delta));
        deltas.push(delta);
        times.push(t);
        xs.push(x.clone());
    })?;
    Ok(DisturbedTrajectory {
        times,
        xtilde: xs,
        z: zs,
        delta: deltas,
    })
}

/// Integrate `xtilde' = -Gbar Lambda^T Lambda xtilde + delta_iss(t)`.
pub fn simulate_affine(
    config: &EstimatorConfig,
    bank: &RegressorBank,
    graph: &GraphSchedule,
    delta_iss: impl Fn(f64) -> DVector<f64>,
    x0_err: &DVector<f64>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    check_bank_graph(bank, graph)?;
    let grid = time_grid(0.0, config.horizon, config.step, &graph.breakpoints())?;
    let mut times = Vec::with_capacity(grid.len());
    let mut xs = Vec::with_capacity(grid.len());
    integrate(
        &grid,
        x0_err.clone(),
        |t, x| {
            affine_disturbed_rhs(x, config, bank, graph, &delta_iss(t), t).expect("dims validated")
        },
        |t, x| {
            times.push(t);
            xs.push(x.clone());
        },
    )?;
    Ok((times, xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::RegressorFn;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sin_bank(n: usize, np: usize) -> RegressorBank {
        let agents: Vec<RegressorFn> = (0..n)
            .map(|i| {
                let phase = 0.7 * (i as f64);
                Arc::new(move |t: f64| {
                    let mut row = DMatrix::zeros(1, np);
                    for k in 0..np {
                        row[(0, k)] = ((k as f64 + 1.0) * t + phase).sin() + 0.2 * (k as f64);
                    }
                    row
                }) as RegressorFn
            })
            .collect();
        RegressorBank::new(agents, np, 1).unwrap()
    }

    fn small_config(n: usize, np: usize, g: f64, alpha: f64) -> EstimatorConfig {
        EstimatorConfig::new(GammaBar::uniform(n, np, g).unwrap(), alpha, 1e-3, 1.0).unwrap()
    }

    #[test]
    fn gamma_bar_rejects_non_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // indefinite
        assert!(matches!(
            GammaBar::new(vec![bad]),
            Err(Error::GainNotSpd { .. })
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GammaBar::new(vec![asym]).is_err());
    }

    #[test]
    fn single_agent_lambda_is_the_regressor() {
        let bank = sin_bank(1, 3);
        let graph = GraphSchedule::constant(1, vec![]).unwrap();
        let map = assemble_lambda(&bank, &graph, 0.7, 1.3).unwrap();
        assert_eq!(map.lambda, bank.eval(0, 1.3));
        assert_eq!(map.n_edges, 0);
    }

    #[test]
    fn consensus_block_annihilates_stacked_parameter() {
        let bank = sin_bank(4, 3);
        let graph = GraphSchedule::new(
            4,
            vec![(0.0, vec![(1, 2), (2, 3), (3, 4)]), (0.5, vec![(1, 4)])],
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for t in [0.0, 0.3, 0.5, 2.0] {
            let map = assemble_lambda(&bank, &graph, 1.3, t).unwrap();
            let theta = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let out = &map.lambda * stack_copies(4, &theta);
            for row in map.consensus_rows() {
                assert_eq!(
                    out[row], 0.0,
                    "consensus row {row} not exactly zero at t={t}"
                );
            }
        }
    }

    #[test]
    fn gram_matches_block_assembly() {
        let bank = sin_bank(5, 3);
        let graph = GraphSchedule::ring(5).unwrap();
        for t in [0.0, 0.9, 4.2] {
            let map = assemble_lambda(&bank, &graph, 1.05, t).unwrap();
            let direct = map.gram();
            let blockwise = lambda_gram(&bank, &graph, 1.05, t).unwrap();
            assert!((direct - blockwise).norm() < 1e-12);
        }
    }

    #[test]
    fn rhs_zero_at_consensus_on_truth() {
        let bank = sin_bank(3, 2);
        let graph = GraphSchedule::ring(3).unwrap();
        let config = small_config(3, 2, 1.5, 0.8);
        let theta = DVector::from_vec(vec![0.4, -1.1]);
        let xhat = stack_copies(3, &theta);
        let y = {
            let mut y = DVector::zeros(3);
            for i in 0..3 {
                y.rows_mut(i, 1).copy_from(&(bank.eval(i, 0.6) * &theta));
            }
            y
        };
        let rhs = ci_rhs(&xhat, &config, &bank, &graph, &y, 0.6).unwrap();
        assert_eq!(rhs.norm(), 0.0);
    }

    #[test]
    fn single_agent_identity_regressor_is_plain_gradient_flow() {
        let np = 2;
        let agents: Vec<RegressorFn> = vec![Arc::new(move |_t: f64| DMatrix::identity(np, np))];
        let bank = RegressorBank::new(agents, np, np).unwrap();
        let graph = GraphSchedule::constant(1, vec![]).unwrap();
        let config = small_config(1, np, 1.0, 1.0);
        let theta = DVector::from_vec(vec![1.0, -2.0]);
        let xhat = DVector::from_vec(vec![3.0, 0.5]);
        let rhs = ci_rhs(&xhat, &config, &bank, &graph, &theta, 0.0).unwrap();
        assert!((rhs - (theta - xhat)).norm() < 1e-14);
    }

    #[test]
    fn both_formulations_agree_on_random_states() {
        let bank = sin_bank(4, 3);
        let graph = GraphSchedule::new(
            4,
            vec![
                (0.0, vec![(1, 2), (2, 3), (3, 4), (1, 4)]),
                (0.7, vec![(1, 3), (2, 4)]),
            ],
        )
        .unwrap();
        let config = small_config(4, 3, 2.0, 1.3);
        let mut rng = StdRng::seed_from_u64(42);
        for k in 0..1000 {
            let t = rng.random_range(0.0..2.0);
            let xhat = DVector::from_fn(12, |_, _| rng.random_range(-5.0..5.0));
            let y = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let a = ci_rhs(&xhat, &config, &bank, &graph, &y, t).unwrap();
            let b = ci_rhs_gradient_form(&xhat, &config, &bank, &graph, &y, t).unwrap();
            let tol = 1e-10 * (1.0 + xhat.norm());
            assert!(
                (&a - &b).norm() <= tol,
                "case {k}: {} > {tol}",
                (a - b).norm()
            );
        }
    }

    #[test]
    fn equilibrium_is_invariant_under_simulation() {
        let bank = sin_bank(3, 2);
        let graph = GraphSchedule::ring(3).unwrap();
        let config = small_config(3, 2, 1.0, 1.0);
        let theta = DVector::from_vec(vec![0.7, -0.2]);
        let x0 = stack_copies(3, &theta);
        let traj = simulate_nominal(&config, &bank, &graph, &x0, &theta).unwrap();
        for k in [0, traj.times.len() / 2, traj.times.len() - 1] {
            assert_eq!(traj.xtilde(k).norm(), 0.0);
        }
    }

    #[test]
    fn scalar_closed_form_decay() {
        // n = N = N_y = 1, C = 1, Gamma = g: xtilde(t) = xtilde(0) e^{-g t}.
        let agents: Vec<RegressorFn> = vec![Arc::new(|_t: f64| DMatrix::from_element(1, 1, 1.0))];
        let bank = RegressorBank::new(agents, 1, 1).unwrap();
        let graph = GraphSchedule::constant(1, vec![]).unwrap();
        let g = 1.7;
        let config =
            EstimatorConfig::new(GammaBar::uniform(1, 1, g).unwrap(), 1.0, 1e-3, 1.0).unwrap();
        let theta = DVector::from_vec(vec![0.0]);
        let x0 = DVector::from_vec(vec![1.0]);
        let traj = simulate_nominal(&config, &bank, &graph, &x0, &theta).unwrap();
        let end = traj.xhat.last().unwrap()[0];
        assert!((end - (-g).exp()).abs() < 1e-8, "{end}");
    }

    #[test]
    fn rk4_order_on_scalar_case() {
        let agents: Vec<RegressorFn> = vec![Arc::new(|t: f64| {
            DMatrix::from_element(1, 1, 1.0 + 0.5 * t.sin())
        })];
        let bank = RegressorBank::new(agents, 1, 1).unwrap();
        let graph = GraphSchedule::constant(1, vec![]).unwrap();
        let theta = DVector::from_vec(vec![0.0]);
        let x0 = DVector::from_vec(vec![1.0]);
        let run = |h: f64| {
            let config =
                EstimatorConfig::new(GammaBar::uniform(1, 1, 1.0).unwrap(), 1.0, h, 1.0).unwrap();
            simulate_nominal(&config, &bank, &graph, &x0, &theta)
                .unwrap()
                .xhat
                .last()
                .unwrap()[0]
        };
        let fine = run(1e-4);
        let e1 = (run(4e-2) - fine).abs();
        let e2 = (run(2e-2) - fine).abs();
        let ratio = e1 / e2;
        assert!((10.0..24.0).contains(&ratio), "O(h^4) ratio {ratio}");
    }

    #[test]
    fn zero_disturbance_matches_affine_zero_bitwise() {
        let bank = sin_bank(3, 2);
        let graph = GraphSchedule::ring(3).unwrap();
        let config = small_config(3, 2, 1.2, 0.9);
        let x0 = DVector::from_fn(6, |i, _| 0.3 * (i as f64) - 0.8);
        let dist = DisturbanceSpec::zero(3, 2, 1, 2);
        let perf = PerformanceOutput::Standard {
            q: DMatrix::zeros(1, 6),
            w: DMatrix::zeros(1, 2),
        };
        let disturbed = simulate_disturbed(&config, &bank, &graph, &dist, &perf, &x0).unwrap();
        let (_, affine) =
            simulate_affine(&config, &bank, &graph, |_| DVector::zeros(6), &x0).unwrap();
        // The two right-hand sides associate the products differently
        // (Lambda^T (Lambda x) vs (Lambda^T Lambda) x), so agreement is up
        // to rounding, not bitwise.
        for (a, b) in disturbed.xtilde.iter().zip(&affine) {
            assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn zero_projections_ignore_arbitrary_delta() {
        let bank = sin_bank(3, 2);
        let graph = GraphSchedule::ring(3).unwrap();
        let config = small_config(3, 2, 1.2, 0.9);
        let x0 = DVector::from_fn(6, |i, _| (i as f64) * 0.1 + 0.2);
        let mut noisy = DisturbanceSpec::zero(3, 2, 1, 2);
        noisy.delta = Arc::new(|t: f64| DVector::from_vec(vec![(50.0 * t).sin(), t.cos() * 3.0]));
        let quiet = DisturbanceSpec::zero(3, 2, 1, 2);
        let perf = PerformanceOutput::Standard {
            q: DMatrix::zeros(1, 6),
            w: DMatrix::zeros(1, 2),
        };
        let a = simulate_disturbed(&config, &bank, &graph, &noisy, &perf, &x0).unwrap();
        let b = simulate_disturbed(&config, &bank, &graph, &quiet, &perf, &x0).unwrap();
        for (xa, xb) in a.xtilde.iter().zip(&b.xtilde) {
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn disturbed_with_zero_delta_tracks_nominal_error() {
        let bank = sin_bank(3, 2);
        let graph = GraphSchedule::ring(3).unwrap();
        let config = small_config(3, 2, 1.2, 0.9);
        let theta = DVector::from_vec(vec![0.5, -0.3]);
        let x0_err = DVector::from_fn(6, |i, _| 0.2 * (i as f64) - 0.5);
        let x0 = stack_copies(3, &theta) + &x0_err;
        let nominal = simulate_nominal(&config, &bank, &graph, &x0, &theta).unwrap();
        let dist = DisturbanceSpec::zero(3, 2, 1, 2);
        let perf = PerformanceOutput::Standard {
            q: DMatrix::zeros(1, 6),
            w: DMatrix::zeros(1, 2),
        };
        let disturbed = simulate_disturbed(&config, &bank, &graph, &dist, &perf, &x0_err).unwrap();
        for k in [0, nominal.times.len() / 2, nominal.times.len() - 1] {
            let diff = (nominal.xtilde(k) - &disturbed.xtilde[k]).norm();
            assert!(diff < 1e-9, "k={k}: {diff}");
        }
    }

    #[test]
    fn affine_constant_disturbance_scalar_steady_state() {
        let agents: Vec<RegressorFn> = vec![Arc::new(|_t: f64| DMatrix::from_element(1, 1, 2.0))];
        let bank = RegressorBank::new(agents, 1, 1).unwrap();
        let graph = GraphSchedule::constant(1, vec![]).unwrap();
        let g = 0.8;
        let config =
            EstimatorConfig::new(GammaBar::uniform(1, 1, g).unwrap(), 1.0, 1e-3, 20.0).unwrap();
        let d = 0.3;
        let (_, xs) = simulate_affine(
            &config,
            &bank,
            &graph,
            |_| DVector::from_vec(vec![d]),
            &DVector::zeros(1),
        )
        .unwrap();
        // Steady state d / (g C^2) with C = 2.
        let expect = d / (g * 4.0);
        assert!((xs.last().unwrap()[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn lambda_gram_norm_bounded_by_r4() {
        use crate::excitation::cpe_bounds;
        use crate::linalg::spectral_norm;
        // Constant-norm rows make r2 exact; r4 = r2 + alpha r3 then bounds
        // ||Lambda' Lambda|| at every instant.
        let agents: Vec<RegressorFn> = (0..4)
            .map(|i| {
                let phase = 1.1 * i as f64;
                Arc::new(move |t: f64| {
                    DMatrix::from_row_slice(1, 2, &[(t + phase).sin(), (t + phase).cos()])
                }) as RegressorFn
            })
            .collect();
        let bank = RegressorBank::new(agents, 2, 1).unwrap();
        let graph = GraphSchedule::ring(4).unwrap();
        let alpha = 0.8;
        let report = cpe_bounds(&bank, 1.0, 10.0, 300, 5e-3).unwrap();
        let r3 = graph.laplacian_norm_bound(10.0);
        let r4 = report.r4(alpha, r3);
        for k in 0..100 {
            let t = 0.1 * k as f64;
            let s = lambda_gram(&bank, &graph, alpha, t).unwrap();
            let norm = spectral_norm(&s);
            assert!(
                norm <= r4 * (1.0 + 1e-9),
                "t={t}: ||S|| = {norm} above r4 = {r4}"
            );
        }
    }

    #[test]
    fn simulation_lands_on_breakpoints() {
        let bank = sin_bank(3, 2);
        let graph = GraphSchedule::new(
            3,
            vec![
                (0.0, vec![(1, 2)]),
                (0.377, vec![(2, 3)]),
                (0.71, vec![(1, 3), (1, 2)]),
            ],
        )
        .unwrap();
        let config = small_config(3, 2, 1.0, 1.0);
        let theta = DVector::from_vec(vec![1.0, 2.0]);
        let traj = simulate_nominal(&config, &bank, &graph, &DVector::zeros(6), &theta).unwrap();
        for b in [0.377, 0.71] {
            assert!(traj.times.contains(&b), "breakpoint {b} missed");
        }
    }
}
