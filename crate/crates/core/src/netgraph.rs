//! Time-varying undirected communication graphs.
//!
//! A [`GraphSchedule`] is piecewise constant in time: each interval carries
//! an explicit edge list, the last interval extends to infinity. Piecewise
//! constancy keeps every Laplacian integral exact and models intermittent
//! communication links.

use nalgebra::DMatrix;

use crate::linalg::sym_eigenvalues;
use crate::{Error, Result};

/// One constant-topology interval `[t_start, next t_start)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInterval {
    pub t_start: f64,
    /// Undirected edges as 1-based node pairs, stored with the smaller
    /// index first.
    pub edges: Vec<(usize, usize)>,
}

/// Piecewise-constant undirected graph on `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    node_count: usize,
    intervals: Vec<GraphInterval>,
}

/// Spectral constants extracted from a schedule: `r3` bounds the Laplacian
/// norm over time, `lambda_lower` bounds the nonzero eigenvalues of each
/// integrated Laplacian over windows of length `window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    pub r3: f64,
    pub lambda_lower: f64,
    pub window: f64,
}

/// Relative tolerance (w.r.t. the trace) below which an eigenvalue of the
/// integrated Laplacian counts as zero.
pub const ZERO_EIG_REL_TOL: f64 = 1e-9;

impl GraphSchedule {
    /// Validate and build a schedule. Intervals must start at `t = 0`, be
    /// strictly increasing, and contain only simple edges between valid
    /// nodes.
    pub fn new(node_count: usize, intervals: Vec<(f64, Vec<(usize, usize)>)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidSchedule("node count must be positive".into()));
        }
        if intervals.is_empty() {
            return Err(Error::InvalidSchedule(
                "schedule needs at least one interval".into(),
            ));
        }
        if intervals[0].0 != 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "first interval must start at t = 0, got {}",
                intervals[0].0
            )));
        }
        let mut built = Vec::with_capacity(intervals.len());
        let mut prev_start = f64::NEG_INFINITY;
        for (idx, (t_start, edges)) in intervals.into_iter().enumerate() {
            if !t_start.is_finite() || t_start <= prev_start {
                return Err(Error::InvalidSchedule(format!(
                    "interval {idx} start {t_start} is not strictly increasing"
                )));
            }
            prev_start = t_start;
            let mut normalized = Vec::with_capacity(edges.len());
            for (i, j) in edges {
                if i == j {
                    return Err(Error::InvalidSchedule(format!(
                        "interval {idx}: self-loop at node {i}"
                    )));
                }
                if i < 1 || j < 1 || i > node_count || j > node_count {
                    return Err(Error::InvalidSchedule(format!(
                        "interval {idx}: edge ({i}, {j}) outside 1..={node_count}"
                    )));
                }
                let e = (i.min(j), i.max(j));
                if normalized.contains(&e) {
                    return Err(Error::InvalidSchedule(format!(
                        "interval {idx}: duplicate edge ({}, {})",
                        e.0, e.1
                    )));
                }
                normalized.push(e);
            }
            built.push(GraphInterval {
                t_start,
                edges: normalized,
            });
        }
        Ok(Self {
            node_count,
            intervals: built,
        })
    }

    /// Constant graph: a single interval from `t = 0`.
    pub fn constant(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(node_count, vec![(0.0, edges)])
    }

    /// Ring on `n` nodes (the default benchmark topology).
    pub fn ring(n: usize) -> Result<Self> {
        let edges = (1..=n)
            .map(|i| (i, if i == n { 1 } else { i + 1 }))
            .collect();
        Self::constant(n, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn intervals(&self) -> &[GraphInterval] {
        &self.intervals
    }

    /// Interval breakpoints after `t = 0`, used to align integration steps.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.intervals.iter().skip(1).map(|iv| iv.t_start).collect()
    }

    fn interval_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(Error::TimeBeforeSchedule { t });
        }
        let mut idx = 0;
        for (i, iv) in self.intervals.iter().enumerate() {
            if iv.t_start <= t {
                idx = i;
            } else {
                break;
            }
        }
        Ok(idx)
    }

    /// Edge list active at time `t`.
    pub fn edges_at(&self, t: f64) -> Result<&[(usize, usize)]> {
        Ok(&self.intervals[self.interval_index(t)?].edges)
    }

    pub fn edge_count_at(&self, t: f64) -> Result<usize> {
        Ok(self.edges_at(t)?.len())
    }

    /// Oriented incidence matrix `D(t)`, `n x n_e(t)`. The lower node index
    /// of each edge is the source (+1), the higher one the sink (-1).
    pub fn incidence_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let edges = self.edges_at(t)?;
        let mut d = DMatrix::zeros(self.node_count, edges.len());
        for (col, &(i, j)) in edges.iter().enumerate() {
            d[(i - 1, col)] = 1.0;
            d[(j - 1, col)] = -1.0;
        }
        Ok(d)
    }

    /// Graph Laplacian `L(t) = D(t) D(t)^T`, assembled as degree minus
    /// adjacency (exact integer arithmetic in either route).
    pub fn laplacian(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(laplacian_from_edges(self.node_count, self.edges_at(t)?))
    }

    /// Exact integral of the Laplacian over `[t0, t1]` using the piecewise
    /// structure.
    pub fn integrated_laplacian(&self, t0: f64, t1: f64) -> Result<DMatrix<f64>> {
        if !(t1 > t0) {
            return Err(Error::BadWindow { t0, t1 });
        }
        if !(t0 >= 0.0) {
            return Err(Error::TimeBeforeSchedule { t: t0 });
        }
        let mut acc = DMatrix::zeros(self.node_count, self.node_count);
        for (i, iv) in self.intervals.iter().enumerate() {
            let seg_start = iv.t_start.max(t0);
            let seg_end = if i + 1 < self.intervals.len() {
                self.intervals[i + 1].t_start.min(t1)
            } else {
                t1
            };
            if seg_end > seg_start {
                let l = laplacian_from_edges(self.node_count, &iv.edges);
                acc += l * (seg_end - seg_start);
            }
        }
        Ok(acc)
    }

    /// Largest Laplacian eigenvalue over all intervals starting before
    /// `horizon`; this is the exact supremum of `||L(t)||` since the
    /// schedule is piecewise constant.
    pub fn laplacian_norm_bound(&self, horizon: f64) -> f64 {
        let mut r3: f64 = 0.0;
        for iv in &self.intervals {
            if iv.t_start > horizon {
                break;
            }
            let l = laplacian_from_edges(self.node_count, &iv.edges);
            let ev = sym_eigenvalues(&l);
            r3 = r3.max(ev[ev.len() - 1]);
        }
        r3
    }

    /// Verify connectivity on average over windows of length `window_t` and
    /// extract the spectral constants.
    ///
    /// Window end points are sampled at every interval breakpoint in
    /// `[window_t, horizon]` plus `grid_samples` uniformly spaced points.
    /// Each integrated Laplacian must have exactly one eigenvalue below the
    /// zero tolerance (relative to its trace); the returned `lambda_lower`
    /// is the smallest second eigenvalue seen.
    pub fn connectivity_on_average(
        &self,
        window_t: f64,
        horizon: f64,
        grid_samples: usize,
    ) -> Result<SpectralBounds> {
        if !(window_t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "window must be positive, got {window_t}"
            )));
        }
        if !(horizon >= window_t) {
            return Err(Error::BadWindow {
                t0: window_t,
                t1: horizon,
            });
        }
        let mut ends: Vec<f64> = Vec::new();
        for iv in &self.intervals {
            if iv.t_start >= window_t && iv.t_start <= horizon {
                ends.push(iv.t_start);
            }
        }
        let samples = grid_samples.max(1);
        for k in 0..=samples {
            ends.push(window_t + (horizon - window_t) * (k as f64) / (samples as f64));
        }
        ends.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ends.dedup();

        let mut lambda_lower = f64::INFINITY;
        for &t in &ends {
            let m = self.integrated_laplacian(t - window_t, t)?;
            let ev = sym_eigenvalues(&m);
            let tol = ZERO_EIG_REL_TOL * m.trace().max(1.0);
            let zero_count = ev.iter().filter(|&&v| v.abs() <= tol).count();
            if zero_count != 1 {
                return Err(Error::NotConnectedOnAverage { t, zero_count });
            }
            lambda_lower = lambda_lower.min(ev[1]);
        }
        Ok(SpectralBounds {
            r3: self.laplacian_norm_bound(horizon),
            lambda_lower,
            window: window_t,
        })
    }
}

fn laplacian_from_edges(n: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        let (a, b) = (i - 1, j - 1);
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
    }
    l
}
