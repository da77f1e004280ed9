//! Fixed-step classical RK4 stepping with breakpoint-aligned grids.
//!
//! Graph schedules are piecewise constant, so integrators must land a step
//! exactly on every interval boundary. [`time_grid`] splits a span into
//! segments between consecutive breakpoints and subdivides each segment
//! uniformly with steps no longer than the requested one.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// State vector or matrix an RK4 stepper can advance.
pub trait OdeState: Clone {
    /// `self += a * other`
    fn axpy_state(&mut self, a: f64, other: &Self);
    fn is_all_finite(&self) -> bool;
    fn state_norm(&self) -> f64;
}

impl OdeState for DVector<f64> {
    fn axpy_state(&mut self, a: f64, other: &Self) {
        self.axpy(a, other, 1.0);
    }
    fn is_all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn state_norm(&self) -> f64 {
        self.norm()
    }
}

impl OdeState for DMatrix<f64> {
    fn axpy_state(&mut self, a: f64, other: &Self) {
        *self += other * a;
    }
    fn is_all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn state_norm(&self) -> f64 {
        self.norm()
    }
}

/// Node times covering `[t0, t1]`: every breakpoint strictly inside the span
/// is hit exactly, and within each segment steps are uniform with length at
/// most `h`. Works for `t1 > t0` only.
pub fn time_grid(t0: f64, t1: f64, h: f64, breakpoints: &[f64]) -> Result<Vec<f64>> {
    if !(t1 > t0) {
        return Err(Error::BadWindow { t0, t1 });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {h}"
        )));
    }
    let mut edges = vec![t0];
    for &b in breakpoints {
        if b > t0 + 1e-15 && b < t1 - 1e-15 {
            edges.push(b);
        }
    }
    edges.push(t1);
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();

    let mut grid = vec![t0];
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = b - a;
        let n = ((len / h - 1e-12).ceil() as usize).max(1);
        for k in 1..n {
            grid.push(a + len * (k as f64) / (n as f64));
        }
        grid.push(b);
    }
    Ok(grid)
}

/// One classical RK4 step of size `h` from `(t, y)`.
pub fn rk4_step<S: OdeState>(t: f64, h: f64, y: &S, f: &mut impl FnMut(f64, &S) -> S) -> S {
    let k1 = f(t, y);
    let mut y2 = y.clone();
    y2.axpy_state(0.5 * h, &k1);
    let k2 = f(t + 0.5 * h, &y2);
    let mut y3 = y.clone();
    y3.axpy_state(0.5 * h, &k2);
    let k3 = f(t + 0.5 * h, &y3);
    let mut y4 = y.clone();
    y4.axpy_state(h, &k3);
    let k4 = f(t + h, &y4);

    let mut out = y.clone();
    out.axpy_state(h / 6.0, &k1);
    out.axpy_state(h / 3.0, &k2);
    out.axpy_state(h / 3.0, &k3);
    out.axpy_state(h / 6.0, &k4);
    out
}

/// Integrate `y' = f(t, y)` across a precomputed grid, invoking `observe`
/// at every node (including the first). Aborts on non-finite states.
pub fn integrate<S: OdeState>(
    grid: &[f64],
    y0: S,
    mut f: impl FnMut(f64, &S) -> S,
    mut observe: impl FnMut(f64, &S),
) -> Result<S> {
    let mut y = y0;
    observe(grid[0], &y);
    for pair in grid.windows(2) {
        let (t, t_next) = (pair[0], pair[1]);
        y = rk4_step(t, t_next - t, &y, &mut f);
        if !y.is_all_finite() {
            return Err(Error::NonFiniteState {
                t: t_next,
                norm: y.state_norm(),
            });
        }
        observe(t_next, &y);
    }
    Ok(y)
}
