//! Scalar minimization helpers: coarse grid bracketing plus golden-section
//! polish. Used for the Gramian lower-bound min-max and the consensus-gain
//! line search.

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section_min(
    mut f: impl FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Grid scan over `[lo, hi]` with `grid` cells, then golden-section polish
/// inside the bracketing neighbors of the best node. Returns `(x, f(x))`.
pub(crate) fn grid_then_golden_min(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    grid: usize,
    tol: f64,
) -> (f64, f64) {
    let grid = grid.max(2);
    let mut best_k = 0usize;
    let mut best = f64::INFINITY;
    for k in 0..=grid {
        let x = lo + (hi - lo) * (k as f64) / (grid as f64);
        let v = f(x);
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let cell = (hi - lo) / (grid as f64);
    let b_lo = (lo + cell * (best_k as f64) - cell).max(lo);
    let b_hi = (lo + cell * (best_k as f64) + cell).min(hi);
    let (x, v) = golden_section_min(&mut f, b_lo, b_hi, tol, 200);
    if v < best {
        (x, v)
    } else {
        (lo + cell * (best_k as f64), best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_minimum() {
        let (x, v) = golden_section_min(|x| (x - 1.3) * (x - 1.3) + 2.0, 0.0, 4.0, 1e-12, 300);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_polish_resolves_kink() {
        // min of max(1 - x, 10 x - 5) is at the kink x = 6/11.
        let f = |x: f64| (1.0 - x).max(10.0 * x - 5.0);
        let (x, v) = grid_then_golden_min(f, 0.0, 1.0, 100, 1e-12);
        assert!((x - 6.0 / 11.0).abs() < 1e-9);
        assert!((v - 5.0 / 11.0).abs() < 1e-9);
    }
}
