//! Gain tuning through a block LMI with an eigenvalue feasibility oracle.
//!
//! The disturbed error system has a guaranteed L2-gain of `sqrt(gamma)`
//! whenever the symmetric block
//!
//! ```text
//! [ Phi11   Phi12      ]
//! [ Phi12'  -gamma2 I  ]  <= 0       and   gamma1 >= gamma2
//! ```
//!
//! is negative semidefinite, where the blocks collect the Gramian bounds,
//! the excitation constant `r4`, the disturbance projections and the
//! performance output. At fixed `c2` the block is affine in the scalars
//! `(gamma, c1, gamma1, gamma2)`, so minimizing `gamma` reduces to
//! bisection with a convex feasibility problem per candidate, solved here
//! by subgradient cutting planes on a shrinking box (the subgradient of
//! `lambda_max` comes from its unit eigenvector). Every answer is
//! certified by replaying the eigenvalue oracle; no external SDP solver
//! is involved.

use nalgebra::{DMatrix, DVector};

use crate::analysis::{empirical_iota3, GainRange};
use crate::estimator::GammaBar;
use crate::excitation::RegressorBank;
use crate::linalg::{sym_eig_max_pair, sym_eigenvalues};
use crate::netgraph::GraphSchedule;
use crate::opt::golden_section_min;
use crate::{Error, Result};

/// Which performance output the LMI is assembled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `z = Q xtilde + W delta`.
    Standard,
    /// `z = Q Lambda xtilde + W delta` (output-error form).
    OutputError,
}

/// Problem dimensions of one LMI instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmiDims {
    pub n_agents: usize,
    pub n_params: usize,
    pub n_outputs: usize,
    pub n_edges: usize,
    pub p: usize,
    pub r: usize,
}

impl LmiDims {
    /// Rows of the `Lambda` block: `n N_y + N n_e`.
    pub fn lambda_rows(&self) -> usize {
        self.n_agents * self.n_outputs + self.n_params * self.n_edges
    }

    /// Stacked state dimension `nN`.
    pub fn state_dim(&self) -> usize {
        self.n_agents * self.n_params
    }

    /// Side length of the assembled LMI block.
    pub fn block_dim(&self) -> usize {
        self.lambda_rows() + 2 * self.state_dim() + self.p + self.r
    }
}

/// Data defining the tuning LMI: excitation constants, disturbance
/// projections and the performance output.
#[derive(Debug, Clone)]
pub struct LmiInstance {
    pub variant: Variant,
    pub iota3_lower: f64,
    pub iota3_upper: f64,
    pub r4: f64,
    pub window: f64,
    /// `nN x r` drift projection.
    pub delta1_bar: DMatrix<f64>,
    /// `(n N_y + N n_e) x r` output projection.
    pub delta2_bar: DMatrix<f64>,
    /// `p x nN` (standard) or `p x (n N_y + N n_e)` (output-error).
    pub q: DMatrix<f64>,
    /// `p x r` feedthrough with orthonormal columns.
    pub w: DMatrix<f64>,
    pub dims: LmiDims,
}

const ORTHO_TOL: f64 = 1e-9;

impl LmiInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        variant: Variant,
        iota3_lower: f64,
        iota3_upper: f64,
        r4: f64,
        window: f64,
        delta1_bar: DMatrix<f64>,
        delta2_bar: DMatrix<f64>,
        q: DMatrix<f64>,
        w: DMatrix<f64>,
        dims: LmiDims,
    ) -> Result<Self> {
        if !(iota3_upper >= iota3_lower && iota3_lower > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Gramian bounds must satisfy iota3_upper >= iota3_lower > 0, got [{iota3_lower}, {iota3_upper}]"
            )));
        }
        if !(r4 > 0.0 && window > 0.0) {
            return Err(Error::InvalidParameter(
                "r4 and window must be positive".into(),
            ));
        }
        let (m1, m2) = (dims.lambda_rows(), dims.state_dim());
        if delta1_bar.shape() != (m2, dims.r) {
            return Err(Error::DimensionMismatch(format!(
                "delta1_bar is {:?}, expected ({m2}, {})",
                delta1_bar.shape(),
                dims.r
            )));
        }
        if delta2_bar.shape() != (m1, dims.r) {
            return Err(Error::DimensionMismatch(format!(
                "delta2_bar is {:?}, expected ({m1}, {})",
                delta2_bar.shape(),
                dims.r
            )));
        }
        let q_cols = match variant {
            Variant::Standard => m2,
            Variant::OutputError => m1,
        };
        if q.shape() != (dims.p, q_cols) {
            return Err(Error::DimensionMismatch(format!(
                "q is {:?}, expected ({}, {q_cols})",
                q.shape(),
                dims.p
            )));
        }
        if w.shape() != (dims.p, dims.r) {
            return Err(Error::DimensionMismatch(format!(
                "w is {:?}, expected ({}, {})",
                w.shape(),
                dims.p,
                dims.r
            )));
        }
        let wtw = w.transpose() * &w;
        if (&wtw - DMatrix::<f64>::identity(dims.r, dims.r)).norm() > ORTHO_TOL {
            return Err(Error::InvalidParameter(
                "feedthrough W must have orthonormal columns (W'W = I)".into(),
            ));
        }
        if (q.transpose() * &w).norm() > ORTHO_TOL {
            return Err(Error::InvalidParameter(
                "performance output must satisfy Q'W = 0".into(),
            ));
        }
        Ok(Self {
            variant,
            iota3_lower,
            iota3_upper,
            r4,
            window,
            delta1_bar,
            delta2_bar,
            q,
            w,
            dims,
        })
    }
}

/// Scalar decision variables of the LMI (alongside the fixed `c2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarTuple {
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ScalarTuple {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("c1", self.c1),
            ("c2", self.c2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "LMI scalar {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Assemble the full symmetric LMI block
/// `[[Phi11, Phi12], [Phi12', -gamma2 I]]` for the given scalars.
pub fn build_phi_blocks(inst: &LmiInstance, scalars: &ScalarTuple) -> Result<DMatrix<f64>> {
    scalars.validate()?;
    let d = &inst.dims;
    let (m1, m2, p, r) = (d.lambda_rows(), d.state_dim(), d.p, d.r);
    let total = d.block_dim();
    let (o1, o2, o3, o4, o5) = (0, m1, m1 + m2, m1 + m2 + p, m1 + m2 + p + r);
    let mut b = DMatrix::<f64>::zeros(total, total);

    // phi_11 = (-c1 + c2 T) I on the Lambda rows.
    let phi11 = -scalars.c1 + scalars.c2 * inst.window;
    for i in 0..m1 {
        b[(o1 + i, o1 + i)] = phi11;
    }
    // State rows: -(c2 iota3_lower / 2) I.
    let state_diag = -scalars.c2 * inst.iota3_lower / 2.0;
    for i in 0..m2 {
        b[(o2 + i, o2 + i)] = state_diag;
    }
    // Performance-output coupling depends on the variant.
    match inst.variant {
        Variant::Standard => {
            b.view_mut((o3, o2), (p, m2)).copy_from(&inst.q);
            b.view_mut((o2, o3), (m2, p)).copy_from(&inst.q.transpose());
        }
        Variant::OutputError => {
            b.view_mut((o3, o1), (p, m1)).copy_from(&inst.q);
            b.view_mut((o1, o3), (m1, p)).copy_from(&inst.q.transpose());
        }
    }
    for i in 0..p {
        b[(o3 + i, o3 + i)] = -1.0;
    }
    b.view_mut((o3, o4), (p, r)).copy_from(&inst.w);
    b.view_mut((o4, o3), (r, p)).copy_from(&inst.w.transpose());

    // phi_44: disturbance energy terms minus gamma I.
    let d1d1 = inst.delta1_bar.transpose() * &inst.delta1_bar;
    let d2d2 = inst.delta2_bar.transpose() * &inst.delta2_bar;
    let coef1 = 8.0 * scalars.c2 * inst.iota3_upper * inst.iota3_upper / inst.iota3_lower;
    let coef2 = scalars.c1 + coef1 * inst.r4 * scalars.gamma1;
    let phi44 = d1d1 * coef1 + d2d2 * coef2 - DMatrix::<f64>::identity(r, r) * scalars.gamma;
    b.view_mut((o4, o4), (r, r)).copy_from(&phi44);

    // Phi12 couples the disturbance row to the trailing state copy.
    let coef12 = -2.0 * scalars.c1 / (scalars.c2 * inst.iota3_lower).sqrt();
    let phi12 = inst.delta1_bar.transpose() * coef12;
    b.view_mut((o4, o5), (r, m2)).copy_from(&phi12);
    b.view_mut((o5, o4), (m2, r)).copy_from(&phi12.transpose());

    for i in 0..m2 {
        b[(o5 + i, o5 + i)] = -scalars.gamma2;
    }
    Ok(b)
}

/// The auxiliary positivity condition tying `c2` to the performance
/// output in the standard variant:
/// `[[c2 iota3_lower / 2 I, -Q'], [-Q, I]] > 0`.
pub fn c2_condition_matrix(inst: &LmiInstance, c2: f64) -> DMatrix<f64> {
    let cols = inst.q.ncols();
    let p = inst.dims.p;
    let mut m = DMatrix::<f64>::zeros(cols + p, cols + p);
    for i in 0..cols {
        m[(i, i)] = c2 * inst.iota3_lower / 2.0;
    }
    m.view_mut((0, cols), (cols, p))
        .copy_from(&(-inst.q.transpose()));
    m.view_mut((cols, 0), (p, cols)).copy_from(&(-&inst.q));
    for i in 0..p {
        m[(cols + i, cols + i)] = 1.0;
    }
    m
}

/// Outcome of one oracle call.
#[derive(Debug, Clone)]
pub enum Feasibility {
    Feasible {
        /// `lambda_max` of the block, at most `-eps_feas`.
        residual: f64,
    },
    Infeasible {
        reason: String,
        /// Best (smallest) `lambda_max` encountered, when available.
        residual: f64,
        /// Eigenvector witnessing the offending eigenvalue, when available.
        witness: Option<DVector<f64>>,
    },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

/// Check all feasibility conditions: `gamma1 >= gamma2`, the `c2`
/// positivity condition (standard variant only), and negative
/// semidefiniteness of the assembled block with margin `eps_feas`.
pub fn feasibility_oracle(
    inst: &LmiInstance,
    scalars: &ScalarTuple,
    eps_feas: f64,
) -> Result<Feasibility> {
    scalars.validate()?;
    if !(eps_feas > 0.0) {
        return Err(Error::InvalidParameter("eps_feas must be positive".into()));
    }
    if scalars.gamma1 < scalars.gamma2 {
        return Ok(Feasibility::Infeasible {
            reason: format!(
                "gamma1 = {} below gamma2 = {}",
                scalars.gamma1, scalars.gamma2
            ),
            residual: f64::INFINITY,
            witness: None,
        });
    }
    if inst.variant == Variant::Standard {
        let cond = c2_condition_matrix(inst, scalars.c2);
        let ev = sym_eigenvalues(&cond);
        if ev[0] <= 0.0 {
            return Ok(Feasibility::Infeasible {
                reason: format!("c2 condition violated: lambda_min = {:.6e}", ev[0]),
                residual: f64::INFINITY,
                witness: None,
            });
        }
    }
    let block = build_phi_blocks(inst, scalars)?;
    let (lambda_max, eigvec) = sym_eig_max_pair(&block);
    if lambda_max <= -eps_feas {
        Ok(Feasibility::Feasible {
            residual: lambda_max,
        })
    } else {
        Ok(Feasibility::Infeasible {
            reason: format!("lambda_max = {lambda_max:.6e} above -{eps_feas:.1e}"),
            residual: lambda_max,
            witness: Some(eigvec),
        })
    }
}

/// Search box for the scalar decision variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub c1_max: f64,
    pub gamma12_max: f64,
    pub gamma_max: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        // gamma is only a certified bound, not a gain; tiny Gramian floors
        // (worst-case windows of short length) push it large, so its box
        // is much wider than the gain boxes.
        Self {
            c1_max: 1e4,
            gamma12_max: 1e4,
            gamma_max: 1e12,
        }
    }
}

/// A feasible point found by the feasibility phase at fixed `(gamma, c2)`.
struct FeasiblePoint {
    c1: f64,
    gamma1: f64,
    gamma2: f64,
    residual: f64,
}

/// Convex surrogate minimized by the cutting-plane phase:
/// `max(lambda_max(block) + eps, gamma2 - gamma1)`; feasible iff <= 0.
/// Returns the value and a subgradient in `(c1, gamma1, gamma2)`.
fn surrogate(
    inst: &LmiInstance,
    gamma: f64,
    c2: f64,
    eps_feas: f64,
    x: &[f64; 3],
) -> Result<(f64, [f64; 3])> {
    let [c1, gamma1, gamma2] = *x;
    let scalars = ScalarTuple {
        gamma,
        gamma1,
        gamma2,
        c1,
        c2,
    };
    let block = build_phi_blocks(inst, &scalars)?;
    let (lam, v) = sym_eig_max_pair(&block);
    let f_block = lam + eps_feas;
    let f_order = gamma2 - gamma1;
    if f_block >= f_order {
        // Subgradient of lambda_max via unit bumps of the affine block.
        let mut grad = [0.0f64; 3];
        for (j, bumped) in [
            ScalarTuple {
                c1: c1 + 1.0,
                ..scalars
            },
            ScalarTuple {
                gamma1: gamma1 + 1.0,
                ..scalars
            },
            ScalarTuple {
                gamma2: gamma2 + 1.0,
                ..scalars
            },
        ]
        .iter()
        .enumerate()
        {
            let diff = build_phi_blocks(inst, bumped)? - &block;
            grad[j] = (v.transpose() * diff * &v)[(0, 0)];
        }
        Ok((f_block, grad))
    } else {
        Ok((f_order, [0.0, -1.0, 1.0]))
    }
}

/// Cutting-plane feasibility search over `(c1, gamma1, gamma2)` at fixed
/// `(gamma, c2)`. A warm-start point and a coarse admissible grid run
/// first; the cutting-plane loop evaluates the surrogate at the box
/// center, removes the half-space where the supporting plane stays
/// positive, re-boxes, and falls back to model-guided bisection of the
/// widest axis when a cut is too shallow.
fn find_feasible(
    inst: &LmiInstance,
    gamma: f64,
    c2: f64,
    sbox: &SearchBox,
    eps_feas: f64,
    warm: Option<[f64; 3]>,
) -> Result<std::result::Result<FeasiblePoint, f64>> {
    let eps = 1e-9;
    let mut lo = [eps, eps, eps];
    let mut hi = [sbox.c1_max, sbox.gamma12_max, sbox.gamma12_max];
    let mut best_residual = f64::INFINITY;

    let try_point = |x: &[f64; 3], best: &mut f64| -> Result<Option<FeasiblePoint>> {
        if x[1] < x[2] {
            return Ok(None);
        }
        let scalars = ScalarTuple {
            gamma,
            gamma1: x[1],
            gamma2: x[2],
            c1: x[0],
            c2,
        };
        match feasibility_oracle(inst, &scalars, eps_feas)? {
            Feasibility::Feasible { residual } => Ok(Some(FeasiblePoint {
                c1: x[0],
                gamma1: x[1],
                gamma2: x[2],
                residual,
            })),
            Feasibility::Infeasible { residual, .. } => {
                if residual < *best {
                    *best = residual;
                }
                Ok(None)
            }
        }
    };

    if let Some(w) = warm {
        if let Some(p) = try_point(&w, &mut best_residual)? {
            return Ok(Ok(p));
        }
    }
    // Coarse admissible grid with gamma1 = gamma2 (shrinking gamma1 toward
    // gamma2 never hurts feasibility of the block). c1 candidates combine
    // multiples of the c2 T floor with an absolute log grid, since the
    // output coupling can demand c1 far above that floor.
    let c1_floor = (c2 * inst.window).max(eps);
    let mut c1_grid: Vec<f64> = [1.5, 4.0, 16.0, 128.0, 1024.0]
        .iter()
        .map(|m| (c1_floor * m).min(sbox.c1_max))
        .collect();
    for k in -2..=4 {
        let c1 = 10f64.powi(k).min(sbox.c1_max);
        if c1 > c1_floor {
            c1_grid.push(c1);
        }
    }
    for &c1 in &c1_grid {
        for k in 0..12 {
            let g2 = 10f64
                .powf(-3.0 + 7.0 * (k as f64) / 11.0)
                .min(sbox.gamma12_max);
            if let Some(p) = try_point(&[c1, g2, g2], &mut best_residual)? {
                return Ok(Ok(p));
            }
        }
    }

    // Cutting-plane phase.
    let mut cuts: Vec<([f64; 3], f64, [f64; 3])> = Vec::new();
    let model = |cuts: &[([f64; 3], f64, [f64; 3])], y: &[f64; 3]| -> f64 {
        cuts.iter()
            .map(|(x, f, g)| f + (0..3).map(|j| g[j] * (y[j] - x[j])).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    for _ in 0..150 {
        let x = [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ];
        let (f, g) = surrogate(inst, gamma, c2, eps_feas, &x)?;
        if f <= 0.0 {
            if let Some(p) = try_point(&x, &mut best_residual)? {
                return Ok(Ok(p));
            }
        }
        best_residual = best_residual.min(f - eps_feas);
        cuts.push((x, f, g));

        // Keep { y : f + g'(y - x) <= 0 } and re-box.
        let mut shrunk = false;
        let old_widths = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        for j in 0..3 {
            if g[j].abs() < 1e-300 {
                continue;
            }
            let mut slack = -f;
            for k in 0..3 {
                if k == j {
                    continue;
                }
                let term_lo = g[k] * (lo[k] - x[k]);
                let term_hi = g[k] * (hi[k] - x[k]);
                slack -= term_lo.min(term_hi);
            }
            let bound = x[j] + slack / g[j];
            if g[j] > 0.0 && bound < hi[j] {
                hi[j] = bound.max(lo[j]);
                shrunk = true;
            } else if g[j] < 0.0 && bound > lo[j] {
                lo[j] = bound.min(hi[j]);
                shrunk = true;
            }
        }
        if (0..3).all(|j| hi[j] - lo[j] <= 1e-9 * (1.0 + hi[j].abs())) {
            return Ok(Err(best_residual));
        }
        if !shrunk || (0..3).all(|j| hi[j] - lo[j] > 0.98 * old_widths[j]) {
            // Shallow cut: bisect the widest axis, keeping the half whose
            // center the accumulated cut model prefers.
            let j = (0..3)
                .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
                .unwrap();
            let mid = 0.5 * (lo[j] + hi[j]);
            let mut left_c = x;
            let mut right_c = x;
            left_c[j] = 0.5 * (lo[j] + mid);
            right_c[j] = 0.5 * (mid + hi[j]);
            if model(&cuts, &left_c) <= model(&cuts, &right_c) {
                hi[j] = mid;
            } else {
                lo[j] = mid;
            }
        }
    }
    Ok(Err(best_residual))
}

/// A certified tuning result: scalars, residual and the gain interval.
#[derive(Debug, Clone)]
pub struct TuningCertificate {
    pub gamma: f64,
    pub sqrt_gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    /// `lambda_max` of the certified block (at most `-eps_feas`).
    pub residual: f64,
}

impl TuningCertificate {
    pub fn scalars(&self) -> ScalarTuple {
        ScalarTuple {
            gamma: self.gamma,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            c1: self.c1,
            c2: self.c2,
        }
    }
}

/// Default feasibility margin on `lambda_max`.
pub const EPS_FEAS: f64 = 1e-8;

/// Relative width at which the `gamma` bisection stops.
pub const GAMMA_REL_TOL: f64 = 1e-4;

/// Minimize `gamma` at fixed `(alpha, c2)` by bisection over `gamma` with
/// the cutting-plane feasibility phase per candidate (feasibility is
/// monotone in `gamma`, so bisection applies). The returned certificate
/// replays through [`feasibility_oracle`].
pub fn solve_sdp(
    inst: &LmiInstance,
    c2: f64,
    alpha: f64,
    sbox: &SearchBox,
    eps_feas: f64,
) -> Result<TuningCertificate> {
    if !(c2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "c2 must be positive, got {c2}"
        )));
    }
    let mut hi = sbox.gamma_max;
    let mut best = match find_feasible(inst, hi, c2, sbox, eps_feas, None)? {
        Ok(p) => (hi, p),
        Err(residual) => return Err(Error::InfeasibleInBox { residual }),
    };
    let mut warm = Some([best.1.c1, best.1.gamma1, best.1.gamma2]);
    let mut lo = 0.0f64;
    while hi - lo > GAMMA_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        match find_feasible(inst, mid, c2, sbox, eps_feas, warm)? {
            Ok(p) => {
                warm = Some([p.c1, p.gamma1, p.gamma2]);
                best = (mid, p);
                hi = mid;
            }
            Err(_) => lo = mid,
        }
    }
    // Polish: prefer a point with extra margin at the final gamma, so the
    // certificate replays robustly.
    for margin in [1e4, 1e2] {
        if let Ok(p) = find_feasible(inst, best.0, c2, sbox, eps_feas * margin, warm)? {
            best.1 = p;
            break;
        }
    }
    let (gamma, point) = best;
    Ok(TuningCertificate {
        gamma,
        sqrt_gamma: gamma.sqrt(),
        gamma1: point.gamma1,
        gamma2: point.gamma2,
        c1: point.c1,
        c2,
        alpha,
        residual: point.residual,
    })
}

/// Smallest `c2` on a half-decade log grid satisfying the positivity
/// condition (standard variant).
pub fn choose_c2_standard(inst: &LmiInstance) -> Result<f64> {
    for k in -12..=12 {
        let c2 = 10f64.powf(k as f64 / 2.0);
        let ev = sym_eigenvalues(&c2_condition_matrix(inst, c2));
        if ev[0] > 0.0 {
            return Ok(c2);
        }
    }
    Err(Error::InfeasibleInBox {
        residual: f64::INFINITY,
    })
}

/// Result of the consensus-gain line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSearch {
    pub alpha: f64,
    /// Achieved ratio `iota3_lower(alpha) / iota3_upper(alpha)`.
    pub ratio: f64,
}

/// Golden-section maximization of `iota3_lower(alpha) / iota3_upper(alpha)`
/// over `(0, alpha_max]`, with both bounds estimated empirically at each
/// candidate from the admissible gain range.
#[allow(clippy::too_many_arguments)]
pub fn alpha_search(
    bank: &RegressorBank,
    graph: &GraphSchedule,
    gains: GainRange,
    window: f64,
    t_min: f64,
    t_max: f64,
    n_starts: usize,
    step: f64,
    alpha_max: f64,
) -> Result<AlphaSearch> {
    if !(alpha_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "consensus gain alpha must be strictly positive, got search limit {alpha_max}"
        )));
    }
    let ratio_at = |alpha: f64| -> Result<f64> {
        let (lo, hi) = empirical_iota3(
            bank, graph, alpha, gains, window, t_min, t_max, n_starts, step,
        )?;
        if !(lo > 0.0) || !(hi > 0.0) {
            return Err(Error::CpeViolated {
                t_worst: t_min,
                lambda_min: lo,
            });
        }
        Ok(lo / hi)
    };
    // Coarse scan brackets the maximizer before the golden-section polish;
    // the empirical ratio need not be unimodal over the whole interval.
    let lo = alpha_max * 1e-3;
    let mut failure: Option<Error> = None;
    let mut eval = |a: f64| match ratio_at(a) {
        Ok(r) => -r,
        Err(e) => {
            failure.get_or_insert(e);
            f64::INFINITY
        }
    };
    let grid = 12usize;
    let mut best_k = 0;
    let mut best = f64::INFINITY;
    for k in 0..=grid {
        let a = lo + (alpha_max - lo) * (k as f64) / (grid as f64);
        let v = eval(a);
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let cell = (alpha_max - lo) / (grid as f64);
    let b_lo = (lo + cell * (best_k as f64) - cell).max(lo);
    let b_hi = (lo + cell * (best_k as f64) + cell).min(alpha_max);
    let (alpha, neg_ratio) = golden_section_min(&mut eval, b_lo, b_hi, 1e-3 * alpha_max, 60);
    if let Some(e) = failure {
        return Err(e);
    }
    let (alpha, ratio) = if neg_ratio <= best {
        (alpha, -neg_ratio)
    } else {
        (lo + cell * best_k as f64, -best)
    };
    Ok(AlphaSearch { alpha, ratio })
}

/// How to pick the gain inside the certified eigenvalue interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaPolicy {
    /// `sqrt(gamma2) I`, the most conservative admissible gain.
    Conservative,
    /// `(sqrt(gamma1) + sqrt(gamma2)) / 2 * I`.
    Midpoint,
}

/// Select `Gbar` with eigenvalues inside `[sqrt(gamma2), sqrt(gamma1)]`.
pub fn select_gamma_bar(
    gamma1: f64,
    gamma2: f64,
    policy: GammaPolicy,
    n_agents: usize,
    n_params: usize,
) -> Result<GammaBar> {
    if !(gamma1 >= gamma2 && gamma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need gamma1 >= gamma2 > 0, got ({gamma1}, {gamma2})"
        )));
    }
    let g = match policy {
        GammaPolicy::Conservative => gamma2.sqrt(),
        GammaPolicy::Midpoint => 0.5 * (gamma1.sqrt() + gamma2.sqrt()),
    };
    let gamma = GammaBar::uniform(n_agents, n_params, g)?;
    validate_gamma_choice(&gamma, gamma1, gamma2)?;
    Ok(gamma)
}

/// Check `sqrt(gamma2) I <= Gbar <= sqrt(gamma1) I` eigenvalue-wise.
pub fn validate_gamma_choice(gamma: &GammaBar, gamma1: f64, gamma2: f64) -> Result<()> {
    let (lo, hi) = gamma.eig_extrema();
    let tol = 1e-12 * gamma1.sqrt().max(1.0);
    if lo < gamma2.sqrt() - tol || hi > gamma1.sqrt() + tol {
        return Err(Error::InvalidParameter(format!(
            "gain eigenvalues [{lo}, {hi}] escape [{}, {}]",
            gamma2.sqrt(),
            gamma1.sqrt()
        )));
    }
    Ok(())
}

/// Excitation constants claimed valid for a certified instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedConstants {
    pub iota3_lower: f64,
    pub iota3_upper: f64,
    pub r4: f64,
    pub window: f64,
}

/// Robustness re-check: the certified scalars must stay feasible for any
/// constants sandwiched inside the certified ones. Violating the ordering
/// rejects the input instead of evaluating it.
pub fn check_relaxed_constants(
    inst: &LmiInstance,
    scalars: &ScalarTuple,
    relaxed: &RelaxedConstants,
    eps_feas: f64,
) -> Result<Feasibility> {
    let ordered = inst.iota3_upper >= relaxed.iota3_upper
        && relaxed.iota3_upper >= relaxed.iota3_lower
        && relaxed.iota3_lower >= inst.iota3_lower
        && inst.iota3_lower > 0.0
        && inst.r4 >= relaxed.r4
        && relaxed.r4 > 0.0
        && inst.window >= relaxed.window
        && relaxed.window > 0.0;
    if !ordered {
        return Err(Error::InvalidParameter(
            "relaxed constants must be sandwiched inside the certified ones".into(),
        ));
    }
    let relaxed_inst = LmiInstance {
        iota3_lower: relaxed.iota3_lower,
        iota3_upper: relaxed.iota3_upper,
        r4: relaxed.r4,
        window: relaxed.window,
        ..inst.clone()
    };
    feasibility_oracle(&relaxed_inst, scalars, eps_feas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Orthonormal-column W and a Q with Q'W = 0 from a seeded generator.
    fn random_qw(
        p: usize,
        r: usize,
        q_cols: usize,
        rng: &mut StdRng,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
        let qr = a.qr();
        let w = qr.q().columns(0, r).into_owned();
        let raw = DMatrix::from_fn(p, q_cols, |_, _| rng.random_range(-1.0..1.0));
        let q = &raw - &w * (w.transpose() * &raw);
        (q.transpose().transpose().into_owned(), w)
    }

    fn small_instance(variant: Variant, zero_projections: bool, rng: &mut StdRng) -> LmiInstance {
        let dims = LmiDims {
            n_agents: 3,
            n_params: 2,
            n_outputs: 1,
            n_edges: 3,
            p: 4,
            r: 2,
        };
        let (m1, m2) = (dims.lambda_rows(), dims.state_dim());
        let q_cols = match variant {
            Variant::Standard => m2,
            Variant::OutputError => m1,
        };
        let (q, w) = random_qw(dims.p, dims.r, q_cols, rng);
        let scale = if zero_projections { 0.0 } else { 1.0 };
        let delta1 = DMatrix::from_fn(m2, dims.r, |_, _| scale * rng.random_range(-0.5..0.5));
        let delta2 = DMatrix::from_fn(m1, dims.r, |_, _| scale * rng.random_range(-0.5..0.5));
        LmiInstance::new(variant, 0.05, 0.4, 3.0, 0.2, delta1, delta2, q, w, dims).unwrap()
    }

    fn default_scalars() -> ScalarTuple {
        ScalarTuple {
            gamma: 10.0,
            gamma1: 2.0,
            gamma2: 2.0,
            c1: 5.0,
            c2: 1.0,
        }
    }

    #[test]
    fn block_is_exactly_symmetric() {
        let mut rng = StdRng::seed_from_u64(1);
        for variant in [Variant::Standard, Variant::OutputError] {
            let inst = small_instance(variant, false, &mut rng);
            let b = build_phi_blocks(&inst, &default_scalars()).unwrap();
            assert_eq!(b, b.transpose());
        }
    }

    #[test]
    fn zero_projections_collapse_phi44_and_phi12() {
        let mut rng = StdRng::seed_from_u64(2);
        let inst = small_instance(Variant::Standard, true, &mut rng);
        let s = default_scalars();
        let b = build_phi_blocks(&inst, &s).unwrap();
        let d = &inst.dims;
        let (m1, m2, p, r) = (d.lambda_rows(), d.state_dim(), d.p, d.r);
        let o4 = m1 + m2 + p;
        let o5 = o4 + r;
        for i in 0..r {
            for j in 0..r {
                let expect = if i == j { -s.gamma } else { 0.0 };
                assert_eq!(b[(o4 + i, o4 + j)], expect);
            }
            for j in 0..m2 {
                assert_eq!(b[(o4 + i, o5 + j)], 0.0);
            }
        }
    }

    #[test]
    fn benchmark_dims_bookkeeping() {
        let dims = LmiDims {
            n_agents: 6,
            n_params: 3,
            n_outputs: 1,
            n_edges: 6,
            p: 5,
            r: 3,
        };
        assert_eq!(dims.lambda_rows(), 24);
        assert_eq!(dims.state_dim(), 18);
        assert_eq!(dims.block_dim(), 24 + 18 + 5 + 3 + 18);
    }

    #[test]
    fn block_is_affine_in_scalars_at_fixed_c2() {
        let mut rng = StdRng::seed_from_u64(3);
        let inst = small_instance(Variant::OutputError, false, &mut rng);
        let a = ScalarTuple {
            gamma: 4.0,
            gamma1: 3.0,
            gamma2: 1.5,
            c1: 2.0,
            c2: 0.7,
        };
        let b = ScalarTuple {
            gamma: 10.0,
            gamma1: 6.0,
            gamma2: 2.5,
            c1: 8.0,
            c2: 0.7,
        };
        let mid = ScalarTuple {
            gamma: 0.5 * (a.gamma + b.gamma),
            gamma1: 0.5 * (a.gamma1 + b.gamma1),
            gamma2: 0.5 * (a.gamma2 + b.gamma2),
            c1: 0.5 * (a.c1 + b.c1),
            c2: 0.7,
        };
        let ba = build_phi_blocks(&inst, &a).unwrap();
        let bb = build_phi_blocks(&inst, &b).unwrap();
        let bmid = build_phi_blocks(&inst, &mid).unwrap();
        assert!((bmid - (ba * 0.5 + bb * 0.5)).norm() < 1e-12);
    }

    #[test]
    fn oracle_rejects_gamma_ordering_violation() {
        let mut rng = StdRng::seed_from_u64(4);
        let inst = small_instance(Variant::Standard, false, &mut rng);
        let s = ScalarTuple {
            gamma1: 1.0,
            gamma2: 2.0,
            ..default_scalars()
        };
        let f = feasibility_oracle(&inst, &s, 1e-8).unwrap();
        assert!(!f.is_feasible());
    }

    #[test]
    fn undersized_c1_puts_witness_in_lambda_rows() {
        let mut rng = StdRng::seed_from_u64(5);
        let inst = small_instance(Variant::Standard, true, &mut rng);
        // c1 < c2 T makes phi_11 positive on the Lambda rows.
        let c2 = choose_c2_standard(&inst).unwrap();
        let s = ScalarTuple {
            gamma: 50.0,
            gamma1: 1.0,
            gamma2: 1.0,
            c1: 0.5 * c2 * inst.window,
            c2,
        };
        match feasibility_oracle(&inst, &s, 1e-8).unwrap() {
            Feasibility::Infeasible {
                witness: Some(v), ..
            } => {
                let argmax = v
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                    .unwrap()
                    .0;
                assert!(argmax < inst.dims.lambda_rows(), "witness row {argmax}");
            }
            other => panic!("expected infeasible with witness, got {other:?}"),
        }
    }

    #[test]
    fn sdp_floor_is_feedthrough_norm_with_zero_projections() {
        // With both projections zero the only obstruction is the
        // [[-I, W], [W', -gamma I]] sub-block, which by Schur complement
        // needs gamma >= lambda_max(W'W) = 1.
        let mut rng = StdRng::seed_from_u64(6);
        for variant in [Variant::Standard, Variant::OutputError] {
            let inst = small_instance(variant, true, &mut rng);
            let c2 = match variant {
                Variant::Standard => choose_c2_standard(&inst).unwrap(),
                Variant::OutputError => 1.0,
            };
            let cert = solve_sdp(&inst, c2, 1.0, &SearchBox::default(), 1e-8).unwrap();
            assert!(
                (1.0..=1.01).contains(&cert.gamma),
                "{variant:?}: gamma = {}",
                cert.gamma
            );
            let replay = feasibility_oracle(&inst, &cert.scalars(), 1e-8).unwrap();
            assert!(replay.is_feasible());
        }
    }

    #[test]
    fn sdp_certificate_replays_with_projections() {
        let mut rng = StdRng::seed_from_u64(7);
        let inst = small_instance(Variant::OutputError, false, &mut rng);
        let cert = solve_sdp(&inst, 1.0, 1.0, &SearchBox::default(), 1e-8).unwrap();
        let replay = feasibility_oracle(&inst, &cert.scalars(), 1e-8).unwrap();
        match replay {
            Feasibility::Feasible { residual } => assert!(residual <= -1e-8),
            other => panic!("certificate failed replay: {other:?}"),
        }
        assert!(cert.gamma > 1.0);
        assert!((cert.sqrt_gamma - cert.gamma.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scaling_projections_to_zero_collapses_to_floor() {
        let mut rng = StdRng::seed_from_u64(8);
        let full = small_instance(Variant::OutputError, false, &mut rng);
        let zeroed = LmiInstance {
            delta1_bar: &full.delta1_bar * 0.0,
            delta2_bar: &full.delta2_bar * 0.0,
            ..full.clone()
        };
        let with = solve_sdp(&full, 1.0, 1.0, &SearchBox::default(), 1e-8).unwrap();
        let without = solve_sdp(&zeroed, 1.0, 1.0, &SearchBox::default(), 1e-8).unwrap();
        assert!(without.gamma <= with.gamma);
        assert!((1.0..=1.01).contains(&without.gamma), "{}", without.gamma);
    }

    #[test]
    fn select_gamma_bar_policies() {
        let degenerate = select_gamma_bar(4.0, 4.0, GammaPolicy::Conservative, 2, 2).unwrap();
        let (lo, hi) = degenerate.eig_extrema();
        assert!((lo - 2.0).abs() < 1e-14 && (hi - 2.0).abs() < 1e-14);

        let mid = select_gamma_bar(9.0, 4.0, GammaPolicy::Midpoint, 2, 2).unwrap();
        let (mlo, mhi) = mid.eig_extrema();
        assert!((mlo - 2.5).abs() < 1e-14 && (mhi - 2.5).abs() < 1e-14);

        let bad = GammaBar::uniform(2, 2, 5.0).unwrap();
        assert!(validate_gamma_choice(&bad, 9.0, 4.0).is_err());
        assert!(select_gamma_bar(4.0, 9.0, GammaPolicy::Conservative, 2, 2).is_err());
    }

    #[test]
    fn alpha_search_returns_interior_maximizer() {
        use crate::excitation::{RegressorBank, RegressorFn};
        use std::sync::Arc;
        // Two constant, individually rank-one regressors whose sum spans:
        // consensus must fill the missing directions, so the Gramian
        // ratio peaks at an interior consensus gain.
        let agents: Vec<RegressorFn> = vec![
            Arc::new(|_t: f64| DMatrix::from_row_slice(1, 2, &[1.0, 0.3])),
            Arc::new(|_t: f64| DMatrix::from_row_slice(1, 2, &[0.2, 1.0])),
        ];
        let bank = RegressorBank::new(agents, 2, 1).unwrap();
        let graph = GraphSchedule::constant(2, vec![(1, 2)]).unwrap();
        let gains = GainRange::new(0.5, 2.0).unwrap();
        let (window, t_min, t_max, starts, step, alpha_max) = (0.3, 0.3, 2.0, 4, 1e-2, 6.0);
        let found = alpha_search(
            &bank, &graph, gains, window, t_min, t_max, starts, step, alpha_max,
        )
        .unwrap();
        let ratio_at = |alpha: f64| {
            let (lo, hi) = empirical_iota3(
                &bank, &graph, alpha, gains, window, t_min, t_max, starts, step,
            )
            .unwrap();
            lo / hi
        };
        for endpoint in [alpha_max * 1e-3, alpha_max] {
            assert!(
                found.ratio >= ratio_at(endpoint) - 1e-12,
                "ratio at alpha* {} below endpoint {endpoint}",
                found.ratio
            );
        }
        assert!((found.ratio - ratio_at(found.alpha)).abs() < 1e-12);
    }

    #[test]
    fn alpha_search_rejects_nonpositive_interval() {
        use crate::excitation::{RegressorBank, RegressorFn};
        use std::sync::Arc;
        let agents: Vec<RegressorFn> = vec![Arc::new(|_t: f64| DMatrix::from_element(1, 1, 1.0))];
        let bank = RegressorBank::new(agents, 1, 1).unwrap();
        let graph = GraphSchedule::constant(1, vec![]).unwrap();
        let gains = GainRange::new(0.5, 1.0).unwrap();
        let err = alpha_search(&bank, &graph, gains, 0.2, 0.2, 1.0, 2, 1e-2, 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn relaxation_identity_and_shrunk_window_pass() {
        let mut rng = StdRng::seed_from_u64(9);
        let inst = small_instance(Variant::OutputError, false, &mut rng);
        let cert = solve_sdp(&inst, 1.0, 1.0, &SearchBox::default(), 1e-8).unwrap();
        let scalars = cert.scalars();

        let identity = RelaxedConstants {
            iota3_lower: inst.iota3_lower,
            iota3_upper: inst.iota3_upper,
            r4: inst.r4,
            window: inst.window,
        };
        assert!(check_relaxed_constants(&inst, &scalars, &identity, 1e-8)
            .unwrap()
            .is_feasible());

        let shrunk = RelaxedConstants {
            window: 0.9 * inst.window,
            ..identity
        };
        assert!(check_relaxed_constants(&inst, &scalars, &shrunk, 1e-8)
            .unwrap()
            .is_feasible());
    }

    #[test]
    fn relaxation_rejects_bad_ordering() {
        let mut rng = StdRng::seed_from_u64(10);
        let inst = small_instance(Variant::OutputError, false, &mut rng);
        let scalars = default_scalars();
        let bad = RelaxedConstants {
            iota3_lower: 0.5 * inst.iota3_lower, // below the certified floor
            iota3_upper: inst.iota3_upper,
            r4: inst.r4,
            window: inst.window,
        };
        assert!(matches!(
            check_relaxed_constants(&inst, &scalars, &bad, 1e-8),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn relaxation_monotone_on_random_cases() {
        let mut rng = StdRng::seed_from_u64(11);
        let inst = small_instance(Variant::OutputError, false, &mut rng);
        let cert = solve_sdp(&inst, 1.0, 1.0, &SearchBox::default(), 1e-8).unwrap();
        let scalars = cert.scalars();
        for _ in 0..100 {
            let lo = inst.iota3_lower * rng.random_range(1.0..2.0);
            let hi = inst.iota3_upper * rng.random_range(0.5..1.0);
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let relaxed = RelaxedConstants {
                iota3_lower: lo.max(inst.iota3_lower),
                iota3_upper: hi.min(inst.iota3_upper).max(lo),
                r4: inst.r4 * rng.random_range(0.3..1.0),
                window: inst.window * rng.random_range(0.3..1.0),
            };
            let f = check_relaxed_constants(&inst, &scalars, &relaxed, 1e-8).unwrap();
            assert!(f.is_feasible(), "relaxation failed: {relaxed:?}");
        }
    }
}
