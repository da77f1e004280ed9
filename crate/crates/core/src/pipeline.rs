//! The end-to-end tuning pipeline driven by a run configuration:
//! excitation constants, consensus-gain line search, empirical Gramian
//! bounds, LMI assembly and the gamma-minimizing bisection.

use nalgebra::DMatrix;

use crate::analysis::empirical_iota3;
use crate::bench::{scenario, scenario_disturbance, DISTURBANCE_DIM, OUTPUT_COUNT, PARAM_COUNT};
use crate::config::{BoundsSpec, RunConfig};
use crate::excitation::cpe_bounds;
use crate::tuner::{
    alpha_search, choose_c2_standard, feasibility_oracle, select_gamma_bar, solve_sdp, GammaPolicy,
    LmiDims, LmiInstance, TuningCertificate, Variant,
};
use crate::{Error, Result};

/// Everything the tuning pipeline produces.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub certificate: TuningCertificate,
    pub instance: LmiInstance,
    /// Eigenvalue of the selected gain `Gbar = gain * I` (conservative
    /// policy: `sqrt(gamma2)`).
    pub gain: f64,
    pub alpha: f64,
    pub iota3: (f64, f64),
    pub r4: f64,
    pub window: f64,
}

/// Benchmark performance matrices for either LMI variant. The
/// output-error form sums the measurement and consensus rows of the
/// output error; the standard form sums the stacked state errors. Both
/// route the disturbance through an identity feedthrough on the last
/// `r` components, so `W'W = I` and `Q'W = 0` hold by construction.
pub fn benchmark_performance_matrices(
    variant: Variant,
    dims: &LmiDims,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, r) = (dims.p, dims.r);
    let mut w = DMatrix::zeros(p, r);
    for k in 0..r {
        w[(p - r + k, k)] = 1.0;
    }
    let q = match variant {
        Variant::OutputError => {
            let meas = dims.n_agents * dims.n_outputs;
            let mut q = DMatrix::zeros(p, dims.lambda_rows());
            for col in 0..meas {
                q[(0, col)] = 1.0;
            }
            for col in meas..dims.lambda_rows() {
                q[(1, col)] = 1.0;
            }
            q
        }
        Variant::Standard => {
            let mut q = DMatrix::zeros(p, dims.state_dim());
            for col in 0..dims.state_dim() {
                q[(0, col)] = 1.0;
            }
            q
        }
    };
    (q, w)
}

/// Run the two-step tuning process for the benchmark problem described by
/// `config`: pick the consensus gain maximizing the empirical Gramian
/// ratio, estimate the Gramian bounds at that gain, and minimize the
/// guaranteed L2-gain over the remaining scalars. The returned
/// certificate has been replayed through the feasibility oracle.
pub fn tune_from_config(config: &RunConfig) -> Result<TuneOutcome> {
    let graph = config.build_graph()?;
    let n_edges = graph.edge_count_at(0.0)?;
    let variant = config.variant();
    let horizon = config.estimator.horizon;

    let (alpha, iota3_lower, iota3_upper, r4, window) = match &config.tuner.bounds {
        BoundsSpec::Explicit { iota3, r4, window } => {
            (config.estimator.alpha, iota3.0, iota3.1, *r4, *window)
        }
        BoundsSpec::Mode(_) => {
            let resolved = config.build_bank((0.0, 0.0, 0.0))?;
            let bank = &resolved.bank;
            let report = cpe_bounds(
                bank,
                config.excitation.cpe_window,
                horizon,
                config.excitation.samples,
                config.quad_step(),
            )?;
            let r3 = graph.laplacian_norm_bound(horizon);
            let window = config.excitation.gramian_window;
            let gains = config.gain_range()?;
            let search = alpha_search(
                bank,
                &graph,
                gains,
                window,
                config.gramian.t_min,
                horizon,
                config.tuner.alpha_starts,
                config.estimator.step,
                config.tuner.alpha_max,
            )?;
            let (lo, hi) = empirical_iota3(
                bank,
                &graph,
                search.alpha,
                gains,
                window,
                config.gramian.t_min,
                horizon,
                config.gramian.starts,
                config.estimator.step,
            )?;
            (search.alpha, lo, hi, report.r4(search.alpha, r3), window)
        }
    };

    let n = graph.node_count();
    let dims = LmiDims {
        n_agents: n,
        n_params: PARAM_COUNT,
        n_outputs: OUTPUT_COUNT,
        n_edges,
        p: 5,
        r: DISTURBANCE_DIM,
    };
    let dist = scenario_disturbance(&scenario(5)?);
    let (q, w) = benchmark_performance_matrices(variant, &dims);
    let instance = LmiInstance::new(
        variant,
        iota3_lower,
        iota3_upper,
        r4,
        window,
        dist.delta1_bar(n),
        dist.delta2_bar(PARAM_COUNT, n_edges),
        q,
        w,
        dims,
    )?;
    let c2 = match (variant, config.tuner.c2) {
        (Variant::Standard, None) => choose_c2_standard(&instance)?,
        (Variant::Standard, Some(c2)) => c2,
        (Variant::OutputError, c2) => c2.unwrap_or(4.0),
    };
    let certificate = solve_sdp(
        &instance,
        c2,
        alpha,
        &config.search_box(),
        config.tuner.eps_feas,
    )?;
    let replay = feasibility_oracle(&instance, &certificate.scalars(), config.tuner.eps_feas)?;
    if !replay.is_feasible() {
        return Err(Error::InfeasibleInBox {
            residual: certificate.residual,
        });
    }
    let gamma_bar = select_gamma_bar(
        certificate.gamma1,
        certificate.gamma2,
        GammaPolicy::Conservative,
        n,
        PARAM_COUNT,
    )?;
    let gain = gamma_bar.eig_extrema().0;
    Ok(TuneOutcome {
        certificate,
        instance,
        gain,
        alpha,
        iota3: (iota3_lower, iota3_upper),
        r4,
        window,
    })
}
