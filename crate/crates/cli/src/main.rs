//! Command-line front end: simulate, gramian-bounds, tune, evaluate,
//! report.
//!
//! Exit codes: 0 on success, 1 on domain outcomes (infeasible tuning box,
//! violated excitation, lost connectivity), 2 on configuration errors.
//! Domain and config failures print a machine-readable JSON object on
//! stderr. Every command echoes the resolved configuration into the
//! output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Deserialize;

use citune_core::analysis::{
    empirical_iota3, error_gramian_bounds, injection_gramian_bounds, iss_gain_bound, BoundSet,
};
use citune_core::bench::{gain_sweep, oe_performance, scenario, scenario_disturbance, SCENARIOS};
use citune_core::config::RunConfig;
use citune_core::estimator::{simulate_disturbed, simulate_nominal, stack_copies};
use citune_core::excitation::cpe_bounds;
use citune_core::pipeline::tune_from_config;
use citune_core::report::{
    metrics_csv, render_error_svg, render_sweep_svg, trajectory_csv, write_json, write_text,
    BoundsReport, CertificateReport, SweepSummary, TrajectorySidecar,
};
use citune_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "citune",
    about = "Distributed consensus + innovations estimator: simulation, Gramian bounds, and \
             L2-gain tuning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed override for randomized initial estimates.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the estimator (nominal or one disturbance scenario) and
    /// write the trajectory CSV plus a JSON sidecar.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Scenario id 1..=5; omitted means the nominal run.
        #[arg(long)]
        scenario: Option<String>,
        /// Also render the error-trajectory SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Compute Gramian bounds (closed-form chain and, optionally, the
    /// empirical window sweep) and emit them as JSON.
    GramianBounds {
        #[command(flatten)]
        common: CommonArgs,
        /// Estimate bounds from Gramian window sweeps as well.
        #[arg(long)]
        empirical: bool,
        /// Window start count for the empirical sweep.
        #[arg(long)]
        starts: Option<usize>,
        /// Gramian window length override.
        #[arg(long)]
        window: Option<f64>,
    },
    /// Tune the gains: consensus-gain line search, Gramian bounds, and
    /// the gamma-minimizing feasibility bisection. Writes the certificate.
    Tune {
        #[command(flatten)]
        common: CommonArgs,
        /// Performance-output variant: "standard" or "oe".
        #[arg(long)]
        variant: Option<String>,
        /// Force empirical Gramian bounds (the default source).
        #[arg(long)]
        empirical: bool,
        /// Window start count for the empirical sweep.
        #[arg(long)]
        starts: Option<usize>,
        /// Gramian window length override.
        #[arg(long)]
        window: Option<f64>,
    },
    /// Run the scenario x gain sweep and write metrics CSV + summary JSON.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Scenario selection: "all" or an id 1..=5.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Certificate JSON whose gain centers the sweep.
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Also render the sweep SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Render SVG figures from artifacts already in the output directory.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Accepted for symmetry; report always renders SVG.
        #[arg(long)]
        svg: bool,
    },
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::TimeBeforeSchedule { .. } => "time_before_schedule",
        Error::InvalidSchedule(_) => "invalid_schedule",
        Error::BadWindow { .. } => "bad_window",
        Error::NotConnectedOnAverage { .. } => "not_connected_on_average",
        Error::CpeViolated { .. } => "cpe_violated",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::NonFiniteState { .. } => "non_finite_state",
        Error::GainNotSpd { .. } => "gain_not_spd",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::BoundNotPositive { .. } => "bound_not_positive",
        Error::InfeasibleInBox { .. } => "infeasible_in_box",
        Error::SandwichViolation(_) => "sandwich_violation",
        Error::ZeroDisturbance => "zero_disturbance",
        Error::DataInconsistency(_) => "data_inconsistency",
        Error::NonPsdWindow { .. } => "non_psd_window",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("CITUNE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": { "kind": error_kind(&err), "message": err.to_string() }
                })
            );
            if err.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn echo_config(out: &Path, config: &RunConfig) -> Result<()> {
    write_json(&out.join("resolved_config.json"), config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            scenario: scenario_arg,
            svg,
        } => {
            let mut config = load_config(&common)?;
            if let Some(s) = scenario_arg {
                config.scenario = match s.as_str() {
                    "nominal" | "none" | "0" => None,
                    other => Some(other.parse::<u8>().map_err(|_| {
                        Error::Config(format!(
                            "--scenario expects 1..=5 or \"nominal\", got {other}"
                        ))
                    })?),
                };
            }
            config.validate()?;
            echo_config(&common.out, &config)?;
            run_simulate(&common.out, &config, svg)
        }
        Command::GramianBounds {
            common,
            empirical,
            starts,
            window,
        } => {
            let mut config = load_config(&common)?;
            if let Some(s) = starts {
                config.gramian.starts = s;
            }
            if let Some(w) = window {
                config.excitation.gramian_window = w;
            }
            config.validate()?;
            echo_config(&common.out, &config)?;
            run_gramian_bounds(&common.out, &config, empirical)
        }
        Command::Tune {
            common,
            variant,
            empirical: _,
            starts,
            window,
        } => {
            let mut config = load_config(&common)?;
            if let Some(v) = variant {
                config.tuner.variant = v;
            }
            if let Some(s) = starts {
                config.gramian.starts = s;
            }
            if let Some(w) = window {
                config.excitation.gramian_window = w;
            }
            config.validate()?;
            echo_config(&common.out, &config)?;
            run_tune(&common.out, &config)
        }
        Command::Evaluate {
            common,
            scenario: scenario_arg,
            gains,
            svg,
        } => {
            let config = load_config(&common)?;
            config.validate()?;
            echo_config(&common.out, &config)?;
            run_evaluate(&common.out, &config, &scenario_arg, gains.as_deref(), svg)
        }
        Command::Report { common, svg: _ } => {
            let config = load_config(&common)?;
            run_report(&common.out, &config)
        }
    }
}

fn run_simulate(out: &Path, config: &RunConfig, svg: bool) -> Result<()> {
    let graph = config.build_graph()?;
    let amplitudes = match config.scenario {
        Some(id) => {
            let s = scenario(id)?;
            (s.d1, s.d2, s.d3)
        }
        None => (0.0, 0.0, 0.0),
    };
    let resolved = config.build_bank(amplitudes)?;
    let n = resolved.bank.agent_count();
    let np = resolved.bank.n_params();
    let est = config.estimator_config(n, np, None)?;

    let (times, xhat, xtilde) = match config.scenario {
        None => {
            let theta0 = match &resolved.theta {
                Some(theta) => theta(0.0),
                None => {
                    return Err(Error::Config(
                        "nominal simulation with table regressors needs estimator.theta".into(),
                    ))
                }
            };
            let x0 = config.initial_estimate(n * np)?;
            let traj = simulate_nominal(&est, &resolved.bank, &graph, &x0, &theta0)?;
            let xtilde: Vec<DVector<f64>> = (0..traj.times.len()).map(|k| traj.xtilde(k)).collect();
            (traj.times, traj.xhat, xtilde)
        }
        Some(id) => {
            let s = scenario(id)?;
            let dist = scenario_disturbance(&s);
            let perf = oe_performance(graph.edge_count_at(0.0)?);
            // Disturbed runs start from zero initial error.
            let x0 = DVector::zeros(n * np);
            let traj = simulate_disturbed(&est, &resolved.bank, &graph, &dist, &perf, &x0)?;
            let theta = resolved.theta.as_ref().ok_or_else(|| {
                Error::Config("scenario simulation needs the builtin benchmark bank".into())
            })?;
            let xhat: Vec<DVector<f64>> = traj
                .times
                .iter()
                .zip(&traj.xtilde)
                .map(|(&t, err)| err + stack_copies(n, &theta(t)))
                .collect();
            (traj.times, xhat, traj.xtilde)
        }
    };

    let sidecar = TrajectorySidecar {
        config,
        scenario: config.scenario,
        initial_error_norm: xtilde[0].norm(),
        terminal_error_norm: xtilde[xtilde.len() - 1].norm(),
        terminal_time: times[times.len() - 1],
    };
    write_text(
        &out.join("trajectory.csv"),
        &trajectory_csv(&times, &xhat, &xtilde),
    )?;
    write_json(&out.join("trajectory.json"), &sidecar)?;
    if svg {
        write_text(
            &out.join("report_errors.svg"),
            &render_error_svg(&times, &xtilde),
        )?;
    }
    println!(
        "simulated {} steps; terminal error norm {:.6e}",
        times.len() - 1,
        sidecar.terminal_error_norm
    );
    Ok(())
}

fn run_gramian_bounds(out: &Path, config: &RunConfig, empirical: bool) -> Result<()> {
    let graph = config.build_graph()?;
    let resolved = config.build_bank((0.0, 0.0, 0.0))?;
    let bank = &resolved.bank;
    let horizon = config.estimator.horizon;
    let est = config.estimator_config(bank.agent_count(), bank.n_params(), None)?;

    // Closed-form chain at the certification window.
    let t1 = config.excitation.cpe_window;
    let report = cpe_bounds(
        bank,
        t1,
        horizon,
        config.excitation.samples,
        config.quad_step(),
    )?;
    let spectral =
        graph.connectivity_on_average(t1, horizon, config.excitation.samples.min(500))?;
    let (iota2_lo, iota2_hi) =
        injection_gramian_bounds(&report, &spectral, est.alpha, bank.agent_count())?;
    let closed = error_gramian_bounds(iota2_lo, iota2_hi, est.gamma.norm());

    let (bounds, empirical_pair) = if empirical {
        let t2 = config.excitation.gramian_window;
        let pair = empirical_iota3(
            bank,
            &graph,
            est.alpha,
            config.gain_range()?,
            t2,
            config.gramian.t_min,
            horizon,
            config.gramian.starts,
            est.step,
        )?;
        (BoundSet::new(pair.0, pair.1, &est.gamma, t2), Some(pair))
    } else {
        (
            BoundSet::new(closed.iota3_lower, closed.iota3_upper, &est.gamma, t1),
            None,
        )
    };

    let report_json = BoundsReport {
        iota2: Some((iota2_lo, iota2_hi)),
        iota3: Some((closed.iota3_lower, closed.iota3_upper)),
        iota3_empirical: empirical_pair,
        phi1: Some(closed.phi1),
        phi2: Some(closed.phi2),
        kappa: (bounds.kappa2, bounds.kappa1),
        iss_gain: iss_gain_bound(&bounds),
    };
    write_json(&out.join("bounds.json"), &report_json)?;
    println!("{}", serde_json::to_string(&report_json)?);
    Ok(())
}

fn run_tune(out: &Path, config: &RunConfig) -> Result<()> {
    let outcome = tune_from_config(config)?;
    let report = CertificateReport::new(&outcome.certificate, outcome.gain);
    write_json(&out.join("certificate.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Deserialize)]
struct GainFile {
    #[serde(default)]
    gain: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    gamma2: Option<f64>,
}

fn run_evaluate(
    out: &Path,
    config: &RunConfig,
    scenario_arg: &str,
    gains_path: Option<&Path>,
    svg: bool,
) -> Result<()> {
    let graph = config.build_graph()?;
    let scenarios = match scenario_arg {
        "all" => SCENARIOS.to_vec(),
        id => vec![scenario(id.parse::<u8>().map_err(|_| {
            Error::Config(format!("--scenario expects \"all\" or 1..=5, got {id}"))
        })?)?],
    };
    let (center, alpha) = match gains_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let gains: GainFile = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let center = gains
                .gain
                .or(gains.gamma2.map(f64::sqrt))
                .ok_or_else(|| Error::Config("gain file has neither gain nor gamma2".into()))?;
            (center, gains.alpha.unwrap_or(config.estimator.alpha))
        }
        None => (config.estimator.gain, config.estimator.alpha),
    };
    let half = (config.sweep.count / 2) as i32;
    let sweep_gains: Vec<f64> = (-half..=(config.sweep.count as i32 - half - 1))
        .map(|k| center * config.sweep.factor.powi(k))
        .collect();
    let params = config.plant_params((0.0, 0.0, 0.0));
    let table = gain_sweep(
        &params,
        &graph,
        alpha,
        &sweep_gains,
        &scenarios,
        config.estimator.step,
        config.estimator.horizon,
    )?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&table))?;
    let summary = SweepSummary::from_table(&table, alpha, None);
    write_json(&out.join("summary.json"), &summary)?;
    if svg {
        write_text(&out.join("report_sweep.svg"), &render_sweep_svg(&table))?;
    }
    println!(
        "evaluated {} scenario(s) x {} gain(s); averages: {:?}",
        scenarios.len(),
        sweep_gains.len(),
        table.averages
    );
    Ok(())
}

fn run_report(out: &Path, _config: &RunConfig) -> Result<()> {
    let mut rendered = 0usize;
    let summary_path = out.join("summary.json");
    if summary_path.exists() {
        let text = std::fs::read_to_string(&summary_path)?;
        let summary: serde_json::Value = serde_json::from_str(&text)?;
        let table = table_from_summary(&summary)?;
        write_text(&out.join("report_sweep.svg"), &render_sweep_svg(&table))?;
        rendered += 1;
    }
    let traj_path = out.join("trajectory.csv");
    if traj_path.exists() {
        let (times, xtilde) = read_trajectory_errors(&traj_path)?;
        write_text(
            &out.join("report_errors.svg"),
            &render_error_svg(&times, &xtilde),
        )?;
        rendered += 1;
    }
    if rendered == 0 {
        return Err(Error::Config(format!(
            "nothing to render in {} (expected summary.json and/or trajectory.csv)",
            out.display()
        )));
    }
    println!("rendered {rendered} figure(s) into {}", out.display());
    Ok(())
}

fn table_from_summary(summary: &serde_json::Value) -> Result<citune_core::bench::SweepTable> {
    let gains: Vec<f64> = serde_json::from_value(
        summary
            .get("gains")
            .cloned()
            .unwrap_or(serde_json::Value::Null),
    )?;
    let averages: Vec<f64> = serde_json::from_value(
        summary
            .get("averages")
            .cloned()
            .unwrap_or(serde_json::Value::Null),
    )?;
    let mut cells = Vec::new();
    for sc in summary
        .get("scenarios")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Config("summary.json lacks scenarios".into()))?
    {
        let id = sc.get("id").and_then(|v| v.as_u64()).unwrap_or(0) as u8;
        let metrics: Vec<f64> = serde_json::from_value(
            sc.get("metrics")
                .cloned()
                .unwrap_or(serde_json::Value::Null),
        )?;
        for (g, m) in gains.iter().zip(metrics) {
            cells.push(citune_core::bench::SweepCell {
                scenario_id: id,
                gain: *g,
                metric: m,
            });
        }
    }
    Ok(citune_core::bench::SweepTable {
        cells,
        gains,
        averages,
    })
}

fn read_trajectory_errors(path: &Path) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("trajectory.csv is empty".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let first_err = columns
        .iter()
        .position(|c| c.starts_with("xtilde_"))
        .ok_or_else(|| Error::Config("trajectory.csv has no xtilde columns".into()))?;
    let mut times = Vec::new();
    let mut errors = Vec::new();
    for line in lines {
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("trajectory.csv: {e}")))?;
        times.push(fields[0]);
        errors.push(DVector::from_vec(fields[first_err..].to_vec()));
    }
    Ok((times, errors))
}
