//! File emitters: trajectory CSV, metric tables, JSON summaries and the
//! SVG figures (grouped sweep bars and error-trajectory lines). All
//! output is plain text with deterministic formatting so repeated runs
//! are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::bench::SweepTable;
use crate::tuner::TuningCertificate;
use crate::Result;

/// Trajectory CSV: `t, xhat_1..xhat_nN, xtilde_1..xtilde_nN`.
pub fn trajectory_csv(times: &[f64], xhat: &[DVector<f64>], xtilde: &[DVector<f64>]) -> String {
    let dim = xhat.first().map_or(0, |v| v.len());
    let mut out = String::from("t");
    for k in 1..=dim {
        let _ = write!(out, ",xhat_{k}");
    }
    for k in 1..=dim {
        let _ = write!(out, ",xtilde_{k}");
    }
    out.push('\n');
    for (i, &t) in times.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in xhat[i].iter() {
            let _ = write!(out, ",{v}");
        }
        for v in xtilde[i].iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Sidecar JSON stored next to a trajectory CSV.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySidecar<'a> {
    pub config: &'a crate::config::RunConfig,
    pub scenario: Option<u8>,
    pub initial_error_norm: f64,
    pub terminal_error_norm: f64,
    pub terminal_time: f64,
}

/// Metric table CSV: `scenario, gain, metric`.
pub fn metrics_csv(table: &SweepTable) -> String {
    let mut out = String::from("scenario,gain,metric\n");
    for cell in &table.cells {
        let _ = writeln!(out, "{},{},{}", cell.scenario_id, cell.gain, cell.metric);
    }
    out
}

/// Evaluation summary JSON.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub alpha: f64,
    pub gains: Vec<f64>,
    pub averages: Vec<f64>,
    pub scenarios: Vec<ScenarioSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_sqrt_gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub id: u8,
    pub metrics: Vec<f64>,
    pub best_gain: f64,
}

impl SweepSummary {
    pub fn from_table(table: &SweepTable, alpha: f64, certified_sqrt_gamma: Option<f64>) -> Self {
        let mut ids: Vec<u8> = table.cells.iter().map(|c| c.scenario_id).collect();
        ids.dedup();
        let scenarios = ids
            .iter()
            .map(|&id| ScenarioSummary {
                id,
                metrics: table
                    .gains
                    .iter()
                    .map(|&g| table.metric(id, g).unwrap_or(f64::NAN))
                    .collect(),
                best_gain: table.winner(id).map_or(f64::NAN, |c| c.gain),
            })
            .collect();
        Self {
            alpha,
            gains: table.gains.clone(),
            averages: table.averages.clone(),
            scenarios,
            certified_sqrt_gamma,
        }
    }
}

/// Gramian-bound report emitted by the bounds front end.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iota2: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iota3: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iota3_empirical: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi2: Option<f64>,
    /// `[kappa2, kappa1]`.
    pub kappa: (f64, f64),
    pub iss_gain: f64,
}

/// Certificate JSON written by the tuner front end.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub gamma: f64,
    pub sqrt_gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub residual: f64,
    pub gain: f64,
}

impl CertificateReport {
    pub fn new(cert: &TuningCertificate, gain: f64) -> Self {
        Self {
            gamma: cert.gamma,
            sqrt_gamma: cert.sqrt_gamma,
            gamma1: cert.gamma1,
            gamma2: cert.gamma2,
            c1: cert.c1,
            c2: cert.c2,
            alpha: cert.alpha,
            residual: cert.residual,
            gain,
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

const BAR_COLORS: [&str; 6] = [
    "#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4", "#8c8c8c",
];

/// Grouped bar chart of the gain sweep: one group per gain, bars for
/// every scenario plus the per-gain average.
pub fn render_sweep_svg(table: &SweepTable) -> String {
    let mut scenario_ids: Vec<u8> = table.cells.iter().map(|c| c.scenario_id).collect();
    scenario_ids.sort_unstable();
    scenario_ids.dedup();
    let series = scenario_ids.len() + 1; // scenarios + average
    let (width, height, margin, legend) = (900.0, 420.0, 50.0, 80.0);
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin - legend;

    let mut y_max: f64 = 0.0;
    for c in &table.cells {
        y_max = y_max.max(c.metric);
    }
    for &a in &table.averages {
        y_max = y_max.max(a);
    }
    y_max *= 1.08;

    let groups = table.gains.len();
    let group_w = plot_w / groups as f64;
    let bar_w = group_w / (series as f64 + 1.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>"
    );
    // Axes and horizontal grid lines.
    for k in 0..=4 {
        let value = y_max * (k as f64) / 4.0;
        let y = margin + plot_h * (1.0 - value / y_max);
        let _ = writeln!(
            svg,
            "<line x1=\"{margin}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            margin + plot_w
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{value:.2}</text>",
            margin - 6.0,
            y + 4.0
        );
    }
    for (gi, &gain) in table.gains.iter().enumerate() {
        let x0 = margin + group_w * gi as f64;
        for (si, &sid) in scenario_ids.iter().enumerate() {
            let metric = table.metric(sid, gain).unwrap_or(0.0);
            let h = plot_h * metric / y_max;
            let x = x0 + bar_w * (si as f64 + 0.5);
            let y = margin + plot_h - h;
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" \
                 fill=\"{}\"/>",
                BAR_COLORS[si % BAR_COLORS.len()]
            );
        }
        let avg = table.averages[gi];
        let h = plot_h * avg / y_max;
        let x = x0 + bar_w * (scenario_ids.len() as f64 + 0.5);
        let y = margin + plot_h - h;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" \
             fill=\"{}\"/>",
            BAR_COLORS[5]
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{gain:.3}</text>",
            x0 + group_w / 2.0,
            margin + plot_h + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">gain</text>",
        margin + plot_w / 2.0,
        margin + plot_h + 34.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\" \
         text-anchor=\"middle\">measured gain ratio</text>",
        margin + plot_h / 2.0,
        margin + plot_h / 2.0
    );
    // Legend.
    let ly = height - legend + 14.0;
    for (si, &sid) in scenario_ids.iter().enumerate() {
        let lx = margin + 120.0 * si as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
            ly - 10.0,
            BAR_COLORS[si % BAR_COLORS.len()]
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{ly:.2}\">scenario {sid}</text>",
            lx + 16.0
        );
    }
    let lx = margin + 120.0 * scenario_ids.len() as f64;
    let _ = writeln!(
        svg,
        "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
        ly - 10.0,
        BAR_COLORS[5]
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{ly:.2}\">average</text>",
        lx + 16.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Line plot of every error component over time (decimated for size).
pub fn render_error_svg(times: &[f64], xtilde: &[DVector<f64>]) -> String {
    let (width, height, margin) = (900.0, 420.0, 50.0);
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let dim = xtilde.first().map_or(0, |v| v.len());
    let stride = (times.len() / 2000).max(1);

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for v in xtilde.iter().step_by(stride) {
        for &x in v.iter() {
            y_min = y_min.min(x);
            y_max = y_max.max(x);
        }
    }
    if !(y_max > y_min) {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    let t0 = times[0];
    let t1 = times[times.len() - 1];

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>"
    );
    // Zero line and frame.
    if y_min < 0.0 && y_max > 0.0 {
        let y = margin + plot_h * (y_max / (y_max - y_min));
        let _ = writeln!(
            svg,
            "<line x1=\"{margin}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#bbbbbb\"/>",
            margin + plot_w
        );
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#333333\"/>"
    );
    for comp in 0..dim {
        let color = BAR_COLORS[comp % BAR_COLORS.len()];
        let mut points = String::new();
        for (i, v) in xtilde.iter().enumerate().step_by(stride) {
            let x = margin + plot_w * (times[i] - t0) / (t1 - t0);
            let y = margin + plot_h * (1.0 - (v[comp] - y_min) / (y_max - y_min));
            let _ = write!(points, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"0.8\"/>",
            points.trim_end()
        );
    }
    for (label, x) in [(t0, margin), (t1, margin + plot_w)] {
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label:.0}</text>",
            margin + plot_h + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">t</text>",
        margin + plot_w / 2.0,
        margin + plot_h + 34.0
    );
    for (value, frac) in [(y_min, 0.0f64), (y_max, 1.0f64)] {
        let y = margin + plot_h * (1.0 - frac);
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{value:.2}</text>",
            margin - 6.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
