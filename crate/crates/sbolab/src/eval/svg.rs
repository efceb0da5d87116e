//! Hand-generated SVG line charts, one per workload: accuracy as a
//! function of payload percentage (log x-axis), one series per
//! (detector, mode) at the largest feature count in the report.
//!
//! The point mapping is affine and documented by the public constants, so
//! plotted coordinates invert exactly back to the data:
//!
//! * `px = PLOT_LEFT + (log10(p) - log10(pmin)) / (log10(pmax) - log10(pmin)) * PLOT_W`
//! * `py = PLOT_TOP + (1 - (acc - Y_MIN) / (Y_MAX - Y_MIN)) * PLOT_H`
//!
//! The y axis spans [0.5, 1.0]; accuracies below 0.5 plot below the axis
//! box rather than clamping, keeping the inversion exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{EvalError, EvalReport};
use crate::workloads::WorkloadName;

pub const SVG_WIDTH: u32 = 760;
pub const SVG_HEIGHT: u32 = 480;
pub const PLOT_LEFT: f64 = 60.0;
pub const PLOT_TOP: f64 = 30.0;
pub const PLOT_W: f64 = 460.0;
pub const PLOT_H: f64 = 380.0;
pub const Y_MIN: f64 = 0.5;
pub const Y_MAX: f64 = 1.0;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

pub fn x_of(pct: f64, pmin: f64, pmax: f64) -> f64 {
    if pmax <= pmin {
        return PLOT_LEFT + PLOT_W / 2.0;
    }
    PLOT_LEFT + (pct.log10() - pmin.log10()) / (pmax.log10() - pmin.log10()) * PLOT_W
}

pub fn y_of(accuracy: f64) -> f64 {
    PLOT_TOP + (1.0 - (accuracy - Y_MIN) / (Y_MAX - Y_MIN)) * PLOT_H
}

/// Inverse of [`y_of`], for readers of the emitted chart.
pub fn accuracy_of_y(py: f64) -> f64 {
    Y_MIN + (1.0 - (py - PLOT_TOP) / PLOT_H) * (Y_MAX - Y_MIN)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `results.csv` and one `fig_<workload>.svg` per workload present
/// in the report. Returns the created paths.
pub fn render_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|source| EvalError::Io { path: out_dir.to_path_buf(), source })?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("results.csv");
    report.save_csv(&csv_path)?;
    written.push(csv_path);

    let mut workloads: Vec<WorkloadName> = report.cells.iter().map(|c| c.workload).collect();
    workloads.sort();
    workloads.dedup();
    for workload in workloads {
        let path = out_dir.join(format!("fig_{workload}.svg"));
        let svg = render_workload_chart(report, workload);
        std::fs::write(&path, svg)
            .map_err(|source| EvalError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}

pub fn render_workload_chart(report: &EvalReport, workload: WorkloadName) -> String {
    let cells: Vec<_> = report.cells.iter().filter(|c| c.workload == workload).collect();
    let nf = cells.iter().map(|c| c.n_features).max().unwrap_or(8);
    let cells: Vec<_> = cells.into_iter().filter(|c| c.n_features == nf).collect();

    let mut pcts: Vec<f64> = cells.iter().map(|c| c.payload_pct).collect();
    pcts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pcts.dedup();
    let (pmin, pmax) =
        (pcts.first().copied().unwrap_or(1.0), pcts.last().copied().unwrap_or(1.0));

    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for cell in &cells {
        let key = format!("{} ({})", cell.detector, cell.mode);
        let entry = match series.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e,
            None => {
                series.push((key, Vec::new()));
                series.last_mut().unwrap()
            }
        };
        entry.1.push((cell.payload_pct, cell.accuracy()));
    }
    for (_, pts) in &mut series {
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect x=\"0\" y=\"0\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{}: accuracy vs \
         payload size ({} features)</text>",
        PLOT_LEFT,
        esc(workload.as_str()),
        nf
    );
    // axes box
    let _ = writeln!(
        svg,
        "  <rect x=\"{PLOT_LEFT}\" y=\"{PLOT_TOP}\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         fill=\"none\" stroke=\"black\"/>"
    );
    // y ticks every 0.1
    for i in 0..=5 {
        let acc = Y_MIN + i as f64 * 0.1;
        let y = y_of(acc);
        let _ = writeln!(
            svg,
            "  <line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#cccccc\"/>",
            PLOT_LEFT,
            PLOT_LEFT + PLOT_W
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{acc:.1}</text>",
            PLOT_LEFT - 6.0,
            y + 4.0
        );
    }
    // x ticks at the payload percentages
    for &p in &pcts {
        let x = x_of(p, pmin, pmax);
        let _ = writeln!(
            svg,
            "  <line x1=\"{x}\" y1=\"{PLOT_TOP}\" x2=\"{x}\" y2=\"{}\" stroke=\"#eeeeee\"/>",
            PLOT_TOP + PLOT_H
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{p}%</text>",
            PLOT_TOP + PLOT_H + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">payload size (% of baseline instructions, log scale)</text>",
        PLOT_LEFT + PLOT_W / 2.0,
        PLOT_TOP + PLOT_H + 38.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">accuracy</text>",
        PLOT_TOP + PLOT_H / 2.0,
        PLOT_TOP + PLOT_H / 2.0
    );

    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let dash = if name.ends_with("(ae_latent)") { " stroke-dasharray=\"6 3\"" } else { "" };
        let coords: Vec<String> = pts
            .iter()
            .map(|&(p, acc)| format!("{:.2},{:.2}", x_of(p, pmin, pmax), y_of(acc)))
            .collect();
        let _ = writeln!(
            svg,
            "  <polyline fill=\"none\" stroke=\"{color}\"{dash} stroke-width=\"1.5\" \
             points=\"{}\"/>",
            coords.join(" ")
        );
        let ly = PLOT_TOP + 14.0 * idx as f64 + 10.0;
        let lx = PLOT_LEFT + PLOT_W + 14.0;
        let _ = writeln!(
            svg,
            "  <line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\"{dash} \
             stroke-width=\"1.5\"/>",
            lx + 22.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            lx + 28.0,
            ly + 4.0,
            esc(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Mode;
    use crate::eval::{Confusion, EvalCell};

    fn sample_report() -> EvalReport {
        let mut cells = Vec::new();
        for (i, pct) in [0.5, 1.0, 2.0, 5.0].iter().enumerate() {
            for det in ["lof", "ocsvm"] {
                for mode in [Mode::Raw, Mode::AeLatent] {
                    let tp = 60 + 10 * i as u64;
                    cells.push(EvalCell {
                        workload: WorkloadName::Aes,
                        detector: det.into(),
                        mode,
                        payload_pct: *pct,
                        n_features: 8,
                        confusion: Confusion { tp, fp: 5, tn: 95, fn_: 100 - tp },
                    });
                }
            }
        }
        EvalReport { cells, metadata: Default::default() }
    }

    // Minimal well-formedness check: every opened tag closes, properly
    // nested.
    fn assert_well_formed_xml(text: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = text;
        while let Some(open) = rest.find('<') {
            let close = rest[open..].find('>').map(|i| open + i).expect("unclosed tag");
            let tag = &rest[open + 1..close];
            rest = &rest[close + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name), "mismatched close tag");
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                let name: String =
                    tag.chars().take_while(|c| !c.is_whitespace()).collect();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn chart_is_well_formed_with_one_polyline_per_series() {
        let report = sample_report();
        let svg = render_workload_chart(&report, WorkloadName::Aes);
        assert_well_formed_xml(&svg);
        let polylines = svg.matches("<polyline").count();
        assert_eq!(polylines, 4); // 2 detectors x 2 modes
    }

    // Parse the emitted polylines and invert the documented mapping.
    #[test]
    fn plotted_points_invert_to_accuracies() {
        let report = sample_report();
        let svg = render_workload_chart(&report, WorkloadName::Aes);
        let mut inverted = Vec::new();
        for chunk in svg.split("<polyline").skip(1) {
            let points = chunk.split("points=\"").nth(1).unwrap();
            let points = &points[..points.find('"').unwrap()];
            for pair in points.split_whitespace() {
                let (_, y) = pair.split_once(',').unwrap();
                inverted.push(accuracy_of_y(y.parse().unwrap()));
            }
        }
        let mut expected: Vec<f64> = report.cells.iter().map(|c| c.accuracy()).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        inverted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(inverted.len(), expected.len());
        for (got, want) in inverted.iter().zip(&expected) {
            assert!((got - want).abs() <= 0.005, "{got} vs {want}");
        }
    }

    #[test]
    fn render_report_writes_csv_and_figures() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        let files = render_report(&report, dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("results.csv")));
        assert!(files.iter().any(|p| p.ends_with("fig_aes.svg")));
        let reloaded = EvalReport::load_csv(&dir.path().join("results.csv")).unwrap();
        assert_eq!(reloaded.cells, report.cells);
    }
}
