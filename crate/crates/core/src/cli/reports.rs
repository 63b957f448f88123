//! Report emission: delimited values, aligned text tables, and SVG plots.
//!
//! Every emitted artifact embeds the resolved run configuration and the
//! tool version, so a report file alone identifies the run that produced
//! it. Delimited files put that metadata on `#`-prefixed comment lines
//! above a fixed header; plots carry it in an XML comment. Numbers are
//! written in Rust's shortest round-trip form, so parsing a report back
//! recovers the values exactly.

use crate::error::{Error, Result};
use crate::harness::{AblationRow, EvalReport, PretrainData, SweepPoint};

/// Tool identity embedded in every artifact.
pub const TOOL_VERSION: &str = concat!("protoshot ", env!("CARGO_PKG_VERSION"));

pub const EVAL_HEADER: &str = "mean,ci95";
pub const SWEEP_HEADER: &str = "p,mean,ci95,n_tasks";
pub const ABLATION_HEADER: &str = "data,support_tta,query_tta,mean,ci95,n_tasks";

/// Metadata block prepended to every report: the tool version plus the
/// fully resolved configuration the run used.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub config_toml: String,
}

impl ReportMeta {
    pub fn new(config_toml: impl Into<String>) -> Self {
        ReportMeta {
            config_toml: config_toml.into(),
        }
    }

    fn comment_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("# {TOOL_VERSION}")];
        for line in self.config_toml.lines() {
            if line.is_empty() {
                lines.push("#".into());
            } else {
                lines.push(format!("# {line}"));
            }
        }
        lines
    }
}

pub fn data_label(data: PretrainData) -> &'static str {
    match data {
        PretrainData::Unstylized => "unstylized",
        PretrainData::StylizedOnly => "stylized-only",
        PretrainData::Mixture => "mixture",
    }
}

fn render_csv(meta: &ReportMeta, header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for line in meta.comment_lines() {
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn eval_csv(report: &EvalReport, meta: &ReportMeta) -> String {
    let row = vec![
        format!("{}", report.mean_accuracy),
        format!("{}", report.ci95_halfwidth),
    ];
    render_csv(meta, EVAL_HEADER, &[row])
}

fn sweep_rows(points: &[SweepPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|pt| {
            vec![
                format!("{}", pt.p),
                format!("{}", pt.report.mean_accuracy),
                format!("{}", pt.report.ci95_halfwidth),
                format!("{}", pt.report.per_task_accuracy.len()),
            ]
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint], meta: &ReportMeta) -> String {
    render_csv(meta, SWEEP_HEADER, &sweep_rows(points))
}

fn ablation_rows(rows: &[AblationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|row| {
            vec![
                data_label(row.cell.data).to_string(),
                format!("{}", row.cell.support_tta),
                format!("{}", row.cell.query_tta),
                format!("{}", row.report.mean_accuracy),
                format!("{}", row.report.ci95_halfwidth),
                format!("{}", row.report.per_task_accuracy.len()),
            ]
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow], meta: &ReportMeta) -> String {
    render_csv(meta, ABLATION_HEADER, &ablation_rows(rows))
}

fn render_table(meta: &ReportMeta, header: &str, rows: &[Vec<String>]) -> String {
    let columns: Vec<&str> = header.split(',').collect();
    let mut widths: Vec<usize> = columns.iter().map(|c| c.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for line in meta.comment_lines() {
        out.push_str(&line);
        out.push('\n');
    }
    let pad_row = |cells: &[String], out: &mut String| {
        let formatted: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(formatted.join("  ").trim_end());
        out.push('\n');
    };
    let header_cells: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
    pad_row(&header_cells, &mut out);
    let dashes: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&dashes.join("  "));
    out.push('\n');
    for row in rows {
        pad_row(row, &mut out);
    }
    out
}

pub fn sweep_table(points: &[SweepPoint], meta: &ReportMeta) -> String {
    render_table(meta, SWEEP_HEADER, &sweep_rows(points))
}

pub fn ablation_table(rows: &[AblationRow], meta: &ReportMeta) -> String {
    render_table(meta, ABLATION_HEADER, &ablation_rows(rows))
}

/// A delimited report read back from text: leading comment lines, the
/// header, and the data rows as raw cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvData {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Parses a delimited report produced by this module. Comment lines keep
/// their `#` stripped; every data row must match the header's width.
pub fn parse_csv(text: &str) -> Result<CsvData> {
    let mut comments = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            comments.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.to_string()).collect();
        match &header {
            None => header = Some(cells),
            Some(h) => {
                if cells.len() != h.len() {
                    return Err(Error::Format(format!(
                        "row has {} cells, header has {}",
                        cells.len(),
                        h.len()
                    )));
                }
                rows.push(cells);
            }
        }
    }
    let header = header.ok_or_else(|| Error::Format("report has no header line".into()))?;
    Ok(CsvData {
        comments,
        header,
        rows,
    })
}

/// Parses one numeric cell from a report.
pub fn parse_cell_f64(cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .map_err(|_| Error::Format(format!("cell {cell:?} is not a number")))
}

const PLOT_WIDTH: f64 = 640.0;
const PLOT_HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 48.0;

/// Linear data-to-pixel map over one axis.
struct AxisScale {
    lo: f64,
    hi: f64,
    px0: f64,
    px1: f64,
}

impl AxisScale {
    fn new(values: impl Iterator<Item = f64>, pad: f64, px0: f64, px1: f64) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            lo -= pad;
            hi += pad;
        } else {
            let margin = (hi - lo) * 0.05;
            lo -= margin;
            hi += margin;
        }
        AxisScale { lo, hi, px0, px1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.px0 + (v - self.lo) / (self.hi - self.lo) * (self.px1 - self.px0)
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

fn fmt_px(v: f64) -> String {
    format!("{:.2}", v)
}

fn fmt_tick(v: f64) -> String {
    format!("{:.3}", v)
}

/// Renders a line plot of `(x, mean, ci95)` points as a standalone SVG:
/// the mean as a marked polyline over a shaded ±CI band, with axes and
/// tick labels. A single point degenerates to a marker with an error bar.
pub fn line_plot_svg(
    points: &[(f64, f64, f64)],
    x_label: &str,
    y_label: &str,
    meta: &ReportMeta,
) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Contract("a plot needs at least one point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let xs = AxisScale::new(
        pts.iter().map(|p| p.0),
        0.5,
        MARGIN_LEFT,
        PLOT_WIDTH - MARGIN_RIGHT,
    );
    let ys = AxisScale::new(
        pts.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]),
        0.05,
        PLOT_HEIGHT - MARGIN_BOTTOM,
        MARGIN_TOP,
    );

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_WIDTH}\" height=\"{PLOT_HEIGHT}\" viewBox=\"0 0 {PLOT_WIDTH} {PLOT_HEIGHT}\">\n"
    ));
    let comment = format!("{TOOL_VERSION}\n{}", meta.config_toml).replace("--", "- -");
    svg.push_str(&format!("<!--\n{comment}\n-->\n"));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{PLOT_WIDTH}\" height=\"{PLOT_HEIGHT}\" fill=\"white\"/>\n"
    ));

    if pts.len() >= 2 {
        let mut band = String::new();
        for p in &pts {
            band.push_str(&format!("{},{} ", fmt_px(xs.map(p.0)), fmt_px(ys.map(p.1 + p.2))));
        }
        for p in pts.iter().rev() {
            band.push_str(&format!("{},{} ", fmt_px(xs.map(p.0)), fmt_px(ys.map(p.1 - p.2))));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\"/>\n",
            band.trim_end()
        ));
        let line: Vec<String> = pts
            .iter()
            .map(|p| format!("{},{}", fmt_px(xs.map(p.0)), fmt_px(ys.map(p.1))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f4e79\" stroke-width=\"2\"/>\n",
            line.join(" ")
        ));
    } else {
        let p = pts[0];
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"#1f4e79\" stroke-width=\"2\"/>\n",
            x = fmt_px(xs.map(p.0)),
            y0 = fmt_px(ys.map(p.1 - p.2)),
            y1 = fmt_px(ys.map(p.1 + p.2)),
        ));
    }
    for p in &pts {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"#1f4e79\"/>\n",
            fmt_px(xs.map(p.0)),
            fmt_px(ys.map(p.1))
        ));
    }

    let x_axis_y = PLOT_HEIGHT - MARGIN_BOTTOM;
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{x_axis_y}\" x2=\"{}\" y2=\"{x_axis_y}\" stroke=\"black\"/>\n",
        PLOT_WIDTH - MARGIN_RIGHT
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{x_axis_y}\" stroke=\"black\"/>\n"
    ));
    for t in xs.ticks(5) {
        let x = fmt_px(xs.map(t));
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{x_axis_y}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            x_axis_y + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x_axis_y + 18.0,
            fmt_tick(t)
        ));
    }
    for t in ys.ticks(5) {
        let y = fmt_px(ys.map(t));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{MARGIN_LEFT}\" y2=\"{y}\" stroke=\"black\"/>\n",
            MARGIN_LEFT - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 8.0,
            fmt_px(ys.map(t) + 4.0),
            fmt_tick(t)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_LEFT + PLOT_WIDTH - MARGIN_RIGHT) / 2.0,
        PLOT_HEIGHT - 12.0,
        escape_xml(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{mid}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {mid})\">{}</text>\n",
        escape_xml(y_label),
        mid = (MARGIN_TOP + x_axis_y) / 2.0,
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Plot of a probability sweep: mean accuracy with its CI band versus p.
pub fn sweep_plot_svg(points: &[SweepPoint], meta: &ReportMeta) -> Result<String> {
    let triples: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|pt| (pt.p, pt.report.mean_accuracy, pt.report.ci95_halfwidth))
        .collect();
    line_plot_svg(&triples, "stylization probability p", "mean accuracy", meta)
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
