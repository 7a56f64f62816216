//! Native SVG line plots.

use hgdo_core::TraceSample;
use serde::{Deserialize, Serialize};
use std::fmt::Write;

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Horizontal path against the reference.
    Xy,
    /// Position and attitude against their references.
    Timeseries,
    /// True disturbances against their estimates.
    Estimates,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Xy => "xy",
            Self::Timeseries => "timeseries",
            Self::Estimates => "estimates",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "xy" => Ok(Self::Xy),
            "timeseries" => Ok(Self::Timeseries),
            "estimates" => Ok(Self::Estimates),
            _ => Err(format!("unknown plot kind `{s}` (xy, timeseries, estimates)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Same scale on both axes.
    pub equal_aspect: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub panels: Vec<Panel>,
}

fn series(label: &str, samples: &[TraceSample], x: impl Fn(&TraceSample) -> f64, y: impl Fn(&TraceSample) -> f64, dashed: bool) -> Series {
    let stride = samples.len().div_ceil(MAX_POINTS).max(1);
    let mut points: Vec<(f64, f64)> = samples.iter().step_by(stride).map(|s| (x(s), y(s))).collect();
    if let Some(last) = samples.last() {
        if !(samples.len() - 1).is_multiple_of(stride) {
            points.push((x(last), y(last)));
        }
    }
    Series {
        label: label.to_string(),
        points,
        dashed,
    }
}

fn time_panel(title: &str, unit: &str, samples: &[TraceSample], a: (&str, fn(&TraceSample) -> f64), b: (&str, fn(&TraceSample) -> f64)) -> Panel {
    Panel {
        title: title.to_string(),
        x_label: "t (s)".into(),
        y_label: unit.to_string(),
        series: vec![series(a.0, samples, |s| s.t, a.1, false), series(b.0, samples, |s| s.t, b.1, true)],
        equal_aspect: false,
    }
}

/// Assemble the figure for `kind` from recorded samples.
pub fn figure(kind: PlotKind, title: &str, samples: &[TraceSample]) -> Figure {
    let panels = match kind {
        PlotKind::Xy => vec![Panel {
            title: "horizontal path".into(),
            x_label: "x (m)".into(),
            y_label: "y (m)".into(),
            series: vec![
                series("actual", samples, |s| s.state.position.x, |s| s.state.position.y, false),
                series("reference", samples, |s| s.reference.pos.x, |s| s.reference.pos.y, true),
            ],
            equal_aspect: true,
        }],
        PlotKind::Timeseries => vec![
            time_panel("x", "m", samples, ("actual", |s| s.state.position.x), ("reference", |s| s.reference.pos.x)),
            time_panel("y", "m", samples, ("actual", |s| s.state.position.y), ("reference", |s| s.reference.pos.y)),
            time_panel("z", "m", samples, ("actual", |s| s.state.position.z), ("reference", |s| s.reference.pos.z)),
            time_panel("phi", "rad", samples, ("actual", |s| s.state.attitude.x), ("setpoint", |s| s.attitude_ref.x)),
            time_panel("theta", "rad", samples, ("actual", |s| s.state.attitude.y), ("setpoint", |s| s.attitude_ref.y)),
            time_panel("psi", "rad", samples, ("actual", |s| s.state.attitude.z), ("setpoint", |s| s.attitude_ref.z)),
        ],
        PlotKind::Estimates => vec![
            time_panel("d x", "m/s^2", samples, ("true", |s| s.d1.x), ("estimate", |s| s.d1_hat.x)),
            time_panel("d y", "m/s^2", samples, ("true", |s| s.d1.y), ("estimate", |s| s.d1_hat.y)),
            time_panel("d z", "m/s^2", samples, ("true", |s| s.d1.z), ("estimate", |s| s.d1_hat.z)),
            time_panel("d phi", "rad/s^2", samples, ("true", |s| s.d2.x), ("estimate", |s| s.d2_hat.x)),
            time_panel("d theta", "rad/s^2", samples, ("true", |s| s.d2.y), ("estimate", |s| s.d2_hat.y)),
            time_panel("d psi", "rad/s^2", samples, ("true", |s| s.d2.z), ("estimate", |s| s.d2_hat.z)),
        ],
    };
    Figure {
        title: title.to_string(),
        panels,
    }
}

/// Round `span / target` up to 1, 2 or 5 times a power of ten.
pub fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target.max(1) as f64;
    if !(raw > 0.0 && raw.is_finite()) {
        return 1.0;
    }
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * lo.abs().max(1e-3);
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
    format!("{v:.digits$}")
}

fn render_panel(out: &mut String, panel: &Panel, top: f64) {
    let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let (x0, y0) = (MARGIN_L, top + MARGIN_T);
    let all = || panel.series.iter().flat_map(|s| s.points.iter());
    let (mut xl, mut xh) = extent(all().map(|p| p.0));
    let (mut yl, mut yh) = extent(all().map(|p| p.1));
    if panel.equal_aspect {
        let scale = ((xh - xl) / pw).max((yh - yl) / ph);
        let (cx, cy) = (0.5 * (xl + xh), 0.5 * (yl + yh));
        (xl, xh) = (cx - 0.5 * scale * pw, cx + 0.5 * scale * pw);
        (yl, yh) = (cy - 0.5 * scale * ph, cy + 0.5 * scale * ph);
    }
    let sx = |x: f64| x0 + (x - xl) / (xh - xl) * pw;
    let sy = |y: f64| y0 + ph - (y - yl) / (yh - yl) * ph;

    let _ = writeln!(out, r##"<g class="panel"><rect x="{x0:.1}" y="{y0:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#333"/>"##);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#, x0 + pw / 2.0, top + 18.0, escape(&panel.title));
    for (lo, hi, horizontal) in [(xl, xh, true), (yl, yh, false)] {
        let step = nice_step(hi - lo, 6);
        let mut v = (lo / step).ceil() * step;
        while v <= hi + 1e-9 * step {
            if horizontal {
                let x = sx(v);
                let _ = writeln!(out, r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##, y0, y0 + ph, y0 + ph + 14.0, fmt_tick(v, step));
            } else {
                let y = sy(v);
                let _ = writeln!(out, r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"##, x0 + pw, x0 - 4.0, y + 3.0, fmt_tick(v, step));
            }
            v += step;
        }
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#, x0 + pw / 2.0, y0 + ph + 32.0, escape(&panel.x_label));
    let _ = writeln!(out, r#"<text x="16" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#, y0 + ph / 2.0, y0 + ph / 2.0, escape(&panel.y_label));
    for (i, s) in panel.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.3"{dash} points="{}"/>"#, pts.trim_end());
        let ly = y0 + 12.0 + 14.0 * i as f64;
        let lx = x0 + pw - 110.0;
        let _ = writeln!(out, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, lx + 20.0, lx + 25.0, ly + 3.0, escape(&s.label));
    }
    out.push_str("</g>\n");
}

/// Render a figure as a standalone SVG document.
pub fn render_svg(fig: &Figure) -> String {
    let height = 30.0 + PANEL_H * fig.panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}" font-family="sans-serif">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="20" font-size="15" text-anchor="middle">{}</text>"#, PANEL_W / 2.0, escape(&fig.title));
    for (i, p) in fig.panels.iter().enumerate() {
        render_panel(&mut out, p, 30.0 + PANEL_H * i as f64);
    }
    out.push_str("</svg>\n");
    out
}
