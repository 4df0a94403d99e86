//! Standalone SVG line/band plots and heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, UqError};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 96.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// Shaded region between `lo` and `hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub label: String,
    pub xs: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub bands: Vec<Band>,
    pub lines: Vec<Series>,
    /// Drawn as dots.
    pub scatter: Vec<Series>,
}

/// Values on a regular grid, row-major with `y` varying slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub title: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    /// Colour scale limits.
    pub value_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Plot {
    Lines(LinePlot),
    Heatmap(Heatmap),
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    if lo == hi {
        return Some((lo - 0.5, hi + 0.5));
    }
    let pad = 0.04 * (hi - lo);
    Some((lo - pad, hi + pad))
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (frame.px(frame.x.0), frame.px(frame.x.1));
    let (y0, y1) = (frame.py(frame.y.0), frame.py(frame.y.1));
    let _ = writeln!(
        out,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = frame.x.0 + t * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + t * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#,
            y0 + 4.0,
            y0 + 16.0
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn check_series(label: &str, xs: &[f64], others: &[&[f64]]) -> Result<()> {
    if xs.is_empty() {
        return Err(UqError::EmptyInput("plot series"));
    }
    if let Some(bad) = others.iter().find(|o| o.len() != xs.len()) {
        return Err(UqError::InvalidArgument(format!(
            "series {label:?} has {} x values but {} y values",
            xs.len(),
            bad.len()
        )));
    }
    Ok(())
}

fn render_lines(plot: &LinePlot) -> Result<String> {
    if plot.bands.is_empty() && plot.lines.is_empty() && plot.scatter.is_empty() {
        return Err(UqError::EmptyInput("plot series"));
    }
    for b in &plot.bands {
        check_series(&b.label, &b.xs, &[&b.lo, &b.hi])?;
    }
    for s in plot.lines.iter().chain(&plot.scatter) {
        check_series(&s.label, &s.xs, &[&s.ys])?;
    }
    let xs = plot
        .bands
        .iter()
        .flat_map(|b| b.xs.iter())
        .chain(plot.lines.iter().chain(&plot.scatter).flat_map(|s| s.xs.iter()))
        .copied();
    let ys = plot
        .bands
        .iter()
        .flat_map(|b| b.lo.iter().chain(&b.hi))
        .chain(plot.lines.iter().chain(&plot.scatter).flat_map(|s| s.ys.iter()))
        .copied();
    let frame = Frame {
        x: padded_range(xs).ok_or(UqError::NonFinite("plot x values"))?,
        y: padded_range(ys).ok_or(UqError::NonFinite("plot y values"))?,
    };

    let mut out = String::new();
    header(&mut out, &plot.title);
    let mut legend = Vec::new();
    let mut colour = 0;
    for b in &plot.bands {
        let c = PALETTE[colour % PALETTE.len()];
        colour += 1;
        let mut d = String::new();
        let upper = b.xs.iter().zip(&b.hi).filter(|(x, y)| x.is_finite() && y.is_finite());
        for (i, (x, y)) in upper.enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, frame.px(*x), frame.py(*y));
        }
        for (x, y) in b.xs.iter().zip(&b.lo).rev().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = write!(d, "L{:.2},{:.2} ", frame.px(*x), frame.py(*y));
        }
        let _ = writeln!(out, r#"<path d="{}Z" fill="{c}" fill-opacity="0.25" stroke="none"/>"#, d.trim_end());
        legend.push((b.label.as_str(), c));
    }
    for s in &plot.lines {
        let c = PALETTE[colour % PALETTE.len()];
        colour += 1;
        let pts: Vec<String> = s
            .xs
            .iter()
            .zip(&s.ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        legend.push((s.label.as_str(), c));
    }
    for s in &plot.scatter {
        let c = PALETTE[colour % PALETTE.len()];
        colour += 1;
        for (x, y) in s.xs.iter().zip(&s.ys).filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{c}"/>"#,
                frame.px(*x),
                frame.py(*y)
            );
        }
        legend.push((s.label.as_str(), c));
    }
    axes(&mut out, &frame, &plot.x_label, &plot.y_label);
    for (i, (label, c)) in legend.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT + 8.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{c}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            y,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// White to dark blue.
fn colour_ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

fn render_heatmap(map: &Heatmap) -> Result<String> {
    if map.nx == 0 || map.ny == 0 || map.values.is_empty() {
        return Err(UqError::EmptyInput("heatmap values"));
    }
    if map.values.len() != map.nx * map.ny {
        return Err(UqError::DimensionMismatch {
            expected: map.nx * map.ny,
            got: map.values.len(),
        });
    }
    let (vlo, vhi) = map.value_range;
    if !(vhi > vlo) || !(map.x_range.1 > map.x_range.0) || !(map.y_range.1 > map.y_range.0) {
        return Err(UqError::InvalidArgument("heatmap ranges must be increasing".into()));
    }
    let frame = Frame {
        x: map.x_range,
        y: map.y_range,
    };
    let mut out = String::new();
    header(&mut out, &map.title);
    let dx = (map.x_range.1 - map.x_range.0) / map.nx as f64;
    let dy = (map.y_range.1 - map.y_range.0) / map.ny as f64;
    let cw = frame.px(map.x_range.0 + dx) - frame.px(map.x_range.0);
    let ch = frame.py(map.y_range.0) - frame.py(map.y_range.0 + dy);
    for j in 0..map.ny {
        for i in 0..map.nx {
            let v = map.values[j * map.nx + i];
            let x = frame.px(map.x_range.0 + i as f64 * dx);
            let y = frame.py(map.y_range.0 + (j + 1) as f64 * dy);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                cw + 0.05,
                ch + 0.05,
                colour_ramp((v - vlo) / (vhi - vlo))
            );
        }
    }
    axes(&mut out, &frame, "x1", "x2");
    let bar_x = WIDTH - MARGIN_RIGHT + 16.0;
    let steps = 20;
    let bar_h = (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) / steps as f64;
    for s in 0..steps {
        let t = (s as f64 + 0.5) / steps as f64;
        let y = HEIGHT - MARGIN_BOTTOM - (s + 1) as f64 * bar_h;
        let _ = writeln!(
            out,
            r#"<rect x="{bar_x:.2}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            bar_h + 0.05,
            colour_ramp(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}">{vhi:.3}</text><text x="{:.2}" y="{:.2}">{vlo:.3}</text>"#,
        bar_x + 18.0,
        MARGIN_TOP + 8.0,
        bar_x + 18.0,
        HEIGHT - MARGIN_BOTTOM
    );
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_svg(plot: &Plot) -> Result<String> {
    match plot {
        Plot::Lines(p) => render_lines(p),
        Plot::Heatmap(h) => render_heatmap(h),
    }
}

/// Renders first so that invalid input never leaves a file behind.
pub fn write_svg(plot: &Plot, path: &Path) -> Result<()> {
    let svg = render_svg(plot)?;
    std::fs::write(path, svg)?;
    Ok(())
}
