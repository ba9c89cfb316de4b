//! Self-contained SVG line and box plots.

use std::fmt::Write;
use std::path::Path;

use crate::error::CliError;
use crate::table::Table;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile at `p` by linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        Self {
            x: padded_range(xs),
            y: padded_range(ys),
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(svg, "</g>");
    for i in 0..=4 {
        let v = f.y.0 + (f.y.1 - f.y.0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            tick(v)
        );
        if x_ticks {
            let v = f.x.0 + (f.x.1 - f.x.0) * i as f64 / 4.0;
            let x = f.px(v);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
                y0 + 4.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y0 + 16.0,
                tick(v)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(svg: &mut String, names: &[&str]) {
    if names.is_empty() {
        return;
    }
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#,
            x + 16.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 20.0, y + 4.0, escape(name));
    }
    let _ = writeln!(svg, "</g>");
}

/// One polyline per non-empty series, with a legend; axes only when every
/// series is empty.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let f = Frame::new(pts().map(|p| p.0), pts().map(|p| p.1));
    let mut svg = String::new();
    header(&mut svg, title);
    axes(&mut svg, &f, x_label, y_label, true);
    let mut names = Vec::new();
    for s in series.iter().filter(|s| !s.points.is_empty()) {
        let color = PALETTE[names.len() % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.name),
            coords.join(" ")
        );
        names.push(s.name.as_str());
    }
    legend(&mut svg, &names);
    svg.push_str("</svg>\n");
    svg
}

/// Box-and-whisker plot (whiskers at min and max). Each box carries its
/// statistics as `data-*` attributes.
pub fn box_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let all = || groups.iter().flat_map(|g| g.1.iter().copied());
    let f = Frame::new([0.0, groups.len() as f64].into_iter(), all());
    let mut svg = String::new();
    header(&mut svg, title);
    axes(&mut svg, &f, "", y_label, false);
    let slot = (WIDTH - LEFT - RIGHT) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 16.0,
            escape(name)
        );
        let Some(b) = box_stats(values) else { continue };
        let half = (slot * 0.3).min(40.0);
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<g class="box" data-group="{}" data-n="{}" data-min="{:e}" data-q1="{:e}" data-median="{:e}" data-q3="{:e}" data-max="{:e}" stroke="{color}" fill="none">"#,
            escape(name),
            values.len(),
            b.min,
            b.q1,
            b.median,
            b.q3,
            b.max
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}"/>"#,
            f.py(b.min),
            f.py(b.q1)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}"/>"#,
            f.py(b.q3),
            f.py(b.max)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
            cx - half,
            f.py(b.q3),
            2.0 * half,
            (f.py(b.q1) - f.py(b.q3)).max(0.0)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke-width="2"/>"#,
            cx - half,
            f.py(b.median),
            cx + half,
            f.py(b.median)
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Line plot of a wide CSV: the first column is x, every other column a series.
pub fn plot_csv(path: &Path) -> Result<String, CliError> {
    let t = Table::read(path)?;
    let xs = t.column_f64(&t.header[0])?;
    let series = t.header[1..]
        .iter()
        .map(|name| {
            let ys = t.column_f64(name)?;
            Ok(Series {
                name: name.clone(),
                points: xs.iter().copied().zip(ys).collect(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let title = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(line_plot(&title, &t.header[0], "", &series))
}
