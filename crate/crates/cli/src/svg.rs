//! Standalone SVG plots: residual cellmaps, the residual-distance plot and
//! line charts. Coordinates are written with fixed precision so output is
//! reproducible.

use std::fmt::Write;

use rompca_core::diagnostics::{DistanceRow, Grid};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn rgb(c: [f64; 3]) -> String {
    let b = |x: f64| x.round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", b(c[0]), b(c[1]), b(c[2]))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#ffffff\"/>"
    );
}

/// One titled grid at an offset; returns its pixel size.
fn grid_panel(
    out: &mut String,
    grid: &Grid,
    title: &str,
    x0: f64,
    y0: f64,
    cw: f64,
    ch: f64,
) -> (f64, f64) {
    let _ = writeln!(
        out,
        "<text x=\"{x0:.1}\" y=\"{:.1}\" {FONT}>{}</text>",
        y0 + 12.0,
        escape(title)
    );
    let top = y0 + 18.0;
    let _ = writeln!(out, "<g class=\"cells\" shape-rendering=\"crispEdges\">");
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let cell = grid.get(r, c);
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"{}\"/>",
                x0 + c as f64 * cw,
                top + r as f64 * ch,
                rgb(cell.rgb)
            );
        }
    }
    let _ = writeln!(out, "</g>");
    let (w, h) = (grid.cols as f64 * cw, grid.rows as f64 * ch);
    let _ = writeln!(
        out,
        "<rect x=\"{x0:.2}\" y=\"{top:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"none\" stroke=\"#808080\" stroke-width=\"0.5\"/>"
    );
    (w, h + 18.0)
}

fn cell_size(cols: usize, rows: usize, max_w: f64, max_h: f64) -> (f64, f64) {
    let cw = (max_w / cols as f64).clamp(1.0, 14.0);
    let ch = (max_h / rows as f64).clamp(1.0, 14.0);
    (cw, ch)
}

/// Cases as rows, aggregated cells as columns; missing cells are white.
pub fn cellmap_svg(grid: &Grid, title: &str) -> String {
    let (cw, ch) = cell_size(grid.cols, grid.rows, 1200.0, 800.0);
    let mut body = String::new();
    let (w, h) = grid_panel(&mut body, grid, title, 40.0, 10.0, cw, ch);
    let mut out = String::new();
    open(&mut out, w + 60.0, h + 30.0);
    for r in (0..grid.rows).step_by((grid.rows / 10).max(1)) {
        let _ = writeln!(
            out,
            "<text x=\"36\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            28.0 + (r as f64 + 0.8) * ch,
            r + 1
        );
    }
    out.push_str(&body);
    out.push_str("</svg>\n");
    out
}

/// Slices side by side, one panel per grid.
pub fn panels_svg(panels: &[(String, Grid)]) -> String {
    let max_cols = panels.iter().map(|(_, g)| g.cols).max().unwrap_or(1);
    let max_rows = panels.iter().map(|(_, g)| g.rows).max().unwrap_or(1);
    let (cw, ch) = cell_size(max_cols, max_rows, 240.0, 240.0);
    let mut body = String::new();
    let (mut x, mut height) = (10.0, 0.0f64);
    for (title, g) in panels {
        let (w, h) = grid_panel(&mut body, g, title, x, 10.0, cw, ch);
        x += w.max(60.0) + 20.0;
        height = height.max(h);
    }
    let mut out = String::new();
    open(&mut out, x, height + 30.0);
    out.push_str(&body);
    out.push_str("</svg>\n");
    out
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    log_y: bool,
}

impl Frame {
    fn tx(&self, x: f64) -> f64 {
        let span = (self.xmax - self.xmin).max(f64::MIN_POSITIVE);
        self.x0 + (x - self.xmin) / span * self.w
    }

    fn ty(&self, y: f64) -> f64 {
        let (y, lo, hi) = if self.log_y {
            (
                y.max(f64::MIN_POSITIVE).log10(),
                self.ymin.log10(),
                self.ymax.log10(),
            )
        } else {
            (y, self.ymin, self.ymax)
        };
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        self.y0 + self.h - (y - lo) / span * self.h
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#000000\"/>",
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
            self.x0 + self.w / 2.0,
            self.y0 - 8.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 32.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            "<text transform=\"translate({:.1},{:.1}) rotate(-90)\" text-anchor=\"middle\" {FONT}>{}</text>",
            self.x0 - 46.0,
            self.y0 + self.h / 2.0,
            escape(ylabel)
        );
        for t in ticks(self.xmin, self.xmax, false) {
            let x = self.tx(t);
            let _ = writeln!(
                out,
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#000000\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
                self.y0 + self.h,
                self.y0 + self.h + 4.0,
                self.y0 + self.h + 16.0,
                tick_label(t)
            );
        }
        for t in ticks(self.ymin, self.ymax, self.log_y) {
            let y = self.ty(t);
            let _ = writeln!(
                out,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#000000\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
                self.x0 - 4.0,
                self.x0,
                self.x0 - 6.0,
                y + 4.0,
                tick_label(t)
            );
        }
    }
}

fn tick_label(t: f64) -> String {
    if t != 0.0 && (t.abs() >= 1e4 || t.abs() < 1e-2) {
        format!("{t:.0e}")
    } else {
        let s = format!("{t:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return vec![lo];
    }
    if log {
        let (a, b) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
        let step = ((b - a) / 6).max(1);
        return (a..=b)
            .step_by(step as usize)
            .map(|e| 10f64.powi(e))
            .filter(|&t| t >= lo * (1.0 - 1e-9) && t <= hi * (1.0 + 1e-9))
            .collect();
    }
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn padded_range(values: impl Iterator<Item = f64>, log: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return if log { (0.1, 10.0) } else { (0.0, 1.0) };
    }
    if log {
        (lo / 1.5, hi * 1.5)
    } else if hi == lo {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Residual distances on a log scale against the case index, with the
/// cutoff as a dotted line; point area follows the percentage of outlying
/// cells and color the case weight.
pub fn distance_svg(rows: &[DistanceRow], c_case: f64, title: &str) -> String {
    let (ymin, ymax) = padded_range(rows.iter().map(|r| r.distance).chain([c_case]), true);
    let f = Frame {
        x0: 70.0,
        y0: 30.0,
        w: 640.0,
        h: 360.0,
        xmin: 0.0,
        xmax: (rows.len() + 1) as f64,
        ymin,
        ymax,
        log_y: true,
    };
    let mut out = String::new();
    open(&mut out, 740.0, 440.0);
    f.axes(&mut out, title, "case", "residual distance");
    let y = f.ty(c_case);
    let _ = writeln!(
        out,
        "<line class=\"cutoff\" x1=\"{:.1}\" y1=\"{y:.2}\" x2=\"{:.1}\" y2=\"{y:.2}\" stroke=\"#d20000\" stroke-dasharray=\"2,3\"/>",
        f.x0,
        f.x0 + f.w
    );
    let _ = writeln!(out, "<g class=\"points\">");
    for r in rows {
        let radius = 2.0 + 8.0 * r.poc.clamp(0.0, 1.0).sqrt();
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{radius:.2}\" fill=\"{}\" stroke=\"#404040\" stroke-width=\"0.5\" data-index=\"{}\"/>",
            f.tx((r.index + 1) as f64),
            f.ty(r.distance),
            rgb(r.color.rgb()),
            r.index + 1
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

/// A named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// A line chart panel.
#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Optional horizontal reference line.
    pub hline: Option<f64>,
}

const PALETTE: [&str; 6] = [
    "#000000", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e",
];

/// Panels side by side with a shared legend.
pub fn line_panels_svg(panels: &[Panel]) -> String {
    let (pw, ph) = (320.0, 260.0);
    let width = 20.0 + panels.len() as f64 * (pw + 80.0);
    let names: Vec<&str> = {
        let mut v: Vec<&str> = Vec::new();
        for p in panels {
            for s in &p.series {
                if !v.contains(&s.name.as_str()) {
                    v.push(&s.name);
                }
            }
        }
        v
    };
    let mut out = String::new();
    open(&mut out, width, ph + 110.0 + 16.0 * names.len() as f64);
    for (i, p) in panels.iter().enumerate() {
        let pts = || p.series.iter().flat_map(|s| s.points.iter());
        let (xmin, xmax) = padded_range(pts().map(|q| q.0), false);
        let (ymin, ymax) = padded_range(pts().map(|q| q.1).chain(p.hline), p.log_y);
        let f = Frame {
            x0: 70.0 + i as f64 * (pw + 80.0),
            y0: 30.0,
            w: pw,
            h: ph,
            xmin,
            xmax,
            ymin,
            ymax,
            log_y: p.log_y,
        };
        f.axes(&mut out, &p.title, &p.xlabel, &p.ylabel);
        if let Some(h) = p.hline {
            let y = f.ty(h);
            let _ = writeln!(
                out,
                "<line x1=\"{:.1}\" y1=\"{y:.2}\" x2=\"{:.1}\" y2=\"{y:.2}\" stroke=\"#808080\" stroke-dasharray=\"4,3\"/>",
                f.x0,
                f.x0 + f.w
            );
        }
        for s in &p.series {
            let color =
                PALETTE[names.iter().position(|n| *n == s.name).unwrap_or(0) % PALETTE.len()];
            let coords: Vec<String> = s
                .points
                .iter()
                .filter(|q| q.1.is_finite() && (!p.log_y || q.1 > 0.0))
                .map(|&(x, y)| format!("{:.2},{:.2}", f.tx(x), f.ty(y)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline class=\"series\" data-name=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                escape(&s.name),
                coords.join(" ")
            );
        }
    }
    for (k, name) in names.iter().enumerate() {
        let y = ph + 90.0 + 16.0 * k as f64;
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            "<line x1=\"70\" y1=\"{y:.1}\" x2=\"95\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"1.5\"/><text x=\"100\" y=\"{:.1}\" {FONT}>{}</text>",
            y + 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
