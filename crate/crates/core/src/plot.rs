//! Self-contained SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point2;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |a: f64, b: f64| if b - a > 0.0 { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn header(svg: &mut String, title: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str, y_fmt: &dyn Fn(f64) -> String) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(svg, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.px(fx), b + 16.0, tick(fx));
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, f.py(fy) + 4.0, y_fmt(fy));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 14.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}

fn legend(svg: &mut String, names: &[(&str, &str)]) {
    for (i, (name, color)) in names.iter().enumerate() {
        let y = MARGIN + 4.0 + 16.0 * i as f64;
        let x = W - MARGIN - 130.0;
        let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, x + 18.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 24.0, y + 4.0, escape(name));
    }
}

fn points_attr(pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let tr = |y: f64| if self.log_y { y.max(1e-12).log10() } else { y };
        let f = Frame::fit(self.series.iter().flat_map(|s| s.points.iter().map(|&(x, y)| (x, tr(y)))));
        let mut svg = String::new();
        header(&mut svg, &self.title);
        let y_fmt = |v: f64| if self.log_y { tick(10f64.powf(v)) } else { tick(v) };
        axes(&mut svg, &f, &self.x_label, &self.y_label, &y_fmt);
        let mut names = Vec::new();
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts = points_attr(s.points.iter().map(|&(x, y)| (f.px(x), f.py(tr(y)))));
            let _ = writeln!(svg, r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>"#);
            for &(x, y) in &s.points {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, f.px(x), f.py(tr(y)));
            }
            names.push((s.name.as_str(), color));
        }
        legend(&mut svg, &names);
        svg.push_str("</svg>\n");
        svg
    }
}

/// Ground truth and each method's estimates along one trajectory, one
/// `<polyline>` per track.
pub fn trajectory_svg(title: &str, truth: &[Point2], methods: &[(String, Vec<Point2>)]) -> String {
    let all = truth.iter().chain(methods.iter().flat_map(|(_, p)| p.iter()));
    let mut f = Frame::fit(all.map(|p| (p.x, p.y)));
    // Equal axis scale so the geometry is not distorted.
    let span = (f.x1 - f.x0).max(f.y1 - f.y0);
    let (cx, cy) = ((f.x0 + f.x1) / 2.0, (f.y0 + f.y1) / 2.0);
    f = Frame { x0: cx - span / 2.0, x1: cx + span / 2.0, y0: cy - span / 2.0, y1: cy + span / 2.0 };
    let mut svg = String::new();
    header(&mut svg, title);
    axes(&mut svg, &f, "x (m)", "y (m)", &tick);
    let mut names = vec![("ground truth", "black")];
    let line = |svg: &mut String, pts: &[Point2], color: &str, dash: &str| {
        let p = points_attr(pts.iter().map(|q| (f.px(q.x), f.py(q.y))));
        let _ = writeln!(svg, r#"<polyline points="{p}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#);
    };
    line(&mut svg, truth, "black", "");
    for (i, (name, pts)) in methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        line(&mut svg, pts, color, r#" stroke-dasharray="5 3""#);
        names.push((name.as_str(), color));
    }
    legend(&mut svg, &names);
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(svg: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
