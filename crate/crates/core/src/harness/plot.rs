//! Minimal SVG output: line plots (loss curves, error traces) and a
//! piecewise-linear field over a triangulation.

use std::fmt::Write;

use crate::mesh::TriMesh;
use crate::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// `y[i]` plotted at `x = i + 1`.
    pub fn indexed(label: &str, y: &[f64]) -> Self {
        Self { label: label.into(), points: y.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect() }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot; with `log_y` non-positive values are dropped.
pub fn line_plot(title: &str, x_label: &str, series: &[Series], log_y: bool) -> Result<String> {
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|(x, y)| (*x, ty(*y)))
                .collect()
        })
        .collect();
    let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let lab = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{lab}</text>"#, PAD - 4.0, sy(yv) + 4.0);
        let xv = x0 + f * (x1 - x0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xv:.0}</text>"#, sx(xv), H - PAD + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    for (k, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let c = COLORS[k % COLORS.len()];
        let path: Vec<String> = p.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = PAD + 16.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{c}" text-anchor="end">{}</text>"#, W - PAD - 6.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn ramp(t: f64) -> (u8, u8, u8) {
    // blue, white, red
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (u, u, 1.0)
    } else {
        let u = (1.0 - t) / 0.5;
        (1.0, u, u)
    };
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

/// Nodal field drawn as flat triangles coloured by their mean value.
pub fn heatmap(title: &str, mesh: &TriMesh, values: &[f64]) -> Result<String> {
    if values.len() != mesh.n_nodes() {
        return Err(Error::InvalidArgument(format!("{} values for {} nodes", values.len(), mesh.n_nodes())));
    }
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for v in values.iter().filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let (mut bx0, mut bx1, mut by0, mut by1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &mesh.nodes {
        bx0 = bx0.min(p[0]);
        bx1 = bx1.max(p[0]);
        by0 = by0.min(p[1]);
        by1 = by1.max(p[1]);
    }
    let scale = ((W - 2.0 * PAD) / (bx1 - bx0)).min((H - 2.0 * PAD) / (by1 - by0));
    let px = |p: [f64; 2]| (PAD + (p[0] - bx0) * scale, H - PAD - (p[1] - by0) * scale);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    for t in &mesh.triangles {
        let v = (values[t[0]] + values[t[1]] + values[t[2]]) / 3.0;
        let (r, g, b) = ramp((v - lo) / (hi - lo));
        let q: Vec<String> = t.iter().map(|i| px(mesh.nodes[*i])).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="rgb({r},{g},{b})" stroke="rgb({r},{g},{b})" stroke-width="0.3"/>"#, q.join(" "));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">min {lo:.3e}  max {hi:.3e}</text>"#, W - PAD, H - 12.0);
    s.push_str("</svg>\n");
    Ok(s)
}
