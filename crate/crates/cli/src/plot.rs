//! Minimal standalone SVG charts built from report data.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Self { lo, hi, log }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn label(&self, f: f64) -> String {
        let v = self.lo + f * (self.hi - self.lo);
        if self.log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3}")
        }
    }
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str, x: &Axis, y: &Axis) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, W - 20.0, H - MARGIN, 30.0);
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let px = x0 + f * (x1 - x0);
        let py = y0 - f * (y0 - y1);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 15.0, x.label(f));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, py + 4.0, y.label(f));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 15.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn to_px(x: &Axis, y: &Axis, p: (f64, f64)) -> Option<(f64, f64)> {
    let fx = x.frac(p.0)?;
    let fy = y.frac(p.1)?;
    Some((MARGIN + fx * (W - 20.0 - MARGIN), (H - MARGIN) - fy * (H - MARGIN - 30.0)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart; non-finite points break the line.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], logx: bool, logy: bool) -> String {
    let x = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), logx);
    let y = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), logy);
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, &x, &y);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for &p in &s.points {
            match to_px(&x, &y, p) {
                Some((px, py)) => {
                    let _ = write!(path, "{}{px:.2},{py:.2} ", if pen_down { "L" } else { "M" });
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.trim_end());
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            45.0 + 14.0 * i as f64,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of classified points with optional overlay curves.
pub fn phase_chart(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, bool)], curves: &[Series]) -> String {
    let x = Axis::fit(points.iter().map(|p| p.0), false);
    let y = Axis::fit(points.iter().map(|p| p.1), false);
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, &x, &y);
    for &(px, py, stable) in points {
        if let Some((cx, cy)) = to_px(&x, &y, (px, py)) {
            let fill = if stable { "#2ca02c" } else { "#d62728" };
            let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.5" fill="{fill}"/>"#);
        }
    }
    for (i, s) in curves.iter().enumerate() {
        let color = ["black", "#1f77b4"][i % 2];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0 >= x.lo && p.0 <= x.hi)
            .filter_map(|&p| to_px(&x, &y, p))
            .map(|(a, b)| format!("{a:.2},{b:.2}"))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let _ = writeln!(out, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, MARGIN + 10.0, 45.0 + 14.0 * i as f64, escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}
