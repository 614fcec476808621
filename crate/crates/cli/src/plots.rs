//! Small static SVG charts.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub style: Style,
}

/// A labelled point drawn on top of the series.
#[derive(Debug, Clone)]
pub struct Marker {
    pub x: f64,
    pub y: f64,
    pub label: String,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
    /// Shaded band `(x, lower, upper)`.
    pub band: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Roughly five round tick values spanning `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e6).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.x.iter().copied())
            .chain(self.markers.iter().map(|m| m.x));
        let mut ys: Vec<f64> = self
            .series
            .iter()
            .flat_map(|s| s.y.iter().copied())
            .chain(self.markers.iter().map(|m| m.y))
            .collect();
        if let Some((_, lo, hi)) = &self.band {
            ys.extend(lo.iter().chain(hi));
        }
        let (x0, x1) = range(xs);
        let (y0, y1) = range(ys.into_iter());
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(&self.title));
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/>"##, TOP + ph);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, fmt_num(t));
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#eee"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_num(t));
        }
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        if let Some((bx, lo, hi)) = &self.band {
            let mut pts: Vec<String> = bx.iter().zip(hi).map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            pts.extend(bx.iter().zip(lo).rev().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))));
            let _ = writeln!(s, r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.18" stroke="none"/>"##, pts.join(" "));
        }
        for (k, ser) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts = ser.x.iter().zip(&ser.y).filter(|(x, y)| x.is_finite() && y.is_finite());
            match ser.style {
                Style::Points => {
                    for (x, y) in pts {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, sx(*x), sy(*y));
                    }
                }
                Style::Line | Style::Dashed => {
                    let p: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
                    let dash = if ser.style == Style::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
                        p.join(" ")
                    );
                }
            }
            let ly = TOP + 14.0 + 16.0 * k as f64;
            let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="12" height="3" fill="{color}"/>"#, LEFT + 10.0, ly - 4.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, LEFT + 28.0, esc(&ser.name));
        }
        for m in &self.markers {
            let (x, y) = (sx(m.x), sy(m.y));
            let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="none" stroke="#d62728" stroke-width="2"/>"##);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 8.0, y - 8.0, esc(&m.label));
        }
        s.push_str("</svg>\n");
        s
    }
}
