//! Minimal SVG charts: line, step and marker series on linear or log axes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Dashed,
    Points,
    /// Crosses, for poles.
    Crosses,
    /// Histogram bars between consecutive x values.
    Bars,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub mark: Mark,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    /// Same scale on both axes (pole-zero maps).
    pub equal_aspect: bool,
    pub series: Vec<Series>,
    /// Extra reference curves drawn in light grey, e.g. the unit circle.
    pub guides: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            equal_aspect: false,
            series: Vec::new(),
            guides: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn equal_aspect(mut self) -> Self {
        self.equal_aspect = true;
        self
    }

    pub fn add(mut self, name: &str, x: &[f64], y: &[f64], mark: Mark) -> Self {
        self.series.push(Series { name: name.into(), x: x.to_vec(), y: y.to_vec(), mark });
        self
    }

    pub fn guide(mut self, x: Vec<f64>, y: Vec<f64>) -> Self {
        self.guides.push((x, y));
        self
    }

    fn tx(&self, x: f64) -> f64 {
        if self.log_x {
            x.log10()
        } else {
            x
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        let all = self.series.iter().map(|s| (&s.x, &s.y)).chain(self.guides.iter().map(|(x, y)| (x, y)));
        for (x, y) in all {
            for (&a, &b) in x.iter().zip(y) {
                let a = self.tx(a);
                if a.is_finite() && b.is_finite() {
                    xs = (xs.0.min(a), xs.1.max(a));
                    ys = (ys.0.min(b), ys.1.max(b));
                }
            }
        }
        if self.series.iter().any(|s| s.mark == Mark::Bars) {
            ys.0 = ys.0.min(0.0);
        }
        let pad = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                (lo - 0.5 - 0.05 * lo.abs(), hi + 0.5 + 0.05 * hi.abs())
            } else {
                let p = 0.04 * (hi - lo);
                (lo - p, hi + p)
            }
        };
        let (x0, x1) = if self.log_x { xs } else { pad(xs) };
        let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
        let (y0, y1) = pad(ys);
        if self.equal_aspect {
            let pw = W - LEFT - RIGHT;
            let ph = H - TOP - BOTTOM;
            let scale = ((x1 - x0) / pw).max((y1 - y0) / ph);
            let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            return (cx - 0.5 * pw * scale, cx + 0.5 * pw * scale, cy - 0.5 * ph * scale, cy + 0.5 * ph * scale);
        }
        (x0, x1, y0, y1)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (self.tx(x) - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));

        // Grid and ticks.
        let xt = if self.log_x { log_ticks(x0, x1) } else { nice_ticks(x0, x1) };
        for t in xt {
            let x = if self.log_x { LEFT + (t - x0) / (x1 - x0) * pw } else { px(t) };
            let label = if self.log_x { fmt_tick(10f64.powf(t)) } else { fmt_tick(t) };
            let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#e5e5e5"/>"##, TOP + ph);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, TOP + ph + 16.0);
        }
        for t in nice_ticks(y0, y1) {
            let y = py(t);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e5e5e5"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(t));
        }
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        let _ = writeln!(
            s,
            r#"<defs><clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath></defs>"#
        );
        let _ = writeln!(s, r#"<g clip-path="url(#plot)">"#);
        for (x, y) in &self.guides {
            let pts = polyline(x, y, &px, &py);
            let _ = writeln!(s, r##"<polyline points="{pts}" fill="none" stroke="#aaaaaa" stroke-dasharray="3 3"/>"##);
        }
        for (k, ser) in self.series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            match ser.mark {
                Mark::Line | Mark::Dashed => {
                    let dash = if ser.mark == Mark::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let pts = polyline(&ser.x, &ser.y, &px, &py);
                    let _ = writeln!(s, r#"<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"{dash}/>"#);
                }
                Mark::Points => {
                    for (&a, &b) in ser.x.iter().zip(&ser.y) {
                        if a.is_finite() && b.is_finite() {
                            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{c}"/>"#, px(a), py(b));
                        }
                    }
                }
                Mark::Crosses => {
                    for (&a, &b) in ser.x.iter().zip(&ser.y) {
                        if a.is_finite() && b.is_finite() {
                            let (u, v) = (px(a), py(b));
                            let _ = writeln!(
                                s,
                                r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="{c}"/>"#,
                                u - 3.0,
                                v - 3.0,
                                u + 3.0,
                                v + 3.0,
                                u - 3.0,
                                v + 3.0,
                                u + 3.0,
                                v - 3.0
                            );
                        }
                    }
                }
                Mark::Bars => {
                    for i in 0..ser.x.len().saturating_sub(1) {
                        let (a, b) = (px(ser.x[i]), px(ser.x[i + 1]));
                        let top = py(ser.y[i]);
                        let base = py(0.0);
                        let _ = writeln!(
                            s,
                            r#"<rect x="{a:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.6" stroke="{c}"/>"#,
                            top.min(base),
                            (b - a).max(0.0),
                            (base - top).abs()
                        );
                    }
                }
            }
        }
        let _ = writeln!(s, "</g>");

        // Legend.
        for (k, ser) in self.series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            let y = TOP + 12.0 + 18.0 * k as f64;
            let x = LEFT + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{c}" stroke-width="2"/>"#, x + 18.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 24.0, y + 4.0, esc(&ser.name));
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

fn polyline(x: &[f64], y: &[f64], px: &dyn Fn(f64) -> f64, py: &dyn Fn(f64) -> f64) -> String {
    let mut out = String::new();
    for (&a, &b) in x.iter().zip(y) {
        let (u, v) = (px(a), py(b));
        if u.is_finite() && v.is_finite() {
            let _ = write!(out, "{u:.2},{v:.2} ");
        }
    }
    out.trim_end().to_string()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(t: f64) -> String {
    if t == 0.0 {
        return "0".into();
    }
    let a = t.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{t:.0e}")
    } else {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Round-number ticks covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 7.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Decade ticks in log10 units.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.ceil() as i64, hi.floor() as i64);
    let every = ((b - a) / 8 + 1).max(1);
    (a..=b).filter(|k| (k - a) % every == 0).map(|k| k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(nice_ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert!(nice_ticks(-6.0, 6.0).contains(&0.0));
    }

    #[test]
    fn renders_deterministically() {
        let p = Plot::new("t", "x", "y").add("a", &[1.0, 10.0, 100.0], &[0.0, 1.0, 0.5], Mark::Line).log_x();
        let a = p.render();
        assert_eq!(a, p.render());
        assert!(a.starts_with("<svg") && a.contains("polyline"));
    }
}
