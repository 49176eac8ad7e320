//! Minimal static SVG charts: lines, scatter points and shaded bands.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
}

/// A shaded region between `lo` and `hi` at each `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub xs: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round step of about `span / target` (1, 2 or 5 times a power of ten).
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    mag * if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 5.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.04;
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Default::default() }
    }

    pub fn line(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points, mark: Mark::Line });
        self
    }

    pub fn scatter(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points, mark: Mark::Points });
        self
    }

    pub fn band(mut self, band: Band) -> Self {
        self.bands.push(band);
        self
    }

    pub fn to_svg(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(self.bands.iter().flat_map(|b| b.xs.iter().copied()));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.bands.iter().flat_map(|b| b.lo.iter().chain(&b.hi).copied()));
        let (x0, x1) = range(xs);
        let (y0, y1) = range(ys);
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));

        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/>"##, MARGIN_T, MARGIN_T + ph);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MARGIN_T + ph + 16.0, fmt_tick(t));
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(s, r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#eee"/>"##, MARGIN_L + pw);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN_L - 6.0, y + 4.0, fmt_tick(t));
        }
        let _ = writeln!(s, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MARGIN_L + pw / 2.0, HEIGHT - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        let mut legend: Vec<(String, &str)> = Vec::new();
        for (i, b) in self.bands.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut pts: Vec<String> = b.xs.iter().zip(&b.hi).map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            pts.extend(b.xs.iter().zip(&b.lo).rev().map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
            legend.push((b.label.clone(), color));
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            match series.mark {
                Mark::Line => {
                    let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
                }
                Mark::Points => {
                    for &(x, y) in &series.points {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#, sx(x), sy(y));
                    }
                }
            }
            legend.push((series.label.clone(), color));
        }
        for (i, (label, color)) in legend.iter().enumerate() {
            let y = MARGIN_T + 14.0 + 14.0 * i as f64;
            let x = MARGIN_L + 10.0;
            let _ = writeln!(s, r#"<rect x="{x}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
            let _ = writeln!(s, r#"<text x="{}" y="{y:.2}">{}</text>"#, x + 14.0, escape(label));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nice_ticks() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(nice_step(1000.0, 5.0), 200.0);
    }

    #[test]
    fn renders_all_marks() {
        let svg = Chart::new("t <1>", "x", "y")
            .line("curve", vec![(0.0, 0.0), (1.0, 2.0)])
            .scatter("dots", vec![(0.5, 1.0)])
            .band(Band { label: "ci".into(), xs: vec![0.0, 1.0], lo: vec![0.0, 1.0], hi: vec![1.0, 3.0] })
            .to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("<polyline") && svg.contains("<circle") && svg.contains("<polygon"));
        assert!(svg.contains("t &lt;1&gt;"));
    }

    #[test]
    fn empty_chart_is_valid() {
        assert!(Chart::new("", "", "").to_svg().contains("</svg>"));
    }
}
