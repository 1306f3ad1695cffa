//! Table and chart emitters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Writes a table with a mandatory header row.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric table; every row must match the header width.
pub fn write_numeric_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_csv(path, header, rows.iter().map(|r| r.iter().map(|&v| num(v)).collect()))
}

/// Shortest representation that round-trips.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Pretty JSON with a trailing newline; key order follows field order.
pub fn write_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// One polyline of a chart.
#[derive(Clone, Debug)]
pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Vertical marker at an abscissa.
#[derive(Clone, Debug)]
pub struct Marker {
    pub label: String,
    pub x: f64,
}

/// Minimal static line chart.
#[derive(Clone, Debug, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub lines: Vec<Line>,
    pub markers: Vec<Marker>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round step for about `n` ticks over `span`.
fn nice_step(span: f64, n: f64) -> f64 {
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, log_x: bool) -> Self {
        Chart { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), log_x, ..Default::default() }
    }

    pub fn line(mut self, label: impl Into<String>, x: &[f64], y: &[f64]) -> Self {
        self.lines.push(Line { label: label.into(), x: x.to_vec(), y: y.to_vec() });
        self
    }

    pub fn marker(mut self, label: impl Into<String>, x: f64) -> Self {
        self.markers.push(Marker { label: label.into(), x });
        self
    }

    fn tx(&self, x: f64) -> Option<f64> {
        if self.log_x {
            (x > 0.0).then(|| x.log10())
        } else {
            Some(x)
        }
    }

    /// Renders the chart; non-finite points break the polyline.
    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .lines
            .iter()
            .flat_map(|l| l.x.iter().zip(&l.y))
            .filter_map(|(&x, &y)| Some((self.tx(x)?, y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            let pad = if y0 == 0.0 { 0.5 } else { 0.05 * y0.abs() };
            y0 -= pad;
            y1 += pad;
        }
        let pad = 0.04 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );

        let ystep = nice_step(y1 - y0, 6.0);
        for k in (y0 / ystep).ceil() as i64..=(y1 / ystep).floor() as i64 {
            let t = k as f64 * ystep;
            let y = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                tick_label(t)
            );
        }
        let xticks: Vec<f64> = if self.log_x {
            let mults: &[f64] = if x1 - x0 < 2.0 { &[1.0, 2.0, 5.0] } else { &[1.0] };
            let every = (nice_step(x1 - x0, 6.0).max(1.0)) as i32;
            (x0.floor() as i32..=x1.ceil() as i32)
                .filter(|k| mults.len() > 1 || k.rem_euclid(every) == 0)
                .flat_map(|k| mults.iter().map(move |m| (m * 10f64.powi(k)).log10()))
                .filter(|t| *t >= x0 - 1e-12 && *t <= x1 + 1e-12)
                .collect()
        } else {
            let step = nice_step(x1 - x0, 6.0);
            let first = (x0 / step).ceil() as i64;
            let last = (x1 / step + 1e-9).floor() as i64;
            (first..=last).map(|k| k as f64 * step).collect()
        };
        for t in xticks {
            let x = sx(t);
            let label = if self.log_x { tick_label(10f64.powf(t)) } else { tick_label(t) };
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
                TOP + ph,
                TOP + ph + 16.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            escape(&format!("{}{}", self.x_label, if self.log_x { " (log scale)" } else { "" }))
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, l) in self.lines.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let mut runs: Vec<Vec<String>> = vec![vec![]];
            for (&x, &y) in l.x.iter().zip(&l.y) {
                match self.tx(x) {
                    Some(tx) if tx.is_finite() && y.is_finite() => {
                        runs.last_mut().unwrap().push(format!("{:.2},{:.2}", sx(tx), sy(y)))
                    }
                    _ => runs.push(vec![]),
                }
            }
            for r in runs.iter().filter(|r| r.len() > 1) {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                    r.join(" ")
                );
            }
            let ly = TOP + 14.0 + 15.0 * i as f64;
            let lx = LEFT + pw - 150.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                lx + 22.0,
                escape(&l.label)
            );
        }
        for (i, m) in self.markers.iter().enumerate() {
            if let Some(tx) = self.tx(m.x).filter(|t| *t >= x0 && *t <= x1) {
                let x = sx(tx);
                let colour = PALETTE[i % PALETTE.len()];
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="{colour}" stroke-dasharray="4 3"/><text x="{:.2}" y="{:.2}" fill="{colour}">{}</text>"#,
                    TOP + ph,
                    x + 3.0,
                    TOP + ph - 6.0 - 12.0 * i as f64,
                    escape(&m.label)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, self.to_svg())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("habitfbp-report-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.csv");
        write_numeric_csv(&p, &["x", "y"], &[vec![1.0, 0.1], vec![2.5, 1e-20]]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "x,y\r\n1,0.1\r\n2.5,1e-20\r\n");
        let mut r = csv::Reader::from_path(&p).unwrap();
        let vals: Vec<f64> = r.records().flat_map(|r| r.unwrap().iter().map(|s| s.parse().unwrap()).collect::<Vec<f64>>()).collect();
        assert_eq!(vals, vec![1.0, 0.1, 2.5, 1e-20]);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn svg_has_lines_legend_and_markers() {
        let x: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let svg = Chart::new("v & c", "x", "v", true).line("a<b", &x, &y).marker("x0", 1.3).to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("v &amp; c"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("(log scale)"));
        for tick in [">0.2<", ">0.5<", ">1<", ">2<"] {
            assert!(svg.contains(tick), "{tick}");
        }
    }

    #[test]
    fn svg_breaks_on_non_finite_and_is_deterministic() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 2.0, f64::NAN, 4.0, 5.0];
        let c = Chart::new("t", "x", "y", false).line("l", &x, &y);
        assert_eq!(c.to_svg().matches("<polyline").count(), 2);
        assert_eq!(c.to_svg(), c.to_svg());
        let empty = Chart::new("t", "x", "y", false).to_svg();
        assert!(empty.contains("</svg>"));
    }
}
