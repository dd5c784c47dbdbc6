//! Static log-log line plots as SVG 1.1.

use std::fmt::Write as _;

use fgd_core::experiment::output::CsvRow;
use fgd_core::experiment::{reference_curves, THEORY_BOUND, THEORY_EXACT};
use fgd_core::theory;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub class: &'static str,
    pub color: &'static str,
    pub dashed: bool,
    pub width: f64,
    /// `(k, value)` with both coordinates positive.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub label: String,
    pub class: &'static str,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
}

fn method_style(method: &str) -> (&'static str, &'static str, bool, f64) {
    match method {
        "forward-gradient" => ("trajectory", "#1f5fbf", false, 1.0),
        "sgd" => ("trajectory", "#d62728", false, 1.6),
        "zeroth-order" => ("trajectory", "#2ca02c", false, 1.0),
        THEORY_EXACT => ("theory", "#000000", false, 1.6),
        THEORY_BOUND => ("theory", "#7f7f7f", true, 1.6),
        _ => ("trajectory", "#9467bd", false, 1.0),
    }
}

/// One series per `(method, run_id)` in order of first appearance, plus the
/// three reference lines and the `k⋆` marker when `d` is given.
pub fn figure_from_rows(rows: &[CsvRow], d: Option<usize>, title: &str) -> Figure {
    let mut series: Vec<Series> = Vec::new();
    let mut keys: Vec<(String, u64)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.run_id);
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                let (class, color, dashed, width) = method_style(&r.method);
                keys.push(key);
                series.push(Series {
                    label: r.method.clone(),
                    class,
                    color,
                    dashed,
                    width,
                    points: Vec::new(),
                });
                series.len() - 1
            }
        };
        if r.k > 0 && r.mse > 0.0 && r.mse.is_finite() {
            series[idx].points.push((r.k as f64, r.mse));
        }
    }
    let mut markers = Vec::new();
    if let Some(d) = d {
        let mut ks: Vec<u64> = rows.iter().map(|r| r.k).filter(|&k| k > 0).collect();
        ks.sort_unstable();
        ks.dedup();
        let refs = reference_curves(d, &ks);
        let lines: [(&str, fn(&fgd_core::experiment::ReferencePoint) -> f64); 3] = [
            ("d² log d / k", |p| p.upper),
            ("d² / k", |p| p.middle),
            ("d / k", |p| p.lower),
        ];
        for (label, f) in lines {
            series.push(Series {
                label: label.to_string(),
                class: "reference",
                color: "#555555",
                dashed: true,
                width: 1.2,
                points: refs.iter().map(|p| (p.k as f64, f(p))).collect(),
            });
        }
        if let Ok(k) = theory::k_star(d) {
            markers.push(Marker {
                label: "k⋆".to_string(),
                class: "k-star",
                x: k,
            });
        }
    }
    Figure {
        title: title.to_string(),
        x_label: "iteration k".to_string(),
        y_label: "squared error".to_string(),
        series,
        markers,
    }
}

fn decade_range(values: impl Iterator<Item = f64>) -> Option<(i32, i32)> {
    let (lo, hi) = values
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let a = lo.log10().floor() as i32;
    let b = (hi.log10().ceil() as i32).max(a + 1);
    Some((a, b))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn power_label(e: i32) -> String {
    format!("10<tspan dy=\"-6\" font-size=\"9\">{e}</tspan>")
}

pub fn render(fig: &Figure) -> String {
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let xs = fig
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .chain(fig.markers.iter().map(|m| m.x));
    let (x0, x1) = decade_range(xs).unwrap_or((0, 1));
    let (y0, y1) = decade_range(fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.1))).unwrap_or((0, 1));
    let sx = |x: f64| LEFT + (x.log10() - x0 as f64) / (x1 - x0) as f64 * pw;
    let sy = |y: f64| TOP + (y1 as f64 - y.log10()) / (y1 - y0) as f64 * ph;

    let mut o = String::new();
    let _ = writeln!(o, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        o,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(o, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        o,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        LEFT + pw / 2.0,
        escape(&fig.title)
    );

    let _ = writeln!(o, "<g class=\"grid\" stroke=\"#e5e5e5\" stroke-width=\"1\">");
    for e in x0..=x1 {
        let x = sx(10f64.powi(e));
        let _ = writeln!(
            o,
            "<line x1=\"{x:.2}\" y1=\"{TOP:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/>",
            TOP + ph
        );
    }
    for e in y0..=y1 {
        let y = sy(10f64.powi(e));
        let _ = writeln!(
            o,
            "<line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>",
            LEFT + pw
        );
    }
    let _ = writeln!(o, "</g>");

    let _ = writeln!(o, "<g class=\"axes\" fill=\"#000000\">");
    let _ = writeln!(
        o,
        "<rect x=\"{LEFT:.2}\" y=\"{TOP:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#000000\"/>"
    );
    for e in x0..=x1 {
        let x = sx(10f64.powi(e));
        let _ = writeln!(
            o,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            TOP + ph + 18.0,
            power_label(e)
        );
    }
    for e in y0..=y1 {
        let y = sy(10f64.powi(e));
        let _ = writeln!(
            o,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 6.0,
            y + 4.0,
            power_label(e)
        );
    }
    let _ = writeln!(
        o,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        HEIGHT - 16.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        o,
        "<text transform=\"translate(20 {:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        TOP + ph / 2.0,
        escape(&fig.y_label)
    );
    let _ = writeln!(o, "</g>");

    for m in &fig.markers {
        let x = sx(m.x);
        let _ = writeln!(
            o,
            "<line class=\"{}\" x1=\"{x:.2}\" y1=\"{TOP:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#444444\" stroke-width=\"1\" stroke-dasharray=\"2 3\"/>",
            m.class,
            TOP + ph
        );
        let _ = writeln!(
            o,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            x + 4.0,
            TOP + 14.0,
            escape(&m.label)
        );
    }

    for s in &fig.series {
        if s.points.is_empty() {
            continue;
        }
        let pts = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ");
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            o,
            "<polyline class=\"{}\" data-label=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{:.1}\"{dash} points=\"{pts}\"/>",
            s.class,
            escape(&s.label),
            s.color,
            s.width
        );
    }

    let mut legend: Vec<(&str, &str, bool)> = Vec::new();
    for s in &fig.series {
        if !legend.iter().any(|(l, _, _)| *l == s.label) {
            legend.push((&s.label, s.color, s.dashed));
        }
    }
    let lx = LEFT + pw + 14.0;
    let _ = writeln!(o, "<g class=\"legend\">");
    for (i, (label, color, dashed)) in legend.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let dash = if *dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            o,
            "<line x1=\"{lx:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            lx + 24.0
        );
        let _ = writeln!(
            o,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            lx + 30.0,
            y + 4.0,
            escape(label)
        );
    }
    let _ = writeln!(o, "</g>");
    let _ = writeln!(o, "</svg>");
    o
}
