//! Minimal SVG output for label distributions and learning curves.

use std::fmt::Write;

use crate::dataset::ClassScheme;
use crate::eval::LearningCurve;
use crate::labels::GroupStats;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 140.0;
const MARGIN_T: f64 = 24.0;
const MARGIN_B: f64 = 56.0;

const SERIES_COLORS: [&str; 6] = ["#555555", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// One bar group: a name plus per-class means and SDs.
#[derive(Debug, Clone)]
pub struct BarSeries<'a> {
    pub name: &'a str,
    pub stats: &'a GroupStats,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn y_axis(out: &mut String, max: f64, ticks: usize) {
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - MARGIN_B
    );
    for t in 0..=ticks {
        let v = max * t as f64 / ticks as f64;
        let y = HEIGHT - MARGIN_B - plot_h * t as f64 / ticks as f64;
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            MARGIN_L,
            WIDTH - MARGIN_R,
            MARGIN_L - 4.0,
            y + 4.0
        );
    }
}

fn legend(out: &mut String, names: &[&str], color_offset: usize) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN_T + 16.0 * i as f64;
        let x = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            SERIES_COLORS[(i + color_offset) % SERIES_COLORS.len()],
            x + 14.0,
            y + 9.0,
            escape(name)
        );
    }
}

/// Grouped bar chart: one cluster per class, one bar per series, with
/// mean ± SD whiskers.
pub fn histogram_chart_svg(scheme: &ClassScheme, series: &[BarSeries<'_>]) -> String {
    let mut out = String::new();
    header(&mut out);
    let max = series
        .iter()
        .flat_map(|s| s.stats.mean.iter().zip(&s.stats.sd).map(|(m, d)| m + d))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let y_max = (max * 10.0).ceil() / 10.0;
    y_axis(&mut out, y_max, 5);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let n_classes = scheme.n_classes().max(1);
    let cluster_w = plot_w / n_classes as f64;
    let bar_w = cluster_w * 0.8 / series.len().max(1) as f64;
    let to_y = |v: f64| HEIGHT - MARGIN_B - plot_h * (v / y_max).clamp(0.0, 1.0);

    for (c, class) in scheme.classes.iter().enumerate() {
        let x0 = MARGIN_L + cluster_w * c as f64 + cluster_w * 0.1;
        for (s, ser) in series.iter().enumerate() {
            let m = ser.stats.mean.get(c).copied().unwrap_or(0.0);
            let sd = ser.stats.sd.get(c).copied().unwrap_or(0.0);
            let x = x0 + bar_w * s as f64;
            let top = to_y(m);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                bar_w * 0.9,
                (HEIGHT - MARGIN_B - top).max(0.0),
                SERIES_COLORS[s % SERIES_COLORS.len()]
            );
            if sd > 0.0 {
                let cx = x + bar_w * 0.45;
                let (lo, hi) = (to_y(m - sd), to_y(m + sd));
                let _ = writeln!(
                    out,
                    r#"<path d="M{cx:.2} {lo:.2}V{hi:.2}M{:.2} {lo:.2}H{:.2}M{:.2} {hi:.2}H{:.2}" stroke="black" fill="none"/>"#,
                    cx - 3.0,
                    cx + 3.0,
                    cx - 3.0,
                    cx + 3.0
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_L + cluster_w * (c as f64 + 0.5),
            HEIGHT - MARGIN_B + 16.0,
            escape(&class.name)
        );
    }
    let names: Vec<&str> = series.iter().map(|s| s.name).collect();
    legend(&mut out, &names, 0);
    out.push_str("</svg>\n");
    out
}

/// Line chart of mean score against label count, one line per curve, with an
/// optional dashed horizontal reference line.
pub fn learning_curve_svg(curves: &[(&str, &LearningCurve)], reference: Option<(&str, f64)>) -> String {
    let mut out = String::new();
    header(&mut out);
    y_axis(&mut out, 1.0, 5);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x_max = curves
        .iter()
        .flat_map(|(_, c)| c.points.iter().map(|p| p.n_labels))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let to_x = |n: f64| MARGIN_L + plot_w * n / x_max;
    let to_y = |v: f64| HEIGHT - MARGIN_B - plot_h * v.clamp(0.0, 1.0);

    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN_L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
    let mut ticks: Vec<usize> = curves.iter().flat_map(|(_, c)| c.points.iter().map(|p| p.n_labels)).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            to_x(t as f64),
            HEIGHT - MARGIN_B + 16.0
        );
    }

    let mut names: Vec<&str> = Vec::new();
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = SERIES_COLORS[(i + 1) % SERIES_COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", to_x(p.n_labels as f64), to_y(p.mean)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &curve.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                to_x(p.n_labels as f64),
                to_y(p.mean)
            );
        }
        names.push(name);
    }
    if let Some((label, v)) = reference {
        let y = to_y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-dasharray="6 4"/>"#,
            WIDTH - MARGIN_R,
            SERIES_COLORS[0]
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, MARGIN_L + 4.0, y - 4.0, escape(label));
    }
    legend(&mut out, &names, 1);
    out.push_str("</svg>\n");
    out
}
