//! Minimal SVG line charts and histograms.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(title: &str, y_max: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y_max * f64::from(i) / 4.0;
        let y = y0 - (y0 - y1) * f64::from(i) / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, x0 - 5.0, y + 4.0, v);
    }
    s
}

fn y_scale(max: f64) -> f64 {
    if max.is_finite() && max > 0.0 {
        max * 1.05
    } else {
        1.0
    }
}

/// One polyline per series over shared integer x positions.
pub fn line_chart(title: &str, xs: &[usize], series: &[(&str, Vec<f64>)]) -> String {
    let y_max = y_scale(
        series
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max),
    );
    let mut s = frame(title, y_max);
    let n = xs.len().max(2) - 1;
    let px = |i: usize| MARGIN + (W - 2.0 * MARGIN) * i as f64 / n as f64;
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * v / y_max;
    for (i, x) in xs.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(i), H - MARGIN + 15.0);
    }
    for (k, (name, vals)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = vals
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| format!("{:.1},{:.1}", px(i), py(*v)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 15.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bars for densities over equal bins of [0, 1], with the uniform density
/// drawn as a dashed reference line.
pub fn histogram(title: &str, densities: &[f64]) -> String {
    let y_max = y_scale(densities.iter().copied().fold(1.0, f64::max));
    let mut s = frame(title, y_max);
    let n = densities.len().max(1);
    let bw = (W - 2.0 * MARGIN) / n as f64;
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * v / y_max;
    for (i, d) in densities.iter().enumerate() {
        let x = MARGIN + bw * i as f64;
        let y = py(*d);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="#1f77b4" stroke="white"/>"##,
            bw,
            H - MARGIN - y
        );
    }
    let y1 = py(1.0);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{y1:.1}" x2="{}" y2="{y1:.1}" stroke="black" stroke-dasharray="4 3"/>"#,
        W - MARGIN
    );
    for (i, label) in ["0", "0.5", "1"].iter().enumerate() {
        let x = MARGIN + (W - 2.0 * MARGIN) * i as f64 / 2.0;
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{label}</text>"#, H - MARGIN + 15.0);
    }
    s.push_str("</svg>\n");
    s
}
