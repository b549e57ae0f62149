//! Minimal static SVG rendering for embeddings and AUC curves.

use std::collections::BTreeMap;
use std::fmt::Write;

const SIZE: f64 = 1000.0;
const MARGIN: f64 = 60.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf", "#393b79", "#637939",
];

/// Escapes text for use in element content and attribute values.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' && c != '\r' => out.push('?'),
            c => out.push(c),
        }
    }
    out
}

/// Color for the `i`-th label. Past the fixed palette, hues step by the
/// golden angle so neighbors stay distinguishable.
pub fn label_color(i: usize) -> String {
    match PALETTE.get(i) {
        Some(c) => (*c).to_string(),
        None => {
            let hue = ((i - PALETTE.len()) as f64 * 137.507_764) % 360.0;
            let light = if i % 2 == 0 { 40 } else { 55 };
            format!("hsl({hue:.1},70%,{light}%)")
        }
    }
}

/// Distinct labels in sorted order, with their color index.
fn label_index(labels: &[String]) -> BTreeMap<&str, usize> {
    let mut distinct: Vec<&str> = labels.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
}

fn header(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{height}" viewBox="0 0 {SIZE} {height}">
<rect x="0" y="0" width="{SIZE}" height="{height}" fill="white"/>
<text x="{x}" y="32" font-family="sans-serif" font-size="20" text-anchor="middle">{t}</text>"#,
        x = SIZE / 2.0,
        t = escape(title)
    );
}

/// Scatter plot of 2-D points colored by label, with a legend.
pub fn scatter(points: &[(f64, f64)], labels: &[String], title: &str) -> String {
    assert_eq!(points.len(), labels.len());
    let mut out = String::new();
    header(&mut out, SIZE, title);

    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0);
    let scale = if span > 0.0 && span.is_finite() { (SIZE - 2.0 * MARGIN) / span } else { 1.0 };
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);

    let index = label_index(labels);
    out.push_str("<g class=\"points\">\n");
    for (&(x, y), label) in points.iter().zip(labels) {
        let px = SIZE / 2.0 + (x - cx) * scale;
        // SVG y grows downwards
        let py = SIZE / 2.0 - (y - cy) * scale;
        let _ = writeln!(
            out,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="2" fill="{}"/>"#,
            label_color(index[label.as_str()])
        );
    }
    out.push_str("</g>\n<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n");
    for (row, (label, &i)) in index.iter().enumerate() {
        let y = 56.0 + row as f64 * 16.0;
        let _ = writeln!(
            out,
            r#"<g class="legend-entry"><rect x="{x}" y="{ry}" width="10" height="10" fill="{c}"/><text x="{tx}" y="{ty}">{l}</text></g>"#,
            x = SIZE - 180.0,
            ry = y - 9.0,
            c = label_color(i),
            tx = SIZE - 164.0,
            ty = y,
            l = escape(label)
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Line chart of a score against iteration.
pub fn line_chart(series: &[(usize, f64)], title: &str, y_label: &str) -> String {
    let height = 600.0;
    let mut out = String::new();
    header(&mut out, height, title);
    let (left, right, top, bottom) = (90.0, SIZE - 40.0, 60.0, height - 70.0);

    let x_max = series.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let (mut lo, mut hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0);
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let px = |x: f64| left + x / x_max * (right - left);
    let py = |y: f64| bottom - (y - lo) / (hi - lo) * (bottom - top);

    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" stroke-width="1">
<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/>
<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}"/>
</g>
<g class="ticks" font-family="sans-serif" font-size="12">"#
    );
    for t in 0..=5 {
        let v = lo + (hi - lo) * t as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y:.2}" text-anchor="end">{v:.3}</text>"#,
            x = left - 8.0,
            y = py(v) + 4.0
        );
        let it = x_max * t as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y}" text-anchor="middle">{it:.0}</text>"#,
            x = px(it),
            y = bottom + 20.0
        );
    }
    let _ = writeln!(
        out,
        r#"</g>
<text x="{mx}" y="{by}" font-family="sans-serif" font-size="14" text-anchor="middle">iteration</text>
<text x="24" y="{my}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 24 {my})">{yl}</text>"#,
        mx = (left + right) / 2.0,
        by = height - 20.0,
        my = (top + bottom) / 2.0,
        yl = escape(y_label)
    );

    let pts: Vec<String> = series
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", px(x as f64), py(y)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline class="series" fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        pts.join(" ")
    );
    out.push_str("<g class=\"markers\" fill=\"#1f77b4\">\n");
    for &(x, y) in series {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, px(x as f64), py(y));
    }
    out.push_str("</g>\n</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\"'"), "a&lt;b &amp; &quot;c&quot;&apos;");
    }

    #[test]
    fn colors_are_distinct() {
        let colors: std::collections::HashSet<String> = (0..40).map(label_color).collect();
        assert_eq!(colors.len(), 40);
    }

    #[test]
    fn one_legend_entry_per_label() {
        let labels: Vec<String> = ["b", "a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let svg = scatter(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.5), (0.3, 0.1)], &labels, "t");
        assert_eq!(svg.matches("class=\"legend-entry\"").count(), 3);
        assert_eq!(svg.matches("r=\"2\"").count(), 4);
        assert!(svg.contains("viewBox=\"0 0 1000 1000\""));
    }

    #[test]
    fn degenerate_inputs_render() {
        let svg = scatter(&[(1.0, 1.0)], &["x".to_string()], "single");
        assert!(svg.contains("cx=\"500.00\" cy=\"500.00\""));
        let chart = line_chart(&[], "empty", "auc");
        assert!(chart.contains("<polyline"));
        let flat = line_chart(&[(100, 0.5), (200, 0.5)], "flat", "auc");
        assert!(!flat.contains("NaN"));
    }
}
