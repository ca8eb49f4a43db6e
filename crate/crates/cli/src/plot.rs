//! Static SVG line charts of the across-agent averages.

use gossipspeech::MetricsRecord;
use std::fmt::Write;

const WIDTH: f64 = 720.0;
const CHART_HEIGHT: f64 = 300.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One input file: its legend label and records.
pub struct Series {
    pub label: String,
    pub records: Vec<MetricsRecord>,
}

struct Chart {
    title: &'static str,
    value: fn(&MetricsRecord) -> Option<f64>,
}

const CHARTS: [Chart; 2] = [
    Chart { title: "Average validation CTC loss", value: |r| r.val_loss },
    Chart { title: "Average validation WER", value: |r| r.val_wer },
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Smallest of 1, 2 or 5 times a power of ten that is at least `x`.
fn nice_ceil(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return 1.0;
    }
    let base = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * base).find(|&v| v >= x * (1.0 - 1e-12)).unwrap_or(10.0 * base)
}

fn points(series: &Series, value: fn(&MetricsRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    series
        .records
        .iter()
        .filter(|r| r.is_average())
        .filter_map(|r| value(r).filter(|v| v.is_finite()).map(|v| (r.round as f64, v)))
        .collect()
}

pub fn render(series: &[Series]) -> String {
    let height = CHART_HEIGHT * CHARTS.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{height}" fill="white"/>"#);
    for (c, chart) in CHARTS.iter().enumerate() {
        render_chart(&mut svg, chart, series, c as f64 * CHART_HEIGHT);
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_chart(svg: &mut String, chart: &Chart, series: &[Series], top: f64) {
    let all: Vec<Vec<(f64, f64)>> = series.iter().map(|s| points(s, chart.value)).collect();
    let x_max = nice_ceil(all.iter().flatten().map(|p| p.0).fold(0.0, f64::max));
    let y_max = nice_ceil(all.iter().flatten().map(|p| p.1).fold(0.0, f64::max));
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (top + CHART_HEIGHT - MARGIN_BOTTOM, top + MARGIN_TOP);
    let sx = |x: f64| x0 + (x1 - x0) * x / x_max;
    let sy = |y: f64| y0 - (y0 - y1) * y / y_max;

    let _ = writeln!(svg, r#"<g class="chart">"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#,
        (x0 + x1) / 2.0,
        top + 22.0,
        escape(chart.title)
    );
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let (gx, gy) = (sx(f * x_max), sy(f * y_max));
        let _ = writeln!(svg, r##"<line x1="{x0:.2}" y1="{gy:.2}" x2="{x1:.2}" y2="{gy:.2}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            gy + 4.0,
            trim(f * y_max)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            trim(f * x_max)
        );
    }
    let _ = writeln!(svg, r#"<polyline points="{x0:.2},{y1:.2} {x0:.2},{y0:.2} {x1:.2},{y0:.2}" fill="none" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#, (x0 + x1) / 2.0, y0 + 38.0);

    for (i, (s, pts)) in series.iter().zip(&all).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                coords.join(" ")
            );
        }
        let ly = y1 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            x1 + 12.0,
            x1 + 32.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x1 + 38.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</g>\n");
}

/// Axis label: at most three decimals, trailing zeros dropped.
fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
