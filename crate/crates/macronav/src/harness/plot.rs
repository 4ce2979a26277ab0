//! Hand-rolled SVG learning-curve plots.
//!
//! Produces a standalone SVG document: one smoothed polyline per series,
//! labeled axes, and a legend. No plotting dependency — the output is a
//! few hundred lines of fixed-layout markup, which keeps rendering
//! byte-deterministic.

use std::fmt::Write as _;

use super::HarnessError;

/// Default moving-average width for learning curves.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 10;

/// A named sequence of per-episode values (y = value, x = index).
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Series {
            name: name.into(),
            values,
        }
    }
}

/// Trailing moving average: element `i` averages the last `window` values
/// ending at `i` (fewer near the start). A window of 1 is the identity;
/// 0 is clamped to 1.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / window.min(i + 1) as f64);
    }
    out
}

// Fixed layout (viewBox units).
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 25.0;
const MARGIN_BOTTOM: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Escape the five XML-special characters for use in text nodes and
/// attribute values.
fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Tick label formatting: integers stay integers, fractions keep one digit.
fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Render `series` as a standalone SVG line plot with moving-average
/// smoothing. Fails with [`HarnessError::EmptySeries`] when the list is
/// empty or any series has no data.
pub fn emit_svg(series: &[Series], window: usize) -> Result<String, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::EmptySeries("<none given>".into()));
    }
    if let Some(empty) = series.iter().find(|s| s.values.is_empty()) {
        return Err(HarnessError::EmptySeries(empty.name.clone()));
    }

    let smoothed: Vec<Vec<f64>> = series
        .iter()
        .map(|s| moving_average(&s.values, window))
        .collect();

    // Domains. X covers the longest series; Y spans zero to the largest
    // smoothed value with 5% headroom (1.0 floor avoids a degenerate axis
    // when everything is zero).
    let max_len = smoothed.iter().map(Vec::len).max().unwrap();
    let x_max = (max_len - 1).max(1) as f64;
    let y_max = smoothed
        .iter()
        .flatten()
        .copied()
        .fold(0.0_f64, f64::max)
        .max(1.0)
        * 1.05;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |i: f64| MARGIN_LEFT + i / x_max * plot_w;
    let y_of = |v: f64| MARGIN_TOP + (1.0 - v / y_max) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">"
    )
    .unwrap();
    writeln!(w, "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();

    // Gridlines and tick labels, five per axis.
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y_of(v);
        writeln!(
            w,
            "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w,
        )
        .unwrap();
        writeln!(
            w,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            MARGIN_LEFT - 8.0,
            y + 4.0,
            fmt_tick(v),
        )
        .unwrap();
        let e = x_max * k as f64 / 4.0;
        let x = x_of(e);
        writeln!(
            w,
            "  <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            MARGIN_TOP + plot_h + 18.0,
            fmt_tick(e.round()),
        )
        .unwrap();
    }

    // Axes.
    writeln!(
        w,
        "  <line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>",
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h,
    )
    .unwrap();
    writeln!(
        w,
        "  <line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>",
        l = MARGIN_LEFT,
        b = MARGIN_TOP + plot_h,
        r = MARGIN_LEFT + plot_w,
    )
    .unwrap();
    writeln!(
        w,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">episode</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
    )
    .unwrap();
    writeln!(
        w,
        "  <text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 {x:.2} {y:.2})\">elementary steps</text>",
        x = 20.0,
        y = MARGIN_TOP + plot_h / 2.0,
    )
    .unwrap();

    // One polyline per series (a lone point gets a dot instead).
    for (raw, color) in smoothed.iter().zip(PALETTE.iter().cycle()) {
        if raw.len() == 1 {
            writeln!(
                w,
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                x_of(0.0),
                y_of(raw[0]),
            )
            .unwrap();
            continue;
        }
        let mut points = String::with_capacity(raw.len() * 14);
        for (i, v) in raw.iter().enumerate() {
            if i > 0 {
                points.push(' ');
            }
            write!(points, "{:.2},{:.2}", x_of(i as f64), y_of(*v)).unwrap();
        }
        writeln!(
            w,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\" points=\"{points}\"/>"
        )
        .unwrap();
    }

    // Legend, top-right inside the plot area.
    for (i, (s, color)) in series.iter().zip(PALETTE.iter().cycle()).enumerate() {
        let y = MARGIN_TOP + 16.0 + i as f64 * 18.0;
        let x = MARGIN_LEFT + plot_w - 170.0;
        writeln!(
            w,
            "  <line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>",
            y - 4.0,
            x + 24.0,
            y - 4.0,
        )
        .unwrap();
        writeln!(
            w,
            "  <text x=\"{:.2}\" y=\"{y:.2}\">{}</text>",
            x + 30.0,
            xml_escape(&s.name),
        )
        .unwrap();
    }

    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}
