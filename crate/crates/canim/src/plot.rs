//! Self-contained SVG line charts and gnuplot-style `.dat` dumps.
//!
//! No external processes, no fonts beyond the SVG defaults. Charts are
//! deterministic byte-for-byte for identical inputs.

use std::io::{self, Write};

/// One labeled curve; `x` and `y` must have equal length. Non-finite
/// samples break the polyline.
pub struct Series<'a> {
    pub label: String,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;

/// Points per series written to the SVG; longer series are strided.
const MAX_POINTS: usize = 1600;

fn finite_bounds(series: &[Series<'_>]) -> ((f64, f64), (f64, f64)) {
    let mut xb = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yb = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (&x, &y) in s.x.iter().zip(s.y) {
            if x.is_finite() && y.is_finite() {
                xb.0 = xb.0.min(x);
                xb.1 = xb.1.max(x);
                yb.0 = yb.0.min(y);
                yb.1 = yb.1.max(y);
            }
        }
    }
    if !xb.0.is_finite() {
        xb = (0.0, 1.0);
    }
    if !yb.0.is_finite() {
        yb = (0.0, 1.0);
    }
    if xb.0 == xb.1 {
        xb = (xb.0 - 0.5, xb.1 + 0.5);
    }
    if yb.0 == yb.1 {
        yb = (yb.0 - 0.5, yb.1 + 0.5);
    }
    (xb, yb)
}

/// Tick positions at a 1/2/5 decade step covering `lo..hi`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut v = first;
    while v <= hi + 1e-9 * span {
        out.push(if v.abs() < 1e-12 * span { 0.0 } else { v });
        v += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

/// Writes a complete SVG line chart.
pub fn line_chart<W: Write>(
    w: &mut W,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series<'_>],
) -> io::Result<()> {
    let ((x0, x1), (y0, y1)) = finite_bounds(series);
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )?;
    writeln!(w, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>")?;
    writeln!(
        w,
        "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        title
    )?;

    // grid + ticks
    for tx in ticks(x0, x1) {
        let x = px(tx);
        writeln!(
            w,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            py(y0),
            py(y1)
        )?;
        writeln!(
            w,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            HEIGHT - MARGIN_B + 16.0,
            fmt_tick(tx)
        )?;
    }
    for ty in ticks(y0, y1) {
        let y = py(ty);
        writeln!(
            w,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            px(x0),
            px(x1)
        )?;
        writeln!(
            w,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 6.0,
            y + 4.0,
            fmt_tick(ty)
        )?;
    }
    // axes
    writeln!(
        w,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333333\"/>",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    )?;
    writeln!(
        w,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        xlabel
    )?;
    writeln!(
        w,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        ylabel
    )?;

    // curves
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let stride = (s.x.len() / MAX_POINTS).max(1);
        let mut segment = String::new();
        let mut segments: Vec<String> = Vec::new();
        for k in (0..s.x.len()).step_by(stride) {
            let (x, y) = (s.x[k], s.y[k]);
            if x.is_finite() && y.is_finite() {
                segment.push_str(&format!("{:.2},{:.2} ", px(x), py(y)));
            } else if !segment.is_empty() {
                segments.push(std::mem::take(&mut segment));
            }
        }
        if !segment.is_empty() {
            segments.push(segment);
        }
        for seg in segments {
            writeln!(
                w,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.4\" points=\"{}\"/>",
                seg.trim_end()
            )?;
        }
        // legend entry
        let ly = MARGIN_T + 14.0 + 16.0 * si as f64;
        writeln!(
            w,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            MARGIN_L + 10.0,
            MARGIN_L + 34.0
        )?;
        writeln!(
            w,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            MARGIN_L + 40.0,
            ly + 4.0,
            s.label
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

/// Whitespace-separated data dump with a `#` header line; one column
/// of x plus one per series, full resolution.
pub fn write_dat<W: Write>(w: &mut W, xlabel: &str, series: &[Series<'_>]) -> io::Result<()> {
    write!(w, "# {xlabel}")?;
    for s in series {
        write!(w, " {}", s.label.replace(' ', "_"))?;
    }
    writeln!(w)?;
    let n = series.iter().map(|s| s.x.len()).min().unwrap_or(0);
    for k in 0..n {
        write!(w, "{:.16e}", series[0].x[k])?;
        for s in series {
            write!(w, " {:.16e}", s.y[k])?;
        }
        writeln!(w)?;
    }
    Ok(())
}
