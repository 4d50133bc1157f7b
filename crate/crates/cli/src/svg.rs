//! Minimal SVG rendering of an envelope plot: the band as a single closed
//! path, the envelope centre and observed function as polylines, residuals
//! as circles, and the test outcome as a caption.

use std::fmt::Write;

use envdiag::{DiagnosticResult, PlotKind};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    /// Covers `values` with 5% padding on each side.
    fn new(values: impl Iterator<Item = f64>, from: f64, to: f64) -> Axis {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            from,
            to,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..TICKS)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (TICKS - 1) as f64)
            .collect()
    }
}

fn axis_labels(kind: PlotKind) -> (&'static str, &'static str) {
    match kind {
        PlotKind::Qq => ("Theoretical normal quantiles", "Sorted residuals"),
        PlotKind::Pp => ("Plotting position", "Residual probability"),
        PlotKind::ResVsFits => ("Linear predictor", "Residuals"),
        PlotKind::ScaleLocation => ("Linear predictor", "|Residuals|"),
    }
}

fn title(kind: PlotKind) -> &'static str {
    match kind {
        PlotKind::Qq => "Normal QQ plot",
        PlotKind::Pp => "PP plot",
        PlotKind::ResVsFits => "Residuals vs fits",
        PlotKind::ScaleLocation => "Scale-location",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn polyline(out: &mut String, class: &str, xs: &Axis, ys: &Axis, grid: &[f64], values: &[f64], style: &str) {
    let pts: Vec<String> = grid
        .iter()
        .zip(values)
        .map(|(&x, &y)| format!("{},{}", num(xs.map(x)), num(ys.map(y))))
        .collect();
    let _ = writeln!(out, r#"<polyline class="{class}" points="{}" {style}/>"#, pts.join(" "));
}

/// Renders `r` as a standalone SVG document.
pub fn render(r: &DiagnosticResult) -> String {
    let env = &r.envelope;
    let points = r.points.as_deref().unwrap_or(&[]);
    let xs = Axis::new(
        r.grid.iter().copied().chain(points.iter().map(|p| p.0)),
        LEFT,
        WIDTH - RIGHT,
    );
    let ys = Axis::new(
        env.lower
            .iter()
            .chain(&env.upper)
            .chain(&r.observed)
            .copied()
            .chain(points.iter().map(|p| p.1)),
        HEIGHT - BOTTOM,
        TOP,
    );
    let (xlabel, ylabel) = axis_labels(r.kind);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title(r.kind))
    );

    let mut band = String::new();
    for (i, (&x, &u)) in r.grid.iter().zip(&env.upper).enumerate() {
        let _ = write!(band, "{}{},{} ", if i == 0 { "M" } else { "L" }, num(xs.map(x)), num(ys.map(u)));
    }
    for (&x, &l) in r.grid.iter().zip(&env.lower).rev() {
        let _ = write!(band, "L{},{} ", num(xs.map(x)), num(ys.map(l)));
    }
    band.push('Z');
    let _ = writeln!(
        out,
        r##"<path class="band" d="{band}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##
    );

    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(out, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    for t in xs.ticks() {
        let px = num(xs.map(t));
        let _ = writeln!(out, r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{}"/>"#, y0 + 5.0);
    }
    for t in ys.ticks() {
        let py = num(ys.map(t));
        let _ = writeln!(out, r#"<line x1="{}" y1="{py}" x2="{x0}" y2="{py}"/>"#, x0 - 5.0);
    }
    let _ = writeln!(out, "</g>");
    for t in xs.ticks() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            num(xs.map(t)),
            y0 + 18.0,
            tick_label(t)
        );
    }
    for t in ys.ticks() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            num(ys.map(t) + 4.0),
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );

    polyline(&mut out, "center", &xs, &ys, &r.grid, &env.center, r##"fill="none" stroke="#3182bd" stroke-width="1.5""##);
    if matches!(r.kind, PlotKind::ResVsFits | PlotKind::ScaleLocation) {
        polyline(&mut out, "observed", &xs, &ys, &r.grid, &r.observed, r##"fill="none" stroke="#d62728" stroke-width="2""##);
    }
    let _ = writeln!(out, r#"<g class="points" fill="black" fill-opacity="0.7">"#);
    for &(x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="2.5"/>"#, num(xs.map(x)), num(ys.map(y)));
    }
    let _ = writeln!(out, "</g>");

    let caption = format!(
        "{:.0}% global envelope, B = {}: {} (p = {:.3})",
        100.0 * (1.0 - env.alpha),
        r.b,
        if r.reject { "observed leaves the envelope" } else { "observed stays inside" },
        r.p_value
    );
    let _ = writeln!(
        out,
        r#"<text class="result" x="{}" y="{}" text-anchor="end" fill="{}">{}</text>"#,
        x1,
        TOP - 6.0,
        if r.reject { "#d62728" } else { "black" },
        escape(&caption)
    );
    out.push_str("</svg>\n");
    out
}
