//! Hand-written SVG charts: information planes and U-Plots.

use std::fmt::Write;

use uplot::analysis::{Quantity, UPlot};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-9 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Frame {
            x0,
            x1,
            y0: y0.min(0.0),
            y1,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str, integer_x: bool) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(out, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
        let _ = writeln!(
            out,
            r##"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="#333333" stroke-width="1"/>"##
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let xl = if integer_x { format!("{}", xv.round()) } else { format!("{xv:.2}") };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xl}</text>"#,
                self.px(xv),
                b + 16.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{yv:.2}</text>"#,
                l - 6.0,
                self.py(yv) + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 14.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(ylabel)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    )
}

/// Dark blue for the first epoch through to yellow for the last, spaced
/// logarithmically since captures usually are.
fn epoch_color(epoch: usize, first: usize, last: usize) -> String {
    let t = if last > first {
        ((epoch.max(1) as f64).ln() - (first.max(1) as f64).ln()) / ((last as f64).ln() - (first.max(1) as f64).ln())
    } else {
        1.0
    };
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(40.0, 240.0), lerp(30.0, 200.0), lerp(120.0, 30.0))
}

/// One polyline per epoch, MI against layer index.
pub fn uplot_svg(plot: &UPlot) -> String {
    let (title, ylabel) = match plot.quantity {
        Quantity::IXm => ("U-Plot of I(X;M)", "I(X;M) [bits]"),
        Quantity::IYm => ("U-Plot of I(Y;M)", "I(Y;M) [bits]"),
    };
    let n = plot.series.iter().map(|s| s.values.len()).max().unwrap_or(1);
    let frame = Frame::new(
        [1.0, n as f64].into_iter(),
        plot.series.iter().flat_map(|s| s.values.iter().copied()).collect::<Vec<_>>().into_iter(),
    );
    let mut out = open();
    frame.axes(&mut out, title, "layer", ylabel, true);
    let first = plot.series.first().map_or(0, |s| s.epoch);
    let last = plot.series.last().map_or(0, |s| s.epoch);
    for s in &plot.series {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", frame.px((i + 1) as f64), frame.py(v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline data-epoch="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            s.epoch,
            pts.join(" "),
            epoch_color(s.epoch, first, last)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Information plane of one layer: `(epoch, I(X;M), I(Y;M))` points.
pub fn plane_svg(layer: usize, points: &[(usize, f64, f64)]) -> String {
    let frame = Frame::new(points.iter().map(|p| p.1), points.iter().map(|p| p.2));
    let mut out = open();
    frame.axes(
        &mut out,
        &format!("Information plane, layer {layer}"),
        "I(X;M) [bits]",
        "I(Y;M) [bits]",
        false,
    );
    let first = points.iter().map(|p| p.0).min().unwrap_or(0);
    let last = points.iter().map(|p| p.0).max().unwrap_or(0);
    if points.len() > 1 {
        let d: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}{:.2} {:.2}", if i == 0 { "M" } else { "L" }, frame.px(p.1), frame.py(p.2)))
            .collect();
        let _ = writeln!(out, r##"<path d="{}" fill="none" stroke="#999999" stroke-width="0.8"/>"##, d.join(" "));
    }
    for &(epoch, x, y) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"><title>epoch {epoch}</title></circle>"#,
            frame.px(x),
            frame.py(y),
            epoch_color(epoch, first, last)
        );
    }
    out.push_str("</svg>\n");
    out
}
