//! Minimal SVG plots. Every plot is written next to a CSV holding its numbers.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = write!(
        out,
        r#"<path d="M{l} {t}V{b}H{r}" fill="none" stroke="black"/>"#
    );
    for (v, anchor, x, y) in [(f.x0, "start", l, b + 15.0), (f.x1, "end", r, b + 15.0)] {
        let _ = write!(
            out,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#,
            fmt(v)
        );
    }
    for (v, y) in [(f.y0, b), (f.y1, t + 10.0)] {
        let _ = write!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            l - 4.0,
            fmt(v)
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        H - 8.0,
        escape(xlabel)
    );
    let _ = write!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn polyline(f: &Frame, xs: &[f64], ys: &[f64]) -> String {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Curve with a shaded band.
pub fn band_plot(title: &str, t: &[f64], center: &[f64], lower: &[f64], upper: &[f64]) -> String {
    let (y0, y1) = bounds(lower.iter().chain(upper).chain(center).copied());
    let f = Frame::new(t[0], t[t.len() - 1], y0, y1);
    let mut out = String::new();
    header(&mut out, title);
    let mut poly: Vec<String> = t
        .iter()
        .zip(upper)
        .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    poly.extend(
        t.iter()
            .zip(lower)
            .rev()
            .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y))),
    );
    let _ = write!(
        out,
        r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6"/>"##,
        poly.join(" ")
    );
    if y0 < 0.0 && y1 > 0.0 {
        let _ = write!(
            out,
            r#"<line x1="{}" x2="{}" y1="{2:.2}" y2="{2:.2}" stroke="gray" stroke-dasharray="4"/>"#,
            LEFT,
            W - RIGHT,
            f.py(0.0)
        );
    }
    let _ = write!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
        polyline(&f, t, center)
    );
    axes(&mut out, &f, "t", "effect");
    out.push_str("</svg>\n");
    out
}

/// Boxplot per group: whiskers at min/max, box at the quartiles.
pub fn boxplot(title: &str, groups: &[(String, [f64; 5])]) -> String {
    let (y0, y1) = bounds(groups.iter().flat_map(|(_, s)| s.iter().copied()));
    let f = Frame::new(0.0, groups.len() as f64, y0, y1);
    let mut out = String::new();
    header(&mut out, title);
    for (i, (label, s)) in groups.iter().enumerate() {
        let cx = f.px(i as f64 + 0.5);
        let half = 0.25 * (f.px(1.0) - f.px(0.0));
        let [lo, q1, med, q3, hi] = *s;
        let _ = write!(
            out,
            r#"<line x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
            f.py(lo),
            f.py(hi)
        );
        let _ = write!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#c6dbef" stroke="black"/>"##,
            cx - half,
            f.py(q3),
            2.0 * half,
            (f.py(q1) - f.py(q3)).max(0.5)
        );
        let _ = write!(
            out,
            r#"<line x1="{:.2}" x2="{:.2}" y1="{2:.2}" y2="{2:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            cx + half,
            f.py(med)
        );
        let _ = write!(
            out,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 15.0,
            escape(label)
        );
    }
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = write!(
        out,
        r#"<path d="M{l} {t}V{b}H{r}" fill="none" stroke="black"/>"#
    );
    for (v, y) in [(f.y0, b), (f.y1, t + 10.0)] {
        let _ = write!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            l - 4.0,
            fmt(v)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Heatmap of `z[row][col]`, rows along y (`ys`) and columns along x (`xs`).
pub fn heatmap(
    title: &str,
    xs: &[f64],
    ys: &[f64],
    z: &[Vec<f64>],
    xlabel: &str,
    ylabel: &str,
) -> String {
    let (z0, z1) = bounds(z.iter().flatten().copied());
    let span = (z1 - z0).max(f64::MIN_POSITIVE);
    let f = Frame::new(0.0, xs.len() as f64, 0.0, ys.len() as f64);
    let mut out = String::new();
    header(&mut out, title);
    let cw = f.px(1.0) - f.px(0.0);
    let ch = f.py(0.0) - f.py(1.0);
    for (r, row) in z.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let u = ((v - z0) / span).clamp(0.0, 1.0);
            // Blue to white to red.
            let (red, green, blue) = if u < 0.5 {
                let k = u * 2.0;
                (k, k, 1.0)
            } else {
                let k = (1.0 - u) * 2.0;
                (1.0, k, k)
            };
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({},{},{})"/>"#,
                f.px(c as f64),
                f.py(r as f64 + 1.0),
                cw + 0.3,
                ch + 0.3,
                (red * 255.0).round(),
                (green * 255.0).round(),
                (blue * 255.0).round()
            );
        }
    }
    let labelled = Frame::new(xs[0], xs[xs.len() - 1], ys[0], ys[ys.len() - 1]);
    axes(&mut out, &labelled, xlabel, ylabel);
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">range {} to {}</text>"#,
        W - RIGHT,
        TOP - 2.0,
        fmt(z0),
        fmt(z1)
    );
    out.push_str("</svg>\n");
    out
}
