//! Minimal SVG line chart of entropy against vocabulary size.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// Renders `(size, entropy)` points as a polyline and stars `starred`.
pub fn entropy_curve_svg(points: &[(usize, f64)], starred: Option<usize>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if points.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (xmin, xmax) = bounds(points.iter().map(|p| p.0 as f64));
    let (ymin, ymax) = bounds(points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - ymin) / (ymax - ymin) * (HEIGHT - 2.0 * MARGIN);

    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="1"><line x1="{m}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}"/></g>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    let _ = writeln!(
        out,
        r#"<g font-family="sans-serif" font-size="12"><text x="{}" y="{}" text-anchor="middle">vocabulary size</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">entropy (nats/char)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (x, label) in [(xmin, xmin), (xmax, xmax)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(x),
            HEIGHT - MARGIN + 16.0,
            label as usize
        );
    }
    for y in [ymin, ymax] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#,
            MARGIN - 4.0,
            sy(y) + 4.0,
            y
        );
    }
    out.push_str("</g>\n");

    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x as f64), sy(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        path.join(" ")
    );
    for &(x, y) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            sx(x as f64),
            sy(y)
        );
    }
    if let Some(&(x, y)) = starred.and_then(|i| points.get(i)) {
        let _ = writeln!(
            out,
            r#"<polygon fill="crimson" points="{}"/>"#,
            star(sx(x as f64), sy(y), 10.0)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    (0..10)
        .map(|k| {
            let radius = if k % 2 == 0 { r } else { r * 0.45 };
            let angle = std::f64::consts::PI * (k as f64) / 5.0 - std::f64::consts::FRAC_PI_2;
            format!("{:.2},{:.2}", cx + radius * angle.cos(), cy + radius * angle.sin())
        })
        .collect::<Vec<_>>()
        .join(" ")
}
