//! Minimal static SVG renderings of pipeline artifacts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 48.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Frame {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    s
}

fn axis_ticks(s: &mut String, f: &Frame) {
    for i in 0..=4 {
        let u = f64::from(i) / 4.0;
        let xv = f.x.0 + u * (f.x.1 - f.x.0);
        let yv = f.y.0 + u * (f.y.1 - f.y.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.3}</text>"#, f.px(xv), H - PAD + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, PAD - 4.0, f.py(yv) + 4.0);
    }
}

/// Scatter plot of 2-D points coloured by group.
pub fn scatter_svg(title: &str, points: &[(f64, f64)], groups: &[usize]) -> String {
    let f = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut s = open(title, "x1", "x2");
    axis_ticks(&mut s, &f);
    for (p, &g) in points.iter().zip(groups) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            f.px(p.0),
            f.py(p.1),
            colour(g)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of several series over a shared x grid, with an optional
/// dashed horizontal reference line.
pub fn lines_svg(title: &str, xs: &[f64], series: &[(&str, Vec<f64>)], reference: Option<f64>) -> String {
    let ys = series.iter().flat_map(|(_, v)| v.iter().copied()).chain(reference);
    let f = Frame::fit(xs.iter().copied(), ys);
    let mut s = open(title, "t", "");
    axis_ticks(&mut s, &f);
    for (i, (name, v)) in series.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(v)
            .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            colour(i),
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{}">{name}</text>"#,
            W - PAD - 90.0,
            PAD + 16.0 * (i as f64 + 1.0),
            colour(i)
        );
    }
    if let Some(r) = reference {
        let y = f.py(r);
        let _ = writeln!(
            s,
            r#"<line x1="{PAD}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="5,4"/>"#,
            W - PAD
        );
    }
    s.push_str("</svg>\n");
    s
}
