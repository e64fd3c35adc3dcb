//! Static SVG output: a scatter map of coordinates with anchors and steering
//! arrows, and a line chart for perplexity curves.

use std::fmt::Write as _;

use super::{CulturalCoordinate, HumanAnchors, PplPoint};

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let m = ((hi - lo) * 0.1).max(0.25);
            (lo - m, hi + m)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(svg: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r##"<rect x="{PAD}" y="{PAD}" width="{:.1}" height="{:.1}" fill="none" stroke="#333333"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (v, label) in [(f.x0, f.x0), (f.x1, f.x1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label:.2}</text>"#,
            f.px(v),
            H - PAD + 16.0
        );
    }
    for v in [f.y0, f.y1] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            PAD - 6.0,
            f.py(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

/// Model coordinates (filled), anchors (hollow), and arrows for each
/// `(from, to)` index pair into `coords`.
pub fn scatter_svg(
    coords: &[CulturalCoordinate],
    anchors: Option<&HumanAnchors>,
    arrows: &[(usize, usize)],
) -> String {
    let anchor_pts = anchors.map(|a| a.coords.values().map(|p| (p.x, p.y)).collect::<Vec<_>>());
    let f = Frame::fit(
        coords
            .iter()
            .map(|c| (c.x, c.y))
            .chain(anchor_pts.into_iter().flatten())
            .chain([(0.0, 0.0)]),
    );
    let mut svg = String::new();
    open(
        &mut svg,
        &f,
        "Survival vs. Self-Expression",
        "Traditional vs. Secular-Rational",
    );
    let _ = writeln!(
        svg,
        r##"<defs><marker id="head" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto"><path d="M0,0 L8,4 L0,8 z" fill="#c0392b"/></marker></defs>"##
    );
    if let Some(a) = anchors {
        for (country, p) in &a.coords {
            let (x, y) = (f.px(p.x), f.py(p.y));
            let _ = writeln!(
                svg,
                r##"<circle cx="{x:.1}" cy="{y:.1}" r="5" fill="none" stroke="#2c3e50"/><text x="{:.1}" y="{:.1}">{}</text>"##,
                x + 7.0,
                y - 7.0,
                escape(country)
            );
        }
    }
    for &(from, to) in arrows {
        if let (Some(a), Some(b)) = (coords.get(from), coords.get(to)) {
            let _ = writeln!(
                svg,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c0392b" marker-end="url(#head)"/>"##,
                f.px(a.x),
                f.py(a.y),
                f.px(b.x),
                f.py(b.y)
            );
        }
    }
    for c in coords {
        let (x, y) = (f.px(c.x), f.py(c.y));
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="#2980b9"/><text x="{:.1}" y="{:.1}">{}</text>"##,
            x + 6.0,
            y + 14.0,
            escape(&c.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn line_svg(points: &[PplPoint], title: &str) -> String {
    let f = Frame::fit(points.iter().map(|p| (p.alpha, p.mean_ppl)));
    let mut svg = String::new();
    open(&mut svg, &f, "alpha", "mean perplexity");
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.1},{:.1}", f.px(p.alpha), f.py(p.mean_ppl)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#27ae60" stroke-width="2"/>"##,
        path.join(" ")
    );
    for p in points {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#27ae60"/>"##,
            f.px(p.alpha),
            f.py(p.mean_ppl)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Point;

    #[test]
    fn scatter_contains_every_label() {
        let c = |label: &str, x, y| CulturalCoordinate {
            label: label.into(),
            x,
            y,
            per_question: Default::default(),
            n_x: 5,
            n_y: 5,
        };
        let mut anchors = HumanAnchors::default();
        anchors.coords.insert("Denmark".into(), Point { x: 2.0, y: 1.5 });
        let svg = scatter_svg(&[c("base", 0.1, 0.2), c("X=0.2", 0.6, 0.3)], Some(&anchors), &[(0, 1)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(">base<") && svg.contains(">X=0.2<") && svg.contains(">Denmark<"));
        assert_eq!(svg.matches("<line").count(), 1);
    }

    #[test]
    fn line_chart_has_one_vertex_per_point() {
        let pts: Vec<_> = [0.0, 0.1, 0.2]
            .iter()
            .map(|&a| PplPoint {
                alpha: a,
                mean_ppl: 10.0 + a,
                n: 3,
            })
            .collect();
        let svg = line_svg(&pts, "ppl");
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
