//! Image exports: 16-bit PGM for grids, SVG for heatmaps and scatters.

use std::fmt::Write as _;

use crate::matrix::Matrix;
use crate::surface::RiskSurface;

/// Scatter colour of contracts with a claim.
pub const CLAIM_COLOR: &str = "#1f4fd8";
/// Scatter colour of contracts without a claim.
pub const NO_CLAIM_COLOR: &str = "#2ca02c";
/// Heatmap colour of pixels outside the valid mask.
pub const INVALID_COLOR: &str = "#e6e6e6";
/// Marker colours, cycled in order.
pub const MARKER_COLORS: [&str; 6] = ["#d62728", "#ff7f0e", "#9467bd", "#17becf", "#e377c2", "#000000"];

const PIXEL: usize = 5;

/// Binary PGM (P5, maxval 65535, big-endian); the first image row is `y_max`.
pub fn surface_pgm(surface: &RiskSurface) -> Vec<u8> {
    let n = surface.geometry.cells;
    let mut out = format!("P5\n{n} {n}\n65535\n").into_bytes();
    out.reserve(2 * n * n);
    for row in (0..n).rev() {
        for col in 0..n {
            let v = (surface.value_at(row, col).clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// A labelled point drawn over a heatmap or scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// Five-stop dark-blue → yellow ramp.
fn ramp(v: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let k = STOPS.iter().rposition(|(s, _)| *s <= v).unwrap_or(0).min(STOPS.len() - 2);
    let (s0, c0) = STOPS[k];
    let (s1, c1) = STOPS[k + 1];
    let t = (v - s0) / (s1 - s0);
    let c: Vec<u8> = (0..3).map(|i| (c0[i] + t * (c1[i] - c0[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn svg_open(out: &mut String, w: usize, h: usize, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_markers(out: &mut String, markers: &[Marker], to_px: impl Fn(f64, f64) -> (f64, f64)) {
    for (k, m) in markers.iter().enumerate() {
        let color = MARKER_COLORS[k % MARKER_COLORS.len()];
        let (px, py) = to_px(m.x, m.y);
        let _ = writeln!(
            out,
            "<circle class=\"marker\" cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"6\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2.5\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            px + 8.0,
            py - 8.0,
            escape(&m.label)
        );
    }
}

/// Colourized surface, one square per pixel, plus optional markers given in
/// embedding coordinates.
pub fn surface_svg(surface: &RiskSurface, title: &str, markers: &[Marker]) -> String {
    let g = &surface.geometry;
    let n = g.cells;
    let side = n * PIXEL;
    let mut out = String::new();
    svg_open(&mut out, side, side, title);
    for row in 0..n {
        let y = (n - 1 - row) * PIXEL;
        for col in 0..n {
            let k = row * n + col;
            let fill = if surface.valid[k] {
                ramp(surface.grid[k])
            } else {
                INVALID_COLOR.to_string()
            };
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{y}\" width=\"{PIXEL}\" height=\"{PIXEL}\" fill=\"{fill}\"/>",
                col * PIXEL
            );
        }
    }
    let s = side as f64;
    draw_markers(&mut out, markers, |x, y| {
        (
            (x - g.x_min) / (g.x_max - g.x_min) * s,
            (g.y_max - y) / (g.y_max - g.y_min) * s,
        )
    });
    out.push_str("</svg>\n");
    out
}

/// Embedding scatter. With labels, claims and non-claims get their own
/// colours (claims drawn on top); without, every point is grey.
pub fn scatter_svg(points: &Matrix, claims: Option<&[bool]>, title: &str, markers: &[Marker]) -> String {
    const SIDE: f64 = 600.0;
    let mut out = String::new();
    svg_open(&mut out, SIDE as usize, SIDE as usize, title);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in points.iter_rows() {
        x0 = x0.min(r[0]);
        x1 = x1.max(r[0]);
        y0 = y0.min(r[1]);
        y1 = y1.max(r[1]);
    }
    let pad = |lo: f64, hi: f64| {
        let m = ((hi - lo) * 0.02).max(1e-9);
        (lo - m, hi + m)
    };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let to_px = |x: f64, y: f64| ((x - x0) / (x1 - x0) * SIDE, (y1 - y) / (y1 - y0) * SIDE);
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    let layers: Vec<(bool, &str)> = match claims {
        Some(_) => vec![(false, NO_CLAIM_COLOR), (true, CLAIM_COLOR)],
        None => vec![(false, "#7f7f7f")],
    };
    for (claim, color) in layers {
        let _ = writeln!(out, "<g class=\"{}\" fill=\"{color}\">", if claim { "claim" } else { "no-claim" });
        for (i, r) in points.iter_rows().enumerate() {
            if claims.is_some_and(|c| c[i] != claim) {
                continue;
            }
            let (px, py) = to_px(r[0], r[1]);
            let _ = writeln!(out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"1.5\"/>");
        }
        out.push_str("</g>\n");
    }
    draw_markers(&mut out, markers, to_px);
    out.push_str("</svg>\n");
    out
}
