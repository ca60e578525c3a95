//! Minimal standalone SVG renderings of the diagnostics.

use std::fmt::Write as _;

use super::{ActivityReport, LatentProjection};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// One row of cells per layer, units sorted by descending KL, shaded by
/// log KL (white = at the floor).
pub fn activity_svg(report: &ActivityReport) -> String {
    let cell = 12.0;
    let width = report
        .layers
        .iter()
        .map(|l| l.kl_per_unit.len())
        .max()
        .unwrap_or(1) as f64
        * cell
        + 80.0;
    let height = report.layers.len() as f64 * cell + 20.0;
    let (lo, hi) = report
        .layers
        .iter()
        .flat_map(|l| l.log_kl.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    // Top layer first, as in a bottom-up stack.
    for (row, (li, layer)) in report.layers.iter().enumerate().rev().enumerate() {
        let y = 10.0 + row as f64 * cell;
        let _ = writeln!(s, r#"<text x="2" y="{}">z{}</text>"#, y + cell - 2.0, li + 1);
        for (col, (_, kl)) in layer.sorted.iter().enumerate() {
            let t = (kl.max(1e-6).ln() - lo) / span;
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},{shade})" stroke="silver"/>"#,
                40.0 + col as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of the two principal coordinates, coloured by label when present.
pub fn projection_svg(p: &LatentProjection) -> String {
    let size = 400.0;
    let pad = 20.0;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &p.pca.coords {
        xmin = xmin.min(c[0]);
        xmax = xmax.max(c[0]);
        ymin = ymin.min(c[1]);
        ymax = ymax.max(c[1]);
    }
    let sx = (xmax - xmin).max(1e-12);
    let sy = (ymax - ymin).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="12">z{} PCA (var {:.3}, {:.3}){}</text>"#,
        p.layer,
        p.pca.variances[0],
        p.pca.variances[1],
        if p.pca.degenerate { " degenerate" } else { "" }
    );
    for (i, c) in p.pca.coords.iter().enumerate() {
        let x = pad + (c[0] - xmin) / sx * (size - 2.0 * pad);
        let y = size - pad - (c[1] - ymin) / sy * (size - 2.0 * pad);
        let colour = p
            .labels
            .as_ref()
            .map_or("#444", |l| PALETTE[l[i] as usize % PALETTE.len()]);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{colour}"/>"#);
    }
    s.push_str("</svg>\n");
    s
}
