//! Deterministic SVG heatmaps.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::stats::escape_xml;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorScale {
    /// White to blue over `[min(0, lowest), highest]`; suited to rho.
    Sequential,
    /// Red below zero, blue above, white at zero; suited to deltas.
    Diverging,
}

const CELL_W: f64 = 36.0;
const CELL_H: f64 = 16.0;
const ROW_LABEL_W: f64 = 220.0;
const HEADER_H: f64 = 24.0;

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

fn mix_color(from: (u8, u8, u8), to: (u8, u8, u8), t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(from.0, to.0, t),
        lerp(from.1, to.1, t),
        lerp(from.2, to.2, t)
    )
}

const WHITE: (u8, u8, u8) = (255, 255, 255);
const BLUE: (u8, u8, u8) = (33, 102, 172);
const RED: (u8, u8, u8) = (178, 24, 43);

/// Renders `matrix` (rows x columns) as an SVG heatmap. Undefined cells are
/// drawn blank; cells with a set flag carry a `*` glyph.
pub fn render_heatmap(
    matrix: &[Vec<Option<f64>>],
    row_labels: &[String],
    col_labels: &[String],
    flags: Option<&[Vec<bool>]>,
    scale: ColorScale,
) -> Result<String> {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::usage("cannot render an empty matrix"));
    }
    if matrix.iter().any(|r| r.len() != cols) || row_labels.len() != rows || col_labels.len() != cols {
        return Err(Error::usage("heatmap labels do not match the matrix shape"));
    }
    if let Some(f) = flags {
        if f.len() != rows || f.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("heatmap flags do not match the matrix shape"));
        }
    }
    let defined = || matrix.iter().flatten().flatten().copied();
    if defined().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("heatmap values must be finite".into()));
    }
    let lo = defined().fold(0.0f64, f64::min);
    let hi = defined().fold(f64::NEG_INFINITY, f64::max);
    let bound = defined().fold(0.0f64, |m, v| m.max(v.abs()));
    let color = |v: f64| match scale {
        ColorScale::Sequential => {
            let span = hi - lo;
            mix_color(WHITE, BLUE, if span > 0.0 { (v - lo) / span } else { 1.0 })
        }
        ColorScale::Diverging if bound == 0.0 => mix_color(WHITE, WHITE, 0.0),
        ColorScale::Diverging if v < 0.0 => mix_color(WHITE, RED, -v / bound),
        ColorScale::Diverging => mix_color(WHITE, BLUE, v / bound),
    };

    let width = ROW_LABEL_W + CELL_W * cols as f64 + 10.0;
    let height = HEADER_H + CELL_H * rows as f64 + 10.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"monospace\" font-size=\"10\">"
    );
    for (c, label) in col_labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text class=\"col-label\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            ROW_LABEL_W + CELL_W * (c as f64 + 0.5),
            HEADER_H - 8.0,
            escape_xml(label)
        );
    }
    for (r, row) in matrix.iter().enumerate() {
        let y = HEADER_H + CELL_H * r as f64;
        let _ = writeln!(
            svg,
            "<text class=\"row-label\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
            ROW_LABEL_W - 6.0,
            y + CELL_H / 2.0,
            escape_xml(&row_labels[r])
        );
        for (c, cell) in row.iter().enumerate() {
            let x = ROW_LABEL_W + CELL_W * c as f64;
            match cell {
                Some(v) => {
                    let _ = writeln!(
                        svg,
                        "<rect class=\"cell\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL_W:.0}\" height=\"{CELL_H:.0}\" fill=\"{}\"><title>{v:.4}</title></rect>",
                        color(*v)
                    );
                }
                None => {
                    let _ = writeln!(
                        svg,
                        "<rect class=\"blank\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL_W:.0}\" height=\"{CELL_H:.0}\" fill=\"none\" stroke=\"#ddd\"/>"
                    );
                }
            }
            if flags.is_some_and(|f| f[r][c]) {
                let _ = writeln!(
                    svg,
                    "<text class=\"flag\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" dominant-baseline=\"middle\">*</text>",
                    x + CELL_W / 2.0,
                    y + CELL_H / 2.0
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
