//! Static SVG heatmaps for position grids.

use std::fmt::Write;

use toolgap_core::Grid;

const CELL: usize = 24;
const MARGIN_LEFT: usize = 48;
const MARGIN_TOP: usize = 36;
const MARGIN_BOTTOM: usize = 32;

/// Maps `[-1, 1]` to blue, white and red.
fn color(v: f64) -> String {
    let v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Layers run bottom to top, token offsets left to right. Flagged cells are
/// hatched with a grey cross.
pub fn heatmap(grid: &Grid, title: &str) -> String {
    let cols = grid.offsets.len();
    let rows = grid.n_layers;
    let width = MARGIN_LEFT + cols * CELL + 8;
    let height = MARGIN_TOP + rows * CELL + MARGIN_BOTTOM;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_LEFT}" y="16" font-size="13">{}</text>"#,
        escape(title)
    );
    for (layer, row) in grid.values.iter().enumerate() {
        let y = MARGIN_TOP + (rows - 1 - layer) * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{layer}</text>"#,
            MARGIN_LEFT - 4,
            y + CELL / 2 + 4
        );
        for (col, &v) in row.iter().enumerate() {
            let x = MARGIN_LEFT + col * CELL;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"><title>layer {layer}, offset {}: {v:.3}</title></rect>"#,
                color(v),
                grid.offsets[col]
            );
        }
    }
    for cell in &grid.flagged {
        if let Some(col) = grid.offsets.iter().position(|&o| o == cell.offset) {
            let x = MARGIN_LEFT + col * CELL;
            let y = MARGIN_TOP + (rows - 1 - cell.layer) * CELL;
            let _ = writeln!(
                s,
                r#"<path d="M{x} {y}l{CELL} {CELL}M{} {y}l-{CELL} {CELL}" stroke="grey"/>"#,
                x + CELL
            );
        }
    }
    let base = MARGIN_TOP + rows * CELL + 14;
    for (col, o) in grid.offsets.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{base}" text-anchor="middle">{o}</text>"#,
            MARGIN_LEFT + col * CELL + CELL / 2
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use toolgap_core::probes::{Cell, PositionGrid};

    #[test]
    fn renders_every_cell() {
        let grid = PositionGrid {
            kind: "cosine".into(),
            offsets: vec![-2, -1],
            n_layers: 3,
            values: vec![vec![1.0, -1.0], vec![0.0, 0.5], vec![0.2, 0.1]],
            flagged: vec![Cell { offset: -1, layer: 0 }],
        };
        let svg = heatmap(&grid, "a <b>");
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("rgb(255,0,0)") && svg.contains("rgb(0,0,255)"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert_eq!(svg.matches("<path").count(), 1);
    }
}
