//! Minimal SVG heatmap of a grid field.

use std::fmt::Write as _;

use crate::grid::{GridField, ObservationMask};

const STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];

fn colour(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    for pair in STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (pair[0], pair[1]);
        if t <= b {
            let u = (t - a) / (b - a);
            let mix = |i: usize| (ca[i] as f64 + u * (cb[i] as f64 - ca[i] as f64)).round() as u8;
            return [mix(0), mix(1), mix(2)];
        }
    }
    STOPS[4].1
}

/// One square per cell, first row at the top. Observed cells, when a mask
/// is given, get a thin outline.
pub fn heatmap(field: &GridField, mask: Option<&ObservationMask>, cell_px: usize) -> String {
    let (h, w) = field.dims();
    let lo = field.values().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" shape-rendering="crispEdges">"#,
        w * cell_px,
        h * cell_px
    );
    for r in 0..h {
        for c in 0..w {
            let [cr, cg, cb] = colour((field.get(r, c) - lo) / span);
            let stroke = match mask {
                Some(m) if m.get(r, c) => r#" stroke="white" stroke-width="0.5""#,
                _ => "",
            };
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{cell_px}" height="{cell_px}" fill="#{cr:02x}{cg:02x}{cb:02x}"{stroke}/>"##,
                c * cell_px,
                r * cell_px
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_cell() {
        let f = GridField::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let svg = heatmap(&f, None, 4);
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("#440154") && svg.contains("#fde725"));
    }

    #[test]
    fn constant_field_and_mask_outline() {
        let f = GridField::filled(2, 2, 1.0).unwrap();
        let m = ObservationMask::from_indices(2, 2, [1]).unwrap();
        assert_eq!(heatmap(&f, Some(&m), 1).matches("stroke=").count(), 1);
    }
}
