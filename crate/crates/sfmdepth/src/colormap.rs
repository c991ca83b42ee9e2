//! Depth visualization with the viridis colormap.

use sfmdepth_core::grid::Grid;

/// RGB bytes for `depth` divided by its maximum; non-positive and
/// non-finite values map to the low end of the colormap.
pub fn colorize(depth: &Grid<f64>) -> Vec<u8> {
    let max = depth
        .as_slice()
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    depth
        .as_slice()
        .iter()
        .flat_map(|&v| {
            let t = if max > 0.0 && v.is_finite() { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let c = colorous::VIRIDIS.eval_continuous(t);
            [c.r, c.g, c.b]
        })
        .collect()
}
