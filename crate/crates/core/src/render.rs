//! 8-bit grayscale PNG previews of maps, masks and reconstructions.

use std::path::Path;

use image::GrayImage;
use ndarray::Array2;

use crate::clustering::RoiMask;
use crate::error::{Error, Result};
use crate::stats::StatMap;

/// Linear stretch of the finite values to 0..=255; non-finite pixels are 0.
pub fn grid_to_image(grid: &Array2<f64>) -> GrayImage {
    let (lo, hi) = grid
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (rows, cols) = grid.dim();
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = grid[[y as usize, x as usize]];
        let level = if v.is_finite() {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        image::Luma([level])
    })
}

pub fn write_grid_png(path: &Path, grid: &Array2<f64>) -> Result<()> {
    grid_to_image(grid)
        .save(path)
        .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
}

/// Render a stat map on a log scale, one pixel per scan cell.
pub fn write_map_png(path: &Path, map: &StatMap) -> Result<()> {
    let floor = map
        .occupied_values()
        .into_iter()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let display = ndarray::Zip::from(&map.values)
        .and(&map.occupied)
        .map_collect(|&v, &o| match (o, v > 0.0) {
            (true, true) => v.ln(),
            (true, false) if floor.is_finite() => floor.ln(),
            _ => f64::NAN,
        });
    write_grid_png(path, &display)
}

pub fn write_mask_png(path: &Path, mask: &RoiMask) -> Result<()> {
    let display = ndarray::Zip::from(&mask.cells)
        .and(&mask.occupied)
        .map_collect(|&c, &o| match (c, o) {
            (true, _) => 2.0,
            (false, true) => 1.0,
            _ => 0.0,
        });
    write_grid_png(path, &display)
}
