use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

use super::grid::Cell;
use crate::error::Result;
use crate::image_tensor::ImageTensor;

/// Renders samples onto a `G x G` board of `thumb`-pixel tiles, each sample
/// at its grid cell. The first sample placed in a cell keeps it.
pub fn render_montage(grid_size: usize, thumb: u32, samples: &[(Cell, &ImageTensor)]) -> RgbImage {
    let side = grid_size as u32 * thumb;
    let mut board = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let mut taken = vec![false; grid_size * grid_size];
    for &((row, col), img) in samples {
        let slot = row * grid_size + col;
        if taken[slot] {
            continue;
        }
        taken[slot] = true;
        let tile = imageops::resize(&img.to_rgb8(), thumb, thumb, FilterType::Triangle);
        imageops::replace(
            &mut board,
            &tile,
            (col as u32 * thumb) as i64,
            (row as u32 * thumb) as i64,
        );
    }
    board
}

pub fn save_montage(
    path: &Path,
    grid_size: usize,
    thumb: u32,
    samples: &[(Cell, &ImageTensor)],
) -> Result<()> {
    render_montage(grid_size, thumb, samples).save(path)?;
    Ok(())
}
