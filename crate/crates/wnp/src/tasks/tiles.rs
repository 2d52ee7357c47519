//! 32x32 images partitioned into an 8x8 grid of 4x4 tiles, and the
//! tile-completion episodes built from them: one-hot tile indices as
//! inputs, flattened tiles as outputs.

use rand::seq::SliceRandom;
use rand::Rng;

use super::images::Image;
use crate::cnp::TaskBatch;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 32;
pub const TILE_SIZE: usize = 4;
pub const GRID: usize = IMAGE_SIZE / TILE_SIZE; // 8
pub const N_TILES: usize = GRID * GRID; // 64

/// Lossless partition of a 32x32 image into 64 flattened 4x4 tiles.
#[derive(Debug, Clone)]
pub struct TileGrid {
    pub channels: usize,
    pub tiles: Vec<Vec<f64>>,
}

impl TileGrid {
    pub fn tile_width(&self) -> usize {
        TILE_SIZE * TILE_SIZE * self.channels
    }
}

/// Row-major 8x8 grid of tiles, each flattened row-major, channel-last.
pub fn image_to_tiles(image: &Image) -> Result<TileGrid> {
    if image.width != IMAGE_SIZE || image.height != IMAGE_SIZE {
        return Err(Error::contract(format!(
            "expected a {IMAGE_SIZE}x{IMAGE_SIZE} image, got {}x{}",
            image.width, image.height
        )));
    }
    let ch = image.channels;
    let mut tiles = Vec::with_capacity(N_TILES);
    for ty in 0..GRID {
        for tx in 0..GRID {
            let mut tile = Vec::with_capacity(TILE_SIZE * TILE_SIZE * ch);
            for py in 0..TILE_SIZE {
                for px in 0..TILE_SIZE {
                    let y = ty * TILE_SIZE + py;
                    let x = tx * TILE_SIZE + px;
                    let base = (y * IMAGE_SIZE + x) * ch;
                    tile.extend_from_slice(&image.pixels[base..base + ch]);
                }
            }
            tiles.push(tile);
        }
    }
    Ok(TileGrid { channels: ch, tiles })
}

pub fn tiles_to_image(grid: &TileGrid) -> Image {
    let ch = grid.channels;
    let mut pixels = vec![0.0; IMAGE_SIZE * IMAGE_SIZE * ch];
    for (t, tile) in grid.tiles.iter().enumerate() {
        let ty = t / GRID;
        let tx = t % GRID;
        for py in 0..TILE_SIZE {
            for px in 0..TILE_SIZE {
                let y = ty * TILE_SIZE + py;
                let x = tx * TILE_SIZE + px;
                let src = (py * TILE_SIZE + px) * ch;
                let dst = (y * IMAGE_SIZE + x) * ch;
                pixels[dst..dst + ch].copy_from_slice(&tile[src..src + ch]);
            }
        }
    }
    Image { width: IMAGE_SIZE, height: IMAGE_SIZE, channels: ch, pixels }
}

/// Completion episode over one image: all 64 tiles are targets, with
/// 4..=16 of them revealed as context.
pub fn gen_tile_episode(grid: &TileGrid, n_context: usize, rng: &mut impl Rng) -> Result<TaskBatch> {
    if !(4..=16).contains(&n_context) {
        return Err(Error::contract(format!(
            "tile context count {n_context} outside 4..=16"
        )));
    }
    let width = grid.tile_width();
    let mut x = vec![0.0; N_TILES * N_TILES];
    let mut y = Vec::with_capacity(N_TILES * width);
    for (t, tile) in grid.tiles.iter().enumerate() {
        x[t * N_TILES + t] = 1.0;
        y.extend_from_slice(tile);
    }
    let mut idx: Vec<usize> = (0..N_TILES).collect();
    idx.shuffle(rng);
    idx.truncate(n_context);
    TaskBatch::new(
        Tensor::matrix(N_TILES, N_TILES, x)?,
        Tensor::matrix(N_TILES, width, y)?,
        idx,
    )
}
