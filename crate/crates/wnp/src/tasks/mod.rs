//! Episode generators for the three experiments: misspecified linear
//! regression, the g-and-kappa quantile distribution, and tile-based
//! image completion, plus synthetic image corpora and PPM/PGM ingestion.

mod gk;
mod images;
mod linear;
mod tiles;

pub use gk::{gen_gk_episode, gk_quantile, gk_quantile_at, gk_sample, GkParams};
pub use images::{ingest_image_dir, synth_images, synth_mixed, write_pgm, write_ppm, Image, SynthKind};
pub use linear::{gen_linear_uniform, ols_fit};
pub use tiles::{gen_tile_episode, image_to_tiles, tiles_to_image, TileGrid};

use crate::cnp::TaskBatch;
use crate::error::Result;
use std::io::Write;
use std::path::Path;

/// Debug dump: one row per point, x columns then y columns then an
/// is_context flag.
pub fn dump_episode_csv(batch: &TaskBatch, path: &Path) -> Result<()> {
    let (n, dx) = batch.x_target.dims2();
    let (_, dy) = batch.y_target.dims2();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let xcols: Vec<String> = (0..dx).map(|i| format!("x{i}")).collect();
    let ycols: Vec<String> = (0..dy).map(|i| format!("y{i}")).collect();
    writeln!(file, "{},{},is_context", xcols.join(","), ycols.join(","))?;
    let mut in_context = vec![false; n];
    for &ci in &batch.context_idx {
        in_context[ci] = true;
    }
    for (i, &is_ctx) in in_context.iter().enumerate() {
        let xs: Vec<String> = batch.x_target.values[i * dx..(i + 1) * dx]
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        let ys: Vec<String> = batch.y_target.values[i * dy..(i + 1) * dy]
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        writeln!(file, "{},{},{}", xs.join(","), ys.join(","), is_ctx as u8)?;
    }
    Ok(())
}
