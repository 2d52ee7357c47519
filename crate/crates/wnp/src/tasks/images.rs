//! Synthetic image corpora and binary PPM/PGM ingestion.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::tiles::IMAGE_SIZE;

/// Row-major, channel-last pixel array with values in [0, 1].
#[derive(Debug, Clone)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Gradient,
    Blobs,
    Stripes,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(SynthKind::Gradient),
            "blobs" => Ok(SynthKind::Blobs),
            "stripes" => Ok(SynthKind::Stripes),
            other => Err(Error::Config(format!(
                "unknown image kind '{other}' (expected gradient, blobs, or stripes)"
            ))),
        }
    }
}

fn synth_one(kind: SynthKind, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = IMAGE_SIZE;
    let mut pixels = vec![0.0; n * n * channels];
    match kind {
        SynthKind::Gradient => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            // channel offsets keep color images non-grey
            let offsets: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.0..0.3)).collect();
            let span = (n as f64 - 1.0) * (dx.abs() + dy.abs());
            for y in 0..n {
                for x in 0..n {
                    let proj = x as f64 * dx + y as f64 * dy;
                    let t = (proj + span) / (2.0 * span);
                    for c in 0..channels {
                        pixels[(y * n + x) * channels + c] =
                            (t + offsets[c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        SynthKind::Blobs => {
            let k = rng.gen_range(2..=4);
            let blobs: Vec<(f64, f64, f64)> = (0..k)
                .map(|_| {
                    (
                        rng.gen_range(4.0..n as f64 - 4.0),
                        rng.gen_range(4.0..n as f64 - 4.0),
                        rng.gen_range(2.0..6.0),
                    )
                })
                .collect();
            for y in 0..n {
                for x in 0..n {
                    let mut v = 0.0;
                    for &(cx, cy, s) in &blobs {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        v += (-d2 / (2.0 * s * s)).exp();
                    }
                    let v = v.clamp(0.0, 1.0);
                    for c in 0..channels {
                        pixels[(y * n + x) * channels + c] = v;
                    }
                }
            }
        }
        SynthKind::Stripes => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let period: f64 = rng.gen_range(4.0..16.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            for y in 0..n {
                for x in 0..n {
                    let proj = x as f64 * dx + y as f64 * dy;
                    let v = 0.5 + 0.5 * (proj * std::f64::consts::TAU / period + phase).sin();
                    for c in 0..channels {
                        pixels[(y * n + x) * channels + c] = v;
                    }
                }
            }
        }
    }
    Image { width: n, height: n, channels, pixels }
}

/// Procedurally generated 32x32 corpus; image i uses seed `seed + i`,
/// so the corpus is identical whether generated in parallel or not.
pub fn synth_images(n: usize, kind: SynthKind, channels: usize, seed: u64) -> Result<Vec<Image>> {
    if n == 0 {
        return Err(Error::contract("corpus size must be at least 1"));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::contract("channels must be 1 or 3"));
    }
    #[cfg(feature = "parallel")]
    {
        Ok((0..n)
            .into_par_iter()
            .map(|i| synth_one(kind, channels, seed + i as u64))
            .collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok((0..n).map(|i| synth_one(kind, channels, seed + i as u64)).collect())
    }
}

/// Mixed corpus cycling gradient/blobs/stripes.
pub fn synth_mixed(n: usize, channels: usize, seed: u64) -> Result<Vec<Image>> {
    let kinds = [SynthKind::Gradient, SynthKind::Blobs, SynthKind::Stripes];
    if n == 0 {
        return Err(Error::contract("corpus size must be at least 1"));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::contract("channels must be 1 or 3"));
    }
    Ok((0..n)
        .map(|i| synth_one(kinds[i % 3], channels, seed + i as u64))
        .collect())
}

struct PnmHeader {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
}

fn parse_pnm_header(data: &[u8]) -> Result<(PnmHeader, usize)> {
    let bad = |msg: &str| Error::contract(format!("bad PNM header: {msg}"));
    if data.len() < 2 {
        return Err(bad("truncated"));
    }
    let channels = match &data[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(bad("not a binary P5/P6 file")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and # comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("missing numeric field"));
        }
        *field = std::str::from_utf8(&data[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("unparsable field"))?;
    }
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(bad("missing separator before pixel data"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval supported"));
    }
    Ok((PnmHeader { channels, width, height, maxval }, pos))
}

fn read_pnm(path: &Path) -> Result<Image> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let (h, offset) = parse_pnm_header(&data)?;
    let expect = h.width * h.height * h.channels;
    let body = &data[offset..];
    if body.len() < expect {
        return Err(Error::contract(format!(
            "pixel data truncated: want {expect} bytes, have {}",
            body.len()
        )));
    }
    let pixels = body[..expect].iter().map(|&b| b as f64 / h.maxval as f64).collect();
    Ok(Image { width: h.width, height: h.height, channels: h.channels, pixels })
}

/// Center-crop to square, box-average down to 32x32.
fn downsample(img: &Image) -> Image {
    let side = img.width.min(img.height);
    let x0 = (img.width - side) / 2;
    let y0 = (img.height - side) / 2;
    let n = IMAGE_SIZE;
    let ch = img.channels;
    let mut pixels = vec![0.0; n * n * ch];
    for oy in 0..n {
        let ys = y0 + oy * side / n;
        let ye = y0 + ((oy + 1) * side / n).max(oy * side / n + 1);
        for ox in 0..n {
            let xs = x0 + ox * side / n;
            let xe = x0 + ((ox + 1) * side / n).max(ox * side / n + 1);
            for c in 0..ch {
                let mut sum = 0.0;
                let mut count = 0.0;
                for y in ys..ye {
                    for x in xs..xe {
                        sum += img.pixels[(y * img.width + x) * ch + c];
                        count += 1.0;
                    }
                }
                pixels[(oy * n + ox) * ch + c] = sum / count;
            }
        }
    }
    Image { width: n, height: n, channels: ch, pixels }
}

/// Load up to `limit` PPM/PGM images from a directory, normalized to
/// [0, 1] at 32x32. Unreadable files are skipped with a warning; zero
/// readable files is an error.
pub fn ingest_image_dir(path: &Path, limit: usize) -> Result<Vec<Image>> {
    let mut entries: Vec<_> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("pgm")
            )
        })
        .collect();
    entries.sort();
    let mut images = Vec::new();
    for entry in entries {
        if images.len() >= limit {
            break;
        }
        match read_pnm(&entry) {
            Ok(img) => images.push(downsample(&img)),
            Err(e) => eprintln!("warning: skipping {}: {e}", entry.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::contract(format!(
            "no readable PPM/PGM images in {}",
            path.display()
        )));
    }
    Ok(images)
}

/// 8-bit binary PGM (single channel).
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    write!(file, "P5\n{} {}\n255\n", img.width, img.height)?;
    for y in 0..img.height {
        for x in 0..img.width {
            let v = if img.channels == 1 {
                img.pixels[y * img.width + x]
            } else {
                let base = (y * img.width + x) * img.channels;
                img.pixels[base..base + img.channels].iter().sum::<f64>()
                    / img.channels as f64
            };
            file.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
        }
    }
    Ok(())
}

/// 8-bit binary PPM (three channels).
pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    write!(file, "P6\n{} {}\n255\n", img.width, img.height)?;
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                let v = if img.channels == 3 {
                    img.pixels[(y * img.width + x) * 3 + c]
                } else {
                    img.pixels[y * img.width + x]
                };
                file.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_values_in_unit_interval() {
        for kind in [SynthKind::Gradient, SynthKind::Blobs, SynthKind::Stripes] {
            let imgs = synth_images(5, kind, 1, 10).unwrap();
            for img in &imgs {
                assert!(img.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn gradient_monotone_along_axis() {
        let imgs = synth_images(3, SynthKind::Gradient, 1, 99).unwrap();
        for img in &imgs {
            // walking along the gradient direction must never decrease;
            // recover the direction by comparing corner values
            let n = IMAGE_SIZE;
            let get = |x: usize, y: usize| img.pixels[y * n + x];
            // pick the axis (row or column) with larger end-to-end change
            let row_delta = get(n - 1, 0) - get(0, 0);
            let col_delta = get(0, n - 1) - get(0, 0);
            if row_delta.abs() >= col_delta.abs() {
                for y in 0..n {
                    for x in 1..n {
                        let d = get(x, y) - get(x - 1, y);
                        assert!(d * row_delta >= -1e-12);
                    }
                }
            } else {
                for x in 0..n {
                    for y in 1..n {
                        let d = get(x, y) - get(x, y - 1);
                        assert!(d * col_delta >= -1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn synth_deterministic() {
        let a = synth_images(4, SynthKind::Blobs, 3, 5).unwrap();
        let b = synth_images(4, SynthKind::Blobs, 3, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels, y.pixels);
        }
    }

    #[test]
    fn pgm_round_trip_and_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let img = synth_images(1, SynthKind::Stripes, 1, 3).unwrap().remove(0);
        let path = dir.path().join("a.pgm");
        write_pgm(&img, &path).unwrap();
        let loaded = ingest_image_dir(dir.path(), 10).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].width, 32);
        // 32x32 input passes through up to 8-bit quantization
        for (a, b) in img.pixels.iter().zip(&loaded[0].pixels) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn box_average_of_constant_is_constant() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image { width: 64, height: 64, channels: 1, pixels: vec![0.5; 64 * 64] };
        write_pgm(&img, &dir.path().join("c.pgm")).unwrap();
        let loaded = ingest_image_dir(dir.path(), 10).unwrap();
        let want = (0.5f64 * 255.0).round() / 255.0;
        assert!(loaded[0].pixels.iter().all(|&v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn limit_respected_and_empty_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest_image_dir(dir.path(), 10).is_err());
        for i in 0..5 {
            let img = synth_images(1, SynthKind::Blobs, 1, i).unwrap().remove(0);
            write_pgm(&img, &dir.path().join(format!("{i}.pgm"))).unwrap();
        }
        assert_eq!(ingest_image_dir(dir.path(), 3).unwrap().len(), 3);
    }

    #[test]
    fn corrupt_file_skipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.pgm"), b"not a pnm").unwrap();
        let img = synth_images(1, SynthKind::Gradient, 1, 1).unwrap().remove(0);
        write_pgm(&img, &dir.path().join("good.pgm")).unwrap();
        assert_eq!(ingest_image_dir(dir.path(), 10).unwrap().len(), 1);
    }
}
