use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Columns in a sample grid.
pub const GRID_COLUMNS: usize = 3;

/// 8-bit RGB raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }
}

/// `[0, 255] → [−1, 1]` via `2v/255 − 1`.
pub fn normalize_pixel(v: u8) -> f64 {
    2.0 * v as f64 / 255.0 - 1.0
}

/// Inverse of [`normalize_pixel`], rounded and clamped to 8 bits.
pub fn denormalize_pixel(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Decodes any 8- or 16-bit PNG to RGB; alpha is dropped and gray is replicated.
pub fn decode_png(path: &Path) -> Result<RgbImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let src = &buf[..info.buffer_size()];
    let step = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Indexed => return Err(decode_err("palette was not expanded".into())),
    };
    let mut pixels = Vec::with_capacity(width * height * 3);
    for px in src.chunks_exact(step) {
        if step >= 3 {
            pixels.extend_from_slice(&px[..3]);
        } else {
            pixels.extend_from_slice(&[px[0]; 3]);
        }
    }
    Ok(RgbImage {
        width,
        height,
        pixels,
    })
}

pub fn encode_png(path: &Path, image: &RgbImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.width as u32,
        image.height as u32,
    );
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&image.pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Tiles `[k, 3, h, w]` images in `[−1, 1]` row-major, `columns` per row.
pub fn sample_grid<T: Scalar>(images: &Tensor<T>, columns: usize) -> Result<RgbImage> {
    let (k, c, h, w) = images.dims4("sample_grid")?;
    if c != 3 || k == 0 || columns == 0 {
        return Err(Error::shape(
            "sample_grid",
            images.shape(),
            &[k.max(1), 3, h, w],
        ));
    }
    let cols = columns.min(k);
    let rows = k.div_ceil(cols);
    let mut grid = RgbImage::new(cols * w, rows * h);
    let data = images.data();
    for n in 0..k {
        let (r0, c0) = ((n / cols) * h, (n % cols) * w);
        for ch in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    let v = data[((n * 3 + ch) * h + i) * w + j].f64();
                    grid.pixels[((r0 + i) * grid.width + c0 + j) * 3 + ch] = denormalize_pixel(v);
                }
            }
        }
    }
    Ok(grid)
}

/// Writes generated samples as a PNG grid, three per row.
pub fn encode_sample_grid<T: Scalar>(images: &Tensor<T>, path: &Path) -> Result<()> {
    encode_png(path, &sample_grid(images, GRID_COLUMNS)?)
}
