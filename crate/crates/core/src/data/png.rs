use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Separator width between tiles, in pixels.
pub const GUTTER: usize = 2;

fn to_byte(v: Float) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Pixel values in `[0, 1]` as a `[height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(&[self.height, self.width], |i| self.pixels[i] as Float / 255.0)
    }
}

/// Tiles equally sized `[H, W]` images row-major, `cols` per row, with black
/// separators between tiles and no outer border. Unused trailing slots stay
/// black.
pub fn grid_image(images: &[Tensor], cols: usize) -> Result<GrayImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("image grid needs at least one image".into()))?;
    if cols == 0 {
        return Err(Error::InvalidArgument("image grid needs at least one column".into()));
    }
    let (h, w) = match first.shape() {
        [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
        other => {
            return Err(Error::InvalidShape {
                op: "grid_image",
                detail: format!("expected single-channel images, got {other:?}"),
            })
        }
    };
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let width = cols * w + (cols - 1) * GUTTER;
    let height = rows * h + (rows - 1) * GUTTER;
    let mut pixels = vec![0u8; width * height];
    for (k, img) in images.iter().enumerate() {
        if img.len() != h * w {
            return Err(Error::ShapeMismatch {
                op: "grid_image",
                lhs: first.shape().to_vec(),
                rhs: img.shape().to_vec(),
            });
        }
        let (top, left) = ((k / cols) * (h + GUTTER), (k % cols) * (w + GUTTER));
        for r in 0..h {
            let row = &mut pixels[(top + r) * width + left..][..w];
            for (dst, &v) in row.iter_mut().zip(&img.data()[r * w..(r + 1) * w]) {
                *dst = to_byte(v);
            }
        }
    }
    Ok(GrayImage { width, height, pixels })
}

pub fn write_png(image: &GrayImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let png_err = |e: png::EncodingError| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&image.pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn write_grid_png(images: &[Tensor], cols: usize, path: &Path) -> Result<()> {
    write_png(&grid_image(images, cols)?, path)
}

/// Reads an 8-bit PNG and converts it to grayscale.
pub fn read_png(path: &Path) -> Result<GrayImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fail = |detail: String| Error::Png {
        path: path.to_path_buf(),
        detail,
    };
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| fail(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| fail("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| fail(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let stride = info.line_size;
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf[..stride * height].chunks(stride) {
        for px in row[..width * channels].chunks(channels) {
            let gray = match channels {
                1 | 2 => px[0] as Float,
                _ => 0.299 * px[0] as Float + 0.587 * px[1] as Float + 0.114 * px[2] as Float,
            };
            pixels.push(gray.round() as u8);
        }
    }
    Ok(GrayImage { width, height, pixels })
}
