//! Grayscale image ingestion.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma};

use cnsprox::tensor::{Frame, SignalSet};

use crate::error::{BenchError, Result};

/// How images are brought to a common shape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Geometry {
    /// Side of a centered square crop.
    pub crop: Option<usize>,
    /// Final `[rows, cols]`.
    pub size: Option<[usize; 2]>,
    /// Convert color images to luma instead of rejecting them.
    pub convert_color: bool,
}

/// A decoded single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

/// Decode an 8- or 16-bit grayscale image (an alpha channel is dropped);
/// color images are converted only when `convert_color` is set.
pub fn decode_gray(bytes: &[u8], convert_color: bool) -> std::result::Result<GrayImage, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    to_gray(img, convert_color)
}

fn to_gray(img: DynamicImage, convert_color: bool) -> std::result::Result<GrayImage, String> {
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other if convert_color => match other {
            DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
                other.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
            }
            _ => other.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        },
        other => {
            return Err(format!(
                "color image ({:?}); set `convert_color` to convert it to grayscale",
                other.color()
            ));
        }
    };
    Ok(GrayImage { rows, cols, pixels })
}

/// Centered `side x side` crop.
pub fn center_crop(img: &GrayImage, side: usize) -> std::result::Result<GrayImage, String> {
    if side > img.rows || side > img.cols {
        return Err(format!("crop {side} exceeds image {}x{}", img.rows, img.cols));
    }
    let r0 = (img.rows - side) / 2;
    let c0 = (img.cols - side) / 2;
    let mut pixels = Vec::with_capacity(side * side);
    for r in r0..r0 + side {
        pixels.extend_from_slice(&img.pixels[r * img.cols + c0..r * img.cols + c0 + side]);
    }
    Ok(GrayImage { rows: side, cols: side, pixels })
}

/// Antialiased (triangle filter) resize to `rows x cols`.
pub fn resize(img: &GrayImage, rows: usize, cols: usize) -> GrayImage {
    if img.rows == rows && img.cols == cols {
        return img.clone();
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
        img.cols as u32,
        img.rows as u32,
        img.pixels.iter().map(|&v| v as f32).collect(),
    )
    .expect("buffer length matches dimensions");
    let out = imageops::resize(&buf, cols as u32, rows as u32, FilterType::Triangle);
    GrayImage {
        rows,
        cols,
        pixels: out.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect(),
    }
}

fn shape(img: GrayImage, g: &Geometry) -> std::result::Result<GrayImage, String> {
    let img = match g.crop {
        Some(side) => center_crop(&img, side)?,
        None => img,
    };
    Ok(match g.size {
        Some([r, c]) => resize(&img, r, c),
        None => img,
    })
}

/// Load, crop and resize images into one signal set; all results must
/// share a shape.
pub fn load_grayscale_images<P: AsRef<Path>>(paths: &[P], g: &Geometry) -> Result<SignalSet> {
    let mut images = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let bytes = std::fs::read(p).map_err(|e| BenchError::io(p, e))?;
        let img = decode_gray(&bytes, g.convert_color)
            .and_then(|img| shape(img, g))
            .map_err(|message| image_err(p, message))?;
        images.push((p.to_path_buf(), img));
    }
    stack(images)
}

fn image_err(path: &Path, message: String) -> BenchError {
    BenchError::Image {
        path: path.to_path_buf(),
        message,
    }
}

fn stack(images: Vec<(PathBuf, GrayImage)>) -> Result<SignalSet> {
    let Some((_, first)) = images.first() else {
        return Err(BenchError::Invalid("no images to load".into()));
    };
    let (rows, cols) = (first.rows, first.cols);
    let mut data = Vec::with_capacity(images.len() * rows * cols);
    for (p, img) in &images {
        if (img.rows, img.cols) != (rows, cols) {
            return Err(image_err(
                p,
                format!("shape {}x{} differs from {rows}x{cols}; set `crop` or `size`", img.rows, img.cols),
            ));
        }
        data.extend_from_slice(&img.pixels);
    }
    let frame = Frame::d2(rows, cols)?;
    Ok(SignalSet::new(frame, data)?)
}

/// Write `pixels` (clamped to `[0, 1]`) as a 16-bit grayscale PNG.
pub fn save_png16(path: &Path, rows: usize, cols: usize, pixels: &[f64]) -> Result<()> {
    let raw: Vec<u16> = pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(cols as u32, rows as u32, raw).ok_or_else(|| BenchError::Output {
            path: path.to_path_buf(),
            message: "pixel count does not match shape".into(),
        })?;
    buf.save(path).map_err(|e| BenchError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageFormat, Rgb, RgbImage};
    use std::io::Cursor;

    fn png<P: image::PixelWithColorType>(buf: &ImageBuffer<P, Vec<P::Subpixel>>) -> Vec<u8>
    where
        P::Subpixel: image::Primitive,
        [P::Subpixel]: image::EncodableLayout,
    {
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn black_and_white() {
        let black = png(&ImageBuffer::from_pixel(4, 3, Luma([0u8])));
        let white = png(&ImageBuffer::from_pixel(4, 3, Luma([255u8])));
        let white16 = png(&ImageBuffer::from_pixel(4, 3, Luma([65535u16])));
        assert!(decode_gray(&black, false).unwrap().pixels.iter().all(|v| *v == 0.0));
        assert!(decode_gray(&white, false).unwrap().pixels.iter().all(|v| *v == 1.0));
        let w = decode_gray(&white16, false).unwrap();
        assert_eq!((w.rows, w.cols), (3, 4));
        assert!(w.pixels.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn color_needs_flag() {
        let rgb = png(&RgbImage::from_pixel(2, 2, Rgb([255, 255, 255])));
        assert!(decode_gray(&rgb, false).unwrap_err().contains("convert_color"));
        let g = decode_gray(&rgb, true).unwrap();
        assert!(g.pixels.iter().all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn center_crop_indices() {
        let img = GrayImage {
            rows: 6,
            cols: 8,
            pixels: (0..48).map(|v| v as f64).collect(),
        };
        let c = center_crop(&img, 2).unwrap();
        // rows 2..4, cols 3..5
        assert_eq!(c.pixels, vec![19.0, 20.0, 27.0, 28.0]);
        assert!(center_crop(&img, 7).is_err());
    }

    #[test]
    fn resize_preserves_constant() {
        let img = GrayImage {
            rows: 10,
            cols: 10,
            pixels: vec![0.25; 100],
        };
        let r = resize(&img, 4, 5);
        assert_eq!((r.rows, r.cols, r.pixels.len()), (4, 5, 20));
        assert!(r.pixels.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(decode_gray(b"not an image", false).is_err());
    }
}
