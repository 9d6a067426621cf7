//! PNG reading and writing for planar [`Raster`]s.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageBuffer, Luma};
use rflcd_core::data::Raster;

use crate::error::{Error, Result};

fn image_err(path: &Path, detail: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

fn open_8bit(path: &Path) -> Result<DynamicImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => image_err(path, other),
    })?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        other => Err(image_err(path, format!("expected an 8-bit PNG, found {other:?}"))),
    }
}

/// Reads an 8-bit image as a 3-channel raster. Grayscale is replicated and
/// alpha dropped.
pub fn read_rgb(path: &Path) -> Result<Raster> {
    let rgb = open_8bit(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0u8; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c];
        }
    }
    Ok(Raster::new(3, h, w, data)?)
}

/// Reads an 8-bit single-channel image. Colour inputs must have equal
/// channels.
pub fn read_gray(path: &Path) -> Result<Raster> {
    let img = open_8bit(path)?;
    let rgb = img.to_rgb8();
    if rgb.pixels().any(|p| p[0] != p[1] || p[1] != p[2]) {
        return Err(image_err(path, "label image has differing colour channels"));
    }
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Raster::new(1, h, w, rgb.pixels().map(|p| p[0]).collect())?)
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => image_err(path, other),
    })
}

/// Writes a 1- or 3-channel raster as an 8-bit PNG.
pub fn write(path: &Path, raster: &Raster) -> Result<()> {
    let (h, w) = raster.dims();
    let plane = h * w;
    let img = match raster.channels {
        1 => DynamicImage::ImageLuma8(
            ImageBuffer::from_raw(w as u32, h as u32, raster.data.clone()).expect("raster length"),
        ),
        3 => {
            let mut interleaved = vec![0u8; 3 * plane];
            for i in 0..plane {
                for c in 0..3 {
                    interleaved[3 * i + c] = raster.data[c * plane + i];
                }
            }
            DynamicImage::ImageRgb8(ImageBuffer::from_raw(w as u32, h as u32, interleaved).expect("raster length"))
        }
        c => return Err(image_err(path, format!("cannot encode a {c}-channel raster"))),
    };
    save(path, img)
}

/// Writes probabilities in `[0, 1]` as a 16-bit grayscale PNG.
pub fn write_prob16(path: &Path, height: usize, width: usize, probs: &[f32]) -> Result<()> {
    let data: Vec<u16> = probs
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) as f64 * 65535.0 + 0.5) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data).ok_or_else(|| image_err(path, "size mismatch"))?;
    save(path, DynamicImage::ImageLuma16(buf))
}

/// Reads a 16-bit grayscale PNG back into `[0, 1]` values.
pub fn read_prob16(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let gray = img.to_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok((h, w, gray.pixels().map(|p| p[0] as f32 / 65535.0).collect()))
}

/// A binary map (`value > threshold`) as 0/255.
pub fn binary_raster(height: usize, width: usize, probs: &[f32], threshold: f64) -> Raster {
    let data = probs.iter().map(|&p| if p as f64 > threshold { 255 } else { 0 }).collect();
    Raster::new(1, height, width, data).expect("map size")
}
