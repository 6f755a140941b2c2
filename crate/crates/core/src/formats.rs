//! On-disk and on-wire encodings for images, masks and probability maps.
//!
//! * Masks are single-channel PNGs: 0 is background, anything else foreground.
//! * Probability maps use the `CSPM` container: the 4-byte magic, width and
//!   height as little-endian `u16`, then row-major little-endian `f32` values.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ProbabilityMap, RasterImage};

pub const CSPM_MAGIC: &[u8; 4] = b"CSPM";

pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    let img = image::load_from_memory(bytes)?.to_rgb8();
    rgb_to_raster(img)
}

/// Width and height from the image header, without decoding pixels.
pub fn image_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let (w, h) = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()?
        .into_dimensions()?;
    Ok((w as usize, h as usize))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let img = image::open(path)?.to_rgb8();
    rgb_to_raster(img)
}

fn rgb_to_raster(img: RgbImage) -> Result<RasterImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    RasterImage::from_rgb_bytes(w, h, img.as_raw())
}

fn raster_to_rgb(image: &RasterImage) -> RgbImage {
    RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb_bytes())
        .expect("buffer length matches dimensions")
}

pub fn encode_image_png(image: &RasterImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    raster_to_rgb(image).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_image(image: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    raster_to_rgb(image).save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

fn gray_to_mask(img: GrayImage) -> Result<BinaryMask> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::new(w, h, img.as_raw().iter().map(|&p| p != 0).collect())
}

fn mask_to_gray(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    })
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    gray_to_mask(image::load_from_memory(bytes)?.to_luma8())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    gray_to_mask(image::open(path)?.to_luma8())
}

/// Foreground is written as 255.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    mask_to_gray(mask).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    mask_to_gray(mask).save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Serializes a probability map in the `CSPM` format. Values are narrowed
/// to `f32`.
pub fn encode_cspm(map: &ProbabilityMap) -> Result<Vec<u8>> {
    let (w, h) = map.dims();
    let (Ok(w16), Ok(h16)) = (u16::try_from(w), u16::try_from(h)) else {
        return Err(Error::Format(format!("{w}x{h} exceeds the 65535 pixel CSPM limit")));
    };
    let mut out = Vec::with_capacity(8 + 4 * w * h);
    out.extend_from_slice(CSPM_MAGIC);
    out.extend_from_slice(&w16.to_le_bytes());
    out.extend_from_slice(&h16.to_le_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cspm(bytes: &[u8]) -> Result<ProbabilityMap> {
    if bytes.len() < 8 || &bytes[..4] != CSPM_MAGIC {
        return Err(Error::Format("missing CSPM header".into()));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * w * h {
        return Err(Error::Format(format!(
            "CSPM body has {} bytes, expected {}",
            body.len(),
            4 * w * h
        )));
    }
    let values = f32_values(body);
    ProbabilityMap::new(w, h, values)
}

/// Little-endian `f32` bytes widened to `f64`.
pub fn f32_values(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

pub fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}
