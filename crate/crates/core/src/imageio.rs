//! PNG encoding of color, label and depth images.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use base64::Engine;
use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use std::io::Cursor;
use std::path::Path;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_len(len: usize, width: u32, height: u32) -> Result<()> {
    if len != width as usize * height as usize {
        return Err(Error::Domain(format!("{len} pixels do not fill a {width}x{height} image")));
    }
    Ok(())
}

pub fn rgb_buffer(pixels: &[Vec3], width: u32, height: u32) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    check_len(pixels.len(), width, height)?;
    let raw = pixels.iter().flat_map(|c| [quantize(c.x), quantize(c.y), quantize(c.z)]).collect();
    Ok(ImageBuffer::from_raw(width, height, raw).expect("length checked"))
}

pub fn label_buffer(labels: &[u16], width: u32, height: u32) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    check_len(labels.len(), width, height)?;
    Ok(ImageBuffer::from_raw(width, height, labels.to_vec()).expect("length checked"))
}

/// Depth in millimetres, saturating at `u16::MAX`.
pub fn depth_buffer(depth: &[f64], width: u32, height: u32) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    let mm: Vec<u16> = depth.iter().map(|d| (d.max(0.0) * 1000.0).round().min(u16::MAX as f64) as u16).collect();
    label_buffer(&mm, width, height)
}

fn encode<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
    buf: &ImageBuffer<P, Vec<S>>,
) -> Result<Vec<u8>>
where
    [S]: image::EncodableLayout,
{
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn rgb_png(pixels: &[Vec3], width: u32, height: u32) -> Result<Vec<u8>> {
    encode(&rgb_buffer(pixels, width, height)?)
}

pub fn label_png(labels: &[u16], width: u32, height: u32) -> Result<Vec<u8>> {
    encode(&label_buffer(labels, width, height)?)
}

pub fn depth_png(depth: &[f64], width: u32, height: u32) -> Result<Vec<u8>> {
    encode(&depth_buffer(depth, width, height)?)
}

pub fn base64_png(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn write_rgb(path: impl AsRef<Path>, pixels: &[Vec3], width: u32, height: u32) -> Result<()> {
    std::fs::write(path, rgb_png(pixels, width, height)?)?;
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u16], width: u32, height: u32) -> Result<()> {
    std::fs::write(path, label_png(labels, width, height)?)?;
    Ok(())
}

/// Reads an 8-bit RGB PNG into colors in `[0, 1]`.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<(Vec<Vec3>, u32, u32)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| Vec3::new(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0)).collect();
    Ok((px, w, h))
}

/// Reads a 16-bit grayscale label PNG.
pub fn read_labels(path: impl AsRef<Path>) -> Result<(Vec<u16>, u32, u32)> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    Ok((img.into_raw(), w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<u16> = (0..12).map(|i| (i * 5000) as u16).collect();
        let path = dir.path().join("m.png");
        write_labels(&path, &labels, 4, 3).unwrap();
        assert_eq!(read_labels(&path).unwrap(), (labels, 4, 3));
    }

    #[test]
    fn rgb_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64 / 5.0, 0.5, 1.2)).collect();
        let path = dir.path().join("c.png");
        write_rgb(&path, &px, 3, 2).unwrap();
        let (back, w, h) = read_rgb(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        for (a, b) in px.iter().zip(&back) {
            assert!((a.x - b.x).abs() <= 0.5 / 255.0 + 1e-12);
            assert_eq!(b.z, 1.0);
        }
        assert!(write_rgb(&path, &px, 4, 2).is_err());
    }
}
