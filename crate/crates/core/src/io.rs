//! Image, depth and mask files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};

fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Loads any supported image as 3-channel `f32` in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Image::from_vec(w as usize, h as usize, 3, rgb.into_raw())
}

/// Writes a 1- or 3-channel image as a 16-bit PNG, clamping to `[0, 1]`.
pub fn write_png16(image: &Image, path: &Path) -> Result<()> {
    let (w, h, c) = image.dims();
    let data: Vec<u16> = image.data().iter().map(|&v| to_u16(v)).collect();
    let dynamic = match c {
        1 => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data).expect("buffer size"),
        ),
        3 => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, data).expect("buffer size"),
        ),
        _ => {
            return Err(Error::Config(format!("cannot write a {c}-channel image as PNG")));
        }
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a boolean mask as an 8-bit PNG (255 = set).
pub fn write_mask_png(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, data)
        .ok_or_else(|| Error::Config("mask length does not match dimensions".into()))?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// 16-bit grayscale preview of a depth map, stretched to its value range.
pub fn write_depth_preview(depth: &DepthMap, path: &Path) -> Result<()> {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let preview = depth.map(|v| ((v - lo) / span) as f32);
    write_png16(&preview, path)
}

/// Writes a single-channel little-endian PFM. Values are stored as `f32`.
pub fn write_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    let (w, h, c) = depth.dims();
    if c != 1 {
        return Err(Error::Config("PFM output expects a single channel".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut bytes = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    bytes.reserve(w * h * 4);
    // PFM rows run bottom to top
    for y in (0..h).rev() {
        for x in 0..w {
            bytes.extend_from_slice(&(depth.get(x, y, 0) as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bad = |message: &str| Error::Format {
        format: "PFM",
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = Vec::new();
    while header.len() < 3 {
        let mut line = String::new();
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(bad("truncated header"));
        }
        let line = line.trim();
        if !line.is_empty() {
            header.push(line.to_string());
        }
    }
    if header[0] != "Pf" {
        return Err(bad("only single-channel Pf files are supported"));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad dimensions")))
        .collect::<Result<_>>()?;
    let [w, h] = dims[..] else {
        return Err(bad("bad dimensions"));
    };
    let scale: f64 = header[2].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != w * h * 4 {
        return Err(bad("body length does not match dimensions"));
    }
    let mut depth = DepthMap::new(w, h, 1);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (x, y) = (i % w, h - 1 - i / w);
        depth.set(x, y, 0, v as f64);
    }
    Ok(depth)
}
