//! 8-bit PNG images: RGB renders, grayscale maps and palette-indexed masks.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use super::palette::{label_of, PALETTE};
use crate::error::{Error, Result};

/// Row-major RGB image with channels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        RgbImage::new(width, height, vec![value; 3 * width * height])
    }

    /// Luminance with weights (0.299, 0.587, 0.114).
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect()
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn encode(
    width: usize,
    height: usize,
    color: ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> std::result::Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
    }
    Ok(out)
}

fn write_bytes(path: &Path, bytes: Vec<u8>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_rgb(image: &RgbImage) -> Vec<u8> {
    let bytes: Vec<u8> = image.data.iter().map(|&v| to_u8(v)).collect();
    encode(image.width, image.height, ColorType::Rgb, None, &bytes).expect("in-memory PNG encoding")
}

pub fn write_rgb(path: &Path, image: &RgbImage) -> Result<()> {
    write_bytes(path, encode_rgb(image))
}

/// Writes a single-channel map, scaled so `max` maps to 255.
pub fn write_gray(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
    max: f64,
) -> Result<()> {
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let bytes: Vec<u8> = values.iter().map(|&v| to_u8(v * scale)).collect();
    let png = encode(width, height, ColorType::Grayscale, None, &bytes)
        .map_err(|e| image_err(path, e))?;
    write_bytes(path, png)
}

pub fn encode_mask(width: usize, height: usize, labels: &[u8]) -> Vec<u8> {
    let palette: Vec<u8> = PALETTE.iter().flatten().copied().collect();
    encode(width, height, ColorType::Indexed, Some(palette), labels)
        .expect("in-memory PNG encoding")
}

/// Writes labels 0..=15 as a palette-indexed PNG.
pub fn write_mask(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != width * height || labels.iter().any(|&l| l as usize >= PALETTE.len()) {
        return Err(Error::InvalidArgument(
            "mask labels must be in 0..=15 and fill the image".into(),
        ));
    }
    write_bytes(path, encode_mask(width, height, labels))
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    data: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut data = vec![0; size];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| image_err(path, e))?;
    if info.bit_depth != BitDepth::Eight {
        return Err(image_err(path, "only 8-bit images are supported"));
    }
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        data,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let d = decode(path)?;
    let rgb: Vec<f64> = match d.color {
        ColorType::Rgb => d.data.iter().map(|&b| b as f64 / 255.0).collect(),
        ColorType::Rgba => d
            .data
            .chunks_exact(4)
            .flat_map(|c| [c[0], c[1], c[2]])
            .map(|b| b as f64 / 255.0)
            .collect(),
        ColorType::Grayscale => d
            .data
            .iter()
            .flat_map(|&b| [b; 3])
            .map(|b| b as f64 / 255.0)
            .collect(),
        other => return Err(image_err(path, format!("unsupported color type {other:?}"))),
    };
    Ok(RgbImage::new(d.width, d.height, rgb))
}

/// Reads a mask written by [`write_mask`], or an RGB image in palette colors.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let d = decode(path)?;
    let labels = match d.color {
        ColorType::Indexed | ColorType::Grayscale => d.data,
        ColorType::Rgb => d
            .data
            .chunks_exact(3)
            .map(|c| {
                label_of([c[0], c[1], c[2]])
                    .ok_or_else(|| image_err(path, "color not in mask palette"))
            })
            .collect::<Result<Vec<u8>>>()?,
        other => {
            return Err(image_err(
                path,
                format!("unsupported mask color type {other:?}"),
            ))
        }
    };
    if labels.iter().any(|&l| l as usize >= PALETTE.len()) {
        return Err(image_err(path, "mask label outside 0..=15"));
    }
    Ok((d.width, d.height, labels))
}
