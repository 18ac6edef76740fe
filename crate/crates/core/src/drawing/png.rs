//! PNG encoding of drawings (canonical RGB) and canvases (8-bit gray).

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::{
    condition_from_name, Canvas, Class, SemanticDrawing, CANVAS_BACKGROUND, CANVAS_INFILL,
    CANVAS_SHEAR,
};
use crate::error::{Error, Result};

/// How non-canonical colors are treated on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnapMode {
    /// Any other color is an error.
    #[default]
    Strict,
    /// Snap to the nearest canonical color.
    Lenient,
}

/// Gray levels of canvas PNGs.
const GRAY_BACKGROUND: u8 = 0;
const GRAY_INFILL: u8 = 152;
const GRAY_SHEAR: u8 = 255;

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    Ok(image::load_from_memory_with_format(
        bytes,
        ImageFormat::Png,
    )?)
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_drawing_png(bytes: &[u8], mode: SnapMode) -> Result<SemanticDrawing> {
    let img = decode(bytes)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut classes = Vec::with_capacity((w * h) as usize);
    for (x, y, p) in img.enumerate_pixels() {
        let class = match (Class::from_rgb(p.0), mode) {
            (Some(c), _) => c,
            (None, SnapMode::Lenient) => Class::nearest(p.0),
            (None, SnapMode::Strict) => {
                return Err(Error::Data(format!(
                    "unknown color ({}, {}, {}) at pixel ({x}, {y})",
                    p.0[0], p.0[1], p.0[2]
                )))
            }
        };
        classes.push(class);
    }
    SemanticDrawing::new(w as usize, h as usize, classes)
}

/// Decodes a drawing and reads the condition from `origin_id`.
pub fn load_drawing(bytes: &[u8], origin_id: &str, mode: SnapMode) -> Result<SemanticDrawing> {
    let d = decode_drawing_png(bytes, mode)?;
    Ok(d.with_condition(condition_from_name(origin_id)?)
        .with_origin(origin_id))
}

pub fn encode_drawing_png(d: &SemanticDrawing) -> Result<Vec<u8>> {
    let mut img = RgbImage::new(d.width() as u32, d.height() as u32);
    for (p, c) in img.pixels_mut().zip(d.classes()) {
        p.0 = c.rgb();
    }
    encode(DynamicImage::ImageRgb8(img))
}

/// True when the PNG is stored as single-channel gray, the canvas encoding.
pub fn is_canvas_png(bytes: &[u8]) -> Result<bool> {
    Ok(matches!(decode(bytes)?, DynamicImage::ImageLuma8(_)))
}

pub fn encode_canvas_png(c: &Canvas) -> Result<Vec<u8>> {
    let mut img = GrayImage::new(c.width() as u32, c.height() as u32);
    for (p, &v) in img.pixels_mut().zip(c.values()) {
        p.0 = [if v == CANVAS_SHEAR {
            GRAY_SHEAR
        } else if v == CANVAS_INFILL {
            GRAY_INFILL
        } else {
            GRAY_BACKGROUND
        }];
    }
    encode(DynamicImage::ImageLuma8(img))
}

pub fn decode_canvas_png(bytes: &[u8]) -> Result<Canvas> {
    let img = decode(bytes)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut values = Vec::with_capacity((w * h) as usize);
    for (x, y, p) in img.enumerate_pixels() {
        values.push(match p.0[0] {
            GRAY_BACKGROUND => CANVAS_BACKGROUND,
            GRAY_INFILL => CANVAS_INFILL,
            GRAY_SHEAR => CANVAS_SHEAR,
            g => {
                return Err(Error::Data(format!(
                    "canvas gray level {g} at pixel ({x}, {y}) is not 0, 152 or 255"
                )))
            }
        });
    }
    Canvas::new(w as usize, h as usize, values)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    Ok(std::fs::read(path)?)
}

/// Loads a drawing; the file stem supplies `origin_id` and the condition.
pub fn read_drawing(path: &Path, mode: SnapMode) -> Result<SemanticDrawing> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_drawing(&read_bytes(path)?, &stem, mode)
}

pub fn write_drawing(path: &Path, d: &SemanticDrawing) -> Result<()> {
    Ok(std::fs::write(path, encode_drawing_png(d)?)?)
}

pub fn read_canvas(path: &Path) -> Result<Canvas> {
    decode_canvas_png(&read_bytes(path)?)
}

pub fn write_canvas(path: &Path, c: &Canvas) -> Result<()> {
    Ok(std::fs::write(path, encode_canvas_png(c)?)?)
}
