//! Float images plus PNG and float-raster file I/O.
//!
//! Float raster layout: an ASCII header
//!
//! ```text
//! FLOATRASTER
//! width <W>
//! height <H>
//! channels <C>
//! min <finite min or nan>
//! max <finite max or nan>
//! end
//! ```
//!
//! followed by `W·H·C` little-endian `f32`, row-major, channels interleaved.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb, Rgba};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, channels: usize, fill: f64) -> Self {
        FloatImage {
            width,
            height,
            channels,
            data: vec![fill; width * height * channels],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &FloatImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn finite_range(&self) -> Option<(f64, f64)> {
        self.data
            .iter()
            .filter(|v| v.is_finite())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// 8-bit RGBA bytes; 1-channel images become gray, alpha is opaque.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixel_count() * 4);
        for px in self.data.chunks(self.channels) {
            let rgb = match self.channels {
                1 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            };
            out.extend(rgb.map(to_u8));
            out.push(255);
        }
        out
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_float_raster(img: &FloatImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (lo, hi) = img.finite_range().unwrap_or((f64::NAN, f64::NAN));
    let mut out = format!(
        "FLOATRASTER\nwidth {}\nheight {}\nchannels {}\nmin {}\nmax {}\nend\n",
        img.width, img.height, img.channels, lo as f32, hi as f32
    )
    .into_bytes();
    out.reserve(img.data.len() * 4);
    for v in &img.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_float_raster(path: impl AsRef<Path>) -> Result<FloatImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let what = path.display().to_string();
    let mut rest = &bytes[..];
    let next_line = |rest: &mut &[u8]| -> Result<String> {
        let i = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(&what, "truncated header"))?;
        let line = String::from_utf8_lossy(&rest[..i]).into_owned();
        *rest = &rest[i + 1..];
        Ok(line)
    };
    if next_line(&mut rest)? != "FLOATRASTER" {
        return Err(Error::parse(&what, "not a float raster"));
    }
    let (mut w, mut h, mut c) = (None, None, None);
    loop {
        let line = next_line(&mut rest)?;
        if line == "end" {
            break;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        let val = parts.next().unwrap_or("");
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| Error::parse(&what, e));
        match key {
            "width" => w = Some(parse_usize(val)?),
            "height" => h = Some(parse_usize(val)?),
            "channels" => c = Some(parse_usize(val)?),
            _ => {}
        }
    }
    let (Some(w), Some(h), Some(c)) = (w, h, c) else {
        return Err(Error::parse(&what, "header lacks width/height/channels"));
    };
    let n = w * h * c;
    if rest.len() != n * 4 {
        return Err(Error::parse(
            &what,
            format!("payload has {} bytes, expected {}", rest.len(), n * 4),
        ));
    }
    let data = rest
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(FloatImage {
        width: w,
        height: h,
        channels: c,
        data,
    })
}

/// Writes an RGB (or gray) image as 8-bit PNG, clamping to `[0, 1]`.
pub fn save_png(img: &FloatImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_png(img: &FloatImage) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    match img.channels {
        1 => {
            let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(
                img.width as u32,
                img.height as u32,
                img.data.iter().map(|&v| to_u8(v)).collect::<Vec<_>>(),
            )
            .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
            buf.write_to(&mut cursor, ImageFormat::Png)
        }
        3 => {
            let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(
                img.width as u32,
                img.height as u32,
                img.data.iter().map(|&v| to_u8(v)).collect::<Vec<_>>(),
            )
            .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
            buf.write_to(&mut cursor, ImageFormat::Png)
        }
        c => return Err(Error::invalid(format!("cannot write a {c}-channel PNG"))),
    }
    .map_err(|e| Error::Numerical(format!("png encode: {e}")))?;
    Ok(cursor.into_inner())
}

pub fn encode_png_rgba(width: u32, height: u32, rgba: Vec<u8>) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Rgba<u8>, _> = ImageBuffer::from_raw(width, height, rgba)
        .ok_or_else(|| Error::invalid("rgba buffer size mismatch"))?;
    let mut cursor = Cursor::new(Vec::new());
    buf.write_to(&mut cursor, ImageFormat::Png)
        .map_err(|e| Error::Numerical(format!("png encode: {e}")))?;
    Ok(cursor.into_inner())
}

/// Loads any PNG as RGB in `[0, 1]`.
pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<FloatImage> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?
        .to_rgb8();
    Ok(FloatImage {
        width: img.width() as usize,
        height: img.height() as usize,
        channels: 3,
        data: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// Loads a mask PNG; any nonzero gray value is "inside".
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?
        .to_luma8();
    Ok(Mask {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.as_raw().iter().map(|&b| b != 0).collect(),
    })
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    save_png(&mask.to_image(), path)
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_image(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Square-element dilation with the given radius in pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let mut horiz = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                horiz[y * w + x] = (lo..=hi).any(|xx| self.data[y * w + xx]);
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                out[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
            }
        }
        Mask {
            width: w,
            height: h,
            data: out,
        }
    }
}
