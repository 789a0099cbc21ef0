//! Binary frame messages.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GSFR"
//!      4     4  frame id (u32)
//!      8     4  width (u32)
//!     12     4  height (u32)
//!     16     4  format tag (u32): 0 raw RGBA8, 1 PNG
//!     20     4  payload length in bytes (u32)
//!     24     …  payload
//! ```
//!
//! All integers little-endian. Raw payloads are row-major RGBA8 with
//! alpha 255 (the background is already composited).

use headsplat_core::config::FrameFormat;
use headsplat_core::imageio::{encode_png, FloatImage};
use headsplat_core::{Error, Result};

pub const FRAME_MAGIC: [u8; 4] = *b"GSFR";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub frame_id: u32,
    pub width: u32,
    pub height: u32,
    pub format: FrameFormat,
    pub payload_len: u32,
}

impl FrameHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&FRAME_MAGIC);
        for (k, v) in [self.frame_id, self.width, self.height, self.format.tag(), self.payload_len]
            .into_iter()
            .enumerate()
        {
            b[4 + 4 * k..8 + 4 * k].copy_from_slice(&v.to_le_bytes());
        }
        b
    }
}

/// Encodes an RGB float image as a frame message.
pub fn encode_frame(color: &FloatImage, frame_id: u32, format: FrameFormat) -> Result<Vec<u8>> {
    if color.width == 0 || color.height == 0 {
        return Err(Error::invalid("cannot encode an empty frame"));
    }
    if color.channels != 3 {
        return Err(Error::invalid(format!("frames are RGB, got {} channels", color.channels)));
    }
    let payload = match format {
        FrameFormat::Raw => color.to_rgba8(),
        FrameFormat::Png => encode_png(color)?,
    };
    let header = FrameHeader {
        frame_id,
        width: color.width as u32,
        height: color.height as u32,
        format,
        payload_len: payload.len() as u32,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a frame message into header and payload.
pub fn decode_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse("frame", format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if bytes[0..4] != FRAME_MAGIC {
        return Err(Error::parse("frame", "bad magic"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let header = FrameHeader {
        frame_id: word(0),
        width: word(1),
        height: word(2),
        format: FrameFormat::from_tag(word(3))?,
        payload_len: word(4),
    };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_len as usize {
        return Err(Error::parse(
            "frame",
            format!("payload is {} bytes, header says {}", payload.len(), header.payload_len),
        ));
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_two_by_two_bytes() {
        let mut img = FloatImage::new(2, 2, 3, 0.0);
        img.data = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 2.0, -1.0];
        let bytes = encode_frame(&img, 7, FrameFormat::Raw).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"GSFR");
        for v in [7u32, 2, 2, 0, 16] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        // 0.5 → round(127.5) = 128; out-of-range values clamp
        expected.extend_from_slice(&[255, 0, 0, 255, 0, 255, 0, 255, 0, 0, 255, 255, 128, 255, 0, 255]);
        assert_eq!(bytes, expected);
        let (h, p) = decode_frame(&bytes).unwrap();
        assert_eq!(h.frame_id, 7);
        assert_eq!(p.len(), 16);
    }

    #[test]
    fn empty_and_malformed() {
        assert!(encode_frame(&FloatImage::new(0, 3, 3, 0.0), 1, FrameFormat::Raw).is_err());
        assert!(encode_frame(&FloatImage::new(2, 2, 1, 0.0), 1, FrameFormat::Raw).is_err());
        let mut b = encode_frame(&FloatImage::new(2, 2, 3, 0.2), 1, FrameFormat::Raw).unwrap();
        b[16] = 9;
        assert!(decode_frame(&b).is_err());
        assert!(decode_frame(&b[..10]).is_err());
    }
}
