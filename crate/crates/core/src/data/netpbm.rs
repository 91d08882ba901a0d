//! Binary netpbm: P6 colour frames and P5 grey masks, maxval 255.

use crate::error::{Error, Result};

/// `[0, 1]` → byte, rounding halves up.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f64 {
    f64::from(b) / 255.0
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    /// Row-major, interleaved.
    pub bytes: Vec<u8>,
}

impl Image {
    pub fn from_unit(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        if values.len() != width * height * channels || !matches!(channels, 1 | 3) {
            return Err(Error::Format(format!(
                "{} values do not form a {width}x{height}x{channels} image",
                values.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            bytes: values.iter().map(|&v| quantize(v)).collect(),
        })
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.bytes.iter().map(|&b| dequantize(b)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::Format(format!("unsupported netpbm magic `{other}`"))),
        };
        let width = header_number(bytes, &mut pos, "width")?;
        let height = header_number(bytes, &mut pos, "height")?;
        let maxval = header_number(bytes, &mut pos, "maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!(
                "unsupported maxval {maxval}, only 255 is accepted"
            )));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Format("missing whitespace after maxval".into()));
        }
        pos += 1;
        let len = width * height * channels;
        let raster = bytes.get(pos..pos + len).ok_or_else(|| {
            Error::Format(format!(
                "truncated raster: expected {len} bytes, found {}",
                bytes.len().saturating_sub(pos)
            ))
        })?;
        Ok(Image {
            width,
            height,
            channels,
            bytes: raster.to_vec(),
        })
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::Format("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Format(format!("bad {what} `{tok}` in header"))),
    }
}

/// Encodes an `(h, w, 3)` frame in `[0, 1]` as P6.
pub fn write_ppm(height: usize, width: usize, rgb: &[f64]) -> Result<Vec<u8>> {
    Ok(Image::from_unit(width, height, 3, rgb)?.encode())
}

/// Decodes P6 into `(height, width, values in [0, 1])`.
pub fn read_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let img = Image::decode(bytes)?;
    if img.channels != 3 {
        return Err(Error::Format("expected a P6 frame".into()));
    }
    Ok((img.height, img.width, img.to_unit()))
}

/// Encodes a binary `(h, w)` mask as P5 with values 0 and 255.
pub fn write_pgm(height: usize, width: usize, mask: &[f64]) -> Result<Vec<u8>> {
    Ok(Image::from_unit(width, height, 1, mask)?.encode())
}

/// Decodes P5 into a binary mask; bytes of 128 and above are holes.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let img = Image::decode(bytes)?;
    if img.channels != 1 {
        return Err(Error::Format("expected a P5 mask".into()));
    }
    let mask = img.bytes.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }).collect();
    Ok((img.height, img.width, mask))
}
