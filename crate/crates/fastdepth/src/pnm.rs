//! RGB input images (binary PPM) and depth maps (16-bit PGM in millimeters,
//! or PFM in meters).

use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use fastdepth_core::{Tensor, TensorShape};
use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder};

use crate::error::{Error, Result};

/// Side length of the network input.
pub const INPUT_SIZE: usize = 224;

/// Largest depth a 16-bit millimeter map can hold, in meters.
pub const MAX_PGM_DEPTH: f32 = 65.535;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFormat {
    /// Binary 16-bit graymap, one millimeter per unit.
    Pgm16,
    /// Little-endian portable float map, meters.
    Pfm,
}

impl FromStr for DepthFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pgm" | "p5" => Ok(Self::Pgm16),
            "pfm" | "pf" => Ok(Self::Pfm),
            _ => Err(format!("unknown depth format `{s}` (expected pgm or pfm)")),
        }
    }
}

impl DepthFormat {
    /// Guess from a file extension, defaulting to PFM.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pgm") => Self::Pgm16,
            _ => Self::Pfm,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_pnm(path: &Path, bytes: &[u8], expect: PnmSubtype, maxval: u32) -> Result<(usize, usize, Vec<u8>)> {
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(|e| Error::format(path, e.to_string()))?;
    let header = decoder.header();
    if decoder.subtype() != expect {
        return Err(Error::format(
            path,
            format!("expected a binary {} file", String::from_utf8_lossy(expect.magic_constant())),
        ));
    }
    if header.maximal_sample() != maxval {
        return Err(Error::format(
            path,
            format!("maxval is {}, expected {maxval}", header.maximal_sample()),
        ));
    }
    let (w, h) = (header.width() as usize, header.height() as usize);
    let mut buf = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((w, h, buf))
}

/// Read a binary PPM (maxval 255) as a `(1, 3, h, w)` tensor in `[0, 1]`.
/// With `resize`, the largest centered square is cropped and scaled to
/// 224×224 by nearest neighbor.
pub fn image_read_rgb(path: &Path, resize: bool) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let (w, h, rgb) = decode_pnm(path, &bytes, PnmSubtype::Pixmap(SampleEncoding::Binary), 255)?;
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f32::from(px[c]) / 255.0;
        }
    }
    let t = Tensor::new(TensorShape::new(1, 3, h, w)?, data)?;
    Ok(if resize { center_crop_resize(&t, INPUT_SIZE) } else { t })
}

/// Crop the largest centered square and resample it to `size × size` with
/// nearest-neighbor sampling at pixel centers.
pub fn center_crop_resize(t: &Tensor, size: usize) -> Tensor {
    let s = t.shape();
    let side = s.h.min(s.w);
    let (y0, x0) = ((s.h - side) / 2, (s.w - side) / 2);
    let src = |d: usize| (2 * d + 1) * side / (2 * size);
    let shape = TensorShape::new(s.n, s.c, size, size).expect("non-empty output");
    let mut out = Vec::with_capacity(shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..size {
                for x in 0..size {
                    out.push(t.get(n, c, y0 + src(y), x0 + src(x)));
                }
            }
        }
    }
    Tensor::new(shape, out).expect("shape matches data")
}

/// Write a `(1, 3, h, w)` tensor as a binary PPM, rounding `[0, 1]` to 0..=255.
pub fn image_write_rgb(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::format(path, format!("expected a (1,3,h,w) tensor, got {s}")));
    }
    let plane = s.plane();
    let mut rgb = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = t.data()[c * plane + i];
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut bytes = Vec::new();
    PnmEncoder::new(&mut bytes)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .encode(rgb.as_slice(), s.w as u32, s.h as u32, ExtendedColorType::Rgb8)?;
    write_file(path, &bytes)
}

/// Meters to millimeters, rounding half up. Returns the value and whether it
/// had to be clamped (negative, non-finite or above 65.535 m).
pub fn meters_to_mm(m: f32) -> (u16, bool) {
    if !m.is_finite() || m < 0.0 {
        return (0, true);
    }
    let mm = (f64::from(m) * 1000.0 + 0.5).floor();
    if mm > f64::from(u16::MAX) {
        (u16::MAX, true)
    } else {
        (mm as u16, false)
    }
}

/// Write a `(1, 1, h, w)` depth map. Returns how many pixels were clamped,
/// which is always 0 for PFM.
pub fn depth_write(t: &Tensor, path: &Path, format: DepthFormat) -> Result<usize> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::format(path, format!("expected a (1,1,h,w) depth tensor, got {s}")));
    }
    match format {
        DepthFormat::Pgm16 => {
            let mut clamped = 0;
            let mm: Vec<u16> = t
                .data()
                .iter()
                .map(|&m| {
                    let (v, c) = meters_to_mm(m);
                    clamped += usize::from(c);
                    v
                })
                .collect();
            // The pnm encoder has no 16-bit path; samples are big-endian as netpbm requires.
            let mut bytes = format!("P5\n{} {}\n65535\n", s.w, s.h).into_bytes();
            bytes.reserve(2 * mm.len());
            for v in mm {
                bytes.extend_from_slice(&v.to_be_bytes());
            }
            write_file(path, &bytes)?;
            Ok(clamped)
        }
        DepthFormat::Pfm => {
            let mut bytes = format!("Pf\n{} {}\n-1.0\n", s.w, s.h).into_bytes();
            bytes.reserve(4 * s.plane());
            for row in t.data().chunks_exact(s.w).rev() {
                for v in row {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            write_file(path, &bytes)?;
            Ok(0)
        }
    }
}

/// Read a depth map written by [`depth_write`] (or any 16-bit P5 / Pf file)
/// as a `(1, 1, h, w)` tensor in meters.
pub fn depth_read(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    if bytes.starts_with(b"Pf") {
        return parse_pfm(&bytes).map_err(|m| Error::format(path, m));
    }
    let (w, h, raw) = decode_pnm(path, &bytes, PnmSubtype::Graymap(SampleEncoding::Binary), 65535)?;
    let data = raw
        .chunks_exact(2)
        .map(|b| f32::from(u16::from_ne_bytes([b[0], b[1]])) / 1000.0)
        .collect();
    Ok(Tensor::new(TensorShape::new(1, 1, h, w)?, data)?)
}

fn parse_pfm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    // Three whitespace-terminated header tokens after the magic.
    let mut pos = 2;
    let mut tokens = Vec::new();
    while tokens.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "PFM header is not ASCII")?);
    }
    if pos >= bytes.len() {
        return Err("PFM header has no terminating whitespace".into());
    }
    pos += 1;
    let w: usize = tokens[0].parse().map_err(|_| format!("bad PFM width `{}`", tokens[0]))?;
    let h: usize = tokens[1].parse().map_err(|_| format!("bad PFM height `{}`", tokens[1]))?;
    let scale: f32 = tokens[2].parse().map_err(|_| format!("bad PFM scale `{}`", tokens[2]))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format!("bad PFM scale `{}`", tokens[2]));
    }
    let shape = TensorShape::new(1, 1, h, w).map_err(|e| e.to_string())?;
    let payload = &bytes[pos..];
    if payload.len() != 4 * shape.numel() {
        return Err(format!(
            "PFM payload has {} bytes, expected {} for {w}×{h}",
            payload.len(),
            4 * shape.numel()
        ));
    }
    let word = |b: &[u8]| -> f32 {
        let b: [u8; 4] = b.try_into().unwrap();
        if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
    };
    let mut data = Vec::with_capacity(shape.numel());
    for row in payload.chunks_exact(4 * w).rev() {
        data.extend(row.chunks_exact(4).map(word));
    }
    Tensor::new(shape, data).map_err(|e| e.to_string())
}
