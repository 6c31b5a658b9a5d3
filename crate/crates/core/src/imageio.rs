//! Readers and writers for binary PPM (P6), PGM (P5), little-endian PFM and
//! 8-bit RGB PNG.
//!
//! PNM and PFM headers are parsed by hand; PNG goes through the `png` crate.
//! Every decoder works on an in-memory byte slice and reports failures as
//! [`Error::Malformed`] or [`Error::Unsupported`].

use std::io::Cursor;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{GrayImage8, PixelFlag, RadianceMap, RasterImage8, CHANNELS};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Mask byte values for radiance map validity.
pub const MASK_VALID: u8 = 255;
pub const MASK_OVER: u8 = 128;
pub const MASK_UNDER: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFileFormat {
    Ppm,
    Pgm,
    Pfm,
    Png,
}

impl ImageFileFormat {
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        match bytes {
            [b'P', b'6', ..] => Some(Self::Ppm),
            [b'P', b'5', ..] => Some(Self::Pgm),
            [b'P', b'F', ..] => Some(Self::Pfm),
            _ if bytes.starts_with(PNG_SIGNATURE) => Some(Self::Png),
            _ => None,
        }
    }
}

/// Non-fatal conditions met while loading a radiance map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LoadWarning {
    /// No validity mask next to the map; every pixel was treated as valid.
    MissingMask(PathBuf),
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Self { bytes, pos: 0, format }
    }

    fn magic(&mut self) -> Result<&'a [u8]> {
        if self.bytes.len() < 2 {
            return Err(Error::malformed(self.format, "file shorter than its magic number"));
        }
        self.pos = 2;
        Ok(&self.bytes[..2])
    }

    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::malformed(self.format, "header ends early"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::malformed(self.format, "non-ASCII header token"))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        if !tok.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::malformed(self.format, format!("{what} {tok:?} is not a decimal integer")));
        }
        tok.parse().map_err(|_| Error::malformed(self.format, format!("{what} {tok:?} is out of range")))
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end_header(&mut self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(Error::malformed(self.format, "header not terminated by whitespace")),
        }
    }
}

fn payload_len(format: &'static str, w: usize, h: usize, bytes_per_pixel: usize) -> Result<usize> {
    if w == 0 || h == 0 {
        return Err(Error::malformed(format, format!("degenerate dimensions {w}x{h}")));
    }
    w.checked_mul(h)
        .and_then(|n| n.checked_mul(bytes_per_pixel))
        .ok_or_else(|| Error::malformed(format, format!("dimensions {w}x{h} overflow")))
}

struct Pnm<'a> {
    format: ImageFileFormat,
    width: usize,
    height: usize,
    payload: &'a [u8],
}

fn decode_pnm(bytes: &[u8]) -> Result<Pnm<'_>> {
    let mut cur = HeaderCursor::new(bytes, "PNM");
    let (format, channels) = match cur.magic()? {
        b"P6" => (ImageFileFormat::Ppm, 3),
        b"P5" => (ImageFileFormat::Pgm, 1),
        other => {
            return Err(Error::malformed("PNM", format!("unknown magic {:?}", String::from_utf8_lossy(other))));
        }
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    let need = payload_len("PNM", width, height, channels)?;
    if maxval != 255 {
        return Err(Error::Unsupported { format: "PNM", reason: format!("maxval {maxval}, only 255 is supported") });
    }
    let rest = cur.end_header()?;
    if rest.len() < need {
        return Err(Error::malformed("PNM", format!("payload truncated: need {need} bytes, have {}", rest.len())));
    }
    Ok(Pnm { format, width, height, payload: &rest[..need] })
}

pub fn encode_ppm(img: &RasterImage8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn encode_pgm(img: &GrayImage8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Decodes a P6 image, or a P5 image expanded to equal RGB channels.
pub fn decode_ppm(bytes: &[u8]) -> Result<RasterImage8> {
    let pnm = decode_pnm(bytes)?;
    match pnm.format {
        ImageFileFormat::Pgm => {
            RasterImage8::new(pnm.width, pnm.height, pnm.payload.iter().flat_map(|&v| [v; 3]).collect())
        }
        _ => RasterImage8::new(pnm.width, pnm.height, pnm.payload.to_vec()),
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage8> {
    let pnm = decode_pnm(bytes)?;
    if pnm.format != ImageFileFormat::Pgm {
        return Err(Error::malformed("PGM", "expected P5 magic"));
    }
    GrayImage8::new(pnm.width, pnm.height, pnm.payload.to_vec())
}

pub fn encode_png(img: &RasterImage8) -> Result<Vec<u8>> {
    let to_err = |e: png::EncodingError| Error::Unsupported { format: "PNG", reason: e.to_string() };
    let (w, h) = (
        u32::try_from(img.width()).map_err(|_| Error::invalid("image too wide for PNG"))?,
        u32::try_from(img.height()).map_err(|_| Error::invalid("image too tall for PNG"))?,
    );
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(to_err)?;
        writer.write_image_data(img.data()).map_err(to_err)?;
        writer.finish().map_err(to_err)?;
    }
    Ok(out)
}

/// Decodes 8-bit RGB truecolor PNG; every other layout is rejected.
pub fn decode_png(bytes: &[u8]) -> Result<RasterImage8> {
    let to_err = |e: png::DecodingError| Error::malformed("PNG", e.to_string());
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(to_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Unsupported {
            format: "PNG",
            reason: format!("{:?} at {:?}, only 8-bit RGB is supported", info.color_type, info.bit_depth),
        });
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::malformed("PNG", "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(to_err)?;
    buf.truncate(frame.buffer_size());
    RasterImage8::new(frame.width as usize, frame.height as usize, buf)
}

/// PFM bytes for the map: `PF`, dimensions, scale `-1.0`, then little-endian
/// `f32` radiance rows from bottom to top. Radiance is written linear.
pub fn encode_pfm(map: &RadianceMap) -> Result<Vec<u8>> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * CHANNELS * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..CHANNELS {
                let v = map.radiance(x, y, c) as f32;
                if !v.is_finite() {
                    return Err(Error::Unsupported {
                        format: "PFM",
                        reason: format!("radiance at ({x}, {y}) overflows 32-bit float"),
                    });
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Raw PFM contents, top row first.
pub struct PfmData {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmData> {
    let mut cur = HeaderCursor::new(bytes, "PFM");
    match cur.magic()? {
        b"PF" => {}
        b"Pf" => return Err(Error::Unsupported { format: "PFM", reason: "grayscale Pf maps".into() }),
        other => return Err(Error::malformed("PFM", format!("unknown magic {:?}", String::from_utf8_lossy(other)))),
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let scale_tok = cur.token()?;
    let scale: f32 = scale_tok
        .parse()
        .map_err(|_| Error::malformed("PFM", format!("scale {scale_tok:?} is not a number")))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(Error::malformed("PFM", format!("scale {scale} must be finite and non-zero")));
    }
    if scale > 0.0 {
        return Err(Error::Unsupported { format: "PFM", reason: "big-endian data (positive scale)".into() });
    }
    let need = payload_len("PFM", width, height, CHANNELS * 4)?;
    let rest = cur.end_header()?;
    if rest.len() < need {
        return Err(Error::malformed("PFM", format!("payload truncated: need {need} bytes, have {}", rest.len())));
    }
    let row_len = width * CHANNELS;
    let mut values = vec![0.0f32; width * height * CHANNELS];
    for (i, chunk) in rest[..need].chunks_exact(4).enumerate() {
        let (row, col) = (i / row_len, i % row_len);
        values[(height - 1 - row) * row_len + col] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(PfmData { width, height, values })
}

fn flag_to_mask(flag: PixelFlag) -> u8 {
    match flag {
        PixelFlag::Valid => MASK_VALID,
        PixelFlag::OverExposed => MASK_OVER,
        PixelFlag::UnderExposed => MASK_UNDER,
    }
}

fn mask_to_flag(v: u8) -> Result<PixelFlag> {
    match v {
        MASK_VALID => Ok(PixelFlag::Valid),
        MASK_OVER => Ok(PixelFlag::OverExposed),
        MASK_UNDER => Ok(PixelFlag::UnderExposed),
        other => Err(Error::malformed("PGM mask", format!("value {other} is not 0, 128 or 255"))),
    }
}

pub fn validity_mask(map: &RadianceMap) -> GrayImage8 {
    GrayImage8::new(map.width(), map.height(), map.flags().iter().map(|f| flag_to_mask(*f)).collect())
        .expect("map dimensions are valid")
}

/// Rebuilds a radiance map from decoded PFM values and an optional mask.
pub fn radiance_from_parts(pfm: PfmData, mask: Option<&GrayImage8>) -> Result<RadianceMap> {
    let n = pfm.width * pfm.height;
    let flags = match mask {
        Some(m) if m.width() != pfm.width || m.height() != pfm.height => {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{} but map is {}x{}",
                m.width(),
                m.height(),
                pfm.width,
                pfm.height
            )));
        }
        Some(m) => m.data().iter().map(|&v| mask_to_flag(v)).collect::<Result<Vec<_>>>()?,
        None => vec![PixelFlag::Valid; n],
    };
    let mut ln_e = Vec::with_capacity(n * CHANNELS);
    for (i, px) in pfm.values.chunks_exact(CHANNELS).enumerate() {
        for &v in px {
            let ok = v.is_finite() && (v > 0.0 || (v == 0.0 && !flags[i].is_valid()));
            if !ok {
                return Err(Error::malformed(
                    "PFM",
                    format!("pixel ({}, {}) has radiance {v}, expected a positive finite value", i % pfm.width, i / pfm.width),
                ));
            }
            ln_e.push(f64::from(v).ln());
        }
    }
    RadianceMap::new(pfm.width, pfm.height, ln_e, flags)
}

/// Sidecar mask path: `map.pfm` -> `map.mask.pgm`.
pub fn mask_path(path: &Path) -> PathBuf {
    path.with_extension("mask.pgm")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a PPM, PGM (expanded to RGB) or PNG file, chosen by content.
pub fn read_ldr(path: impl AsRef<Path>) -> Result<RasterImage8> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    match ImageFileFormat::sniff(&bytes) {
        Some(ImageFileFormat::Png) => decode_png(&bytes),
        Some(ImageFileFormat::Ppm | ImageFileFormat::Pgm) => decode_ppm(&bytes),
        _ => Err(Error::malformed("LDR image", format!("{} is not a PPM, PGM or PNG file", path.display()))),
    }
}

/// Writes PNG for a `.png` extension, binary PPM otherwise.
pub fn write_ldr(img: &RasterImage8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(img)? } else { encode_ppm(img) };
    write_bytes(path, &bytes)
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage8> {
    let path = path.as_ref();
    decode_pgm(&read_bytes(path)?)
}

pub fn write_gray(img: &GrayImage8, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm(img))
}

/// Writes the map as PFM plus its validity mask next to it.
pub fn write_radiance(map: &RadianceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_pfm(map)?)?;
    write_gray(&validity_mask(map), mask_path(path))
}

/// Reads a PFM map and its sidecar mask. A missing mask yields an all-valid
/// map and a [`LoadWarning::MissingMask`].
pub fn read_radiance(path: impl AsRef<Path>) -> Result<(RadianceMap, Vec<LoadWarning>)> {
    let path = path.as_ref();
    let pfm = decode_pfm(&read_bytes(path)?)?;
    let mpath = mask_path(path);
    let mut warnings = Vec::new();
    let mask = if mpath.exists() {
        Some(read_gray(&mpath)?)
    } else {
        log::warn!("no validity mask at {}; treating every pixel as valid", mpath.display());
        warnings.push(LoadWarning::MissingMask(mpath));
        None
    };
    Ok((radiance_from_parts(pfm, mask.as_ref())?, warnings))
}
