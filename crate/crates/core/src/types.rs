//! Shared domain types: LDR rasters, exposure stacks, response curves and
//! radiance maps, plus the hat weighting used by both the response solver
//! and fusion.

use crate::error::{Error, Result};

/// Number of color channels carried by every raster and radiance map.
pub const CHANNELS: usize = 3;
/// Number of distinct 8-bit pixel values.
pub const LEVELS: usize = 256;
/// Pixel value whose log exposure is pinned to zero.
pub const PIVOT: usize = 128;

/// Hat weighting over pixel values: rises linearly from 0 at `z = 0` to 127
/// at `z = 127`, then falls back to 0 at `z = 255`.
#[inline]
pub fn weight(z: u8) -> f64 {
    if z <= 127 {
        f64::from(z)
    } else {
        f64::from(255 - z)
    }
}

/// Shutter time for an exposure offset of `ev_offset` stops at fixed aperture.
pub fn shutter_time_for_ev(base_s: f64, ev_offset: f64) -> Result<f64> {
    if !(base_s > 0.0) || !base_s.is_finite() {
        return Err(Error::invalid(format!("base shutter time must be positive, got {base_s}")));
    }
    if !ev_offset.is_finite() {
        return Err(Error::invalid(format!("EV offset must be finite, got {ev_offset}")));
    }
    Ok(base_s * ev_offset.exp2())
}

/// An 8-bit RGB raster stored row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RasterImage8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions must be non-zero, got {width}x{height}")));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(CHANNELS))
            .ok_or_else(|| Error::invalid("image dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * CHANNELS).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }
}

/// Single-channel 8-bit raster, used for validity masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions must be non-zero, got {width}x{height}")));
        }
        if width.checked_mul(height) != Some(data.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} gray image needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// LDR exposures of one scene with their shutter times, shortest first.
#[derive(Clone, Debug)]
pub struct ExposureStack {
    images: Vec<RasterImage8>,
    shutter_times_s: Vec<f64>,
}

impl ExposureStack {
    pub fn new(images: Vec<RasterImage8>, shutter_times_s: Vec<f64>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("exposure stack needs at least one image"));
        }
        if images.len() != shutter_times_s.len() {
            return Err(Error::invalid(format!(
                "{} images but {} shutter times",
                images.len(),
                shutter_times_s.len()
            )));
        }
        let (w, h) = (images[0].width(), images[0].height());
        if let Some(bad) = images.iter().find(|im| im.width() != w || im.height() != h) {
            return Err(Error::DimensionMismatch(format!(
                "stack mixes {w}x{h} and {}x{} images",
                bad.width(),
                bad.height()
            )));
        }
        if let Some(t) = shutter_times_s.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid(format!("shutter times must be positive and finite, got {t}")));
        }
        if shutter_times_s.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::invalid("shutter times must be strictly increasing"));
        }
        Ok(Self { images, shutter_times_s })
    }

    pub fn images(&self) -> &[RasterImage8] {
        &self.images
    }

    pub fn shutter_times_s(&self) -> &[f64] {
        &self.shutter_times_s
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    /// Same images with every shutter time multiplied by `factor`.
    pub fn with_scaled_times(&self, factor: f64) -> Result<Self> {
        Self::new(self.images.clone(), self.shutter_times_s.iter().map(|t| t * factor).collect())
    }
}

/// Per-channel log-exposure lookup `g(z)` for z in 0..=255, with `g(128) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseCurve {
    channels: [[f64; LEVELS]; CHANNELS],
}

impl ResponseCurve {
    /// Builds a curve from raw tables, checking the pivot, finiteness and
    /// monotonicity.
    pub fn new(channels: [[f64; LEVELS]; CHANNELS]) -> Result<Self> {
        for (c, g) in channels.iter().enumerate() {
            if let Some(z) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("channel {c}: g({z}) is not finite")));
            }
            if g[PIVOT] != 0.0 {
                return Err(Error::invalid(format!("channel {c}: g({PIVOT}) = {} but must be 0", g[PIVOT])));
            }
            if let Some(z) = (1..LEVELS).find(|&z| g[z] < g[z - 1]) {
                return Err(Error::invalid(format!("channel {c}: g decreases at z = {z}")));
            }
        }
        Ok(Self { channels })
    }

    /// The log response of an ideal power-law camera `Z = 255 (E dt)^(1/gamma)`,
    /// gauged so that `g(128) = 0`. `g(0)` is extrapolated linearly.
    pub fn power_law(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        let mut g = [0.0; LEVELS];
        for (z, v) in g.iter_mut().enumerate().skip(1) {
            *v = gamma * (z as f64 / PIVOT as f64).ln();
        }
        g[PIVOT] = 0.0;
        g[0] = 2.0 * g[1] - g[2];
        Self::new([g; CHANNELS])
    }

    #[inline]
    pub fn g(&self, channel: usize, z: u8) -> f64 {
        self.channels[channel][z as usize]
    }

    pub fn channel(&self, channel: usize) -> &[f64; LEVELS] {
        &self.channels[channel]
    }

    pub fn channels(&self) -> &[[f64; LEVELS]; CHANNELS] {
        &self.channels
    }
}

/// Exposure status of a radiance map pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelFlag {
    Valid,
    /// Every exposure clipped high in at least one channel.
    OverExposed,
    /// Every exposure clipped low in at least one channel.
    UnderExposed,
}

impl PixelFlag {
    pub fn is_valid(self) -> bool {
        self == PixelFlag::Valid
    }
}

/// Per-pixel, per-channel natural-log relative radiance with a validity flag
/// per pixel. Valid pixels always hold finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceMap {
    width: usize,
    height: usize,
    ln_e: Vec<f64>,
    flags: Vec<PixelFlag>,
}

impl RadianceMap {
    pub fn new(width: usize, height: usize, ln_e: Vec<f64>, flags: Vec<PixelFlag>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("map dimensions must be non-zero, got {width}x{height}")));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::invalid("map dimensions overflow"))?;
        if flags.len() != n || ln_e.len() != n * CHANNELS {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} map needs {n} flags and {} values, got {} and {}",
                n * CHANNELS,
                flags.len(),
                ln_e.len()
            )));
        }
        for (i, flag) in flags.iter().enumerate() {
            let px = &ln_e[i * CHANNELS..(i + 1) * CHANNELS];
            if flag.is_valid() && px.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "valid pixel ({}, {}) has a non-finite radiance",
                    i % width,
                    i / width
                )));
            }
            if px.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::invalid(format!("pixel ({}, {}) has NaN or infinite radiance", i % width, i / width)));
            }
        }
        Ok(Self { width, height, ln_e, flags })
    }

    /// An all-valid map from a linear radiance function.
    pub fn from_radiance_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut ln_e = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                ln_e.extend(f(x, y).iter().map(|e| e.ln()));
            }
        }
        Self::new(width, height, ln_e, vec![PixelFlag::Valid; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ln_values(&self) -> &[f64] {
        &self.ln_e
    }

    pub fn flags(&self) -> &[PixelFlag] {
        &self.flags
    }

    #[inline]
    pub fn ln_e(&self, x: usize, y: usize, c: usize) -> f64 {
        self.ln_e[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn radiance(&self, x: usize, y: usize, c: usize) -> f64 {
        self.ln_e(x, y, c).exp()
    }

    #[inline]
    pub fn flag(&self, x: usize, y: usize) -> PixelFlag {
        self.flags[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.flags.iter().filter(|f| f.is_valid()).count()
    }
}
