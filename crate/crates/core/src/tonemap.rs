//! Histogram-equalization tone mapping of radiance maps.
//!
//! Both operators work on log luminance `L = (ln E_R + ln E_G + ln E_B) / 3`
//! of valid pixels, quantized into 256 bins spanning the map's `[L_min, L_max]`.
//! A bin maps to the output level `round(255 * cdf(bin) / total)`. Color is
//! reattached by scaling the equalized level by `E_c / exp(L)`. Invalid pixels
//! render black.

use crate::error::{Error, Result};
use crate::types::{RadianceMap, RasterImage8, CHANNELS};

pub const BINS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TonemapConfig {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per-bin clip limit as a fraction of the tile's pixel count. Values of
    /// 1 or more disable clipping.
    pub clip_limit: f64,
}

impl Default for TonemapConfig {
    fn default() -> Self {
        Self { tiles_x: 8, tiles_y: 8, clip_limit: 0.01 }
    }
}

impl TonemapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::invalid(format!("tile grid must be at least 1x1, got {}x{}", self.tiles_x, self.tiles_y)));
        }
        if !(self.clip_limit > 0.0) {
            return Err(Error::invalid(format!("clip limit must be positive, got {}", self.clip_limit)));
        }
        Ok(())
    }
}

/// Log luminance of every pixel and its histogram bin (`None` for invalid
/// pixels).
struct Luminance {
    log_lum: Vec<f64>,
    bins: Vec<Option<u8>>,
    /// All valid pixels share one luminance.
    flat: bool,
}

fn luminance(map: &RadianceMap) -> Result<Luminance> {
    if map.valid_count() == 0 {
        return Err(Error::NoValidPixels);
    }
    let log_lum: Vec<f64> = map
        .ln_values()
        .chunks_exact(CHANNELS)
        .map(|px| (px[0] + px[1] + px[2]) / 3.0)
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (l, f) in log_lum.iter().zip(map.flags()) {
        if f.is_valid() {
            lo = lo.min(*l);
            hi = hi.max(*l);
        }
    }
    let bins = log_lum
        .iter()
        .zip(map.flags())
        .map(|(l, f)| f.is_valid().then(|| luminance_bin(*l, lo, hi)))
        .collect();
    Ok(Luminance { log_lum, bins, flat: hi <= lo })
}

/// `floor((L - lo) / (hi - lo) * 256)`, clamped to the last bin.
pub fn luminance_bin(l: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    let b = ((l - lo) / (hi - lo) * BINS as f64).floor();
    b.clamp(0.0, (BINS - 1) as f64) as u8
}

/// Equalization lookup from a histogram: `round(255 * cdf / total)`.
fn cdf_lut(hist: &[u64; BINS]) -> [u8; BINS] {
    let total: u64 = hist.iter().sum();
    let mut lut = [0u8; BINS];
    if total == 0 {
        for (b, v) in lut.iter_mut().enumerate() {
            *v = b as u8;
        }
        return lut;
    }
    let mut cdf = 0u64;
    for (v, h) in lut.iter_mut().zip(hist) {
        cdf += h;
        *v = ((255 * cdf + total / 2) / total) as u8;
    }
    lut
}

/// Clips every bin to `limit` and spreads the excess evenly, the remainder
/// one count at a time at a regular stride.
fn clip_histogram(hist: &mut [u64; BINS], limit: u64) {
    let mut excess = 0u64;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let each = excess / BINS as u64;
    let mut residual = excess % BINS as u64;
    for h in hist.iter_mut() {
        *h += each;
    }
    if residual > 0 {
        let step = (BINS as u64 / residual).max(1) as usize;
        for h in hist.iter_mut().step_by(step) {
            if residual == 0 {
                break;
            }
            *h += 1;
            residual -= 1;
        }
    }
}

/// Clip count for a tile of `n` pixels, or `None` when clipping is disabled.
fn clip_count(clip_limit: f64, n: u64) -> Option<u64> {
    if clip_limit >= 1.0 {
        return None;
    }
    Some(((clip_limit * n as f64).floor() as u64).max(1))
}

fn colorize(map: &RadianceMap, lum: &Luminance, mut level: impl FnMut(usize, usize, u8) -> u8) -> Result<RasterImage8> {
    let (w, h) = (map.width(), map.height());
    let mut data = vec![0u8; w * h * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some(bin) = lum.bins[i] else { continue };
            let v = f64::from(level(x, y, bin));
            for c in 0..CHANNELS {
                let ratio = (map.ln_e(x, y, c) - lum.log_lum[i]).exp();
                data[i * CHANNELS + c] = (v * ratio).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RasterImage8::new(w, h, data)
}

/// Global histogram equalization of log luminance.
pub fn equalize_global(map: &RadianceMap) -> Result<RasterImage8> {
    let lum = luminance(map)?;
    let mut hist = [0u64; BINS];
    for b in lum.bins.iter().flatten() {
        hist[*b as usize] += 1;
    }
    let lut = cdf_lut(&hist);
    colorize(map, &lum, |_, _, bin| lut[bin as usize])
}

/// Tile boundaries `k * len / tiles` for `k = 0..=tiles`.
fn tile_edges(len: usize, tiles: usize) -> Vec<usize> {
    (0..=tiles).map(|k| k * len / tiles).collect()
}

/// Interpolation partners and integer weights along one axis for the pixel
/// at `pos`. Tile centers and the pixel center are compared in doubled
/// coordinates so the weights stay exact.
fn axis_weights(pos: usize, edges: &[usize]) -> (usize, usize, u64, u64, u64) {
    let tiles = edges.len() - 1;
    let center = |k: usize| (edges[k] + edges[k + 1]) as u64;
    let p = 2 * pos as u64 + 1;
    if p <= center(0) {
        return (0, 0, 1, 0, 1);
    }
    if p >= center(tiles - 1) {
        return (tiles - 1, tiles - 1, 1, 0, 1);
    }
    let k = (0..tiles - 1).find(|&k| p < center(k + 1)).expect("pixel lies between two tile centers");
    let (c0, c1) = (center(k), center(k + 1));
    (k, k + 1, c1 - p, p - c0, c1 - c0)
}

/// Contrast-limited adaptive equalization: per-tile clipped histograms
/// equalized independently and blended bilinearly between tile centers.
pub fn equalize_adaptive(map: &RadianceMap, config: &TonemapConfig) -> Result<RasterImage8> {
    config.validate()?;
    let (w, h) = (map.width(), map.height());
    if w < config.tiles_x || h < config.tiles_y {
        return Err(Error::invalid(format!(
            "{w}x{h} image is smaller than the {}x{} tile grid",
            config.tiles_x, config.tiles_y
        )));
    }
    let lum = luminance(map)?;
    if lum.flat {
        // Clipping would give each tile a level depending on its size.
        return equalize_global(map);
    }
    let xs = tile_edges(w, config.tiles_x);
    let ys = tile_edges(h, config.tiles_y);

    let mut luts = vec![[0u8; BINS]; config.tiles_x * config.tiles_y];
    for ty in 0..config.tiles_y {
        for tx in 0..config.tiles_x {
            let mut hist = [0u64; BINS];
            for y in ys[ty]..ys[ty + 1] {
                for b in lum.bins[y * w + xs[tx]..y * w + xs[tx + 1]].iter().flatten() {
                    hist[*b as usize] += 1;
                }
            }
            let n: u64 = hist.iter().sum();
            if let Some(limit) = clip_count(config.clip_limit, n) {
                clip_histogram(&mut hist, limit);
            }
            luts[ty * config.tiles_x + tx] = cdf_lut(&hist);
        }
    }

    let col_weights: Vec<_> = (0..w).map(|x| axis_weights(x, &xs)).collect();
    let row_weights: Vec<_> = (0..h).map(|y| axis_weights(y, &ys)).collect();
    colorize(map, &lum, |x, y, bin| {
        let (x0, x1, wx0, wx1, dx) = col_weights[x];
        let (y0, y1, wy0, wy1, dy) = row_weights[y];
        let at = |tx: usize, ty: usize| u64::from(luts[ty * config.tiles_x + tx][bin as usize]);
        let num = wy0 * (wx0 * at(x0, y0) + wx1 * at(x1, y0)) + wy1 * (wx0 * at(x0, y1) + wx1 * at(x1, y1));
        let den = dx * dy;
        ((num + den / 2) / den) as u8
    })
}
