//! Radiance map assembly from an exposure stack and a response curve.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{weight, ExposureStack, PixelFlag, RadianceMap, ResponseCurve, CHANNELS};

/// Fuses the stack into per-pixel log radiance,
/// `ln E = sum_j w(Z_j) (g(Z_j) - ln dt_j) / sum_j w(Z_j)`.
///
/// Where every exposure of a channel is clipped the pixel is flagged. An
/// all-high pixel gets `g(254) - ln dt_min` and [`PixelFlag::OverExposed`];
/// an all-low pixel gets `g(1) - ln dt_max` and [`PixelFlag::UnderExposed`].
pub fn fuse(stack: &ExposureStack, response: &ResponseCurve) -> Result<RadianceMap> {
    fuse_partitioned(stack, response, 16)
}

/// [`fuse`] with rows processed in parallel chunks of `chunk_rows`. Every
/// pixel is summed in exposure order, so the output does not depend on the
/// partition.
pub fn fuse_partitioned(stack: &ExposureStack, response: &ResponseCurve, chunk_rows: usize) -> Result<RadianceMap> {
    if chunk_rows == 0 {
        return Err(Error::invalid("chunk_rows must be positive"));
    }
    let (w, h) = (stack.width(), stack.height());
    let ln_dt: Vec<f64> = stack.shutter_times_s().iter().map(|t| t.ln()).collect();
    let mut ln_e = vec![0.0; w * h * CHANNELS];
    let mut flags = vec![PixelFlag::Valid; w * h];

    ln_e.par_chunks_mut(w * CHANNELS * chunk_rows)
        .zip(flags.par_chunks_mut(w * chunk_rows))
        .enumerate()
        .for_each(|(chunk, (vals, flgs))| {
            let y0 = chunk * chunk_rows;
            for (dy, (row_vals, row_flags)) in vals.chunks_mut(w * CHANNELS).zip(flgs.chunks_mut(w)).enumerate() {
                for x in 0..w {
                    let (px, flag) = fuse_pixel(stack, response, &ln_dt, x, y0 + dy);
                    row_vals[x * CHANNELS..(x + 1) * CHANNELS].copy_from_slice(&px);
                    row_flags[x] = flag;
                }
            }
        });

    RadianceMap::new(w, h, ln_e, flags)
}

fn fuse_pixel(stack: &ExposureStack, response: &ResponseCurve, ln_dt: &[f64], x: usize, y: usize) -> ([f64; 3], PixelFlag) {
    let mut out = [0.0; CHANNELS];
    let mut flag = PixelFlag::Valid;
    let last = ln_dt.len() - 1;
    for (c, slot) in out.iter_mut().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut any_high = false;
        for (im, &ldt) in stack.images().iter().zip(ln_dt) {
            let z = im.value(x, y, c);
            let wz = weight(z);
            num += wz * (response.g(c, z) - ldt);
            den += wz;
            any_high |= z == 255;
        }
        *slot = if den > 0.0 {
            num / den
        } else if any_high {
            flag = PixelFlag::OverExposed;
            response.g(c, 254) - ln_dt[0]
        } else {
            if flag == PixelFlag::Valid {
                flag = PixelFlag::UnderExposed;
            }
            response.g(c, 1) - ln_dt[last]
        };
    }
    (out, flag)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionReport {
    pub valid_pixel_fraction: f64,
    /// `log2(E_max / E_min)` over valid pixels, per channel.
    pub channel_bits: [f64; CHANNELS],
    /// `log2(E_max / E_min)` over every channel of every valid pixel.
    pub dynamic_range_bits: f64,
}

impl fmt::Display for FusionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "valid_fraction={:.6} dynamic_range_bits={:.3} bits_r={:.3} bits_g={:.3} bits_b={:.3}",
            self.valid_pixel_fraction, self.dynamic_range_bits, self.channel_bits[0], self.channel_bits[1], self.channel_bits[2]
        )
    }
}

pub fn fusion_report(map: &RadianceMap) -> Result<FusionReport> {
    let valid = map.valid_count();
    if valid == 0 {
        return Err(Error::NoValidPixels);
    }
    let mut lo = [f64::INFINITY; CHANNELS];
    let mut hi = [f64::NEG_INFINITY; CHANNELS];
    for (px, flag) in map.ln_values().chunks_exact(CHANNELS).zip(map.flags()) {
        if !flag.is_valid() {
            continue;
        }
        for c in 0..CHANNELS {
            lo[c] = lo[c].min(px[c]);
            hi[c] = hi[c].max(px[c]);
        }
    }
    let ln2 = std::f64::consts::LN_2;
    let channel_bits = std::array::from_fn(|c| (hi[c] - lo[c]) / ln2);
    let all_lo = lo.iter().copied().fold(f64::INFINITY, f64::min);
    let all_hi = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FusionReport {
        valid_pixel_fraction: valid as f64 / map.flags().len() as f64,
        channel_bits,
        dynamic_range_bits: (all_hi - all_lo) / ln2,
    })
}
