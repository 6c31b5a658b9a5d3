//! Synthetic whole-sky radiance fields with a sun, for driving the synthetic
//! camera and the end-to-end checks.

use crate::error::Result;
use crate::glare::RegionOfInterest;
use crate::types::{RadianceMap, CHANNELS};

/// A sky dome whose radiance falls off log-linearly from the zenith (image
/// center) to the corners, plus a flat sun disk with a power-law glow.
#[derive(Clone, Debug, PartialEq)]
pub struct SkyScene {
    pub width: usize,
    pub height: usize,
    /// Sun center as a fraction of width and height.
    pub sun_center: (f64, f64),
    /// Sun disk radius as a fraction of the shorter image side.
    pub sun_radius: f64,
    pub sun_radiance: f64,
    /// Sky radiance at the image corners.
    pub horizon_radiance: f64,
    /// Zenith-to-corner sky radiance ratio.
    pub zenith_ratio: f64,
    pub glow_exponent: f64,
    /// Per-channel sky color multipliers; the sun is white.
    pub sky_tint: [f64; 3],
}

impl SkyScene {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sun_center: (0.65, 0.35),
            sun_radius: 0.03,
            sun_radiance: 1500.0,
            horizon_radiance: 0.5,
            zenith_ratio: 40.0,
            glow_exponent: 2.0,
            sky_tint: [0.8, 0.95, 1.2],
        }
    }

    pub fn sun_pixel(&self) -> (f64, f64) {
        (self.sun_center.0 * self.width as f64, self.sun_center.1 * self.height as f64)
    }

    fn sun_radius_px(&self) -> f64 {
        (self.sun_radius * self.width.min(self.height) as f64).max(0.5)
    }

    pub fn radiance(&self, x: usize, y: usize) -> [f64; 3] {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let d = ((px - cx).hypot(py - cy) / cx.hypot(cy)).min(1.0);
        let sky = self.horizon_radiance * self.zenith_ratio.powf(1.0 - d);

        let (sx, sy) = self.sun_pixel();
        let r0 = self.sun_radius_px();
        let r = (px - sx).hypot(py - sy).max(r0);
        let glow = self.sun_radiance * (r0 / r).powf(self.glow_exponent);

        std::array::from_fn(|c| sky * self.sky_tint[c] + glow)
    }

    pub fn render(&self) -> Result<RadianceMap> {
        RadianceMap::from_radiance_fn(self.width, self.height, |x, y| self.radiance(x, y))
    }

    /// Square region centered on the sun, eight disk radii on a side, clipped
    /// to the image.
    pub fn circumsolar_roi(&self) -> RegionOfInterest {
        let (sx, sy) = self.sun_pixel();
        let half = (4.0 * self.sun_radius_px()).ceil().max(2.0);
        let x0 = (sx - half).floor().max(0.0) as usize;
        let y0 = (sy - half).floor().max(0.0) as usize;
        let x1 = ((sx + half).ceil() as usize).min(self.width);
        let y1 = ((sy + half).ceil() as usize).min(self.height);
        RegionOfInterest::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Remaps a map's log radiance affinely so that its valid values span exactly
/// `bits` stops with the maximum at `e_max`. Structure and ordering are kept.
pub fn stretch_to_span(map: &RadianceMap, e_max: f64, bits: f64) -> Result<RadianceMap> {
    let valid: Vec<f64> = map
        .ln_values()
        .chunks_exact(CHANNELS)
        .zip(map.flags())
        .filter(|(_, f)| f.is_valid())
        .flat_map(|(px, _)| px.iter().copied())
        .collect();
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let target_hi = e_max.ln();
    let span = bits * std::f64::consts::LN_2;
    let scale = if hi > lo { span / (hi - lo) } else { 0.0 };
    let ln_e = map.ln_values().iter().map(|v| target_hi - (hi - v) * scale).collect();
    RadianceMap::new(map.width(), map.height(), ln_e, map.flags().to_vec())
}

/// The reference sun scene: sky plus sun with valid radiance spanning exactly
/// 2^15, brightest at 1500 so the shortest bracket exposure does not clip.
pub fn sun_scene(width: usize, height: usize) -> Result<(SkyScene, RadianceMap)> {
    let scene = SkyScene::new(width, height);
    let map = stretch_to_span(&scene.render()?, scene.sun_radiance, 15.0)?;
    Ok((scene, map))
}
