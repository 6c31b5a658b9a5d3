//! Circumsolar saturation metrics and the saturation overlay.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::RasterImage8;

pub const DEFAULT_THRESHOLD: u8 = 250;
pub const PINK: [u8; 3] = [255, 105, 180];
pub const WHITE: [u8; 3] = [255, 255, 255];

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionOfInterest {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl RegionOfInterest {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn full(img: &RasterImage8) -> Self {
        Self::new(0, 0, img.width(), img.height())
    }

    pub fn check(&self, img: &RasterImage8) -> Result<()> {
        let fits = self.width > 0
            && self.height > 0
            && self.x.checked_add(self.width).is_some_and(|r| r <= img.width())
            && self.y.checked_add(self.height).is_some_and(|b| b <= img.height());
        if fits {
            Ok(())
        } else {
            Err(Error::RoiOutOfBounds { roi: self.to_string(), width: img.width(), height: img.height() })
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    /// Whether `(x, y)` lies on the one-pixel outline of the region.
    pub fn on_border(&self, x: usize, y: usize) -> bool {
        self.contains(x, y)
            && (x == self.x || y == self.y || x == self.x + self.width - 1 || y == self.y + self.height - 1)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.height).flat_map(move |y| (self.x..self.x + self.width).map(move |x| (x, y)))
    }
}

impl fmt::Display for RegionOfInterest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.width, self.height)
    }
}

impl FromStr for RegionOfInterest {
    type Err = Error;

    /// Parses `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("region must be x,y,w,h with non-negative integers, got {s:?}")))?;
        match parts[..] {
            [x, y, w, h] => Ok(Self::new(x, y, w, h)),
            _ => Err(Error::invalid(format!("region must have four fields, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlareReport {
    pub saturated_count: usize,
    pub total_count: usize,
    pub saturated_fraction: f64,
}

impl fmt::Display for GlareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "saturated={} total={} fraction={:.6}", self.saturated_count, self.total_count, self.saturated_fraction)
    }
}

fn check_threshold(threshold: u8) -> Result<()> {
    if threshold == 0 {
        return Err(Error::invalid("saturation threshold must be in [1, 255]"));
    }
    Ok(())
}

#[inline]
pub fn is_saturated(rgb: [u8; 3], threshold: u8) -> bool {
    rgb.into_iter().max().unwrap_or(0) >= threshold
}

/// Counts pixels in `roi` whose brightest channel reaches `threshold`.
pub fn saturation_report(img: &RasterImage8, roi: &RegionOfInterest, threshold: u8) -> Result<GlareReport> {
    roi.check(img)?;
    check_threshold(threshold)?;
    let saturated_count = roi.pixels().filter(|&(x, y)| is_saturated(img.pixel(x, y), threshold)).count();
    let total_count = roi.width * roi.height;
    Ok(GlareReport { saturated_count, total_count, saturated_fraction: saturated_count as f64 / total_count as f64 })
}

/// Copy of `img` with saturated pixels inside `roi` painted pink and the
/// region's outermost ring painted white.
pub fn render_overlay(img: &RasterImage8, roi: &RegionOfInterest, threshold: u8) -> Result<RasterImage8> {
    roi.check(img)?;
    check_threshold(threshold)?;
    let mut out = img.clone();
    for (x, y) in roi.pixels() {
        if roi.on_border(x, y) {
            out.set_pixel(x, y, WHITE);
        } else if is_saturated(img.pixel(x, y), threshold) {
            out.set_pixel(x, y, PINK);
        }
    }
    Ok(out)
}
