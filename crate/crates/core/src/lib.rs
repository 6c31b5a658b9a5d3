//! HDR imaging and station control for ground-based whole-sky imagers.
//!
//! The imaging side plans exposure brackets, recovers the camera response
//! from a bracket, fuses the bracket into a radiance map, tone-maps the map
//! with contrast-limited adaptive equalization and measures circumsolar
//! saturation. The station side runs the hysteresis cooler controller against
//! a first-order thermal plant.

pub mod capture;
pub mod error;
pub mod fusion;
pub mod glare;
pub mod imageio;
pub mod lstsq;
pub mod response;
pub mod scene;
pub mod thermo;
pub mod tonemap;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    shutter_time_for_ev, weight, ExposureStack, GrayImage8, PixelFlag, RadianceMap, RasterImage8, ResponseCurve,
};
