//! Hysteresis cooler control and a lumped first-order enclosure model.
//!
//! The enclosure temperature follows
//! `dT/dt = k_env (T_ambient(t) - T) + q_solar * solar(t) - q_cool * u(t)`,
//! integrated with forward Euler. `u` comes from the two-threshold
//! controller, evaluated once per step.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const DAY_S: f64 = 86_400.0;
const SUNRISE_S: f64 = 6.0 * 3600.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub t_on: f64,
    pub t_off: f64,
    /// Rated maximum for the electronics.
    pub t_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { t_on: 37.0, t_off: 32.0, t_max: 40.0 }
    }
}

impl Thresholds {
    pub fn new(t_on: f64, t_off: f64, t_max: f64) -> Result<Self> {
        if !(t_off < t_on && t_on < t_max) {
            return Err(Error::invalid(format!("thresholds need t_off < t_on < t_max, got {t_off}, {t_on}, {t_max}")));
        }
        Ok(Self { t_on, t_off, t_max })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoolerState {
    Off,
    On,
}

impl CoolerState {
    pub fn is_on(self) -> bool {
        self == CoolerState::On
    }
}

/// Off switches on once `temp >= t_on`; on switches off once `temp < t_off`.
pub fn controller_step(state: CoolerState, temp: f64, th: &Thresholds) -> CoolerState {
    match state {
        CoolerState::Off if temp >= th.t_on => CoolerState::On,
        CoolerState::On if temp < th.t_off => CoolerState::Off,
        s => s,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlantModel {
    Sealed,
    Ventilated,
}

impl std::str::FromStr for PlantModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sealed" => Ok(Self::Sealed),
            "ventilated" => Ok(Self::Ventilated),
            other => Err(Error::invalid(format!("unknown model {other:?}, expected sealed or ventilated"))),
        }
    }
}

/// A scalar function of time in seconds since midnight.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    /// `mean + amplitude * sin(2 pi (t - 6 h) / 24 h)`: minimum at midnight,
    /// maximum at noon.
    Diurnal { mean: f64, amplitude: f64 },
    /// `max(0, sin(2 pi (t - 6 h) / 24 h))^2`.
    ClearSky,
    /// Clear sky times a cloud transmission held constant over blocks of
    /// `block_s` seconds and drawn uniformly from `[min_transmission, 1]`.
    Cloudy { seed: u64, block_s: f64, min_transmission: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "Constant({v})"),
            Self::Diurnal { mean, amplitude } => write!(f, "Diurnal {{ mean: {mean}, amplitude: {amplitude} }}"),
            Self::ClearSky => write!(f, "ClearSky"),
            Self::Cloudy { seed, block_s, min_transmission } => {
                write!(f, "Cloudy {{ seed: {seed}, block_s: {block_s}, min_transmission: {min_transmission} }}")
            }
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

fn day_phase(t: f64) -> f64 {
    2.0 * std::f64::consts::PI * (t - SUNRISE_S) / DAY_S
}

impl Profile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Diurnal { mean, amplitude } => mean + amplitude * day_phase(t).sin(),
            Self::ClearSky => day_phase(t).sin().max(0.0).powi(2),
            Self::Cloudy { seed, block_s, min_transmission } => {
                let block = (t / block_s).floor() as i64 as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ block.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let tau = rng.random_range(*min_transmission..=1.0);
                Self::ClearSky.eval(t) * tau
            }
            Self::Custom(f) => f(t),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantConfig {
    pub model: PlantModel,
    /// Coupling to ambient, 1/s.
    pub k_env: f64,
    /// Peak solar heating rate, degC/s.
    pub q_solar_peak: f64,
    /// Cooling rate while the cooler runs, degC/s. Ignored for the
    /// ventilated model.
    pub q_cool: f64,
    pub ambient: Profile,
    pub solar: Profile,
    /// Integration step, s.
    pub dt: f64,
    /// Starting temperature; ambient at t = 0 when `None`.
    pub initial_temp: Option<f64>,
}

/// Ambient day of the station's climate: 25 degC at night, 33 degC at noon.
pub fn default_ambient() -> Profile {
    Profile::Diurnal { mean: 29.0, amplitude: 4.0 }
}

/// Partly cloudy day: clear-sky irradiance gated by five-minute cloud blocks.
pub fn default_solar() -> Profile {
    Profile::Cloudy { seed: 2015, block_s: 300.0, min_transmission: 0.3 }
}

impl PlantConfig {
    /// Insulated box with a Peltier cooler: slow coupling, two-hour time
    /// constant.
    pub fn sealed() -> Self {
        Self {
            model: PlantModel::Sealed,
            k_env: 1.0 / 7200.0,
            q_solar_peak: 16.0 / 7200.0,
            q_cool: 24.0 / 7200.0,
            ambient: default_ambient(),
            solar: default_solar(),
            dt: 1.0,
            initial_temp: None,
        }
    }

    /// Louvered box with outside air flowing through: five-minute time
    /// constant, no cooler.
    pub fn ventilated() -> Self {
        Self {
            model: PlantModel::Ventilated,
            k_env: 1.0 / 300.0,
            q_solar_peak: 0.02,
            q_cool: 0.0,
            ambient: default_ambient(),
            solar: default_solar(),
            dt: 1.0,
            initial_temp: None,
        }
    }

    pub fn for_model(model: PlantModel) -> Self {
        match model {
            PlantModel::Sealed => Self::sealed(),
            PlantModel::Ventilated => Self::ventilated(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_env > 0.0) || !self.k_env.is_finite() {
            return Err(Error::invalid(format!("k_env must be positive, got {}", self.k_env)));
        }
        if !(self.q_cool >= 0.0) || !self.q_cool.is_finite() || !self.q_solar_peak.is_finite() {
            return Err(Error::invalid("heating and cooling rates must be finite, cooling non-negative"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermoSample {
    pub t_s: f64,
    pub temp_c: f64,
    pub cooler_on: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThermoTrace {
    samples: Vec<ThermoSample>,
}

impl ThermoTrace {
    /// Checks strictly increasing, uniformly spaced timestamps.
    pub fn new(samples: Vec<ThermoSample>) -> Result<Self> {
        if samples.iter().any(|s| !s.t_s.is_finite() || !s.temp_c.is_finite()) {
            return Err(Error::invalid("trace contains non-finite values"));
        }
        if samples.windows(2).any(|p| p[1].t_s <= p[0].t_s) {
            return Err(Error::invalid("trace timestamps must be strictly increasing"));
        }
        if samples.len() > 2 {
            let step = samples[1].t_s - samples[0].t_s;
            let tol = 1e-6 * step.max(1.0);
            if samples.windows(2).any(|p| ((p[1].t_s - p[0].t_s) - step).abs() > tol) {
                return Err(Error::invalid("trace timestamps must be uniformly spaced"));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ThermoSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,temp_c,cooler_on\n");
        for s in &self.samples {
            writeln!(out, "{},{:.3},{}", s.t_s, s.temp_c, u8::from(s.cooler_on)).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        const FMT: &str = "trace CSV";
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("t_s,temp_c,cooler_on") => {}
            other => return Err(Error::malformed(FMT, format!("bad header {other:?}"))),
        }
        let samples = lines
            .enumerate()
            .map(|(i, line)| {
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                let row = i + 2;
                let [t, temp, on] = fields[..] else {
                    return Err(Error::malformed(FMT, format!("line {row}: expected 3 fields")));
                };
                let num = |v: &str| v.parse::<f64>().map_err(|_| Error::malformed(FMT, format!("line {row}: bad number {v:?}")));
                let cooler_on = match on {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::malformed(FMT, format!("line {row}: cooler_on must be 0 or 1, got {other:?}"))),
                };
                Ok(ThermoSample { t_s: num(t)?, temp_c: num(temp)?, cooler_on })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Integrates the plant for `duration_s`, which must be a whole number of
/// steps. The trace holds one sample per step boundary including both ends;
/// each sample's cooler flag is the controller output for that temperature.
pub fn simulate(plant: &PlantConfig, th: &Thresholds, duration_s: f64) -> Result<ThermoTrace> {
    plant.validate()?;
    if !(duration_s >= 0.0) || !duration_s.is_finite() {
        return Err(Error::invalid(format!("duration must be non-negative, got {duration_s}")));
    }
    let steps_f = duration_s / plant.dt;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::invalid(format!("duration {duration_s} s is not a multiple of dt {} s", plant.dt)));
    }
    let steps = steps as usize;

    let finite = |name: &str, t: f64, v: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("{name} profile is {v} at t = {t} s")))
        }
    };
    let mut temp = match plant.initial_temp {
        Some(t) => finite("initial temperature", 0.0, t)?,
        None => finite("ambient", 0.0, plant.ambient.eval(0.0))?,
    };
    let mut state = CoolerState::Off;
    let mut samples = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = n as f64 * plant.dt;
        if plant.model == PlantModel::Sealed {
            state = controller_step(state, temp, th);
        }
        samples.push(ThermoSample { t_s: t, temp_c: temp, cooler_on: state.is_on() });
        if n == steps {
            break;
        }
        let ambient = finite("ambient", t, plant.ambient.eval(t))?;
        let solar = finite("solar", t, plant.solar.eval(t))?;
        let cooling = if state.is_on() { plant.q_cool } else { 0.0 };
        temp += plant.dt * (plant.k_env * (ambient - temp) + plant.q_solar_peak * solar - cooling);
        if !temp.is_finite() {
            return Err(Error::Numerical(format!("temperature diverged at t = {t} s")));
        }
    }
    ThermoTrace::new(samples)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSummary {
    pub max_c: f64,
    pub min_c: f64,
    /// Sum of absolute step-to-step changes.
    pub total_variation_c: f64,
    /// Fraction of samples with the cooler on.
    pub duty_fraction: f64,
    pub switch_on_events: usize,
    pub switch_off_events: usize,
}

impl fmt::Display for TraceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max_c={:.3} min_c={:.3} variation_c={:.3} duty={:.6} switch_on={} switch_off={}",
            self.max_c, self.min_c, self.total_variation_c, self.duty_fraction, self.switch_on_events, self.switch_off_events
        )
    }
}

pub fn analyze_trace(trace: &ThermoTrace) -> Result<TraceSummary> {
    let s = trace.samples();
    if s.is_empty() {
        return Err(Error::invalid("cannot analyze an empty trace"));
    }
    let max_c = s.iter().map(|x| x.temp_c).fold(f64::NEG_INFINITY, f64::max);
    let min_c = s.iter().map(|x| x.temp_c).fold(f64::INFINITY, f64::min);
    let total_variation_c = s.windows(2).map(|p| (p[1].temp_c - p[0].temp_c).abs()).sum();
    let on = s.iter().filter(|x| x.cooler_on).count();
    let switch_on_events = s.windows(2).filter(|p| !p[0].cooler_on && p[1].cooler_on).count();
    let switch_off_events = s.windows(2).filter(|p| p[0].cooler_on && !p[1].cooler_on).count();
    Ok(TraceSummary {
        max_c,
        min_c,
        total_variation_c,
        duty_fraction: on as f64 / s.len() as f64,
        switch_on_events,
        switch_off_events,
    })
}
