//! Bracket planning, capture scheduling and the station capture loop.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, TimeDelta, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imageio;
use crate::types::{shutter_time_for_ev, RadianceMap, RasterImage8, CHANNELS};

pub const DEFAULT_EV_OFFSETS: [f64; 3] = [-3.0, -1.0, 1.0];
pub const MANIFEST_NAME: &str = "captures.log";

/// Exposure bracket at fixed aperture: only the shutter time varies.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketPlan {
    pub base_shutter_s: f64,
    pub ev_offsets: Vec<f64>,
    pub aperture: String,
}

impl BracketPlan {
    pub fn new(base_shutter_s: f64, ev_offsets: Vec<f64>, aperture: impl Into<String>) -> Result<Self> {
        if !(base_shutter_s > 0.0) || !base_shutter_s.is_finite() {
            return Err(Error::invalid(format!("base shutter time must be positive, got {base_shutter_s}")));
        }
        if ev_offsets.is_empty() {
            return Err(Error::invalid("bracket needs at least one EV offset"));
        }
        if ev_offsets.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("EV offsets must be finite"));
        }
        if ev_offsets.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::invalid("EV offsets must be sorted ascending"));
        }
        Ok(Self { base_shutter_s, ev_offsets, aperture: aperture.into() })
    }

    pub fn with_default_offsets(base_shutter_s: f64) -> Result<Self> {
        Self::new(base_shutter_s, DEFAULT_EV_OFFSETS.to_vec(), "smallest")
    }
}

/// Shutter time for every offset, in offset order.
pub fn plan_bracket(plan: &BracketPlan) -> Vec<f64> {
    plan.ev_offsets
        .iter()
        .map(|&ev| shutter_time_for_ev(plan.base_shutter_s, ev).expect("plan validated on construction"))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSchedule {
    pub start_time: DateTime<Utc>,
    pub interval_s: f64,
    pub duration_s: f64,
}

impl CaptureSchedule {
    pub fn new(start_time: DateTime<Utc>, interval_s: f64, duration_s: f64) -> Result<Self> {
        if !(interval_s > 0.0) || !interval_s.is_finite() {
            return Err(Error::invalid(format!("interval must be positive, got {interval_s}")));
        }
        if !(duration_s >= 0.0) || !duration_s.is_finite() {
            return Err(Error::invalid(format!("duration must be non-negative, got {duration_s}")));
        }
        Ok(Self { start_time, interval_s, duration_s })
    }

    pub fn trigger_count(&self) -> usize {
        (self.duration_s / self.interval_s).floor() as usize + 1
    }
}

/// `start + k * interval` for `k = 0..=floor(duration / interval)`. Each
/// offset is computed from `k` directly, so rounding never accumulates.
pub fn schedule_triggers(s: &CaptureSchedule) -> Vec<DateTime<Utc>> {
    (0..s.trigger_count())
        .map(|k| {
            let nanos = (k as f64 * s.interval_s * 1e9).round() as i64;
            s.start_time + TimeDelta::nanoseconds(nanos)
        })
        .collect()
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// `<timestamp>_ev<offset>.ppm`, offset signed (`ev-3`, `ev+1`).
pub fn capture_file_name(trigger: &DateTime<Utc>, ev_offset: f64) -> String {
    format!("{}_ev{:+}.ppm", format_timestamp(trigger), ev_offset)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCameraConfig {
    pub true_gamma: f64,
    /// Ground-truth radiance seen by the camera.
    pub scene: RadianceMap,
    /// Standard deviation of additive Gaussian noise, in pixel-value units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticCameraConfig {
    pub fn noiseless(scene: RadianceMap, true_gamma: f64) -> Self {
        Self { true_gamma, scene, noise_sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.true_gamma > 0.0) || !self.true_gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.true_gamma)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Pre-quantization pixel value `255 (E dt)^(1/gamma)`.
#[inline]
pub fn synth_level(e_dt: f64, gamma: f64) -> f64 {
    255.0 * e_dt.max(0.0).powf(1.0 / gamma)
}

/// Renders one exposure: `Z = clamp(round(255 (E dt)^(1/gamma) + noise), 0, 255)`.
/// Noise is seeded from the config seed and the shutter time, so the same
/// call always yields the same image.
pub fn synth_capture(config: &SyntheticCameraConfig, shutter_s: f64) -> Result<RasterImage8> {
    config.validate()?;
    if !(shutter_s > 0.0) || !shutter_s.is_finite() {
        return Err(Error::invalid(format!("shutter time must be positive, got {shutter_s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ shutter_s.to_bits());
    let data = config
        .scene
        .ln_values()
        .iter()
        .map(|ln_e| {
            let mut v = synth_level(ln_e.exp() * shutter_s, config.true_gamma);
            if config.noise_sigma > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                v += config.noise_sigma * n;
            }
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect::<Vec<u8>>();
    debug_assert_eq!(data.len(), config.scene.width() * config.scene.height() * CHANNELS);
    RasterImage8::new(config.scene.width(), config.scene.height(), data)
}

pub trait Camera {
    fn capture(&mut self, shutter_s: f64) -> Result<RasterImage8>;
}

pub struct SyntheticCamera {
    pub config: SyntheticCameraConfig,
}

impl Camera for SyntheticCamera {
    fn capture(&mut self, shutter_s: f64) -> Result<RasterImage8> {
        synth_capture(&self.config, shutter_s)
    }
}

/// Storage for captured images and the append-only manifest.
pub trait CaptureSink {
    fn store_image(&mut self, name: &str, img: &RasterImage8) -> Result<()>;
    fn append_manifest(&mut self, line: &str) -> Result<()>;
}

/// Writes PPM files and `captures.log` into a directory.
pub struct DirectorySink {
    dir: PathBuf,
}

impl DirectorySink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl CaptureSink for DirectorySink {
    fn store_image(&mut self, name: &str, img: &RasterImage8) -> Result<()> {
        imageio::write_ldr(img, self.dir.join(name))
    }

    fn append_manifest(&mut self, line: &str) -> Result<()> {
        let path = self.dir.join(MANIFEST_NAME);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }
}

/// Keeps everything in memory.
#[derive(Default, Debug)]
pub struct MemorySink {
    pub images: Vec<(String, RasterImage8)>,
    pub manifest: Vec<String>,
}

impl CaptureSink for MemorySink {
    fn store_image(&mut self, name: &str, img: &RasterImage8) -> Result<()> {
        self.images.push((name.to_owned(), img.clone()));
        Ok(())
    }

    fn append_manifest(&mut self, line: &str) -> Result<()> {
        self.manifest.push(line.to_owned());
        Ok(())
    }
}

pub trait Clock {
    fn wait_until(&mut self, t: DateTime<Utc>);
}

/// Returns immediately; triggers are processed back to back.
pub struct SimulatedClock;

impl Clock for SimulatedClock {
    fn wait_until(&mut self, _t: DateTime<Utc>) {}
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn wait_until(&mut self, t: DateTime<Utc>) {
        if let Ok(d) = (t - Utc::now()).to_std() {
            std::thread::sleep(d);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CaptureEvent {
    Bracket { trigger: DateTime<Utc>, shutter_times_s: Vec<f64>, files: Vec<String> },
    Failed { trigger: DateTime<Utc>, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CaptureLog {
    pub events: Vec<CaptureEvent>,
}

impl CaptureLog {
    pub fn successes(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, CaptureEvent::Bracket { .. })).count()
    }

    pub fn failures(&self) -> usize {
        self.events.len() - self.successes()
    }
}

/// `timestamp;shutter1,shutter2,...;file1,file2,...`
pub fn manifest_line(trigger: &DateTime<Utc>, shutter_times_s: &[f64], files: &[String]) -> String {
    let mut line = format_timestamp(trigger);
    line.push(';');
    for (i, t) in shutter_times_s.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        write!(line, "{t}").unwrap();
    }
    line.push(';');
    line.push_str(&files.join(","));
    line
}

/// Parses a manifest line back into its timestamp, shutter times and files.
pub fn parse_manifest_line(line: &str) -> Result<(DateTime<Utc>, Vec<f64>, Vec<String>)> {
    let bad = |why: &str| Error::malformed("manifest", format!("{why}: {line:?}"));
    let mut parts = line.split(';');
    let (Some(ts), Some(times), Some(files), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad("expected three ';'-separated fields"));
    };
    let ts = DateTime::parse_from_rfc3339(ts).map_err(|_| bad("bad timestamp"))?.with_timezone(&Utc);
    let times = times
        .split(',')
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad("bad shutter time"))?;
    Ok((ts, times, files.split(',').map(str::to_owned).collect()))
}

/// Captures one full bracket per trigger and records it in the sink. A failed
/// camera or sink write abandons that bracket (no manifest entry), records
/// the failure and moves on to the next trigger.
pub fn run_station(
    schedule: &CaptureSchedule,
    plan: &BracketPlan,
    camera: &mut dyn Camera,
    sink: &mut dyn CaptureSink,
    clock: &mut dyn Clock,
) -> CaptureLog {
    let shutters = plan_bracket(plan);
    let mut log = CaptureLog::default();
    for trigger in schedule_triggers(schedule) {
        clock.wait_until(trigger);
        let outcome = capture_bracket(&trigger, plan, &shutters, camera, sink);
        let event = match outcome {
            Ok(files) => CaptureEvent::Bracket { trigger, shutter_times_s: shutters.clone(), files },
            Err(e) => {
                log::warn!("bracket at {} failed: {e}", format_timestamp(&trigger));
                CaptureEvent::Failed { trigger, reason: e.to_string() }
            }
        };
        log.events.push(event);
    }
    log
}

fn capture_bracket(
    trigger: &DateTime<Utc>,
    plan: &BracketPlan,
    shutters: &[f64],
    camera: &mut dyn Camera,
    sink: &mut dyn CaptureSink,
) -> Result<Vec<String>> {
    let mut files = Vec::with_capacity(shutters.len());
    for (&ev, &dt) in plan.ev_offsets.iter().zip(shutters) {
        let img = camera.capture(dt)?;
        let name = capture_file_name(trigger, ev);
        sink.store_image(&name, &img)?;
        files.push(name);
    }
    sink.append_manifest(&manifest_line(trigger, shutters, &files))?;
    Ok(files)
}

/// Station settings from a flat `key=value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct StationConfig {
    pub schedule: CaptureSchedule,
    pub plan: BracketPlan,
    pub width: usize,
    pub height: usize,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl StationConfig {
    /// Required keys: `interval_s`, `duration_s`, `base_shutter_s`. Optional:
    /// `ev_offsets` (comma separated, default -3,-1,1), `start_time`
    /// (RFC 3339, default 1970-01-01T00:00:00Z), `aperture`, and the synthetic
    /// camera's `width`, `height`, `gamma`, `noise_sigma`, `seed`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut interval = None;
        let mut duration = None;
        let mut base = None;
        let mut offsets = DEFAULT_EV_OFFSETS.to_vec();
        let mut start = DateTime::<Utc>::UNIX_EPOCH;
        let mut aperture = String::from("smallest");
        let (mut width, mut height, mut gamma, mut noise, mut seed) = (128usize, 96usize, 2.2f64, 0.0f64, 0u64);

        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}")))
        }

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "interval_s" => interval = Some(num::<f64>(key, value)?),
                "duration_s" => duration = Some(num::<f64>(key, value)?),
                "base_shutter_s" => base = Some(parse_seconds(value)?),
                "ev_offsets" => {
                    offsets = value.split(',').map(|v| num::<f64>(key, v.trim())).collect::<Result<_>>()?;
                }
                "start_time" => {
                    start = DateTime::parse_from_rfc3339(value)
                        .map_err(|_| Error::invalid(format!("config key start_time: bad timestamp {value:?}")))?
                        .with_timezone(&Utc);
                }
                "aperture" => aperture = value.to_owned(),
                "width" => width = num(key, value)?,
                "height" => height = num(key, value)?,
                "gamma" => gamma = num(key, value)?,
                "noise_sigma" => noise = num(key, value)?,
                "seed" => seed = num(key, value)?,
                other => return Err(Error::invalid(format!("config line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        let missing = |k: &str| Error::invalid(format!("config is missing required key {k}"));
        Ok(Self {
            schedule: CaptureSchedule::new(
                start,
                interval.ok_or_else(|| missing("interval_s"))?,
                duration.ok_or_else(|| missing("duration_s"))?,
            )?,
            plan: BracketPlan::new(base.ok_or_else(|| missing("base_shutter_s"))?, offsets, aperture)?,
            width,
            height,
            gamma,
            noise_sigma: noise,
            seed,
        })
    }
}

impl StationConfig {
    /// Synthetic camera looking at the reference sun scene.
    pub fn camera(&self) -> Result<SyntheticCamera> {
        let (_, scene) = crate::scene::sun_scene(self.width, self.height)?;
        let config = SyntheticCameraConfig { true_gamma: self.gamma, scene, noise_sigma: self.noise_sigma, seed: self.seed };
        config.validate()?;
        Ok(SyntheticCamera { config })
    }
}

/// Accepts decimal seconds or a `1/250` style fraction.
pub fn parse_seconds(v: &str) -> Result<f64> {
    let bad = || Error::invalid(format!("cannot parse shutter time {v:?}"));
    match v.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            let r = n / d;
            if r.is_finite() { Ok(r) } else { Err(bad()) }
        }
        None => v.trim().parse().map_err(|_| bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2015, 3, 14, 8, 0, 0).unwrap()
    }

    #[test]
    fn bracket_examples() {
        let plan = BracketPlan::with_default_offsets(1.0 / 250.0).unwrap();
        assert_eq!(plan_bracket(&plan), vec![1.0 / 2000.0, 1.0 / 500.0, 1.0 / 125.0]);
        let plan = BracketPlan::new(1.0 / 250.0, vec![0.0], "f/22").unwrap();
        assert_eq!(plan_bracket(&plan), vec![1.0 / 250.0]);
        let plan = BracketPlan::new(1.0, vec![-1.0, 0.0, 1.0], "f/22").unwrap();
        assert_eq!(plan_bracket(&plan), vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn bracket_rejects_unsorted_or_bad_base() {
        assert!(BracketPlan::new(0.01, vec![1.0, -1.0], "").is_err());
        assert!(BracketPlan::new(0.0, vec![0.0], "").is_err());
        assert!(BracketPlan::new(0.01, vec![], "").is_err());
    }

    #[test]
    fn trigger_examples() {
        let s = CaptureSchedule::new(t0(), 120.0, 600.0).unwrap();
        assert_eq!(schedule_triggers(&s).len(), 6);
        let s = CaptureSchedule::new(t0(), 120.0, 0.0).unwrap();
        assert_eq!(schedule_triggers(&s), vec![t0()]);
        let s = CaptureSchedule::new(t0(), 7.0, 20.0).unwrap();
        let offsets: Vec<i64> = schedule_triggers(&s).iter().map(|t| (*t - t0()).num_seconds()).collect();
        assert_eq!(offsets, vec![0, 7, 14]);
        assert!(CaptureSchedule::new(t0(), 0.0, 10.0).is_err());
    }

    #[test]
    fn triggers_do_not_drift() {
        let s = CaptureSchedule::new(t0(), 0.1, 100_000.0).unwrap();
        let triggers = schedule_triggers(&s);
        let last = *triggers.last().unwrap();
        assert_eq!((last - t0()).num_nanoseconds().unwrap(), (triggers.len() as i64 - 1) * 100_000_000);
    }

    #[test]
    fn synth_level_examples() {
        assert_eq!(synth_level(1.0, 2.2).round(), 255.0);
        assert_eq!(synth_level(0.0, 2.2), 0.0);
        assert_eq!(synth_level(0.5f64.powf(2.2), 2.2).round(), 128.0);
    }

    #[test]
    fn synth_capture_is_monotone_in_shutter_time() {
        let scene = RadianceMap::from_radiance_fn(16, 4, |x, y| [(x as f64 + 1.0) * 10.0, (y as f64 + 1.0) * 3.0, 700.0]).unwrap();
        let config = SyntheticCameraConfig::noiseless(scene, 2.2);
        let mut prev = synth_capture(&config, 1e-4).unwrap();
        for k in 1..12 {
            let img = synth_capture(&config, 1e-4 * 2f64.powi(k)).unwrap();
            assert!(img.data().iter().zip(prev.data()).all(|(a, b)| a >= b));
            prev = img;
        }
        assert!(synth_capture(&config, 0.0).is_err());
    }

    #[test]
    fn noisy_capture_is_reproducible() {
        let scene = RadianceMap::from_radiance_fn(8, 8, |_, _| [10.0; 3]).unwrap();
        let config = SyntheticCameraConfig { true_gamma: 2.2, scene, noise_sigma: 2.0, seed: 9 };
        let a = synth_capture(&config, 0.01).unwrap();
        assert_eq!(a, synth_capture(&config, 0.01).unwrap());
        assert!(a.data().iter().any(|&v| v != a.data()[0]));
    }

    struct FlakySink {
        inner: MemorySink,
        stores: usize,
        fail_on_trigger: usize,
        per_bracket: usize,
    }

    impl CaptureSink for FlakySink {
        fn store_image(&mut self, name: &str, img: &RasterImage8) -> Result<()> {
            self.stores += 1;
            if (self.stores - 1) / self.per_bracket == self.fail_on_trigger && (self.stores - 1) % self.per_bracket == 1 {
                return Err(Error::Sink("disk full".into()));
            }
            self.inner.store_image(name, img)
        }

        fn append_manifest(&mut self, line: &str) -> Result<()> {
            self.inner.append_manifest(line)
        }
    }

    fn camera() -> SyntheticCamera {
        let scene = RadianceMap::from_radiance_fn(6, 4, |x, _| [x as f64 + 1.0; 3]).unwrap();
        SyntheticCamera { config: SyntheticCameraConfig::noiseless(scene, 2.2) }
    }

    #[test]
    fn one_trigger_one_bracket() {
        let schedule = CaptureSchedule::new(t0(), 60.0, 0.0).unwrap();
        let plan = BracketPlan::with_default_offsets(1.0 / 250.0).unwrap();
        let mut sink = MemorySink::default();
        let log = run_station(&schedule, &plan, &mut camera(), &mut sink, &mut SimulatedClock);
        assert_eq!(sink.images.len(), 3);
        assert_eq!(sink.manifest.len(), 1);
        assert_eq!(log.successes(), 1);
        assert_eq!(sink.images[0].0, "2015-03-14T08:00:00Z_ev-3.ppm");
        assert_eq!(sink.images[2].0, "2015-03-14T08:00:00Z_ev+1.ppm");
    }

    #[test]
    fn sink_failure_skips_bracket_and_continues() {
        let schedule = CaptureSchedule::new(t0(), 60.0, 120.0).unwrap();
        let plan = BracketPlan::with_default_offsets(1.0 / 250.0).unwrap();
        let mut sink = FlakySink { inner: MemorySink::default(), stores: 0, fail_on_trigger: 1, per_bracket: 3 };
        let log = run_station(&schedule, &plan, &mut camera(), &mut sink, &mut SimulatedClock);
        assert_eq!(log.successes(), 2);
        assert_eq!(log.failures(), 1);
        assert!(matches!(log.events[1], CaptureEvent::Failed { .. }));
        assert_eq!(sink.inner.manifest.len(), 2);
    }

    #[test]
    fn manifest_round_trips_shutter_times() {
        let schedule = CaptureSchedule::new(t0(), 30.0, 30.0).unwrap();
        let plan = BracketPlan::with_default_offsets(1.0 / 250.0).unwrap();
        let mut sink = MemorySink::default();
        run_station(&schedule, &plan, &mut camera(), &mut sink, &mut SimulatedClock);
        assert_eq!(sink.manifest.len(), 2);
        for (line, trigger) in sink.manifest.iter().zip(schedule_triggers(&schedule)) {
            let (ts, times, files) = parse_manifest_line(line).unwrap();
            assert_eq!(ts, trigger);
            assert_eq!(times, plan_bracket(&plan));
            assert_eq!(files.len(), 3);
        }
    }

    #[test]
    fn station_config_parses() {
        let cfg = StationConfig::parse(
            "# station\ninterval_s = 120\nduration_s=600\nbase_shutter_s=1/250\nev_offsets=-3, -1, 1\nstart_time=2015-03-14T08:00:00Z\n",
        )
        .unwrap();
        assert_eq!(cfg.schedule.trigger_count(), 6);
        assert_eq!(cfg.plan.base_shutter_s, 1.0 / 250.0);
        assert_eq!(cfg.plan.ev_offsets, vec![-3.0, -1.0, 1.0]);
        assert!(StationConfig::parse("interval_s=1\nduration_s=1\n").is_err());
        assert!(StationConfig::parse("interval_s=1\nduration_s=1\nbase_shutter_s=0.1\nbogus=2\n").is_err());
        assert!(StationConfig::parse("interval_s\n").is_err());
    }
}
