//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line with
//! the measured quantity and its bound, then asserts.
//!
//! Run with `cargo test -p skyhdr --test acceptance -- --nocapture --test-threads 1`.

use std::time::Instant;

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skyhdr::capture::{
    plan_bracket, run_station, synth_capture, BracketPlan, Camera, CaptureEvent, CaptureSchedule, MemorySink,
    SimulatedClock, SyntheticCameraConfig,
};
use skyhdr::fusion::{fuse, fuse_partitioned, fusion_report};
use skyhdr::glare::{saturation_report, DEFAULT_THRESHOLD};
use skyhdr::imageio;
use skyhdr::response::{select_samples, solve_response, SolverConfig};
use skyhdr::scene::{sun_scene, SkyScene};
use skyhdr::thermo::{analyze_trace, controller_step, simulate, CoolerState, PlantConfig, Thresholds};
use skyhdr::tonemap::{equalize_adaptive, equalize_global, TonemapConfig};
use skyhdr::{ExposureStack, GrayImage8, RadianceMap, RasterImage8, ResponseCurve};

mod common;

const GAMMA: f64 = 2.2;
const TIMES: [f64; 3] = [1.0 / 2000.0, 1.0 / 500.0, 1.0 / 125.0];
const W: usize = 128;
const H: usize = 96;

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn bracket() -> (SkyScene, RadianceMap, ExposureStack) {
    let (scene, truth) = sun_scene(W, H).unwrap();
    let cam = SyntheticCameraConfig::noiseless(truth.clone(), GAMMA);
    let images = TIMES.iter().map(|&t| synth_capture(&cam, t).unwrap()).collect();
    (scene, truth, ExposureStack::new(images, TIMES.to_vec()).unwrap())
}

#[test]
fn response_round_trip() {
    let (_, _, stack) = bracket();
    let config = SolverConfig::default();
    let start = Instant::now();
    let plan = select_samples(&stack, &config).unwrap();
    let curve = solve_response(&stack, &plan, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();

    // Ideal camera: g(z) = gamma ln(z / 255) up to an additive gauge.
    let truth = |z: usize| GAMMA * (z as f64 / 255.0).ln();
    let mut worst = 0.0f64;
    for c in 0..3 {
        let g = curve.channel(c);
        let zs = 20..=235usize;
        let n = zs.clone().count() as f64;
        let offset = zs.clone().map(|z| g[z] - truth(z)).sum::<f64>() / n;
        let rmse = (zs.map(|z| (g[z] - truth(z) - offset).powi(2)).sum::<f64>() / n).sqrt();
        worst = worst.max(rmse);
    }
    let pass = worst <= 0.05 && secs < 10.0;
    report("response round-trip", pass, format!("worst-channel rmse={worst:.5} (<= 0.05), solve time={secs:.2} s (< 10 s)"));
    assert!(pass);
}

#[test]
fn radiance_reconstruction() {
    let (_, truth, stack) = bracket();
    let config = SolverConfig::default();
    let plan = select_samples(&stack, &config).unwrap();
    let curve = solve_response(&stack, &plan, &config).unwrap();
    let map = fuse(&stack, &curve).unwrap();

    // Mid-range: at least one exposure of that channel in [20, 235].
    let mid = |x: usize, y: usize, c: usize| stack.images().iter().any(|im| (20..=235).contains(&im.value(x, y, c)));
    // Worst and within-bound counts of |E / E_true - 1| after removing the
    // constant gauge offset (median log ratio) left by g(128) = 0.
    let errors = |map: &RadianceMap| {
        let mut diffs = Vec::new();
        for y in 0..H {
            for x in 0..W {
                for c in 0..3 {
                    if mid(x, y, c) && map.flag(x, y).is_valid() {
                        diffs.push(map.ln_e(x, y, c) - truth.ln_e(x, y, c));
                    }
                }
            }
        }
        diffs.sort_by(f64::total_cmp);
        let gauge = diffs[diffs.len() / 2];
        let rel: Vec<f64> = diffs.iter().map(|d| ((d - gauge).exp() - 1.0).abs()).collect();
        (rel.iter().copied().fold(0.0, f64::max), rel.iter().filter(|&&r| r <= 0.02).count(), rel.len())
    };
    let (worst, within, count) = errors(&map);
    let (exact_worst, _, _) = errors(&fuse(&stack, &ResponseCurve::power_law(GAMMA).unwrap()).unwrap());

    let identical = [1, 3, 7, 40, H].iter().all(|&rows| {
        let other = fuse_partitioned(&stack, &curve, rows).unwrap();
        other.ln_values().iter().zip(map.ln_values()).all(|(a, b)| a.to_bits() == b.to_bits())
            && other.flags() == map.flags()
    });

    let pass = worst <= 0.02 && identical;
    report(
        "radiance reconstruction",
        pass,
        format!(
            "max relative error={worst:.4} (<= 0.02) over {count} mid-range pixel-channels, {within} within bound \
             (exact response curve: {exact_worst:.4}); partition-invariant={identical}"
        ),
    );
    assert!(pass);
}

#[test]
fn dynamic_range() {
    let (_, truth, stack) = bracket();
    let truth_bits = fusion_report(&truth).unwrap().dynamic_range_bits;
    let config = SolverConfig::default();
    let curve = solve_response(&stack, &select_samples(&stack, &config).unwrap(), &config).unwrap();
    let bits = fusion_report(&fuse(&stack, &curve).unwrap()).unwrap().dynamic_range_bits;
    let pass = (bits - 15.0).abs() <= 0.5;
    report("dynamic range", pass, format!("fused map {bits:.3} bits (15.0 +/- 0.5), scene {truth_bits:.3} bits"));
    assert!(pass);
}

fn brute_force_saturated(img: &RasterImage8, x0: usize, y0: usize, w: usize, h: usize) -> usize {
    let mut n = 0;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let i = (y * img.width() + x) * 3;
            let d = img.data();
            if d[i] >= 250 || d[i + 1] >= 250 || d[i + 2] >= 250 {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn glare_ordering() {
    let (scene, _, stack) = bracket();
    let config = SolverConfig::default();
    let curve = solve_response(&stack, &select_samples(&stack, &config).unwrap(), &config).unwrap();
    let tonemapped = equalize_adaptive(&fuse(&stack, &curve).unwrap(), &TonemapConfig::default()).unwrap();

    // The exposure an auto-exposing camera would settle on: mean level
    // closest to mid-grey.
    let mean = |im: &RasterImage8| im.data().iter().map(|&v| f64::from(v)).sum::<f64>() / im.data().len() as f64;
    let (best_idx, best) = stack
        .images()
        .iter()
        .enumerate()
        .min_by(|a, b| (mean(a.1) - 118.0).abs().total_cmp(&(mean(b.1) - 118.0).abs()))
        .unwrap();

    let roi = scene.circumsolar_roi();
    let hdr = saturation_report(&tonemapped, &roi, DEFAULT_THRESHOLD).unwrap();
    let single = saturation_report(best, &roi, DEFAULT_THRESHOLD).unwrap();
    let counts_agree = hdr.saturated_count == brute_force_saturated(&tonemapped, roi.x, roi.y, roi.width, roi.height)
        && single.saturated_count == brute_force_saturated(best, roi.x, roi.y, roi.width, roi.height);
    let pass = hdr.saturated_fraction < single.saturated_fraction && counts_agree;
    report(
        "glare ordering",
        pass,
        format!(
            "roi {roi}: tone-mapped fraction={:.4} < single exposure (dt={}) fraction={:.4}; brute-force counts agree={counts_agree}",
            hdr.saturated_fraction,
            TIMES[best_idx],
            single.saturated_fraction
        ),
    );
    assert!(pass);
}

#[test]
fn thermostat_truth_table() {
    let th = Thresholds::default();
    let mut mismatches = 0;
    let mut cases = 0;
    for tenths in 250..=450 {
        let temp = tenths as f64 / 10.0;
        for on in [false, true] {
            let expected_on = if on { tenths >= 320 } else { tenths >= 370 };
            let state = if on { CoolerState::On } else { CoolerState::Off };
            if controller_step(state, temp, &th).is_on() != expected_on {
                mismatches += 1;
            }
            cases += 1;
        }
    }
    let pass = mismatches == 0;
    report("thermostat truth table", pass, format!("{mismatches} mismatches over {cases} (state, temp) cases"));
    assert!(pass);
}

#[test]
fn thermal_bound() {
    let th = Thresholds::default();
    let sealed = simulate(&PlantConfig::sealed(), &th, 86_400.0).unwrap();
    let vented = simulate(&PlantConfig::ventilated(), &th, 86_400.0).unwrap();
    let s = analyze_trace(&sealed).unwrap();
    let v = analyze_trace(&vented).unwrap();

    let eps = 0.5;
    let mut band_ok = true;
    for p in sealed.samples().windows(2) {
        if !p[0].cooler_on && p[1].cooler_on {
            band_ok &= p[1].temp_c >= th.t_on && p[1].temp_c <= th.t_on + eps;
        }
        if p[0].cooler_on && !p[1].cooler_on {
            band_ok &= p[1].temp_c < th.t_off && p[1].temp_c >= th.t_off - eps;
        }
    }
    let pass = s.max_c <= 40.0 && band_ok && s.switch_on_events > 0 && s.total_variation_c < v.total_variation_c;
    report(
        "thermal bound",
        pass,
        format!(
            "sealed max={:.3} C (<= 40), {} on / {} off switches within band={band_ok}, variation sealed={:.2} < ventilated={:.2}",
            s.max_c, s.switch_on_events, s.switch_off_events, s.total_variation_c, v.total_variation_c
        ),
    );
    assert!(pass);
}

#[test]
fn equalization_oracle() {
    let mut mismatched = Vec::new();
    let mut instances = 0;
    for seed in 0..100u64 {
        for (size, tiles) in [(16usize, 2usize), (32, 2), (32, 4)] {
            let map = common::random_map(seed, size, size);
            let cfg = TonemapConfig { tiles_x: tiles, tiles_y: tiles, clip_limit: [0.01, 0.05, 0.2, 1.0][(seed % 4) as usize] };
            let global_ok = equalize_global(&map).unwrap() == common::oracle_global(&map);
            let adaptive_ok = equalize_adaptive(&map, &cfg).unwrap() == common::oracle_adaptive(&map, &cfg);
            instances += 2;
            if !(global_ok && adaptive_ok) {
                mismatched.push((seed, size, tiles));
            }
        }
    }
    let pass = mismatched.is_empty();
    report("equalization oracle", pass, format!("{} instances, mismatches: {mismatched:?}", instances));
    assert!(pass);
}

struct TinyCamera;

impl Camera for TinyCamera {
    fn capture(&mut self, _shutter_s: f64) -> skyhdr::Result<RasterImage8> {
        RasterImage8::filled(1, 1, [128; 3])
    }
}

#[test]
fn scheduler_and_bracket_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0;
    for _ in 0..1000 {
        let interval = rng.random_range(1..=600) as f64 * 0.5;
        let duration = rng.random_range(0.0..3600.0f64).floor();
        let k = rng.random_range(1..=7usize);
        let mut offsets: Vec<f64> = (0..k).map(|i| i as f64 - 3.0).collect();
        offsets.dedup();
        let start: DateTime<Utc> = Utc.timestamp_opt(1_400_000_000 + rng.random_range(0..1_000_000), 0).unwrap();
        let schedule = CaptureSchedule::new(start, interval, duration).unwrap();
        let plan = BracketPlan::new(1.0 / 250.0, offsets.clone(), "f/8").unwrap();
        let mut sink = MemorySink::default();
        let log = run_station(&schedule, &plan, &mut TinyCamera, &mut sink, &mut SimulatedClock);
        let expected = (duration / interval).floor() as usize + 1;
        let per_trigger_ok = log
            .events
            .iter()
            .all(|e| matches!(e, CaptureEvent::Bracket { files, .. } if files.len() == offsets.len()));
        if log.events.len() != expected
            || sink.manifest.len() != expected
            || sink.images.len() != expected * offsets.len()
            || !per_trigger_ok
            || plan_bracket(&plan).len() != offsets.len()
        {
            bad += 1;
        }
    }
    let pass = bad == 0;
    report("scheduler and bracket counting", pass, format!("{bad} of 1000 randomized schedules miscounted"));
    assert!(pass);
}

#[test]
fn io_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..40usize), rng.random_range(1..40usize));
        let rgb = RasterImage8::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap();
        let gray = GrayImage8::new(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        let map = common::random_map(rng.random(), w, h);

        let ppm = imageio::encode_ppm(&rgb);
        let ppm_ok = imageio::decode_ppm(&ppm).is_ok_and(|back| back == rgb && imageio::encode_ppm(&back) == ppm);
        let pgm = imageio::encode_pgm(&gray);
        let pgm_ok = imageio::decode_pgm(&pgm).is_ok_and(|back| back == gray && imageio::encode_pgm(&back) == pgm);
        let pfm = imageio::encode_pfm(&map).unwrap();
        let pfm_ok = imageio::decode_pfm(&pfm)
            .and_then(|d| imageio::radiance_from_parts(d, None))
            .is_ok_and(|back| imageio::encode_pfm(&back).unwrap() == pfm);
        failures += usize::from(!(ppm_ok && pgm_ok && pfm_ok));
    }

    let (fuzzed, crashes) = common::fuzz_headers(2000, 5);
    let pass = failures == 0 && crashes == 0;
    report(
        "io round-trips",
        pass,
        format!("{failures} of 100 fixtures not bit-identical; {crashes} panics over {fuzzed} malformed inputs"),
    );
    assert!(pass);
}
