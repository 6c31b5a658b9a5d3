//! Fixtures and brute-force reference implementations shared by the
//! integration tests. Nothing here calls into the tone-mapping module.

#![allow(dead_code)]

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skyhdr::imageio;
use skyhdr::tonemap::TonemapConfig;
use skyhdr::{GrayImage8, PixelFlag, RadianceMap, RasterImage8};

/// Random radiance map. One seed in three draws from a handful of levels so
/// histograms have heavy ties; about 5% of pixels are flagged.
pub fn random_map(seed: u64, w: usize, h: usize) -> RadianceMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = seed % 3 == 0;
    let mut ln_e = Vec::with_capacity(w * h * 3);
    let mut flags = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let base: f64 = if coarse { f64::from(rng.random_range(0..6u8)) - 2.5 } else { rng.random_range(-8.0..8.0) };
        for _ in 0..3 {
            let tint: f64 = if coarse { 0.0 } else { rng.random_range(-0.4..0.4) };
            ln_e.push(base + tint);
        }
        let r: f64 = rng.random();
        flags.push(if r < 0.025 {
            PixelFlag::OverExposed
        } else if r < 0.05 {
            PixelFlag::UnderExposed
        } else {
            PixelFlag::Valid
        });
    }
    if !flags.contains(&PixelFlag::Valid) {
        flags[0] = PixelFlag::Valid;
    }
    RadianceMap::new(w, h, ln_e, flags).unwrap()
}

fn lum(map: &RadianceMap, x: usize, y: usize) -> f64 {
    (map.ln_e(x, y, 0) + map.ln_e(x, y, 1) + map.ln_e(x, y, 2)) / 3.0
}

fn valid_range(map: &RadianceMap) -> (f64, f64) {
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.flag(x, y) == PixelFlag::Valid {
                lo = lo.min(lum(map, x, y));
                hi = hi.max(lum(map, x, y));
            }
        }
    }
    (lo, hi)
}

fn bin_of(l: f64, lo: f64, hi: f64) -> usize {
    if hi == lo {
        0
    } else {
        (((l - lo) / (hi - lo) * 256.0).floor() as i64).clamp(0, 255) as usize
    }
}

/// `floor(a / b + 1/2)` for non-negative integers.
fn round_div(a: u128, b: u128) -> u128 {
    (2 * a + b) / (2 * b)
}

fn paint(map: &RadianceMap, level: impl Fn(usize, usize) -> u128) -> RasterImage8 {
    RasterImage8::from_fn(map.width(), map.height(), |x, y| {
        if map.flag(x, y) != PixelFlag::Valid {
            return [0; 3];
        }
        let v = level(x, y) as f64;
        let l = lum(map, x, y);
        std::array::from_fn(|c| (v * (map.ln_e(x, y, c) - l).exp()).round().clamp(0.0, 255.0) as u8)
    })
    .unwrap()
}

/// Global equalization by counting, for every pixel, the valid pixels whose
/// bin does not exceed its own.
pub fn oracle_global(map: &RadianceMap) -> RasterImage8 {
    let (lo, hi) = valid_range(map);
    let bins: Vec<Option<usize>> = (0..map.width() * map.height())
        .map(|i| {
            let (x, y) = (i % map.width(), i / map.width());
            (map.flag(x, y) == PixelFlag::Valid).then(|| bin_of(lum(map, x, y), lo, hi))
        })
        .collect();
    let total = bins.iter().flatten().count() as u128;
    paint(map, |x, y| {
        let mine = bins[y * map.width() + x].unwrap();
        let le = bins.iter().flatten().filter(|&&b| b <= mine).count() as u128;
        round_div(255 * le, total)
    })
}

fn tile_lut(map: &RadianceMap, lo: f64, hi: f64, x0: usize, x1: usize, y0: usize, y1: usize, clip: f64) -> Vec<u128> {
    let mut hist = vec![0u128; 256];
    for y in y0..y1 {
        for x in x0..x1 {
            if map.flag(x, y) == PixelFlag::Valid {
                hist[bin_of(lum(map, x, y), lo, hi)] += 1;
            }
        }
    }
    let n: u128 = hist.iter().sum();
    if clip < 1.0 {
        let limit = ((clip * n as f64).floor() as u128).max(1);
        let excess: u128 = hist.iter().map(|&h| h.saturating_sub(limit)).sum();
        for h in hist.iter_mut() {
            *h = (*h).min(limit) + excess / 256;
        }
        let residual = (excess % 256) as usize;
        if residual > 0 {
            let stride = (256 / residual).max(1);
            for i in 0..residual {
                hist[i * stride] += 1;
            }
        }
    }
    let total: u128 = hist.iter().sum();
    (0..256)
        .map(|b| if total == 0 { b as u128 } else { round_div(255 * hist[..=b].iter().sum::<u128>(), total) })
        .collect()
}

/// Neighboring tiles and integer weights along one axis: tile `k` spans
/// `[k len / n, (k + 1) len / n)`; centers and the pixel are compared at
/// twice their coordinates.
fn neighbors(pos: usize, len: usize, n: usize) -> Vec<(usize, u128)> {
    let centers: Vec<u128> = (0..n).map(|k| (k * len / n + (k + 1) * len / n) as u128).collect();
    let p = 2 * pos as u128 + 1;
    if p <= centers[0] {
        return vec![(0, 1)];
    }
    if p >= centers[n - 1] {
        return vec![(n - 1, 1)];
    }
    for k in 0..n - 1 {
        if centers[k] <= p && p < centers[k + 1] {
            return vec![(k, centers[k + 1] - p), (k + 1, p - centers[k])];
        }
    }
    unreachable!()
}

/// Adaptive equalization with every tile histogram rebuilt per pixel and
/// the bilinear blend carried out in exact rational arithmetic.
pub fn oracle_adaptive(map: &RadianceMap, cfg: &TonemapConfig) -> RasterImage8 {
    let (lo, hi) = valid_range(map);
    if lo == hi {
        return oracle_global(map);
    }
    let (w, h) = (map.width(), map.height());
    let (tx, ty) = (cfg.tiles_x, cfg.tiles_y);
    paint(map, |x, y| {
        let bin = bin_of(lum(map, x, y), lo, hi);
        let xs = neighbors(x, w, tx);
        let ys = neighbors(y, h, ty);
        let mut num = 0u128;
        let mut den = 0u128;
        for &(ky, wy) in &ys {
            for &(kx, wx) in &xs {
                let lut = tile_lut(map, lo, hi, kx * w / tx, (kx + 1) * w / tx, ky * h / ty, (ky + 1) * h / ty, cfg.clip_limit);
                num += wy * wx * lut[bin];
                den += wy * wx;
            }
        }
        round_div(num, den)
    })
}

/// Mutates valid PPM, PGM and PFM encodings and feeds them to every decoder.
/// Returns the number of inputs tried and the number that panicked. A fixed
/// list of hand-written malformed headers must also be rejected.
pub fn fuzz_headers(count: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = RasterImage8::from_fn(5, 4, |x, y| [x as u8 * 40, y as u8 * 50, 7]).unwrap();
    let gray = GrayImage8::new(5, 4, (0..20).collect()).unwrap();
    let map = random_map(seed, 5, 4);
    let seeds = [imageio::encode_ppm(&rgb), imageio::encode_pgm(&gray), imageio::encode_pfm(&map).unwrap()];

    let decode_all = |bytes: &[u8]| -> usize {
        let r = catch_unwind(AssertUnwindSafe(|| {
            let _ = imageio::decode_ppm(bytes);
            let _ = imageio::decode_pgm(bytes);
            let _ = imageio::decode_pfm(bytes).and_then(|d| imageio::radiance_from_parts(d, None));
            let _ = imageio::decode_png(bytes);
        }));
        usize::from(r.is_err())
    };

    let mut panics = 0;
    let mut tried = 0;
    for _ in 0..count {
        let mut bytes = seeds[rng.random_range(0..seeds.len())].clone();
        let header_end = bytes.len().min(24);
        match rng.random_range(0..5) {
            0 => {
                let i = rng.random_range(0..header_end);
                bytes[i] = rng.random();
            }
            1 => bytes.truncate(rng.random_range(0..bytes.len())),
            2 => {
                let i = rng.random_range(0..header_end);
                let junk: &[u8] = [&b"99999999999999999999"[..], b"-1", b"#", b" ", b"\n", b"0", b"nan", b"1e999"]
                    [rng.random_range(0..8)];
                bytes.splice(i..i, junk.iter().copied());
            }
            3 => {
                let i = rng.random_range(0..header_end);
                bytes.remove(i);
            }
            _ => {
                for b in bytes.iter_mut().take(header_end) {
                    if rng.random_bool(0.2) {
                        *b = rng.random();
                    }
                }
            }
        }
        panics += decode_all(&bytes);
        tried += 1;
    }

    let malformed: [&[u8]; 14] = [
        b"",
        b"P",
        b"P6",
        b"P6\n",
        b"P6\n5 4\n",
        b"P6\n5 4\n255",
        b"P6\n0 4\n255\n",
        b"P6\n-5 4\n255\n",
        b"P6\n99999999999999999999 4\n255\n",
        b"P6\n4294967296 4294967296\n255\n",
        b"P6\n5 4\n65535\n",
        b"P5\n5 4\n255\nabc",
        b"PF\n2 2\n1.0\n",
        b"PF\n2 2\nabc\n",
    ];
    for bytes in malformed {
        tried += 1;
        let rejected = catch_unwind(|| {
            imageio::decode_ppm(bytes).is_err()
                && imageio::decode_pgm(bytes).is_err()
                && imageio::decode_pfm(bytes).is_err()
        });
        if !matches!(rejected, Ok(true)) {
            panics += 1;
        }
    }
    (tried, panics)
}
