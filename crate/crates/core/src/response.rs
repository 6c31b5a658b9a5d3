//! Camera response recovery.
//!
//! The unknowns are the 256 log-exposure values `g(z)` of one channel and the
//! log radiance `ln E_i` of every sampled pixel. Each sample and exposure
//! contributes a weighted data row `w(Z_ij) (g(Z_ij) - ln E_i) = w(Z_ij) ln dt_j`,
//! each interior level a smoothness row `sqrt(lambda) w(z) (g(z-1) - 2 g(z) + g(z+1)) = 0`,
//! and one row pins `g(128) = 0`. The stacked system is solved densely by
//! pivoted QR, then the curve is projected onto non-decreasing sequences.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lstsq::{self, DenseMatrix, LstsqError};
use crate::types::{weight, ExposureStack, ResponseCurve, CHANNELS, LEVELS, PIVOT};

/// Relative threshold on the pivoted R diagonal below which the system is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-9;
/// Candidates tried per grid cell before falling back to its center.
const CELL_TRIES: usize = 16;
/// Mid-exposure values inside this band are preferred as samples.
const PREFERRED_BAND: (u8, u8) = (5, 250);

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Smoothness weight; the objective carries `lambda * sum (w g'')^2`.
    pub lambda: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { lambda: 100.0, sample_count: 256, seed: 0 }
    }
}

impl SolverConfig {
    /// Checks `lambda > 0` and the solvability bound `N (P - 1) > 256`.
    pub fn validate(&self, exposures: usize) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        check_solvable(self.sample_count, exposures)
    }
}

fn check_solvable(samples: usize, exposures: usize) -> Result<()> {
    if exposures < 2 {
        return Err(Error::invalid(format!("response recovery needs at least 2 exposures, got {exposures}")));
    }
    if samples.saturating_mul(exposures - 1) <= LEVELS {
        return Err(Error::invalid(format!(
            "{samples} samples x ({exposures} - 1) exposures must exceed {LEVELS} for a solvable system"
        )));
    }
    Ok(())
}

/// Pixel locations used to build the response system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePlan {
    points: Vec<(usize, usize)>,
}

impl SamplePlan {
    pub fn new(points: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(points.len());
        if let Some(dup) = points.iter().find(|p| !seen.insert(**p)) {
            return Err(Error::invalid(format!("duplicate sample location {dup:?}")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        match self.points.iter().find(|(x, y)| *x >= width || *y >= height) {
            Some(p) => Err(Error::invalid(format!("sample {p:?} outside {width}x{height} image"))),
            None => Ok(()),
        }
    }
}

/// Chooses `config.sample_count` pixel locations, one per cell of a uniform
/// grid laid over the image. Within a cell, seeded random candidates are
/// tried until one whose middle-exposure value sits inside `[5, 250]` on all
/// channels is found; otherwise the cell center is used.
pub fn select_samples(stack: &ExposureStack, config: &SolverConfig) -> Result<SamplePlan> {
    config.validate(stack.len())?;
    let (w, h) = (stack.width(), stack.height());
    let n = config.sample_count;
    if w * h < n {
        return Err(Error::invalid(format!("{w}x{h} image cannot provide {n} distinct samples")));
    }

    let (gx, gy) = grid_shape(n, w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Keep n cells out of gx * gy, spread by a seeded shuffle.
    let mut cells: Vec<(usize, usize)> = (0..gy).flat_map(|j| (0..gx).map(move |i| (i, j))).collect();
    cells.shuffle(&mut rng);
    cells.truncate(n);
    cells.sort_by_key(|&(i, j)| (j, i));

    let mid = &stack.images()[stack.len() / 2];
    let in_band = |x: usize, y: usize| mid.pixel(x, y).iter().all(|&z| z >= PREFERRED_BAND.0 && z <= PREFERRED_BAND.1);

    let points = cells
        .into_iter()
        .map(|(i, j)| {
            let (x0, x1) = (i * w / gx, (i + 1) * w / gx);
            let (y0, y1) = (j * h / gy, (j + 1) * h / gy);
            let mut chosen = ((x0 + x1) / 2, (y0 + y1) / 2);
            for _ in 0..CELL_TRIES {
                let x = rand::Rng::random_range(&mut rng, x0..x1);
                let y = rand::Rng::random_range(&mut rng, y0..y1);
                if in_band(x, y) {
                    chosen = (x, y);
                    break;
                }
            }
            chosen
        })
        .collect();
    SamplePlan::new(points)
}

/// Grid with at least `n` non-empty cells whose aspect follows the image.
fn grid_shape(n: usize, w: usize, h: usize) -> (usize, usize) {
    let mut gx = ((n as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let mut gy = n.div_ceil(gx).min(h);
    while gx * gy < n {
        if gx < w {
            gx += 1;
        } else {
            gy += 1;
        }
        gy = gy.min(h);
    }
    (gx, gy)
}

/// Solve statistics for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDiagnostics {
    pub rows: usize,
    pub unknowns: usize,
    /// Samples that had at least one non-clipped exposure.
    pub used_samples: usize,
    /// `min |R_kk| / max |R_kk|` of the pivoted factorization.
    pub diag_ratio: f64,
    /// Largest entry of `A^T (A x - b)` at the raw least-squares solution,
    /// relative to `|A|_F |b|`.
    pub normal_residual: f64,
    /// RMS of the weighted data-row residuals.
    pub data_rms: f64,
}

#[derive(Clone, Debug)]
pub struct ResponseSolution {
    pub curve: ResponseCurve,
    /// Recovered `ln E_i` per channel, in plan order; `None` where every
    /// exposure of the sample was clipped in that channel.
    pub sample_ln_e: [Vec<Option<f64>>; CHANNELS],
    pub diagnostics: [ChannelDiagnostics; CHANNELS],
}

/// Recovers the per-channel response curve.
pub fn solve_response(stack: &ExposureStack, plan: &SamplePlan, config: &SolverConfig) -> Result<ResponseCurve> {
    solve_response_detailed(stack, plan, config).map(|s| s.curve)
}

/// As [`solve_response`], also returning sample radiances and diagnostics.
pub fn solve_response_detailed(
    stack: &ExposureStack,
    plan: &SamplePlan,
    config: &SolverConfig,
) -> Result<ResponseSolution> {
    if !(config.lambda > 0.0) || !config.lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive, got {}", config.lambda)));
    }
    check_solvable(plan.len(), stack.len())?;
    plan.check_bounds(stack.width(), stack.height())?;

    let solved: Vec<Result<ChannelSolution>> =
        (0..CHANNELS).into_par_iter().map(|c| solve_channel(stack, plan, config.lambda, c)).collect();

    let mut tables = [[0.0; LEVELS]; CHANNELS];
    let mut sample_ln_e: [Vec<Option<f64>>; CHANNELS] = Default::default();
    let mut diagnostics: Vec<ChannelDiagnostics> = Vec::with_capacity(CHANNELS);
    for (c, res) in solved.into_iter().enumerate() {
        let s = res?;
        tables[c] = s.g;
        sample_ln_e[c] = s.ln_e;
        diagnostics.push(s.diagnostics);
    }
    let diagnostics: [ChannelDiagnostics; CHANNELS] =
        diagnostics.try_into().expect("one diagnostics record per channel");
    Ok(ResponseSolution { curve: ResponseCurve::new(tables)?, sample_ln_e, diagnostics })
}

struct ChannelSolution {
    g: [f64; LEVELS],
    ln_e: Vec<Option<f64>>,
    diagnostics: ChannelDiagnostics,
}

fn solve_channel(stack: &ExposureStack, plan: &SamplePlan, lambda: f64, c: usize) -> Result<ChannelSolution> {
    let times = stack.shutter_times_s();
    let images = stack.images();

    // Samples whose every exposure is clipped carry no information.
    let used: Vec<usize> = (0..plan.len())
        .filter(|&i| {
            let (x, y) = plan.points()[i];
            images.iter().any(|im| weight(im.value(x, y, c)) > 0.0)
        })
        .collect();

    let data_rows: usize = used
        .iter()
        .map(|&i| {
            let (x, y) = plan.points()[i];
            images.iter().filter(|im| weight(im.value(x, y, c)) > 0.0).count()
        })
        .sum();
    let unknowns = LEVELS + used.len();
    let rows = data_rows + 1 + (LEVELS - 2);
    if used.is_empty() || rows < unknowns {
        return Err(Error::Unsolvable(format!(
            "channel {c}: {data_rows} unclipped observations cannot determine {} sample radiances",
            used.len()
        )));
    }

    let mut a = DenseMatrix::zeros(rows, unknowns);
    let mut b = vec![0.0; rows];
    let mut k = 0;
    for (col, &i) in used.iter().enumerate() {
        let (x, y) = plan.points()[i];
        for (im, &dt) in images.iter().zip(times) {
            let z = im.value(x, y, c);
            let wz = weight(z);
            if wz == 0.0 {
                continue;
            }
            a.set(k, z as usize, wz);
            a.set(k, LEVELS + col, -wz);
            b[k] = wz * dt.ln();
            k += 1;
        }
    }
    a.set(k, PIVOT, 1.0);
    k += 1;
    let smooth = lambda.sqrt();
    for z in 1..LEVELS - 1 {
        let wz = smooth * weight(z as u8);
        a.set(k, z - 1, wz);
        a.set(k, z, -2.0 * wz);
        a.set(k, z + 1, wz);
        k += 1;
    }
    debug_assert_eq!(k, rows);

    let sol = lstsq::solve(a.clone(), b.clone(), RANK_TOL).map_err(|e| match e {
        LstsqError::RankDeficient { step, ratio } => Error::Unsolvable(format!(
            "channel {c}: rank deficient at column {step} (pivot ratio {ratio:.3e}); exposures carry no slope information"
        )),
        LstsqError::NonFinite => Error::Numerical(format!("channel {c}: non-finite value in response system")),
        LstsqError::Shape => Error::Unsolvable(format!("channel {c}: system has more unknowns than equations")),
    })?;

    let residual: Vec<f64> = a.mul_vec(&sol.x).iter().zip(&b).map(|(p, q)| p - q).collect();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = (a.frobenius_norm() * b_norm).max(f64::MIN_POSITIVE);
    let normal_residual = a.tr_mul_vec(&residual).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
    let data_rms = (residual[..data_rows].iter().map(|r| r * r).sum::<f64>() / data_rows as f64).sqrt();

    let mut g = [0.0; LEVELS];
    g.copy_from_slice(&sol.x[..LEVELS]);
    g[0] = 2.0 * g[1] - g[2];
    g[LEVELS - 1] = 2.0 * g[LEVELS - 2] - g[LEVELS - 3];
    isotonic_non_decreasing(&mut g);
    let shift = g[PIVOT];
    for v in g.iter_mut() {
        *v -= shift;
    }
    g[PIVOT] = 0.0;

    let mut ln_e = vec![None; plan.len()];
    for (col, &i) in used.iter().enumerate() {
        ln_e[i] = Some(sol.x[LEVELS + col] - shift);
    }
    if g.iter().chain(ln_e.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("channel {c}: solve produced non-finite values")));
    }

    Ok(ChannelSolution {
        g,
        ln_e,
        diagnostics: ChannelDiagnostics {
            rows,
            unknowns,
            used_samples: used.len(),
            diag_ratio: sol.diag_ratio,
            normal_residual,
            data_rms,
        },
    })
}

/// Least-squares projection onto non-decreasing sequences (pool adjacent
/// violators, unit weights).
pub fn isotonic_non_decreasing(values: &mut [f64]) {
    // (sum, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values.iter() {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 > s1 / n1 as f64 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    let mut i = 0;
    for (s, n) in blocks {
        let mean = s / n as f64;
        for v in &mut values[i..i + n] {
            *v = mean;
        }
        i += n;
    }
}

/// Smoothness penalty `sum_{z=1}^{254} (w(z) (g(z-1) - 2 g(z) + g(z+1)))^2`
/// of one channel.
pub fn smoothness_penalty(g: &[f64; LEVELS]) -> f64 {
    (1..LEVELS - 1)
        .map(|z| {
            let d = weight(z as u8) * (g[z - 1] - 2.0 * g[z] + g[z + 1]);
            d * d
        })
        .sum()
}

/// Renders the curve as 256 lines of `z g_R g_G g_B`, nine significant digits.
pub fn format_curve_table(curve: &ResponseCurve) -> String {
    let mut out = String::with_capacity(LEVELS * 64);
    for z in 0..LEVELS {
        write!(out, "{z}").unwrap();
        for c in 0..CHANNELS {
            write!(out, " {:.8e}", curve.channel(c)[z]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_curve_table(text: &str) -> Result<ResponseCurve> {
    const FMT: &str = "response table";
    let mut tables = [[0.0; LEVELS]; CHANNELS];
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    for z in 0..LEVELS {
        let line = lines
            .next()
            .ok_or_else(|| Error::malformed(FMT, format!("expected {LEVELS} rows, found {z}")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 1 + CHANNELS {
            return Err(Error::malformed(FMT, format!("row {z}: expected 4 fields, got {}", fields.len())));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::malformed(FMT, format!("row {z}: bad level {:?}", fields[0])))?;
        if idx != z {
            return Err(Error::malformed(FMT, format!("row {z} is labelled {idx}")));
        }
        for c in 0..CHANNELS {
            tables[c][z] = fields[1 + c]
                .parse()
                .map_err(|_| Error::malformed(FMT, format!("row {z}: bad value {:?}", fields[1 + c])))?;
        }
    }
    if lines.next().is_some() {
        return Err(Error::malformed(FMT, format!("more than {LEVELS} rows")));
    }
    ResponseCurve::new(tables)
}

pub fn save_curve(curve: &ResponseCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_curve_table(curve)).map_err(|e| Error::io(path, e))
}

pub fn load_curve(path: impl AsRef<Path>) -> Result<ResponseCurve> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_curve_table(&text)
}
