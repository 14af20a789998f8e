//! Synthetic truth fields and degraded low-resolution ensemble members.

use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{regrid_like, EnsembleSample, GridField, GridGeometry, NormMode};
use crate::io::{write_grd, FileEntry, Manifest};
use crate::train::{Dataset, SplitSpec};

/// Upper end of the synthetic precipitation scale, mm/day.
pub const MAX_RAIN_MM: f64 = 100.0;
/// mm/day per standard deviation above the wet threshold.
const RAIN_SCALE_MM: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MemberConfig {
    /// Cyclic shift `(dy, dx)` in cells.
    pub shift: (i64, i64),
    pub blur_sigma: f64,
    pub subsample_factor: usize,
    pub noise_sigma: f64,
    pub mult_bias: f64,
    pub add_bias: f64,
}

impl MemberConfig {
    pub fn identity() -> Self {
        MemberConfig {
            shift: (0, 0),
            blur_sigma: 0.0,
            subsample_factor: 1,
            noise_sigma: 0.0,
            mult_bias: 1.0,
            add_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsample_factor == 0 {
            return Err(Error::InvalidArgument(
                "subsample factor must be >= 1".into(),
            ));
        }
        if !(self.blur_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "blur ({}) and noise ({}) widths must be >= 0",
                self.blur_sigma, self.noise_sigma
            )));
        }
        if !(self.mult_bias > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mult_bias must be > 0, got {}",
                self.mult_bias
            )));
        }
        Ok(())
    }
}

/// The default four-member ensemble; larger counts cycle through it.
pub fn default_members(n: usize) -> Vec<MemberConfig> {
    const SHIFTS: [(i64, i64); 4] = [(0, 0), (1, 0), (0, -1), (1, 1)];
    const BLUR: [f64; 4] = [0.5, 1.0, 1.0, 1.5];
    const FACTOR: [usize; 4] = [2, 2, 4, 8];
    const NOISE: [f64; 4] = [1.0, 1.5, 2.0, 2.0];
    const MULT: [f64; 4] = [0.8, 0.7, 0.9, 0.6];
    const ADD: [f64; 4] = [-1.0, -0.5, -1.5, -1.0];
    (0..n)
        .map(|i| {
            let k = i % 4;
            MemberConfig {
                shift: SHIFTS[k],
                blur_sigma: BLUR[k],
                subsample_factor: FACTOR[k],
                noise_sigma: NOISE[k],
                mult_bias: MULT[k],
                add_bias: ADD[k],
            }
        })
        .collect()
}

fn day_rng(seed: u64, day: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * day as u64 + purpose);
    rng
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with wrap-around boundaries. `sigma = 0` is the identity.
pub fn cyclic_blur(values: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as i64;
    let wrap = |i: i64, n: usize| i.rem_euclid(n as i64) as usize;
    let mut horiz = vec![0.0; values.len()];
    for r in 0..rows {
        for c in 0..cols {
            horiz[r * cols + c] = taps
                .iter()
                .enumerate()
                .map(|(t, w)| w * values[r * cols + wrap(c as i64 + t as i64 - radius, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = taps
                .iter()
                .enumerate()
                .map(|(t, w)| w * horiz[wrap(r as i64 + t as i64 - radius, rows) * cols + c])
                .sum();
        }
    }
    out
}

/// `out[r][c] = in[r - dy][c - dx]`, indices taken modulo the grid.
pub fn cyclic_shift(values: &[f64], rows: usize, cols: usize, (dy, dx): (i64, i64)) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for r in 0..rows {
        let sr = (r as i64 - dy).rem_euclid(rows as i64) as usize;
        for c in 0..cols {
            let sc = (c as i64 - dx).rem_euclid(cols as i64) as usize;
            out[r * cols + c] = values[sr * cols + sc];
        }
    }
    out
}

/// One day of synthetic rain: smoothed white noise, thresholded so that
/// `rain_fraction` of the cells are wet, scaled to mm/day.
pub fn truth_day(
    geometry: GridGeometry,
    rng: &mut ChaCha8Rng,
    smoothness: f64,
    rain_fraction: f64,
) -> Result<GridField> {
    let (rows, cols) = (geometry.rows, geometry.cols);
    let noise: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let z = cyclic_blur(&noise, rows, cols, smoothness);
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);
    let wet = ((rain_fraction * n).round() as usize).min(z.len() - 1);
    let threshold = if wet == 0 {
        sorted[sorted.len() - 1]
    } else {
        sorted[sorted.len() - wet - 1]
    };
    let values = z
        .iter()
        .map(|&v| {
            if v > threshold {
                (RAIN_SCALE_MM * (v - threshold) / sd).min(MAX_RAIN_MM)
            } else {
                0.0
            }
        })
        .collect();
    GridField::new(geometry, values, "truth")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    /// Gaussian width of the spatial correlation, in cells.
    pub smoothness: f64,
    pub rain_fraction: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            smoothness: 2.0,
            rain_fraction: 0.4,
        }
    }
}

fn check_truth_args(geometry: &GridGeometry, days: usize, cfg: &TruthConfig) -> Result<()> {
    if geometry.rows < 8 || geometry.cols < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic grids need at least 8x8 cells, got {}x{}",
            geometry.rows, geometry.cols
        )));
    }
    if days == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs at least one day".into(),
        ));
    }
    if !(cfg.rain_fraction > 0.0 && cfg.rain_fraction < 1.0) || !(cfg.smoothness >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rain_fraction must be in (0, 1) and smoothness >= 0, got {} / {}",
            cfg.rain_fraction, cfg.smoothness
        )));
    }
    Ok(())
}

/// Independent daily truth fields; day `d` depends only on `(seed, d)`.
pub fn generate_truth(
    geometry: GridGeometry,
    days: usize,
    seed: u64,
    cfg: &TruthConfig,
) -> Result<Vec<GridField>> {
    check_truth_args(&geometry, days, cfg)?;
    (0..days)
        .into_par_iter()
        .map(|d| {
            truth_day(
                geometry,
                &mut day_rng(seed, d, 0),
                cfg.smoothness,
                cfg.rain_fraction,
            )
        })
        .collect()
}

/// Shift, blur, subsample, bias and noise, clamped at zero.
pub fn degrade(truth: &GridField, cfg: &MemberConfig, rng: &mut ChaCha8Rng) -> Result<GridField> {
    cfg.validate()?;
    let (rows, cols) = (truth.rows, truth.cols);
    let d = cfg.subsample_factor;
    if rows % d != 0 || cols % d != 0 {
        return Err(Error::Shape(format!(
            "subsample factor {d} does not divide the {rows}x{cols} grid"
        )));
    }
    let shifted = cyclic_shift(&truth.values, rows, cols, cfg.shift);
    let blurred = cyclic_blur(&shifted, rows, cols, cfg.blur_sigma);
    let (lr, lc) = (rows / d, cols / d);
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let mut values = Vec::with_capacity(lr * lc);
    for r in 0..lr {
        for c in 0..lc {
            let mut v = cfg.mult_bias * blurred[r * d * cols + c * d] + cfg.add_bias;
            if let Some(n) = &noise {
                v += n.sample(rng);
            }
            values.push(v.max(0.0));
        }
    }
    let g = truth.geometry();
    GridField::new(
        GridGeometry {
            rows: lr,
            cols: lc,
            lat0: g.lat0,
            lon0: g.lon0,
            dlat: g.dlat * d as f64,
            dlon: g.dlon * d as f64,
        },
        values,
        truth.name.clone(),
    )
}

/// A generated world: truth labels and members at their native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub start: NaiveDate,
    pub truth: Vec<GridField>,
    /// `members[k][d]` is member `k` on day `d`.
    pub members: Vec<Vec<GridField>>,
    pub configs: Vec<MemberConfig>,
}

pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(1981, 1, 1).expect("valid date")
}

/// Label grid used for generated datasets: 0.25 degree cells.
pub fn default_geometry(rows: usize, cols: usize) -> GridGeometry {
    GridGeometry {
        rows,
        cols,
        lat0: -30.0,
        lon0: -60.0,
        dlat: 0.25,
        dlon: 0.25,
    }
}

pub fn generate_dataset(
    geometry: GridGeometry,
    days: usize,
    configs: &[MemberConfig],
    truth_cfg: &TruthConfig,
    seed: u64,
) -> Result<SynthData> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument(
            "synthetic ensemble needs at least one member".into(),
        ));
    }
    for c in configs {
        c.validate()?;
    }
    let truth = generate_truth(geometry, days, seed, truth_cfg)?;
    let per_day: Vec<Vec<GridField>> = truth
        .par_iter()
        .enumerate()
        .map(|(d, t)| {
            let mut rng = day_rng(seed, d, 1);
            configs
                .iter()
                .map(|c| degrade(t, c, &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut members: Vec<Vec<GridField>> = vec![Vec::with_capacity(days); configs.len()];
    for day in per_day {
        for (k, f) in day.into_iter().enumerate() {
            members[k].push(f);
        }
    }
    Ok(SynthData {
        start: default_start(),
        truth,
        members,
        configs: configs.to_vec(),
    })
}

impl SynthData {
    pub fn days(&self) -> usize {
        self.truth.len()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.days())
            .map(|d| self.start + Days::new(d as u64))
            .collect()
    }

    pub fn member_names(&self) -> Vec<String> {
        (0..self.members.len())
            .map(|k| format!("member_{k}"))
            .collect()
    }

    /// Members upsampled onto the label grid, one sample per day.
    pub fn samples(&self) -> Result<Vec<EnsembleSample>> {
        self.dates()
            .into_par_iter()
            .enumerate()
            .map(|(d, date)| {
                let label = self.truth[d].clone();
                let g = label.geometry();
                let members = self
                    .members
                    .iter()
                    .map(|m| regrid_like(&m[d], &g))
                    .collect::<Result<Vec<_>>>()?;
                EnsembleSample::new(date, members, label)
            })
            .collect()
    }

    pub fn default_split(&self) -> Result<SplitSpec> {
        SplitSpec::fractional(self.start, self.days())
    }

    pub fn to_dataset(&self, mode: NormMode) -> Result<Dataset> {
        Dataset::new(
            self.member_names(),
            self.samples()?,
            self.default_split()?,
            mode,
        )
    }

    /// Writes `label.grd`, one `member_k.grd` per member at native
    /// resolution, and `manifest.json` into `dir`. Returns the manifest path.
    pub fn write_files(&self, dir: &Path, mode: NormMode) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entry = |name: &str, field: &GridField| FileEntry {
            name: name.to_string(),
            path: format!("{name}.grd").into(),
            resolution_deg: field.dlat.abs(),
            start_date: self.start,
        };
        write_grd(&self.truth, &dir.join("label.grd"))?;
        let mut members = Vec::with_capacity(self.members.len());
        for (name, fields) in self.member_names().iter().zip(&self.members) {
            write_grd(fields, &dir.join(format!("{name}.grd")))?;
            members.push(entry(name, &fields[0]));
        }
        let manifest = Manifest {
            members,
            label: entry("label", &self.truth[0]),
            split: self.default_split()?,
            normalization: mode,
        };
        let path = dir.join("manifest.json");
        manifest.save(&path)?;
        Ok(path)
    }
}
