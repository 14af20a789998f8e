//! Gridded fields, ensemble samples and normalization statistics.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One 2-D field on a regular lat/lon grid. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub rows: usize,
    pub cols: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub values: Vec<f64>,
    pub name: String,
}

/// Georeference and dimensions of a grid, without values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
}

impl GridField {
    pub fn new(geometry: GridGeometry, values: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        let GridGeometry {
            rows,
            cols,
            lat0,
            lon0,
            dlat,
            dlon,
        } = geometry;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {rows}x{cols}")));
        }
        if dlat == 0.0 || dlon == 0.0 || !dlat.is_finite() || !dlon.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "cell spacing must be finite and non-zero (dlat {dlat}, dlon {dlon})"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidGrid(format!(
                "{rows}x{cols} grid needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(GridField {
            rows,
            cols,
            lat0,
            lon0,
            dlat,
            dlon,
            values,
            name: name.into(),
        })
    }

    /// Unit-spaced grid anchored at the origin; handy for tests and synthetic data.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        GridField::new(GridGeometry::unit(rows, cols), values, "")
    }

    pub fn constant(geometry: GridGeometry, value: f64, name: impl Into<String>) -> Self {
        GridField::new(geometry, vec![value; geometry.rows * geometry.cols], name)
            .expect("geometry already validated")
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            rows: self.rows,
            cols: self.cols,
            lat0: self.lat0,
            lon0: self.lon0,
            dlat: self.dlat,
            dlon: self.dlon,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Same values, new geometry (dimension-checked).
    pub fn with_geometry(mut self, geometry: GridGeometry) -> Result<Self> {
        if geometry.rows != self.rows || geometry.cols != self.cols {
            return Err(Error::Shape(format!(
                "cannot relabel {}x{} field with {}x{} geometry",
                self.rows, self.cols, geometry.rows, geometry.cols
            )));
        }
        self.lat0 = geometry.lat0;
        self.lon0 = geometry.lon0;
        self.dlat = geometry.dlat;
        self.dlon = geometry.dlon;
        Ok(self)
    }

    pub fn missing_fraction(&self) -> f64 {
        self.values.iter().filter(|v| v.is_nan()).count() as f64 / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .filter(|v| !v.is_nan())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl GridGeometry {
    pub fn unit(rows: usize, cols: usize) -> Self {
        GridGeometry {
            rows,
            cols,
            lat0: 0.0,
            lon0: 0.0,
            dlat: 1.0,
            dlon: 1.0,
        }
    }
}

/// Align-corners bilinear interpolation onto a finer (or equal) grid.
///
/// The first and last sample of each axis land exactly on the first and
/// last output sample; the cell spacing is rescaled so the extent between
/// corner cell centres is unchanged.
pub fn bilinear_upsample(
    src: &GridField,
    target_rows: usize,
    target_cols: usize,
) -> Result<GridField> {
    // A single row (or column) is fine as long as that axis is not resampled.
    let axis_ok = |n: usize, target: usize| n >= 2 || (n == 1 && target == 1);
    if !axis_ok(src.rows, target_rows) || !axis_ok(src.cols, target_cols) {
        return Err(Error::InvalidGrid(format!(
            "bilinear interpolation needs at least 2 samples along each resampled axis, got {}x{}",
            src.rows, src.cols
        )));
    }
    if target_rows < src.rows || target_cols < src.cols {
        return Err(Error::UnsupportedDownsample {
            src_rows: src.rows,
            src_cols: src.cols,
            dst_rows: target_rows,
            dst_cols: target_cols,
        });
    }
    if target_rows == src.rows && target_cols == src.cols {
        return Ok(src.clone());
    }

    let row_taps = axis_taps(src.rows, target_rows);
    let col_taps = axis_taps(src.cols, target_cols);
    let mut values = Vec::with_capacity(target_rows * target_cols);
    for &(r0, r1, fr) in &row_taps {
        for &(c0, c1, fc) in &col_taps {
            let v00 = src.get(r0, c0);
            let v01 = src.get(r0, c1);
            let v10 = src.get(r1, c0);
            let v11 = src.get(r1, c1);
            let top = lerp(v00, v01, fc);
            let bottom = lerp(v10, v11, fc);
            values.push(lerp(top, bottom, fr));
        }
    }

    let rescale = |d: f64, n: usize, m: usize| {
        if m > 1 {
            d * (n - 1) as f64 / (m - 1) as f64
        } else {
            d
        }
    };
    GridField::new(
        GridGeometry {
            rows: target_rows,
            cols: target_cols,
            lat0: src.lat0,
            lon0: src.lon0,
            dlat: rescale(src.dlat, src.rows, target_rows),
            dlon: rescale(src.dlon, src.cols, target_cols),
        },
        values,
        src.name.clone(),
    )
}

/// Upsamples `src` to the label grid's dimensions and adopts its georeference.
pub fn regrid_like(src: &GridField, target: &GridGeometry) -> Result<GridField> {
    bilinear_upsample(src, target.rows, target.cols)?.with_geometry(*target)
}

// Exact weights at the endpoints keep corner samples bit-identical and make
// `lerp(a, a, t) == a` so constant fields stay constant.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        a + (b - a) * t
    }
}

fn axis_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    if src_len == 1 {
        return vec![(0, 0, 0.0); dst_len];
    }
    (0..dst_len)
        .map(|i| {
            if dst_len == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
            let lo = (pos.floor() as usize).min(src_len - 2);
            let frac = pos - lo as f64;
            (lo, lo + 1, frac)
        })
        .collect()
}

/// One day: `n` member forecasts on the label grid plus the observed label.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSample {
    pub date: NaiveDate,
    pub members: Vec<GridField>,
    pub label: GridField,
}

impl EnsembleSample {
    pub fn new(date: NaiveDate, members: Vec<GridField>, label: GridField) -> Result<Self> {
        let sample = EnsembleSample {
            date,
            members,
            label,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Shape(format!(
                "{}: sample has no members",
                self.date
            )));
        }
        let g = self.label.geometry();
        for (i, m) in self.members.iter().enumerate() {
            if m.geometry() != g {
                return Err(Error::Shape(format!(
                    "{}: member {i} grid {}x{} does not match label grid {}x{}",
                    self.date, m.rows, m.cols, g.rows, g.cols
                )));
            }
        }
        Ok(())
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    CenterScale,
    ScaleOnly,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center_scale" => Ok(NormMode::CenterScale),
            "scale_only" => Ok(NormMode::ScaleOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown normalization mode {other:?} (expected center_scale or scale_only)"
            ))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::CenterScale => "center_scale",
            NormMode::ScaleOnly => "scale_only",
        })
    }
}

/// Per-channel mean and standard deviation; the last channel is the label.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub mode: NormMode,
}

impl NormStats {
    pub fn member_channels(&self) -> usize {
        self.means.len() - 1
    }

    pub fn label_mean(&self) -> f64 {
        *self
            .means
            .last()
            .expect("stats always carry a label channel")
    }

    pub fn label_std(&self) -> f64 {
        *self
            .stds
            .last()
            .expect("stats always carry a label channel")
    }

    /// Maps a normalized label-space value back to physical units.
    #[inline]
    pub fn denormalize_label(&self, v: f64) -> f64 {
        v * self.label_std() + self.label_mean()
    }
}

/// Population mean/std per channel over every non-missing cell of the given days.
pub fn compute_norm_stats(train: &[EnsembleSample], mode: NormMode) -> Result<NormStats> {
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalization statistics need at least 2 training samples, got {}",
            train.len()
        )));
    }
    let n = train[0].member_count();
    let channels = n + 1;
    let mut means = Vec::with_capacity(channels);
    let mut stds = Vec::with_capacity(channels);
    for ch in 0..channels {
        fn field(s: &EnsembleSample, ch: usize, n: usize) -> Result<&[f64]> {
            if ch < n {
                s.members
                    .get(ch)
                    .map(|m| m.values.as_slice())
                    .ok_or_else(|| Error::Shape(format!("{}: missing member {ch}", s.date)))
            } else {
                Ok(s.label.values.as_slice())
            }
        }
        // Two passes: mean first, then centred squares, for accuracy.
        let mut count = 0usize;
        let mut sum = 0.0;
        for s in train {
            for &v in field(s, ch, n)? {
                if !v.is_nan() {
                    count += 1;
                    sum += v;
                }
            }
        }
        if count == 0 {
            return Err(Error::Empty(format!("channel {ch} is entirely missing")));
        }
        let mean = sum / count as f64;
        let mut ss = 0.0;
        for s in train {
            for &v in field(s, ch, n)? {
                if !v.is_nan() {
                    ss += (v - mean) * (v - mean);
                }
            }
        }
        let std = (ss / count as f64).sqrt();
        if !(std > 0.0) {
            return Err(Error::DegenerateChannel { channel: ch });
        }
        means.push(match mode {
            NormMode::CenterScale => mean,
            NormMode::ScaleOnly => 0.0,
        });
        stds.push(std);
    }
    Ok(NormStats { means, stds, mode })
}

fn map_sample(
    sample: &EnsembleSample,
    stats: &NormStats,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<EnsembleSample> {
    if stats.means.len() != sample.member_count() + 1 {
        return Err(Error::Shape(format!(
            "stats carry {} channels but the sample has {} members + label",
            stats.means.len(),
            sample.member_count()
        )));
    }
    let transform = |field: &GridField, ch: usize| {
        let (m, s) = (stats.means[ch], stats.stds[ch]);
        let mut out = field.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v, m, s));
        out
    };
    Ok(EnsembleSample {
        date: sample.date,
        members: sample
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| transform(m, i))
            .collect(),
        label: transform(&sample.label, sample.member_count()),
    })
}

/// `(v - mean) / std` per channel; NaN stays NaN.
pub fn apply_normalization(sample: &EnsembleSample, stats: &NormStats) -> Result<EnsembleSample> {
    map_sample(sample, stats, |v, m, s| (v - m) / s)
}

pub fn denormalize(sample: &EnsembleSample, stats: &NormStats) -> Result<EnsembleSample> {
    map_sample(sample, stats, |v, m, s| v * s + m)
}

/// Stacks the members into an `n × J × K` volume, channel `i` = member `i`.
pub fn stack_ensemble(sample: &EnsembleSample) -> Result<Tensor> {
    sample.validate()?;
    let (rows, cols) = (sample.label.rows, sample.label.cols);
    let mut data = Vec::with_capacity(sample.member_count() * rows * cols);
    for m in &sample.members {
        data.extend_from_slice(&m.values);
    }
    Tensor::from_vec(sample.member_count(), rows, cols, data)
}
