use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{compute_norm_stats, EnsembleSample, NormMode, NormStats};

/// Inclusive end dates of the training, validation and test periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub val_end: NaiveDate,
    pub test_end: NaiveDate,
}

impl SplitSpec {
    pub fn new(train_end: NaiveDate, val_end: NaiveDate, test_end: NaiveDate) -> Result<Self> {
        let spec = SplitSpec {
            train_end,
            val_end,
            test_end,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_end < self.val_end && self.val_end < self.test_end) {
            return Err(Error::Ordering(format!(
                "split boundaries must increase strictly: {} / {} / {}",
                self.train_end, self.val_end, self.test_end
            )));
        }
        Ok(())
    }

    /// 1981–2003 training, 2004 validation, 2005 test.
    pub fn historical() -> Self {
        let d = |y| NaiveDate::from_ymd_opt(y, 12, 31).expect("valid date");
        SplitSpec {
            train_end: d(2003),
            val_end: d(2004),
            test_end: d(2005),
        }
    }

    /// Contiguous 70/15/15 split of `days` consecutive days from `start`.
    pub fn fractional(start: NaiveDate, days: usize) -> Result<Self> {
        let train = days * 70 / 100;
        let val = days * 85 / 100;
        if train == 0 || val <= train || days <= val {
            return Err(Error::InvalidArgument(format!(
                "{days} days are too few for a 70/15/15 split"
            )));
        }
        let at = |n: usize| start + chrono::Duration::days(n as i64 - 1);
        SplitSpec::new(at(train), at(val), at(days))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [EnsembleSample],
    pub val: &'a [EnsembleSample],
    pub test: &'a [EnsembleSample],
}

impl Splits<'_> {
    pub fn cardinalities(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

pub fn check_dates_increasing(samples: &[EnsembleSample]) -> Result<()> {
    for w in samples.windows(2) {
        if w[1].date <= w[0].date {
            return Err(Error::Ordering(format!(
                "{} follows {}; dates must increase strictly",
                w[1].date, w[0].date
            )));
        }
    }
    Ok(())
}

/// Splits time-ordered samples into contiguous train/val/test ranges.
///
/// Samples after `test_end` are dropped. An empty validation or test range
/// is not an error but is logged as a warning.
pub fn temporal_split<'a>(samples: &'a [EnsembleSample], spec: &SplitSpec) -> Result<Splits<'a>> {
    spec.validate()?;
    check_dates_increasing(samples)?;
    let end_of = |limit: NaiveDate| samples.partition_point(|s| s.date <= limit);
    let (a, b, c) = (
        end_of(spec.train_end),
        end_of(spec.val_end),
        end_of(spec.test_end),
    );
    let splits = Splits {
        train: &samples[..a],
        val: &samples[a..b],
        test: &samples[b..c],
    };
    if splits.val.is_empty() || splits.test.is_empty() {
        log::warn!(
            "temporal split leaves empty partitions (train {}, val {}, test {})",
            splits.train.len(),
            splits.val.len(),
            splits.test.len()
        );
    }
    Ok(splits)
}

/// Time-ordered ensemble samples with their split and training statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub member_names: Vec<String>,
    pub samples: Vec<EnsembleSample>,
    pub split: SplitSpec,
    pub stats: NormStats,
}

impl Dataset {
    /// Validates ordering and member counts, then computes normalization
    /// statistics from the training period only.
    pub fn new(
        member_names: Vec<String>,
        samples: Vec<EnsembleSample>,
        split: SplitSpec,
        mode: NormMode,
    ) -> Result<Self> {
        check_dates_increasing(&samples)?;
        for s in &samples {
            s.validate()?;
            if s.member_count() != member_names.len() {
                return Err(Error::Shape(format!(
                    "{}: {} members, expected {}",
                    s.date,
                    s.member_count(),
                    member_names.len()
                )));
            }
        }
        let train_len = temporal_split(&samples, &split)?.train.len();
        let stats = compute_norm_stats(&samples[..train_len], mode)?;
        Ok(Dataset {
            member_names,
            samples,
            split,
            stats,
        })
    }

    pub fn splits(&self) -> Splits<'_> {
        temporal_split(&self.samples, &self.split).expect("validated at construction")
    }

    pub fn member_count(&self) -> usize {
        self.member_names.len()
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.samples
            .first()
            .map(|s| (s.label.rows, s.label.cols))
            .unwrap_or((0, 0))
    }
}
