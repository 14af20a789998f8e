//! RMSE scoring, paired comparisons, the sign test and the Bayes-ratio bound.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-error tally for one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayError {
    pub date: NaiveDate,
    pub rmse_mm: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub rmse_mm: f64,
    pub per_day: Vec<DayError>,
    pub n_days: usize,
}

impl MetricsReport {
    /// Builds a report from per-day `(date, prediction, label)` triples.
    /// NaN cells in either field are skipped; days with nothing to count
    /// are dropped with a warning.
    pub fn from_days<'a, I>(method: impl Into<String>, days: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NaiveDate, &'a [f64], &'a [f64])>,
    {
        let mut per_day = Vec::new();
        for (date, pred, label) in days {
            if pred.len() != label.len() {
                return Err(Error::Shape(format!(
                    "{date}: prediction has {} cells, label {}",
                    pred.len(),
                    label.len()
                )));
            }
            let (sse, cells) = squared_error(pred, label);
            if cells == 0 {
                log::warn!("{date}: no valid cells, day left out of the score");
                continue;
            }
            per_day.push(DayError {
                date,
                rmse_mm: (sse / cells as f64).sqrt(),
                cells,
            });
        }
        Self::from_day_errors(method, per_day)
    }

    /// Reassembles a report from stored per-day rows.
    pub fn from_day_errors(method: impl Into<String>, per_day: Vec<DayError>) -> Result<Self> {
        let cells: usize = per_day.iter().map(|d| d.cells).sum();
        if cells == 0 {
            return Err(Error::Empty("metric over zero counted cells".into()));
        }
        let sse: f64 = per_day
            .iter()
            .map(|d| d.rmse_mm * d.rmse_mm * d.cells as f64)
            .sum();
        Ok(MetricsReport {
            method: method.into(),
            rmse_mm: (sse / cells as f64).sqrt(),
            n_days: per_day.len(),
            per_day,
        })
    }

    pub fn to_json(&self) -> ReportJson {
        ReportJson {
            method: self.method.clone(),
            rmse_mm: self.rmse_mm,
            n_days: self.n_days,
            p_value: None,
            ratio_bound: None,
        }
    }

    /// `date,rmse_mm,cells` rows.
    pub fn per_day_csv(&self) -> String {
        let mut out = String::from("date,rmse_mm,cells\n");
        for d in &self.per_day {
            out.push_str(&format!("{},{},{}\n", d.date, d.rmse_mm, d.cells));
        }
        out
    }

    pub fn parse_per_day_csv(method: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "date,rmse_mm,cells" => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "per-day CSV must start with `date,rmse_mm,cells`, found {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::InvalidArgument(format!("per-day CSV line {}: {line:?}", i + 2));
            let mut parts = line.split(',');
            let (Some(d), Some(r), Some(c), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            rows.push(DayError {
                date: d.trim().parse().map_err(|_| bad())?,
                rmse_mm: r.trim().parse().map_err(|_| bad())?,
                cells: c.trim().parse().map_err(|_| bad())?,
            });
        }
        Self::from_day_errors(method, rows)
    }
}

/// Serialized form of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub method: String,
    pub rmse_mm: f64,
    pub n_days: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratio_bound: Option<f64>,
}

fn squared_error(pred: &[f64], label: &[f64]) -> (f64, usize) {
    pred.iter()
        .zip(label)
        .filter(|(p, y)| !p.is_nan() && !y.is_nan())
        .fold((0.0, 0), |(s, n), (p, y)| (s + (p - y) * (p - y), n + 1))
}

/// RMSE over all counted cells.
pub fn rmse(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            label.len()
        )));
    }
    let (sse, n) = squared_error(pred, label);
    if n == 0 {
        return Err(Error::Empty("RMSE over zero counted cells".into()));
    }
    Ok((sse / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedError {
    pub date: NaiveDate,
    pub err_a: f64,
    pub err_b: f64,
}

/// Joins two reports day by day. Both must cover the same dates.
pub fn paired_errors(a: &MetricsReport, b: &MetricsReport) -> Result<Vec<PairedError>> {
    let left: BTreeMap<NaiveDate, f64> = a.per_day.iter().map(|d| (d.date, d.rmse_mm)).collect();
    let right: BTreeMap<NaiveDate, f64> = b.per_day.iter().map(|d| (d.date, d.rmse_mm)).collect();
    let mut missing: Vec<NaiveDate> = left
        .keys()
        .filter(|d| !right.contains_key(d))
        .chain(right.keys().filter(|d| !left.contains_key(d)))
        .copied()
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::Alignment { missing });
    }
    Ok(left
        .iter()
        .map(|(&date, &err_a)| PairedError {
            date,
            err_a,
            err_b: right[&date],
        })
        .collect())
}

pub fn paired_csv(pairs: &[PairedError]) -> String {
    let mut out = String::from("date,err_a,err_b\n");
    for p in pairs {
        out.push_str(&format!("{},{},{}\n", p.date, p.err_a, p.err_b));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Days where `a` had the strictly smaller error.
    pub wins_a: usize,
    /// Non-tied days.
    pub n: usize,
    pub p_value: f64,
}

/// One-sided sign test of "a is no better than b". Ties are dropped.
pub fn sign_test(pairs: &[(f64, f64)]) -> Result<SignTest> {
    let mut wins = 0;
    let mut n = 0;
    for &(a, b) in pairs {
        if a < b {
            wins += 1;
            n += 1;
        } else if b < a {
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedTest);
    }
    Ok(SignTest {
        wins_a: wins,
        n,
        p_value: binomial_upper_tail(n, wins),
    })
}

/// Largest `n` whose tail sums fit in integer arithmetic.
const EXACT_INTEGER_LIMIT: usize = 60;

/// `P[Bin(n, 1/2) >= k]`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if n <= EXACT_INTEGER_LIMIT {
        // C(n, i) built incrementally; the tail is at most 2^60.
        let mut c: u128 = 1;
        let mut tail: u128 = 0;
        for i in 0..=n {
            if i >= k {
                tail += c;
            }
            if i < n {
                c = c * (n - i) as u128 / (i + 1) as u128;
            }
        }
        return tail as f64 / 2f64.powi(n as i32);
    }
    // Log-space: ln C(n, i) accumulated term by term, then log-sum-exp.
    let ln2 = std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut terms = Vec::with_capacity(n - k + 1);
    for i in 0..=n {
        if i >= k {
            terms.push(ln_c - n as f64 * ln2);
        }
        if i < n {
            ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBound {
    pub ratio: f64,
    /// Set when the observed p-value cannot reach the target at any ratio >= 1.
    pub below_unity: bool,
}

/// Largest `P(H0)/P(O)` keeping `1 - p_obs * r >= target`.
///
/// `1 - target` is rounded to 15 significant digits first so decimal inputs
/// such as 0.95 give the decimal answer.
pub fn bayes_ratio_bound(p_obs: f64, target_significance: f64) -> Result<RatioBound> {
    let open_unit = |v: f64| v > 0.0 && v < 1.0;
    if !open_unit(p_obs) || !open_unit(target_significance) {
        return Err(Error::InvalidArgument(format!(
            "p-value and significance must lie in (0, 1), got {p_obs} and {target_significance}"
        )));
    }
    let alpha: f64 = format!("{:.14e}", 1.0 - target_significance)
        .parse()
        .expect("formatted float parses");
    let ratio = alpha / p_obs;
    let below_unity = ratio < 1.0;
    if below_unity {
        log::warn!("p-value {p_obs} >= 1 - {target_significance}: ratio bound {ratio} is below 1");
    }
    Ok(RatioBound { ratio, below_unity })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceResult {
    pub wins_a: usize,
    pub n: usize,
    pub p_value: f64,
    pub ratio_bound: RatioBound,
}

/// Sign test on per-day errors plus the ratio bound at `target_significance`.
pub fn compare_reports(
    a: &MetricsReport,
    b: &MetricsReport,
    target_significance: f64,
) -> Result<(Vec<PairedError>, SignificanceResult)> {
    let pairs = paired_errors(a, b)?;
    let flat: Vec<(f64, f64)> = pairs.iter().map(|p| (p.err_a, p.err_b)).collect();
    let test = sign_test(&flat)?;
    // p can be exactly 1 when a never wins; clamp into the open interval.
    let p = test.p_value.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let ratio_bound = bayes_ratio_bound(p, target_significance)?;
    Ok((
        pairs,
        SignificanceResult {
            wins_a: test.wins_a,
            n: test.n,
            p_value: test.p_value,
            ratio_bound,
        },
    ))
}
