//! Ensemble mean, pooled linear regression, and scoring of external predictions.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{regrid_like, EnsembleSample, GridField};
use crate::stats::MetricsReport;

/// Per-pixel mean over members. NaN cells are skipped; a cell missing in
/// every member stays NaN.
pub fn ensemble_mean(members: &[GridField]) -> Result<GridField> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble mean of zero members".into()))?;
    let g = first.geometry();
    if let Some(i) = members.iter().position(|m| m.geometry() != g) {
        return Err(Error::Shape(format!(
            "member {i} is not on the common grid"
        )));
    }
    let values = (0..first.values.len())
        .map(|c| {
            let (sum, n) = members
                .iter()
                .map(|m| m.values[c])
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
        .collect();
    GridField::new(g, values, "ensemble_mean")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub std_errors: Vec<f64>,
    pub intercept_std_error: f64,
}

/// Relative threshold on `|R_ii| / ||column i||` below which a column is
/// treated as a linear combination of the preceding ones.
const RANK_TOLERANCE: f64 = 1e-10;

/// Ordinary least squares `y = A·x + b` pooled over every (day, cell) where
/// the label and all members are present. Solved by Householder QR.
pub fn fit_linear(samples: &[EnsembleSample]) -> Result<LinearModel> {
    let n = samples
        .first()
        .map(|s| s.member_count())
        .ok_or_else(|| Error::InvalidArgument("linear fit on zero samples".into()))?;
    let p = n + 1;
    let mut rows: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for s in samples {
        s.validate()?;
        if s.member_count() != n {
            return Err(Error::Shape(format!(
                "{}: {} members, expected {n}",
                s.date,
                s.member_count()
            )));
        }
        for c in 0..s.label.values.len() {
            let y = s.label.values[c];
            if y.is_nan() || s.members.iter().any(|m| m.values[c].is_nan()) {
                continue;
            }
            rows.extend(s.members.iter().map(|m| m.values[c]));
            rows.push(1.0);
            targets.push(y);
        }
    }
    let obs = targets.len();
    if obs <= p {
        return Err(Error::InvalidArgument(format!(
            "linear fit needs more than {p} pooled observations, got {obs}"
        )));
    }
    let x = DMatrix::from_row_slice(obs, p, &rows);
    let y = DVector::from_vec(targets);
    let col_norms: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();

    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)].abs() <= RANK_TOLERANCE * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(Error::Collinearity { column: j });
        }
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::Collinearity { column: p - 1 })?;

    let resid = &y - &x * &beta;
    let sigma2 = resid.norm_squared() / (obs - p) as f64;
    // Var(beta) = sigma^2 (R^T R)^-1 = sigma^2 R^-1 R^-T.
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::Collinearity { column: p - 1 })?;
    let se: Vec<f64> = (0..p)
        .map(|i| (sigma2 * r_inv.row(i).norm_squared()).sqrt())
        .collect();

    Ok(LinearModel {
        coefficients: beta.iter().take(n).copied().collect(),
        intercept: beta[n],
        std_errors: se[..n].to_vec(),
        intercept_std_error: se[n],
    })
}

/// `Σ A_i·member_i + b` without clamping. A NaN in any member gives NaN.
pub fn predict_linear_unclamped(model: &LinearModel, members: &[GridField]) -> Result<GridField> {
    if members.len() != model.coefficients.len() {
        return Err(Error::Shape(format!(
            "model has {} coefficients, sample has {} members",
            model.coefficients.len(),
            members.len()
        )));
    }
    let first = &members[0];
    let g = first.geometry();
    if let Some(i) = members.iter().position(|m| m.geometry() != g) {
        return Err(Error::Shape(format!(
            "member {i} is not on the common grid"
        )));
    }
    let values = (0..first.values.len())
        .map(|c| {
            model
                .coefficients
                .iter()
                .zip(members)
                .fold(model.intercept, |acc, (a, m)| acc + a * m.values[c])
        })
        .collect();
    GridField::new(g, values, "linear_regression")
}

/// Linear prediction with negative precipitation clamped to zero.
pub fn predict_linear(model: &LinearModel, members: &[GridField]) -> Result<GridField> {
    let mut out = predict_linear_unclamped(model, members)?;
    let mut clamped = 0;
    for v in out.values.iter_mut().filter(|v| **v < 0.0) {
        *v = 0.0;
        clamped += 1;
    }
    if clamped > 0 {
        log::debug!("clamped {clamped} negative linear predictions to 0");
    }
    Ok(out)
}

/// `name,coefficient,standard_error` rows, intercept last.
pub fn coefficients_csv(model: &LinearModel, member_names: &[String]) -> String {
    let mut out = String::from("name,coefficient,standard_error\n");
    for (i, (a, se)) in model.coefficients.iter().zip(&model.std_errors).enumerate() {
        let name = member_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("member_{i}"));
        out.push_str(&format!("{name},{a},{se}\n"));
    }
    out.push_str(&format!(
        "intercept,{},{}\n",
        model.intercept, model.intercept_std_error
    ));
    out
}

/// Scores a dated external prediction against the given days.
///
/// Coarser predictions are upsampled to the label grid. Every evaluated day
/// must be present in `predictions`.
pub fn score_external(
    method: &str,
    predictions: &[(NaiveDate, GridField)],
    days: &[EnsembleSample],
) -> Result<MetricsReport> {
    let by_date: BTreeMap<NaiveDate, &GridField> =
        predictions.iter().map(|(d, g)| (*d, g)).collect();
    let missing: Vec<NaiveDate> = days
        .iter()
        .map(|s| s.date)
        .filter(|d| !by_date.contains_key(d))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Alignment { missing });
    }
    let regridded = days
        .iter()
        .map(|s| regrid_like(by_date[&s.date], &s.label.geometry()))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_days(
        method,
        days.iter()
            .zip(&regridded)
            .map(|(s, p)| (s.date, p.values.as_slice(), s.label.values.as_slice())),
    )
}

/// Scores a per-sample predictor against the labels of `days`.
pub fn score_with<F>(method: &str, days: &[EnsembleSample], mut predict: F) -> Result<MetricsReport>
where
    F: FnMut(&EnsembleSample) -> Result<GridField>,
{
    let preds = days.iter().map(&mut predict).collect::<Result<Vec<_>>>()?;
    MetricsReport::from_days(
        method,
        days.iter()
            .zip(&preds)
            .map(|(s, p)| (s.date, p.values.as_slice(), s.label.values.as_slice())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;

    fn f(v: Vec<f64>) -> GridField {
        let n = v.len();
        GridField::from_values(1, n, v).unwrap()
    }

    fn day(i: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2005, 3, i).unwrap()
    }

    #[test]
    fn mean_examples() {
        let m = ensemble_mean(&[f(vec![2.0; 3]), f(vec![4.0; 3])]).unwrap();
        assert_eq!(m.values, vec![3.0; 3]);
        let one = f(vec![1.0, 5.0]);
        assert_eq!(
            ensemble_mean(std::slice::from_ref(&one)).unwrap().values,
            one.values
        );
        let m = ensemble_mean(&[f(vec![f64::NAN, 1.0]), f(vec![6.0, 3.0])]).unwrap();
        assert_eq!(m.values, vec![6.0, 2.0]);
        assert!(ensemble_mean(&[]).is_err());
    }

    #[test]
    fn perfect_affine_fit() {
        let samples =
            vec![
                EnsembleSample::new(day(1), vec![f(vec![1.0, 2.0, 3.0])], f(vec![3.0, 5.0, 7.0]))
                    .unwrap(),
            ];
        let m = fit_linear(&samples).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.intercept - 1.0).abs() < 1e-12);
        assert!(m.std_errors[0] < 1e-10);
    }

    #[test]
    fn duplicated_member_is_collinear() {
        let x = f(vec![1.0, 2.0, 4.0, 8.0]);
        let s =
            EnsembleSample::new(day(1), vec![x.clone(), x], f(vec![1.0, 0.0, 2.0, 1.0])).unwrap();
        assert!(matches!(
            fit_linear(&[s]),
            Err(Error::Collinearity { column: 1 })
        ));
    }

    #[test]
    fn too_few_observations() {
        let s = EnsembleSample::new(day(1), vec![f(vec![1.0, 2.0])], f(vec![1.0, 2.0])).unwrap();
        assert!(matches!(fit_linear(&[s]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn prediction_examples() {
        let member = f(vec![-1.0, 2.0, 4.0]);
        let id = LinearModel {
            coefficients: vec![1.0],
            intercept: 0.0,
            std_errors: vec![0.0],
            intercept_std_error: 0.0,
        };
        assert_eq!(
            predict_linear_unclamped(&id, std::slice::from_ref(&member))
                .unwrap()
                .values,
            member.values
        );
        assert_eq!(
            predict_linear(&id, &[member]).unwrap().values,
            vec![0.0, 2.0, 4.0]
        );

        let constant = LinearModel {
            coefficients: vec![0.0, 0.0],
            intercept: 5.0,
            std_errors: vec![0.0; 2],
            intercept_std_error: 0.0,
        };
        let pair = [f(vec![2.0; 2]), f(vec![4.0; 2])];
        assert_eq!(
            predict_linear(&constant, &pair).unwrap().values,
            vec![5.0; 2]
        );
        let half = LinearModel {
            coefficients: vec![0.5, 0.5],
            ..constant.clone()
        };
        let half = LinearModel {
            intercept: 0.0,
            ..half
        };
        assert_eq!(
            predict_linear(&half, &pair).unwrap().values,
            ensemble_mean(&pair).unwrap().values
        );
        assert!(matches!(
            predict_linear(&half, &pair[..1]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn coefficient_report_layout() {
        let m = LinearModel {
            coefficients: vec![0.25, 0.5],
            intercept: 7.9,
            std_errors: vec![0.01, 0.02],
            intercept_std_error: 0.1,
        };
        let csv = coefficients_csv(&m, &["a".into(), "b".into()]);
        assert_eq!(
            csv,
            "name,coefficient,standard_error\na,0.25,0.01\nb,0.5,0.02\nintercept,7.9,0.1\n"
        );
    }

    fn labelled(i: u32, label: Vec<f64>) -> EnsembleSample {
        EnsembleSample::new(day(i), vec![f(label.clone())], f(label)).unwrap()
    }

    #[test]
    fn external_scores() {
        let days = vec![labelled(1, vec![1.0, 3.0]), labelled(2, vec![0.0, 4.0])];
        let exact: Vec<_> = days.iter().map(|s| (s.date, s.label.clone())).collect();
        assert_eq!(score_external("x", &exact, &days).unwrap().rmse_mm, 0.0);
        let shifted: Vec<_> = days
            .iter()
            .map(|s| {
                let mut g = s.label.clone();
                g.values.iter_mut().for_each(|v| *v += 2.0);
                (s.date, g)
            })
            .collect();
        assert!((score_external("x", &shifted, &days).unwrap().rmse_mm - 2.0).abs() < 1e-12);
        match score_external("x", &exact[..1], &days) {
            Err(Error::Alignment { missing }) => assert_eq!(missing, vec![day(2)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn external_prediction_is_regridded() {
        let geom = GridGeometry {
            rows: 3,
            cols: 3,
            lat0: 10.0,
            lon0: 20.0,
            dlat: 0.5,
            dlon: 0.5,
        };
        let label = GridField::constant(geom, 2.0, "obs");
        let s = EnsembleSample::new(day(1), vec![label.clone()], label).unwrap();
        let coarse = GridField::from_values(2, 2, vec![2.0; 4]).unwrap();
        let r = score_external("x", &[(day(1), coarse)], &[s]).unwrap();
        assert_eq!(r.rmse_mm, 0.0);
        assert_eq!(r.per_day[0].cells, 9);
    }
}
