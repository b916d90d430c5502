use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{LoadParams, ResidualModel};

/// Relative errors below this are clamped so the logarithm stays finite.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-300;

/// Geometric mean of `|a_j - b_j| / |b_j|` over column pairs. Columns whose
/// truth has zero norm are skipped with a warning.
pub fn geometric_mean_relative_error(predictions: &DMatrix<f64>, truths: &DMatrix<f64>) -> Result<f64> {
    if predictions.shape() != truths.shape() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    let mut log_sum = 0.0;
    let mut count = 0usize;
    let mut all_exact = true;
    for (j, (p, t)) in predictions.column_iter().zip(truths.column_iter()).enumerate() {
        let denom = t.norm();
        if denom == 0.0 {
            log::warn!("sample {j} has a zero-norm reference and is excluded from the metric");
            continue;
        }
        let rel = (p - t).norm() / denom;
        all_exact &= rel == 0.0;
        log_sum += rel.max(RELATIVE_ERROR_FLOOR).ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("no sample with a nonzero reference".into()));
    }
    if all_exact {
        return Ok(0.0);
    }
    Ok((log_sum / count as f64).exp())
}

/// Snapshot error `e_u`.
pub fn metric_e_u(predictions: &DMatrix<f64>, truths: &DMatrix<f64>) -> Result<f64> {
    geometric_mean_relative_error(predictions, truths)
}

/// Residual error `e_R`, comparing `R(u_j; mu)` with `R(u*_j; mu)` at one fixed load.
pub fn metric_e_r<M: ResidualModel + ?Sized>(
    model: &M,
    predictions: &DMatrix<f64>,
    truths: &DMatrix<f64>,
    mu: &LoadParams,
) -> Result<f64> {
    let pred_r = residual_columns(model, predictions, mu)?;
    let truth_r = residual_columns(model, truths, mu)?;
    geometric_mean_relative_error(&pred_r, &truth_r)
}

pub(crate) fn residual_columns<M: ResidualModel + ?Sized>(
    model: &M,
    states: &DMatrix<f64>,
    mu: &LoadParams,
) -> Result<DMatrix<f64>> {
    let cols = (0..states.ncols())
        .into_par_iter()
        .map(|j| model.residual(&states.column(j).into_owned(), mu))
        .collect::<Result<Vec<DVector<f64>>>>()?;
    if cols.is_empty() {
        return Ok(DMatrix::zeros(model.n_dofs(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::SpringChain;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn exact_predictions_score_zero() {
        let t = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(metric_e_u(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn geometric_mean_by_hand() {
        let truth = DMatrix::from_column_slice(1, 2, &[1.0, 1.0]);
        let pred = DMatrix::from_column_slice(1, 2, &[1.01, 1.0001]);
        assert!((metric_e_u(&pred, &truth).unwrap() - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn single_sample_is_its_relative_error() {
        let e = metric_e_u(&col(&[3.0, 4.0]), &col(&[3.0, 0.0])).unwrap();
        assert_eq!(e, 4.0 / 3.0);
    }

    #[test]
    fn one_exact_sample_hits_the_floor() {
        let truth = DMatrix::from_column_slice(1, 2, &[1.0, 1.0]);
        let pred = DMatrix::from_column_slice(1, 2, &[1.0, 1.5]);
        let e = metric_e_u(&pred, &truth).unwrap();
        assert!((e - (RELATIVE_ERROR_FLOOR * 0.5).sqrt()).abs() <= 1e-160);
    }

    #[test]
    fn zero_truths_are_excluded() {
        let truth = DMatrix::from_column_slice(1, 2, &[0.0, 2.0]);
        let pred = DMatrix::from_column_slice(1, 2, &[5.0, 2.2]);
        assert!((metric_e_u(&pred, &truth).unwrap() - 0.1).abs() < 1e-15);
        assert!(metric_e_u(&col(&[1.0]), &col(&[0.0])).is_err());
    }

    #[test]
    fn residual_metric_on_one_spring() {
        // R(u) = 2u + u³ - f with f = 1: R(0.5) = 0.125, R(0.6) = 0.416
        let chain = SpringChain::new(2.0, 1.0, 1);
        let mu = LoadParams::new(1.0, 0.0);
        let e = metric_e_r(&chain, &col(&[0.6]), &col(&[0.5]), &mu).unwrap();
        assert!((e - 0.291 / 0.125).abs() < 1e-12);
        assert_eq!(metric_e_r(&chain, &col(&[0.5]), &col(&[0.5]), &mu).unwrap(), 0.0);
    }
}
