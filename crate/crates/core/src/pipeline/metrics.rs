use crate::error::{Error, Result};
use crate::gp::PredictionResult;

fn check_lengths(predicted: &[f64], actual: &[f64], min: usize) -> Result<()> {
    if predicted.len() != actual.len() {
        return Err(Error::invalid(format!("{} predictions but {} truths", predicted.len(), actual.len())));
    }
    if actual.len() < min {
        return Err(Error::invalid(format!("need at least {min} values, got {}", actual.len())));
    }
    Ok(())
}

/// Mean squared error over the evaluation window.
pub fn mse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(predicted, actual, 1)?;
    let sse: f64 = predicted.iter().zip(actual).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(sse / actual.len() as f64)
}

/// Coefficient of determination with the mean taken over the same window as
/// the errors.
pub fn r2(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(predicted, actual, 2)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r2 is undefined for a constant truth series"));
    }
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of truths inside their prediction's ±2σ interval.
pub fn coverage2sigma(predictions: &[PredictionResult], actual: &[f64]) -> Result<f64> {
    if predictions.len() != actual.len() || actual.is_empty() {
        return Err(Error::invalid("coverage needs equal, non-zero lengths"));
    }
    let hits = predictions.iter().zip(actual).filter(|(p, y)| p.covers(**y)).count();
    Ok(hits as f64 / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        let mean = 7.0 / 3.0;
        assert!(r2(&[mean; 3], &y).unwrap().abs() < 1e-15);
        assert!(r2(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn coverage_examples() {
        let preds = [PredictionResult::new(1.0, 0.0), PredictionResult::new(2.0, 0.01)];
        assert_eq!(coverage2sigma(&preds, &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(coverage2sigma(&preds, &[1.0001, 2.1]).unwrap(), 0.5);
        assert_eq!(coverage2sigma(&preds, &[1.0, 2.3]).unwrap(), 0.5);
    }
}
