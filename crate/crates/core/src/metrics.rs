//! Restoration quality metrics.

use crate::error::{EpError, Result};

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EpError::DimensionMismatch(format!(
            "metric inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse(x: &[f64], reference: &[f64]) -> Result<f64> {
    check(x, reference)?;
    Ok(x.iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64)
}

pub fn rmse(x: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(mse(x, reference)?.sqrt())
}

/// Peak signal-to-noise ratio in dB for the given peak value.
pub fn psnr(x: &[f64], reference: &[f64], peak: f64) -> Result<f64> {
    let e = mse(x, reference)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Relative l2 error `||x - reference|| / ||reference||`.
pub fn relative_l2(x: &[f64], reference: &[f64]) -> Result<f64> {
    check(x, reference)?;
    let num: f64 = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_and_rmse() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 4.0, 3.0];
        assert!((mse(&a, &b).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((rmse(&a, &b).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn psnr_known_value() {
        // mse = 1 with peak 255: 10 log10(65025) = 48.1308... dB
        let a = vec![0.0; 4];
        let b = vec![1.0; 4];
        assert!((psnr(&a, &b, 255.0).unwrap() - 48.13080361).abs() < 1e-6);
        assert!(psnr(&a, &a, 255.0).unwrap().is_infinite());
    }

    #[test]
    fn relative_l2_scale() {
        let r = [3.0, 4.0];
        let x = [3.0, 4.5];
        assert!((relative_l2(&x, &r).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(psnr(&[], &[], 255.0).is_err());
    }
}
