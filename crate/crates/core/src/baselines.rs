//! Non-Kalman reference estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SavgolSpec {
    /// Odd window length.
    pub window: usize,
    pub degree: usize,
}

impl Default for SavgolSpec {
    fn default() -> Self {
        SavgolSpec { window: 5, degree: 2 }
    }
}

impl SavgolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) || self.degree >= self.window {
            return Err(Error::Validation(format!(
                "Savitzky-Golay needs an odd window and degree < window (window={}, degree={})",
                self.window, self.degree
            )));
        }
        Ok(())
    }

    /// Least-squares weights that evaluate the local polynomial at offset `at`
    /// from the window centre.
    pub fn coefficients_at(&self, at: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let half = (self.window / 2) as f64;
        let a = Matrix::from_fn(self.window, self.degree + 1, |i, j| (i as f64 - half).powi(j as i32));
        let gram = a.tr_mul(&a);
        let chol = nalgebra::Cholesky::new(gram).ok_or(Error::Singular("Savitzky-Golay normal equations"))?;
        let basis = Vector::from_fn(self.degree + 1, |j, _| at.powi(j as i32));
        // c = A (AᵀA)⁻¹ e(at)
        let coeffs = &a * chol.solve(&basis);
        Ok(coeffs.iter().copied().collect())
    }

    /// Convolution kernel (smoothed value at the window centre).
    pub fn coefficients(&self) -> Result<Vec<f64>> {
        self.coefficients_at(0.0)
    }
}

/// Smooths `series`, padding each end with its point reflection about the
/// end sample so that straight lines pass through unchanged.
pub fn savgol_filter(spec: &SavgolSpec, series: &[f64]) -> Result<Vec<f64>> {
    let c = spec.coefficients()?;
    if series.len() < spec.window {
        return Err(Error::InsufficientData {
            context: "Savitzky-Golay series",
            needed: spec.window,
            got: series.len(),
        });
    }
    let h = spec.window / 2;
    let n = series.len();
    let at = |i: isize| -> f64 {
        if i < 0 {
            2.0 * series[0] - series[(-i) as usize]
        } else if i as usize >= n {
            let j = 2 * (n - 1) - i as usize;
            2.0 * series[n - 1] - series[j]
        } else {
            series[i as usize]
        }
    };
    Ok((0..n as isize)
        .map(|k| c.iter().enumerate().map(|(j, w)| w * at(k + j as isize - h as isize)).sum())
        .collect())
}

/// The raw measurement, unchanged.
pub fn passive_step(z: &Vector) -> Vector {
    z.clone()
}
