//! Principal-component measurement compression and the PCA-fused filters.

mod joint;
mod kfpca;

use std::collections::VecDeque;

pub use joint::{joint_step, select_branch, Branch, JointEstimate, JointKind};
pub use kfpca::{kfpca_step_lin, kfpca_step_ls, ukfpca_step, PcaHistory};

use crate::error::{Error, Result};
use crate::numerics::{eig_sym, ensure_finite_vector, Matrix, Vector};

/// Bounded FIFO of timestamped measurement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    capacity: usize,
    entries: VecDeque<(f64, Vector)>,
}

impl MeasurementWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("window capacity must be at least 1".into()));
        }
        Ok(MeasurementWindow {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    /// Appends a measurement, evicting the oldest once full.
    pub fn push(&mut self, t: f64, z: Vector) -> Result<()> {
        ensure_finite_vector(&z, "window measurement")?;
        if !t.is_finite() {
            return Err(Error::NonFinite("window timestamp"));
        }
        if let Some((last_t, last_z)) = self.entries.back() {
            if t < *last_t {
                return Err(Error::Validation(format!("window timestamp {t} precedes {last_t}")));
            }
            if z.len() != last_z.len() {
                return Err(Error::dimension("window measurement", last_z.len(), z.len()));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((t, z));
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Measurement width, if any entry has been pushed.
    pub fn dim(&self) -> Option<usize> {
        self.entries.front().map(|(_, z)| z.len())
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &(f64, Vector)> {
        self.entries.iter()
    }

    /// Measurements oldest first.
    pub fn values(&self) -> impl ExactSizeIterator<Item = &Vector> {
        self.entries.iter().map(|(_, z)| z)
    }

    pub fn latest(&self) -> Option<&Vector> {
        self.entries.back().map(|(_, z)| z)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Retained principal directions of a measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub threshold: f64,
    /// Retained eigenvectors as columns, descending eigenvalue.
    pub components: Matrix,
    pub eigenvalues: Vector,
    pub mean: Vector,
}

impl PcaModel {
    /// Zero-mean identity rotation of width `dim`.
    pub fn identity(dim: usize) -> Self {
        PcaModel {
            threshold: 0.0,
            components: Matrix::identity(dim, dim),
            eigenvalues: Vector::from_element(dim, 1.0),
            mean: Vector::zeros(dim),
        }
    }

    /// Fits on samples given oldest first.
    pub fn fit_samples<'a, I>(samples: I, threshold: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        if !(threshold >= 0.0) || !threshold.is_finite() {
            return Err(Error::Validation(format!("PCA threshold {threshold} must be finite and ≥ 0")));
        }
        let samples: Vec<&Vector> = samples.into_iter().collect();
        if samples.len() < 2 {
            return Err(Error::InsufficientData {
                context: "pca_fit",
                needed: 2,
                got: samples.len(),
            });
        }
        let d = samples[0].len();
        if d == 0 {
            return Err(Error::dimension("pca_fit sample", "≥ 1", 0));
        }
        let n = samples.len() as f64;
        let mut mean = Vector::zeros(d);
        for s in &samples {
            if s.len() != d {
                return Err(Error::dimension("pca_fit sample", d, s.len()));
            }
            ensure_finite_vector(s, "pca_fit sample")?;
            mean += *s;
        }
        mean /= n;
        let mut cov = Matrix::zeros(d, d);
        for s in &samples {
            let c = *s - &mean;
            cov.ger(1.0 / n, &c, &c, 1.0);
        }
        crate::numerics::symmetrize(&mut cov);
        let eig = eig_sym(&cov)?;
        let keep = eig.values.iter().take_while(|&&v| v > threshold).count().max(1);
        Ok(PcaModel {
            threshold,
            components: eig.vectors.columns(0, keep).into_owned(),
            eigenvalues: eig.values.rows(0, keep).into_owned(),
            mean,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    /// `Vᵀ(z − mean)`; the caller guarantees the width.
    pub fn project_unchecked(&self, z: &Vector) -> Vector {
        self.components.tr_mul(&(z - &self.mean))
    }

    /// `Vᵀz`, the rotation without centring.
    pub fn rotate_unchecked(&self, z: &Vector) -> Vector {
        self.components.tr_mul(z)
    }

    /// `Vy`, mapping component coordinates back to measurement space.
    pub fn unrotate(&self, y: &Vector) -> Vector {
        &self.components * y
    }

    /// Measurement noise in component space, `VᵀRV`.
    pub fn project_noise(&self, r: &Matrix) -> Result<Matrix> {
        let d = self.input_dim();
        if r.shape() != (d, d) {
            return Err(Error::dimension("PCA noise projection", format!("{d}x{d}"), format!("{:?}", r.shape())));
        }
        let mut out = self.components.tr_mul(r) * &self.components;
        crate::numerics::symmetrize(&mut out);
        Ok(out)
    }
}

pub fn pca_fit(window: &MeasurementWindow, threshold: f64) -> Result<PcaModel> {
    PcaModel::fit_samples(window.values(), threshold)
}

pub fn pca_project(model: &PcaModel, z: &Vector) -> Result<Vector> {
    if z.len() != model.input_dim() {
        return Err(Error::dimension("pca_project", model.input_dim(), z.len()));
    }
    Ok(model.project_unchecked(z))
}

/// Keeps a measurement window and refits the PCA model on a fixed cadence.
///
/// Until the window first fills the model is refit on every push (identity
/// below two samples); afterwards once every `capacity` pushes.
#[derive(Debug, Clone)]
pub struct PcaTracker {
    window: MeasurementWindow,
    threshold: f64,
    model: PcaModel,
    since_fit: usize,
    filled: bool,
}

impl PcaTracker {
    pub fn new(dim: usize, capacity: usize, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) || !threshold.is_finite() {
            return Err(Error::Validation(format!("PCA threshold {threshold} must be finite and ≥ 0")));
        }
        Ok(PcaTracker {
            window: MeasurementWindow::new(capacity)?,
            threshold,
            model: PcaModel::identity(dim),
            since_fit: 0,
            filled: false,
        })
    }

    pub fn observe(&mut self, t: f64, z: &Vector) -> Result<&PcaModel> {
        if z.len() != self.model.input_dim() {
            return Err(Error::dimension("PCA tracker measurement", self.model.input_dim(), z.len()));
        }
        self.window.push(t, z.clone())?;
        self.since_fit += 1;
        let warming = !self.filled;
        self.filled |= self.window.is_full();
        if self.window.len() >= 2 && (warming || self.since_fit >= self.window.capacity()) {
            self.model = pca_fit(&self.window, self.threshold)?;
            self.since_fit = 0;
        }
        Ok(&self.model)
    }

    pub fn model(&self) -> &PcaModel {
        &self.model
    }

    pub fn window(&self) -> &MeasurementWindow {
        &self.window
    }
}
