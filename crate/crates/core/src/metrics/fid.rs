//! Fréchet distance between Gaussians fitted to two feature sets.

use image::RgbImage;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsResult};
use crate::backends::FeatureBackend;

/// Diagonal loading applied when a covariance matrix is singular.
pub const FID_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub value: f64,
    /// Covariances were singular and `FID_EPSILON` was added to the diagonals.
    pub regularized: bool,
}

fn moments(set: &[Vec<f64>], dim: usize) -> MetricsResult<(DVector<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(MetricsError::TooFewSamples(set.len()));
    }
    let n = set.len();
    let mut data = DMatrix::zeros(n, dim);
    for (i, row) in set.iter().enumerate() {
        if row.len() != dim {
            return Err(MetricsError::FeatureDimension {
                expected: dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite("features"));
        }
        data.row_mut(i).copy_from_slice(row);
    }
    let mean = data.row_mean().transpose();
    for mut row in data.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = data.transpose() * &data / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    // symmetrise first so round-off cannot push the solver off the real axis
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    let e = eigen(m).eigenvalues;
    let max = e.iter().cloned().fold(0.0f64, f64::max);
    let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
    min <= 1e-12 * max.max(1.0)
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = eigen(m);
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa Σb)^{1/2})` with unbiased covariances.
///
/// The trace of the matrix square root is taken through the symmetric form
/// `(Σa^{1/2} Σb Σa^{1/2})^{1/2}`, which has the same eigenvalues.
pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> MetricsResult<FidResult> {
    let dim = a
        .first()
        .map(Vec::len)
        .ok_or(MetricsError::TooFewSamples(0))?;
    if dim == 0 {
        return Err(MetricsError::FeatureDimension {
            expected: 1,
            actual: 0,
        });
    }
    let (mu_a, mut cov_a) = moments(a, dim)?;
    let (mu_b, mut cov_b) = moments(b, dim)?;
    let regularized = is_singular(&cov_a) || is_singular(&cov_b);
    if regularized {
        let eps = DMatrix::identity(dim, dim) * FID_EPSILON;
        cov_a += &eps;
        cov_b += &eps;
    }
    let root_a = sqrt_psd(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let tr_sqrt: f64 = eigen(&inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let diff = mu_a - mu_b;
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    if !value.is_finite() {
        return Err(MetricsError::NonFinite("fid"));
    }
    Ok(FidResult {
        value: value.max(0.0),
        regularized,
    })
}

/// FID between two image sets using the given feature extractor.
pub fn fid(
    set_a: &[RgbImage],
    set_b: &[RgbImage],
    features: &dyn FeatureBackend,
) -> MetricsResult<FidResult> {
    let extract = |set: &[RgbImage]| -> MetricsResult<Vec<Vec<f64>>> {
        set.iter()
            .map(|img| features.features(img).map_err(MetricsError::from))
            .collect()
    };
    fid_from_features(&extract(set_a)?, &extract(set_b)?)
}
