//! Fréchet distance between Gaussian fits of two latent sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::extractor::FeatureExtractor;
use crate::error::{HopError, Result};
use crate::pose::PoseSequence;

/// Added to every covariance diagonal.
pub const COVARIANCE_JITTER: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    /// Unbiased covariance plus [`COVARIANCE_JITTER`] on the diagonal.
    pub cov: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn fit(latents: &[Vec<f64>]) -> Result<Self> {
        let n = latents.len();
        if n < 2 {
            return Err(HopError::param(
                "fgd",
                format!("need at least 2 latents per set, got {n}"),
            ));
        }
        let f = latents[0].len();
        if f == 0 || latents.iter().any(|l| l.len() != f) {
            return Err(HopError::param(
                "fgd",
                "latents must share one non-zero width",
            ));
        }
        let x = DMatrix::from_fn(n, f, |i, j| latents[i][j]);
        let mean = DVector::from_fn(f, |j, _| x.column(j).mean());
        let centered = DMatrix::from_fn(n, f, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        for j in 0..f {
            cov[(j, j)] += COVARIANCE_JITTER;
        }
        Ok(GaussianSummary { mean, cov })
    }
}

/// Square root of a symmetric PSD matrix by eigendecomposition; negative
/// eigenvalues are clipped to zero.
pub fn matrix_sqrt_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(HopError::param("matrix_sqrt_psd", "matrix is not square"));
    }
    let asym = (s - s.transpose()).abs().max();
    if asym > SYMMETRY_TOL {
        return Err(HopError::param(
            "matrix_sqrt_psd",
            format!("matrix is asymmetric by {asym:e}"),
        ));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2·(Σ₁^½ Σ₂ Σ₁^½)^½)`. The inner product is the
/// symmetric form of `Σ₁Σ₂` and has the same trace root.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(HopError::param("fgd", "latent widths differ"));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let s1 = matrix_sqrt_psd(&a.cov)?;
    let inner = &s1 * &b.cov * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?;
    let d = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

pub fn fgd_from_latents(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(
        &GaussianSummary::fit(real)?,
        &GaussianSummary::fit(generated)?,
    )
}

pub fn fgd(
    real: &[PoseSequence],
    generated: &[PoseSequence],
    fx: &FeatureExtractor,
) -> Result<f64> {
    if real.len() < 2 || generated.len() < 2 {
        return Err(HopError::param(
            "fgd",
            "both sets need at least 2 sequences",
        ));
    }
    fgd_from_latents(&fx.encode(real)?, &fx.encode(generated)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_roots() {
        let r =
            matrix_sqrt_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-12 && (r[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(r[(0, 1)].abs() < 1e-12);
        let i = matrix_sqrt_psd(&DMatrix::identity(3, 3)).unwrap();
        assert!((i - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matrix_sqrt_psd(&m).is_err());
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.1, (i as f64).sin()])
            .collect();
        assert!(fgd_from_latents(&x, &x).unwrap().abs() < 1e-6);
    }

    #[test]
    fn singletons_are_rejected() {
        assert!(fgd_from_latents(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
    }
}
