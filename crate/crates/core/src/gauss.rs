//! Divergences between zero-mean Gaussians and matrix helpers.
//!
//! Log-determinants always come from a Cholesky factor, and a failed
//! factorization is how non-positive-definite inputs are reported.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{invalid, Error, Result};

/// Maximum tolerated `|A_ij - A_ji|` for a symmetric input.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Tempering / Rényi order, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Alpha(alpha))
        } else {
            Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// A symmetric matrix, stored symmetrized.
///
/// Positive definiteness is not checked at construction; operations that need
/// it factorize and fail with [`Error::NotPositiveDefinite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch { expected: entries.nrows(), found: entries.ncols() });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        let asymmetry = max_asymmetry(&entries);
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry });
        }
        Ok(Self::symmetrized(entries))
    }

    /// Internal constructor for matrices symmetric by construction.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let entries = (&m + m.transpose()) * 0.5;
        SpdMatrix { entries }
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix { entries: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub(crate) fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.entries.clone()).ok_or(Error::NotPositiveDefinite)
    }

    /// `log det` via the Cholesky factor.
    pub fn log_det(&self) -> Result<f64> {
        Ok(chol_log_det(&self.cholesky()?))
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn check_same_dim(a: &SpdMatrix, b: &SpdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

/// `KL(N(0, sigma0) || N(0, sigma))`.
pub fn kl_zero_mean_gaussian(sigma0: &SpdMatrix, sigma: &SpdMatrix) -> Result<f64> {
    check_same_dim(sigma0, sigma)?;
    let chol0 = sigma0.cholesky()?;
    let chol = sigma.cholesky()?;
    if sigma0 == sigma {
        return Ok(0.0);
    }
    let d = sigma.dim() as f64;
    let trace = chol.solve(sigma0.as_matrix()).trace();
    let kl = 0.5 * (trace - d + chol_log_det(&chol) - chol_log_det(&chol0));
    Ok(kl.max(0.0))
}

/// Rényi divergence of order `alpha` between `P = N(0, sigma_p)` and `R = N(0, sigma_r)`:
///
/// `D = log( det((1-a) Sp + a Sr) / (det Sp^(1-a) det Sr^a) ) / (2 (1 - a))`,
/// the closed form of `(1/(a-1)) log ∫ (dP/dR)^(a-1) dP`.
pub fn renyi_zero_mean_gaussian(alpha: Alpha, sigma_p: &SpdMatrix, sigma_r: &SpdMatrix) -> Result<f64> {
    check_same_dim(sigma_p, sigma_r)?;
    let a = alpha.get();
    let ld_p = sigma_p.log_det()?;
    let ld_r = sigma_r.log_det()?;
    if sigma_p == sigma_r {
        return Ok(0.0);
    }
    let mix = SpdMatrix::symmetrized(sigma_p.as_matrix() * (1.0 - a) + sigma_r.as_matrix() * a);
    let ld_mix = mix.log_det()?;
    let d = (ld_mix - (1.0 - a) * ld_p - a * ld_r) / (2.0 * (1.0 - a));
    Ok(d.max(0.0))
}

/// Entrywise clamp to `[-B², B²]`.
pub fn clip_entries(a: &DMatrix<f64>, bound: f64) -> Result<DMatrix<f64>> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(invalid(format!("clip bound must be positive and finite, got {bound}")));
    }
    let b2 = bound * bound;
    Ok(a.map(|v| v.clamp(-b2, b2)))
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Frobenius norm of `a - b`, squared.
pub fn frobenius_sq_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn spd(m: DMatrix<f64>) -> SpdMatrix {
        SpdMatrix::new(m).unwrap()
    }

    #[test]
    fn alpha_bounds() {
        assert!(Alpha::new(0.0).is_err());
        assert!(Alpha::new(1.0).is_err());
        assert!(Alpha::new(f64::NAN).is_err());
        assert!(Alpha::new(0.5).is_ok());
    }

    #[test]
    fn asymmetric_input_reports_magnitude() {
        let err = SpdMatrix::new(dmatrix![1.0, 0.5; 0.0, 1.0]).unwrap_err();
        match err {
            Error::NotSymmetric { asymmetry } => assert_eq!(asymmetry, 0.5),
            other => panic!("unexpected {other:?}"),
        }
        // Within tolerance: accepted and symmetrized.
        let m = SpdMatrix::new(dmatrix![1.0, 0.5 + 1e-12; 0.5, 1.0]).unwrap();
        assert_eq!(m.as_matrix()[(0, 1)], m.as_matrix()[(1, 0)]);
    }

    #[test]
    fn kl_identical_is_zero() {
        let i2 = SpdMatrix::identity(2);
        assert_eq!(kl_zero_mean_gaussian(&i2, &i2).unwrap(), 0.0);
    }

    #[test]
    fn kl_scaled_identity() {
        // (2 I, I): 0.5 (4 - 2 + 0 - 2 log 2) = 1 - log 2
        let kl = kl_zero_mean_gaussian(&spd(DMatrix::identity(2, 2) * 2.0), &SpdMatrix::identity(2)).unwrap();
        assert_relative_eq!(kl, 1.0 - 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(kl, 0.306853, epsilon = 1e-6);
    }

    #[test]
    fn kl_errors() {
        let i2 = SpdMatrix::identity(2);
        let i3 = SpdMatrix::identity(3);
        assert!(matches!(kl_zero_mean_gaussian(&i2, &i3), Err(Error::DimensionMismatch { .. })));
        let indefinite = spd(dmatrix![1.0, 2.0; 2.0, 1.0]);
        assert!(matches!(kl_zero_mean_gaussian(&indefinite, &i2), Err(Error::NotPositiveDefinite)));
        assert!(matches!(kl_zero_mean_gaussian(&i2, &indefinite), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn renyi_identical_is_zero() {
        let i = SpdMatrix::identity(4);
        assert_eq!(renyi_zero_mean_gaussian(Alpha::new(0.5).unwrap(), &i, &i).unwrap(), 0.0);
    }

    #[test]
    fn renyi_scalar_case() {
        let d = renyi_zero_mean_gaussian(Alpha::new(0.5).unwrap(), &spd(dmatrix![1.0]), &spd(dmatrix![2.0])).unwrap();
        assert_relative_eq!(d, (1.5 / 2f64.sqrt()).ln(), epsilon = 1e-14);
        assert_relative_eq!(d, 0.058891, epsilon = 1e-6);
    }

    #[test]
    fn renyi_errors() {
        let a = Alpha::new(0.3).unwrap();
        let i2 = SpdMatrix::identity(2);
        assert!(renyi_zero_mean_gaussian(a, &i2, &SpdMatrix::identity(1)).is_err());
        let bad = spd(dmatrix![0.0, 0.0; 0.0, 1.0]);
        assert!(matches!(renyi_zero_mean_gaussian(a, &bad, &i2), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn clip_examples() {
        let a = dmatrix![5.0, -5.0; 0.0, 1.0];
        assert_eq!(clip_entries(&a, 1.0).unwrap(), dmatrix![1.0, -1.0; 0.0, 1.0]);
        let inside = dmatrix![0.5, -3.9; 4.0, 0.0];
        assert_eq!(clip_entries(&inside, 2.0).unwrap(), inside);
        assert!(clip_entries(&a, 0.0).is_err());
        assert!(clip_entries(&a, f64::INFINITY).is_err());
    }

    #[test]
    fn spectral_norm_examples() {
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2)), 0.0);
        assert_relative_eq!(spectral_norm(&dmatrix![3.0, 0.0; 0.0, 1.0]), 3.0, epsilon = 1e-12);
    }
}
