//! Probabilistic PCA: `X ~ N(0, W Wᵀ + σ² I_d)` with `W` a `d × K` loading matrix.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::csvfmt::{fmt_f64, parse_f64};
use crate::error::{invalid, Error, Result};
use crate::gauss::{chol_log_det, SpdMatrix};
use crate::rng::NormalStream;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A `d × K` loading matrix with `1 ≤ K < d` and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix(DMatrix<f64>);

impl LoadingMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let (d, k) = w.shape();
        if k == 0 || k >= d {
            return Err(invalid(format!("loading matrix needs 1 <= K < d, got d={d}, K={k}")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(invalid("loading matrix has non-finite entries"));
        }
        Ok(LoadingMatrix(w))
    }

    pub fn zeros(d: usize, k: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(d, k))
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `W Wᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    /// `d` lines of `K` values under a `w1..wK` header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.0, out, Some(column_names("w", self.k())))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        Self::new(read_matrix_csv(input, true)?)
    }
}

/// Loading matrix plus the known isotropic noise variance σ².
#[derive(Debug, Clone, PartialEq)]
pub struct PpcaParams {
    w: LoadingMatrix,
    noise_var: f64,
}

impl PpcaParams {
    pub fn new(w: LoadingMatrix, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(invalid(format!("noise variance must be positive, got {noise_var}")));
        }
        Ok(PpcaParams { w, noise_var })
    }

    pub fn w(&self) -> &LoadingMatrix {
        &self.w
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn d(&self) -> usize {
        self.w.d()
    }
}

/// `n` observations in `R^d`, one per row. Assumed centered; never re-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: DMatrix<f64>,
}

impl Dataset {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(invalid("dataset needs at least one observation and one column"));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(invalid("dataset has non-finite entries"));
        }
        Ok(Dataset { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Scatter matrix `Σ_i X_i X_iᵀ`.
    pub fn scatter(&self) -> DMatrix<f64> {
        self.rows.transpose() * &self.rows
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.d() != other.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), found: other.d() });
        }
        let mut rows = DMatrix::zeros(self.n() + other.n(), self.d());
        rows.rows_mut(0, self.n()).copy_from(&self.rows);
        rows.rows_mut(self.n(), other.n()).copy_from(&other.rows);
        Ok(Dataset { rows })
    }

    /// One observation per line, `d` columns, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        write_matrix_csv(&self.rows, out, header.then(|| column_names("x", self.d())))
    }

    pub fn read_csv<R: Read>(input: R, has_header: bool) -> Result<Self> {
        Dataset::new(read_matrix_csv(input, has_header)?)
    }

    pub fn save(&self, path: &Path, header: bool) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, header)
    }

    pub fn load(path: &Path, has_header: bool) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, has_header)
    }
}

pub(crate) fn column_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

pub(crate) fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W, header: Option<Vec<String>>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if let Some(h) = header {
        wtr.write_record(&h)?;
    }
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn read_matrix_csv<R: Read>(input: R, has_header: bool) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).trim(csv::Trim::All).from_reader(input);
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        match ncols {
            None => ncols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::Parse(format!("row {} has {} columns, expected {c}", nrows + 1, rec.len())))
            }
            _ => {}
        }
        for field in rec.iter() {
            values.push(parse_f64(field)?);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| Error::Parse("empty CSV".into()))?;
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

/// `W Wᵀ + σ² I_d`.
pub fn covariance(params: &PpcaParams) -> SpdMatrix {
    SpdMatrix::symmetrized(covariance_raw(params.w.as_matrix(), params.noise_var))
}

pub(crate) fn covariance_raw(w: &DMatrix<f64>, noise_var: f64) -> DMatrix<f64> {
    let d = w.nrows();
    w * w.transpose() + DMatrix::identity(d, d) * noise_var
}

/// `n` i.i.d. draws `X_i = W Z_i + ε_i`, `Z_i ~ N(0, I_K)`, `ε_i ~ N(0, σ² I_d)`.
///
/// Per observation the stream yields `K` latent normals followed by `d` noise normals.
pub fn sample_dataset(params: &PpcaParams, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let (d, k) = (params.d(), params.w.k());
    let w = params.w.as_matrix();
    let sd = params.noise_var.sqrt();
    let mut stream = NormalStream::new(seed);
    let mut z = DVector::zeros(k);
    let mut rows = DMatrix::zeros(n, d);
    for i in 0..n {
        stream.fill_normal(z.as_mut_slice());
        let x = w * &z;
        for a in 0..d {
            rows[(i, a)] = x[a] + sd * stream.normal();
        }
    }
    Dataset::new(rows)
}

/// `(W Wᵀ + σ² I)⁻¹` by `K` rank-one Sherman-Morrison updates starting from `σ⁻² I`.
pub fn sm_inverse(params: &PpcaParams) -> SpdMatrix {
    SpdMatrix::symmetrized(sm_inverse_raw(params.w.as_matrix(), params.noise_var))
}

pub(crate) fn sm_inverse_raw(w: &DMatrix<f64>, noise_var: f64) -> DMatrix<f64> {
    let d = w.nrows();
    let mut m = DMatrix::identity(d, d) / noise_var;
    for wj in w.column_iter() {
        let z = &m * wj;
        let denom = 1.0 + wj.dot(&z);
        m.ger(-1.0 / denom, &z, &z, 1.0);
    }
    m
}

/// `log det(W Wᵀ + σ² I_d) = (d − K) log σ² + log det(Wᵀ W + σ² I_K)`.
pub fn log_det_cov(params: &PpcaParams) -> f64 {
    log_det_cov_raw(params.w.as_matrix(), params.noise_var)
}

pub(crate) fn log_det_cov_raw(w: &DMatrix<f64>, noise_var: f64) -> f64 {
    let (d, k) = w.shape();
    let small = w.transpose() * w + DMatrix::identity(k, k) * noise_var;
    let chol = Cholesky::new(small).expect("WᵀW + σ²I is positive definite for σ² > 0");
    (d - k) as f64 * noise_var.ln() + chol_log_det(&chol)
}

/// Exact Gaussian log-likelihood of the whole dataset.
pub fn log_likelihood(data: &Dataset, params: &PpcaParams) -> Result<f64> {
    if data.d() != params.d() {
        return Err(Error::DimensionMismatch { expected: params.d(), found: data.d() });
    }
    let m = sm_inverse_raw(params.w.as_matrix(), params.noise_var);
    let quad: f64 = data
        .rows
        .row_iter()
        .map(|row| {
            let x = row.transpose();
            (&m * &x).dot(&x)
        })
        .sum();
    let (n, d) = (data.n() as f64, data.d() as f64);
    Ok(-0.5 * n * d * LN_2PI - 0.5 * n * log_det_cov(params) - 0.5 * quad)
}

/// Log-likelihood from sufficient statistics `(n, S = Σ X_i X_iᵀ)`, given `M = C⁻¹`.
pub(crate) fn log_likelihood_from_scatter(n: usize, scatter: &DMatrix<f64>, w: &DMatrix<f64>, m: &DMatrix<f64>, noise_var: f64) -> f64 {
    let d = w.nrows() as f64;
    let n = n as f64;
    let quad: f64 = m.iter().zip(scatter.iter()).map(|(a, b)| a * b).sum();
    -0.5 * n * d * LN_2PI - 0.5 * n * log_det_cov_raw(w, noise_var) - 0.5 * quad
}
