//! Independent reference computations for integration tests. Nothing here calls the
//! closed forms under test; each oracle uses dense linear algebra, quadrature, or
//! plain Monte-Carlo.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ppca_elbo::rng::NormalStream;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn random_matrix(stream: &mut NormalStream, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * stream.normal())
}

/// `B Bᵀ + floor · I` with standard-normal `B`.
pub fn random_spd(stream: &mut NormalStream, d: usize, floor: f64) -> DMatrix<f64> {
    let b = random_matrix(stream, d, d, 1.0);
    &b * b.transpose() + DMatrix::identity(d, d) * floor
}

/// Log-determinant through LU.
pub fn dense_log_det(a: &DMatrix<f64>) -> f64 {
    let det = a.clone().lu().determinant();
    assert!(det > 0.0, "oracle expects a positive determinant");
    det.ln()
}

pub fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().try_inverse().expect("oracle expects an invertible matrix")
}

/// `Σ_i log N(x_i; 0, Σ)` with LU inverse and determinant.
pub fn dense_mvn_loglik(rows: &DMatrix<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = cov.nrows() as f64;
    let inv = dense_inverse(cov);
    let ld = dense_log_det(cov);
    rows.row_iter()
        .map(|r| {
            let x = r.transpose();
            -0.5 * (d * LN_2PI + ld + (x.transpose() * &inv * &x)[(0, 0)])
        })
        .sum()
}

pub fn mvn_logpdf(x: &DVector<f64>, inv: &DMatrix<f64>, log_det: f64) -> f64 {
    let d = x.len() as f64;
    -0.5 * (d * LN_2PI + log_det + (x.transpose() * inv * x)[(0, 0)])
}

/// Generic zero-mean KL computed by Monte-Carlo: mean and standard error of
/// `log p₀(X) − log p(X)` with `X ~ N(0, Σ₀)`.
pub fn mc_kl(sigma0: &DMatrix<f64>, sigma: &DMatrix<f64>, samples: usize, seed: u64) -> (f64, f64) {
    let d = sigma0.nrows();
    let chol = sigma0.clone().cholesky().unwrap().l();
    let (inv0, ld0) = (dense_inverse(sigma0), dense_log_det(sigma0));
    let (inv1, ld1) = (dense_inverse(sigma), dense_log_det(sigma));
    let mut stream = NormalStream::new(seed);
    let mut z = DVector::zeros(d);
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            stream.fill_normal(z.as_mut_slice());
            let x = &chol * &z;
            mvn_logpdf(&x, &inv0, ld0) - mvn_logpdf(&x, &inv1, ld1)
        })
        .collect();
    let m = ppca_elbo::McEstimate::from_samples(&vals);
    (m.estimate, m.std_err)
}

/// Dense Gaussian KL between `N(m0, S0)` and `N(m1, S1)`.
pub fn dense_gaussian_kl(m0: &DVector<f64>, s0: &DMatrix<f64>, m1: &DVector<f64>, s1: &DMatrix<f64>) -> f64 {
    let d = m0.len() as f64;
    let inv1 = dense_inverse(s1);
    let diff = m1 - m0;
    0.5 * ((&inv1 * s0).trace() + (diff.transpose() * &inv1 * &diff)[(0, 0)] - d + dense_log_det(s1) - dense_log_det(s0))
}

/// Trapezoid rule in log space on `[-L, L]` per axis, `L = 12` times the widest standard deviation.
fn log_trapezoid(log_f: impl Fn(&[f64]) -> f64, dims: usize, half_width: f64, points: usize) -> f64 {
    let h = 2.0 * half_width / (points - 1) as f64;
    let axis: Vec<f64> = (0..points).map(|i| -half_width + i as f64 * h).collect();
    let weight = |i: usize| -> f64 { if i == 0 || i == points - 1 { 0.5 } else { 1.0 } };
    let mut terms = Vec::new();
    match dims {
        1 => {
            for (i, &x) in axis.iter().enumerate() {
                terms.push(log_f(&[x]) + weight(i).ln());
            }
        }
        2 => {
            for (i, &x) in axis.iter().enumerate() {
                for (j, &y) in axis.iter().enumerate() {
                    terms.push(log_f(&[x, y]) + (weight(i) * weight(j)).ln());
                }
            }
        }
        _ => panic!("quadrature oracle supports one or two dimensions"),
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln() + dims as f64 * h.ln()
}

/// `(1/(α−1)) log ∫ p^α r^{1−α}` for diagonal covariances `p_var`, `r_var`, by tensor-grid quadrature.
pub fn renyi_quadrature_diag(alpha: f64, p_var: &[f64], r_var: &[f64], points: usize) -> f64 {
    let dims = p_var.len();
    let widest = p_var.iter().chain(r_var).cloned().fold(0.0, f64::max).sqrt();
    let log_normal = |x: f64, v: f64| -0.5 * (LN_2PI + v.ln() + x * x / v);
    let log_f = |x: &[f64]| {
        (0..dims)
            .map(|i| alpha * log_normal(x[i], p_var[i]) + (1.0 - alpha) * log_normal(x[i], r_var[i]))
            .sum::<f64>()
    };
    log_trapezoid(log_f, dims, 12.0 * widest, points) / (alpha - 1.0)
}

use ppca_elbo::variational::{elbo_estimate, elbo_gradient, ColumnGaussian, CovStructure, VariationalFamily};
use ppca_elbo::{Dataset, PriorSpec, TemperConfig};

/// Denominator floor for relative errors of near-zero gradient coordinates.
pub const FD_REL_FLOOR: f64 = 1e-3;

fn nudge(q: &VariationalFamily, j: usize, coord: FdCoord, delta: f64) -> VariationalFamily {
    let mut cols: Vec<ColumnGaussian> = q.columns().to_vec();
    let c = &cols[j];
    let (mut mean, mut factor) = (c.mean().clone(), c.factor().clone());
    match coord {
        FdCoord::Mean(a) => mean[a] += delta,
        FdCoord::Factor(a, b) => factor[(a, b)] += delta,
    }
    cols[j] = ColumnGaussian::new(mean, factor, c.structure()).unwrap();
    VariationalFamily::new(cols).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub enum FdCoord {
    Mean(usize),
    Factor(usize, usize),
}

/// Largest relative error between `elbo_gradient` and central differences of
/// `elbo_estimate` over every free coordinate, both under the seed in `cfg`.
pub fn fd_gradient_max_rel_err(data: &Dataset, q: &VariationalFamily, prior: &PriorSpec, cfg: &TemperConfig, h: f64) -> f64 {
    let g = elbo_gradient(data, q, prior, cfg).unwrap().total();
    let f = |q: &VariationalFamily| elbo_estimate(data, q, prior, cfg).unwrap().value;
    let mut worst: f64 = 0.0;
    for (j, c) in q.columns().iter().enumerate() {
        let d = c.dim();
        let mut coords: Vec<(FdCoord, f64)> = (0..d).map(|a| (FdCoord::Mean(a), g.mean[j][a])).collect();
        for a in 0..d {
            let lo = if c.structure() == CovStructure::Full { 0 } else { a };
            for b in lo..=a {
                coords.push((FdCoord::Factor(a, b), g.factor[j][(a, b)]));
            }
        }
        for (coord, analytic) in coords {
            let fd = (f(&nudge(q, j, coord, h)) - f(&nudge(q, j, coord, -h))) / (2.0 * h);
            worst = worst.max((analytic - fd).abs() / fd.abs().max(FD_REL_FLOOR));
        }
    }
    worst
}

/// Random family with means of scale 0.7 and factor diagonals in [0.2, 1.5].
pub fn random_family(stream: &mut NormalStream, d: usize, k: usize, structure: CovStructure) -> VariationalFamily {
    let cols = (0..k)
        .map(|_| {
            let mean = DVector::from_fn(d, |_, _| 0.7 * stream.normal());
            let factor = DMatrix::from_fn(d, d, |a, b| match (a == b, a > b, structure) {
                (true, _, _) => stream.uniform_in(0.2, 1.5),
                (false, true, CovStructure::Full) => 0.3 * stream.normal(),
                _ => 0.0,
            });
            ColumnGaussian::new(mean, factor, structure).unwrap()
        })
        .collect();
    VariationalFamily::new(cols).unwrap()
}
