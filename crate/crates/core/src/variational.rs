//! Mean-field Gaussian families over loading columns, the tempered ELBO, its
//! reparameterized gradient, and an Adam-based maximizer.
//!
//! The ELBO of a family `q` is `α E_q[ℓ_n(W)] − KL(q, Π)`, where `Π` puts an
//! independent `N(0, s² I_d)` prior on each column. The expectation is a
//! Monte-Carlo mean over draws `W_j = μ_j + L_j ε_j`; the KL term is exact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gauss::{renyi_zero_mean_gaussian, Alpha, SpdMatrix};
use crate::ppca::{covariance, log_likelihood_from_scatter, sm_inverse_raw, Dataset, LoadingMatrix, PpcaParams};
use crate::rng::{derive_seed, NormalStream};
use crate::McEstimate;

/// Smallest allowed diagonal entry of a covariance factor; a family whose
/// factors sit at the floor is treated as a point mass.
pub const SCALE_FLOOR: f64 = 1e-8;

const STREAM_RESTART: u64 = 0x5245_5354;
const STREAM_FINAL: u64 = 0x4649_4E41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovStructure {
    #[default]
    Diagonal,
    Full,
}

/// `N(μ, L Lᵀ)` on one column of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnGaussian {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    structure: CovStructure,
}

impl ColumnGaussian {
    pub fn new(mean: DVector<f64>, factor: DMatrix<f64>, structure: CovStructure) -> Result<Self> {
        let d = mean.len();
        if factor.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: factor.nrows() });
        }
        if mean.iter().chain(factor.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("column Gaussian has non-finite parameters"));
        }
        for a in 0..d {
            if factor[(a, a)] <= 0.0 {
                return Err(invalid("covariance factor needs a strictly positive diagonal"));
            }
            for b in (a + 1)..d {
                if factor[(a, b)] != 0.0 {
                    return Err(invalid("covariance factor must be lower triangular"));
                }
            }
            if structure == CovStructure::Diagonal {
                for b in 0..a {
                    if factor[(a, b)] != 0.0 {
                        return Err(invalid("diagonal structure forbids off-diagonal factor entries"));
                    }
                }
            }
        }
        Ok(ColumnGaussian { mean, factor, structure })
    }

    /// `N(mean, scale² I)`.
    pub fn isotropic(mean: DVector<f64>, scale: f64, structure: CovStructure) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * scale, structure)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn structure(&self) -> CovStructure {
        self.structure
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `K` independent column Gaussians, `1 ≤ K < d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalFamily {
    columns: Vec<ColumnGaussian>,
}

impl VariationalFamily {
    pub fn new(columns: Vec<ColumnGaussian>) -> Result<Self> {
        let k = columns.len();
        let d = columns.first().map(|c| c.dim()).ok_or_else(|| invalid("family needs at least one column"))?;
        if let Some(c) = columns.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: c.dim() });
        }
        if k >= d {
            return Err(invalid(format!("family needs K < d, got d={d}, K={k}")));
        }
        Ok(VariationalFamily { columns })
    }

    /// Every column equal to the prior `N(0, s² I)`.
    pub fn from_prior(d: usize, k: usize, prior: &PriorSpec, structure: CovStructure) -> Result<Self> {
        let s = prior.prior_var.sqrt();
        let cols = (0..k)
            .map(|_| ColumnGaussian::isotropic(DVector::zeros(d), s, structure))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cols)
    }

    /// Columns centered at the columns of `w` with factors at [`SCALE_FLOOR`].
    pub fn point_mass(w: &DMatrix<f64>, structure: CovStructure) -> Result<Self> {
        let cols = w
            .column_iter()
            .map(|c| ColumnGaussian::isotropic(c.clone_owned(), SCALE_FLOOR, structure))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cols)
    }

    pub fn columns(&self) -> &[ColumnGaussian] {
        &self.columns
    }

    pub fn d(&self) -> usize {
        self.columns[0].dim()
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    /// The matrix of column means.
    pub fn mean_loading(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.columns.iter().map(|c| c.mean.clone()).collect::<Vec<_>>())
    }

    /// Reorders columns; `perm[i]` is the source index of output column `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        if perm.len() != self.k() || perm.iter().any(|&p| p >= self.k() || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("not a permutation of the columns"));
        }
        Self::new(perm.iter().map(|&p| self.columns[p].clone()).collect())
    }
}

/// Fixed model constants: prior variance `s²` of each column and known noise variance `σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub prior_var: f64,
    pub noise_var: f64,
}

impl PriorSpec {
    pub fn new(prior_var: f64, noise_var: f64) -> Result<Self> {
        if !(prior_var > 0.0 && prior_var.is_finite()) {
            return Err(invalid(format!("prior variance must be positive, got {prior_var}")));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(invalid(format!("noise variance must be positive, got {noise_var}")));
        }
        Ok(PriorSpec { prior_var, noise_var })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Initial Adam step size.
    pub step_size: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Step size at the last iteration, as a fraction of `step_size` (geometric decay).
    pub final_step_fraction: f64,
    /// Draws for the post-optimization ELBO; defaults to `max(10 N, 500)`.
    pub final_samples: Option<usize>,
    pub structure: CovStructure,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            step_size: 5e-2,
            iterations: 2000,
            restarts: 3,
            final_step_fraction: 0.02,
            final_samples: None,
            structure: CovStructure::Diagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperConfig {
    pub alpha: Alpha,
    /// Monte-Carlo draws `N` per ELBO / gradient evaluation.
    pub mc_samples: usize,
    pub seed: u64,
    pub optimizer: OptimizerSettings,
}

impl TemperConfig {
    pub fn new(alpha: Alpha, seed: u64) -> Self {
        TemperConfig { alpha, mc_samples: 8, seed, optimizer: OptimizerSettings::default() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TemperConfig { seed, ..*self }
    }

    pub fn final_samples(&self) -> usize {
        self.optimizer.final_samples.unwrap_or((10 * self.mc_samples).max(500))
    }

    fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(invalid("mc_samples must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.step_size > 0.0 && o.step_size.is_finite()) {
            return Err(invalid("step_size must be positive"));
        }
        if !(o.final_step_fraction > 0.0 && o.final_step_fraction <= 1.0) {
            return Err(invalid("final_step_fraction must lie in (0, 1]"));
        }
        if o.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub value: f64,
    pub std_err: f64,
    pub mc_samples: usize,
}

/// `KL(q, Π)` in closed form.
pub fn kl_to_prior(q: &VariationalFamily, prior: &PriorSpec) -> f64 {
    let s2 = prior.prior_var;
    let s = s2.sqrt();
    let d = q.d() as f64;
    // Scaled by s so the value is exactly zero when L = s I and μ = 0.
    let total: f64 = q
        .columns
        .iter()
        .map(|c| {
            let trace: f64 = c.factor.iter().map(|v| (v / s).powi(2)).sum();
            let log_det: f64 = (0..c.dim()).map(|a| 2.0 * (c.factor[(a, a)] / s).ln()).sum();
            0.5 * (trace - d + c.mean.norm_squared() / s2 - log_det)
        })
        .sum();
    total.max(0.0)
}

fn loading_from_noise(q: &VariationalFamily, eps: &DMatrix<f64>) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(q.d(), q.k());
    for (j, c) in q.columns.iter().enumerate() {
        let col = &c.mean + &c.factor * eps.column(j);
        w.set_column(j, &col);
    }
    w
}

fn draw_noise(stream: &mut NormalStream, d: usize, k: usize) -> DMatrix<f64> {
    let mut eps = DMatrix::zeros(d, k);
    stream.fill_normal(eps.as_mut_slice());
    eps
}

/// One reparameterized draw `W_j = μ_j + L_j ε_j`, consuming `d K` normals column by column.
pub fn sample_loading(q: &VariationalFamily, stream: &mut NormalStream) -> LoadingMatrix {
    let eps = draw_noise(stream, q.d(), q.k());
    LoadingMatrix::new(loading_from_noise(q, &eps)).expect("family parameters are finite and K < d")
}

/// Dataset summary reused across every likelihood evaluation.
struct Evidence {
    n: usize,
    scatter: DMatrix<f64>,
    noise_var: f64,
}

impl Evidence {
    fn new(data: &Dataset, q: &VariationalFamily, prior: &PriorSpec) -> Result<Self> {
        if data.d() != q.d() {
            return Err(Error::DimensionMismatch { expected: q.d(), found: data.d() });
        }
        Ok(Evidence { n: data.n(), scatter: data.scatter(), noise_var: prior.noise_var })
    }

    fn log_likelihood(&self, w: &DMatrix<f64>) -> f64 {
        let m = sm_inverse_raw(w, self.noise_var);
        log_likelihood_from_scatter(self.n, &self.scatter, w, &m, self.noise_var)
    }

    /// `ℓ_n(W)` and `∂ℓ_n/∂W = (M S M − n M) W` with `M = (W Wᵀ + σ² I)⁻¹`.
    fn log_likelihood_and_grad(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let m = sm_inverse_raw(w, self.noise_var);
        let ll = log_likelihood_from_scatter(self.n, &self.scatter, w, &m, self.noise_var);
        let mw = &m * w;
        let grad = &m * (&self.scatter * &mw) - mw * self.n as f64;
        (ll, grad)
    }
}

/// Gradient with the shape of a family's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyGradient {
    pub mean: Vec<DVector<f64>>,
    /// Lower triangular; diagonal only for [`CovStructure::Diagonal`] columns.
    pub factor: Vec<DMatrix<f64>>,
}

impl FamilyGradient {
    fn zeros(q: &VariationalFamily) -> Self {
        let d = q.d();
        FamilyGradient {
            mean: vec![DVector::zeros(d); q.k()],
            factor: vec![DMatrix::zeros(d, d); q.k()],
        }
    }

    fn scale(&mut self, s: f64) {
        self.mean.iter_mut().for_each(|v| *v *= s);
        self.factor.iter_mut().for_each(|m| *m *= s);
    }

    fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.factor.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// ELBO gradient split into its two terms; the total is `likelihood − kl`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    /// Gradient of `α · (1/N) Σ ℓ_n(W^(l))`.
    pub likelihood: FamilyGradient,
    /// Gradient of `KL(q, Π)`.
    pub kl: FamilyGradient,
}

impl ElboGradient {
    pub fn total(&self) -> FamilyGradient {
        let mut out = self.likelihood.clone();
        for (o, k) in out.mean.iter_mut().zip(&self.kl.mean) {
            *o -= k;
        }
        for (o, k) in out.factor.iter_mut().zip(&self.kl.factor) {
            *o -= k;
        }
        out
    }
}

fn kl_gradient(q: &VariationalFamily, prior: &PriorSpec) -> FamilyGradient {
    let s2 = prior.prior_var;
    let s = s2.sqrt();
    let mut g = FamilyGradient::zeros(q);
    for (j, c) in q.columns.iter().enumerate() {
        g.mean[j] = &c.mean / s2;
        let d = c.dim();
        for a in 0..d {
            let lo = if c.structure == CovStructure::Full { 0 } else { a };
            for b in lo..=a {
                let mut v = c.factor[(a, b)] / s / s;
                if a == b {
                    v -= 1.0 / c.factor[(a, a)];
                }
                g.factor[j][(a, b)] = v;
            }
        }
    }
    g
}

fn summarize(alpha: f64, lls: &[f64], kl: f64) -> ElboEstimate {
    let mc = McEstimate::from_samples(lls);
    ElboEstimate { value: alpha * mc.estimate - kl, std_err: alpha * mc.std_err, mc_samples: lls.len() }
}

fn value_and_gradient(
    ev: &Evidence,
    q: &VariationalFamily,
    prior: &PriorSpec,
    alpha: f64,
    stream: &mut NormalStream,
    samples: usize,
) -> (ElboEstimate, ElboGradient) {
    let mut lik = FamilyGradient::zeros(q);
    let mut lls = Vec::with_capacity(samples);
    for _ in 0..samples {
        let eps = draw_noise(stream, q.d(), q.k());
        let w = loading_from_noise(q, &eps);
        let (ll, gw) = ev.log_likelihood_and_grad(&w);
        lls.push(ll);
        for (j, c) in q.columns.iter().enumerate() {
            let gj = gw.column(j);
            lik.mean[j] += gj;
            let ej = eps.column(j);
            for a in 0..q.d() {
                let lo = if c.structure == CovStructure::Full { 0 } else { a };
                for b in lo..=a {
                    lik.factor[j][(a, b)] += gj[a] * ej[b];
                }
            }
        }
    }
    lik.scale(alpha / samples as f64);
    let kl = kl_to_prior(q, prior);
    (summarize(alpha, &lls, kl), ElboGradient { likelihood: lik, kl: kl_gradient(q, prior) })
}

/// `α (1/N) Σ ℓ_n(W^(l)) − KL(q, Π)` with draws from the stream seeded by `cfg.seed`.
pub fn elbo_estimate(data: &Dataset, q: &VariationalFamily, prior: &PriorSpec, cfg: &TemperConfig) -> Result<ElboEstimate> {
    elbo_estimate_with(data, q, prior, cfg.alpha, cfg.mc_samples, cfg.seed)
}

fn elbo_estimate_with(
    data: &Dataset,
    q: &VariationalFamily,
    prior: &PriorSpec,
    alpha: Alpha,
    samples: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    if samples == 0 {
        return Err(invalid("mc_samples must be at least 1"));
    }
    let ev = Evidence::new(data, q, prior)?;
    let mut stream = NormalStream::new(seed);
    let lls: Vec<f64> = (0..samples)
        .map(|_| ev.log_likelihood(&loading_from_noise(q, &draw_noise(&mut stream, q.d(), q.k()))))
        .collect();
    Ok(summarize(alpha.get(), &lls, kl_to_prior(q, prior)))
}

/// Pathwise gradient of [`elbo_estimate`] under the same draws.
pub fn elbo_gradient(data: &Dataset, q: &VariationalFamily, prior: &PriorSpec, cfg: &TemperConfig) -> Result<ElboGradient> {
    if cfg.mc_samples == 0 {
        return Err(invalid("mc_samples must be at least 1"));
    }
    let ev = Evidence::new(data, q, prior)?;
    let mut stream = NormalStream::new(cfg.seed);
    Ok(value_and_gradient(&ev, q, prior, cfg.alpha.get(), &mut stream, cfg.mc_samples).1)
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else if u < -30.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

fn softplus_inv(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp_m1().ln()
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Unconstrained coordinates: per column the mean, then the raw diagonal
/// `u` with `L_aa = floor + softplus(u)`, then (full only) the strict lower
/// triangle row by row.
#[derive(Debug, Clone)]
struct Coords {
    d: usize,
    k: usize,
    structure: CovStructure,
    theta: Vec<f64>,
}

impl Coords {
    fn per_column(d: usize, structure: CovStructure) -> usize {
        match structure {
            CovStructure::Diagonal => 2 * d,
            CovStructure::Full => 2 * d + d * (d - 1) / 2,
        }
    }

    fn from_family(q: &VariationalFamily, structure: CovStructure) -> Self {
        let (d, k) = (q.d(), q.k());
        let mut theta = Vec::with_capacity(k * Self::per_column(d, structure));
        for c in &q.columns {
            theta.extend(c.mean.iter());
            theta.extend((0..d).map(|a| softplus_inv((c.factor[(a, a)] - SCALE_FLOOR).max(1e-300))));
            if structure == CovStructure::Full {
                for a in 0..d {
                    theta.extend((0..a).map(|b| c.factor[(a, b)]));
                }
            }
        }
        Coords { d, k, structure, theta }
    }

    fn to_family(&self) -> Result<VariationalFamily> {
        let (d, per) = (self.d, Self::per_column(self.d, self.structure));
        let cols = (0..self.k)
            .map(|j| {
                let t = &self.theta[j * per..(j + 1) * per];
                let mean = DVector::from_column_slice(&t[..d]);
                let mut factor = DMatrix::zeros(d, d);
                for a in 0..d {
                    factor[(a, a)] = SCALE_FLOOR + softplus(t[d + a]);
                }
                if self.structure == CovStructure::Full {
                    let mut idx = 2 * d;
                    for a in 0..d {
                        for b in 0..a {
                            factor[(a, b)] = t[idx];
                            idx += 1;
                        }
                    }
                }
                ColumnGaussian::new(mean, factor, self.structure)
            })
            .collect::<Result<Vec<_>>>()?;
        VariationalFamily::new(cols)
    }

    fn pull_back(&self, g: &FamilyGradient) -> Vec<f64> {
        let (d, per) = (self.d, Self::per_column(self.d, self.structure));
        let mut out = Vec::with_capacity(self.theta.len());
        for j in 0..self.k {
            let t = &self.theta[j * per..(j + 1) * per];
            out.extend(g.mean[j].iter());
            out.extend((0..d).map(|a| g.factor[j][(a, a)] * sigmoid(t[d + a])));
            if self.structure == CovStructure::Full {
                for a in 0..d {
                    out.extend((0..a).map(|b| g.factor[j][(a, b)]));
                }
            }
        }
        out
    }
}

/// Outcome of one ELBO maximization.
#[derive(Debug, Clone)]
pub struct ElboFit {
    pub family: VariationalFamily,
    /// High-precision ELBO at `family` (`N_final` draws).
    pub elbo: ElboEstimate,
    /// Per-iteration ELBO estimates (`N` draws each) along the ascent.
    pub trace: Vec<f64>,
    /// Index of the restart that produced `family`.
    pub restart: usize,
}

const MAX_HALVINGS: usize = 5;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Runs Adam ascent from `init`, drawing gradient noise from `seed`.
/// Returns the last iterate and the per-iteration ELBO trace.
pub fn ascend_from(
    data: &Dataset,
    init: &VariationalFamily,
    prior: &PriorSpec,
    cfg: &TemperConfig,
    seed: u64,
) -> Result<(VariationalFamily, Vec<f64>)> {
    cfg.validate()?;
    let ev = Evidence::new(data, init, prior)?;
    let opt = &cfg.optimizer;
    let mut coords = Coords::from_family(init, opt.structure);
    let mut last_good = coords.theta.clone();
    let mut stream = NormalStream::new(seed);
    let p = coords.theta.len();
    let (mut m, mut v) = (vec![0.0; p], vec![0.0; p]);
    let mut step_scale = 1.0;
    let mut halvings = 0;
    let mut trace = Vec::with_capacity(opt.iterations);
    let decay = opt.final_step_fraction.ln() / opt.iterations.max(1) as f64;
    let mut t = 0usize;
    while t < opt.iterations {
        let q = coords.to_family();
        let evaluated = q.as_ref().ok().map(|q| value_and_gradient(&ev, q, prior, cfg.alpha.get(), &mut stream, cfg.mc_samples));
        let (est, grad) = match evaluated {
            Some((est, grad)) if est.value.is_finite() && grad.likelihood.is_finite() && grad.kl.is_finite() => (est, grad),
            _ => {
                if halvings == MAX_HALVINGS {
                    let iterate = match q {
                        Ok(q) => q,
                        Err(_) => Coords { theta: last_good.clone(), ..coords.clone() }.to_family()?,
                    };
                    return Err(Error::NonFiniteElbo { iteration: t, retries: halvings, iterate: Box::new(iterate) });
                }
                halvings += 1;
                step_scale *= 0.5;
                coords.theta.copy_from_slice(&last_good);
                continue;
            }
        };
        trace.push(est.value);
        last_good.copy_from_slice(&coords.theta);
        let g = coords.pull_back(&grad.total());
        t += 1;
        let lr = opt.step_size * step_scale * (decay * (t - 1) as f64).exp();
        let (b1t, b2t) = (1.0 - ADAM_BETA1.powi(t as i32), 1.0 - ADAM_BETA2.powi(t as i32));
        for i in 0..p {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            coords.theta[i] += lr * (m[i] / b1t) / ((v[i] / b2t).sqrt() + ADAM_EPS);
        }
    }
    Ok((coords.to_family()?, trace))
}

/// Initial family for a restart: `μ_j ~ N(0, (s²/4) I)`, `L_j = (s/2) I`.
pub fn initial_family(d: usize, k: usize, prior: &PriorSpec, structure: CovStructure, seed: u64) -> Result<VariationalFamily> {
    let half_s = 0.5 * prior.prior_var.sqrt();
    let mut stream = NormalStream::new(seed);
    let cols = (0..k)
        .map(|_| {
            let mut mean = DVector::zeros(d);
            stream.fill_normal(mean.as_mut_slice());
            ColumnGaussian::isotropic(mean * half_s, half_s, structure)
        })
        .collect::<Result<Vec<_>>>()?;
    VariationalFamily::new(cols)
}

/// Maximizes the ELBO at rank `k` over `cfg.optimizer.restarts` seeded restarts
/// (run in parallel) and returns the restart with the highest final ELBO.
///
/// Exhausting the iteration budget is not an error. A restart that keeps
/// producing non-finite ELBOs is dropped; the error surfaces only if every
/// restart fails.
pub fn optimize_elbo(data: &Dataset, k: usize, prior: &PriorSpec, cfg: &TemperConfig) -> Result<ElboFit> {
    let d = data.d();
    if k == 0 || k >= d {
        return Err(invalid(format!("rank must satisfy 1 <= K < d, got K={k}, d={d}")));
    }
    cfg.validate()?;
    let final_seed = derive_seed(cfg.seed, &[STREAM_FINAL]);
    let outcomes: Vec<Result<ElboFit>> = (0..cfg.optimizer.restarts)
        .into_par_iter()
        .map(|r| {
            let rs = derive_seed(cfg.seed, &[STREAM_RESTART, r as u64]);
            let init = initial_family(d, k, prior, cfg.optimizer.structure, derive_seed(rs, &[0]))?;
            let (family, trace) = ascend_from(data, &init, prior, cfg, derive_seed(rs, &[1]))?;
            let elbo = elbo_estimate_with(data, &family, prior, cfg.alpha, cfg.final_samples(), final_seed)?;
            Ok(ElboFit { family, elbo, trace, restart: r })
        })
        .collect();
    let mut best: Option<ElboFit> = None;
    let mut first_err = None;
    for outcome in outcomes {
        match outcome {
            Ok(fit) if fit.elbo.value.is_finite() => {
                if best.as_ref().is_none_or(|b| fit.elbo.value > b.elbo.value) {
                    best = Some(fit);
                }
            }
            Ok(fit) => {
                first_err.get_or_insert(Error::NonFiniteElbo { iteration: cfg.optimizer.iterations, retries: 0, iterate: Box::new(fit.family) });
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart ran"))
}

/// Per-draw `D_α(P_W, P_{W₀})` for `M` draws `W ~ q`.
pub fn renyi_risk_draws(q: &VariationalFamily, truth: &PpcaParams, alpha: Alpha, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if q.d() != truth.d() {
        return Err(Error::DimensionMismatch { expected: truth.d(), found: q.d() });
    }
    if draws == 0 {
        return Err(invalid("need at least one draw"));
    }
    let target = covariance(truth);
    let mut stream = NormalStream::new(seed);
    (0..draws)
        .map(|_| {
            let w = sample_loading(q, &mut stream);
            let cov = covariance(&PpcaParams::new(w, truth.noise_var())?);
            renyi_zero_mean_gaussian(alpha, &cov, &target)
        })
        .collect()
}

/// Monte-Carlo estimate of `∫ D_α(P_W, P_{W₀}) q(dW)`.
pub fn posterior_renyi_risk(q: &VariationalFamily, truth: &PpcaParams, alpha: Alpha, draws: usize, seed: u64) -> Result<McEstimate> {
    Ok(McEstimate::from_samples(&renyi_risk_draws(q, truth, alpha, draws, seed)?))
}

/// Covariance of the model at one loading draw, for callers holding raw matrices.
pub fn model_covariance(w: &DMatrix<f64>, noise_var: f64) -> SpdMatrix {
    SpdMatrix::symmetrized(crate::ppca::covariance_raw(w, noise_var))
}

/// Serializable snapshot of a family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub d: usize,
    pub k: usize,
    pub structure: CovStructure,
    pub columns: Vec<ColumnRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnRecord {
    pub mean: Vec<f64>,
    /// Row-major lower-triangular factor.
    pub factor: Vec<Vec<f64>>,
}

impl From<&VariationalFamily> for FamilyRecord {
    fn from(q: &VariationalFamily) -> Self {
        FamilyRecord {
            d: q.d(),
            k: q.k(),
            structure: q.columns[0].structure,
            columns: q
                .columns
                .iter()
                .map(|c| ColumnRecord {
                    mean: c.mean.iter().copied().collect(),
                    factor: c.factor.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<&FamilyRecord> for VariationalFamily {
    type Error = Error;
    fn try_from(r: &FamilyRecord) -> Result<Self> {
        let cols = r
            .columns
            .iter()
            .map(|c| {
                let d = c.mean.len();
                if c.factor.len() != d || c.factor.iter().any(|row| row.len() != d) {
                    return Err(Error::Parse("factor must be d x d".into()));
                }
                let flat: Vec<f64> = c.factor.iter().flatten().copied().collect();
                ColumnGaussian::new(DVector::from_vec(c.mean.clone()), DMatrix::from_row_slice(d, d, &flat), r.structure)
            })
            .collect::<Result<Vec<_>>>()?;
        VariationalFamily::new(cols)
    }
}
