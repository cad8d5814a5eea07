//! Penalized ELBO rank selection, clipped covariance estimators, and
//! evaluators for the consistency bounds.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::csvfmt::fmt_f64;
use crate::error::{invalid, Error, Result};
use crate::gauss::{clip_entries, frobenius_sq_diff, kl_zero_mean_gaussian, spectral_norm, Alpha};
use crate::ppca::{covariance, Dataset, PpcaParams};
use crate::rng::{derive_seed, NormalStream};
use crate::variational::{
    kl_to_prior, model_covariance, optimize_elbo, sample_loading, ColumnGaussian, CovStructure, ElboEstimate,
    PriorSpec, TemperConfig, VariationalFamily,
};
use crate::McEstimate;

/// Standard errors added to Monte-Carlo quantities in certificates and pass/fail checks.
pub const SE_SLACK: f64 = 3.0;

/// Prior weights `π_K` for `K = 1..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPrior {
    weights: Vec<f64>,
}

impl ModelPrior {
    /// Positive weights summing to at most one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("model prior needs at least one weight"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("model prior weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(invalid(format!("model prior weights sum to {total} > 1")));
        }
        Ok(ModelPrior { weights })
    }

    /// Like [`ModelPrior::new`] but requires `Σ π_K = 1` within `1e-12`.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("model prior weights sum to {total}, not 1")));
        }
        Self::new(weights)
    }

    pub fn uniform(k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(invalid("k_max must be at least 1"));
        }
        Self::new(vec![1.0 / k_max as f64; k_max])
    }

    /// `π_K`, one-based.
    pub fn weight(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.weights.get(i)).copied()
    }

    pub fn k_max(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `ELBO(K) − log(1/π_K)`.
pub fn penalized_score(elbo_value: f64, pi_k: f64) -> Result<f64> {
    if !(pi_k > 0.0 && pi_k.is_finite()) {
        return Err(invalid(format!("model weight must be positive, got {pi_k}")));
    }
    Ok(elbo_value - (1.0 / pi_k).ln())
}

/// Rank with the largest score; ties go to the smallest rank.
pub fn argmax_smallest_rank(scores: &[(usize, f64)]) -> Option<usize> {
    let mut sorted: Vec<&(usize, f64)> = scores.iter().filter(|(_, s)| !s.is_nan()).collect();
    sorted.sort_by_key(|(k, _)| *k);
    let mut best: Option<(usize, f64)> = None;
    for &(k, s) in sorted {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// A rank with its fitted ELBO (and family, when one was fitted), or the fit error.
pub type RankOutcome = (usize, Result<(ElboEstimate, Option<VariationalFamily>)>);

#[derive(Debug, Clone, Serialize)]
pub struct RankRecord {
    pub k: usize,
    pub elbo: ElboEstimate,
    pub penalty: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankFailure {
    pub k: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionEcho {
    pub k_max: usize,
    pub prior: PriorSpec,
    pub model_prior: Vec<f64>,
    pub temper: TemperConfig,
    pub generator: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub selected_k: usize,
    pub config: SelectionEcho,
    pub per_k: Vec<RankRecord>,
    pub failures: Vec<RankFailure>,
    /// Fitted families aligned with `per_k` (absent for injected ELBO values).
    #[serde(skip)]
    pub fits: Vec<Option<VariationalFamily>>,
}

impl SelectionReport {
    /// Scores per-rank outcomes and picks `K̂`. Ranks whose fit failed are recorded and skipped.
    pub fn assemble(
        outcomes: Vec<RankOutcome>,
        model_prior: &ModelPrior,
        config: SelectionEcho,
    ) -> Result<Self> {
        let mut per_k = Vec::new();
        let mut fits = Vec::new();
        let mut failures = Vec::new();
        for (k, outcome) in outcomes {
            let pi = model_prior.weight(k).ok_or_else(|| invalid(format!("no model weight for K={k}")))?;
            match outcome {
                Ok((elbo, fit)) => {
                    let score = penalized_score(elbo.value, pi)?;
                    per_k.push(RankRecord { k, elbo, penalty: (1.0 / pi).ln(), score });
                    fits.push(fit);
                }
                Err(e) => failures.push(RankFailure { k, error: e.to_string() }),
            }
        }
        let scores: Vec<(usize, f64)> = per_k.iter().map(|r| (r.k, r.score)).collect();
        let selected_k = argmax_smallest_rank(&scores).ok_or_else(|| {
            Error::AllFitsFailed(failures.iter().map(|f| format!("K={}: {}", f.k, f.error)).collect::<Vec<_>>().join("; "))
        })?;
        Ok(SelectionReport { selected_k, config, per_k, failures, fits })
    }

    pub fn record(&self, k: usize) -> Option<&RankRecord> {
        self.per_k.iter().find(|r| r.k == k)
    }

    pub fn fit(&self, k: usize) -> Option<&VariationalFamily> {
        self.per_k.iter().position(|r| r.k == k).and_then(|i| self.fits[i].as_ref())
    }

    pub fn selected_fit(&self) -> Option<&VariationalFamily> {
        self.fit(self.selected_k)
    }

    /// Key-value document with nested per-rank records.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Columns: `K,elbo,elbo_se,penalty,score,selected`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["K", "elbo", "elbo_se", "penalty", "score", "selected"])?;
        for r in &self.per_k {
            wtr.write_record([
                r.k.to_string(),
                fmt_f64(r.elbo.value),
                fmt_f64(r.elbo.std_err),
                fmt_f64(r.penalty),
                fmt_f64(r.score),
                u8::from(r.k == self.selected_k).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Fits every rank `1..=k_max` (in parallel, seed mixed with `K`) and selects
/// `argmax_K ELBO(K) − log(1/π_K)`.
pub fn select_model(
    data: &Dataset,
    k_max: usize,
    prior: &PriorSpec,
    model_prior: &ModelPrior,
    cfg: &TemperConfig,
) -> Result<SelectionReport> {
    if k_max == 0 || k_max >= data.d() {
        return Err(invalid(format!("k_max must satisfy 1 <= k_max < d, got {k_max} with d={}", data.d())));
    }
    if model_prior.k_max() < k_max {
        return Err(invalid(format!("model prior covers K <= {}, need {k_max}", model_prior.k_max())));
    }
    let outcomes: Vec<_> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let fit = optimize_elbo(data, k, prior, &cfg.with_seed(derive_seed(cfg.seed, &[k as u64])));
            (k, fit.map(|f| (f.elbo, Some(f.family))))
        })
        .collect();
    let echo = SelectionEcho {
        k_max,
        prior: *prior,
        model_prior: model_prior.weights[..k_max].to_vec(),
        temper: *cfg,
        generator: crate::rng::GENERATOR,
        version: crate::VERSION,
    };
    SelectionReport::assemble(outcomes, model_prior, echo)
}

fn check_draws(draws: usize) -> Result<()> {
    if draws == 0 {
        return Err(invalid("need at least one Monte-Carlo draw"));
    }
    Ok(())
}

/// `(clipped, unclipped)` squared Frobenius errors per draw.
pub fn clipped_error_draws(
    q: &VariationalFamily,
    truth: &PpcaParams,
    bound: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    check_draws(draws)?;
    if q.d() != truth.d() {
        return Err(Error::DimensionMismatch { expected: truth.d(), found: q.d() });
    }
    let target = truth.w().gram();
    let mut stream = NormalStream::new(seed);
    (0..draws)
        .map(|_| {
            let gram = sample_loading(q, &mut stream).gram();
            Ok((frobenius_sq_diff(&clip_entries(&gram, bound)?, &target), frobenius_sq_diff(&gram, &target)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedRisk {
    pub risk: McEstimate,
    /// Whether `‖W₀‖₂ ≤ B` held; the estimator assumes it.
    pub bound_satisfied: bool,
}

/// Monte-Carlo estimate of `∫ ‖clip_B(W Wᵀ) − W₀ W₀ᵀ‖_F² q(dW)`.
pub fn clipped_risk(q: &VariationalFamily, truth: &PpcaParams, bound: f64, draws: usize, seed: u64) -> Result<ClippedRisk> {
    let errs: Vec<f64> = clipped_error_draws(q, truth, bound, draws, seed)?.into_iter().map(|(c, _)| c).collect();
    Ok(ClippedRisk {
        risk: McEstimate::from_samples(&errs),
        bound_satisfied: spectral_norm(truth.w().as_matrix()) <= bound,
    })
}

/// `Σ̂ = (1/M) Σ_m clip_B(W^(m) W^(m)ᵀ) + σ² I`.
pub fn sigma_hat(q: &VariationalFamily, bound: f64, noise_var: f64, draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_draws(draws)?;
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(invalid("noise variance must be nonnegative"));
    }
    let d = q.d();
    let mut stream = NormalStream::new(seed);
    let mut acc = DMatrix::zeros(d, d);
    for _ in 0..draws {
        acc += clip_entries(&sample_loading(q, &mut stream).gram(), bound)?;
    }
    Ok(acc / draws as f64 + DMatrix::identity(d, d) * noise_var)
}

fn check_bound_inputs(r: f64, pi: f64, n: usize) -> Result<()> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid(format!("rate term must be finite and nonnegative, got {r}")));
    }
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(invalid(format!("model weight must lie in (0, 1], got {pi}")));
    }
    if n == 0 {
        return Err(invalid("sample size must be positive"));
    }
    Ok(())
}

/// `((1+α)/(1−α)) r_n + log(1/π_{K₀}) / (n (1−α))`.
pub fn theorem1_bound(r_n: f64, pi_k0: f64, alpha: Alpha, n: usize) -> Result<f64> {
    check_bound_inputs(r_n, pi_k0, n)?;
    let a = alpha.get();
    Ok((1.0 + a) / (1.0 - a) * r_n + (1.0 / pi_k0).ln() / (n as f64 * (1.0 - a)))
}

/// Per-model inputs to the misspecified-case oracle bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelTerms {
    /// `KL(P⁰, P_{θ*_K})`.
    pub kl_bias: f64,
    pub r_kn: f64,
    pub pi_k: f64,
}

/// `min_K (α/(1−α)) kl_bias + ((1+α)/(1−α)) r_{K,n} + log(1/π_K)/(n(1−α))`.
pub fn theorem2_bound(terms: &[ModelTerms], alpha: Alpha, n: usize) -> Result<f64> {
    if terms.is_empty() {
        return Err(invalid("need at least one model"));
    }
    let a = alpha.get();
    terms.iter().try_fold(f64::INFINITY, |best, t| {
        if !(t.kl_bias >= 0.0 && t.kl_bias.is_finite()) {
            return Err(invalid(format!("kl_bias must be finite and nonnegative, got {}", t.kl_bias)));
        }
        let v = a / (1.0 - a) * t.kl_bias + theorem1_bound(t.r_kn, t.pi_k, alpha, n)?;
        Ok(best.min(v))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    /// `∫ KL(P⁰, P_W) ρ(dW)` by Monte-Carlo.
    pub kl_integral: McEstimate,
    /// `KL(ρ, Π_{K₀}) / n`, exact.
    pub kl_rho_prior_over_n: f64,
    /// `max(kl_integral + 3 SE, kl_rho_prior_over_n)`.
    pub r_n_certified: f64,
}

/// The witness `ρ = ⊗_j N(W₀_j, I_d / (d n²))` for the true rank.
pub fn witness_family(truth: &PpcaParams, n: usize) -> Result<VariationalFamily> {
    if n == 0 {
        return Err(invalid("sample size must be positive"));
    }
    let d = truth.d();
    let scale = 1.0 / (n as f64 * (d as f64).sqrt());
    let cols = truth
        .w()
        .as_matrix()
        .column_iter()
        .map(|c| ColumnGaussian::isotropic(c.clone_owned(), scale, CovStructure::Diagonal))
        .collect::<Result<Vec<_>>>()?;
    VariationalFamily::new(cols)
}

/// Evaluates both prior-mass conditions at the witness and returns a conservative `r_n`.
pub fn assumption1_certificate(truth: &PpcaParams, prior: &PriorSpec, n: usize, mc_samples: usize, seed: u64) -> Result<Certificate> {
    if mc_samples < 100 {
        return Err(invalid(format!("certificate needs at least 100 draws, got {mc_samples}")));
    }
    let rho = witness_family(truth, n)?;
    let target = covariance(truth);
    let mut stream = NormalStream::new(seed);
    let kls = (0..mc_samples)
        .map(|_| {
            let w = sample_loading(&rho, &mut stream);
            kl_zero_mean_gaussian(&target, &model_covariance(w.as_matrix(), truth.noise_var()))
        })
        .collect::<Result<Vec<_>>>()?;
    let kl_integral = McEstimate::from_samples(&kls);
    let kl_rho_prior_over_n = kl_to_prior(&rho, prior) / n as f64;
    let r_n_certified = (kl_integral.estimate + SE_SLACK * kl_integral.std_err).max(kl_rho_prior_over_n);
    Ok(Certificate { kl_integral, kl_rho_prior_over_n, r_n_certified })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppca::LoadingMatrix;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn alpha(a: f64) -> Alpha {
        Alpha::new(a).unwrap()
    }

    #[test]
    fn score_examples() {
        assert_eq!(penalized_score(-100.0, 1.0).unwrap(), -100.0);
        assert_relative_eq!(penalized_score(-100.0, 0.5).unwrap(), -100.693147, epsilon = 1e-6);
        assert!(penalized_score(-1.0, 0.0).is_err());
        assert!(penalized_score(-1.0, -0.2).is_err());
    }

    #[test]
    fn model_prior_validation() {
        assert!(ModelPrior::new(vec![0.5, 0.6]).is_err());
        assert!(ModelPrior::new(vec![0.5, 0.0]).is_err());
        assert!(ModelPrior::new(vec![0.2, 0.2]).is_ok());
        assert!(ModelPrior::normalized(vec![0.2, 0.2]).is_err());
        assert!(ModelPrior::normalized(vec![0.25; 4]).is_ok());
        assert_eq!(ModelPrior::uniform(4).unwrap().weight(3), Some(0.25));
        assert_eq!(ModelPrior::uniform(4).unwrap().weight(0), None);
    }

    #[test]
    fn tie_goes_to_smallest_rank() {
        assert_eq!(argmax_smallest_rank(&[(1, 5.0), (2, 5.0), (3, 3.0)]), Some(1));
        assert_eq!(argmax_smallest_rank(&[(3, 5.0), (2, 5.0)]), Some(2));
        assert_eq!(argmax_smallest_rank(&[(1, 1.0), (2, 5.0)]), Some(2));
        assert_eq!(argmax_smallest_rank(&[]), None);
    }

    fn echo() -> SelectionEcho {
        SelectionEcho {
            k_max: 3,
            prior: PriorSpec::new(1.0, 1.0).unwrap(),
            model_prior: vec![1.0 / 3.0; 3],
            temper: TemperConfig::new(alpha(0.5), 0),
            generator: crate::rng::GENERATOR,
            version: crate::VERSION,
        }
    }

    fn injected(values: &[f64]) -> Vec<RankOutcome> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (i + 1, Ok((ElboEstimate { value: *v, std_err: 0.0, mc_samples: 1 }, None))))
            .collect()
    }

    #[test]
    fn injected_elbos_tie_break() {
        let r = SelectionReport::assemble(injected(&[5.0, 5.0, 3.0]), &ModelPrior::uniform(3).unwrap(), echo()).unwrap();
        assert_eq!(r.selected_k, 1);
        assert!(r.per_k.iter().all(|x| x.penalty >= 0.0));
    }

    #[test]
    fn uniform_constant_does_not_change_selection() {
        let values = [-12.0, -10.5, -10.7, -11.0];
        let mut picks = Vec::new();
        for c in [0.25, 0.1, 0.01] {
            let mp = ModelPrior::new(vec![c; 4]).unwrap();
            let mut e = echo();
            e.k_max = 4;
            picks.push(SelectionReport::assemble(injected(&values), &mp, e).unwrap().selected_k);
        }
        assert_eq!(picks, vec![2, 2, 2]);
    }

    #[test]
    fn failed_ranks_are_skipped() {
        let mut outcomes = injected(&[1.0, 9.0]);
        outcomes[1].1 = Err(invalid("boom"));
        let r = SelectionReport::assemble(outcomes, &ModelPrior::uniform(3).unwrap(), echo()).unwrap();
        assert_eq!(r.selected_k, 1);
        assert_eq!(r.failures.len(), 1);
        let all_failed = vec![(1, Err(invalid("x")))];
        assert!(matches!(
            SelectionReport::assemble(all_failed, &ModelPrior::uniform(3).unwrap(), echo()),
            Err(Error::AllFitsFailed(_))
        ));
    }

    #[test]
    fn report_serializations() {
        let r = SelectionReport::assemble(injected(&[-3.0, -2.0]), &ModelPrior::uniform(3).unwrap(), echo()).unwrap();
        let doc = r.to_toml().unwrap();
        assert!(doc.contains("selected_k = 2"), "{doc}");
        assert!(doc.contains("[[per_k]]"), "{doc}");
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "K,elbo,elbo_se,penalty,score,selected");
        assert!(lines[2].starts_with("2,") && lines[2].ends_with(",1"));
    }

    #[test]
    fn theorem1_examples() {
        assert_eq!(theorem1_bound(0.0, 1.0, alpha(0.3), 17).unwrap(), 0.0);
        assert_relative_eq!(theorem1_bound(0.1, 1.0, alpha(0.5), 9).unwrap(), 0.3, epsilon = 1e-15);
        assert_relative_eq!(theorem1_bound(0.1, 0.5, alpha(0.5), 100).unwrap(), 0.3 + 2f64.ln() / 50.0, epsilon = 1e-15);
        assert_relative_eq!(theorem1_bound(0.1, 0.5, alpha(0.5), 100).unwrap(), 0.313863, epsilon = 1e-6);
        assert!(theorem1_bound(-0.1, 0.5, alpha(0.5), 100).is_err());
        assert!(theorem1_bound(0.1, 1.5, alpha(0.5), 100).is_err());
        assert!(theorem1_bound(0.1, 0.5, alpha(0.5), 0).is_err());
    }

    #[test]
    fn theorem2_examples() {
        let t = |kl_bias, r_kn, pi_k| ModelTerms { kl_bias, r_kn, pi_k };
        assert_eq!(theorem2_bound(&[t(0.0, 0.0, 1.0)], alpha(0.5), 10).unwrap(), 0.0);
        let v = theorem2_bound(&[t(0.5, 0.01, 1.0), t(0.0, 0.2, 1.0)], alpha(0.5), 100).unwrap();
        assert_relative_eq!(v, 0.53, epsilon = 1e-14);
        let with_dominated =
            theorem2_bound(&[t(0.5, 0.01, 1.0), t(0.0, 0.2, 1.0), t(0.6, 0.3, 0.5)], alpha(0.5), 100).unwrap();
        assert_eq!(v, with_dominated);
        assert!(theorem2_bound(&[], alpha(0.5), 100).is_err());
    }

    #[test]
    fn certificate_kl_term_matches_closed_form() {
        let truth = PpcaParams::new(LoadingMatrix::zeros(2, 1).unwrap(), 1.0).unwrap();
        let prior = PriorSpec::new(1.0, 1.0).unwrap();
        let c = assumption1_certificate(&truth, &prior, 10, 200, 4).unwrap();
        assert_relative_eq!(c.kl_rho_prior_over_n, 0.430332, epsilon = 1e-6);
        assert!(c.r_n_certified >= c.kl_rho_prior_over_n);
        assert!(c.r_n_certified >= c.kl_integral.estimate);
        assert!(assumption1_certificate(&truth, &prior, 10, 99, 4).is_err());
    }

    #[test]
    fn certificate_zero_truth_integral_is_small() {
        let truth = PpcaParams::new(LoadingMatrix::zeros(2, 1).unwrap(), 1.0).unwrap();
        let prior = PriorSpec::new(1.0, 1.0).unwrap();
        let c = assumption1_certificate(&truth, &prior, 100, 1000, 9).unwrap();
        assert!(c.kl_integral.estimate < 1e-3, "{:?}", c.kl_integral);
    }

    #[test]
    fn point_mass_clipped_risk_and_sigma_hat() {
        let w0 = dmatrix![0.6; -0.3; 0.2];
        let truth = PpcaParams::new(LoadingMatrix::new(w0.clone()).unwrap(), 0.7).unwrap();
        let q = VariationalFamily::point_mass(&w0, CovStructure::Diagonal).unwrap();
        let r = clipped_risk(&q, &truth, 1.0, 50, 1).unwrap();
        assert!(r.bound_satisfied);
        assert!(r.risk.estimate < 1e-6);
        let s = sigma_hat(&q, 1.0, 0.7, 50, 2).unwrap();
        let expected = &w0 * w0.transpose() + DMatrix::identity(3, 3) * 0.7;
        assert!((s - expected).abs().max() < 1e-6);
    }
}
