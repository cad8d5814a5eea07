//! Exact tempered posteriors on a finite parameter grid.
//!
//! Each atom carries a prior mass and the log-likelihood of the full dataset.
//! Everything is accumulated in log space after a single max-shift, so
//! `|α ℓ|` in the hundreds is fine.

use std::io::{Read, Write};

use crate::csvfmt::{fmt_f64, parse_f64};
use crate::error::{invalid, Error, Result};
use crate::gauss::Alpha;

/// Tolerance on `Σ p_i = 1` (and on supplied `ρ` vectors).
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    atoms: Vec<String>,
    prior_mass: Vec<f64>,
    loglik: Vec<f64>,
}

impl DiscreteModel {
    pub fn new(atoms: Vec<String>, prior_mass: Vec<f64>, loglik: Vec<f64>) -> Result<Self> {
        let len = atoms.len();
        if len == 0 {
            return Err(invalid("discrete model needs at least one atom"));
        }
        if prior_mass.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: prior_mass.len() });
        }
        if loglik.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: loglik.len() });
        }
        if prior_mass.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(invalid("prior masses must be positive"));
        }
        let total: f64 = prior_mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid(format!("prior masses sum to {total}, not 1")));
        }
        if loglik.iter().any(|l| !l.is_finite()) {
            return Err(invalid("log-likelihood values must be finite"));
        }
        let mut sorted: Vec<&String> = atoms.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("atom labels must be distinct"));
        }
        Ok(DiscreteModel { atoms, prior_mass, loglik })
    }

    /// Atoms labelled `0..len`.
    pub fn unlabeled(prior_mass: Vec<f64>, loglik: Vec<f64>) -> Result<Self> {
        let atoms = (0..prior_mass.len()).map(|i| i.to_string()).collect();
        Self::new(atoms, prior_mass, loglik)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn prior_mass(&self) -> &[f64] {
        &self.prior_mass
    }

    pub fn loglik(&self) -> &[f64] {
        &self.loglik
    }

    /// Same model with every log-likelihood shifted by `c`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.atoms.clone(), self.prior_mass.clone(), self.loglik.iter().map(|l| l + c).collect())
    }

    /// Reads `atom_label,prior_mass,loglik` rows (header required).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let expected = ["atom_label", "prior_mass", "loglik"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::Parse(format!("expected header {expected:?}, got {headers:?}")));
        }
        let (mut atoms, mut mass, mut ll) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Parse(format!("expected 3 columns, got {}", rec.len())));
            }
            atoms.push(rec[0].to_string());
            mass.push(parse_f64(&rec[1])?);
            ll.push(parse_f64(&rec[2])?);
        }
        Self::new(atoms, mass, ll)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["atom_label", "prior_mass", "loglik"])?;
        for i in 0..self.len() {
            wtr.write_record([self.atoms[i].clone(), fmt_f64(self.prior_mass[i]), fmt_f64(self.loglik[i])])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// `log p_i + α ℓ_i` per atom.
    fn log_weights(&self, alpha: Alpha) -> Vec<f64> {
        self.prior_mass.iter().zip(&self.loglik).map(|(p, l)| p.ln() + alpha.get() * l).collect()
    }
}

/// `log Σ exp(x_i)` with one max-shift.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `q_i ∝ p_i exp(α ℓ_i)`.
pub fn tempered_posterior(model: &DiscreteModel, alpha: Alpha) -> Vec<f64> {
    let lw = model.log_weights(alpha);
    let lse = log_sum_exp(&lw);
    lw.iter().map(|w| (w - lse).exp()).collect()
}

/// `log Σ p_i exp(α ℓ_i)`: the Donsker-Varadhan supremum.
pub fn log_tempered_evidence(model: &DiscreteModel, alpha: Alpha) -> f64 {
    log_sum_exp(&model.log_weights(alpha))
}

/// `α Σ ρ_i ℓ_i − Σ ρ_i log(ρ_i / p_i)`, with `0 log 0 = 0`.
pub fn discrete_elbo(model: &DiscreteModel, rho: &[f64], alpha: Alpha) -> Result<f64> {
    if rho.len() != model.len() {
        return Err(Error::DimensionMismatch { expected: model.len(), found: rho.len() });
    }
    if rho.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(invalid("rho entries must be finite and nonnegative"));
    }
    let total: f64 = rho.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("rho sums to {total}, not 1")));
    }
    let a = alpha.get();
    Ok(rho
        .iter()
        .zip(&model.prior_mass)
        .zip(&model.loglik)
        .filter(|((r, _), _)| **r > 0.0)
        .map(|((r, p), l)| r * (a * l - (r.ln() - p.ln())))
        .sum())
}
