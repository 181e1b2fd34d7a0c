//! Probabilistic factor models of the assigned causes.
//!
//! Each variant models the cause matrix with per-individual latent
//! vectors `z_i` and per-cause parameters, fits by a deterministic
//! seeded procedure, and exposes posterior inference over `z`,
//! reconstruction `E[A | z]`, and held-out log-likelihoods for
//! predictive checking.

mod gauss_linear;
mod lfa;
mod pf;
mod ppca;
mod quadratic;

pub use ppca::ppca_marginal_loglik_and_grad;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CauseKind, HoldoutMask};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Learned,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FactorVariant {
    /// Gaussian linear factors, zero mean: a_j | z ~ N(z' theta_j, sigma2),
    /// z ~ N(0, prior_var I).
    Ppca { k: usize, prior_var: f64, noise: NoiseSpec },
    /// Poisson factorization with gamma priors on z and theta.
    Pf { k: usize, shape: f64, rate: f64 },
    /// One-dimensional Gaussian factor with per-cause intercept and
    /// slope; unit noise; latent prior variance learned.
    Linear,
    /// Per-cause quadratic response in z with unit noise; MAP fit with
    /// a Laplace posterior over z.
    Quadratic { z_dim: usize },
    /// Binomial(2, logit^-1) likelihood with a Gaussian link layer of
    /// fixed variance, integrated by quadrature at prediction time.
    Lfa { k: usize, link_var: f64 },
}

impl FactorVariant {
    pub fn latent_dim(&self) -> usize {
        match self {
            FactorVariant::Ppca { k, .. } => *k,
            FactorVariant::Pf { k, .. } => *k,
            FactorVariant::Linear => 1,
            FactorVariant::Quadratic { z_dim } => *z_dim,
            FactorVariant::Lfa { k, .. } => *k,
        }
    }

    pub fn label(&self) -> String {
        match self {
            FactorVariant::Ppca { k, .. } => format!("ppca{k}"),
            FactorVariant::Pf { k, .. } => format!("pf{k}"),
            FactorVariant::Linear => "linear".into(),
            FactorVariant::Quadratic { z_dim } => format!("quadratic{z_dim}"),
            FactorVariant::Lfa { k, .. } => format!("lfa{k}"),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        let k = self.latent_dim();
        if k < 1 {
            return Err(Error::Spec("latent dimension must be >= 1".into()));
        }
        if k >= m {
            return Err(Error::Spec(format!(
                "latent dimension {k} must be smaller than the number of causes {m}"
            )));
        }
        match self {
            FactorVariant::Ppca { prior_var, noise, .. } => {
                if *prior_var <= 0.0 {
                    return Err(Error::Spec("prior_var must be positive".into()));
                }
                if let NoiseSpec::Fixed(v) = noise {
                    if *v <= 0.0 {
                        return Err(Error::Spec("noise variance must be positive".into()));
                    }
                }
            }
            FactorVariant::Pf { shape, rate, .. } => {
                if *shape <= 0.0 || *rate <= 0.0 {
                    return Err(Error::Spec("gamma hyperparameters must be positive".into()));
                }
            }
            FactorVariant::Quadratic { z_dim } => {
                if !(1..=3).contains(z_dim) {
                    return Err(Error::Spec("quadratic z_dim must be in {1,2,3}".into()));
                }
            }
            FactorVariant::Lfa { link_var, .. } => {
                if *link_var <= 0.0 {
                    return Err(Error::Spec("link_var must be positive".into()));
                }
            }
            FactorVariant::Linear => {}
        }
        Ok(())
    }

    fn requires_counts(&self) -> bool {
        matches!(self, FactorVariant::Pf { .. } | FactorVariant::Lfa { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { max_iter: 500, tol: 1e-8, learning_rate: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub variant: FactorVariant,
    pub fit: FitConfig,
}

impl FactorModelSpec {
    pub fn new(variant: FactorVariant) -> Self {
        FactorModelSpec { variant, fit: FitConfig::default() }
    }
}

/// Fitted per-cause parameters plus whatever the variant needs to
/// evaluate likelihoods and posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedParams {
    Ppca {
        theta: DMatrix<f64>,
        sigma2: f64,
        prior_var: f64,
    },
    Pf {
        theta_shape: DMatrix<f64>,
        theta_rate: DMatrix<f64>,
        prior_shape: f64,
        prior_rate: f64,
    },
    Linear {
        eta0: DVector<f64>,
        eta1: DVector<f64>,
        prior_var: f64,
    },
    Quadratic {
        eta0: DVector<f64>,
        eta1: DMatrix<f64>,
        eta2: DMatrix<f64>,
        prior_var: f64,
    },
    Lfa {
        theta: DMatrix<f64>,
        link_var: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum LatentPosterior {
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
    Gamma { shape: DVector<f64>, rate: DVector<f64> },
}

impl LatentPosterior {
    pub fn mean(&self) -> DVector<f64> {
        match self {
            LatentPosterior::Gaussian { mean, .. } => mean.clone(),
            LatentPosterior::Gamma { shape, rate } => shape.component_div(rate),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LatentPosterior::Gaussian { mean, .. } => mean.len(),
            LatentPosterior::Gamma { shape, .. } => shape.len(),
        }
    }

    pub fn sample(&self, gen: &mut impl Rng) -> DVector<f64> {
        match self {
            LatentPosterior::Gaussian { mean, cov } => {
                if cov.amax() == 0.0 {
                    return mean.clone();
                }
                let chol = Cholesky::new(cov.clone())
                    .unwrap_or_else(|| {
                        // fall back to a jittered covariance if at the
                        // edge of positive definiteness
                        let mut c = cov.clone();
                        for i in 0..c.nrows() {
                            c[(i, i)] += 1e-12;
                        }
                        Cholesky::new(c).expect("posterior covariance not PSD")
                    });
                let eps = DVector::from_fn(mean.len(), |_, _| {
                    StandardNormal.sample(gen)
                });
                mean + chol.l() * eps
            }
            LatentPosterior::Gamma { shape, rate } => DVector::from_fn(shape.len(), |k, _| {
                GammaDist::new(shape[k], 1.0 / rate[k]).unwrap().sample(gen)
            }),
        }
    }

    /// Scale posterior spread by `factor` around the mean, keeping the
    /// mean fixed. Used by diagnostics probes.
    pub fn scale_spread(&self, factor: f64) -> LatentPosterior {
        match self {
            LatentPosterior::Gaussian { mean, cov } => LatentPosterior::Gaussian {
                mean: mean.clone(),
                cov: cov * (factor * factor),
            },
            LatentPosterior::Gamma { shape, rate } => {
                // keep mean s/r, scale variance s/r^2 by factor^2
                let f2 = (factor * factor).max(1e-12);
                LatentPosterior::Gamma {
                    shape: shape / f2,
                    rate: rate / f2,
                }
            }
        }
    }
}

/// A fitted factor model: spec, parameters, the training-row posterior
/// summaries, and the per-iteration objective trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorFit {
    pub spec: FactorModelSpec,
    pub params: FittedParams,
    pub posteriors: Vec<LatentPosterior>,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub m: usize,
}

pub(crate) struct Observed<'a> {
    mask: Option<&'a DMatrix<bool>>,
    m: usize,
}

impl<'a> Observed<'a> {
    pub fn new(mask: Option<&'a HoldoutMask>, m: usize) -> Self {
        Observed { mask: mask.map(|h| &h.held), m }
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.map_or(true, |h| !h[(i, j)])
    }

    pub fn row(&self, i: usize) -> Vec<usize> {
        (0..self.m).filter(|&j| self.is_observed(i, j)).collect()
    }
}

fn check_kinds(variant: &FactorVariant, kinds: &[CauseKind]) -> Result<()> {
    if variant.requires_counts() {
        if kinds.iter().any(|k| *k == CauseKind::Real) {
            return Err(Error::Spec(format!(
                "{} requires count (or binary) cause columns",
                variant.label()
            )));
        }
    }
    Ok(())
}

/// Fit a factor model to the cause matrix. Entries flagged held-out in
/// `mask` are excluded from the objective. Deterministic given
/// `spec.fit.seed` (the `rng` argument scopes the seed into a stream).
pub fn fit(
    spec: &FactorModelSpec,
    causes: &DMatrix<f64>,
    kinds: &[CauseKind],
    mask: Option<&HoldoutMask>,
    rng: &RngStream,
) -> Result<FactorFit> {
    spec.variant.validate(causes.ncols())?;
    check_kinds(&spec.variant, kinds)?;
    let obs = Observed::new(mask, causes.ncols());
    match &spec.variant {
        FactorVariant::Ppca { .. } => ppca::fit(spec, causes, &obs, rng),
        FactorVariant::Pf { .. } => pf::fit(spec, causes, &obs, rng),
        FactorVariant::Linear => gauss_linear::fit(spec, causes, &obs, rng),
        FactorVariant::Quadratic { .. } => quadratic::fit(spec, causes, &obs, rng),
        FactorVariant::Lfa { .. } => lfa::fit(spec, causes, &obs, rng),
    }
}

impl FactorFit {
    /// Posterior over z for one cause row, using only the entries in
    /// `observed` (all entries when `None`).
    pub fn infer_z(&self, a_row: &DVector<f64>, observed: Option<&[usize]>) -> Result<LatentPosterior> {
        if a_row.len() != self.m {
            return Err(Error::Dimension(format!(
                "row length {} != {} causes",
                a_row.len(),
                self.m
            )));
        }
        let all: Vec<usize>;
        let obs: &[usize] = match observed {
            Some(o) => o,
            None => {
                all = (0..self.m).collect();
                &all
            }
        };
        if obs.is_empty() {
            return Err(Error::Argument("cannot infer z from a fully-masked row".into()));
        }
        match &self.params {
            FittedParams::Ppca { .. } => ppca::infer_z(self, a_row, obs),
            FittedParams::Pf { .. } => pf::infer_z(self, a_row, obs),
            FittedParams::Linear { .. } => gauss_linear::infer_z(self, a_row, obs),
            FittedParams::Quadratic { .. } => quadratic::infer_z(self, a_row, obs),
            FittedParams::Lfa { .. } => lfa::infer_z(self, a_row, obs),
        }
    }

    /// E[A | z] under the fitted model, full m-vector.
    pub fn reconstruct_causes(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.spec.variant.latent_dim() {
            return Err(Error::Dimension(format!(
                "z length {} != latent dim {}",
                z.len(),
                self.spec.variant.latent_dim()
            )));
        }
        Ok(DVector::from_fn(self.m, |j, _| self.mean_entry(z, j)))
    }

    /// E[A_j | z] for a single cause.
    pub fn mean_entry(&self, z: &DVector<f64>, j: usize) -> f64 {
        match &self.params {
            FittedParams::Ppca { theta, .. } => theta.row(j).transpose().dot(z),
            FittedParams::Pf { theta_shape, theta_rate, .. } => (0..z.len())
                .map(|k| z[k] * theta_shape[(j, k)] / theta_rate[(j, k)])
                .sum(),
            FittedParams::Linear { eta0, eta1, .. } => eta0[j] + eta1[j] * z[0],
            FittedParams::Quadratic { eta0, eta1, eta2, .. } => {
                eta0[j]
                    + (0..z.len())
                        .map(|l| eta1[(j, l)] * z[l] + eta2[(j, l)] * z[l] * z[l])
                        .sum::<f64>()
            }
            FittedParams::Lfa { theta, link_var } => {
                let loc = theta.row(j).transpose().dot(z);
                2.0 * crate::quadrature::gauss_hermite_expect(loc, link_var.sqrt(), 21, |x| {
                    1.0 / (1.0 + (-x).exp())
                })
            }
        }
    }

    /// log p(a_j = value | z) for a single cause.
    pub fn entry_loglik(&self, z: &DVector<f64>, j: usize, value: f64) -> f64 {
        match &self.params {
            FittedParams::Ppca { sigma2, .. } => {
                gaussian_loglik(value, self.mean_entry(z, j), *sigma2)
            }
            FittedParams::Linear { .. } | FittedParams::Quadratic { .. } => {
                gaussian_loglik(value, self.mean_entry(z, j), 1.0)
            }
            FittedParams::Pf { theta_shape, theta_rate, .. } => {
                let rate: f64 = (0..z.len())
                    .map(|k| z[k] * theta_shape[(j, k)] / theta_rate[(j, k)])
                    .sum();
                poisson_loglik(value, rate)
            }
            FittedParams::Lfa { theta, link_var } => {
                let loc = theta.row(j).transpose().dot(z);
                let p = crate::quadrature::gauss_hermite_expect(loc, link_var.sqrt(), 21, |x| {
                    binomial2_pmf(value, 1.0 / (1.0 + (-x).exp()))
                });
                if p <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    p.ln()
                }
            }
        }
    }

    /// Draw a_j | z from the fitted observation model.
    pub fn sample_entry(&self, z: &DVector<f64>, j: usize, gen: &mut impl Rng) -> f64 {
        match &self.params {
            FittedParams::Ppca { sigma2, .. } => {
                let e: f64 = StandardNormal.sample(gen);
                self.mean_entry(z, j) + sigma2.sqrt() * e
            }
            FittedParams::Linear { .. } | FittedParams::Quadratic { .. } => {
                let e: f64 = StandardNormal.sample(gen);
                self.mean_entry(z, j) + e
            }
            FittedParams::Pf { theta_shape, theta_rate, .. } => {
                let rate: f64 = (0..z.len())
                    .map(|k| z[k] * theta_shape[(j, k)] / theta_rate[(j, k)])
                    .sum();
                if rate <= 0.0 {
                    0.0
                } else {
                    rand_distr::Poisson::new(rate).unwrap().sample(gen)
                }
            }
            FittedParams::Lfa { theta, link_var } => {
                let loc = theta.row(j).transpose().dot(z);
                let e: f64 = StandardNormal.sample(gen);
                let pi = loc + link_var.sqrt() * e;
                let p = 1.0 / (1.0 + (-pi).exp());
                let mut a = 0.0;
                for _ in 0..2 {
                    if gen.gen::<f64>() < p {
                        a += 1.0;
                    }
                }
                a
            }
        }
    }

    /// Draw `s` samples from the posterior p(z | a_row observed entries).
    pub fn sample_z(
        &self,
        a_row: &DVector<f64>,
        observed: Option<&[usize]>,
        s: usize,
        rng: &RngStream,
    ) -> Result<Vec<DVector<f64>>> {
        if s < 1 {
            return Err(Error::Argument("need at least one sample".into()));
        }
        let posterior = self.infer_z(a_row, observed)?;
        let mut gen = rng.rng();
        Ok((0..s).map(|_| posterior.sample(&mut gen)).collect())
    }

    /// Monte Carlo estimate of E_Z[log p(a_held | Z) | a_obs]: the
    /// predictive-check discrepancy. `held` are (index, value) pairs.
    pub fn held_loglik(&self, z_samples: &[DVector<f64>], held: &[(usize, f64)]) -> Result<f64> {
        if z_samples.is_empty() {
            return Err(Error::Argument("need at least one z sample".into()));
        }
        if held.is_empty() {
            return Err(Error::Argument("need at least one held entry".into()));
        }
        let total: f64 = z_samples
            .iter()
            .map(|z| held.iter().map(|&(j, v)| self.entry_loglik(z, j, v)).sum::<f64>())
            .sum();
        Ok(total / z_samples.len() as f64)
    }

    /// Draw `r` replicated held-out vectors from the posterior
    /// predictive: z ~ p(z | a_obs), then a_held | z.
    pub fn sample_held_replicates(
        &self,
        posterior: &LatentPosterior,
        held: &[usize],
        r: usize,
        rng: &RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        if r < 1 {
            return Err(Error::Argument("need at least one replicate".into()));
        }
        let mut gen = rng.rng();
        Ok((0..r)
            .map(|_| {
                let z = posterior.sample(&mut gen);
                held.iter().map(|&j| self.sample_entry(&z, j, &mut gen)).collect()
            })
            .collect())
    }

    /// Per-entry conditional spread of A_j | Z at z: variance for the
    /// Gaussian families, Poisson entropy at the reconstructed rate for
    /// PF, Binomial entropy for LFA.
    pub fn conditional_spread(&self, z: &DVector<f64>, j: usize) -> f64 {
        match &self.params {
            FittedParams::Ppca { sigma2, .. } => *sigma2,
            FittedParams::Linear { .. } | FittedParams::Quadratic { .. } => 1.0,
            FittedParams::Pf { .. } => {
                let rate = self.mean_entry(z, j);
                poisson_entropy(rate)
            }
            FittedParams::Lfa { .. } => {
                let p = self.mean_entry(z, j) / 2.0;
                binomial2_entropy(p.clamp(0.0, 1.0))
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let doc = serde_json::json!({ "version": 1, "fit": self });
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<FactorFit> {
        let text = std::fs::read_to_string(path)?;
        let doc: serde_json::Value = serde_json::from_str(&text)?;
        let version = doc.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != 1 {
            return Err(Error::Validation(format!("unsupported fit file version {version}")));
        }
        Ok(serde_json::from_value(doc["fit"].clone())?)
    }
}

pub(crate) fn gaussian_loglik(value: f64, mean: f64, var: f64) -> f64 {
    let d = value - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

pub(crate) fn poisson_loglik(value: f64, rate: f64) -> f64 {
    if rate <= 0.0 {
        return if value == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    value * rate.ln() - rate - statrs::function::gamma::ln_gamma(value + 1.0)
}

fn binomial2_pmf(value: f64, p: f64) -> f64 {
    match value as i64 {
        0 => (1.0 - p) * (1.0 - p),
        1 => 2.0 * p * (1.0 - p),
        2 => p * p,
        _ => 0.0,
    }
}

fn poisson_entropy(rate: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    // sum until the tail mass is negligible
    let mut entropy = 0.0;
    let mut log_pmf = -rate; // k = 0
    let mut cum = 0.0;
    let mut k = 0u64;
    loop {
        let pmf = log_pmf.exp();
        if pmf > 0.0 {
            entropy -= pmf * log_pmf;
        }
        cum += pmf;
        if cum > 1.0 - 1e-12 || k > 10_000 {
            break;
        }
        k += 1;
        log_pmf += rate.ln() - (k as f64).ln();
    }
    entropy
}

fn binomial2_entropy(p: f64) -> f64 {
    [binomial2_pmf(0.0, p), binomial2_pmf(1.0, p), binomial2_pmf(2.0, p)]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum()
}

pub(crate) fn check_finite(objective: f64, iteration: usize) -> Result<()> {
    if objective.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            message: "objective is not finite".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_entropy_increases_with_rate_below_saturation() {
        assert!(poisson_entropy(0.5) < poisson_entropy(1.0));
        assert!(poisson_entropy(1.0) < poisson_entropy(5.0));
    }

    #[test]
    fn spec_validation_rejects_large_k() {
        let spec = FactorVariant::Ppca { k: 5, prior_var: 1.0, noise: NoiseSpec::Learned };
        assert!(spec.validate(5).is_err());
        assert!(spec.validate(6).is_ok());
    }
}
