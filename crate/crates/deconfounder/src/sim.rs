//! Semi-synthetic benchmark simulators with known ground truth: a two-cause
//! confounded regression and population-structured genotype/trait data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Binomial, Dirichlet, Distribution, Gamma, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{standardize, CauseKind, Dataset, StandardizeTarget};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::rng::RngStream;

/// Ground truth carried alongside a simulated dataset. Two-cause runs fill
/// the confounder fields; genotype runs fill the structure matrices and
/// variance shares.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    /// True causal coefficients, aligned with the dataset's cause columns.
    /// For the two-cause simulator these are the coefficients of the raw
    /// cause columns on the standardized outcome.
    pub beta_star: Vec<f64>,
    /// Per-individual value of the unobserved confounder (standardized
    /// a_age, or the rescaled group effect for genotype runs).
    pub confounder: Vec<f64>,
    /// Effect of the confounder on the outcome (two-cause only; the
    /// genotype confounder enters additively with coefficient 1).
    pub confounder_coef: Option<f64>,
    pub groups: Option<Vec<usize>>,
    /// Pre-rescaling group noise variances tau_k^2.
    pub group_variances: Option<Vec<f64>>,
    /// (gene, confounder, noise) variance shares the trait was scaled to.
    pub variance_shares: Option<[f64; 3]>,
    pub structure: Option<DMatrix<f64>>,
    pub loadings: Option<DMatrix<f64>>,
    pub frequencies: Option<DMatrix<f64>>,
}

impl SimTruth {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<SimTruth> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

// ---------------------------------------------------------------------------
// Two correlated causes with an unobserved confounder.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfounderLink {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoCauseSimConfig {
    pub n: usize,
    pub link: ConfounderLink,
    /// Strength of the confounder's influence on each cause; 0 removes the
    /// confounding entirely.
    pub link_strength: f64,
    /// Add a third cause that depends on the first (marital-status-like)
    /// cause rather than on the confounder.
    pub dependent_cause: bool,
    pub noise_sd: f64,
    /// Fix the confounder's effect on the outcome instead of drawing it.
    /// Evaluation suites that measure bias reduction set this so every
    /// replicate carries the same amount of confounding; `None` draws the
    /// coefficient from N(0,1) like the cause coefficients.
    pub confounder_coef: Option<f64>,
    pub seed: u64,
}

impl Default for TwoCauseSimConfig {
    fn default() -> Self {
        TwoCauseSimConfig {
            n: 1000,
            link: ConfounderLink::Quadratic,
            link_strength: 1.0,
            dependent_cause: false,
            noise_sd: 1.0,
            confounder_coef: None,
            seed: 0,
        }
    }
}

impl TwoCauseSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Spec("two-cause simulation needs n >= 10".into()));
        }
        if self.noise_sd <= 0.0 || !self.noise_sd.is_finite() {
            return Err(Error::Spec("noise sd must be positive".into()));
        }
        Ok(())
    }
}

fn sample_sd(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.mean();
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Simulate the confounded two-cause benchmark: an unobserved confounder
/// a_age drives two observed causes through a linear or quadratic link, the
/// outcome is linear in all three, and the confounder is then dropped from
/// the returned dataset. The causes are left on their natural scale (their
/// residual noise around the link is standard normal, matching the fixed
/// unit observation noise of the one-dimensional factor models; rescaling
/// them would leave those models no variance to explain). Only the outcome
/// is standardized, and `beta_star` is the true coefficient of each raw
/// cause on the standardized outcome.
pub fn simulate_two_cause(cfg: &TwoCauseSimConfig, rng: &RngStream) -> Result<(Dataset, SimTruth)> {
    cfg.validate()?;
    let mut gen = rng.substream(cfg.seed).rng();
    let n = cfg.n;

    let link = |x: f64| -> f64 {
        let base = match cfg.link {
            ConfounderLink::Linear => x,
            ConfounderLink::Quadratic => x + 0.7 * x * x,
        };
        cfg.link_strength * base
    };

    let a_age = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut gen));
    let a_mar = DVector::<f64>::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut gen);
        link(a_age[i]) + e
    });
    let a_exp = DVector::<f64>::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut gen);
        link(a_age[i]) + e
    });
    let a_dep = if cfg.dependent_cause {
        Some(DVector::<f64>::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut gen);
            a_mar[i] + e
        }))
    } else {
        None
    };

    let beta_mar: f64 = StandardNormal.sample(&mut gen);
    let beta_exp: f64 = StandardNormal.sample(&mut gen);
    let drawn_age: f64 = StandardNormal.sample(&mut gen);
    let beta_age = cfg.confounder_coef.unwrap_or(drawn_age);
    let beta_dep: f64 = StandardNormal.sample(&mut gen);

    let mut y = DVector::<f64>::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut gen);
        beta_mar * a_mar[i] + beta_exp * a_exp[i] + beta_age * a_age[i] + cfg.noise_sd * e
    });
    if let Some(dep) = &a_dep {
        for i in 0..n {
            y[i] += beta_dep * dep[i];
        }
    }

    let m = if cfg.dependent_cause { 3 } else { 2 };
    let mut causes = DMatrix::zeros(n, m);
    causes.set_column(0, &a_mar);
    causes.set_column(1, &a_exp);
    let mut names = vec!["mar".to_string(), "exp".to_string()];
    if let Some(dep) = &a_dep {
        causes.set_column(2, dep);
        names.push("mar_plus".to_string());
    }

    let d = Dataset::new(
        causes,
        y.clone(),
        None,
        vec![CauseKind::Real; m],
        names,
        vec![],
        "y".into(),
    )?;
    let (d, outcome_scale) = standardize(&d, StandardizeTarget::Outcome)?;

    // Carry the true coefficients onto the standardized-outcome scale:
    // beta_std_j = beta_j / sd(y).
    let sd_y = outcome_scale.sds[0];
    let mut raw = vec![beta_mar, beta_exp];
    if cfg.dependent_cause {
        raw.push(beta_dep);
    }
    let beta_star: Vec<f64> = raw.iter().map(|b| b / sd_y).collect();

    let sd_age = sample_sd(&a_age);
    let mean_age = a_age.mean();
    let truth = SimTruth {
        beta_star,
        confounder: a_age.iter().map(|&v| (v - mean_age) / sd_age).collect(),
        confounder_coef: Some(beta_age * sd_age / sd_y),
        groups: None,
        group_variances: None,
        variance_shares: None,
        structure: None,
        loadings: None,
        frequencies: None,
    };
    Ok((d, truth))
}

// ---------------------------------------------------------------------------
// Population-structured genotypes.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GwasGenerator {
    /// Three discrete populations; allele frequencies per population from
    /// the Balding-Nichols model.
    BaldingNichols,
    /// Admixed individuals: Dirichlet(alpha, alpha, alpha) membership.
    Psd { alpha: f64 },
    /// Individuals on the unit square; frequencies vary smoothly in space.
    Spatial { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrProfile {
    /// (gene, confounder, noise) = (0.1, 0.2, 0.7)
    Low,
    /// (gene, confounder, noise) = (0.4, 0.4, 0.2)
    High,
}

impl SnrProfile {
    pub fn shares(&self) -> [f64; 3] {
        match self {
            SnrProfile::Low => [0.1, 0.2, 0.7],
            SnrProfile::High => [0.4, 0.4, 0.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    Real,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GwasSimConfig {
    pub generator: GwasGenerator,
    pub n: usize,
    pub m: usize,
    /// Latent structure dimensions (populations / coordinates).
    pub d: usize,
    pub snr: SnrProfile,
    pub outcome: OutcomeKind,
    /// Fraction of SNPs with nonzero effects.
    pub sparsity: f64,
    pub causal_sd: f64,
    pub groups: usize,
    pub seed: u64,
    /// Optional (allele frequency, F_ST) table to draw per-SNP parameters
    /// from. When absent a synthetic surrogate is used: p ~ Uniform(0.05,
    /// 0.95), F_ST ~ Uniform(0.01, 0.2).
    pub freq_table: Option<Vec<(f64, f64)>>,
}

impl Default for GwasSimConfig {
    fn default() -> Self {
        GwasSimConfig {
            generator: GwasGenerator::BaldingNichols,
            n: 1000,
            m: 500,
            d: 3,
            snr: SnrProfile::Low,
            outcome: OutcomeKind::Real,
            sparsity: 0.01,
            causal_sd: 0.5,
            groups: 3,
            seed: 0,
        freq_table: None,
        }
    }
}

impl GwasSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 || self.m < 10 {
            return Err(Error::Spec("genotype simulation needs n, m >= 10".into()));
        }
        if self.d < 2 {
            return Err(Error::Spec("need at least 2 structure dimensions".into()));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::Spec("sparsity must be in (0, 1]".into()));
        }
        if self.causal_sd <= 0.0 {
            return Err(Error::Spec("causal sd must be positive".into()));
        }
        if self.groups < 2 {
            return Err(Error::Spec("need at least 2 confounder groups".into()));
        }
        match self.generator {
            GwasGenerator::Psd { alpha } if !(alpha > 0.0) => {
                Err(Error::Spec("PSD alpha must be positive".into()))
            }
            GwasGenerator::Spatial { tau } if !(tau > 0.0) => {
                Err(Error::Spec("spatial tau must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

const FREQ_CLIP: f64 = 1e-4;

/// Per-SNP Balding-Nichols draw: allele frequency in one population given
/// the ancestral frequency p and divergence F_ST.
fn balding_nichols(p: f64, fst: f64, gen: &mut impl Rng) -> f64 {
    let a = p * (1.0 - fst) / fst;
    let b = (1.0 - p) * (1.0 - fst) / fst;
    Beta::new(a, b).expect("positive Beta parameters").sample(gen)
}

fn snp_params(cfg: &GwasSimConfig, j: usize, gen: &mut impl Rng) -> Result<(f64, f64)> {
    match &cfg.freq_table {
        Some(table) => {
            if table.is_empty() {
                return Err(Error::Argument("frequency table is empty".into()));
            }
            let (p, fst) = table[j % table.len()];
            if !(p > 0.0 && p < 1.0) || !(fst > 0.0 && fst < 1.0) {
                return Err(Error::Validation(format!(
                    "frequency table row {}: p and fst must lie in (0,1)",
                    j % table.len()
                )));
            }
            Ok((p, fst))
        }
        None => Ok((
            Uniform::new(0.05, 0.95).sample(gen),
            Uniform::new(0.01, 0.2).sample(gen),
        )),
    }
}

/// Simulate a genotype matrix with latent population structure. Returns
/// (A, structure, loadings, F): per-individual structure (n×d), per-SNP
/// loadings (d×m), allele frequencies F = structure · loadings clipped away
/// from {0,1}, and genotypes A_ij ~ Binomial(2, F_ij).
pub fn simulate_genotypes(
    cfg: &GwasSimConfig,
    rng: &RngStream,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let root = rng.substream(cfg.seed);
    let (n, m, d) = (cfg.n, cfg.m, cfg.d);

    let mut structure = DMatrix::<f64>::zeros(n, d);
    {
        let mut gen = root.named("structure").rng();
        match cfg.generator {
            GwasGenerator::BaldingNichols => {
                // One-hot population membership, 60/210 : 60/210 : 90/210.
                // With d > 3 the extra populations get the residual mass
                // split evenly; the default d = 3 reproduces the classic mix.
                let mut probs = vec![60.0 / 210.0, 60.0 / 210.0, 90.0 / 210.0];
                probs.truncate(d);
                let total: f64 = probs.iter().sum();
                if probs.len() < d {
                    let rest = (1.0 - total) / (d - probs.len()) as f64;
                    probs.resize(d, rest);
                } else if probs.len() == d && (total - 1.0).abs() > 1e-12 {
                    for p in &mut probs {
                        *p /= total;
                    }
                }
                for i in 0..n {
                    let u: f64 = gen.gen();
                    let mut acc = 0.0;
                    let mut pick = d - 1;
                    for (k, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    structure[(i, pick)] = 1.0;
                }
            }
            GwasGenerator::Psd { alpha } => {
                let dir = Dirichlet::new(&vec![alpha; d])
                    .map_err(|e| Error::Spec(format!("Dirichlet parameters: {e}")))?;
                for i in 0..n {
                    let w = dir.sample(&mut gen);
                    for k in 0..d {
                        structure[(i, k)] = w[k];
                    }
                }
            }
            GwasGenerator::Spatial { tau } => {
                // Coordinates on the unit square plus an intercept component.
                let beta = Beta::new(tau, tau)
                    .map_err(|e| Error::Spec(format!("Beta parameters: {e}")))?;
                for i in 0..n {
                    for k in 0..d - 1 {
                        structure[(i, k)] = beta.sample(&mut gen);
                    }
                    structure[(i, d - 1)] = 1.0;
                }
            }
        }
    }

    let mut loadings = DMatrix::<f64>::zeros(d, m);
    {
        let mut gen = root.named("loadings").rng();
        match cfg.generator {
            GwasGenerator::BaldingNichols | GwasGenerator::Psd { .. } => {
                // Independent Balding-Nichols frequencies per population.
                for j in 0..m {
                    let (p, fst) = snp_params(cfg, j, &mut gen)?;
                    for k in 0..d {
                        loadings[(k, j)] = balding_nichols(p, fst, &mut gen);
                    }
                }
            }
            GwasGenerator::Spatial { .. } => {
                // Coordinate weights in [0, 0.45] plus a 0.05 baseline on the
                // intercept row, keeping F = structure * loadings in (0, 1).
                let u = Uniform::new(0.0, 0.5);
                for j in 0..m {
                    for k in 0..d - 1 {
                        loadings[(k, j)] = 0.9 * u.sample(&mut gen);
                    }
                    loadings[(d - 1, j)] = 0.05;
                }
            }
        }
    }

    let mut f = &structure * &loadings;
    for v in f.iter_mut() {
        *v = v.clamp(FREQ_CLIP, 1.0 - FREQ_CLIP);
    }

    let mut gen = root.named("genotypes").rng();
    let mut a = DMatrix::<f64>::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let draw = Binomial::new(2, f[(i, j)])
                .map_err(|e| Error::Validation(format!("binomial probability: {e}")))?
                .sample(&mut gen);
            a[(i, j)] = draw as f64;
        }
    }
    Ok((a, structure, loadings, f))
}

/// Cluster individuals by their structure rows into `k` confounder groups
/// (k-means++ seeded Lloyd iterations, 20 restarts). Labels are 1..=k.
pub fn assign_groups(structure: &DMatrix<f64>, k: usize, rng: &RngStream) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Argument("need at least 2 groups".into()));
    }
    let fit = kmeans(structure, k, 20, rng)?;
    Ok(fit.labels)
}

/// Trait through-line of the genotype benchmark: sparse SNP effects, a
/// group-level confounder equal to the group index, group-specific noise
/// with InvGamma(3,1) variances, each component rescaled so the empirical
/// standard deviations match the requested variance shares exactly.
pub fn simulate_trait(
    a: &DMatrix<f64>,
    groups: &[usize],
    cfg: &GwasSimConfig,
    rng: &RngStream,
) -> Result<(DVector<f64>, SimTruth)> {
    let (n, m) = a.shape();
    if groups.len() != n {
        return Err(Error::Dimension(format!(
            "{} group labels for {} individuals",
            groups.len(),
            n
        )));
    }
    let k = *groups.iter().max().ok_or_else(|| Error::Argument("no rows".into()))?;
    if groups.iter().any(|&g| g == 0) {
        return Err(Error::Argument("group labels must be 1-based".into()));
    }
    let [nu_gene, nu_conf, nu_noise] = cfg.snr.shares();

    let root = rng.substream(cfg.seed).named("trait");
    let mut gen = root.rng();

    let n_causal = ((cfg.sparsity * m as f64).ceil() as usize).max(1);
    let mut beta_star = vec![0.0; m];
    for b in beta_star.iter_mut().take(n_causal) {
        let e: f64 = StandardNormal.sample(&mut gen);
        *b = cfg.causal_sd * e;
    }

    let signal = DVector::<f64>::from_fn(n, |i, _| {
        (0..n_causal).map(|j| beta_star[j] * a[(i, j)]).sum()
    });
    let sd_signal = sample_sd(&signal);
    if sd_signal <= 0.0 || !sd_signal.is_finite() {
        return Err(Error::Validation(
            "SNP signal has zero variance; increase m or change the seed".into(),
        ));
    }

    let mut lambda = DVector::<f64>::from_fn(n, |i, _| groups[i] as f64);
    let sd_lambda = sample_sd(&lambda);
    if sd_lambda <= 0.0 {
        return Err(Error::Validation(
            "all individuals fell in one group; the confounder is degenerate".into(),
        ));
    }

    // tau_k^2 ~ InvGamma(3, 1), i.e. the reciprocal of a Gamma(3, rate 1).
    let gamma31 = Gamma::new(3.0, 1.0).expect("valid Gamma parameters");
    let group_vars: Vec<f64> = (0..k).map(|_| 1.0 / gamma31.sample(&mut gen)).collect();
    let mut eps = DVector::<f64>::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut gen);
        group_vars[groups[i] - 1].sqrt() * e
    });
    let sd_eps = sample_sd(&eps);
    if sd_eps <= 0.0 || !sd_eps.is_finite() {
        return Err(Error::Validation("degenerate noise draw".into()));
    }

    // Rescale the confounder and noise so the empirical sd ratios match the
    // requested variance shares exactly:
    //   sd(lambda)/sd(signal) = sqrt(nu_conf/nu_gene),
    //   sd(eps)/sd(signal)    = sqrt(nu_noise/nu_gene).
    let lambda_scale = (sd_signal / nu_gene.sqrt()) * (nu_conf.sqrt() / sd_lambda);
    let eps_scale = (sd_signal / nu_gene.sqrt()) * (nu_noise.sqrt() / sd_eps);
    lambda *= lambda_scale;
    eps *= eps_scale;

    let y = match cfg.outcome {
        OutcomeKind::Real => &signal + &lambda + &eps,
        OutcomeKind::Binary => DVector::from_fn(n, |i, _| {
            let p = 1.0 / (1.0 + (signal[i] + lambda[i] + eps[i]).exp());
            if gen.gen::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }),
    };

    let truth = SimTruth {
        beta_star,
        confounder: lambda.iter().copied().collect(),
        confounder_coef: Some(1.0),
        groups: Some(groups.to_vec()),
        group_variances: Some(group_vars),
        variance_shares: Some([nu_gene, nu_conf, nu_noise]),
        structure: None,
        loadings: None,
        frequencies: None,
    };
    Ok((y, truth))
}

/// End-to-end genotype benchmark: genotypes, k-means confounder groups, and
/// a trait with controlled variance shares, packaged as a Dataset.
pub fn simulate_gwas(cfg: &GwasSimConfig, rng: &RngStream) -> Result<(Dataset, SimTruth)> {
    let (a, structure, loadings, f) = simulate_genotypes(cfg, rng)?;
    let groups = assign_groups(&structure, cfg.groups, &rng.substream(cfg.seed).named("groups"))?;
    let (y, mut truth) = simulate_trait(&a, &groups, cfg, rng)?;
    truth.structure = Some(structure);
    truth.loadings = Some(loadings);
    truth.frequencies = Some(f);

    let names = (0..cfg.m).map(|j| format!("snp{}", j + 1)).collect();
    let d = Dataset::new(
        a,
        y,
        None,
        vec![CauseKind::Count; cfg.m],
        names,
        vec![],
        "trait".into(),
    )?;
    Ok((d, truth))
}
