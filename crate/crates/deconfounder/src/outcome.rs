//! Outcome regressions on causes plus substitute-confounder features, and
//! the causal contrasts computed from them.
//!
//! The design matrix is always laid out as [causes | confounder features |
//! covariates] so the cause coefficients can be pulled out by position no
//! matter which conditioning mode produced the middle block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::factor::FactorFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Use the substitute confounder ẑ directly as extra regressors.
    OnZ,
    /// Use the model's reconstruction â(ẑ) of each cause as extra regressors.
    OnReconstructed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeFamily {
    GaussianLinear,
    Logistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    pub conditioning: Conditioning,
    pub include_covariates: bool,
    pub family: OutcomeFamily,
    /// L2 penalty on the non-intercept coefficients.
    pub penalty: f64,
    pub tol: f64,
}

impl Default for OutcomeModelSpec {
    fn default() -> Self {
        OutcomeModelSpec {
            conditioning: Conditioning::OnZ,
            include_covariates: true,
            family: OutcomeFamily::GaussianLinear,
            penalty: 0.1,
            tol: 1e-8,
        }
    }
}

impl OutcomeModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.penalty < 0.0 || !self.penalty.is_finite() {
            return Err(Error::Spec("penalty must be finite and >= 0".into()));
        }
        if self.tol <= 0.0 {
            return Err(Error::Spec("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Column bookkeeping for a design matrix: which slice of the coefficient
/// vector belongs to the causes, the confounder features, and the covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignInfo {
    pub n_causes: usize,
    pub n_confounder: usize,
    pub n_covariates: usize,
    pub column_names: Vec<String>,
}

impl DesignInfo {
    pub fn width(&self) -> usize {
        self.n_causes + self.n_confounder + self.n_covariates
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub family: OutcomeFamily,
    pub intercept: f64,
    /// Coefficients on the causes, in dataset column order.
    pub beta: DVector<f64>,
    /// Coefficients on [confounder features | covariates].
    pub gamma: DVector<f64>,
    /// Residual variance; present for the gaussian family only.
    pub sigma2: Option<f64>,
    pub design: DesignInfo,
    pub diagnostics: FitDiagnostics,
}

impl OutcomeFit {
    /// Linear predictor for one design row (without the intercept column).
    pub fn linear_predictor(&self, row: &DVector<f64>) -> Result<f64> {
        let expect = self.beta.len() + self.gamma.len();
        if row.len() != expect {
            return Err(Error::Dimension(format!(
                "design row has {} entries, fit expects {}",
                row.len(),
                expect
            )));
        }
        let mut eta = self.intercept;
        for j in 0..self.beta.len() {
            eta += self.beta[j] * row[j];
        }
        for j in 0..self.gamma.len() {
            eta += self.gamma[j] * row[self.beta.len() + j];
        }
        Ok(eta)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<OutcomeFit> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

/// Assemble the outcome design matrix: [causes | ẑ or â(ẑ) | optional X].
/// `z` holds one latent vector per row (n × latent dim), typically posterior
/// means or a posterior sample.
pub fn build_design(
    d: &Dataset,
    fit: &FactorFit,
    spec: &OutcomeModelSpec,
    z: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DesignInfo)> {
    let n = d.causes.nrows();
    let m = d.causes.ncols();
    if z.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} latent rows for {} individuals",
            z.nrows(),
            n
        )));
    }
    if z.ncols() != fit.spec.variant.latent_dim() {
        return Err(Error::Dimension(format!(
            "latent vectors have {} entries, factor model expects {}",
            z.ncols(),
            fit.spec.variant.latent_dim()
        )));
    }

    let confounder: DMatrix<f64> = match spec.conditioning {
        Conditioning::OnZ => z.clone(),
        Conditioning::OnReconstructed => {
            let mut recon = DMatrix::zeros(n, m);
            for i in 0..n {
                let zi = DVector::from_iterator(z.ncols(), z.row(i).iter().cloned());
                let a_hat = fit.reconstruct_causes(&zi)?;
                recon.row_mut(i).copy_from(&a_hat.transpose());
            }
            recon
        }
    };

    let covariates = if spec.include_covariates {
        d.covariates.as_ref()
    } else {
        None
    };
    let p = covariates.map_or(0, |x| x.ncols());

    let width = m + confounder.ncols() + p;
    let mut design = DMatrix::zeros(n, width);
    design.view_mut((0, 0), (n, m)).copy_from(&d.causes);
    design
        .view_mut((0, m), (n, confounder.ncols()))
        .copy_from(&confounder);
    if let Some(x) = covariates {
        design.view_mut((0, m + confounder.ncols()), (n, p)).copy_from(x);
    }

    let mut names: Vec<String> = d.cause_names.clone();
    match spec.conditioning {
        Conditioning::OnZ => {
            for j in 0..confounder.ncols() {
                names.push(format!("zhat_{}", j + 1));
            }
        }
        Conditioning::OnReconstructed => {
            for name in &d.cause_names {
                names.push(format!("recon_{name}"));
            }
        }
    }
    if covariates.is_some() {
        names.extend(d.covariate_names.iter().cloned());
    }

    let info = DesignInfo {
        n_causes: m,
        n_confounder: confounder.ncols(),
        n_covariates: p,
        column_names: names,
    };
    Ok((design, info))
}

fn split_coefficients(w: &DVector<f64>, info: &DesignInfo) -> (DVector<f64>, DVector<f64>) {
    let beta = DVector::from_iterator(info.n_causes, (0..info.n_causes).map(|j| w[j]));
    let rest = info.n_confounder + info.n_covariates;
    let gamma = DVector::from_iterator(rest, (0..rest).map(|j| w[info.n_causes + j]));
    (beta, gamma)
}

fn check_design(design: &DMatrix<f64>, y: &DVector<f64>, info: &DesignInfo) -> Result<()> {
    if design.nrows() == 0 {
        return Err(Error::Argument("empty design".into()));
    }
    if design.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} design rows but {} outcomes",
            design.nrows(),
            y.len()
        )));
    }
    if design.ncols() != info.width() {
        return Err(Error::Dimension(format!(
            "design has {} columns, bookkeeping expects {}",
            design.ncols(),
            info.width()
        )));
    }
    if design.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite entries in regression inputs".into()));
    }
    Ok(())
}

/// Exact ridge regression: minimizes ‖y − β₀ − Dw‖² + penalty·‖w‖² by a
/// direct solve of the penalized normal equations. The intercept is never
/// penalized.
pub fn fit_ridge(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: f64,
    info: &DesignInfo,
) -> Result<OutcomeFit> {
    check_design(design, y, info)?;
    if penalty < 0.0 {
        return Err(Error::Argument("penalty must be >= 0".into()));
    }
    let n = design.nrows();
    let p = design.ncols();

    // Augment with the intercept column, then solve (X'X + λJ) w = X'y where
    // J zeroes the intercept entry.
    let mut x = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    x.view_mut((0, 1), (n, p)).copy_from(design);

    let mut a = x.transpose() * &x;
    for j in 1..=p {
        a[(j, j)] += penalty;
    }
    let b = x.transpose() * y;

    let chol = a.clone().cholesky().ok_or_else(|| {
        Error::RankDeficient(
            "penalized normal equations are singular; use a positive penalty".into(),
        )
    })?;
    let w_full = chol.solve(&b);

    let intercept = w_full[0];
    let w = DVector::from_iterator(p, (0..p).map(|j| w_full[j + 1]));

    let residuals = y - &x * &w_full;
    let sigma2 = (residuals.norm_squared() / n as f64).max(1e-300);

    let (beta, gamma) = split_coefficients(&w, info);
    Ok(OutcomeFit {
        family: OutcomeFamily::GaussianLinear,
        intercept,
        beta,
        gamma,
        sigma2: Some(sigma2),
        design: info.clone(),
        diagnostics: FitDiagnostics {
            iterations: 1,
            gradient_norm: 0.0,
            converged: true,
        },
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
fn log1pe(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic_objective(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, penalty: f64) -> f64 {
    let eta = x * w;
    let mut ll = 0.0;
    for i in 0..y.len() {
        ll += y[i] * eta[i] - log1pe(eta[i]);
    }
    let mut pen = 0.0;
    for j in 1..w.len() {
        pen += w[j] * w[j];
    }
    ll - 0.5 * penalty * pen
}

/// Penalized logistic regression by Newton's method with step halving.
/// Maximizes Σ yᵢηᵢ − log(1+e^ηᵢ) − (penalty/2)‖w‖² with the intercept
/// unpenalized.
pub fn fit_logistic(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: f64,
    tol: f64,
    info: &DesignInfo,
) -> Result<OutcomeFit> {
    check_design(design, y, info)?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("logistic outcome must be 0/1".into()));
    }
    let n = design.nrows();
    let p = design.ncols();

    let mut x = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    x.view_mut((0, 1), (n, p)).copy_from(design);

    let mut w: DVector<f64> = DVector::zeros(p + 1);
    let mut obj = logistic_objective(&x, y, &w, penalty);
    let max_iter = 200;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let eta = &x * &w;
        let probs = DVector::from_iterator(n, eta.iter().map(|&e| sigmoid(e)));

        let mut grad = x.transpose() * (y - &probs);
        for j in 1..=p {
            grad[j] -= penalty * w[j];
        }
        grad_norm = grad.amax();
        if grad_norm < tol {
            // A flat gradient on unpenalized, perfectly classified data is
            // the separable case: the "optimum" is at infinity and the
            // coefficients found here are an artifact of the stopping rule.
            if penalty == 0.0 {
                let fitted_exactly =
                    (0..n).all(|i| (y[i] - probs[i]).abs() < 1e-4);
                if fitted_exactly {
                    return Err(Error::NonConvergence(
                        "every outcome is classified perfectly with no penalty; \
                         the data are separable — use a positive penalty"
                            .into(),
                    ));
                }
            }
            converged = true;
            break;
        }

        // Hessian of the negative objective: X'WX + λJ. Add a whisper of
        // ridge so the Cholesky survives flat directions at penalty = 0.
        let mut h = DMatrix::zeros(p + 1, p + 1);
        for i in 0..n {
            let wi = probs[i] * (1.0 - probs[i]);
            if wi <= 0.0 {
                continue;
            }
            let row = x.row(i);
            for a in 0..=p {
                let ra = wi * row[a];
                for b in a..=p {
                    h[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 1..=p {
            h[(j, j)] += penalty;
        }
        for j in 0..=p {
            h[(j, j)] += 1e-10;
        }

        let chol = h.cholesky().ok_or_else(|| {
            Error::NonConvergence(
                "logistic Hessian not positive definite; use a positive penalty".into(),
            )
        })?;
        let step = chol.solve(&grad);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &w + &step * scale;
            let cand_obj = logistic_objective(&x, y, &cand, penalty);
            if cand_obj > obj - 1e-14 {
                w = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        // With no penalty and separable data the likelihood has no maximizer:
        // coefficients run off to infinity while the gradient decays. Catch
        // the runaway instead of reporting a bogus optimum.
        if penalty == 0.0 && w.amax() > 1e2 {
            return Err(Error::NonConvergence(
                "logistic coefficients are diverging; the data look separable — \
                 use a positive penalty"
                    .into(),
            ));
        }
    }

    if !converged {
        return Err(Error::NonConvergence(format!(
            "logistic fit stopped with gradient norm {grad_norm:.3e}; the data may \
             be separable — use a positive penalty"
        )));
    }

    let intercept = w[0];
    let coefs = DVector::from_iterator(p, (0..p).map(|j| w[j + 1]));
    let (beta, gamma) = split_coefficients(&coefs, info);
    Ok(OutcomeFit {
        family: OutcomeFamily::Logistic,
        intercept,
        beta,
        gamma,
        sigma2: None,
        design: info.clone(),
        diagnostics: FitDiagnostics {
            iterations,
            gradient_norm: grad_norm,
            converged,
        },
    })
}

/// Average causal contrast between cause settings `a` and `a_prime`.
///
/// For the gaussian-linear family this is βᵀ(a − a′): the confounder and
/// covariate terms cancel in the average over the empirical background
/// distribution. For the logistic family the contrast is a plug-in Monte
/// Carlo average of predicted-probability differences over the empirical
/// rows of [confounder features | covariates], which must be supplied as
/// `background` (n × (confounder + covariate) columns).
pub fn average_effect(
    fit: &OutcomeFit,
    a: &DVector<f64>,
    a_prime: &DVector<f64>,
    background: Option<&DMatrix<f64>>,
) -> Result<f64> {
    if a.len() != fit.beta.len() || a_prime.len() != fit.beta.len() {
        return Err(Error::Dimension(format!(
            "cause vectors must have {} entries",
            fit.beta.len()
        )));
    }
    match fit.family {
        OutcomeFamily::GaussianLinear => Ok(fit.beta.dot(&(a - a_prime))),
        OutcomeFamily::Logistic => {
            let bg = background.ok_or_else(|| {
                Error::Argument(
                    "logistic contrasts need the empirical confounder/covariate rows".into(),
                )
            })?;
            if bg.ncols() != fit.gamma.len() {
                return Err(Error::Dimension(format!(
                    "background rows have {} columns, fit expects {}",
                    bg.ncols(),
                    fit.gamma.len()
                )));
            }
            if bg.nrows() == 0 {
                return Err(Error::Argument("background must have at least one row".into()));
            }
            let base_a = fit.intercept + fit.beta.dot(a);
            let base_ap = fit.intercept + fit.beta.dot(a_prime);
            let mut total = 0.0;
            for i in 0..bg.nrows() {
                let mut extra = 0.0;
                for j in 0..fit.gamma.len() {
                    extra += fit.gamma[j] * bg[(i, j)];
                }
                total += sigmoid(base_a + extra) - sigmoid(base_ap + extra);
            }
            Ok(total / bg.nrows() as f64)
        }
    }
}

/// Mean per-row log-likelihood of held-out outcomes under the fitted family.
pub fn heldout_outcome_loglik(
    fit: &OutcomeFit,
    design: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    if design.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} design rows but {} outcomes",
            design.nrows(),
            y.len()
        )));
    }
    if design.nrows() == 0 {
        return Err(Error::Argument("no test rows".into()));
    }
    let mut total = 0.0;
    for i in 0..design.nrows() {
        let row = DVector::from_iterator(design.ncols(), design.row(i).iter().cloned());
        let eta = fit.linear_predictor(&row)?;
        total += match fit.family {
            OutcomeFamily::GaussianLinear => {
                let s2 = fit.sigma2.ok_or_else(|| {
                    Error::Validation("gaussian fit is missing its residual variance".into())
                })?;
                let r = y[i] - eta;
                -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - r * r / (2.0 * s2)
            }
            OutcomeFamily::Logistic => y[i] * eta - log1pe(eta),
        };
    }
    Ok(total / design.nrows() as f64)
}
