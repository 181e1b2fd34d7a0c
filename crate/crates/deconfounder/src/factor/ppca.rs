//! Probabilistic PCA fit by EM with closed-form E and M steps.
//!
//! Model: z_i ~ N(0, prior_var I_K); a_ij | z_i ~ N(z_i' theta_j, sigma2).
//! Held-out entries are dropped from every sum, so the E step conditions
//! on the observed entries of each row only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{check_finite, FactorFit, FactorModelSpec, FactorVariant, FittedParams, LatentPosterior, NoiseSpec, Observed};

struct EStep {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn e_step_row(
    theta: &DMatrix<f64>,
    sigma2: f64,
    prior_var: f64,
    a_row: &DVector<f64>,
    obs: &[usize],
) -> Result<EStep> {
    let k = theta.ncols();
    // precision = I/prior_var + Theta_O' Theta_O / sigma2
    let mut precision = DMatrix::identity(k, k) / prior_var;
    let mut rhs = DVector::zeros(k);
    for &j in obs {
        let tj = theta.row(j).transpose();
        precision += &tj * tj.transpose() / sigma2;
        rhs += tj * (a_row[j] / sigma2);
    }
    let chol = nalgebra::Cholesky::new(precision)
        .ok_or_else(|| Error::NonConvergence("posterior precision not PD".into()))?;
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    Ok(EStep { mean, cov })
}

/// Marginal log-likelihood of one row over its observed entries, via the
/// Woodbury identity on sigma2 I + prior_var Theta_O Theta_O'.
fn row_marginal_loglik(
    theta: &DMatrix<f64>,
    sigma2: f64,
    prior_var: f64,
    a_row: &DVector<f64>,
    obs: &[usize],
) -> f64 {
    let k = theta.ncols();
    let mut b = DMatrix::zeros(k, k); // Theta_O' Theta_O
    let mut w = DVector::zeros(k); // Theta_O' a_O
    let mut ss = 0.0;
    for &j in obs {
        let tj = theta.row(j).transpose();
        b += &tj * tj.transpose();
        w += tj * a_row[j];
        ss += a_row[j] * a_row[j];
    }
    let inner = DMatrix::identity(k, k) + &b * (prior_var / sigma2);
    let chol = nalgebra::Cholesky::new(inner.clone()).expect("inner matrix PD");
    let logdet = sigma2.ln() * obs.len() as f64 + chol.l().diagonal().map(|d| d.ln()).sum() * 2.0;
    // a' C^-1 a = (ss - (prior_var/sigma2) w' inner^-1 w) / sigma2
    let solved = chol.solve(&w);
    let quad = (ss - (prior_var / sigma2) * w.dot(&solved)) / sigma2;
    -0.5 * (obs.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

pub(super) fn fit(
    spec: &FactorModelSpec,
    causes: &DMatrix<f64>,
    obs: &Observed,
    rng: &RngStream,
) -> Result<FactorFit> {
    let (k, prior_var, noise) = match spec.variant {
        FactorVariant::Ppca { k, prior_var, noise } => (k, prior_var, noise),
        _ => unreachable!(),
    };
    let (n, m) = causes.shape();
    let mut gen = rng.substream(spec.fit.seed).rng();
    let mut theta = DMatrix::from_fn(m, k, |_, _| gen.gen_range(-0.1..0.1));
    let mut sigma2 = match noise {
        NoiseSpec::Fixed(v) => v,
        NoiseSpec::Learned => 1.0,
    };

    let obs_rows: Vec<Vec<usize>> = (0..n).map(|i| obs.row(i)).collect();
    let n_obs: usize = obs_rows.iter().map(|o| o.len()).sum();
    if n_obs == 0 {
        return Err(Error::Argument("no observed entries".into()));
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut posteriors: Vec<EStep> = Vec::new();

    for iter in 0..spec.fit.max_iter {
        // E step
        posteriors.clear();
        for i in 0..n {
            let row = causes.row(i).transpose();
            posteriors.push(e_step_row(&theta, sigma2, prior_var, &row, &obs_rows[i])?);
        }

        // M step for theta: per cause j, theta_j = (sum E[zz'])^-1 sum a E[z]
        let ezz: Vec<DMatrix<f64>> = posteriors
            .iter()
            .map(|p| &p.cov + &p.mean * p.mean.transpose())
            .collect();
        for j in 0..m {
            let mut s1 = DMatrix::zeros(k, k);
            let mut s2 = DVector::zeros(k);
            for i in 0..n {
                if obs.is_observed(i, j) {
                    s1 += &ezz[i];
                    s2 += &posteriors[i].mean * causes[(i, j)];
                }
            }
            let chol = nalgebra::Cholesky::new(s1)
                .ok_or_else(|| Error::NonConvergence(format!("singular M-step for cause {j}")))?;
            theta.row_mut(j).copy_from(&chol.solve(&s2).transpose());
        }

        // M step for sigma2 with the updated theta
        if matches!(noise, NoiseSpec::Learned) {
            let mut acc = 0.0;
            for i in 0..n {
                for &j in &obs_rows[i] {
                    let tj = theta.row(j).transpose();
                    let a = causes[(i, j)];
                    acc += a * a - 2.0 * a * tj.dot(&posteriors[i].mean)
                        + (tj.transpose() * &ezz[i] * &tj)[(0, 0)];
                }
            }
            sigma2 = (acc / n_obs as f64).max(1e-12);
        }

        let ll: f64 = (0..n)
            .map(|i| {
                row_marginal_loglik(&theta, sigma2, prior_var, &causes.row(i).transpose(), &obs_rows[i])
            })
            .sum();
        check_finite(ll, iter)?;
        let done = match trace.last() {
            Some(&prev) => (ll - prev).abs() / (prev.abs().max(1.0)) < spec.fit.tol,
            None => false,
        };
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }

    // final posteriors under the last parameters
    let latent: Vec<LatentPosterior> = (0..n)
        .map(|i| {
            let p = e_step_row(&theta, sigma2, prior_var, &causes.row(i).transpose(), &obs_rows[i])?;
            Ok(LatentPosterior::Gaussian { mean: p.mean, cov: p.cov })
        })
        .collect::<Result<_>>()?;

    Ok(FactorFit {
        spec: spec.clone(),
        params: FittedParams::Ppca { theta, sigma2, prior_var },
        posteriors: latent,
        trace,
        converged,
        m,
    })
}

pub(super) fn infer_z(fit: &FactorFit, a_row: &DVector<f64>, obs: &[usize]) -> Result<LatentPosterior> {
    let (theta, sigma2, prior_var) = match &fit.params {
        FittedParams::Ppca { theta, sigma2, prior_var } => (theta, *sigma2, *prior_var),
        _ => unreachable!(),
    };
    let p = e_step_row(theta, sigma2, prior_var, a_row, obs)?;
    Ok(LatentPosterior::Gaussian { mean: p.mean, cov: p.cov })
}

/// Full-data marginal log-likelihood and its gradient with respect to
/// theta, computed through the m x m covariance C = prior_var Theta
/// Theta' + sigma2 I. Used for finite-difference verification.
pub fn ppca_marginal_loglik_and_grad(
    theta: &DMatrix<f64>,
    sigma2: f64,
    prior_var: f64,
    causes: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    let (n, m) = causes.shape();
    let c = theta * theta.transpose() * prior_var + DMatrix::identity(m, m) * sigma2;
    let chol = nalgebra::Cholesky::new(c).expect("covariance PD");
    let cinv = chol.inverse();
    let logdet = chol.l().diagonal().map(|d| d.ln()).sum() * 2.0;
    let mut ll = 0.0;
    let mut g = DMatrix::zeros(m, m); // dL/dC accumulator
    for i in 0..n {
        let a = causes.row(i).transpose();
        let ca = &cinv * &a;
        ll += -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + a.dot(&ca));
        g += &ca * ca.transpose();
    }
    g = (g - cinv * n as f64) * 0.5;
    let grad = g * theta * (2.0 * prior_var);
    (ll, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CauseKind;
    use crate::factor;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn spec(k: usize) -> FactorModelSpec {
        FactorModelSpec::new(FactorVariant::Ppca {
            k,
            prior_var: 1.0,
            noise: NoiseSpec::Learned,
        })
    }

    fn simulate(n: usize, m: usize, k: usize, noise_sd: f64, seed: u64) -> DMatrix<f64> {
        let mut gen = RngStream::new(seed).rng();
        let z = DMatrix::<f64>::from_fn(n, k, |_, _| StandardNormal.sample(&mut gen));
        let theta = DMatrix::<f64>::from_fn(m, k, |_, _| StandardNormal.sample(&mut gen));
        let noise = DMatrix::from_fn(n, m, |_, _| {
            let e: f64 = StandardNormal.sample(&mut gen);
            e * noise_sd
        });
        z * theta.transpose() + noise
    }

    #[test]
    fn recovers_noiseless_subspace() {
        let causes = simulate(200, 8, 2, 0.0, 42);
        let kinds = vec![CauseKind::Real; 8];
        let fit = factor::fit(&spec(2), &causes, &kinds, None, &RngStream::new(1)).unwrap();
        // reconstruction error ||A - Z theta'|| / ||A|| < 1e-3
        let mut recon = DMatrix::zeros(200, 8);
        for i in 0..200 {
            let z = fit.posteriors[i].mean();
            recon.row_mut(i).copy_from(&fit.reconstruct_causes(&z).unwrap().transpose());
        }
        let err = (&causes - &recon).norm() / causes.norm();
        assert!(err < 1e-3, "relative reconstruction error {err}");
    }

    #[test]
    fn loglik_trace_nondecreasing() {
        let causes = simulate(60, 6, 2, 0.7, 7);
        let kinds = vec![CauseKind::Real; 6];
        let fit = factor::fit(&spec(2), &causes, &kinds, None, &RngStream::new(3)).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "trace decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_cause_posterior_matches_hand_formula() {
        // m=1 is below the k<m floor, so build the fit struct directly;
        // the formula lambda^2 theta a / (lambda^2 theta^2 + sigma^2) is
        // plain scalar Gaussian conditioning.
        let theta = DMatrix::from_element(1, 1, 0.8);
        let fit = FactorFit {
            spec: spec(1),
            params: FittedParams::Ppca { theta, sigma2: 0.5, prior_var: 2.0 },
            posteriors: vec![],
            trace: vec![],
            converged: true,
            m: 1,
        };
        let a = DVector::from_vec(vec![1.3]);
        let post = fit.infer_z(&a, None).unwrap();
        let expected = 2.0 * 0.8 * 1.3 / (2.0 * 0.8 * 0.8 + 0.5);
        assert_abs_diff_eq!(post.mean()[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_row_has_zero_posterior_mean() {
        let causes = simulate(50, 5, 2, 0.5, 9);
        let kinds = vec![CauseKind::Real; 5];
        let fit = factor::fit(&spec(2), &causes, &kinds, None, &RngStream::new(3)).unwrap();
        let post = fit.infer_z(&DVector::zeros(5), None).unwrap();
        assert!(post.mean().norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let causes = simulate(5, 4, 2, 1.0, 123);
        let mut gen = RngStream::new(5).rng();
        let theta = DMatrix::from_fn(4, 2, |_, _| {
            let v: f64 = StandardNormal.sample(&mut gen);
            v * 0.5
        });
        let (_, grad) = ppca_marginal_loglik_and_grad(&theta, 0.7, 1.0, &causes);
        let h = 1e-5;
        for j in 0..4 {
            for k in 0..2 {
                let mut tp = theta.clone();
                tp[(j, k)] += h;
                let mut tm = theta.clone();
                tm[(j, k)] -= h;
                let (lp, _) = ppca_marginal_loglik_and_grad(&tp, 0.7, 1.0, &causes);
                let (lm, _) = ppca_marginal_loglik_and_grad(&tm, 0.7, 1.0, &causes);
                let fd = (lp - lm) / (2.0 * h);
                let rel = (grad[(j, k)] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "gradient mismatch at ({j},{k}): {} vs {fd}", grad[(j, k)]);
            }
        }
    }

    #[test]
    fn subspace_recovery_on_simulated_data() {
        // principal angles between fitted and true loading subspaces
        let n = 800;
        let (m, k) = (8, 2);
        let mut gen = RngStream::new(21).rng();
        let true_theta = DMatrix::<f64>::from_fn(m, k, |_, _| StandardNormal.sample(&mut gen));
        let z = DMatrix::<f64>::from_fn(n, k, |_, _| StandardNormal.sample(&mut gen));
        let noise = DMatrix::from_fn(n, m, |_, _| {
            let e: f64 = StandardNormal.sample(&mut gen);
            e * 0.1
        });
        let causes = z * true_theta.transpose() + noise;
        let kinds = vec![CauseKind::Real; m];
        let fit = factor::fit(&spec(k), &causes, &kinds, None, &RngStream::new(2)).unwrap();
        let theta_hat = match &fit.params {
            FittedParams::Ppca { theta, .. } => theta.clone(),
            _ => unreachable!(),
        };
        let q1 = orthonormal_basis(&true_theta);
        let q2 = orthonormal_basis(&theta_hat);
        let svd = (q1.transpose() * q2).svd(false, false);
        for s in svd.singular_values.iter() {
            let angle = s.clamp(-1.0, 1.0).acos();
            assert!(angle < 0.2, "principal angle {angle}");
        }
    }

    fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
        let qr = a.clone().qr();
        qr.q()
    }
}
