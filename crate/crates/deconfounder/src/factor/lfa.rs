//! Logistic factor analysis of {0,1,2} counts: a_ij ~ Binomial(2,
//! logit^-1(pi_ij)) with pi_ij = z_i' theta_j at the MAP point. The
//! Gaussian link layer of variance link_var is ignored during the MAP
//! fit and integrated by Gauss-Hermite quadrature when reconstructing
//! or scoring held-out entries. Posterior over z is a Laplace
//! approximation; the binomial-logit Hessian is exact and always
//! negative definite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{check_finite, FactorFit, FactorModelSpec, FactorVariant, FittedParams, LatentPosterior, Observed};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// log Binomial(2, sigmoid(pi)) pmf at a, dropping the constant choose term.
fn binom_loglik(a: f64, pi: f64) -> f64 {
    // a*pi - 2*log(1+e^pi), stable for large |pi|
    let log1pe = if pi > 30.0 { pi } else { (1.0 + pi.exp()).ln() };
    a * pi - 2.0 * log1pe
}

fn row_objective(theta: &DMatrix<f64>, z: &DVector<f64>, a_row: &DVector<f64>, obs: &[usize]) -> f64 {
    let mut val = -0.5 * z.norm_squared();
    for &j in obs {
        val += binom_loglik(a_row[j], theta.row(j).transpose().dot(z));
    }
    val
}

/// Newton ascent with step halving on the per-row MAP objective.
fn ascend_z(theta: &DMatrix<f64>, z: &mut DVector<f64>, a_row: &DVector<f64>, obs: &[usize], iters: usize) {
    let k = z.len();
    for _ in 0..iters {
        let f0 = row_objective(theta, z, a_row, obs);
        let mut grad = -&*z;
        let mut hess = DMatrix::identity(k, k);
        for &j in obs {
            let tj = theta.row(j).transpose();
            let p = sigmoid(tj.dot(z));
            grad += &tj * (a_row[j] - 2.0 * p);
            hess += &tj * tj.transpose() * (2.0 * p * (1.0 - p));
        }
        if grad.norm() < 1e-10 {
            break;
        }
        let dir = nalgebra::Cholesky::new(hess)
            .map(|c| c.solve(&grad))
            .unwrap_or_else(|| grad.clone());
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &*z + &dir * step;
            if row_objective(theta, &cand, a_row, obs) > f0 {
                *z = cand;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
}

fn laplace_cov(theta: &DMatrix<f64>, z: &DVector<f64>, obs: &[usize]) -> DMatrix<f64> {
    let k = z.len();
    let mut precision = DMatrix::identity(k, k);
    for &j in obs {
        let tj = theta.row(j).transpose();
        let p = sigmoid(tj.dot(z));
        precision += &tj * tj.transpose() * (2.0 * p * (1.0 - p));
    }
    nalgebra::Cholesky::new(precision).expect("precision PD").inverse()
}

pub(super) fn fit(
    spec: &FactorModelSpec,
    causes: &DMatrix<f64>,
    obs: &Observed,
    rng: &RngStream,
) -> Result<FactorFit> {
    let (k, link_var) = match spec.variant {
        FactorVariant::Lfa { k, link_var } => (k, link_var),
        _ => unreachable!(),
    };
    let (n, m) = causes.shape();
    if causes.iter().any(|&v| !(v == 0.0 || v == 1.0 || v == 2.0)) {
        return Err(Error::Spec("LFA requires {0,1,2} counts".into()));
    }
    let mut gen = rng.substream(spec.fit.seed).rng();
    let mut theta = DMatrix::from_fn(m, k, |_, _| gen.gen_range(-0.1..0.1));
    let mut z: Vec<DVector<f64>> = (0..n).map(|_| DVector::zeros(k)).collect();

    let obs_rows: Vec<Vec<usize>> = (0..n).map(|i| obs.row(i)).collect();
    let mut obs_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, row) in obs_rows.iter().enumerate() {
        for &j in row {
            obs_cols[j].push(i);
        }
    }

    let objective = |theta: &DMatrix<f64>, z: &[DVector<f64>]| -> f64 {
        (0..n)
            .map(|i| row_objective(theta, &z[i], &causes.row(i).transpose(), &obs_rows[i]))
            .sum()
    };

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for iter in 0..spec.fit.max_iter {
        // z block: per-row Newton steps
        for i in 0..n {
            ascend_z(&theta, &mut z[i], &causes.row(i).transpose(), &obs_rows[i], 3);
        }

        // theta block: per-cause Newton with step halving on the column objective
        for j in 0..m {
            let rows = &obs_cols[j];
            if rows.is_empty() {
                continue;
            }
            let col_obj = |tj: &DVector<f64>| -> f64 {
                rows.iter().map(|&i| binom_loglik(causes[(i, j)], tj.dot(&z[i]))).sum()
            };
            let mut tj = theta.row(j).transpose();
            for _ in 0..3 {
                let f0 = col_obj(&tj);
                let mut grad = DVector::zeros(k);
                let mut hess = DMatrix::from_diagonal_element(k, k, 1e-8);
                for &i in rows {
                    let p = sigmoid(tj.dot(&z[i]));
                    grad += &z[i] * (causes[(i, j)] - 2.0 * p);
                    hess += &z[i] * z[i].transpose() * (2.0 * p * (1.0 - p));
                }
                if grad.norm() < 1e-10 {
                    break;
                }
                let dir = nalgebra::Cholesky::new(hess)
                    .map(|c| c.solve(&grad))
                    .unwrap_or_else(|| grad.clone());
                let mut step = 1.0;
                let mut improved = false;
                for _ in 0..40 {
                    let cand = &tj + &dir * step;
                    if col_obj(&cand) > f0 {
                        tj = cand;
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            theta.row_mut(j).copy_from(&tj.transpose());
        }

        let obj = objective(&theta, &z);
        check_finite(obj, iter)?;
        let done = match trace.last() {
            Some(&prev) => (obj - prev).abs() / prev.abs().max(1.0) < spec.fit.tol,
            None => false,
        };
        trace.push(obj);
        if done {
            converged = true;
            break;
        }
    }

    let posteriors: Vec<LatentPosterior> = (0..n)
        .map(|i| LatentPosterior::Gaussian {
            mean: z[i].clone(),
            cov: laplace_cov(&theta, &z[i], &obs_rows[i]),
        })
        .collect();

    Ok(FactorFit {
        spec: spec.clone(),
        params: FittedParams::Lfa { theta, link_var },
        posteriors,
        trace,
        converged,
        m,
    })
}

pub(super) fn infer_z(fit: &FactorFit, a_row: &DVector<f64>, obs: &[usize]) -> Result<LatentPosterior> {
    let theta = match &fit.params {
        FittedParams::Lfa { theta, .. } => theta,
        _ => unreachable!(),
    };
    let mut z = DVector::zeros(theta.ncols());
    ascend_z(theta, &mut z, a_row, obs, 100);
    Ok(LatentPosterior::Gaussian {
        mean: z.clone(),
        cov: laplace_cov(theta, &z, obs),
    })
}
