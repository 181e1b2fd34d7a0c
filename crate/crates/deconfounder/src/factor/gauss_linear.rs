//! One-dimensional Gaussian linear factor model with per-cause intercept
//! and slope, unit observation noise, and a learned latent prior
//! variance. Fit by EM; both E and M steps are closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{check_finite, FactorFit, FactorModelSpec, FittedParams, LatentPosterior, Observed};

fn e_step_row(
    eta0: &DVector<f64>,
    eta1: &DVector<f64>,
    prior_var: f64,
    a_row: &DVector<f64>,
    obs: &[usize],
) -> (f64, f64) {
    let mut precision = 1.0 / prior_var;
    let mut rhs = 0.0;
    for &j in obs {
        precision += eta1[j] * eta1[j];
        rhs += eta1[j] * (a_row[j] - eta0[j]);
    }
    let var = 1.0 / precision;
    (var * rhs, var)
}

fn row_marginal_loglik(
    eta0: &DVector<f64>,
    eta1: &DVector<f64>,
    prior_var: f64,
    a_row: &DVector<f64>,
    obs: &[usize],
) -> f64 {
    // a_O ~ N(eta0_O, prior_var eta1 eta1' + I); rank-one Woodbury
    let mut b = 0.0; // eta1' eta1 over observed
    let mut w = 0.0; // eta1' (a - eta0)
    let mut ss = 0.0;
    for &j in obs {
        let c = a_row[j] - eta0[j];
        b += eta1[j] * eta1[j];
        w += eta1[j] * c;
        ss += c * c;
    }
    let inner = 1.0 + prior_var * b;
    let logdet = inner.ln();
    let quad = ss - prior_var * w * w / inner;
    -0.5 * (obs.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

pub(super) fn fit(
    spec: &FactorModelSpec,
    causes: &DMatrix<f64>,
    obs: &Observed,
    rng: &RngStream,
) -> Result<FactorFit> {
    let (n, m) = causes.shape();
    let mut gen = rng.substream(spec.fit.seed).rng();
    let mut eta0 = DVector::zeros(m);
    let mut eta1 = DVector::from_fn(m, |_, _| gen.gen_range(-0.1..0.1));
    let mut prior_var = 1.0;

    let obs_rows: Vec<Vec<usize>> = (0..n).map(|i| obs.row(i)).collect();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for iter in 0..spec.fit.max_iter {
        // E step
        let stats: Vec<(f64, f64)> = (0..n)
            .map(|i| e_step_row(&eta0, &eta1, prior_var, &causes.row(i).transpose(), &obs_rows[i]))
            .collect();

        // M step: per-cause weighted regression of a on E[z]
        for j in 0..m {
            let mut nj = 0.0;
            let mut sa = 0.0;
            let mut sm = 0.0;
            let mut saz = 0.0;
            let mut szz = 0.0;
            for i in 0..n {
                if obs.is_observed(i, j) {
                    let (mean, var) = stats[i];
                    let ez2 = var + mean * mean;
                    nj += 1.0;
                    sa += causes[(i, j)];
                    sm += mean;
                    saz += causes[(i, j)] * mean;
                    szz += ez2;
                }
            }
            if nj == 0.0 {
                continue;
            }
            let det = nj * szz - sm * sm;
            if det.abs() < 1e-14 {
                return Err(Error::NonConvergence(format!("degenerate M-step for cause {j}")));
            }
            eta1[j] = (nj * saz - sm * sa) / det;
            eta0[j] = (sa - eta1[j] * sm) / nj;
        }
        prior_var = (stats.iter().map(|(mean, var)| var + mean * mean).sum::<f64>() / n as f64)
            .max(1e-12);

        let ll: f64 = (0..n)
            .map(|i| {
                row_marginal_loglik(&eta0, &eta1, prior_var, &causes.row(i).transpose(), &obs_rows[i])
            })
            .sum();
        check_finite(ll, iter)?;
        let done = match trace.last() {
            Some(&prev) => (ll - prev).abs() / prev.abs().max(1.0) < spec.fit.tol,
            None => false,
        };
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }

    let posteriors: Vec<LatentPosterior> = (0..n)
        .map(|i| {
            let (mean, var) = e_step_row(&eta0, &eta1, prior_var, &causes.row(i).transpose(), &obs_rows[i]);
            LatentPosterior::Gaussian {
                mean: DVector::from_vec(vec![mean]),
                cov: DMatrix::from_element(1, 1, var),
            }
        })
        .collect();

    Ok(FactorFit {
        spec: spec.clone(),
        params: FittedParams::Linear { eta0, eta1, prior_var },
        posteriors,
        trace,
        converged,
        m,
    })
}

pub(super) fn infer_z(fit: &FactorFit, a_row: &DVector<f64>, obs: &[usize]) -> Result<LatentPosterior> {
    let (eta0, eta1, prior_var) = match &fit.params {
        FittedParams::Linear { eta0, eta1, prior_var } => (eta0, eta1, *prior_var),
        _ => unreachable!(),
    };
    let (mean, var) = e_step_row(eta0, eta1, prior_var, a_row, obs);
    Ok(LatentPosterior::Gaussian {
        mean: DVector::from_vec(vec![mean]),
        cov: DMatrix::from_element(1, 1, var),
    })
}
