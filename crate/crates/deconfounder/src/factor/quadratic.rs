//! Quadratic factor model: a_j = eta0_j + eta1_j' z + eta2_j' (z*z) + eps
//! with unit noise and z ~ N(0, prior_var I). Fit by MAP coordinate
//! ascent: exact per-cause least squares for the coefficients,
//! backtracking gradient ascent for the per-row z, closed-form prior
//! variance. Posterior over z is a Laplace (Gauss-Newton) approximation
//! at the mode.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{check_finite, FactorFit, FactorModelSpec, FactorVariant, FittedParams, LatentPosterior, Observed};

struct Params {
    eta0: DVector<f64>,
    eta1: DMatrix<f64>,
    eta2: DMatrix<f64>,
}

fn predict(p: &Params, z: &DVector<f64>, j: usize) -> f64 {
    p.eta0[j]
        + (0..z.len())
            .map(|l| p.eta1[(j, l)] * z[l] + p.eta2[(j, l)] * z[l] * z[l])
            .sum::<f64>()
}

/// Per-row MAP objective: -1/2 sum_obs residual^2 - ||z||^2 / (2 prior_var).
fn row_objective(p: &Params, z: &DVector<f64>, a_row: &DVector<f64>, obs: &[usize], prior_var: f64) -> f64 {
    let mut val = -z.norm_squared() / (2.0 * prior_var);
    for &j in obs {
        let r = a_row[j] - predict(p, z, j);
        val -= 0.5 * r * r;
    }
    val
}

fn row_gradient(p: &Params, z: &DVector<f64>, a_row: &DVector<f64>, obs: &[usize], prior_var: f64) -> DVector<f64> {
    let l = z.len();
    let mut g = -z / prior_var;
    for &j in obs {
        let r = a_row[j] - predict(p, z, j);
        for d in 0..l {
            g[d] += r * (p.eta1[(j, d)] + 2.0 * p.eta2[(j, d)] * z[d]);
        }
    }
    g
}

/// Backtracking gradient ascent on the per-row objective; never decreases it.
fn ascend_z(
    p: &Params,
    z: &mut DVector<f64>,
    a_row: &DVector<f64>,
    obs: &[usize],
    prior_var: f64,
    steps: usize,
    lr: f64,
) {
    for _ in 0..steps {
        let f0 = row_objective(p, z, a_row, obs, prior_var);
        let g = row_gradient(p, z, a_row, obs, prior_var);
        if g.norm() < 1e-12 {
            break;
        }
        let mut step = lr;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &*z + &g * step;
            if row_objective(p, &cand, a_row, obs, prior_var) > f0 {
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

/// Gauss-Newton precision at z: I/prior_var + sum_obs J_j J_j'.
fn laplace_cov(p: &Params, z: &DVector<f64>, obs: &[usize], prior_var: f64) -> DMatrix<f64> {
    let l = z.len();
    let mut precision = DMatrix::identity(l, l) / prior_var;
    for &j in obs {
        let jac = DVector::from_fn(l, |d, _| p.eta1[(j, d)] + 2.0 * p.eta2[(j, d)] * z[d]);
        precision += &jac * jac.transpose();
    }
    nalgebra::Cholesky::new(precision)
        .expect("Gauss-Newton precision PD")
        .inverse()
}

pub(super) fn fit(
    spec: &FactorModelSpec,
    causes: &DMatrix<f64>,
    obs: &Observed,
    rng: &RngStream,
) -> Result<FactorFit> {
    let l = match spec.variant {
        FactorVariant::Quadratic { z_dim } => z_dim,
        _ => unreachable!(),
    };
    let (n, m) = causes.shape();
    let mut gen = rng.substream(spec.fit.seed).rng();
    let mut z: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            DVector::from_fn(l, |_, _| {
                let v: f64 = StandardNormal.sample(&mut gen);
                v * 0.5
            })
        })
        .collect();
    let mut params = Params {
        eta0: DVector::zeros(m),
        eta1: DMatrix::zeros(m, l),
        eta2: DMatrix::zeros(m, l),
    };
    let mut prior_var = 1.0;

    let obs_rows: Vec<Vec<usize>> = (0..n).map(|i| obs.row(i)).collect();
    let mut obs_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, row) in obs_rows.iter().enumerate() {
        for &j in row {
            obs_cols[j].push(i);
        }
    }

    let objective = |p: &Params, z: &[DVector<f64>], prior_var: f64| -> f64 {
        let mut total = -(n as f64) * (l as f64) / 2.0 * prior_var.ln();
        for i in 0..n {
            total += row_objective(p, &z[i], &causes.row(i).transpose(), &obs_rows[i], prior_var);
        }
        total
    };

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for iter in 0..spec.fit.max_iter {
        // eta step: exact least squares per cause on features [1, z, z^2]
        let width = 1 + 2 * l;
        for j in 0..m {
            let rows = &obs_cols[j];
            if rows.is_empty() {
                continue;
            }
            let mut xtx = DMatrix::zeros(width, width);
            let mut xty = DVector::zeros(width);
            for &i in rows {
                let mut feat = DVector::zeros(width);
                feat[0] = 1.0;
                for d in 0..l {
                    feat[1 + d] = z[i][d];
                    feat[1 + l + d] = z[i][d] * z[i][d];
                }
                xtx += &feat * feat.transpose();
                xty += feat * causes[(i, j)];
            }
            // hair-thin ridge keeps the solve well posed without
            // perturbing the ascent at the trace tolerance
            for d in 0..width {
                xtx[(d, d)] += 1e-10;
            }
            let sol = nalgebra::Cholesky::new(xtx)
                .ok_or_else(|| Error::NonConvergence(format!("singular coefficient solve for cause {j}")))?
                .solve(&xty);
            params.eta0[j] = sol[0];
            for d in 0..l {
                params.eta1[(j, d)] = sol[1 + d];
                params.eta2[(j, d)] = sol[1 + l + d];
            }
        }

        // z step: a few backtracking ascent moves per row
        for i in 0..n {
            ascend_z(
                &params,
                &mut z[i],
                &causes.row(i).transpose(),
                &obs_rows[i],
                prior_var,
                5,
                spec.fit.learning_rate,
            );
        }

        // prior variance step
        prior_var = (z.iter().map(|zi| zi.norm_squared()).sum::<f64>() / (n * l) as f64).max(1e-8);

        let obj = objective(&params, &z, prior_var);
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
            cov: laplace_cov(&params, &z[i], &obs_rows[i], prior_var),
        })
        .collect();

    Ok(FactorFit {
        spec: spec.clone(),
        params: FittedParams::Quadratic {
            eta0: params.eta0,
            eta1: params.eta1,
            eta2: params.eta2,
            prior_var,
        },
        posteriors,
        trace,
        converged,
        m,
    })
}

pub(super) fn infer_z(fit: &FactorFit, a_row: &DVector<f64>, obs: &[usize]) -> Result<LatentPosterior> {
    let (eta0, eta1, eta2, prior_var) = match &fit.params {
        FittedParams::Quadratic { eta0, eta1, eta2, prior_var } => (eta0, eta1, eta2, *prior_var),
        _ => unreachable!(),
    };
    let params = Params { eta0: eta0.clone(), eta1: eta1.clone(), eta2: eta2.clone() };
    let l = eta1.ncols();
    let mut z = DVector::zeros(l);
    ascend_z(&params, &mut z, a_row, obs, prior_var, 200, fit.spec.fit.learning_rate);
    Ok(LatentPosterior::Gaussian {
        mean: z.clone(),
        cov: laplace_cov(&params, &z, obs, prior_var),
    })
}
