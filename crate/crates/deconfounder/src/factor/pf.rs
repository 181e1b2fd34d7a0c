//! Poisson factorization fit by coordinate-ascent variational inference
//! with gamma variational factors, using the auxiliary-multinomial
//! decomposition of the Poisson likelihood.
//!
//! Priors: z_ik ~ Gamma(shape, rate) and theta_jk ~ Gamma(shape, rate);
//! a_ij | z_i, theta_j ~ Poisson(z_i' theta_j).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{check_finite, FactorFit, FactorModelSpec, FactorVariant, FittedParams, LatentPosterior, Observed};

struct GammaBlock {
    shape: DMatrix<f64>,
    rate: DMatrix<f64>,
    mean: DMatrix<f64>,
    eln: DMatrix<f64>,
}

impl GammaBlock {
    fn init(rows: usize, k: usize, shape0: f64, rate0: f64, gen: &mut impl Rng) -> Self {
        let shape = DMatrix::from_fn(rows, k, |_, _| shape0 * gen.gen_range(0.9..1.1));
        let rate = DMatrix::from_fn(rows, k, |_, _| rate0 * gen.gen_range(0.9..1.1));
        let mut b = GammaBlock { shape, rate, mean: DMatrix::zeros(rows, k), eln: DMatrix::zeros(rows, k) };
        b.refresh();
        b
    }

    fn refresh(&mut self) {
        for r in 0..self.shape.nrows() {
            for c in 0..self.shape.ncols() {
                let s = self.shape[(r, c)];
                let rt = self.rate[(r, c)];
                self.mean[(r, c)] = s / rt;
                self.eln[(r, c)] = digamma(s) - rt.ln();
            }
        }
    }
}

/// log-sum-exp over k of eln_z[i,k] + eln_t[j,k]; also fills phi with
/// the softmax responsibilities.
fn lse_phi(eln_z: &DMatrix<f64>, eln_t: &DMatrix<f64>, i: usize, j: usize, phi: &mut [f64]) -> f64 {
    let k = phi.len();
    let mut max = f64::NEG_INFINITY;
    for c in 0..k {
        phi[c] = eln_z[(i, c)] + eln_t[(j, c)];
        if phi[c] > max {
            max = phi[c];
        }
    }
    let mut sum = 0.0;
    for p in phi.iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in phi.iter_mut() {
        *p /= sum;
    }
    max + sum.ln()
}

fn gamma_elbo_term(shape0: f64, rate0: f64, block: &GammaBlock) -> f64 {
    let mut total = 0.0;
    for r in 0..block.shape.nrows() {
        for c in 0..block.shape.ncols() {
            let s = block.shape[(r, c)];
            let rt = block.rate[(r, c)];
            // E[log p(x)] under q
            total += shape0 * rate0.ln() - ln_gamma(shape0)
                + (shape0 - 1.0) * block.eln[(r, c)]
                - rate0 * block.mean[(r, c)];
            // + entropy of q
            total += s - rt.ln() + ln_gamma(s) + (1.0 - s) * digamma(s);
        }
    }
    total
}

pub(super) fn fit(
    spec: &FactorModelSpec,
    causes: &DMatrix<f64>,
    obs: &Observed,
    rng: &RngStream,
) -> Result<FactorFit> {
    let (k, shape0, rate0) = match spec.variant {
        FactorVariant::Pf { k, shape, rate } => (k, shape, rate),
        _ => unreachable!(),
    };
    let (n, m) = causes.shape();
    if causes.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
        return Err(Error::Spec("Poisson factorization requires nonnegative integer counts".into()));
    }
    let mut gen = rng.substream(spec.fit.seed).rng();
    let mut zq = GammaBlock::init(n, k, shape0, rate0, &mut gen);
    let mut tq = GammaBlock::init(m, k, shape0, rate0, &mut gen);

    let obs_rows: Vec<Vec<usize>> = (0..n).map(|i| obs.row(i)).collect();
    // column-wise observation lists for the theta updates
    let mut obs_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, row) in obs_rows.iter().enumerate() {
        for &j in row {
            obs_cols[j].push(i);
        }
    }

    let mut phi = vec![0.0; k];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for iter in 0..spec.fit.max_iter {
        // q(z) updates
        for i in 0..n {
            let mut shp = vec![shape0; k];
            let mut rte = vec![rate0; k];
            for &j in &obs_rows[i] {
                let a = causes[(i, j)];
                if a > 0.0 {
                    lse_phi(&zq.eln, &tq.eln, i, j, &mut phi);
                    for c in 0..k {
                        shp[c] += a * phi[c];
                    }
                }
                for c in 0..k {
                    rte[c] += tq.mean[(j, c)];
                }
            }
            for c in 0..k {
                zq.shape[(i, c)] = shp[c];
                zq.rate[(i, c)] = rte[c];
            }
        }
        zq.refresh();

        // q(theta) updates
        for j in 0..m {
            let mut shp = vec![shape0; k];
            let mut rte = vec![rate0; k];
            for &i in &obs_cols[j] {
                let a = causes[(i, j)];
                if a > 0.0 {
                    lse_phi(&zq.eln, &tq.eln, i, j, &mut phi);
                    for c in 0..k {
                        shp[c] += a * phi[c];
                    }
                }
                for c in 0..k {
                    rte[c] += zq.mean[(i, c)];
                }
            }
            for c in 0..k {
                tq.shape[(j, c)] = shp[c];
                tq.rate[(j, c)] = rte[c];
            }
        }
        tq.refresh();

        // ELBO with the multinomial bound collapsed at optimal phi
        let mut elbo = gamma_elbo_term(shape0, rate0, &zq) + gamma_elbo_term(shape0, rate0, &tq);
        for i in 0..n {
            for &j in &obs_rows[i] {
                let a = causes[(i, j)];
                let mean_rate: f64 = (0..k).map(|c| zq.mean[(i, c)] * tq.mean[(j, c)]).sum();
                elbo -= mean_rate;
                if a > 0.0 {
                    let lse = lse_phi(&zq.eln, &tq.eln, i, j, &mut phi);
                    elbo += a * lse - ln_gamma(a + 1.0);
                }
            }
        }
        check_finite(elbo, iter)?;
        let done = match trace.last() {
            Some(&prev) => (elbo - prev).abs() / prev.abs().max(1.0) < spec.fit.tol,
            None => false,
        };
        trace.push(elbo);
        if done {
            converged = true;
            break;
        }
    }

    let posteriors: Vec<LatentPosterior> = (0..n)
        .map(|i| LatentPosterior::Gamma {
            shape: zq.shape.row(i).transpose(),
            rate: zq.rate.row(i).transpose(),
        })
        .collect();

    Ok(FactorFit {
        spec: spec.clone(),
        params: FittedParams::Pf {
            theta_shape: tq.shape,
            theta_rate: tq.rate,
            prior_shape: shape0,
            prior_rate: rate0,
        },
        posteriors,
        trace,
        converged,
        m,
    })
}

/// Local CAVI for one row against the fitted variational theta.
pub(super) fn infer_z(fit: &FactorFit, a_row: &DVector<f64>, obs: &[usize]) -> Result<LatentPosterior> {
    let (ts, tr, shape0, rate0) = match &fit.params {
        FittedParams::Pf { theta_shape, theta_rate, prior_shape, prior_rate } => {
            (theta_shape, theta_rate, *prior_shape, *prior_rate)
        }
        _ => unreachable!(),
    };
    let k = ts.ncols();
    if obs.iter().any(|&j| a_row[j] < 0.0 || a_row[j].fract() != 0.0) {
        return Err(Error::Argument("count row required for PF inference".into()));
    }
    let t_mean: Vec<Vec<f64>> = obs
        .iter()
        .map(|&j| (0..k).map(|c| ts[(j, c)] / tr[(j, c)]).collect())
        .collect();
    let t_eln: Vec<Vec<f64>> = obs
        .iter()
        .map(|&j| (0..k).map(|c| digamma(ts[(j, c)]) - tr[(j, c)].ln()).collect())
        .collect();

    let mut shape = vec![shape0; k];
    let mut rate: Vec<f64> = {
        let mut r = vec![rate0; k];
        for tm in &t_mean {
            for c in 0..k {
                r[c] += tm[c];
            }
        }
        r
    };
    let mut phi = vec![0.0; k];
    for _ in 0..200 {
        let eln: Vec<f64> = (0..k).map(|c| digamma(shape[c]) - rate[c].ln()).collect();
        let mut new_shape = vec![shape0; k];
        for (idx, &j) in obs.iter().enumerate() {
            let a = a_row[j];
            if a > 0.0 {
                let mut max = f64::NEG_INFINITY;
                for c in 0..k {
                    phi[c] = eln[c] + t_eln[idx][c];
                    max = max.max(phi[c]);
                }
                let mut sum = 0.0;
                for p in phi.iter_mut() {
                    *p = (*p - max).exp();
                    sum += *p;
                }
                for c in 0..k {
                    new_shape[c] += a * phi[c] / sum;
                }
            }
        }
        let delta: f64 = new_shape
            .iter()
            .zip(&shape)
            .map(|(a, b)| (a - b).abs())
            .sum();
        shape = new_shape;
        if delta < 1e-12 {
            break;
        }
    }
    // rates do not depend on phi, recompute once for cleanliness
    rate = {
        let mut r = vec![rate0; k];
        for tm in &t_mean {
            for c in 0..k {
                r[c] += tm[c];
            }
        }
        r
    };
    Ok(LatentPosterior::Gamma {
        shape: DVector::from_vec(shape),
        rate: DVector::from_vec(rate),
    })
}
