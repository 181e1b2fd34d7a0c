//! Held-out predictive checks: the gate that decides whether a fitted
//! assignment model (or outcome model) is good enough to carry causal
//! conclusions.
//!
//! The recipe: hold out a fraction of the cause entries, fit the model on
//! what remains, and for each individual compare the posterior-predictive
//! log-likelihood of the held entries against the same statistic computed on
//! replicated data drawn from the model. If the observed data sit in the bulk
//! of the replicate distribution (score near 0.5) the model is adequate; if
//! they sit in the tail (score near 0) the model misfits.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_holdout, Dataset};
use crate::error::{Error, Result};
use crate::factor::{self, FactorFit, FactorModelSpec};
use crate::outcome::{self, OutcomeFamily, OutcomeModelSpec};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Mean of the per-individual scores (the default).
    PerIndividualMean,
    /// Pool the statistic over individuals first, then score once.
    Pooled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckConfig {
    pub fraction: f64,
    pub replicates: usize,
    pub z_samples: usize,
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            fraction: 0.2,
            replicates: 100,
            z_samples: 100,
            threshold: 0.1,
            aggregation: Aggregation::PerIndividualMean,
            seed: 0,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Spec(format!(
                "check threshold {} outside (0,1)",
                self.threshold
            )));
        }
        if self.replicates < 10 {
            return Err(Error::Spec("need at least 10 replicates".into()));
        }
        if self.z_samples < 1 {
            return Err(Error::Spec("need at least one z sample".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndividualCheck {
    pub index: usize,
    /// Observed discrepancy: E_Z[log p(a_held | Z) | a_obs].
    pub t_obs: f64,
    /// Fraction of replicate statistics below t_obs (ties count half).
    pub score: f64,
    pub held_entries: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub individuals: Vec<IndividualCheck>,
    /// Replicate statistics per checked individual, aligned with
    /// `individuals`; kept so the replicate density can be plotted against
    /// the observed statistic.
    pub replicate_stats: Vec<Vec<f64>>,
    pub aggregate_score: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Rows that ended up with no held-out entries and were skipped.
    pub skipped: usize,
    pub aggregation: Aggregation,
}

impl CheckReport {
    fn assemble(
        mut rows: Vec<(IndividualCheck, Vec<f64>)>,
        skipped: usize,
        cfg: &CheckConfig,
    ) -> Result<CheckReport> {
        rows.sort_by_key(|(c, _)| c.index);
        if rows.is_empty() {
            return Err(Error::Validation(
                "every row was skipped; nothing to check".into(),
            ));
        }
        let aggregate_score = match cfg.aggregation {
            Aggregation::PerIndividualMean => {
                rows.iter().map(|(c, _)| c.score).sum::<f64>() / rows.len() as f64
            }
            Aggregation::Pooled => {
                // Sum the statistic over individuals, per replicate draw, and
                // score that single pooled statistic.
                let r = rows[0].1.len();
                let t_pooled: f64 = rows.iter().map(|(c, _)| c.t_obs).sum();
                let mut below = 0.0;
                for rep in 0..r {
                    let t_rep: f64 = rows.iter().map(|(_, reps)| reps[rep]).sum();
                    below += score_increment(t_rep, t_pooled);
                }
                below / r as f64
            }
        };
        let (individuals, replicate_stats) = rows.into_iter().unzip();
        Ok(CheckReport {
            individuals,
            replicate_stats,
            aggregate_score,
            threshold: cfg.threshold,
            pass: aggregate_score > cfg.threshold,
            skipped,
            aggregation: cfg.aggregation,
        })
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    /// One row per checked individual: (index, observed statistic, score).
    pub fn save_scores_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["individual", "t_obs", "score", "held_entries"])?;
        for c in &self.individuals {
            w.write_record([
                c.index.to_string(),
                format!("{:.17e}", c.t_obs),
                format!("{:.17e}", c.score),
                c.held_entries.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format replicate statistics for external density plots.
    pub fn save_replicates_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["individual", "replicate", "t_rep"])?;
        for (c, reps) in self.individuals.iter().zip(&self.replicate_stats) {
            for (r, t) in reps.iter().enumerate() {
                w.write_record([
                    c.index.to_string(),
                    r.to_string(),
                    format!("{:.17e}", t),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Key a row's random substream by its content (values + held pattern), not
/// its position, so permuting individuals permutes their scores exactly.
fn row_key(a_row: &DVector<f64>, held_cols: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |b: u64| {
        for byte in b.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for v in a_row.iter() {
        eat(v.to_bits());
    }
    for &j in held_cols {
        eat(j as u64);
    }
    h
}

fn score_increment(t_rep: f64, t_obs: f64) -> f64 {
    if t_rep < t_obs {
        1.0
    } else if t_rep == t_obs {
        // Ties count half so discrete models (counts) don't get pushed to 0
        // or 1 by atoms in the replicate distribution.
        0.5
    } else {
        0.0
    }
}

/// The held-out predictive check for an assignment model.
///
/// Splits the causes entrywise, fits `spec` on the observed entries, then for
/// each individual scores the observed held-out log-likelihood against `r`
/// posterior-predictive replicates. Deterministic given `cfg.seed` and the
/// stream.
pub fn run_check(
    spec: &FactorModelSpec,
    d: &Dataset,
    cfg: &CheckConfig,
    rng: &RngStream,
) -> Result<CheckReport> {
    cfg.validate()?;
    let root = rng.named(&format!("check-{}", cfg.seed));
    let mask = split_holdout(d, cfg.fraction, &root.named("holdout"))?;
    let fit = factor::fit(spec, &d.causes, &d.cause_kinds, Some(&mask), &root.named("fit"))?;
    score_against_mask(&fit, &d.causes, &mask.held, cfg, &root)
}

/// The scoring half of the check, reusable with an externally provided fit
/// and mask (the pipeline uses this to probe an already-fitted model).
pub fn score_against_mask(
    fit: &FactorFit,
    causes: &DMatrix<f64>,
    held: &DMatrix<bool>,
    cfg: &CheckConfig,
    rng: &RngStream,
) -> Result<CheckReport> {
    let (n, m) = causes.shape();
    if held.shape() != (n, m) {
        return Err(Error::Dimension("mask shape does not match causes".into()));
    }

    let results: Vec<Result<Option<(IndividualCheck, Vec<f64>)>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let held_cols: Vec<usize> = (0..m).filter(|&j| held[(i, j)]).collect();
            if held_cols.is_empty() {
                return Ok(None);
            }
            let observed: Vec<usize> = (0..m).filter(|&j| !held[(i, j)]).collect();
            let a_row = DVector::from_iterator(m, causes.row(i).iter().cloned());
            let held_vals: Vec<(usize, f64)> =
                held_cols.iter().map(|&j| (j, causes[(i, j)])).collect();

            let row_rng = rng.substream(row_key(&a_row, &held_cols));
            let posterior = fit.infer_z(&a_row, Some(&observed))?;
            let mut gen = row_rng.named("z").rng();
            let z_draws: Vec<DVector<f64>> =
                (0..cfg.z_samples).map(|_| posterior.sample(&mut gen)).collect();

            let t_obs = fit.held_loglik(&z_draws, &held_vals)?;
            let reps = fit.sample_held_replicates(
                &posterior,
                &held_cols,
                cfg.replicates,
                &row_rng.named("rep"),
            )?;
            let mut t_reps = Vec::with_capacity(cfg.replicates);
            let mut below = 0.0;
            for rep in reps {
                let rep_vals: Vec<(usize, f64)> =
                    held_cols.iter().cloned().zip(rep).collect();
                let t_rep = fit.held_loglik(&z_draws, &rep_vals)?;
                below += score_increment(t_rep, t_obs);
                t_reps.push(t_rep);
            }
            let score = below / cfg.replicates as f64;
            Ok(Some((
                IndividualCheck {
                    index: i,
                    t_obs,
                    score,
                    held_entries: held_cols.len(),
                },
                t_reps,
            )))
        })
        .collect();

    let mut rows = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(row) => rows.push(row),
            None => skipped += 1,
        }
    }
    CheckReport::assemble(rows, skipped, cfg)
}

/// Predictive check for the outcome model: rows (not entries) of the outcome
/// are held out, the outcome regression is fit on the rest, and each held row
/// is scored against replicates from the fitted predictive distribution.
///
/// `design` must be the full outcome design (causes | confounder features |
/// covariates) for all n rows, as produced by `outcome::build_design`.
pub fn check_outcome(
    spec: &OutcomeModelSpec,
    design: &DMatrix<f64>,
    info: &outcome::DesignInfo,
    y: &DVector<f64>,
    cfg: &CheckConfig,
    rng: &RngStream,
) -> Result<CheckReport> {
    cfg.validate()?;
    let n = design.nrows();
    if y.len() != n {
        return Err(Error::Dimension("outcome length does not match design".into()));
    }
    if n < 10 {
        return Err(Error::Argument("need at least 10 rows to check an outcome model".into()));
    }

    let root = rng.named(&format!("outcome-check-{}", cfg.seed));
    let mut gen = root.named("holdout").rng();
    let mut held_rows: Vec<bool> = (0..n)
        .map(|_| rand::Rng::gen::<f64>(&mut gen) < cfg.fraction)
        .collect();
    if !held_rows.iter().any(|&h| h) {
        held_rows[rand::Rng::gen_range(&mut gen, 0..n)] = true;
    }
    if held_rows.iter().all(|&h| h) {
        return Err(Error::Argument("holdout fraction left no training rows".into()));
    }

    let train_idx: Vec<usize> = (0..n).filter(|&i| !held_rows[i]).collect();
    let test_idx: Vec<usize> = (0..n).filter(|&i| held_rows[i]).collect();
    let take = |idx: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(idx.len(), design.ncols(), |r, c| design[(idx[r], c)]);
        let yy = DVector::from_fn(idx.len(), |r, _| y[idx[r]]);
        (x, yy)
    };
    let (x_train, y_train) = take(&train_idx);

    let fit = match spec.family {
        OutcomeFamily::GaussianLinear => outcome::fit_ridge(&x_train, &y_train, spec.penalty, info)?,
        OutcomeFamily::Logistic => {
            outcome::fit_logistic(&x_train, &y_train, spec.penalty, spec.tol, info)?
        }
    };

    let sigma2 = fit.sigma2.unwrap_or(1.0);
    let sd = sigma2.sqrt();
    let results: Vec<Result<(IndividualCheck, Vec<f64>)>> = test_idx
        .par_iter()
        .map(|&i| {
            let row = DVector::from_iterator(design.ncols(), design.row(i).iter().cloned());
            let eta = fit.linear_predictor(&row)?;
            let (t_obs, sampler): (f64, Box<dyn Fn(&mut rand_chacha::ChaCha8Rng) -> f64>) =
                match spec.family {
                    OutcomeFamily::GaussianLinear => {
                        let ll = |v: f64| {
                            -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
                                - (v - eta).powi(2) / (2.0 * sigma2)
                        };
                        (
                            ll(y[i]),
                            Box::new(move |g: &mut rand_chacha::ChaCha8Rng| {
                                let e: f64 = rand_distr::Distribution::sample(
                                    &rand_distr::StandardNormal,
                                    g,
                                );
                                ll(eta + sd * e)
                            }),
                        )
                    }
                    OutcomeFamily::Logistic => {
                        let p = 1.0 / (1.0 + (-eta).exp());
                        let ll = move |v: f64| {
                            if v > 0.5 {
                                p.max(1e-300).ln()
                            } else {
                                (1.0 - p).max(1e-300).ln()
                            }
                        };
                        (
                            ll(y[i]),
                            Box::new(move |g: &mut rand_chacha::ChaCha8Rng| {
                                let u: f64 = rand::Rng::gen(g);
                                ll(if u < p { 1.0 } else { 0.0 })
                            }),
                        )
                    }
                };
            let mut gen = rng
                .named(&format!("outcome-check-{}", cfg.seed))
                .named(&format!("row-{i}"))
                .rng();
            let mut t_reps = Vec::with_capacity(cfg.replicates);
            let mut below = 0.0;
            for _ in 0..cfg.replicates {
                let t_rep = sampler(&mut gen);
                below += score_increment(t_rep, t_obs);
                t_reps.push(t_rep);
            }
            Ok((
                IndividualCheck {
                    index: i,
                    t_obs,
                    score: below / cfg.replicates as f64,
                    held_entries: 1,
                },
                t_reps,
            ))
        })
        .collect();

    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    CheckReport::assemble(rows, 0, cfg)
}
