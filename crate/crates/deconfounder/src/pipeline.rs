//! End-to-end orchestration: try candidate factor models until one passes
//! the predictive check, build the substitute confounder, fit the outcome
//! model, and report effects, uncertainty, and overlap diagnostics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::check::{self, CheckConfig, CheckReport};
use crate::data::{split_holdout, Dataset};
use crate::error::{Error, Result};
use crate::factor::{self, FactorFit, FactorModelSpec};
use crate::outcome::{self, OutcomeFamily, OutcomeFit, OutcomeModelSpec};
use crate::rng::RngStream;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub check: CheckConfig,
    /// Refit the accepted factor model on the full (unmasked) causes before
    /// estimation. The check itself always uses the masked fit.
    pub refit_on_full: bool,
    /// Posterior z-samples for the uncertainty summary; values < 2 skip it.
    pub uncertainty_samples: usize,
    /// Warn when the median conditional spread of A | Z falls below this.
    pub overlap_floor: f64,
    pub run_outcome_check: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            check: CheckConfig::default(),
            refit_on_full: true,
            uncertainty_samples: 0,
            overlap_floor: 1e-3,
            run_outcome_check: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintySummary {
    /// Per-cause-coefficient statistics across the s refits.
    pub mean: Vec<f64>,
    /// Population (1/s) variance, the "Variance" column of the benchmark
    /// tables.
    pub variance: Vec<f64>,
    pub lower_2_5: Vec<f64>,
    pub upper_97_5: Vec<f64>,
    /// The raw s×m coefficient samples, kept for the metrics layer.
    pub samples: DMatrix<f64>,
    pub failed_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapDiagnostics {
    /// Quantiles (min, 25%, median, 75%, max) of the per-entry conditional
    /// spread of A_ij given the substitute confounder.
    pub spread_quantiles: [f64; 5],
    pub floor: f64,
    pub limited_overlap: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeconfounderEstimate {
    pub accepted: FactorModelSpec,
    pub accepted_index: usize,
    /// Aggregate check score of every candidate that was tried, in order.
    pub candidate_scores: Vec<f64>,
    pub check: CheckReport,
    pub pass: bool,
    pub factor_fit: FactorFit,
    pub outcome_fit: OutcomeFit,
    pub outcome_check: Option<CheckReport>,
    /// One effect per requested contrast, in request order.
    pub effects: Vec<f64>,
    pub uncertainty: Option<UncertaintySummary>,
    pub overlap: OverlapDiagnostics,
}

impl DeconfounderEstimate {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// Posterior-mean substitute confounder, one row per individual.
pub fn posterior_mean_z(fit: &FactorFit, causes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = causes.nrows();
    let k = fit.spec.variant.latent_dim();
    let rows: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a_row = DVector::from_iterator(causes.ncols(), causes.row(i).iter().cloned());
            Ok(fit.infer_z(&a_row, None)?.mean())
        })
        .collect();
    let mut z = DMatrix::zeros(n, k);
    for (i, row) in rows.into_iter().enumerate() {
        z.row_mut(i).copy_from(&row?.transpose());
    }
    Ok(z)
}

/// Run the full procedure: iterate `candidates` in order until one passes
/// the predictive check, construct the substitute confounder from the
/// accepted (and by default refitted) model, fit the outcome regression, and
/// assemble effects and diagnostics. When no candidate passes, the
/// best-scoring one is carried through with `pass = false`.
pub fn run(
    d: &Dataset,
    candidates: &[FactorModelSpec],
    outcome_spec: &OutcomeModelSpec,
    contrasts: &[(DVector<f64>, DVector<f64>)],
    cfg: &PipelineConfig,
    rng: &RngStream,
) -> Result<DeconfounderEstimate> {
    if candidates.is_empty() {
        return Err(Error::Argument("need at least one candidate factor model".into()));
    }
    outcome_spec.validate()?;
    cfg.check.validate()?;

    // The assignment-model stage must be a pure function of the causes;
    // everything it consumes is derived before the outcome is touched.
    let mut tried: Vec<f64> = Vec::new();
    let mut best: Option<(usize, FactorFit, CheckReport)> = None;
    let mut errors: Vec<String> = Vec::new();
    for (idx, spec) in candidates.iter().enumerate() {
        let cand_rng = rng.named(&format!("candidate-{idx}"));
        let attempt = (|| -> Result<(FactorFit, CheckReport)> {
            let mask = split_holdout(d, cfg.check.fraction, &cand_rng.named("holdout"))?;
            let fit = factor::fit(spec, &d.causes, &d.cause_kinds, Some(&mask), &cand_rng.named("fit"))?;
            let report = check::score_against_mask(
                &fit,
                &d.causes,
                &mask.held,
                &cfg.check,
                &cand_rng.named("score"),
            )?;
            Ok((fit, report))
        })();
        match attempt {
            Ok((fit, report)) => {
                tried.push(report.aggregate_score);
                let better = best
                    .as_ref()
                    .map_or(true, |(_, _, b)| report.aggregate_score > b.aggregate_score);
                let passed = report.pass;
                if better {
                    best = Some((idx, fit, report));
                }
                if passed {
                    break;
                }
            }
            Err(e) => {
                tried.push(f64::NAN);
                errors.push(format!("candidate {idx} ({}): {e}", spec.variant.label()));
            }
        }
    }
    let (accepted_index, masked_fit, report) = best.ok_or_else(|| {
        Error::NonConvergence(format!("every candidate diverged: {}", errors.join("; ")))
    })?;
    let accepted = candidates[accepted_index].clone();
    let pass = report.pass;

    let fit = if cfg.refit_on_full {
        factor::fit(
            &accepted,
            &d.causes,
            &d.cause_kinds,
            None,
            &rng.named(&format!("candidate-{accepted_index}")).named("refit"),
        )?
    } else {
        masked_fit
    };

    let z = posterior_mean_z(&fit, &d.causes)?;
    let (design, info) = outcome::build_design(d, &fit, outcome_spec, &z)?;
    let outcome_fit = match outcome_spec.family {
        OutcomeFamily::GaussianLinear => {
            outcome::fit_ridge(&design, &d.outcome, outcome_spec.penalty, &info)?
        }
        OutcomeFamily::Logistic => outcome::fit_logistic(
            &design,
            &d.outcome,
            outcome_spec.penalty,
            outcome_spec.tol,
            &info,
        )?,
    };

    let outcome_check = if cfg.run_outcome_check {
        Some(check::check_outcome(
            outcome_spec,
            &design,
            &info,
            &d.outcome,
            &cfg.check,
            &rng.named("outcome-check"),
        )?)
    } else {
        None
    };

    let m = d.m();
    let background = design.columns(m, design.ncols() - m).into_owned();
    let effects = contrasts
        .iter()
        .map(|(a, ap)| outcome::average_effect(&outcome_fit, a, ap, Some(&background)))
        .collect::<Result<Vec<f64>>>()?;

    let uncertainty = if cfg.uncertainty_samples >= 2 {
        Some(uncertainty(
            d,
            &fit,
            outcome_spec,
            cfg.uncertainty_samples,
            &rng.named("uncertainty"),
        )?)
    } else {
        None
    };

    let overlap = overlap_diagnostics(&fit, &z, cfg.overlap_floor);

    Ok(DeconfounderEstimate {
        accepted,
        accepted_index,
        candidate_scores: tried,
        check: report,
        pass,
        factor_fit: fit,
        outcome_fit,
        outcome_check,
        effects,
        uncertainty,
        overlap,
    })
}

/// Sampling-based uncertainty for the cause coefficients: draw a fresh
/// substitute-confounder sample per row, refit the outcome model, and
/// summarize the s coefficient vectors. Individual refit failures are
/// skipped, but more than 10% of them abort the summary.
pub fn uncertainty(
    d: &Dataset,
    fit: &FactorFit,
    outcome_spec: &OutcomeModelSpec,
    s: usize,
    rng: &RngStream,
) -> Result<UncertaintySummary> {
    if s < 2 {
        return Err(Error::Argument("need at least 2 uncertainty samples".into()));
    }
    let n = d.n();
    let k = fit.spec.variant.latent_dim();
    if fit.posteriors.len() != n {
        return Err(Error::Dimension(format!(
            "factor fit carries {} posteriors for {} rows",
            fit.posteriors.len(),
            n
        )));
    }

    let results: Vec<Result<DVector<f64>>> = (0..s)
        .into_par_iter()
        .map(|t| {
            let mut gen = rng.substream(t as u64).rng();
            let mut z = DMatrix::zeros(n, k);
            for i in 0..n {
                z.row_mut(i).copy_from(&fit.posteriors[i].sample(&mut gen).transpose());
            }
            let (design, info) = outcome::build_design(d, fit, outcome_spec, &z)?;
            let refit = match outcome_spec.family {
                OutcomeFamily::GaussianLinear => {
                    outcome::fit_ridge(&design, &d.outcome, outcome_spec.penalty, &info)?
                }
                OutcomeFamily::Logistic => outcome::fit_logistic(
                    &design,
                    &d.outcome,
                    outcome_spec.penalty,
                    outcome_spec.tol,
                    &info,
                )?,
            };
            Ok(refit.beta)
        })
        .collect();

    let mut betas = Vec::with_capacity(s);
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(b) => betas.push(b),
            Err(_) => failed += 1,
        }
    }
    if failed * 10 > s {
        return Err(Error::NonConvergence(format!(
            "{failed} of {s} uncertainty refits failed"
        )));
    }
    if betas.len() < 2 {
        return Err(Error::NonConvergence("fewer than 2 usable uncertainty samples".into()));
    }

    let kept = betas.len();
    let m = betas[0].len();
    let mut samples = DMatrix::zeros(kept, m);
    for (t, b) in betas.iter().enumerate() {
        samples.row_mut(t).copy_from(&b.transpose());
    }

    let mut mean = vec![0.0; m];
    let mut variance = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for j in 0..m {
        let col: Vec<f64> = samples.column(j).iter().copied().collect();
        let mu = col.iter().sum::<f64>() / kept as f64;
        mean[j] = mu;
        variance[j] = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / kept as f64;
        let mut sorted = col;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower[j] = quantile(&sorted, 0.025);
        upper[j] = quantile(&sorted, 0.975);
    }

    Ok(UncertaintySummary {
        mean,
        variance,
        lower_2_5: lower,
        upper_97_5: upper,
        samples,
        failed_samples: failed,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Conditional-spread diagnostics for A | Z at the posterior-mean substitute
/// confounder: per-entry variance for gaussian families, entropy for count
/// families, summarized by quantiles. A low median flags limited overlap
/// (the confounder nearly determines the causes).
pub fn overlap_diagnostics(fit: &FactorFit, z: &DMatrix<f64>, floor: f64) -> OverlapDiagnostics {
    let n = z.nrows();
    let m = fit.m;
    let mut spreads = Vec::with_capacity(n * m);
    for i in 0..n {
        let zi = DVector::from_iterator(z.ncols(), z.row(i).iter().cloned());
        for j in 0..m {
            spreads.push(fit.conditional_spread(&zi, j));
        }
    }
    spreads.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| quantile(&spreads, p);
    let quantiles = [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)];
    OverlapDiagnostics {
        spread_quantiles: quantiles,
        floor,
        limited_overlap: quantiles[2] < floor,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskRatioRow {
    pub percent: f64,
    pub kept_causes: usize,
    pub rmse_deconfounder: f64,
    pub rmse_no_control: f64,
    /// rmse_deconfounder / rmse_no_control; < 1 means the deconfounder wins.
    pub ratio: f64,
}

/// Robustness probe: hide a percentage of the cause columns from the factor
/// model, infer the substitute confounder from what remains, and fit the
/// outcome regression on every cause plus that degraded substitute. The
/// no-control ridge baseline uses all causes and is the same at every
/// percent, so the RMSE ratio isolates how substitute quality decays as the
/// factor model sees fewer causes. Requires conditioning on ẑ: the
/// reconstruction â(ẑ) only covers the causes the factor model saw.
pub fn mask_causes_experiment(
    d: &Dataset,
    beta_star: &[f64],
    percents: &[f64],
    candidates: &[FactorModelSpec],
    outcome_spec: &OutcomeModelSpec,
    cfg: &PipelineConfig,
    rng: &RngStream,
) -> Result<Vec<MaskRatioRow>> {
    let m = d.m();
    if beta_star.len() != m {
        return Err(Error::Dimension(format!(
            "{} true coefficients for {} causes",
            beta_star.len(),
            m
        )));
    }
    if outcome_spec.conditioning != outcome::Conditioning::OnZ {
        return Err(Error::Argument(
            "mask experiment requires conditioning on z".into(),
        ));
    }

    let truth = DVector::from_column_slice(beta_star);
    let info_nc = outcome::DesignInfo {
        n_causes: m,
        n_confounder: 0,
        n_covariates: 0,
        column_names: d.cause_names.clone(),
    };
    let naive = outcome::fit_ridge(&d.causes, &d.outcome, outcome_spec.penalty, &info_nc)?;
    let rmse_nc = crate::metrics::rmse(&naive.beta, &truth)?;

    let mut rows = Vec::with_capacity(percents.len());
    for &percent in percents {
        if !(0.0..100.0).contains(&percent) {
            return Err(Error::Argument(format!(
                "mask percent {percent} outside [0, 100)"
            )));
        }
        let drop = ((percent / 100.0) * m as f64).round() as usize;
        let kept: Vec<usize> = if drop == 0 {
            (0..m).collect()
        } else {
            let mut gen = rng.named("mask").substream(percent.to_bits()).rng();
            let mut idx: Vec<usize> = (0..m).collect();
            // Fisher-Yates prefix shuffle, then keep the tail sorted.
            for i in 0..drop {
                let j = rand::Rng::gen_range(&mut gen, i..m);
                idx.swap(i, j);
            }
            let mut kept: Vec<usize> = idx[drop..].to_vec();
            kept.sort_unstable();
            kept
        };
        if kept.len() < 2 {
            return Err(Error::Argument(format!(
                "mask percent {percent} leaves fewer than 2 causes"
            )));
        }

        let causes = DMatrix::from_fn(d.n(), kept.len(), |i, c| d.causes[(i, kept[c])]);
        let sub = Dataset::new(
            causes,
            d.outcome.clone(),
            d.covariates.clone(),
            kept.iter().map(|&j| d.cause_kinds[j].clone()).collect(),
            kept.iter().map(|&j| d.cause_names[j].clone()).collect(),
            d.covariate_names.clone(),
            d.outcome_name.clone(),
        )?;
        let sub_rng = rng.named("pipeline").substream(percent.to_bits());
        let estimate = run(&sub, candidates, outcome_spec, &[], cfg, &sub_rng)?;
        // the factor model saw only the kept causes; the outcome regression
        // sees all of them, plus the (degraded) substitute inferred from the
        // kept subset
        let z = posterior_mean_z(&estimate.factor_fit, &sub.causes)?;
        let k = z.ncols();
        let mut design = DMatrix::zeros(d.n(), m + k);
        design.view_mut((0, 0), (d.n(), m)).copy_from(&d.causes);
        design.view_mut((0, m), (d.n(), k)).copy_from(&z);
        let mut names = d.cause_names.clone();
        for j in 0..k {
            names.push(format!("zhat_{}", j + 1));
        }
        let info = outcome::DesignInfo {
            n_causes: m,
            n_confounder: k,
            n_covariates: 0,
            column_names: names,
        };
        let fit = outcome::fit_ridge(&design, &d.outcome, outcome_spec.penalty, &info)?;
        let rmse_dcf = crate::metrics::rmse(&fit.beta, &truth)?;

        rows.push(MaskRatioRow {
            percent,
            kept_causes: kept.len(),
            rmse_deconfounder: rmse_dcf,
            rmse_no_control: rmse_nc,
            ratio: rmse_dcf / rmse_nc,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CauseKind;
    use crate::factor::{FactorVariant, NoiseSpec};
    use rand_distr::{Distribution, StandardNormal};

    fn ppca_spec(k: usize) -> FactorModelSpec {
        FactorModelSpec::new(FactorVariant::Ppca {
            k,
            prior_var: 1.0,
            noise: NoiseSpec::Learned,
        })
    }

    fn confounded_dataset(n: usize, seed: u64) -> (Dataset, Vec<f64>) {
        // One latent confounder drives 6 causes and the outcome.
        let mut gen = RngStream::new(seed).rng();
        let m = 6;
        let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut gen));
        let loadings: Vec<f64> = (0..m).map(|j| 1.0 - 0.2 * j as f64).collect();
        let causes = DMatrix::<f64>::from_fn(n, m, |i, j| {
            let e: f64 = StandardNormal.sample(&mut gen);
            loadings[j] * z[i] + 0.6 * e
        });
        let beta: Vec<f64> = (0..m).map(|j| if j < 2 { 0.8 } else { 0.0 }).collect();
        let y = DVector::<f64>::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut gen);
            (0..m).map(|j| beta[j] * causes[(i, j)]).sum::<f64>() + 1.5 * z[i] + 0.5 * e
        });
        let d = Dataset::new(
            causes,
            y,
            None,
            vec![CauseKind::Real; m],
            (0..m).map(|j| format!("a{j}")).collect(),
            vec![],
            "y".into(),
        )
        .unwrap();
        (d, beta)
    }

    fn fast_cfg() -> PipelineConfig {
        PipelineConfig {
            check: CheckConfig {
                replicates: 40,
                z_samples: 20,
                ..CheckConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn well_specified_candidate_is_accepted_first() {
        let (d, _) = confounded_dataset(150, 3);
        let est = run(
            &d,
            &[ppca_spec(1)],
            &OutcomeModelSpec::default(),
            &[],
            &fast_cfg(),
            &RngStream::new(5),
        )
        .unwrap();
        assert_eq!(est.accepted_index, 0);
        assert!(est.pass);
        assert_eq!(est.candidate_scores.len(), 1);
    }

    #[test]
    fn impossible_threshold_reports_best_candidate_without_pass() {
        let (d, _) = confounded_dataset(100, 7);
        let mut cfg = fast_cfg();
        cfg.check.threshold = 0.99;
        let est = run(
            &d,
            &[ppca_spec(1), ppca_spec(2)],
            &OutcomeModelSpec::default(),
            &[],
            &cfg,
            &RngStream::new(9),
        )
        .unwrap();
        assert!(!est.pass);
        assert_eq!(est.candidate_scores.len(), 2);
        let best = est
            .candidate_scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(est.check.aggregate_score, best);
    }

    #[test]
    fn empty_candidate_list_is_an_argument_error() {
        let (d, _) = confounded_dataset(50, 11);
        let err = run(
            &d,
            &[],
            &OutcomeModelSpec::default(),
            &[],
            &fast_cfg(),
            &RngStream::new(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn factor_stage_ignores_the_outcome() {
        // The substitute confounder must be a pure function of (causes,
        // spec, seed): perturbing the outcome cannot change the factor fit.
        let (d, _) = confounded_dataset(100, 13);
        let mut d2 = d.clone();
        for i in 0..d2.n() {
            d2.outcome[i] = -3.0 * d2.outcome[i] + 7.0;
        }
        let est1 = run(&d, &[ppca_spec(1)], &OutcomeModelSpec::default(), &[], &fast_cfg(), &RngStream::new(17)).unwrap();
        let est2 = run(&d2, &[ppca_spec(1)], &OutcomeModelSpec::default(), &[], &fast_cfg(), &RngStream::new(17)).unwrap();
        assert_eq!(
            serde_json::to_string(&est1.factor_fit).unwrap(),
            serde_json::to_string(&est2.factor_fit).unwrap()
        );
        // ... while the outcome stage of course changes.
        assert_ne!(
            serde_json::to_string(&est1.outcome_fit).unwrap(),
            serde_json::to_string(&est2.outcome_fit).unwrap()
        );
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (d, _) = confounded_dataset(80, 19);
        let mut cfg = fast_cfg();
        cfg.uncertainty_samples = 4;
        let a = run(&d, &[ppca_spec(1)], &OutcomeModelSpec::default(), &[], &cfg, &RngStream::new(23)).unwrap();
        let b = run(&d, &[ppca_spec(1)], &OutcomeModelSpec::default(), &[], &cfg, &RngStream::new(23)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn deconfounder_beats_no_control_on_confounded_data() {
        let mut wins = 0;
        for seed in 0..6 {
            let (d, beta) = confounded_dataset(300, 100 + seed);
            let est = run(
                &d,
                &[ppca_spec(1)],
                &OutcomeModelSpec::default(),
                &[],
                &fast_cfg(),
                &RngStream::new(200 + seed),
            )
            .unwrap();
            let truth = DVector::from_vec(beta.clone());
            let dcf = crate::metrics::rmse(&est.outcome_fit.beta, &truth).unwrap();

            let info = outcome::DesignInfo {
                n_causes: d.m(),
                n_confounder: 0,
                n_covariates: 0,
                column_names: d.cause_names.clone(),
            };
            let naive = outcome::fit_ridge(&d.causes, &d.outcome, 0.1, &info).unwrap();
            let nc = crate::metrics::rmse(&naive.beta, &truth).unwrap();
            if dcf < nc {
                wins += 1;
            }
        }
        assert!(wins >= 5, "deconfounder won only {wins}/6 seeds");
    }

    #[test]
    fn uncertainty_vanishes_quadratically_with_posterior_spread() {
        // As the posterior spread shrinks toward zero the coefficient
        // sampling variance must vanish ∝ spread². (It is *not* monotone
        // over the whole range: the posterior-mean ẑ column lies in the
        // span of the causes, so moderate spread is what identifies its
        // coefficient, and partially-shrunk posteriors can inflate the
        // per-coefficient variance before the quadratic limit kicks in.)
        let (d, _) = confounded_dataset(150, 29);
        let fit = factor::fit(&ppca_spec(1), &d.causes, &d.cause_kinds, None, &RngStream::new(31))
            .unwrap();
        let spec = OutcomeModelSpec::default();
        let base = uncertainty(&d, &fit, &spec, 30, &RngStream::new(37)).unwrap();
        assert_eq!(base.mean.len(), d.m());
        assert!(base.variance.iter().all(|&v| v >= 0.0));
        assert_eq!(base.failed_samples, 0);

        let at_scale = |scale: f64| {
            let mut tight = fit.clone();
            for p in &mut tight.posteriors {
                *p = p.scale_spread(scale);
            }
            let s = uncertainty(&d, &tight, &spec, 30, &RngStream::new(37)).unwrap();
            s.variance.iter().sum::<f64>()
        };
        let v3 = at_scale(1e-3);
        let v4 = at_scale(1e-4);
        let total: f64 = base.variance.iter().sum();
        assert!(v3 < total, "scale 1e-3 variance {v3} not below base {total}");
        let ratio = v3 / v4;
        assert!(
            (50.0..200.0).contains(&ratio),
            "variance ratio across one decade of spread was {ratio}, expected ~100"
        );
    }

    #[test]
    fn degenerate_posterior_gives_zero_variance() {
        let (d, _) = confounded_dataset(60, 41);
        let mut fit =
            factor::fit(&ppca_spec(1), &d.causes, &d.cause_kinds, None, &RngStream::new(43))
                .unwrap();
        for p in &mut fit.posteriors {
            *p = p.scale_spread(0.0);
        }
        let summary = uncertainty(&d, &fit, &OutcomeModelSpec::default(), 5, &RngStream::new(47))
            .unwrap();
        assert!(summary.variance.iter().all(|&v| v < 1e-20));
    }

    #[test]
    fn overlap_reports_ppca_noise_variance_everywhere() {
        let (d, _) = confounded_dataset(60, 53);
        let fit = factor::fit(&ppca_spec(1), &d.causes, &d.cause_kinds, None, &RngStream::new(59))
            .unwrap();
        let sigma2 = match &fit.params {
            crate::factor::FittedParams::Ppca { sigma2, .. } => *sigma2,
            _ => unreachable!(),
        };
        let z = posterior_mean_z(&fit, &d.causes).unwrap();
        let diag = overlap_diagnostics(&fit, &z, 1e-3);
        for q in diag.spread_quantiles {
            assert!((q - sigma2).abs() < 1e-12);
        }
        assert!(!diag.limited_overlap);

        let mut interp = fit.clone();
        if let crate::factor::FittedParams::Ppca { sigma2, .. } = &mut interp.params {
            *sigma2 = 1e-5;
        }
        let warn = overlap_diagnostics(&interp, &z, 1e-3);
        assert!(warn.limited_overlap);
    }

    #[test]
    fn mask_experiment_identity_and_bounds() {
        let (d, beta) = confounded_dataset(150, 61);
        let mut cfg = fast_cfg();
        // half the causes survive the 50% mask, so the per-entry holdout
        // needs a fraction large enough to hold at least one entry per row
        cfg.check.fraction = 0.5;
        let candidates = [ppca_spec(1)];
        let spec = OutcomeModelSpec::default();
        let rng = RngStream::new(67);

        let rows = mask_causes_experiment(&d, &beta, &[0.0, 50.0], &candidates, &spec, &cfg, &rng)
            .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].kept_causes, d.m());
        assert_eq!(rows[1].kept_causes, 3);

        // percent 0 reproduces the unmasked pipeline exactly
        let again =
            mask_causes_experiment(&d, &beta, &[0.0], &candidates, &spec, &cfg, &rng).unwrap();
        assert_eq!(rows[0].ratio, again[0].ratio);

        assert!(mask_causes_experiment(&d, &beta, &[100.0], &candidates, &spec, &cfg, &rng)
            .is_err());
    }
}
