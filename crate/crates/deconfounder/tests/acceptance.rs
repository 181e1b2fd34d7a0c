//! End-to-end acceptance gate: one test per headline property, each
//! printing a single PASS/FAIL line (run with `--nocapture` to see them).

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use deconfounder::check::{self, CheckConfig};
use deconfounder::cli;
use deconfounder::data::{CauseKind, Dataset};
use deconfounder::factor::{
    self, ppca_marginal_loglik_and_grad, FactorModelSpec, FactorVariant, FittedParams,
    LatentPosterior, NoiseSpec,
};
use deconfounder::outcome::{self, DesignInfo, OutcomeModelSpec};
use deconfounder::pipeline;
use deconfounder::sim::{
    self, assign_groups, simulate_genotypes, GwasGenerator, GwasSimConfig, OutcomeKind,
    SnrProfile,
};
use deconfounder::RngStream;

fn report(criterion: &str, ok: bool, detail: &str) {
    println!(
        "[{}] {criterion}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{criterion} failed: {detail}");
}

fn ppca_spec(k: usize, seed: u64) -> FactorModelSpec {
    let mut spec = FactorModelSpec::new(FactorVariant::Ppca {
        k,
        prior_var: 1.0,
        noise: NoiseSpec::Learned,
    });
    spec.fit.seed = seed;
    spec
}

// ---------------------------------------------------------------------------
// 1. Ridge oracle: exact match with an independent Gauss-Jordan solve.

fn gauss_jordan_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut aug = DMatrix::zeros(n, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(b);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[(i, col)].abs().partial_cmp(&aug[(j, col)].abs()).unwrap())
            .unwrap();
        aug.swap_rows(col, pivot);
        let p = aug[(col, col)];
        for j in col..=n {
            aug[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = aug[(i, col)];
                for j in col..=n {
                    aug[(i, j)] -= f * aug[(col, j)];
                }
            }
        }
    }
    aug.column(n).into_owned()
}

#[test]
fn criterion_01_ridge_matches_dense_solve() {
    let start = Instant::now();
    let penalty = 0.7;
    let mut worst: f64 = 0.0;
    for inst in 0..100u64 {
        let mut gen = RngStream::new(9000 + inst).rng();
        let (n, p) = (50, 8);
        let x = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut gen));
        let y = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut gen));
        let info = DesignInfo {
            n_causes: p,
            n_confounder: 0,
            n_covariates: 0,
            column_names: (0..p).map(|j| format!("x{j}")).collect(),
        };
        let fit = outcome::fit_ridge(&x, &y, penalty, &info).unwrap();

        // independent oracle: Gauss-Jordan on the intercept-augmented
        // penalized normal equations (intercept unpenalized)
        let mut d = DMatrix::zeros(n, p + 1);
        d.view_mut((0, 0), (n, 1)).fill(1.0);
        d.view_mut((0, 1), (n, p)).copy_from(&x);
        let mut gram = d.transpose() * &d;
        for j in 1..=p {
            gram[(j, j)] += penalty;
        }
        let rhs = d.transpose() * &y;
        let sol = gauss_jordan_solve(&gram, &rhs);
        worst = worst.max((fit.intercept - sol[0]).abs());
        for j in 0..p {
            worst = worst.max((fit.beta[j] - sol[j + 1]).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 1 (ridge oracle)",
        worst < 1e-8 && elapsed < 5.0,
        &format!("max |Δcoef| = {worst:.2e} over 100 instances in {elapsed:.2}s"),
    );
}

// ---------------------------------------------------------------------------
// 2. Posterior oracles: PPCA conditioning and logistic grid search.

#[test]
fn criterion_02_posterior_oracles() {
    // PPCA z-posterior vs brute-force joint-gaussian conditioning
    let mut worst: f64 = 0.0;
    for seed in 0..6u64 {
        let mut gen = RngStream::new(400 + seed).rng();
        let (n, m, k) = (80, 4 + (seed as usize % 3), 2);
        let causes = DMatrix::<f64>::from_fn(n, m, |_, _| StandardNormal.sample(&mut gen));
        let fit = factor::fit(
            &ppca_spec(k, seed),
            &causes,
            &vec![CauseKind::Real; m],
            None,
            &RngStream::new(seed),
        )
        .unwrap();
        let (theta, sigma2, prior_var) = match &fit.params {
            FittedParams::Ppca { theta, sigma2, prior_var } => (theta.clone(), *sigma2, *prior_var),
            _ => unreachable!(),
        };
        // joint covariance of (z, a): cov_zz = v I, cov_za = v θ',
        // cov_aa = v θθ' + σ² I, with θ an m×k loading matrix
        let cov_aa = &theta * theta.transpose() * prior_var + DMatrix::identity(m, m) * sigma2;
        let cov_za = theta.transpose() * prior_var;
        let aa_inv = Cholesky::new(cov_aa).unwrap().inverse();
        for i in 0..n {
            let a_row = DVector::from_iterator(m, causes.row(i).iter().cloned());
            let post = fit.infer_z(&a_row, None).unwrap();
            let (mean, cov) = match post {
                LatentPosterior::Gaussian { mean, cov } => (mean, cov),
                _ => unreachable!(),
            };
            let oracle_mean = &cov_za * &aa_inv * &a_row;
            let oracle_cov =
                DMatrix::identity(k, k) * prior_var - &cov_za * &aa_inv * cov_za.transpose();
            worst = worst.max((&mean - &oracle_mean).amax());
            worst = worst.max((&cov - &oracle_cov).amax());
        }
    }
    let ppca_ok = worst < 1e-8;

    // logistic fit vs refined 2-parameter grid search on the penalized
    // log-likelihood (one feature + intercept)
    let mut gen = RngStream::new(777).rng();
    let n = 60;
    let x = DMatrix::<f64>::from_fn(n, 1, |_, _| StandardNormal.sample(&mut gen));
    let y = DVector::<f64>::from_fn(n, |i, _| {
        let p = 1.0 / (1.0 + (-(0.8 * x[(i, 0)] - 0.3)).exp());
        if gen.gen::<f64>() < p { 1.0 } else { 0.0 }
    });
    let penalty = 0.5;
    let info = DesignInfo {
        n_causes: 1,
        n_confounder: 0,
        n_covariates: 0,
        column_names: vec!["x".into()],
    };
    let fit = outcome::fit_logistic(&x, &y, penalty, 1e-12, &info).unwrap();

    let objective = |b0: f64, b1: f64| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            let eta = b0 + b1 * x[(i, 0)];
            ll += y[i] * eta - (1.0 + eta.exp()).ln();
        }
        ll - 0.5 * penalty * b1 * b1
    };
    let (mut c0, mut c1, mut half) = (0.0, 0.0, 4.0);
    for _ in 0..60 {
        let mut best = (f64::NEG_INFINITY, c0, c1);
        for i in -10..=10 {
            for j in -10..=10 {
                let b0 = c0 + half * i as f64 / 10.0;
                let b1 = c1 + half * j as f64 / 10.0;
                let v = objective(b0, b1);
                if v > best.0 {
                    best = (v, b0, b1);
                }
            }
        }
        c0 = best.1;
        c1 = best.2;
        half *= 0.3;
    }
    let logit_err = (fit.intercept - c0).abs().max((fit.beta[0] - c1).abs());
    report(
        "criterion 2 (posterior oracles)",
        ppca_ok && logit_err < 1e-4,
        &format!("PPCA max |Δ| = {worst:.2e}, logistic grid |Δ| = {logit_err:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 3. Monotone objectives across seeds.

#[test]
fn criterion_03_monotone_objectives() {
    let violations: Vec<String> = (0..20u64)
        .into_par_iter()
        .flat_map(|seed| {
            let mut bad = Vec::new();
            let mut gen = RngStream::new(1000 + seed).rng();
            let (n, m) = (120, 8);

            let gauss = DMatrix::<f64>::from_fn(n, m, |_, _| StandardNormal.sample(&mut gen));
            let fit = factor::fit(
                &ppca_spec(2, seed),
                &gauss,
                &vec![CauseKind::Real; m],
                None,
                &RngStream::new(seed),
            )
            .unwrap();
            for w in fit.trace.windows(2) {
                if w[1] < w[0] - 1e-6 {
                    bad.push(format!("ppca seed {seed}: {} -> {}", w[0], w[1]));
                }
            }

            let counts = DMatrix::<f64>::from_fn(n, m, |_, _| {
                rand_distr::Poisson::new(2.0).unwrap().sample(&mut gen)
            });
            let mut pf = FactorModelSpec::new(FactorVariant::Pf { k: 2, shape: 0.3, rate: 0.3 });
            pf.fit.seed = seed;
            let fit = factor::fit(
                &pf,
                &counts,
                &vec![CauseKind::Count; m],
                None,
                &RngStream::new(seed),
            )
            .unwrap();
            for w in fit.trace.windows(2) {
                if w[1] < w[0] - 1e-6 {
                    bad.push(format!("pf seed {seed}: {} -> {}", w[0], w[1]));
                }
            }
            bad
        })
        .collect();
    report(
        "criterion 3 (monotone objectives)",
        violations.is_empty(),
        &format!(
            "PPCA log-likelihood and PF ELBO non-decreasing over 20 seeds each{}",
            if violations.is_empty() {
                String::new()
            } else {
                format!("; violations: {}", violations.join("; "))
            }
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Analytic gradients vs central finite differences.

#[test]
fn criterion_04_gradient_checks() {
    // PPCA marginal likelihood wrt theta
    let mut gen = RngStream::new(2024).rng();
    let (n, m, k) = (40, 5, 2);
    let causes = DMatrix::<f64>::from_fn(n, m, |_, _| StandardNormal.sample(&mut gen));
    let theta = DMatrix::<f64>::from_fn(m, k, |_, _| StandardNormal.sample(&mut gen));
    let (_, grad) = ppca_marginal_loglik_and_grad(&theta, 0.7, 1.0, &causes);
    let mut worst_rel: f64 = 0.0;
    let h = 1e-5;
    for r in 0..m {
        for c in 0..k {
            let mut tp = theta.clone();
            tp[(r, c)] += h;
            let mut tm = theta.clone();
            tm[(r, c)] -= h;
            let (lp, _) = ppca_marginal_loglik_and_grad(&tp, 0.7, 1.0, &causes);
            let (lm, _) = ppca_marginal_loglik_and_grad(&tm, 0.7, 1.0, &causes);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[(r, c)] - fd).abs() / fd.abs().max(1.0);
            worst_rel = worst_rel.max(rel);
        }
    }
    let ppca_ok = worst_rel < 1e-4;

    // logistic log-likelihood wrt coefficients: analytic X'(y - p)
    let p = 3;
    let x = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut gen));
    let y = DVector::<f64>::from_fn(n, |_, _| if gen.gen::<f64>() < 0.5 { 1.0 } else { 0.0 });
    let w = DVector::<f64>::from_fn(p, |_, _| {
        let e: f64 = StandardNormal.sample(&mut gen);
        0.3 * e
    });
    let loglik = |w: &DVector<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let eta: f64 = x.row(i).transpose().dot(w);
                y[i] * eta - (1.0 + eta.exp()).ln()
            })
            .sum()
    };
    let probs = DVector::from_fn(n, |i, _| {
        let eta: f64 = x.row(i).transpose().dot(&w);
        1.0 / (1.0 + (-eta).exp())
    });
    let analytic = x.transpose() * (&y - probs);
    let mut worst_logit: f64 = 0.0;
    for j in 0..p {
        let mut wp = w.clone();
        wp[j] += h;
        let mut wm = w.clone();
        wm[j] -= h;
        let fd = (loglik(&wp) - loglik(&wm)) / (2.0 * h);
        worst_logit = worst_logit.max((analytic[j] - fd).abs() / fd.abs().max(1.0));
    }
    report(
        "criterion 4 (gradient checks)",
        ppca_ok && worst_logit < 1e-4,
        &format!("PPCA rel err {worst_rel:.2e}, logistic rel err {worst_logit:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 5. Predictive-check calibration under a well-specified model.

#[test]
fn criterion_05_check_calibration() {
    let start = Instant::now();
    let (n, m, k) = (500, 20, 3);
    let results: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut gen = RngStream::new(3000 + seed).rng();
            let z = DMatrix::<f64>::from_fn(n, k, |_, _| StandardNormal.sample(&mut gen));
            let theta = DMatrix::<f64>::from_fn(k, m, |_, _| StandardNormal.sample(&mut gen));
            let noise = 0.8;
            let mut causes = &z * &theta;
            for v in causes.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut gen);
                *v += noise * e;
            }
            let d = Dataset::new(
                causes,
                DVector::zeros(n),
                None,
                vec![CauseKind::Real; m],
                (0..m).map(|j| format!("a{j}")).collect(),
                vec![],
                "y".into(),
            )
            .unwrap();
            let cfg = CheckConfig { replicates: 100, z_samples: 50, ..CheckConfig::default() };
            let report =
                check::run_check(&ppca_spec(k, seed), &d, &cfg, &RngStream::new(seed)).unwrap();

            // KS distance of the per-individual scores to Uniform(0, 1)
            let mut scores: Vec<f64> =
                report.individuals.iter().map(|i| i.score).collect();
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ks = scores
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let lo = i as f64 / scores.len() as f64;
                    let hi = (i + 1) as f64 / scores.len() as f64;
                    (s - lo).abs().max((s - hi).abs())
                })
                .fold(0.0, f64::max);
            (report.aggregate_score, ks)
        })
        .collect();
    let good = results
        .iter()
        .filter(|(score, ks)| (0.3..=0.7).contains(score) && *ks < 0.1)
        .count();
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 5 (check calibration)",
        good >= 16 && elapsed < 120.0,
        &format!("{good}/20 seeds calibrated (score in [0.3,0.7], KS < 0.1) in {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 6. Two-cause quadratic-confounding qualitative reproduction.

#[test]
fn criterion_06_two_cause_qualitative() {
    let start = Instant::now();
    let cfg = cli::SmokingSuiteConfig {
        seeds: 20,
        n: 2000,
        ..cli::SmokingSuiteConfig::default()
    };
    let (table, details) = cli::smoking_suite(&cfg).unwrap();
    table.validate().unwrap(); // mse = bias² + variance within 1e-9 per row

    // The check cannot reject the linear factor model here and that is a
    // property of the data, not a bug: the two causes are exactly a shared
    // latent (the curved confounder transform) plus unit noise, i.e. a
    // perfectly specified linear factor model, and a converged fit matches
    // every first and second moment the log-likelihood statistic can see.
    // The linear model's failure therefore has to show up downstream, where
    // its substitute confounder (a linear function of the causes) cannot
    // remove any bias, while the quadratic model's reconstructed causes can.
    // The check's job is the non-vacuous half: the quadratic model must
    // survive it.
    let quad_pass = details.iter().filter(|d| d.quadratic_score > 0.1).count();
    let bias_wins = details
        .iter()
        .filter(|d| d.err2_quadratic < d.err2_no_control)
        .count();
    let bias2 = |label: &str| {
        table.rows.iter().find(|r| r.label == label).map(|r| r.bias2).unwrap()
    };
    let bias_reduced = bias2("deconfounder (quadratic factor)") < bias2("no-control")
        && bias2("deconfounder (quadratic factor)") < bias2("deconfounder (linear factor)");
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 6 (two-cause reproduction)",
        quad_pass * 10 >= 140 && bias_wins * 10 >= 160 && bias_reduced && elapsed < 300.0,
        &format!(
            "quadratic factor passed the check in {quad_pass}/20 seeds, beat no-control in \
             {bias_wins}/20, aggregate bias² no-control {:.4} > linear {:.4} > quadratic {:.4}, \
             {elapsed:.1}s",
            bias2("no-control"),
            bias2("deconfounder (linear factor)"),
            bias2("deconfounder (quadratic factor)")
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. GWAS effect recovery at desk scale.

#[test]
fn criterion_07_gwas_effect_recovery() {
    let start = Instant::now();
    let cfg = cli::GwasSuiteConfig {
        generator: GwasGenerator::BaldingNichols,
        n: 1000,
        m: 500,
        k: 10,
        seeds: 20,
        base_seed: 0,
        snr: SnrProfile::Low,
    };
    let (table, rmse_pairs) = cli::gwas_suite(&cfg).unwrap();
    table.validate().unwrap();
    let wins = rmse_pairs.iter().filter(|(dcf, nc)| dcf < nc).count();
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 7 (GWAS effect recovery)",
        wins * 10 >= 160 && elapsed < 600.0,
        &format!("deconfounder beat no-control in {wins}/20 seeds, {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 8. Masking trend: RMSE ratio degrades as causes are hidden.

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn criterion_08_masking_trend() {
    let cfg = cli::MaskingSuiteConfig {
        seeds: 10,
        base_seed: 0,
        n: 500,
        m: 100,
        k: 3,
        percents: vec![0.0, 25.0, 50.0, 75.0],
    };
    let rows = cli::masking_suite(&cfg).unwrap();
    let mut percents = Vec::new();
    let mut ratios = Vec::new();
    for (percent, seed_ratios) in &rows {
        for r in seed_ratios {
            percents.push(*percent);
            ratios.push(*r);
        }
    }
    let rho = spearman(&percents, &ratios);
    report(
        "criterion 8 (masking trend)",
        rho > 0.0,
        &format!("Spearman(mask%, RMSE ratio) = {rho:.3} over 10 seeds x 4 percents"),
    );
}

// ---------------------------------------------------------------------------
// 9. Variance-share scaling identities.

#[test]
fn criterion_09_snr_scaling_identities() {
    let sd = |v: &DVector<f64>| -> f64 {
        let n = v.len() as f64;
        let mean = v.sum() / n;
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let mut worst: f64 = 0.0;
    for snr in [SnrProfile::Low, SnrProfile::High] {
        let cfg = GwasSimConfig {
            generator: GwasGenerator::BaldingNichols,
            n: 400,
            m: 120,
            snr,
            outcome: OutcomeKind::Real,
            seed: 5,
            ..GwasSimConfig::default()
        };
        let rng = RngStream::new(55);
        let (a, structure, _, _) = simulate_genotypes(&cfg, &rng).unwrap();
        let groups = assign_groups(&structure, cfg.groups, &rng.named("groups")).unwrap();
        let (y, truth) = sim::simulate_trait(&a, &groups, &cfg, &rng).unwrap();

        let signal = DVector::from_fn(cfg.n, |i, _| {
            truth.beta_star.iter().enumerate().map(|(j, b)| b * a[(i, j)]).sum()
        });
        let lambda = DVector::from_vec(truth.confounder.clone());
        let eps = &y - &signal - &lambda;
        let [nu_gene, nu_conf, nu_noise] = truth.variance_shares.unwrap();
        worst = worst.max((sd(&lambda) / sd(&signal) - (nu_conf / nu_gene).sqrt()).abs());
        worst = worst.max((sd(&eps) / sd(&signal) - (nu_noise / nu_gene).sqrt()).abs());
    }
    report(
        "criterion 9 (variance-share identities)",
        worst < 1e-10,
        &format!("max |Δ sd ratio| = {worst:.2e} across both profiles"),
    );
}

// ---------------------------------------------------------------------------
// 10. Two-stage purity: outcome cannot leak into the factor fit.

#[test]
fn criterion_10_factor_fit_purity() {
    let mut gen = RngStream::new(88).rng();
    let (n, m) = (150, 6);
    let causes = DMatrix::<f64>::from_fn(n, m, |_, _| StandardNormal.sample(&mut gen));
    let y1 = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut gen));
    let mut y2 = y1.clone();
    y2.as_mut_slice().reverse(); // permutation
    let y3 = y1.map(|v| 10.0 * v - 3.0); // perturbation

    let bytes_for = |y: &DVector<f64>| -> Vec<u8> {
        let d = Dataset::new(
            causes.clone(),
            y.clone(),
            None,
            vec![CauseKind::Real; m],
            (0..m).map(|j| format!("a{j}")).collect(),
            vec![],
            "y".into(),
        )
        .unwrap();
        let cfg = pipeline::PipelineConfig {
            check: CheckConfig { replicates: 20, z_samples: 10, ..CheckConfig::default() },
            ..pipeline::PipelineConfig::default()
        };
        let est = pipeline::run(
            &d,
            &[ppca_spec(2, 1)],
            &OutcomeModelSpec::default(),
            &[],
            &cfg,
            &RngStream::new(2),
        )
        .unwrap();
        serde_json::to_vec(&est.factor_fit).unwrap()
    };
    let b1 = bytes_for(&y1);
    let ok = b1 == bytes_for(&y2) && b1 == bytes_for(&y3);
    report(
        "criterion 10 (two-stage purity)",
        ok,
        "factor-fit bytes identical under outcome permutation and perturbation",
    );
}

// ---------------------------------------------------------------------------
// 11. CLI determinism across reruns and thread counts.

#[test]
fn criterion_11_cli_determinism() {
    let base = std::env::temp_dir().join("dcf-acceptance-cli");
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();

    let sim_out = base.join("sim");
    assert_eq!(
        cli::run([
            "deconfounder", "simulate", "--kind", "two-cause", "--n", "250",
            "--seed", "11", "--out", sim_out.to_str().unwrap(),
        ]),
        0
    );
    let data = sim_out.join("rep-000/dataset.csv").display().to_string();
    let schema = sim_out.join("schema.txt").display().to_string();
    let truth = sim_out.join("rep-000/truth.json").display().to_string();

    let run_deconfound = |tag: &str, threads: &str| -> std::path::PathBuf {
        let out = base.join(tag);
        let code = cli::run([
            "deconfounder",
            "deconfound",
            "--threads",
            threads,
            "--data",
            &data,
            "--schema",
            &schema,
            "--truth",
            &truth,
            "--candidates",
            "linear,quadratic:1",
            "--conditioning",
            "on-reconstructed",
            "--fraction",
            "0.5",
            "--replicates",
            "40",
            "--z-samples",
            "20",
            "--uncertainty-samples",
            "8",
            "--seed",
            "13",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(code == 0 || code == 1, "deconfound exited with {code}");
        out
    };
    let dirs = [
        run_deconfound("t1-a", "1"),
        run_deconfound("t1-b", "1"),
        run_deconfound("t4-a", "4"),
        run_deconfound("t4-b", "4"),
    ];
    let mut ok = true;
    for artifact in ["estimate.json", "eval.csv", "config.txt"] {
        let reference = std::fs::read(dirs[0].join(artifact)).unwrap();
        for dir in &dirs[1..] {
            if std::fs::read(dir.join(artifact)).unwrap() != reference {
                ok = false;
                println!("artifact {artifact} differs in {}", dir.display());
            }
        }
    }
    report(
        "criterion 11 (CLI determinism)",
        ok,
        "byte-identical estimate.json / eval.csv / config.txt across 2 runs x threads {1,4}",
    );
}
