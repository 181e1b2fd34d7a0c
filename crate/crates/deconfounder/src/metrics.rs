//! Evaluation metrics for the benchmark tables: coefficient RMSE and the
//! bias²/variance/MSE decomposition over posterior coefficient samples.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Root-mean-square error between estimated and true coefficients.
pub fn rmse(estimates: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::Argument("empty vectors".into()));
    }
    let ss: f64 = estimates
        .iter()
        .zip(truth.iter())
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// Decompose coefficient error over sampling replicates.
///
/// `samples` is s×k: one row of estimated coefficients per posterior
/// z-sample. Returns (bias², variance, mse), summed over the k coefficients.
/// Variance uses the population (1/s) convention so mse = bias² + variance
/// holds exactly.
pub fn bias_variance_mse(
    samples: &DMatrix<f64>,
    truth: &DVector<f64>,
) -> Result<(f64, f64, f64)> {
    let (s, k) = samples.shape();
    if s < 1 {
        return Err(Error::Argument("need at least one coefficient sample".into()));
    }
    if truth.len() != k {
        return Err(Error::Dimension(format!(
            "{} coefficients per sample vs {} truths",
            k,
            truth.len()
        )));
    }
    let mut bias2 = 0.0;
    let mut variance = 0.0;
    for j in 0..k {
        let mean = samples.column(j).sum() / s as f64;
        bias2 += (mean - truth[j]) * (mean - truth[j]);
        variance += samples
            .column(j)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / s as f64;
    }
    Ok((bias2, variance, bias2 + variance))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub check_pass: Option<bool>,
    pub bias2: f64,
    pub variance: f64,
    pub mse: f64,
}

/// A benchmark results table: one row per method, raw (unscaled) metric
/// values. The conventional ×10⁻² presentation scaling is applied only when
/// rendering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub seeds: Vec<u64>,
    pub config_digest: String,
}

impl EvalTable {
    pub fn new(seeds: Vec<u64>, config_digest: String) -> Self {
        EvalTable { rows: Vec::new(), seeds, config_digest }
    }

    pub fn push(
        &mut self,
        label: impl Into<String>,
        check_pass: Option<bool>,
        samples: &DMatrix<f64>,
        truth: &DVector<f64>,
    ) -> Result<()> {
        let (bias2, variance, mse) = bias_variance_mse(samples, truth)?;
        self.rows.push(EvalRow {
            label: label.into(),
            check_pass,
            bias2,
            variance,
            mse,
        });
        Ok(())
    }

    pub fn push_row(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if row.bias2 < 0.0 || row.variance < 0.0 || row.mse < 0.0 {
                return Err(Error::Validation(format!(
                    "negative metric in row '{}'",
                    row.label
                )));
            }
            if (row.mse - row.bias2 - row.variance).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "row '{}' breaks mse = bias2 + variance",
                    row.label
                )));
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "check", "bias2", "variance", "mse"])?;
        for row in &self.rows {
            w.write_record([
                row.label.clone(),
                match row.check_pass {
                    Some(true) => "pass".into(),
                    Some(false) => "fail".into(),
                    None => "".into(),
                },
                format!("{:.17e}", row.bias2),
                format!("{:.17e}", row.variance),
                format!("{:.17e}", row.mse),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned text table with the conventional x10^-2 scaling.
    pub fn render(&self) -> String {
        let mut lines = Vec::new();
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(std::iter::once("method".len()))
            .max()
            .unwrap_or(6);
        lines.push(format!(
            "{:<label_w$}  {:>5}  {:>12}  {:>12}  {:>12}",
            "method", "check", "bias2 x1e-2", "var x1e-2", "mse x1e-2"
        ));
        for row in &self.rows {
            let check = match row.check_pass {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "-",
            };
            lines.push(format!(
                "{:<label_w$}  {:>5}  {:>12.4}  {:>12.4}  {:>12.4}",
                row.label,
                check,
                row.bias2 * 100.0,
                row.variance * 100.0,
                row.mse * 100.0
            ));
        }
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rmse_trivial_cases() {
        let a = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);

        let zero = DVector::from_row_slice(&[0.0, 0.0]);
        let pt = DVector::from_row_slice(&[3.0, 4.0]);
        assert!((rmse(&zero, &pt).unwrap() - 12.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rmse_matches_loop_oracle_and_is_symmetric() {
        let mut gen = RngStream::new(3).rng();
        let x = DVector::<f64>::from_fn(20, |_, _| StandardNormal.sample(&mut gen));
        let y = DVector::<f64>::from_fn(20, |_, _| StandardNormal.sample(&mut gen));
        let mut ss = 0.0;
        for i in 0..20 {
            ss += (x[i] - y[i]) * (x[i] - y[i]);
        }
        let oracle = (ss / 20.0).sqrt();
        assert!((rmse(&x, &y).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(rmse(&x, &y).unwrap(), rmse(&y, &x).unwrap());

        // scale equivariance
        let c = -2.5;
        assert!(
            (rmse(&(&x * c), &(&y * c)).unwrap() - c.abs() * rmse(&x, &y).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn decomposition_trivial_cases() {
        let truth = DVector::from_row_slice(&[1.0, -2.0]);
        let exact = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);
        assert_eq!(bias_variance_mse(&exact, &truth).unwrap(), (0.0, 0.0, 0.0));

        // constant offset: pure bias
        let offset = DMatrix::from_row_slice(3, 2, &[1.5, -1.5, 1.5, -1.5, 1.5, -1.5]);
        let (b2, v, mse) = bias_variance_mse(&offset, &truth).unwrap();
        assert!((b2 - 0.5).abs() < 1e-14);
        assert_eq!(v, 0.0);
        assert_eq!(mse, b2);
    }

    #[test]
    fn mse_identity_is_exact_on_random_inputs() {
        let mut gen = RngStream::new(5).rng();
        for _ in 0..20 {
            let samples = DMatrix::<f64>::from_fn(7, 4, |_, _| StandardNormal.sample(&mut gen));
            let truth = DVector::<f64>::from_fn(4, |_, _| StandardNormal.sample(&mut gen));
            let (b2, v, mse) = bias_variance_mse(&samples, &truth).unwrap();
            assert!((mse - b2 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let mut gen = RngStream::new(7).rng();
        let samples = DMatrix::<f64>::from_fn(6, 5, |_, _| StandardNormal.sample(&mut gen));
        let truth = DVector::<f64>::from_fn(5, |_, _| StandardNormal.sample(&mut gen));
        let base = bias_variance_mse(&samples, &truth).unwrap();

        // reverse coefficient order in both
        let perm_s = DMatrix::from_fn(6, 5, |i, j| samples[(i, 4 - j)]);
        let perm_t = DVector::from_fn(5, |j, _| truth[4 - j]);
        let permuted = bias_variance_mse(&perm_s, &perm_t).unwrap();
        assert!((base.0 - permuted.0).abs() < 1e-12);
        assert!((base.1 - permuted.1).abs() < 1e-12);
    }

    #[test]
    fn table_round_trip_and_render() {
        let mut gen = RngStream::new(11).rng();
        let samples = DMatrix::<f64>::from_fn(5, 2, |_, _| StandardNormal.sample(&mut gen));
        let truth = DVector::from_row_slice(&[0.3, -0.1]);
        let mut table = EvalTable::new(vec![1, 2, 3], "cfg".into());
        table.push("no control", None, &samples, &truth).unwrap();
        table
            .push("deconfounder", Some(true), &samples, &truth)
            .unwrap();
        table.validate().unwrap();

        let text = table.render();
        assert!(text.contains("no control"));
        assert!(text.contains("pass"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        table.save_csv(&path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.starts_with("method,check,bias2,variance,mse"));
        assert_eq!(content.lines().count(), 3);
    }
}
