//! Cause/outcome data model, CSV ingestion, standardization, and
//! deterministic holdout splitting.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseKind {
    Real,
    Binary,
    Count,
}

impl CauseKind {
    fn validate(&self, v: f64, row: usize, column: &str) -> Result<()> {
        let ok = match self {
            CauseKind::Real => true,
            CauseKind::Binary => v == 0.0 || v == 1.0,
            CauseKind::Count => v >= 0.0 && v.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "value {v} at row {row} violates kind {self:?} for column {column}"
            )))
        }
    }
}

/// Dense cause matrix plus outcome and optional covariates. Immutable
/// after construction; rows are individuals, columns are causes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub causes: DMatrix<f64>,
    pub outcome: DVector<f64>,
    pub covariates: Option<DMatrix<f64>>,
    pub cause_kinds: Vec<CauseKind>,
    pub cause_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub outcome_name: String,
}

impl Dataset {
    pub fn new(
        causes: DMatrix<f64>,
        outcome: DVector<f64>,
        covariates: Option<DMatrix<f64>>,
        cause_kinds: Vec<CauseKind>,
        cause_names: Vec<String>,
        covariate_names: Vec<String>,
        outcome_name: String,
    ) -> Result<Self> {
        let (n, m) = causes.shape();
        if outcome.len() != n {
            return Err(Error::Dimension(format!(
                "outcome length {} does not match {} rows",
                outcome.len(),
                n
            )));
        }
        if cause_kinds.len() != m || cause_names.len() != m {
            return Err(Error::Dimension("cause metadata length mismatch".into()));
        }
        if let Some(x) = &covariates {
            if x.nrows() != n {
                return Err(Error::Dimension("covariate row count mismatch".into()));
            }
            if x.ncols() != covariate_names.len() {
                return Err(Error::Dimension("covariate name count mismatch".into()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite covariate entry".into()));
            }
        }
        if causes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite cause entry".into()));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite outcome entry".into()));
        }
        for j in 0..m {
            for i in 0..n {
                cause_kinds[j].validate(causes[(i, j)], i, &cause_names[j])?;
            }
        }
        Ok(Dataset {
            causes,
            outcome,
            covariates,
            cause_kinds,
            cause_names,
            covariate_names,
            outcome_name,
        })
    }

    pub fn n(&self) -> usize {
        self.causes.nrows()
    }

    pub fn m(&self) -> usize {
        self.causes.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Cause,
    Count,
    Binary,
    Covariate,
    Outcome,
}

/// Column-role mapping for CSV ingestion, loaded from a key=value file
/// where keys are column names and values are roles. `cause` reads a
/// real-valued cause; `count` and `binary` are causes with kind checks.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub roles: BTreeMap<String, ColumnRole>,
}

impl Schema {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut roles = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("line {}: expected key=value", lineno + 1))
            })?;
            let role = match value.trim() {
                "cause" => ColumnRole::Cause,
                "count" => ColumnRole::Count,
                "binary" => ColumnRole::Binary,
                "covariate" => ColumnRole::Covariate,
                "outcome" => ColumnRole::Outcome,
                other => {
                    return Err(Error::Schema(format!("unknown role '{other}'")));
                }
            };
            roles.insert(key.trim().to_string(), role);
        }
        let outcomes = roles.values().filter(|r| **r == ColumnRole::Outcome).count();
        if outcomes != 1 {
            return Err(Error::Schema(format!(
                "schema must name exactly one outcome column, found {outcomes}"
            )));
        }
        let causes = roles
            .values()
            .filter(|r| matches!(r, ColumnRole::Cause | ColumnRole::Count | ColumnRole::Binary))
            .count();
        if causes == 0 {
            return Err(Error::Schema("schema names no cause columns".into()));
        }
        Ok(Schema { roles })
    }
}

/// Load a UTF-8, comma-separated CSV with a header row. Column order in
/// the file determines the order of causes and covariates.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    for name in schema.roles.keys() {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Schema(format!("column '{name}' not found in CSV header")));
        }
    }

    let mut cause_cols: Vec<(usize, String, CauseKind)> = Vec::new();
    let mut covariate_cols: Vec<(usize, String)> = Vec::new();
    let mut outcome_col: Option<(usize, String)> = None;
    for (idx, name) in headers.iter().enumerate() {
        match schema.roles.get(name) {
            Some(ColumnRole::Cause) => cause_cols.push((idx, name.clone(), CauseKind::Real)),
            Some(ColumnRole::Count) => cause_cols.push((idx, name.clone(), CauseKind::Count)),
            Some(ColumnRole::Binary) => cause_cols.push((idx, name.clone(), CauseKind::Binary)),
            Some(ColumnRole::Covariate) => covariate_cols.push((idx, name.clone())),
            Some(ColumnRole::Outcome) => outcome_col = Some((idx, name.clone())),
            None => {}
        }
    }
    let (outcome_idx, outcome_name) =
        outcome_col.ok_or_else(|| Error::Schema("no outcome column".into()))?;

    let mut cause_rows: Vec<Vec<f64>> = Vec::new();
    let mut covariate_rows: Vec<Vec<f64>> = Vec::new();
    let mut outcome_vals: Vec<f64> = Vec::new();

    let parse = |record: &csv::StringRecord, idx: usize, row: usize, col: &str| -> Result<f64> {
        let raw = record.get(idx).ok_or_else(|| Error::Parse {
            row,
            column: col.to_string(),
            message: "missing field".into(),
        })?;
        raw.trim().parse::<f64>().map_err(|e| Error::Parse {
            row,
            column: col.to_string(),
            message: e.to_string(),
        })
    };

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let mut crow = Vec::with_capacity(cause_cols.len());
        for (idx, name, _) in &cause_cols {
            crow.push(parse(&record, *idx, row, name)?);
        }
        cause_rows.push(crow);
        let mut xrow = Vec::with_capacity(covariate_cols.len());
        for (idx, name) in &covariate_cols {
            xrow.push(parse(&record, *idx, row, name)?);
        }
        covariate_rows.push(xrow);
        outcome_vals.push(parse(&record, outcome_idx, row, &outcome_name)?);
    }

    let n = cause_rows.len();
    let m = cause_cols.len();
    let causes = DMatrix::from_fn(n, m, |i, j| cause_rows[i][j]);
    let covariates = if covariate_cols.is_empty() {
        None
    } else {
        Some(DMatrix::from_fn(n, covariate_cols.len(), |i, j| covariate_rows[i][j]))
    };

    Dataset::new(
        causes,
        DVector::from_vec(outcome_vals),
        covariates,
        cause_cols.iter().map(|(_, _, k)| *k).collect(),
        cause_cols.iter().map(|(_, n, _)| n.clone()).collect(),
        covariate_cols.iter().map(|(_, n)| n.clone()).collect(),
        outcome_name,
    )
}

/// Write a dataset back to CSV with causes, covariates, then the outcome.
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = d.cause_names.iter().map(|s| s.as_str()).collect();
    header.extend(d.covariate_names.iter().map(|s| s.as_str()));
    header.push(&d.outcome_name);
    writer.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for j in 0..d.m() {
            rec.push(format_num(d.causes[(i, j)]));
        }
        if let Some(x) = &d.covariates {
            for j in 0..x.ncols() {
                rec.push(format_num(x[(i, j)]));
            }
        }
        rec.push(format_num(d.outcome[i]));
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

fn format_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        // Shortest representation that round-trips.
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeTarget {
    Causes,
    Covariates,
    Outcome,
}

/// Per-column centering/scaling used, allowing exact inversion.
/// Scaling divides by the sample (n-1) standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub target: StandardizeTarget,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// "sample" = n-1 denominator.
    pub sd_convention: String,
}

fn column_stats(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let var = ss / (n as f64 - 1.0);
    (mean, var.sqrt())
}

/// Center and scale the selected block to mean 0, sample variance 1.
/// Standardized cause columns become real-kind.
pub fn standardize(d: &Dataset, which: StandardizeTarget) -> Result<(Dataset, ScalingRecord)> {
    let n = d.n();
    if n < 2 {
        return Err(Error::Argument("standardize needs at least 2 rows".into()));
    }
    let mut out = d.clone();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    match which {
        StandardizeTarget::Causes => {
            for j in 0..d.m() {
                let (mean, sd) = column_stats(d.causes.column(j).iter().copied(), n);
                if sd <= 0.0 {
                    return Err(Error::Validation(format!(
                        "zero-variance column '{}'",
                        d.cause_names[j]
                    )));
                }
                for i in 0..n {
                    out.causes[(i, j)] = (d.causes[(i, j)] - mean) / sd;
                }
                out.cause_kinds[j] = CauseKind::Real;
                means.push(mean);
                sds.push(sd);
            }
        }
        StandardizeTarget::Covariates => {
            let x = d
                .covariates
                .as_ref()
                .ok_or_else(|| Error::Argument("dataset has no covariates".into()))?;
            let mut xo = x.clone();
            for j in 0..x.ncols() {
                let (mean, sd) = column_stats(x.column(j).iter().copied(), n);
                if sd <= 0.0 {
                    return Err(Error::Validation(format!(
                        "zero-variance column '{}'",
                        d.covariate_names[j]
                    )));
                }
                for i in 0..n {
                    xo[(i, j)] = (x[(i, j)] - mean) / sd;
                }
                means.push(mean);
                sds.push(sd);
            }
            out.covariates = Some(xo);
        }
        StandardizeTarget::Outcome => {
            let (mean, sd) = column_stats(d.outcome.iter().copied(), n);
            if sd <= 0.0 {
                return Err(Error::Validation(format!(
                    "zero-variance column '{}'",
                    d.outcome_name
                )));
            }
            for i in 0..n {
                out.outcome[i] = (d.outcome[i] - mean) / sd;
            }
            means.push(mean);
            sds.push(sd);
        }
    }
    Ok((
        out,
        ScalingRecord {
            target: which,
            means,
            sds,
            sd_convention: "sample".into(),
        },
    ))
}

/// Boolean n×m mask of held-out cause entries. `true` marks held-out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutMask {
    pub held: DMatrix<bool>,
    pub fraction: f64,
    pub seed: RngStream,
}

impl HoldoutMask {
    pub fn none(n: usize, m: usize) -> Self {
        HoldoutMask {
            held: DMatrix::from_element(n, m, false),
            fraction: 0.0,
            seed: RngStream::new(0),
        }
    }

    pub fn held_indices(&self, row: usize) -> Vec<usize> {
        (0..self.held.ncols()).filter(|&j| self.held[(row, j)]).collect()
    }

    pub fn observed_indices(&self, row: usize) -> Vec<usize> {
        (0..self.held.ncols()).filter(|&j| !self.held[(row, j)]).collect()
    }
}

/// Per-entry Bernoulli(fraction) holdout. Rows that would end up fully
/// masked get one uniformly chosen entry unmasked so every row keeps at
/// least one observed cause.
pub fn split_holdout(d: &Dataset, fraction: f64, rng: &RngStream) -> Result<HoldoutMask> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("holdout fraction {fraction} outside (0,1)")));
    }
    let (n, m) = d.causes.shape();
    if (fraction * m as f64) < 1.0 {
        return Err(Error::Argument(format!(
            "fraction*m = {} < 1; increase the fraction or the number of causes",
            fraction * m as f64
        )));
    }
    let mut held = DMatrix::from_element(n, m, false);
    let mut gen = rng.rng();
    for i in 0..n {
        let mut all = true;
        for j in 0..m {
            let h = gen.gen::<f64>() < fraction;
            held[(i, j)] = h;
            all &= h;
        }
        if all {
            let j = gen.gen_range(0..m);
            held[(i, j)] = false;
        }
    }
    Ok(HoldoutMask { held, fraction, seed: rng.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_csv(dir: &Path, text: &str) -> std::path::PathBuf {
        let p = dir.join("data.csv");
        std::fs::write(&p, text).unwrap();
        p
    }

    fn schema_two_causes() -> Schema {
        Schema::from_str("a1=cause\na2=cause\ny=outcome").unwrap()
    }

    #[test]
    fn load_three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "a1,a2,y\n1.0,2.0,0.5\n3.0,4.0,1.5\n5.0,6.0,2.5\n");
        let d = load_dataset(&p, &schema_two_causes()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.m(), 2);
        assert_eq!(d.causes[(2, 1)], 6.0);
        assert_eq!(d.outcome[0], 0.5);
    }

    #[test]
    fn count_column_rejects_fraction() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "a1,y\n1.5,0.0\n2,1\n");
        let schema = Schema::from_str("a1=count\ny=outcome").unwrap();
        let err = load_dataset(&p, &schema).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "a1,y\n1,0\n");
        let schema = Schema::from_str("a1=cause\nzz=cause\ny=outcome").unwrap();
        assert!(matches!(load_dataset(&p, &schema).unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "a1,a2,y\n1,2,0\n1,oops,1\n");
        match load_dataset(&p, &schema_two_causes()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "a2");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn gwas_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(
            dir.path(),
            "snp1,snp2,snp3,y\n0,1,2,0.25\n2,2,1,-1.5\n1,0,0,0.75\n",
        );
        let schema = Schema::from_str("snp1=count\nsnp2=count\nsnp3=count\ny=outcome").unwrap();
        let d = load_dataset(&p, &schema).unwrap();
        assert!(d.cause_kinds.iter().all(|k| *k == CauseKind::Count));
        let p2 = dir.path().join("copy.csv");
        save_dataset(&d, &p2).unwrap();
        let d2 = load_dataset(&p2, &schema).unwrap();
        assert_eq!(d.causes, d2.causes);
        assert_eq!(d.outcome, d2.outcome);
    }

    #[test]
    fn standardize_matches_hand_computation() {
        let d = Dataset::new(
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
            None,
            vec![CauseKind::Real],
            vec!["a".into()],
            vec![],
            "y".into(),
        )
        .unwrap();
        let (s, rec) = standardize(&d, StandardizeTarget::Causes).unwrap();
        // sample sd of (1,2,3) is 1, so standardized values are (-1,0,1);
        // with the population convention they would be +-1.2247.
        assert_abs_diff_eq!(s.causes[(0, 0)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.causes[(2, 0)], 1.0, epsilon = 1e-12);
        assert_eq!(rec.sd_convention, "sample");
        assert_abs_diff_eq!(rec.means[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rec.sds[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standardize_is_idempotent() {
        let d = Dataset::new(
            DMatrix::from_column_slice(4, 2, &[1.0, 5.0, -2.0, 0.3, 4.0, 4.5, -1.0, 9.0]),
            DVector::zeros(4),
            None,
            vec![CauseKind::Real; 2],
            vec!["a".into(), "b".into()],
            vec![],
            "y".into(),
        )
        .unwrap();
        let (s1, _) = standardize(&d, StandardizeTarget::Causes).unwrap();
        let (s2, _) = standardize(&s1, StandardizeTarget::Causes).unwrap();
        for (x, y) in s1.causes.iter().zip(s2.causes.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        // mean 0, sample variance 1
        for j in 0..2 {
            let (mean, sd) = column_stats(s1.causes.column(j).iter().copied(), 4);
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(sd, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_column_errors() {
        let d = Dataset::new(
            DMatrix::from_element(3, 1, 2.0),
            DVector::zeros(3),
            None,
            vec![CauseKind::Real],
            vec!["const".into()],
            vec![],
            "y".into(),
        )
        .unwrap();
        let err = standardize(&d, StandardizeTarget::Causes).unwrap_err();
        assert!(err.to_string().contains("const"));
    }

    fn wide_dataset(n: usize, m: usize) -> Dataset {
        Dataset::new(
            DMatrix::zeros(n, m),
            DVector::zeros(n),
            None,
            vec![CauseKind::Real; m],
            (0..m).map(|j| format!("a{j}")).collect(),
            vec![],
            "y".into(),
        )
        .unwrap()
    }

    #[test]
    fn holdout_deterministic_and_in_band() {
        let d = wide_dataset(1000, 50);
        let rng = RngStream::new(11);
        let m1 = split_holdout(&d, 0.2, &rng).unwrap();
        let m2 = split_holdout(&d, 0.2, &rng).unwrap();
        assert_eq!(m1.held, m2.held);
        let frac = m1.held.iter().filter(|&&h| h).count() as f64 / (1000.0 * 50.0);
        assert!((0.18..=0.22).contains(&frac), "fraction {frac}");
        for i in 0..1000 {
            assert!(!m1.observed_indices(i).is_empty());
        }
    }

    #[test]
    fn holdout_rejects_bad_fraction() {
        let d = wide_dataset(10, 10);
        assert!(split_holdout(&d, 0.0, &RngStream::new(0)).is_err());
        assert!(split_holdout(&d, 1.0, &RngStream::new(0)).is_err());
        assert!(split_holdout(&d, 0.05, &RngStream::new(0)).is_err());
    }

    #[test]
    fn holdout_expected_count_per_row() {
        let d = wide_dataset(400, 10);
        let m = split_holdout(&d, 0.2, &RngStream::new(3)).unwrap();
        let total: usize = m.held.iter().filter(|&&h| h).count();
        let per_row = total as f64 / 400.0;
        assert!((1.5..=2.5).contains(&per_row), "mean held per row {per_row}");
    }
}
