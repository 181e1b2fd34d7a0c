//! Command-line front end: reproducible simulate / fit / check / deconfound
//! / evaluate / experiment runs with file-based configuration.
//!
//! Configuration is resolved in three layers: built-in defaults, then a flat
//! `key = value` config file (`--config`), then explicit flags. Keys in the
//! file use the flag names. Unknown keys are rejected. Every run writes the
//! fully resolved configuration next to its outputs, so an artifact
//! directory is self-describing and re-runnable.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::check::{self, Aggregation, CheckConfig};
use crate::data::{load_dataset, save_dataset, Dataset, Schema};
use crate::error::{Error, Result};
use crate::factor::{self, FactorModelSpec, FactorVariant, NoiseSpec};
use crate::metrics::EvalTable;
use crate::outcome::{self, Conditioning, OutcomeFamily, OutcomeModelSpec};
use crate::pipeline::{self, PipelineConfig};
use crate::rng::RngStream;
use crate::sim::{
    self, ConfounderLink, GwasGenerator, GwasSimConfig, OutcomeKind, SimTruth, SnrProfile,
    TwoCauseSimConfig,
};

/// Entry point shared by the binary and the determinism tests. Returns the
/// process exit code: 0 success/pass, 1 check failure, 2 usage error, 3
/// numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(name = "deconfounder", version, about = "Multiple causal inference with substitute confounders")]
struct Cli {
    /// Flat key = value configuration file; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker-thread cap (0 = all cores). Outputs are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated dataset/truth pairs.
    Simulate(SimulateArgs),
    /// Fit a factor model to the causes of a dataset.
    Fit(FitArgs),
    /// Run the held-out predictive check for one factor model.
    Check(CheckArgs),
    /// Full pipeline: candidate checks, substitute confounder, outcome model.
    Deconfound(DeconfoundArgs),
    /// Score a saved estimate against a truth file.
    Evaluate(EvaluateArgs),
    /// Multi-seed benchmark suites.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    TwoCause,
    GwasBn,
    GwasPsd,
    GwasSpatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LinkArg {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SnrArg {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutcomeArg {
    Real,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AggArg {
    PerIndividualMean,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CondArg {
    OnZ,
    OnReconstructed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    GaussianLinear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Smoking,
    Gwas,
    Masking,
}

fn enum_name<E: ValueEnum>(v: E) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

// ---------------------------------------------------------------------------
// Config file layer.

struct FileCfg(BTreeMap<String, String>);

impl FileCfg {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Argument(format!(
                        "config line {}: expected key = value",
                        lineno + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(FileCfg(map))
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for key in self.0.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Argument(format!(
                    "unknown config key '{key}' (known: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| Error::Argument(format!("config key '{key}': {e}"))),
        }
    }

    fn get_enum<E: ValueEnum>(&self, key: &str) -> Result<Option<E>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(s) => E::from_str(s, true)
                .map(Some)
                .map_err(|e| Error::Argument(format!("config key '{key}': {e}"))),
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn write_snapshot(dir: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(dir.join("config.txt"), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared parsing helpers.

/// Parse a factor-model description like `ppca:3`, `pf:10`, `linear`,
/// `quadratic:2`, or `lfa:3` (name, then latent dimension).
pub fn parse_factor_spec(text: &str, seed: u64) -> Result<FactorModelSpec> {
    let (name, dim) = match text.split_once(':') {
        Some((n, d)) => {
            let k: usize = d
                .parse()
                .map_err(|_| Error::Argument(format!("bad latent dimension in '{text}'")))?;
            (n, Some(k))
        }
        None => (text, None),
    };
    let need = |what: &str| {
        dim.ok_or_else(|| Error::Argument(format!("'{what}' needs a dimension, e.g. {what}:3")))
    };
    let variant = match name {
        "ppca" => FactorVariant::Ppca { k: need("ppca")?, prior_var: 1.0, noise: NoiseSpec::Learned },
        "pf" => FactorVariant::Pf { k: need("pf")?, shape: 0.3, rate: 0.3 },
        "linear" => FactorVariant::Linear,
        "quadratic" => FactorVariant::Quadratic { z_dim: dim.unwrap_or(1) },
        "lfa" => FactorVariant::Lfa { k: need("lfa")?, link_var: 1.0 },
        other => {
            return Err(Error::Argument(format!(
                "unknown factor model '{other}' (ppca, pf, linear, quadratic, lfa)"
            )))
        }
    };
    let mut spec = FactorModelSpec::new(variant);
    spec.fit.seed = seed;
    Ok(spec)
}

/// Parse a contrast `a1,a2,...|a'1,a'2,...`.
pub fn parse_contrast(text: &str, m: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let (a, ap) = text
        .split_once('|')
        .ok_or_else(|| Error::Argument("contrast must be 'a1,..|a'1,..'".into()))?;
    let parse_vec = |s: &str| -> Result<DVector<f64>> {
        let vals = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Argument(format!("bad contrast value: {e}")))?;
        if vals.len() != m {
            return Err(Error::Argument(format!(
                "contrast has {} entries for {m} causes",
                vals.len()
            )));
        }
        Ok(DVector::from_vec(vals))
    };
    Ok((parse_vec(a)?, parse_vec(ap)?))
}

fn load_with_schema(data: &Path, schema: Option<&Path>) -> Result<Dataset> {
    let schema_path = match schema {
        Some(p) => p.to_path_buf(),
        None => data
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("schema.txt"),
    };
    let schema = Schema::from_file(&schema_path)?;
    load_dataset(data, &schema)
}

fn write_schema(d: &Dataset, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (name, kind) in d.cause_names.iter().zip(&d.cause_kinds) {
        let role = match kind {
            crate::data::CauseKind::Real => "cause",
            crate::data::CauseKind::Binary => "binary",
            crate::data::CauseKind::Count => "count",
        };
        text.push_str(&format!("{name} = {role}\n"));
    }
    for name in &d.covariate_names {
        text.push_str(&format!("{name} = covariate\n"));
    }
    text.push_str(&format!("{} = outcome\n", d.outcome_name));
    std::fs::write(path, text)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32> {
    let file = FileCfg::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &file),
        Command::Fit(a) => cmd_fit(a, &file),
        Command::Check(a) => cmd_check(a, &file),
        Command::Deconfound(a) => cmd_deconfound(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Experiment(a) => cmd_experiment(a, &file),
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Args)]
struct SimulateArgs {
    /// two-cause | gwas-bn | gwas-psd | gwas-spatial
    #[arg(long)]
    kind: Option<KindArg>,
    #[arg(long)]
    n: Option<usize>,
    /// Number of causes (GWAS kinds only).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset/truth pairs to generate, each from its own substream.
    #[arg(long)]
    reps: Option<usize>,
    /// Confounder-to-cause link for two-cause data.
    #[arg(long)]
    link: Option<LinkArg>,
    #[arg(long)]
    link_strength: Option<f64>,
    /// Add a third cause that is a noisy copy of the first.
    #[arg(long)]
    dependent_cause: Option<bool>,
    /// Dirichlet concentration for gwas-psd.
    #[arg(long)]
    alpha: Option<f64>,
    /// Beta(tau, tau) spatial-coordinate concentration for gwas-spatial.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    snr: Option<SnrArg>,
    #[arg(long)]
    outcome: Option<OutcomeArg>,
    /// Optional CSV of (ancestral frequency, divergence) rows replacing the
    /// built-in surrogate distribution.
    #[arg(long)]
    freq_table: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const SIMULATE_KEYS: &[&str] = &[
    "kind", "n", "m", "seed", "reps", "link", "link-strength", "dependent-cause", "alpha",
    "tau", "snr", "outcome", "freq-table", "out",
];

fn read_freq_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Argument("freq table rows need two columns".into()));
        }
        let p: f64 = rec[0].trim().parse().map_err(|e| Error::Argument(format!("freq table: {e}")))?;
        let fst: f64 = rec[1].trim().parse().map_err(|e| Error::Argument(format!("freq table: {e}")))?;
        rows.push((p, fst));
    }
    Ok(rows)
}

fn cmd_simulate(a: &SimulateArgs, file: &FileCfg) -> Result<i32> {
    file.reject_unknown(SIMULATE_KEYS)?;
    let kind = pick(a.kind, file.get_enum("kind")?, KindArg::TwoCause);
    let n = pick(a.n, file.get("n")?, 1000);
    let m = pick(a.m, file.get("m")?, 100);
    let seed = pick(a.seed, file.get("seed")?, 0);
    let reps = pick(a.reps, file.get("reps")?, 1);
    let link = pick(a.link, file.get_enum("link")?, LinkArg::Quadratic);
    let link_strength = pick(a.link_strength, file.get("link-strength")?, 1.0);
    let dependent_cause = pick(a.dependent_cause, file.get("dependent-cause")?, false);
    let alpha = pick(a.alpha, file.get("alpha")?, 0.5);
    let tau = pick(a.tau, file.get("tau")?, 0.25);
    let snr = pick(a.snr, file.get_enum("snr")?, SnrArg::Low);
    let outcome = pick(a.outcome, file.get_enum("outcome")?, OutcomeArg::Real);
    let freq_table = a.freq_table.clone().or(file.get("freq-table")?);
    let out = pick(a.out.clone(), file.get("out")?, PathBuf::from("sim-out"));

    std::fs::create_dir_all(&out)?;
    write_snapshot(
        &out,
        &[
            ("kind", enum_name(kind)),
            ("n", n.to_string()),
            ("m", m.to_string()),
            ("seed", seed.to_string()),
            ("reps", reps.to_string()),
            ("link", enum_name(link)),
            ("link-strength", link_strength.to_string()),
            ("dependent-cause", dependent_cause.to_string()),
            ("alpha", alpha.to_string()),
            ("tau", tau.to_string()),
            ("snr", enum_name(snr)),
            ("outcome", enum_name(outcome)),
            (
                "freq-table",
                freq_table.as_deref().map(|p: &Path| p.display().to_string()).unwrap_or_default(),
            ),
        ],
    )?;

    let freq_rows = freq_table.as_deref().map(read_freq_table).transpose()?;
    let root = RngStream::new(seed);
    for rep in 0..reps {
        let rng = root.substream(rep as u64);
        let (d, truth) = match kind {
            KindArg::TwoCause => {
                let cfg = TwoCauseSimConfig {
                    n,
                    link: match link {
                        LinkArg::Linear => ConfounderLink::Linear,
                        LinkArg::Quadratic => ConfounderLink::Quadratic,
                    },
                    link_strength,
                    dependent_cause,
                    noise_sd: 1.0,
                    confounder_coef: None,
                    seed,
                };
                sim::simulate_two_cause(&cfg, &rng)?
            }
            _ => {
                let generator = match kind {
                    KindArg::GwasBn => GwasGenerator::BaldingNichols,
                    KindArg::GwasPsd => GwasGenerator::Psd { alpha },
                    KindArg::GwasSpatial => GwasGenerator::Spatial { tau },
                    KindArg::TwoCause => unreachable!(),
                };
                let cfg = GwasSimConfig {
                    generator,
                    n,
                    m,
                    snr: match snr {
                        SnrArg::Low => SnrProfile::Low,
                        SnrArg::High => SnrProfile::High,
                    },
                    outcome: match outcome {
                        OutcomeArg::Real => OutcomeKind::Real,
                        OutcomeArg::Binary => OutcomeKind::Binary,
                    },
                    seed,
                    freq_table: freq_rows.clone(),
                    ..GwasSimConfig::default()
                };
                sim::simulate_gwas(&cfg, &rng)?
            }
        };
        let dir = out.join(format!("rep-{rep:03}"));
        std::fs::create_dir_all(&dir)?;
        save_dataset(&d, &dir.join("dataset.csv"))?;
        truth.save(&dir.join("truth.json"))?;
        if rep == 0 {
            write_schema(&d, &out.join("schema.txt"))?;
        }
    }
    println!("wrote {reps} dataset/truth pair(s) under {}", out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// fit

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column-role file; defaults to schema.txt next to the data.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Factor model, e.g. ppca:3, pf:10, linear, quadratic:2, lfa:3.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const FIT_KEYS: &[&str] = &["data", "schema", "model", "seed", "out"];

fn cmd_fit(a: &FitArgs, file: &FileCfg) -> Result<i32> {
    file.reject_unknown(FIT_KEYS)?;
    let data: PathBuf = pick(a.data.clone(), file.get("data")?, PathBuf::new());
    if data.as_os_str().is_empty() {
        return Err(Error::Argument("--data is required".into()));
    }
    let schema = a.schema.clone().or(file.get("schema")?);
    let model = pick(a.model.clone(), file.get("model")?, "ppca:1".into());
    let seed = pick(a.seed, file.get("seed")?, 0);
    let out = pick(a.out.clone(), file.get("out")?, PathBuf::from("fit-out"));

    let d = load_with_schema(&data, schema.as_deref())?;
    let spec = parse_factor_spec(&model, seed)?;
    std::fs::create_dir_all(&out)?;
    write_snapshot(
        &out,
        &[
            ("data", data.display().to_string()),
            ("schema", schema.as_deref().map(|p: &Path| p.display().to_string()).unwrap_or_default()),
            ("model", model.clone()),
            ("seed", seed.to_string()),
        ],
    )?;
    let fit = factor::fit(&spec, &d.causes, &d.cause_kinds, None, &RngStream::new(seed).named("fit"))?;
    fit.save(&out.join("factor_fit.json"))?;
    println!(
        "fitted {} in {} iterations (converged: {})",
        spec.variant.label(),
        fit.trace.len(),
        fit.converged
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// check

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Per-entry holdout probability.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    z_samples: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    aggregation: Option<AggArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const CHECK_KEYS: &[&str] = &[
    "data", "schema", "model", "fraction", "replicates", "z-samples", "threshold",
    "aggregation", "seed", "out",
];

struct CheckSettings {
    cfg: CheckConfig,
    agg: AggArg,
}

fn resolve_check(a: &CheckArgs, file: &FileCfg) -> Result<CheckSettings> {
    let defaults = CheckConfig::default();
    let agg = pick(a.aggregation, file.get_enum("aggregation")?, AggArg::PerIndividualMean);
    let cfg = CheckConfig {
        fraction: pick(a.fraction, file.get("fraction")?, defaults.fraction),
        replicates: pick(a.replicates, file.get("replicates")?, defaults.replicates),
        z_samples: pick(a.z_samples, file.get("z-samples")?, defaults.z_samples),
        threshold: pick(a.threshold, file.get("threshold")?, defaults.threshold),
        aggregation: match agg {
            AggArg::PerIndividualMean => Aggregation::PerIndividualMean,
            AggArg::Pooled => Aggregation::Pooled,
        },
        seed: pick(a.seed, file.get("seed")?, defaults.seed),
    };
    Ok(CheckSettings { cfg, agg })
}

fn cmd_check(a: &CheckArgs, file: &FileCfg) -> Result<i32> {
    file.reject_unknown(CHECK_KEYS)?;
    let data: PathBuf = pick(a.data.clone(), file.get("data")?, PathBuf::new());
    if data.as_os_str().is_empty() {
        return Err(Error::Argument("--data is required".into()));
    }
    let schema = a.schema.clone().or(file.get("schema")?);
    let model = pick(a.model.clone(), file.get("model")?, "ppca:1".into());
    let settings = resolve_check(a, file)?;
    let out = pick(a.out.clone(), file.get("out")?, PathBuf::from("check-out"));

    let d = load_with_schema(&data, schema.as_deref())?;
    let spec = parse_factor_spec(&model, settings.cfg.seed)?;
    std::fs::create_dir_all(&out)?;
    write_snapshot(
        &out,
        &[
            ("data", data.display().to_string()),
            ("schema", schema.as_deref().map(|p: &Path| p.display().to_string()).unwrap_or_default()),
            ("model", model.clone()),
            ("fraction", settings.cfg.fraction.to_string()),
            ("replicates", settings.cfg.replicates.to_string()),
            ("z-samples", settings.cfg.z_samples.to_string()),
            ("threshold", settings.cfg.threshold.to_string()),
            ("aggregation", enum_name(settings.agg)),
            ("seed", settings.cfg.seed.to_string()),
        ],
    )?;

    let report = check::run_check(&spec, &d, &settings.cfg, &RngStream::new(settings.cfg.seed))?;
    report.save_json(&out.join("check.json"))?;
    report.save_scores_csv(&out.join("scores.csv"))?;
    println!(
        "predictive score {:.4} (threshold {}): {}",
        report.aggregate_score,
        report.threshold,
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(if report.pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// deconfound

#[derive(Args)]
struct DeconfoundArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Ordered candidate factor models, comma separated (e.g.
    /// "linear,quadratic:1,ppca:3"); the first to pass the check is used.
    #[arg(long)]
    candidates: Option<String>,
    #[arg(long)]
    conditioning: Option<CondArg>,
    #[arg(long)]
    family: Option<FamilyArg>,
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    include_covariates: Option<bool>,
    /// Posterior samples for the coefficient-uncertainty summary (< 2 skips).
    #[arg(long)]
    uncertainty_samples: Option<usize>,
    #[arg(long)]
    refit_on_full: Option<bool>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    z_samples: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    aggregation: Option<AggArg>,
    /// Truth JSON from `simulate`; adds an evaluation table to the outputs.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Contrast "a1,a2,..|a'1,a'2,.." to evaluate as an average effect.
    #[arg(long)]
    contrast: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const DECONFOUND_KEYS: &[&str] = &[
    "data", "schema", "candidates", "conditioning", "family", "penalty",
    "include-covariates", "uncertainty-samples", "refit-on-full", "fraction", "replicates",
    "z-samples", "threshold", "aggregation", "truth", "contrast", "seed", "out",
];

fn cmd_deconfound(a: &DeconfoundArgs, file: &FileCfg) -> Result<i32> {
    file.reject_unknown(DECONFOUND_KEYS)?;
    let data: PathBuf = pick(a.data.clone(), file.get("data")?, PathBuf::new());
    if data.as_os_str().is_empty() {
        return Err(Error::Argument("--data is required".into()));
    }
    let schema = a.schema.clone().or(file.get("schema")?);
    let candidates_text = pick(a.candidates.clone(), file.get("candidates")?, "ppca:1".into());
    let conditioning = pick(a.conditioning, file.get_enum("conditioning")?, CondArg::OnZ);
    let family = pick(a.family, file.get_enum("family")?, FamilyArg::GaussianLinear);
    let penalty = pick(a.penalty, file.get("penalty")?, 0.1);
    let include_covariates = pick(a.include_covariates, file.get("include-covariates")?, true);
    let uncertainty_samples = pick(a.uncertainty_samples, file.get("uncertainty-samples")?, 0);
    let refit_on_full = pick(a.refit_on_full, file.get("refit-on-full")?, true);
    let seed = pick(a.seed, file.get("seed")?, 0);
    let check_args = CheckArgs {
        data: None,
        schema: None,
        model: None,
        fraction: a.fraction,
        replicates: a.replicates,
        z_samples: a.z_samples,
        threshold: a.threshold,
        aggregation: a.aggregation,
        seed: Some(seed),
        out: None,
    };
    let settings = resolve_check(&check_args, file)?;
    let truth_path = a.truth.clone().or(file.get("truth")?);
    let contrast_text: Option<String> = a.contrast.clone().or(file.get("contrast")?);
    let out = pick(a.out.clone(), file.get("out")?, PathBuf::from("deconfound-out"));

    let d = load_with_schema(&data, schema.as_deref())?;
    let specs = candidates_text
        .split(',')
        .map(|s| parse_factor_spec(s.trim(), seed))
        .collect::<Result<Vec<_>>>()?;
    let outcome_spec = OutcomeModelSpec {
        conditioning: match conditioning {
            CondArg::OnZ => Conditioning::OnZ,
            CondArg::OnReconstructed => Conditioning::OnReconstructed,
        },
        include_covariates,
        family: match family {
            FamilyArg::GaussianLinear => OutcomeFamily::GaussianLinear,
            FamilyArg::Logistic => OutcomeFamily::Logistic,
        },
        penalty,
        tol: 1e-8,
    };
    let pipe_cfg = PipelineConfig {
        check: settings.cfg.clone(),
        refit_on_full,
        uncertainty_samples,
        ..PipelineConfig::default()
    };
    let contrasts = contrast_text
        .as_deref()
        .map(|t| parse_contrast(t, d.m()))
        .transpose()?
        .into_iter()
        .collect::<Vec<_>>();

    std::fs::create_dir_all(&out)?;
    write_snapshot(
        &out,
        &[
            ("data", data.display().to_string()),
            ("schema", schema.as_deref().map(|p: &Path| p.display().to_string()).unwrap_or_default()),
            ("candidates", candidates_text.clone()),
            ("conditioning", enum_name(conditioning)),
            ("family", enum_name(family)),
            ("penalty", penalty.to_string()),
            ("include-covariates", include_covariates.to_string()),
            ("uncertainty-samples", uncertainty_samples.to_string()),
            ("refit-on-full", refit_on_full.to_string()),
            ("fraction", settings.cfg.fraction.to_string()),
            ("replicates", settings.cfg.replicates.to_string()),
            ("z-samples", settings.cfg.z_samples.to_string()),
            ("threshold", settings.cfg.threshold.to_string()),
            ("aggregation", enum_name(settings.agg)),
            ("truth", truth_path.as_deref().map(|p: &Path| p.display().to_string()).unwrap_or_default()),
            ("contrast", contrast_text.unwrap_or_default()),
            ("seed", seed.to_string()),
        ],
    )?;

    let estimate = pipeline::run(&d, &specs, &outcome_spec, &contrasts, &pipe_cfg, &RngStream::new(seed))?;
    estimate.save(&out.join("estimate.json"))?;
    println!(
        "accepted candidate {} ({}) with score {:.4}: {}",
        estimate.accepted_index,
        estimate.accepted.variant.label(),
        estimate.check.aggregate_score,
        if estimate.pass { "pass" } else { "NO candidate passed" }
    );
    for (i, effect) in estimate.effects.iter().enumerate() {
        println!("contrast {i}: average effect {effect:.6}");
    }

    if let Some(truth_path) = truth_path {
        let truth = SimTruth::load(&truth_path)?;
        let table = evaluate_estimate(&estimate, &truth, &d, penalty, seed)?;
        table.save_csv(&out.join("eval.csv"))?;
        std::fs::write(out.join("eval.txt"), table.render())?;
        print!("{}", table.render());
    }
    Ok(if estimate.pass { 0 } else { 1 })
}

/// Score an estimate against known truth: per-coefficient errors for the
/// deconfounder (uncertainty samples when present, else the point fit) and a
/// no-control ridge baseline.
fn evaluate_estimate(
    estimate: &pipeline::DeconfounderEstimate,
    truth: &SimTruth,
    d: &Dataset,
    penalty: f64,
    seed: u64,
) -> Result<EvalTable> {
    let m = d.m();
    if truth.beta_star.len() != m {
        return Err(Error::Dimension(format!(
            "truth has {} coefficients for {} causes",
            truth.beta_star.len(),
            m
        )));
    }
    let beta_star = DVector::from_vec(truth.beta_star.clone());
    let zeros = DVector::zeros(m);
    let errors_of = |beta: &DVector<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(1, m, |_, j| beta[j] - beta_star[j])
    };

    let mut table = EvalTable::new(vec![seed], format!("single-run seed {seed}"));
    match &estimate.uncertainty {
        Some(u) => {
            let s = u.samples.nrows();
            let err = DMatrix::from_fn(s, m, |t, j| u.samples[(t, j)] - beta_star[j]);
            table.push(
                format!("deconfounder ({})", estimate.accepted.variant.label()),
                Some(estimate.pass),
                &err,
                &zeros,
            )?;
        }
        None => {
            table.push(
                format!("deconfounder ({})", estimate.accepted.variant.label()),
                Some(estimate.pass),
                &errors_of(&estimate.outcome_fit.beta),
                &zeros,
            )?;
        }
    }

    let info = outcome::DesignInfo {
        n_causes: m,
        n_confounder: 0,
        n_covariates: 0,
        column_names: d.cause_names.clone(),
    };
    let naive = outcome::fit_ridge(&d.causes, &d.outcome, penalty, &info)?;
    table.push("no-control", None, &errors_of(&naive.beta), &zeros)?;
    table.validate()?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args)]
struct EvaluateArgs {
    /// estimate.json from `deconfound`.
    #[arg(long)]
    estimate: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EVALUATE_KEYS: &[&str] = &["estimate", "truth", "data", "schema", "penalty", "out"];

fn cmd_evaluate(a: &EvaluateArgs, file: &FileCfg) -> Result<i32> {
    file.reject_unknown(EVALUATE_KEYS)?;
    let estimate_path: PathBuf = pick(a.estimate.clone(), file.get("estimate")?, PathBuf::new());
    let truth_path: PathBuf = pick(a.truth.clone(), file.get("truth")?, PathBuf::new());
    let data: PathBuf = pick(a.data.clone(), file.get("data")?, PathBuf::new());
    if estimate_path.as_os_str().is_empty()
        || truth_path.as_os_str().is_empty()
        || data.as_os_str().is_empty()
    {
        return Err(Error::Argument("--estimate, --truth and --data are required".into()));
    }
    let schema = a.schema.clone().or(file.get("schema")?);
    let penalty = pick(a.penalty, file.get("penalty")?, 0.1);
    let out = pick(a.out.clone(), file.get("out")?, PathBuf::from("evaluate-out"));

    let estimate: pipeline::DeconfounderEstimate =
        serde_json::from_reader(std::fs::File::open(&estimate_path)?)?;
    let truth = SimTruth::load(&truth_path)?;
    let d = load_with_schema(&data, schema.as_deref())?;

    std::fs::create_dir_all(&out)?;
    write_snapshot(
        &out,
        &[
            ("estimate", estimate_path.display().to_string()),
            ("truth", truth_path.display().to_string()),
            ("data", data.display().to_string()),
            ("schema", schema.as_deref().map(|p: &Path| p.display().to_string()).unwrap_or_default()),
            ("penalty", penalty.to_string()),
        ],
    )?;
    let table = evaluate_estimate(&estimate, &truth, &d, penalty, 0)?;
    table.save_csv(&out.join("eval.csv"))?;
    std::fs::write(out.join("eval.txt"), table.render())?;
    print!("{}", table.render());
    Ok(0)
}

// ---------------------------------------------------------------------------
// experiment suites

#[derive(Args)]
struct ExperimentArgs {
    /// smoking | gwas | masking
    suite: SuiteArg,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Latent dimension of the factor model the suites fit.
    #[arg(long)]
    k: Option<usize>,
    /// Masking percents, comma separated.
    #[arg(long)]
    percents: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXPERIMENT_KEYS: &[&str] = &["seeds", "seed", "n", "m", "k", "percents", "out"];

fn cmd_experiment(a: &ExperimentArgs, file: &FileCfg) -> Result<i32> {
    file.reject_unknown(EXPERIMENT_KEYS)?;
    let seeds = pick(a.seeds, file.get("seeds")?, 20);
    let seed = pick(a.seed, file.get("seed")?, 0);
    let out = pick(a.out.clone(), file.get("out")?, PathBuf::from("experiment-out"));
    std::fs::create_dir_all(&out)?;

    match a.suite {
        SuiteArg::Smoking => {
            let n = pick(a.n, file.get("n")?, 2000);
            write_snapshot(
                &out,
                &[
                    ("suite", "smoking".into()),
                    ("seeds", seeds.to_string()),
                    ("seed", seed.to_string()),
                    ("n", n.to_string()),
                ],
            )?;
            let cfg = SmokingSuiteConfig { seeds, base_seed: seed, n, ..SmokingSuiteConfig::default() };
            let (table, _) = smoking_suite(&cfg)?;
            table.save_csv(&out.join("smoking.csv"))?;
            std::fs::write(out.join("smoking.txt"), table.render())?;
            print!("{}", table.render());
        }
        SuiteArg::Gwas => {
            let n = pick(a.n, file.get("n")?, 1000);
            let m = pick(a.m, file.get("m")?, 500);
            let k = pick(a.k, file.get("k")?, 10);
            write_snapshot(
                &out,
                &[
                    ("suite", "gwas".into()),
                    ("seeds", seeds.to_string()),
                    ("seed", seed.to_string()),
                    ("n", n.to_string()),
                    ("m", m.to_string()),
                    ("k", k.to_string()),
                ],
            )?;
            for (name, generator) in gwas_generator_scope() {
                let cfg = GwasSuiteConfig {
                    generator,
                    n,
                    m,
                    k,
                    seeds,
                    base_seed: seed,
                    snr: SnrProfile::Low,
                };
                let (table, _) = gwas_suite(&cfg)?;
                table.save_csv(&out.join(format!("gwas-{name}.csv")))?;
                std::fs::write(out.join(format!("gwas-{name}.txt")), table.render())?;
                println!("[{name}]");
                print!("{}", table.render());
            }
        }
        SuiteArg::Masking => {
            let n = pick(a.n, file.get("n")?, 500);
            let m = pick(a.m, file.get("m")?, 100);
            let k = pick(a.k, file.get("k")?, 3);
            let percents_text: String =
                pick(a.percents.clone(), file.get("percents")?, "0,25,50,75".into());
            let percents = percents_text
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Argument(format!("bad percent: {e}")))?;
            write_snapshot(
                &out,
                &[
                    ("suite", "masking".into()),
                    ("seeds", seeds.to_string()),
                    ("seed", seed.to_string()),
                    ("n", n.to_string()),
                    ("m", m.to_string()),
                    ("k", k.to_string()),
                    ("percents", percents_text.clone()),
                ],
            )?;
            let cfg = MaskingSuiteConfig { seeds, base_seed: seed, n, m, k, percents };
            let rows = masking_suite(&cfg)?;
            let mut w = csv::Writer::from_path(out.join("masking.csv"))?;
            w.write_record(["percent", "mean_rmse_ratio", "seeds"])?;
            for (percent, ratios) in &rows {
                let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
                w.write_record([percent.to_string(), format!("{mean:.17e}"), ratios.len().to_string()])?;
                println!("masked {percent:>5.1}%: mean RMSE ratio {mean:.4}");
            }
            w.flush()?;
        }
    }
    Ok(0)
}

fn gwas_generator_scope() -> Vec<(String, GwasGenerator)> {
    let mut scope = vec![("bn".to_string(), GwasGenerator::BaldingNichols)];
    for alpha in [0.01, 0.1, 0.5, 1.0] {
        scope.push((format!("psd-{alpha}"), GwasGenerator::Psd { alpha }));
    }
    for tau in [0.1, 0.25, 0.5, 1.0] {
        scope.push((format!("spatial-{tau}"), GwasGenerator::Spatial { tau }));
    }
    scope
}

// ---------------------------------------------------------------------------
// Suite implementations (shared with the acceptance harness).

#[derive(Debug, Clone)]
pub struct SmokingSuiteConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub n: usize,
    pub link_strength: f64,
    /// Fixed effect of the hidden confounder on the outcome. Holding it
    /// constant across seeds keeps every replicate genuinely confounded so
    /// the suite measures bias reduction rather than the luck of the draw.
    pub confounder_coef: f64,
    pub check: CheckConfig,
    pub penalty: f64,
}

impl Default for SmokingSuiteConfig {
    fn default() -> Self {
        SmokingSuiteConfig {
            seeds: 20,
            base_seed: 0,
            n: 2000,
            // moderate link: strong enough to bias the naive regression,
            // weak enough that the reconstructed causes are not collinear
            // with the observed ones (which would blow up the deconfounded
            // regression's variance)
            link_strength: 0.7,
            confounder_coef: 2.0,
            // only two causes, so hold out half the entries per row
            check: CheckConfig { fraction: 0.5, ..CheckConfig::default() },
            penalty: 0.1,
        }
    }
}

/// Per-seed details of the two-cause suite, for trend assertions.
#[derive(Debug, Clone)]
pub struct SmokingSeedDetail {
    pub linear_score: f64,
    pub quadratic_score: f64,
    /// Squared coefficient error summed over the causes.
    pub err2_quadratic: f64,
    pub err2_linear: f64,
    pub err2_no_control: f64,
}

/// Two-cause quadratic-confounding benchmark: no-control and
/// oracle-confounder baselines against linear- and quadratic-factor
/// deconfounders, aggregated across seeds as squared bias + variance of the
/// coefficient errors. The linear candidate conditions on its substitute
/// confounder directly (which is a linear function of the two causes, so it
/// adds nothing to the regression — that is the failure the benchmark is
/// meant to exhibit); the quadratic candidate conditions on the
/// reconstructed causes, whose curvature in the observed causes is what
/// picks up the hidden confounder.
pub fn smoking_suite(cfg: &SmokingSuiteConfig) -> Result<(EvalTable, Vec<SmokingSeedDetail>)> {
    let linear_spec = parse_factor_spec("linear", cfg.base_seed)?;
    let quad_spec = parse_factor_spec("quadratic:1", cfg.base_seed)?;
    let linear_outcome = OutcomeModelSpec {
        conditioning: Conditioning::OnZ,
        penalty: cfg.penalty,
        ..OutcomeModelSpec::default()
    };
    let quad_outcome = OutcomeModelSpec {
        conditioning: Conditioning::OnReconstructed,
        penalty: cfg.penalty,
        ..OutcomeModelSpec::default()
    };

    struct SeedOut {
        err_nc: Vec<f64>,
        err_oracle: Vec<f64>,
        err_linear: Vec<f64>,
        err_quad: Vec<f64>,
        linear_pass: bool,
        quad_pass: bool,
        detail: SmokingSeedDetail,
    }

    let per_seed: Vec<Result<SeedOut>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let rng = RngStream::new(cfg.base_seed).substream(i as u64);
            let sim_cfg = TwoCauseSimConfig {
                n: cfg.n,
                link: ConfounderLink::Quadratic,
                link_strength: cfg.link_strength,
                dependent_cause: false,
                noise_sd: 1.0,
                confounder_coef: Some(cfg.confounder_coef),
                seed: cfg.base_seed.wrapping_add(i as u64),
            };
            let (d, truth) = sim::simulate_two_cause(&sim_cfg, &rng)?;
            let m = d.m();
            let beta_star = DVector::from_vec(truth.beta_star.clone());

            let lin_report = check::run_check(&linear_spec, &d, &cfg.check, &rng.named("lin"))?;
            let quad_report = check::run_check(&quad_spec, &d, &cfg.check, &rng.named("quad"))?;

            let estimate_with = |spec: &FactorModelSpec,
                                 outcome_spec: &OutcomeModelSpec,
                                 label: &str|
             -> Result<DVector<f64>> {
                let fit = factor::fit(spec, &d.causes, &d.cause_kinds, None, &rng.named(label))?;
                let z = pipeline::posterior_mean_z(&fit, &d.causes)?;
                let (design, info) = outcome::build_design(&d, &fit, outcome_spec, &z)?;
                Ok(outcome::fit_ridge(&design, &d.outcome, cfg.penalty, &info)?.beta)
            };
            let beta_lin = estimate_with(&linear_spec, &linear_outcome, "fit-lin")?;
            let beta_quad = estimate_with(&quad_spec, &quad_outcome, "fit-quad")?;

            let info_nc = outcome::DesignInfo {
                n_causes: m,
                n_confounder: 0,
                n_covariates: 0,
                column_names: d.cause_names.clone(),
            };
            let beta_nc = outcome::fit_ridge(&d.causes, &d.outcome, cfg.penalty, &info_nc)?.beta;

            // oracle: regress on the true (standardized) confounder as well
            let mut oracle_design = DMatrix::zeros(d.n(), m + 1);
            oracle_design.view_mut((0, 0), (d.n(), m)).copy_from(&d.causes);
            for r in 0..d.n() {
                oracle_design[(r, m)] = truth.confounder[r];
            }
            let mut names = d.cause_names.clone();
            names.push("confounder".into());
            let info_oracle = outcome::DesignInfo {
                n_causes: m,
                n_confounder: 1,
                n_covariates: 0,
                column_names: names,
            };
            let beta_oracle =
                outcome::fit_ridge(&oracle_design, &d.outcome, cfg.penalty, &info_oracle)?.beta;

            let err = |beta: &DVector<f64>| -> Vec<f64> {
                (0..m).map(|j| beta[j] - beta_star[j]).collect()
            };
            let sq = |e: &[f64]| e.iter().map(|v| v * v).sum::<f64>();
            let err_quad = err(&beta_quad);
            let err_lin = err(&beta_lin);
            let err_nc = err(&beta_nc);
            let detail = SmokingSeedDetail {
                linear_score: lin_report.aggregate_score,
                quadratic_score: quad_report.aggregate_score,
                err2_quadratic: sq(&err_quad),
                err2_linear: sq(&err_lin),
                err2_no_control: sq(&err_nc),
            };
            Ok(SeedOut {
                err_nc,
                err_oracle: err(&beta_oracle),
                err_linear: err_lin,
                err_quad,
                linear_pass: lin_report.pass,
                quad_pass: quad_report.pass,
                detail,
            })
        })
        .collect();

    let outs = per_seed.into_iter().collect::<Result<Vec<SeedOut>>>()?;
    let s = outs.len();
    let m = outs[0].err_nc.len();
    let mat = |f: &dyn Fn(&SeedOut) -> &Vec<f64>| DMatrix::from_fn(s, m, |i, j| f(&outs[i])[j]);
    let zeros = DVector::zeros(m);
    let majority = |f: &dyn Fn(&SeedOut) -> bool| Some(outs.iter().filter(|o| f(o)).count() * 2 >= s);

    let mut table = EvalTable::new(
        (0..s as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect(),
        format!("two-cause quadratic confounding, n={}", cfg.n),
    );
    table.push("no-control", None, &mat(&|o| &o.err_nc), &zeros)?;
    table.push("oracle-confounder", None, &mat(&|o| &o.err_oracle), &zeros)?;
    table.push(
        "deconfounder (linear factor)",
        majority(&|o| o.linear_pass),
        &mat(&|o| &o.err_linear),
        &zeros,
    )?;
    table.push(
        "deconfounder (quadratic factor)",
        majority(&|o| o.quad_pass),
        &mat(&|o| &o.err_quad),
        &zeros,
    )?;
    table.validate()?;
    Ok((table, outs.into_iter().map(|o| o.detail).collect()))
}

#[derive(Debug, Clone)]
pub struct GwasSuiteConfig {
    pub generator: GwasGenerator,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub snr: SnrProfile,
}

/// GWAS benchmark for one genotype generator: Poisson-factorization
/// deconfounder against a no-control ridge, errors pooled over all SNP
/// coefficients. Returns per-seed (deconfounder, no-control) RMSE pairs.
/// Predictive checks are skipped here for runtime; the point of the suite
/// is effect recovery.
pub fn gwas_suite(cfg: &GwasSuiteConfig) -> Result<(EvalTable, Vec<(f64, f64)>)> {
    let mut spec = parse_factor_spec(&format!("pf:{}", cfg.k), cfg.base_seed)?;
    // population structure is captured within ~100 sweeps; the remaining
    // iterations polish the ELBO without moving the posterior means
    spec.fit.max_iter = 100;
    spec.fit.tol = 1e-6;
    // hundreds of mostly-null SNP coefficients against n=1000 rows need a
    // real ridge penalty; at 0.1 the estimates are noise-dominated and the
    // confounding correction is invisible
    let outcome_spec = OutcomeModelSpec { penalty: 100.0, ..OutcomeModelSpec::default() };

    let per_seed: Vec<Result<(Vec<f64>, Vec<f64>, f64, f64)>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let rng = RngStream::new(cfg.base_seed).substream(i as u64);
            let sim_cfg = GwasSimConfig {
                generator: cfg.generator,
                n: cfg.n,
                m: cfg.m,
                snr: cfg.snr,
                outcome: OutcomeKind::Real,
                seed: cfg.base_seed.wrapping_add(i as u64),
                ..GwasSimConfig::default()
            };
            let (d, truth) = sim::simulate_gwas(&sim_cfg, &rng)?;
            let beta_star = DVector::from_vec(truth.beta_star.clone());

            let fit = factor::fit(&spec, &d.causes, &d.cause_kinds, None, &rng.named("pf"))?;
            let z = pipeline::posterior_mean_z(&fit, &d.causes)?;
            let (design, info) = outcome::build_design(&d, &fit, &outcome_spec, &z)?;
            let beta_dcf = outcome::fit_ridge(&design, &d.outcome, outcome_spec.penalty, &info)?.beta;

            let info_nc = outcome::DesignInfo {
                n_causes: d.m(),
                n_confounder: 0,
                n_covariates: 0,
                column_names: d.cause_names.clone(),
            };
            let beta_nc =
                outcome::fit_ridge(&d.causes, &d.outcome, outcome_spec.penalty, &info_nc)?.beta;

            let err_dcf: Vec<f64> = (0..d.m()).map(|j| beta_dcf[j] - beta_star[j]).collect();
            let err_nc: Vec<f64> = (0..d.m()).map(|j| beta_nc[j] - beta_star[j]).collect();
            let rmse_dcf = crate::metrics::rmse(&beta_dcf, &beta_star)?;
            let rmse_nc = crate::metrics::rmse(&beta_nc, &beta_star)?;
            Ok((err_dcf, err_nc, rmse_dcf, rmse_nc))
        })
        .collect();

    let outs = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    let s = outs.len();
    let zeros = DVector::zeros(cfg.m);
    let mut table = EvalTable::new(
        (0..s as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect(),
        format!("gwas {:?}, n={}, m={}, pf k={}", cfg.generator, cfg.n, cfg.m, cfg.k),
    );
    let dcf = DMatrix::from_fn(s, cfg.m, |i, j| outs[i].0[j]);
    let nc = DMatrix::from_fn(s, cfg.m, |i, j| outs[i].1[j]);
    table.push("no-control", None, &nc, &zeros)?;
    table.push("deconfounder (pf)", None, &dcf, &zeros)?;
    table.validate()?;
    Ok((table, outs.into_iter().map(|(_, _, a, b)| (a, b)).collect()))
}

#[derive(Debug, Clone)]
pub struct MaskingSuiteConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub percents: Vec<f64>,
}

/// Cause-masking robustness sweep on Balding-Nichols genotype data.
/// Returns, per percent, the per-seed RMSE ratios (deconfounder over
/// no-control); the ratio degrades as more causes are hidden from the
/// factor model.
pub fn masking_suite(cfg: &MaskingSuiteConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    let candidates = vec![parse_factor_spec(&format!("pf:{}", cfg.k), cfg.base_seed)?];
    // moderate ridge: low-SNR genotype data has mostly-null coefficients
    let outcome_spec = OutcomeModelSpec { penalty: 10.0, ..OutcomeModelSpec::default() };
    let pipe_cfg = PipelineConfig {
        check: CheckConfig {
            replicates: 50,
            z_samples: 50,
            // accept whatever the check says; the sweep wants estimates for
            // every percent, not gatekeeping
            threshold: 1e-12,
            ..CheckConfig::default()
        },
        run_outcome_check: false,
        ..PipelineConfig::default()
    };

    let per_seed: Vec<Result<Vec<f64>>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let rng = RngStream::new(cfg.base_seed).substream(i as u64);
            let sim_cfg = GwasSimConfig {
                generator: GwasGenerator::BaldingNichols,
                n: cfg.n,
                m: cfg.m,
                // strong confounding so the substitute carries real weight
                // and its decay under masking is visible above the noise
                snr: SnrProfile::High,
                outcome: OutcomeKind::Real,
                seed: cfg.base_seed.wrapping_add(i as u64),
                ..GwasSimConfig::default()
            };
            let (d, truth) = sim::simulate_gwas(&sim_cfg, &rng)?;
            let rows = pipeline::mask_causes_experiment(
                &d,
                &truth.beta_star,
                &cfg.percents,
                &candidates,
                &outcome_spec,
                &pipe_cfg,
                &rng.named("mask"),
            )?;
            Ok(rows.into_iter().map(|r| r.ratio).collect())
        })
        .collect();

    let outs = per_seed.into_iter().collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(cfg
        .percents
        .iter()
        .enumerate()
        .map(|(p, &percent)| (percent, outs.iter().map(|o| o[p]).collect()))
        .collect())
}
