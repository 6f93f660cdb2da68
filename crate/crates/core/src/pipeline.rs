//! Run configuration, on-disk formats and the end-to-end commands behind the
//! command-line tool.
//!
//! Configuration is flat `key = value` text; `#` starts a comment. Every key
//! has a default, unknown keys are rejected, and values given later (for
//! example command-line flags) override earlier ones.
//!
//! All randomness descends from `seed` through named streams: `simulate`,
//! `cv`, `gibbs` and `predict`. The screening step itself is deterministic.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array1;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::cv::{select_kappa0, CvPlan, DEFAULT_FOLDS};
use crate::data::{
    generate_scenario, load_csv, load_design, write_csv, Correlation, Dataset, ErrorLaw,
    ScenarioConfig, ScenarioId, Standardizer, TrueModel,
};
use crate::distributions::RngStream;
use crate::ecm::{default_eta_grid, default_kappa0_grid, run_ecm, EcmFit, EcmInit, HyperParams};
use crate::error::{Error, Result};
use crate::gibbs::{read_draws_csv, run_gibbs, write_draws_csv, GibbsDraws, GibbsInit, GibbsSchedule};
use crate::inference::{aggregate_reports, metrics, predict, summarize, EvalReport, PredictionResult};

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "GECM_WORKERS";

pub const MANIFEST: &str = "manifest.txt";
pub const DATA_FILE: &str = "data.csv";
pub const TEST_FILE: &str = "test.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const CV_FILE: &str = "cv_report.txt";
pub const ECM_FILE: &str = "ecm_fit.txt";
pub const DRAWS_FILE: &str = "draws.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const STANDARDIZER_FILE: &str = "standardizer.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const EVAL_FILE: &str = "eval_report.txt";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Fit,
    Predict,
    Evaluate,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "fit" => Ok(Mode::Fit),
            "predict" => Ok(Mode::Predict),
            "evaluate" => Ok(Mode::Evaluate),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Fit => "fit",
            Mode::Predict => "predict",
            Mode::Evaluate => "evaluate",
        })
    }
}

/// Everything a command needs. Scenario fields left as `None` take the
/// preset's value; `kappa0 = None` means "choose by cross-validation".
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,

    pub data: Option<PathBuf>,
    pub response: String,
    pub truth: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub fit_dir: Option<PathBuf>,
    pub new_data: Option<PathBuf>,
    pub data_sha256: Option<String>,

    pub scenario: ScenarioId,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub n_signals: Option<usize>,
    pub signal_value: Option<f64>,
    pub intercept: Option<f64>,
    pub correlation: Option<Correlation>,
    pub error_law: Option<ErrorLaw>,
    pub test_n: usize,

    pub kappa0: Option<f64>,
    pub kappa1: f64,
    pub lambda_tau: f64,
    pub a_rho: f64,
    pub b_rho: f64,
    pub c_theta: f64,
    pub d_theta: f64,
    pub eta_fixed: f64,
    pub eta_grid: Vec<f64>,
    pub kappa0_grid: Vec<f64>,

    pub n_folds: usize,
    pub ecm_max_iter: usize,
    pub ecm_tol: f64,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub level: f64,
    pub skip_screening: bool,
    pub ecm_only: bool,
}

pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|w| *w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let gibbs = GibbsSchedule::default();
        Self {
            mode: Mode::Fit,
            seed: 1,
            workers: default_workers(),
            out_dir: PathBuf::from("out"),
            data: None,
            response: "y".into(),
            truth: None,
            test: None,
            fit_dir: None,
            new_data: None,
            data_sha256: None,
            scenario: ScenarioId::I,
            n: None,
            p: None,
            n_signals: None,
            signal_value: None,
            intercept: None,
            correlation: None,
            error_law: None,
            test_n: 0,
            kappa0: None,
            kappa1: hp.kappa1,
            lambda_tau: hp.lambda_tau,
            a_rho: hp.a_rho,
            b_rho: hp.b_rho,
            c_theta: hp.c_theta,
            d_theta: hp.d_theta,
            eta_fixed: hp.eta_fixed,
            eta_grid: default_eta_grid(),
            kappa0_grid: default_kappa0_grid(),
            n_folds: DEFAULT_FOLDS,
            ecm_max_iter: crate::ecm::DEFAULT_MAX_ITER,
            ecm_tol: crate::ecm::DEFAULT_REL_TOL,
            iters: gibbs.iters,
            burnin: gibbs.burnin,
            thin: gibbs.thin,
            level: crate::inference::DEFAULT_LEVEL,
            skip_screening: false,
            ecm_only: false,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "mode", "seed", "workers", "out_dir", "data", "response", "truth", "test", "fit_dir",
    "new_data", "data_sha256", "scenario", "n", "p", "n_signals", "signal_value", "intercept",
    "correlation", "error_law", "test_n", "kappa0", "kappa1", "lambda_tau", "a_rho", "b_rho",
    "c_theta", "d_theta", "eta_fixed", "eta_grid", "kappa0_grid", "n_folds", "ecm_max_iter",
    "ecm_tol", "iters", "burnin", "thin", "level", "skip_screening", "ecm_only",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{value}` for `{key}`: expected true or false"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_value::<f64>(key, v.trim()))
        .collect()
}

fn parse_correlation(key: &str, value: &str) -> Result<Correlation> {
    if value == "independent" {
        return Ok(Correlation::Independent);
    }
    value
        .strip_prefix("ar1(")
        .and_then(|v| v.strip_suffix(')'))
        .map(|v| parse_value::<f64>(key, v.trim()).map(Correlation::Ar1))
        .unwrap_or_else(|| {
            Err(Error::Config(format!(
                "bad value `{value}` for `{key}`: expected independent or ar1(phi)"
            )))
        })
}

fn format_correlation(c: &Correlation) -> String {
    match c {
        Correlation::Independent => "independent".into(),
        Correlation::Ar1(phi) => format!("ar1({phi})"),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || Some(PathBuf::from(value));
        match key {
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data" => self.data = path(),
            "response" => self.response = value.to_string(),
            "truth" => self.truth = path(),
            "test" => self.test = path(),
            "fit_dir" => self.fit_dir = path(),
            "new_data" => self.new_data = path(),
            "data_sha256" => self.data_sha256 = Some(value.to_string()),
            "scenario" => {
                self.scenario = value
                    .parse()
                    .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))?
            }
            "n" => self.n = Some(parse_value(key, value)?),
            "p" => self.p = Some(parse_value(key, value)?),
            "n_signals" => self.n_signals = Some(parse_value(key, value)?),
            "signal_value" => self.signal_value = Some(parse_value(key, value)?),
            "intercept" => self.intercept = Some(parse_value(key, value)?),
            "correlation" => self.correlation = Some(parse_correlation(key, value)?),
            "error_law" => {
                self.error_law = Some(
                    value
                        .parse()
                        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))?,
                )
            }
            "test_n" => self.test_n = parse_value(key, value)?,
            "kappa0" => {
                self.kappa0 = if value == "cv" {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "kappa1" => self.kappa1 = parse_value(key, value)?,
            "lambda_tau" => self.lambda_tau = parse_value(key, value)?,
            "a_rho" => self.a_rho = parse_value(key, value)?,
            "b_rho" => self.b_rho = parse_value(key, value)?,
            "c_theta" => self.c_theta = parse_value(key, value)?,
            "d_theta" => self.d_theta = parse_value(key, value)?,
            "eta_fixed" => self.eta_fixed = parse_value(key, value)?,
            "eta_grid" => self.eta_grid = parse_list(key, value)?,
            "kappa0_grid" => self.kappa0_grid = parse_list(key, value)?,
            "n_folds" => self.n_folds = parse_value(key, value)?,
            "ecm_max_iter" => self.ecm_max_iter = parse_value(key, value)?,
            "ecm_tol" => self.ecm_tol = parse_value(key, value)?,
            "iters" => self.iters = parse_value(key, value)?,
            "burnin" => self.burnin = parse_value(key, value)?,
            "thin" => self.thin = parse_value(key, value)?,
            "level" => self.level = parse_value(key, value)?,
            "skip_screening" => self.skip_screening = parse_bool(key, value)?,
            "ecm_only" => self.ecm_only = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Apply every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key with its current value; parsing the result gives back an
    /// equal configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        kv("mode", self.mode.to_string());
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        for (k, v) in [
            ("data", path(&self.data)),
            ("truth", path(&self.truth)),
            ("test", path(&self.test)),
            ("fit_dir", path(&self.fit_dir)),
            ("new_data", path(&self.new_data)),
            ("data_sha256", self.data_sha256.clone()),
            ("n", self.n.map(|v| v.to_string())),
            ("p", self.p.map(|v| v.to_string())),
            ("n_signals", self.n_signals.map(|v| v.to_string())),
            ("signal_value", self.signal_value.map(|v| v.to_string())),
            ("intercept", self.intercept.map(|v| v.to_string())),
            ("correlation", self.correlation.as_ref().map(format_correlation)),
            ("error_law", self.error_law.as_ref().map(|e| e.to_string())),
        ] {
            if let Some(v) = v {
                kv(k, v);
            }
        }
        kv("response", self.response.clone());
        kv("scenario", self.scenario.to_string());
        kv("test_n", self.test_n.to_string());
        kv("kappa0", self.kappa0.map_or("cv".to_string(), |k| k.to_string()));
        kv("kappa1", self.kappa1.to_string());
        kv("lambda_tau", self.lambda_tau.to_string());
        kv("a_rho", self.a_rho.to_string());
        kv("b_rho", self.b_rho.to_string());
        kv("c_theta", self.c_theta.to_string());
        kv("d_theta", self.d_theta.to_string());
        kv("eta_fixed", self.eta_fixed.to_string());
        kv("eta_grid", join(&self.eta_grid));
        kv("kappa0_grid", join(&self.kappa0_grid));
        kv("n_folds", self.n_folds.to_string());
        kv("ecm_max_iter", self.ecm_max_iter.to_string());
        kv("ecm_tol", self.ecm_tol.to_string());
        kv("iters", self.iters.to_string());
        kv("burnin", self.burnin.to_string());
        kv("thin", self.thin.to_string());
        kv("level", self.level.to_string());
        kv("skip_screening", self.skip_screening.to_string());
        kv("ecm_only", self.ecm_only.to_string());
        out
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            kappa0: self.kappa0.unwrap_or(HyperParams::default().kappa0),
            kappa1: self.kappa1,
            lambda_tau: self.lambda_tau,
            a_rho: self.a_rho,
            b_rho: self.b_rho,
            c_theta: self.c_theta,
            d_theta: self.d_theta,
            eta_fixed: self.eta_fixed,
            eta_grid: self.eta_grid.clone(),
            kappa0_grid: self.kappa0_grid.clone(),
        }
    }

    pub fn schedule(&self) -> GibbsSchedule {
        GibbsSchedule {
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
        }
    }

    pub fn ecm_init(&self) -> EcmInit {
        EcmInit {
            start: None,
            max_iter: self.ecm_max_iter,
            rel_tol: self.ecm_tol,
        }
    }

    /// The scenario preset with this configuration's overrides applied.
    pub fn scenario_config(&self) -> ScenarioConfig {
        let mut s = ScenarioConfig::preset(self.scenario, self.seed);
        if let Some(v) = self.n {
            s.n = v;
        }
        if let Some(v) = self.p {
            s.p = v;
        }
        if let Some(v) = self.n_signals {
            s.n_signals = v;
        }
        if let Some(v) = self.signal_value {
            s.signal_value = v;
        }
        if let Some(v) = self.intercept {
            s.intercept = v;
        }
        if let Some(v) = self.correlation {
            s.correlation = v;
        }
        if let Some(v) = self.error_law {
            s.error_law = v;
        }
        s
    }

    fn required<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("`{key}` must be set for {}", self.mode)))
    }
}

/// 64-bit seed of a named stage stream.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    RngStream::named(seed, stage).next_u64()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_manifest(cfg: &RunConfig, extra: &[(String, String)]) -> Result<()> {
    let mut text = String::from("# resolved configuration; rerun with --config <this file>\n");
    text.push_str(&cfg.to_text());
    for (k, v) in extra {
        let _ = writeln!(text, "# {k} = {v}");
    }
    write_text(&cfg.out_dir.join(MANIFEST), &text)
}

fn stream_lines(seed: u64) -> Vec<(String, String)> {
    ["simulate", "cv", "ecm", "gibbs", "predict"]
        .into_iter()
        .map(|s| {
            let id = RngStream::named(seed, s).stream_id();
            (format!("stream.{s}"), format!("{id:#018x}"))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence helpers
// ---------------------------------------------------------------------------

pub fn write_truth(truth: &TrueModel, names: &[String], path: &Path) -> Result<()> {
    let mut out = String::from("term,beta,gamma\n");
    let _ = writeln!(out, "intercept,{},1", truth.beta0);
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(out, "{name},{},{}", truth.beta[j], u8::from(truth.gamma_true[j]));
    }
    write_text(path, &out)
}

pub fn read_truth(path: &Path) -> Result<(TrueModel, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("term,beta,gamma") {
        return Err(Error::ColumnMismatch(format!(
            "{}: expected header term,beta,gamma",
            path.display()
        )));
    }
    let mut beta0 = None;
    let mut names = Vec::new();
    let mut beta = Vec::new();
    for (r, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                row: r + 1,
                column: "term".into(),
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let b: f64 = fields[1].parse().map_err(|e: std::num::ParseFloatError| Error::Parse {
            row: r + 1,
            column: "beta".into(),
            message: e.to_string(),
        })?;
        if fields[0] == "intercept" {
            beta0 = Some(b);
        } else {
            names.push(fields[0].to_string());
            beta.push(b);
        }
    }
    let beta0 = beta0.ok_or_else(|| Error::MissingColumn("intercept".into()))?;
    Ok((TrueModel::new(beta0, Array1::from(beta)), names))
}

/// `column,mean,sd`; the first row is the response.
pub fn write_standardizer(st: &Standardizer, response: &str, names: &[String], path: &Path) -> Result<()> {
    let mut out = String::from("column,mean,sd\n");
    let _ = writeln!(out, "{response},{},{}", st.y_mean, st.y_sd);
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(out, "{name},{},{}", st.x_means[j], st.x_sds[j]);
    }
    write_text(path, &out)
}

pub fn read_standardizer(path: &Path) -> Result<(Standardizer, String, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (r, line) in text.lines().skip(1).enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |k: usize, col: &str| -> Result<f64> {
            f.get(k)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    row: r + 1,
                    column: col.into(),
                    message: format!("bad line `{line}`"),
                })
        };
        rows.push((f[0].trim().to_string(), num(1, "mean")?, num(2, "sd")?));
    }
    let (response, y_mean, y_sd) = rows
        .first()
        .cloned()
        .ok_or_else(|| Error::InvalidData(format!("{} is empty", path.display())))?;
    let rest = &rows[1..];
    Ok((
        Standardizer {
            y_mean,
            y_sd,
            x_means: rest.iter().map(|r| r.1).collect(),
            x_sds: rest.iter().map(|r| r.2).collect(),
        },
        response,
        rest.iter().map(|r| r.0.clone()).collect(),
    ))
}

fn ecm_text(fit: &EcmFit, kappa0: f64, names: &[String]) -> String {
    let s = &fit.final_state;
    let mut out = String::new();
    let _ = writeln!(out, "kappa0 = {kappa0}");
    let _ = writeln!(out, "iterations = {}", fit.iterations);
    let _ = writeln!(out, "converged = {}", fit.converged);
    let _ = writeln!(out, "objective = {}", s.q_value);
    let _ = writeln!(out, "rho2_hat = {}", s.rho2_hat);
    let _ = writeln!(out, "tau2_hat = {}", s.tau2_hat);
    let _ = writeln!(out, "theta_hat = {}", s.theta_hat);
    let _ = writeln!(out, "p_star = {}", fit.p_star());
    let selected: Vec<&str> = fit.reduced_indices.iter().map(|&j| names[j].as_str()).collect();
    let _ = writeln!(out, "selected = {}", selected.join(","));
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(out, "beta_hat[{name}] = {}", s.beta_hat[j]);
    }
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(out, "g[{name}] = {}", s.g[j]);
    }
    out
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Generate a scenario dataset: `data.csv`, `truth.csv`, optionally
/// `test.csv` (`test_n` further rows from the same model), and the manifest.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let sc = cfg.scenario_config();
    let mut full = sc.clone();
    full.n = sc.n + cfg.test_n;
    let (d, truth) = generate_scenario(&full).map_err(|e| e.in_stage("simulate"))?;
    ensure_dir(&cfg.out_dir)?;
    let train_rows: Vec<usize> = (0..sc.n).collect();
    write_csv(&d.select_rows(&train_rows), cfg.out_dir.join(DATA_FILE))?;
    if cfg.test_n > 0 {
        let test_rows: Vec<usize> = (sc.n..full.n).collect();
        write_csv(&d.select_rows(&test_rows), cfg.out_dir.join(TEST_FILE))?;
    }
    write_truth(&truth, &d.column_names, &cfg.out_dir.join(TRUTH_FILE))?;

    let mut resolved = cfg.clone();
    resolved.mode = Mode::Simulate;
    resolved.n = Some(sc.n);
    resolved.p = Some(sc.p);
    resolved.n_signals = Some(sc.n_signals);
    resolved.signal_value = Some(sc.signal_value);
    resolved.intercept = Some(sc.intercept);
    resolved.correlation = Some(sc.correlation);
    resolved.error_law = Some(sc.error_law);
    write_manifest(&resolved, &stream_lines(cfg.seed))
}

/// Everything produced by a fit, also returned to library callers.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub kappa0: Option<f64>,
    pub cv: Option<crate::cv::CvReport>,
    pub ecm: Option<EcmFit>,
    pub reduced_indices: Vec<usize>,
    pub draws: Option<GibbsDraws>,
    pub summary: Option<crate::inference::PosteriorSummary>,
    pub standardizer: Standardizer,
    pub data: Dataset,
}

/// Standardize → cross-validate κ₀ → ECM screening → Gibbs on the reduced
/// space → summary. Each stage writes its files before the next starts.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutput> {
    let data_path = cfg.required(&cfg.data, "data")?;
    let hash = sha256_file(data_path)?;
    if let Some(expected) = &cfg.data_sha256 {
        if *expected != hash {
            return Err(Error::InvalidData(format!(
                "{} has sha256 {hash}, manifest expects {expected}",
                data_path.display()
            )));
        }
    }
    let d = load_csv(data_path, &cfg.response)?;
    let hp = cfg.hyper_params();
    hp.validate()?;
    cfg.schedule().validate()?;
    ensure_dir(&cfg.out_dir)?;

    let mut resolved = cfg.clone();
    resolved.mode = Mode::Fit;
    resolved.data_sha256 = Some(hash);
    let mut notes = stream_lines(cfg.seed);
    write_manifest(&resolved, &notes)?;

    let (s, st) = crate::data::standardize(&d).map_err(|e| e.in_stage("standardize"))?;
    write_standardizer(&st, &cfg.response, &d.column_names, &cfg.out_dir.join(STANDARDIZER_FILE))?;

    let mut out = FitOutput {
        kappa0: None,
        cv: None,
        ecm: None,
        reduced_indices: (0..d.p()).collect(),
        draws: None,
        summary: None,
        standardizer: st.clone(),
        data: d.clone(),
    };

    let mut init = GibbsInit::default();
    if !cfg.skip_screening {
        let kappa0 = match cfg.kappa0 {
            Some(k) => k,
            None => {
                let plan = CvPlan::new(d.n(), cfg.n_folds, hp.kappa0_grid.clone(), stage_seed(cfg.seed, "cv"))
                    .map_err(|e| e.in_stage("cv"))?;
                let report = select_kappa0(&d, &hp, &plan, &cfg.ecm_init(), cfg.workers)
                    .map_err(|e| e.in_stage("cv"))?;
                write_text(&cfg.out_dir.join(CV_FILE), &report.to_text())?;
                let k = report.best_kappa0;
                out.cv = Some(report);
                k
            }
        };
        out.kappa0 = Some(kappa0);
        notes.push(("selected_kappa0".into(), kappa0.to_string()));
        write_manifest(&resolved, &notes)?;

        let fit = run_ecm(&s, &hp.with_kappa0(kappa0), &cfg.ecm_init()).map_err(|e| e.in_stage("ecm"))?;
        write_text(&cfg.out_dir.join(ECM_FILE), &ecm_text(&fit, kappa0, &d.column_names))?;
        out.reduced_indices = fit.reduced_indices.clone();
        let fs = &fit.final_state;
        init = GibbsInit {
            sigma2: Some(fs.sigma2_hat.mapv(|v| v * fs.rho2_hat)),
            rho2: fs.rho2_hat,
            tau2: fs.tau2_hat,
            theta: fs.theta_hat,
            eta: None,
        };
        out.ecm = Some(fit);
        if cfg.ecm_only {
            return Ok(out);
        }
    }

    let reduced = s.select_columns(&out.reduced_indices);
    let mut rng = RngStream::named(cfg.seed, "gibbs");
    let draws = run_gibbs(&reduced, &hp, &init, cfg.schedule(), &mut rng).map_err(|e| e.in_stage("gibbs"))?;
    write_draws_csv(&draws, cfg.out_dir.join(DRAWS_FILE))?;
    if !draws.is_empty() {
        let summary = summarize(&draws, &out.reduced_indices, &st, &d.column_names, &hp.eta_grid)
            .map_err(|e| e.in_stage("summarize"))?;
        write_text(&cfg.out_dir.join(SUMMARY_FILE), &summary.to_text())?;
        out.summary = Some(summary);
    }
    out.draws = Some(draws);
    Ok(out)
}

/// The pieces of a fit directory needed for prediction.
pub struct LoadedFit {
    pub standardizer: Standardizer,
    pub response: String,
    pub column_names: Vec<String>,
    pub reduced_indices: Vec<usize>,
    pub draws: GibbsDraws,
    pub config: RunConfig,
}

pub fn load_fit(dir: &Path) -> Result<LoadedFit> {
    let config = RunConfig::from_file(dir.join(MANIFEST))?;
    let (standardizer, response, column_names) = read_standardizer(&dir.join(STANDARDIZER_FILE))?;
    let draws_path = dir.join(DRAWS_FILE);
    if !draws_path.exists() {
        return Err(Error::Config(format!(
            "{} has no posterior draws (was the fit run with ecm_only?)",
            dir.display()
        )));
    }
    let draws = read_draws_csv(&draws_path, config.burnin, config.thin, stage_seed(config.seed, "gibbs"))?;
    let reduced_indices = draws
        .column_names
        .iter()
        .map(|c| {
            column_names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| Error::ColumnMismatch(format!("draws column `{c}` is not a training column")))
        })
        .collect::<Result<_>>()?;
    Ok(LoadedFit {
        standardizer,
        response,
        column_names,
        reduced_indices,
        draws,
        config,
    })
}

fn predict_file(cfg: &RunConfig, fit: &LoadedFit, path: &Path) -> Result<(PredictionResult, Option<Array1<f64>>)> {
    let (x, y) = load_design(path, &fit.column_names, &fit.response)?;
    let pred = predict(
        &fit.draws,
        &fit.reduced_indices,
        &fit.standardizer,
        x.view(),
        cfg.level,
        &RngStream::named(cfg.seed, "predict"),
        cfg.workers,
    )
    .map_err(|e| e.in_stage("predict"))?;
    Ok((pred, y))
}

/// Predict `new_data` from the fit in `fit_dir`; writes `predictions.csv`.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PredictionResult> {
    let fit_dir = cfg.required(&cfg.fit_dir, "fit_dir")?;
    let new_data = cfg.required(&cfg.new_data, "new_data")?;
    let fit = load_fit(fit_dir)?;
    let (pred, _) = predict_file(cfg, &fit, new_data)?;
    ensure_dir(&cfg.out_dir)?;
    pred.write_csv(cfg.out_dir.join(PREDICTIONS_FILE))?;
    Ok(pred)
}

/// Score the fit in `fit_dir` against `truth` and the held-out `test` rows;
/// writes `eval_report.txt` and `predictions.csv`. The training design is
/// taken from `data` if set, else from the fit's manifest.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let fit_dir = cfg.required(&cfg.fit_dir, "fit_dir")?;
    let truth_path = cfg.required(&cfg.truth, "truth")?;
    let test_path = cfg.required(&cfg.test, "test")?;
    let fit = load_fit(fit_dir)?;
    let (truth, truth_names) = read_truth(truth_path)?;
    if truth_names != fit.column_names {
        return Err(Error::ColumnMismatch(format!(
            "{} names columns that differ from the fit's training columns",
            truth_path.display()
        )));
    }
    let train_path = cfg
        .data
        .clone()
        .or_else(|| fit.config.data.clone())
        .ok_or_else(|| Error::Config("`data` must be set for evaluate".into()))?;
    let train = load_csv(&train_path, &fit.response)?;
    if train.column_names != fit.column_names {
        return Err(Error::ColumnMismatch(format!(
            "{} columns differ from the fit's training columns",
            train_path.display()
        )));
    }
    let summary = summarize(
        &fit.draws,
        &fit.reduced_indices,
        &fit.standardizer,
        &fit.column_names,
        &fit.config.eta_grid,
    )?;
    let (pred, y) = predict_file(cfg, &fit, test_path)?;
    let y = y.ok_or_else(|| Error::MissingColumn(fit.response.clone()))?;
    let report = metrics(&truth, &summary, &train, &pred, &y)?;
    ensure_dir(&cfg.out_dir)?;
    pred.write_csv(cfg.out_dir.join(PREDICTIONS_FILE))?;
    write_text(&cfg.out_dir.join(EVAL_FILE), &report.to_text())?;
    Ok(report)
}

/// Five-number summaries of the `eval_report.txt` found in each directory;
/// written to `<out_dir>/aggregate.csv` and returned.
pub fn cmd_aggregate(dirs: &[PathBuf], out_dir: &Path) -> Result<String> {
    let reports = dirs
        .iter()
        .map(|d| {
            let path = d.join(EVAL_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            EvalReport::from_text(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = aggregate_reports(&reports);
    ensure_dir(out_dir)?;
    write_text(&out_dir.join(AGGREGATE_FILE), &table)?;
    Ok(table)
}
