//! Posterior summaries, predictive intervals and evaluation metrics.
//!
//! Empirical quantiles use linear interpolation between order statistics:
//! for sorted `x₁ ≤ … ≤ x_m` and level `q`, set `h = (m − 1)q`, then
//! `Q(q) = x_{⌊h⌋+1} + (h − ⌊h⌋)(x_{⌊h⌋+2} − x_{⌊h⌋+1})`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, ArrayView2};
use rayon::prelude::*;

use crate::data::{Dataset, Standardizer, TrueModel};
use crate::distributions::{gig_sample, normal_sample, GigParams, RngStream};
use crate::error::{Error, Result};
use crate::gibbs::GibbsDraws;

pub const DEFAULT_LEVEL: f64 = 0.90;

// ---------------------------------------------------------------------------
// Order statistics
// ---------------------------------------------------------------------------

/// Quantile of already sorted data; NaN for empty input.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        m => {
            let h = (m - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(values), q)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Minimum, lower quartile, median, upper quartile, maximum.
pub fn five_number_summary(values: &[f64]) -> [f64; 5] {
    let s = sorted(values);
    [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile_sorted(&s, q))
}

// ---------------------------------------------------------------------------
// Posterior summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub column_names: Vec<String>,
    /// Original scale, zero outside the reduced space.
    pub beta_median: Array1<f64>,
    pub beta0_median: f64,
    pub inclusion_prob: Array1<f64>,
    /// `(η, posterior frequency)` over the grid.
    pub eta_posterior: Vec<(f64, f64)>,
    pub mpm_selected: Vec<bool>,
    pub n_draws: usize,
}

/// Per-draw coefficients on the original scale: `(β₀, β_reduced)`.
fn original_scale_draws(
    draws: &GibbsDraws,
    reduced_indices: &[usize],
    st: &Standardizer,
) -> Vec<(f64, Vec<f64>)> {
    draws
        .draws
        .iter()
        .map(|dr| {
            let beta: Vec<f64> = reduced_indices
                .iter()
                .zip(dr.beta.iter())
                .map(|(&j, &b)| st.slope_to_original(j, b))
                .collect();
            let shift: f64 = reduced_indices
                .iter()
                .zip(beta.iter())
                .map(|(&j, b)| b * st.x_means[j])
                .sum();
            (st.y_mean - shift, beta)
        })
        .collect()
}

fn check_reduced(draws: &GibbsDraws, reduced_indices: &[usize], st: &Standardizer) -> Result<()> {
    if draws.p() != reduced_indices.len() {
        return Err(Error::ColumnMismatch(format!(
            "draws have {} columns, reduced space has {}",
            draws.p(),
            reduced_indices.len()
        )));
    }
    if let Some(j) = reduced_indices.iter().find(|j| **j >= st.p()) {
        return Err(Error::ColumnMismatch(format!(
            "reduced index {j} outside the {} training columns",
            st.p()
        )));
    }
    Ok(())
}

/// Medians, inclusion frequencies and the η posterior over retained draws,
/// mapped back to the original covariate indexing. The intercept draw is
/// `β₀ = Ȳ − Σ_j β_j x̄_j` with original-scale slopes.
pub fn summarize(
    draws: &GibbsDraws,
    reduced_indices: &[usize],
    st: &Standardizer,
    column_names: &[String],
    eta_grid: &[f64],
) -> Result<PosteriorSummary> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    check_reduced(draws, reduced_indices, st)?;
    if column_names.len() != st.p() {
        return Err(Error::ColumnMismatch(format!(
            "{} column names for {} columns",
            column_names.len(),
            st.p()
        )));
    }
    let p = st.p();
    let m = draws.len() as f64;
    let orig = original_scale_draws(draws, reduced_indices, st);

    let mut beta_median = Array1::zeros(p);
    let mut inclusion_prob = Array1::zeros(p);
    for (k, &j) in reduced_indices.iter().enumerate() {
        let col: Vec<f64> = orig.iter().map(|(_, b)| b[k]).collect();
        beta_median[j] = median(&col);
        inclusion_prob[j] = draws.draws.iter().filter(|d| d.gamma[k]).count() as f64 / m;
    }
    let beta0: Vec<f64> = orig.iter().map(|(b0, _)| *b0).collect();
    let eta_posterior = eta_grid
        .iter()
        .map(|&e| (e, draws.draws.iter().filter(|d| d.eta == e).count() as f64 / m))
        .collect();
    Ok(PosteriorSummary {
        column_names: column_names.to_vec(),
        mpm_selected: inclusion_prob.iter().map(|q| *q >= 0.5).collect(),
        beta_median,
        beta0_median: median(&beta0),
        inclusion_prob,
        eta_posterior,
        n_draws: draws.len(),
    })
}

impl PosteriorSummary {
    /// Grid point with the largest posterior frequency (first on ties).
    pub fn eta_mode(&self) -> Option<f64> {
        self.eta_posterior
            .iter()
            .fold(None, |best: Option<(f64, f64)>, &(e, w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((e, w)),
            })
            .map(|(e, _)| e)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_draws = {}", self.n_draws);
        let _ = writeln!(out, "beta0_median = {}", self.beta0_median);
        for (j, name) in self.column_names.iter().enumerate() {
            let _ = writeln!(out, "beta_median[{name}] = {}", self.beta_median[j]);
        }
        for (j, name) in self.column_names.iter().enumerate() {
            let _ = writeln!(out, "inclusion_prob[{name}] = {}", self.inclusion_prob[j]);
        }
        for (e, w) in &self.eta_posterior {
            let _ = writeln!(out, "eta_posterior[{e}] = {w}");
        }
        let selected: Vec<&str> = self
            .column_names
            .iter()
            .zip(&self.mpm_selected)
            .filter_map(|(n, s)| s.then_some(n.as_str()))
            .collect();
        let _ = writeln!(out, "mpm_selected = {}", selected.join(","));
        out
    }
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub point: Array1<f64>,
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
    pub level: f64,
}

impl PredictionResult {
    pub fn len(&self) -> usize {
        self.point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("point,lower,upper\n");
        for i in 0..self.len() {
            let _ = writeln!(out, "{},{},{}", self.point[i], self.lower[i], self.upper[i]);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, level: f64) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if header != ["point", "lower", "upper"] {
            return Err(Error::ColumnMismatch(format!(
                "{}: expected header point,lower,upper",
                path.display()
            )));
        }
        let (mut point, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let mut vals = [0.0; 3];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = rec[k].trim().parse().map_err(|e: std::num::ParseFloatError| Error::Parse {
                    row: row + 1,
                    column: header[k].clone(),
                    message: e.to_string(),
                })?;
            }
            point.push(vals[0]);
            lower.push(vals[1]);
            upper.push(vals[2]);
        }
        Ok(Self {
            point: point.into(),
            lower: lower.into(),
            upper: upper.into(),
            level,
        })
    }
}

/// Posterior predictive point and interval for each row of `x_new` (raw
/// scale, training column order).
///
/// For draw `t`: `μ_t = β₀_t + x_newᵀβ_t`, `y*_t = μ_t + y_sd · ε_t` with
/// `ε_t ~ N(0, σ²*)`, `σ²* ~ GIG(1, η_t/ρ²_t, η_tρ²_t)`. The point is the
/// median of `μ_t`, the interval the `(α/2, 1 − α/2)` quantiles of `y*_t`.
/// Observation `i` draws from `rng.derive(i)`, so results do not depend on
/// the number of workers.
pub fn predict(
    draws: &GibbsDraws,
    reduced_indices: &[usize],
    st: &Standardizer,
    x_new: ArrayView2<'_, f64>,
    level: f64,
    rng: &RngStream,
    workers: usize,
) -> Result<PredictionResult> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    check_reduced(draws, reduced_indices, st)?;
    if x_new.ncols() != st.p() {
        return Err(Error::ColumnMismatch(format!(
            "new data has {} columns, model was fit on {}",
            x_new.ncols(),
            st.p()
        )));
    }
    let orig = original_scale_draws(draws, reduced_indices, st);
    let noise: Vec<GigParams> = draws
        .draws
        .iter()
        .map(|d| GigParams::new(1.0, d.eta / d.rho2, d.eta * d.rho2))
        .collect::<Result<_>>()?;
    let alpha = 1.0 - level;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<(f64, f64, f64)> = pool.install(|| {
        (0..x_new.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x_new.row(i);
                let mut stream = rng.derive(i as u64);
                let mut mu = Vec::with_capacity(orig.len());
                let mut ystar = Vec::with_capacity(orig.len());
                for ((b0, beta), gig) in orig.iter().zip(&noise) {
                    let m = b0
                        + reduced_indices
                            .iter()
                            .zip(beta)
                            .map(|(&j, b)| row[j] * b)
                            .sum::<f64>();
                    let s2 = gig_sample(gig, &mut stream);
                    mu.push(m);
                    ystar.push(m + st.y_sd * normal_sample(0.0, s2, &mut stream));
                }
                let point = median(&mu);
                let ys = sorted(&ystar);
                let lo = quantile_sorted(&ys, alpha / 2.0).min(point);
                let hi = quantile_sorted(&ys, 1.0 - alpha / 2.0).max(point);
                (point, lo, hi)
            })
            .collect()
    });
    Ok(PredictionResult {
        point: rows.iter().map(|r| r.0).collect(),
        lower: rows.iter().map(|r| r.1).collect(),
        upper: rows.iter().map(|r| r.2).collect(),
        level,
    })
}

/// Mode prediction from a standardized-scale coefficient vector (no
/// interval).
pub fn predict_mode(beta_std: &Array1<f64>, st: &Standardizer, x_new: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if beta_std.len() != st.p() {
        return Err(Error::ColumnMismatch(format!(
            "coefficient vector has {} entries, model has {} columns",
            beta_std.len(),
            st.p()
        )));
    }
    Ok(st.invert_y(&st.apply_x(x_new)?.dot(beta_std)))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse_beta: f64,
    pub rmse_mean_response: f64,
    /// `None` when there are no true signals.
    pub tpr: Option<f64>,
    /// `None` when there are no true noise covariates.
    pub tnr: Option<f64>,
    pub mead: f64,
    pub coverage: f64,
    pub median_width: f64,
}

pub const METRIC_KEYS: [&str; 7] = [
    "rmse_beta",
    "rmse_mean_response",
    "tpr",
    "tnr",
    "mead",
    "coverage",
    "median_width",
];

/// True positive and true negative rates of a selection.
pub fn selection_rates(truth: &[bool], selected: &[bool]) -> (Option<f64>, Option<f64>) {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (t, s) in truth.iter().zip(selected) {
        if *t {
            pos += 1;
            tp += usize::from(*s);
        } else {
            neg += 1;
            tn += usize::from(!*s);
        }
    }
    let rate = |k: usize, m: usize| (m > 0).then(|| k as f64 / m as f64);
    (rate(tp, pos), rate(tn, neg))
}

/// Metrics against the generating model. `train` is the raw training data;
/// the mean-response error is evaluated on its design.
pub fn metrics(
    truth: &TrueModel,
    summary: &PosteriorSummary,
    train: &Dataset,
    pred: &PredictionResult,
    y_test: &Array1<f64>,
) -> Result<EvalReport> {
    let p = truth.beta.len();
    if summary.beta_median.len() != p || train.p() != p {
        return Err(Error::ColumnMismatch(format!(
            "truth has {p} coefficients, summary {}, training data {}",
            summary.beta_median.len(),
            train.p()
        )));
    }
    if pred.len() != y_test.len() {
        return Err(Error::ColumnMismatch(format!(
            "{} predictions for {} test responses",
            pred.len(),
            y_test.len()
        )));
    }
    let diff = &truth.beta - &summary.beta_median;
    let d0 = truth.beta0 - summary.beta0_median;
    let rmse_beta = ((d0 * d0 + diff.iter().map(|d| d * d).sum::<f64>()) / (p + 1) as f64).sqrt();
    let fitted_gap = train.x.dot(&diff) + d0;
    let rmse_mean_response = (fitted_gap.iter().map(|v| v * v).sum::<f64>() / train.n() as f64).sqrt();
    let (tpr, tnr) = selection_rates(&truth.gamma_true, &summary.mpm_selected);

    let abs_err: Vec<f64> = y_test.iter().zip(&pred.point).map(|(y, p)| (y - p).abs()).collect();
    let covered = y_test
        .iter()
        .enumerate()
        .filter(|(i, y)| pred.lower[*i] <= **y && **y <= pred.upper[*i])
        .count();
    let widths: Vec<f64> = pred.upper.iter().zip(&pred.lower).map(|(u, l)| u - l).collect();
    Ok(EvalReport {
        rmse_beta,
        rmse_mean_response,
        tpr,
        tnr,
        mead: median(&abs_err),
        coverage: if y_test.is_empty() {
            f64::NAN
        } else {
            covered as f64 / y_test.len() as f64
        },
        median_width: median(&widths),
    })
}

impl EvalReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "rmse_beta" => Some(self.rmse_beta),
            "rmse_mean_response" => Some(self.rmse_mean_response),
            "tpr" => self.tpr,
            "tnr" => self.tnr,
            "mead" => Some(self.mead),
            "coverage" => Some(self.coverage),
            "median_width" => Some(self.median_width),
            _ => None,
        }
    }

    /// `key = value` lines; undefined rates are written as `absent`.
    pub fn to_text(&self) -> String {
        METRIC_KEYS
            .iter()
            .map(|k| match self.get(k) {
                Some(v) => format!("{k} = {v}\n"),
                None => format!("{k} = absent\n"),
            })
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut values: std::collections::HashMap<&str, Option<f64>> = Default::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidData(format!("malformed report line `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !METRIC_KEYS.contains(&k) {
                return Err(Error::InvalidData(format!("unknown report key `{k}`")));
            }
            let parsed = if v == "absent" {
                None
            } else {
                Some(v.parse::<f64>().map_err(|e| Error::InvalidData(format!("{k}: {e}")))?)
            };
            values.insert(k, parsed);
        }
        let req = |k: &str| -> Result<f64> {
            values
                .get(k)
                .copied()
                .flatten()
                .ok_or_else(|| Error::InvalidData(format!("report is missing `{k}`")))
        };
        let opt = |k: &str| -> Result<Option<f64>> {
            values
                .get(k)
                .copied()
                .ok_or_else(|| Error::InvalidData(format!("report is missing `{k}`")))
        };
        Ok(Self {
            rmse_beta: req("rmse_beta")?,
            rmse_mean_response: req("rmse_mean_response")?,
            tpr: opt("tpr")?,
            tnr: opt("tnr")?,
            mead: req("mead")?,
            coverage: req("coverage")?,
            median_width: req("median_width")?,
        })
    }
}

/// Five-number summary of every metric across replicate reports, as a table
/// with columns `metric,min,q1,median,q3,max,n`. Absent rates are skipped.
pub fn aggregate_reports(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,min,q1,median,q3,max,n\n");
    for key in METRIC_KEYS {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(key)).collect();
        let [a, b, c, d, e] = five_number_summary(&vals);
        let _ = writeln!(out, "{key},{a},{b},{c},{d},{e},{}", vals.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::GibbsDraw;
    use ndarray::array;

    #[test]
    fn quantile_convention() {
        let x = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&x), 2.5);
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert!((quantile(&x, 0.05) - 1.15).abs() < 1e-15);
        assert_eq!(median(&[7.0]), 7.0);
        assert!(median(&[]).is_nan());
        assert_eq!(five_number_summary(&[1.0, 2.0, 3.0, 4.0, 5.0]), [1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn selection_rate_cases() {
        let (tpr, tnr) = selection_rates(&[true, true, false, false], &[true, false, false, true]);
        assert_eq!((tpr, tnr), (Some(0.5), Some(0.5)));
        let truth: Vec<bool> = (0..1000).map(|j| j < 100).collect();
        let (tpr, tnr) = selection_rates(&truth, &[true; 1000]);
        assert_eq!((tpr, tnr), (Some(1.0), Some(0.0)));
        assert_eq!(selection_rates(&[false, false], &[true, false]).0, None);
        assert_eq!(selection_rates(&[true], &[true]).1, None);
    }

    fn unit_standardizer(p: usize, y_mean: f64) -> Standardizer {
        Standardizer {
            y_mean,
            y_sd: 1.0,
            x_means: Array1::zeros(p),
            x_sds: Array1::ones(p),
        }
    }

    fn draw(gamma: bool, beta: f64, eta: f64, rho2: f64) -> GibbsDraw {
        GibbsDraw {
            iteration: 1,
            eta,
            rho2,
            tau2: 1.0,
            theta: 0.5,
            gamma: vec![gamma],
            beta: array![beta],
        }
    }

    fn draws(list: Vec<GibbsDraw>) -> GibbsDraws {
        GibbsDraws {
            draws: list,
            burnin: 0,
            thin: 1,
            seed: 0,
            column_names: vec!["x2".into()],
        }
    }

    #[test]
    fn summary_threshold_and_intercept() {
        let mut list: Vec<GibbsDraw> = (0..5001).map(|_| draw(true, 1.0, 1.0, 1.0)).collect();
        list.extend((0..4999).map(|_| draw(false, 0.0, 2.0, 1.0)));
        let st = unit_standardizer(3, 4.0);
        let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        let s = summarize(&draws(list), &[1], &st, &names, &[1.0, 2.0]).unwrap();
        assert_eq!(s.inclusion_prob[1], 0.5001);
        assert_eq!(s.mpm_selected, vec![false, true, false]);
        assert_eq!(s.beta0_median, 4.0);
        let total: f64 = s.eta_posterior.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(s.eta_mode(), Some(1.0));
        assert!(summarize(&draws(vec![]), &[1], &st, &names, &[1.0]).is_err());
    }

    #[test]
    fn vanishing_noise_collapses_interval() {
        let st = unit_standardizer(1, 0.5);
        let d = draws(vec![draw(true, 2.0, 1.0, 1e-12)]);
        let x = array![[1.0], [-3.0]];
        let r = predict(&d, &[0], &st, x.view(), 0.9, &RngStream::new(1, 1), 1).unwrap();
        assert!((r.point[0] - 2.5).abs() < 1e-12);
        assert!((r.point[1] + 5.5).abs() < 1e-12);
        for i in 0..2 {
            assert!(r.upper[i] - r.lower[i] < 1e-4);
        }
    }

    #[test]
    fn metric_identities() {
        let truth = TrueModel::new(2.0, array![1.5, 0.0]);
        let summary = PosteriorSummary {
            column_names: vec!["x1".into(), "x2".into()],
            beta_median: array![1.5, 0.0],
            beta0_median: 2.0,
            inclusion_prob: array![1.0, 0.0],
            eta_posterior: vec![(1.0, 1.0)],
            mpm_selected: vec![true, false],
            n_draws: 1,
        };
        let train = Dataset::unnamed(array![1.0, 2.0, 3.0], array![[0.1, 0.2], [0.3, -1.0], [2.0, 0.0]]).unwrap();
        let pred = PredictionResult {
            point: array![1.0, 2.0],
            lower: array![0.0, 2.5],
            upper: array![2.0, 3.0],
            level: 0.9,
        };
        let r = metrics(&truth, &summary, &train, &pred, &array![1.5, 2.0]).unwrap();
        assert_eq!(r.rmse_beta, 0.0);
        assert_eq!(r.rmse_mean_response, 0.0);
        assert_eq!((r.tpr, r.tnr), (Some(1.0), Some(1.0)));
        assert_eq!(r.coverage, 0.5);
        assert_eq!(r.mead, 0.25);
        assert_eq!(r.median_width, 1.25);
        assert_eq!(EvalReport::from_text(&r.to_text()).unwrap(), r);
    }
}
