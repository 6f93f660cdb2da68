//! Datasets, standardization, CSV I/O and the simulation scenarios.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::distributions::{
    hyperbolic_sample, normal_sample, standard_normal, student_t_sample, HyperbolicParams,
    RngStream,
};
use crate::error::{Error, Result};

/// Response vector `y` (length n) and design matrix `x` (n × p).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub x: Array2<f64>,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Array1<f64>, x: Array2<f64>, column_names: Vec<String>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::InvalidData(format!(
                "response has {} rows but design has {}",
                y.len(),
                x.nrows()
            )));
        }
        if column_names.len() != x.ncols() {
            return Err(Error::InvalidData(format!(
                "{} column names for {} columns",
                column_names.len(),
                x.ncols()
            )));
        }
        if y.len() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 observations, got {}",
                y.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response in row {}", i + 1)));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value in row {}, column `{}`",
                i + 1,
                column_names[j]
            )));
        }
        Ok(Self { y, x, column_names })
    }

    /// Dataset with default column names `x1..xp`.
    pub fn unnamed(y: Array1<f64>, x: Array2<f64>) -> Result<Self> {
        let names = default_column_names(x.ncols());
        Self::new(y, x, names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Rows in the given order. Row subsets may drop below two rows, so no
    /// validation is repeated here.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: self.y.select(Axis(0), rows),
            x: self.x.select(Axis(0), rows),
            column_names: self.column_names.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        Dataset {
            y: self.y.clone(),
            x: self.x.select(Axis(1), cols),
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
        }
    }
}

pub fn default_column_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Centering and scaling constants (sample sd with divisor `n − 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub y_mean: f64,
    pub y_sd: f64,
    pub x_means: Array1<f64>,
    pub x_sds: Array1<f64>,
}

impl Standardizer {
    pub fn fit(d: &Dataset) -> Result<Self> {
        if d.n() < 2 {
            return Err(Error::InvalidData("standardization needs n >= 2".into()));
        }
        let (y_mean, y_sd) = mean_sd(d.y.iter().copied());
        if !(y_sd > 0.0) {
            return Err(Error::ConstantColumn {
                column: "response".into(),
            });
        }
        let mut x_means = Array1::zeros(d.p());
        let mut x_sds = Array1::zeros(d.p());
        for (j, col) in d.x.axis_iter(Axis(1)).enumerate() {
            let (m, s) = mean_sd(col.iter().copied());
            if !(s > 0.0) {
                return Err(Error::ConstantColumn {
                    column: d.column_names[j].clone(),
                });
            }
            x_means[j] = m;
            x_sds[j] = s;
        }
        Ok(Self {
            y_mean,
            y_sd,
            x_means,
            x_sds,
        })
    }

    pub fn p(&self) -> usize {
        self.x_means.len()
    }

    pub fn apply_x(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::ColumnMismatch(format!(
                "expected {} columns, got {}",
                self.p(),
                x.ncols()
            )));
        }
        Ok((&x - &self.x_means) / &self.x_sds)
    }

    pub fn apply_y(&self, y: &Array1<f64>) -> Array1<f64> {
        y.mapv(|v| (v - self.y_mean) / self.y_sd)
    }

    pub fn invert_y(&self, y: &Array1<f64>) -> Array1<f64> {
        y.mapv(|v| v * self.y_sd + self.y_mean)
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            y: self.apply_y(&d.y),
            x: self.apply_x(d.x.view())?,
            column_names: d.column_names.clone(),
        })
    }

    pub fn invert(&self, d: &Dataset) -> Dataset {
        Dataset {
            y: self.invert_y(&d.y),
            x: &d.x * &self.x_sds + &self.x_means,
            column_names: d.column_names.clone(),
        }
    }

    /// Map a standardized-scale slope to the original scale.
    pub fn slope_to_original(&self, j: usize, beta_std: f64) -> f64 {
        beta_std * self.y_sd / self.x_sds[j]
    }
}

pub fn standardize(d: &Dataset) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(d)?;
    Ok((s.apply(d)?, s))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Read a numeric CSV with a header row. Every column except
/// `response_column` becomes a covariate. Rows in errors are counted from 1
/// over data records (the header is not counted).
pub fn load_csv(path: impl AsRef<Path>, response_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_owned(),
            source: e,
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_owned(),
            source: e,
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let y_col = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingColumn(response_column.to_owned()))?;
    let x_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != y_col).collect();

    let mut y = Vec::new();
    let mut x = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_owned(),
            source: e,
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: r + 1,
                column: headers.get(record.len()).cloned().unwrap_or_default(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let parse = |c: usize| -> Result<f64> {
            let cell = &record[c];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: r + 1,
                    column: headers[c].clone(),
                    message: format!("`{cell}` is not a finite number"),
                })
        };
        y.push(parse(y_col)?);
        for &c in &x_cols {
            x.push(parse(c)?);
        }
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, x_cols.len()), x).expect("row-major fill");
    let names = x_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::new(Array1::from(y), x, names)
}

/// Read covariates for prediction, reordered to `column_names`. The
/// response column is returned when present; any other unknown column is an
/// error naming it.
pub fn load_design(
    path: impl AsRef<Path>,
    column_names: &[String],
    response_column: &str,
) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.to_owned(),
        source: e,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if let Some(extra) = headers
        .iter()
        .find(|h| *h != response_column && !column_names.contains(h))
    {
        return Err(Error::ColumnMismatch(format!("unexpected column `{extra}`")));
    }
    let positions = column_names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let y_col = headers.iter().position(|h| h == response_column);

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let parse = |c: usize| -> Result<f64> {
            let cell = record.get(c).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: r + 1,
                    column: headers[c].clone(),
                    message: format!("`{cell}` is not a finite number"),
                })
        };
        for &c in &positions {
            x.push(parse(c)?);
        }
        if let Some(c) = y_col {
            y.push(parse(c)?);
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, positions.len()), x).expect("row-major fill");
    Ok((x, y_col.map(|_| Array1::from(y))))
}

/// Write `y, <columns...>` with a header row.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "y").map_err(io)?;
    for name in &d.column_names {
        write!(w, ",{name}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (yi, row) in d.y.iter().zip(d.x.axis_iter(Axis(0))) {
        write!(w, "{yi}").map_err(io)?;
        for v in row {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Deterministic shuffle split; the test part gets `round(n · test_fraction)`
/// rows.
pub fn split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = d.n();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::InvalidParameter(format!(
            "test_fraction {test_fraction} leaves an empty part for n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut RngStream::named(seed, "split"));
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.select_rows(&train), d.select_rows(&test)))
}

// ---------------------------------------------------------------------------
// Simulation scenarios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioId {
    I,
    II,
    III,
    IV,
    Custom,
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            "III" | "3" => Ok(ScenarioId::III),
            "IV" | "4" => Ok(ScenarioId::IV),
            "custom" => Ok(ScenarioId::Custom),
            _ => Err(Error::Config(format!("unknown scenario `{s}` (expected I, II, III, IV)"))),
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
            ScenarioId::IV => "IV",
            ScenarioId::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    /// `Corr(x_k, x_l) = φ^{|k−l|}`.
    Ar1(f64),
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorLaw {
    Hyperbolic { eta: f64, rho2: f64 },
    Normal { var: f64 },
    StudentT { df: f64 },
}

impl ErrorLaw {
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        match *self {
            ErrorLaw::Hyperbolic { eta, rho2 } => {
                Ok(hyperbolic_sample(&HyperbolicParams::new(eta, rho2)?, rng))
            }
            ErrorLaw::Normal { var } => Ok(normal_sample(0.0, var, rng)),
            ErrorLaw::StudentT { df } => student_t_sample(df, rng),
        }
    }
}

impl fmt::Display for ErrorLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorLaw::Hyperbolic { eta, rho2 } => write!(f, "hyperbolic({eta},{rho2})"),
            ErrorLaw::Normal { var } => write!(f, "normal({var})"),
            ErrorLaw::StudentT { df } => write!(f, "student_t({df})"),
        }
    }
}

impl FromStr for ErrorLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse error law `{s}`"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<f64> = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (name.trim(), args.as_slice()) {
            ("hyperbolic", &[eta, rho2]) => Ok(ErrorLaw::Hyperbolic { eta, rho2 }),
            ("normal", &[var]) => Ok(ErrorLaw::Normal { var }),
            ("student_t", &[df]) => Ok(ErrorLaw::StudentT { df }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario_id: ScenarioId,
    pub n: usize,
    pub p: usize,
    pub n_signals: usize,
    pub signal_value: f64,
    pub intercept: f64,
    pub correlation: Correlation,
    pub error_law: ErrorLaw,
    pub seed: u64,
}

impl ScenarioConfig {
    /// The four simulation designs, all with `n = 400` and `β₀ = 2`.
    pub fn preset(id: ScenarioId, seed: u64) -> Self {
        let base = ScenarioConfig {
            scenario_id: id,
            n: 400,
            p: 1000,
            n_signals: 100,
            signal_value: 1.5,
            intercept: 2.0,
            correlation: Correlation::Ar1(0.6),
            error_law: ErrorLaw::Hyperbolic { eta: 0.5, rho2: 2.0 },
            seed,
        };
        match id {
            ScenarioId::I | ScenarioId::Custom => base,
            ScenarioId::II => ScenarioConfig {
                error_law: ErrorLaw::Normal { var: 2.0 },
                ..base
            },
            ScenarioId::III => ScenarioConfig {
                p: 1500,
                n_signals: 50,
                correlation: Correlation::Independent,
                error_law: ErrorLaw::StudentT { df: 2.05 },
                ..base
            },
            ScenarioId::IV => ScenarioConfig {
                p: 1500,
                n_signals: 50,
                signal_value: 0.9,
                correlation: Correlation::Independent,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_signals > self.p {
            return Err(Error::Config(format!(
                "n_signals = {} exceeds p = {}",
                self.n_signals, self.p
            )));
        }
        if self.n < 2 {
            return Err(Error::Config("scenario needs n >= 2".into()));
        }
        if let Correlation::Ar1(phi) = self.correlation {
            if !(phi > -1.0 && phi < 1.0) {
                return Err(Error::Config(format!("AR(1) coefficient {phi} outside (-1, 1)")));
            }
        }
        let ok = match self.error_law {
            ErrorLaw::Hyperbolic { eta, rho2 } => eta > 0.0 && rho2 > 0.0,
            ErrorLaw::Normal { var } => var > 0.0,
            ErrorLaw::StudentT { df } => df > 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("invalid error law {}", self.error_law)));
        }
        Ok(())
    }

    pub fn true_model(&self) -> TrueModel {
        let beta = Array1::from_shape_fn(self.p, |j| {
            if j < self.n_signals {
                self.signal_value
            } else {
                0.0
            }
        });
        TrueModel::new(self.intercept, beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub beta0: f64,
    pub beta: Array1<f64>,
    pub gamma_true: Vec<bool>,
}

impl TrueModel {
    pub fn new(beta0: f64, beta: Array1<f64>) -> Self {
        let gamma_true = beta.iter().map(|b| *b != 0.0).collect();
        Self {
            beta0,
            beta,
            gamma_true,
        }
    }
}

/// Draw a dataset from the scenario on the raw (unstandardized) scale.
///
/// AR(1) rows use the exact recursion `x₁ ~ N(0,1)`,
/// `x_j = φ x_{j−1} + √(1−φ²) z_j`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<(Dataset, TrueModel)> {
    cfg.validate()?;
    let truth = cfg.true_model();
    let root = RngStream::named(cfg.seed, "simulate");
    let mut x_rng = root.derive(0);
    let mut e_rng = root.derive(1);

    let mut x = Array2::<f64>::zeros((cfg.n, cfg.p));
    for mut row in x.axis_iter_mut(Axis(0)) {
        match cfg.correlation {
            Correlation::Independent => row.iter_mut().for_each(|v| *v = standard_normal(&mut x_rng)),
            Correlation::Ar1(phi) => {
                let innovation = (1.0 - phi * phi).sqrt();
                let mut prev = 0.0;
                for (j, v) in row.iter_mut().enumerate() {
                    let z = standard_normal(&mut x_rng);
                    prev = if j == 0 { z } else { phi * prev + innovation * z };
                    *v = prev;
                }
            }
        }
    }
    let mean = x.dot(&truth.beta) + truth.beta0;
    let mut y = mean;
    for yi in y.iter_mut() {
        *yi += cfg.error_law.sample(&mut e_rng)?;
    }
    let d = Dataset::unnamed(y, x)?;
    Ok((d, truth))
}
