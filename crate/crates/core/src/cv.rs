//! K-fold cross-validation of the spike scale κ₀.
//!
//! Each (κ₀, fold) pair is an independent task: standardize the training
//! rows with their own statistics, run ECM, predict the held-out responses on
//! the original scale from the mode, and take the median absolute error. The
//! score of κ₀ is the median of its fold medians.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{Dataset, Standardizer};
use crate::distributions::RngStream;
use crate::ecm::{run_ecm, EcmInit, HyperParams};
use crate::error::{Error, Result};
use crate::inference::median;

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub n_folds: usize,
    pub kappa0_grid: Vec<f64>,
    /// Fold label of every row.
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
}

impl CvPlan {
    /// Shuffle rows with the seed and deal them round-robin into folds, so
    /// fold sizes differ by at most one.
    pub fn new(n: usize, n_folds: usize, kappa0_grid: Vec<f64>, seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 folds, got {n_folds}")));
        }
        if n < 2 * n_folds {
            return Err(Error::InvalidData(format!(
                "cross-validation with {n_folds} folds needs n >= {}, got {n}",
                2 * n_folds
            )));
        }
        if kappa0_grid.is_empty() {
            return Err(Error::InvalidParameter("kappa0 grid is empty".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut RngStream::named(seed, "folds"));
        let mut fold_assignment = vec![0; n];
        for (pos, row) in order.into_iter().enumerate() {
            fold_assignment[row] = pos % n_folds;
        }
        Ok(Self {
            n_folds,
            kappa0_grid,
            fold_assignment,
            seed,
        })
    }

    pub fn fold_rows(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, f) in self.fold_assignment.iter().enumerate() {
            if *f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaScore {
    pub kappa0: f64,
    /// `None` when any fold failed for this κ₀.
    pub score: Option<f64>,
    pub fold_medians: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// In grid order.
    pub per_kappa0_score: Vec<KappaScore>,
    pub best_kappa0: f64,
}

impl CvReport {
    /// Flat `key = value` text.
    pub fn to_text(&self) -> String {
        let mut out = format!("best_kappa0 = {}\n", self.best_kappa0);
        for s in &self.per_kappa0_score {
            match s.score {
                Some(v) => out.push_str(&format!("score[{}] = {v}\n", s.kappa0)),
                None => out.push_str(&format!("score[{}] = invalid\n", s.kappa0)),
            }
        }
        out
    }
}

struct PreparedFold {
    train: Dataset,
    standardizer: Standardizer,
    test_x_std: ndarray::Array2<f64>,
    test_y: Array1<f64>,
}

fn prepare_fold(d: &Dataset, plan: &CvPlan, fold: usize) -> Result<PreparedFold> {
    let (train_rows, test_rows) = plan.fold_rows(fold);
    let train_raw = d.select_rows(&train_rows);
    let test_raw = d.select_rows(&test_rows);
    let standardizer = Standardizer::fit(&train_raw)?;
    Ok(PreparedFold {
        train: standardizer.apply(&train_raw)?,
        test_x_std: standardizer.apply_x(test_raw.x.view())?,
        test_y: test_raw.y,
        standardizer,
    })
}

fn fold_median(fold: &PreparedFold, hp: &HyperParams, ecm: &EcmInit) -> Result<f64> {
    let fit = run_ecm(&fold.train, hp, ecm)?;
    let pred = fold
        .standardizer
        .invert_y(&fold.test_x_std.dot(&fit.final_state.beta_hat));
    let abs_err: Vec<f64> = fold
        .test_y
        .iter()
        .zip(pred.iter())
        .map(|(y, p)| (y - p).abs())
        .collect();
    Ok(median(&abs_err))
}

/// Score every κ₀ in the plan's grid on `workers` threads and return the
/// minimizer, ties going to the smallest κ₀. The report does not depend on
/// `workers`.
pub fn select_kappa0(
    d: &Dataset,
    hp: &HyperParams,
    plan: &CvPlan,
    ecm: &EcmInit,
    workers: usize,
) -> Result<CvReport> {
    if plan.fold_assignment.len() != d.n() {
        return Err(Error::InvalidParameter(format!(
            "fold assignment covers {} rows, data has {}",
            plan.fold_assignment.len(),
            d.n()
        )));
    }
    for k in &plan.kappa0_grid {
        hp.with_kappa0(*k).validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let folds: Vec<Option<PreparedFold>> = (0..plan.n_folds)
        .map(|f| prepare_fold(d, plan, f).ok())
        .collect();
    let tasks: Vec<(usize, usize)> = (0..plan.kappa0_grid.len())
        .flat_map(|k| (0..plan.n_folds).map(move |f| (k, f)))
        .collect();
    let results: Vec<Option<f64>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(k, f)| {
                let fold = folds[f].as_ref()?;
                fold_median(fold, &hp.with_kappa0(plan.kappa0_grid[k]), ecm).ok()
            })
            .collect()
    });

    let per_kappa0_score: Vec<KappaScore> = plan
        .kappa0_grid
        .iter()
        .enumerate()
        .map(|(k, &kappa0)| {
            let fold_medians = results[k * plan.n_folds..(k + 1) * plan.n_folds].to_vec();
            let score = fold_medians
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|m| median(&m));
            KappaScore {
                kappa0,
                score,
                fold_medians,
            }
        })
        .collect();

    let best = per_kappa0_score
        .iter()
        .filter_map(|s| s.score.map(|v| (s.kappa0, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .ok_or_else(|| Error::Domain("every kappa0 candidate failed in cross-validation".into()))?;
    Ok(CvReport {
        per_kappa0_score,
        best_kappa0: best.0,
    })
}
