//! Gibbs sampler on the (reduced) model space under the point-mass
//! spike-and-slab prior with hyperbolic errors.
//!
//! Hierarchy on standardized data:
//!
//! ```text
//! y_i | β, σ²_i      ~ N(x_iᵀβ, σ²_i)
//! σ²_i | η, ρ²       ~ GIG(1, η/ρ², ηρ²)
//! β_j | γ_j, ρ², τ²  ~ γ_j N(0, ρ²τ²) + (1−γ_j) δ₀
//! γ_j | θ ~ Bernoulli(θ),  θ ~ Beta(c_θ, d_θ)
//! ρ² ~ InvGamma(a_ρ, b_ρ), τ² ~ InvGamma(λ_τ/2, λ_τ/2), η ~ Uniform(grid)
//! ```
//!
//! One iteration updates, in order: the model indicators by single-flip
//! Metropolis-Hastings with β integrated out followed by a joint draw of the
//! active coefficients, then σ², ρ², τ², θ and η from their full
//! conditionals.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::distributions::{
    beta_sample, categorical_sample, gig_sample, inv_gamma_sample, standard_normal, GigParams,
    RngStream,
};
use crate::ecm::HyperParams;
use crate::error::{Error, Result};
use crate::linalg::{weighted_cross, weighted_gram, Cholesky};
use crate::special_fn::log_bessel_k;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const THETA_EDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub gamma: Vec<bool>,
    /// Zero exactly where `gamma` is false.
    pub beta: Array1<f64>,
    pub sigma2: Array1<f64>,
    pub rho2: f64,
    pub tau2: f64,
    pub theta: f64,
    pub eta: f64,
}

impl GibbsState {
    pub fn active(&self) -> Vec<usize> {
        active_indices(&self.gamma)
    }

    pub fn model_size(&self) -> usize {
        self.gamma.iter().filter(|g| **g).count()
    }

    fn dump(&self) -> String {
        let (lo, hi) = self
            .sigma2
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
        format!(
            "state: model_size={} rho2={:e} tau2={:e} theta={:e} eta={} sigma2_range=[{:e}, {:e}] max|beta|={:e}",
            self.model_size(),
            self.rho2,
            self.tau2,
            self.theta,
            self.eta,
            lo,
            hi,
            self.beta.iter().fold(0.0f64, |m, b| m.max(b.abs())),
        )
    }
}

pub fn active_indices(gamma: &[bool]) -> Vec<usize> {
    gamma
        .iter()
        .enumerate()
        .filter_map(|(j, g)| g.then_some(j))
        .collect()
}

// ---------------------------------------------------------------------------
// Marginal likelihood of a model
// ---------------------------------------------------------------------------

/// Sufficient statistics for the model move at fixed `(σ², ρ², τ²)`, plus a
/// memo of the log marginal likelihood of every model visited. Build a new
/// one whenever σ², ρ² or τ² changes.
#[derive(Debug, Clone)]
pub struct ModelEvidenceCache {
    /// `XᵀΣ⁻¹X`.
    gram: Array2<f64>,
    /// `XᵀΣ⁻¹Y`.
    cross: Array1<f64>,
    /// `n log 2π + Σ log σ²_i + YᵀΣ⁻¹Y`.
    base: f64,
    prior_var: f64,
    memo: HashMap<Vec<u64>, f64>,
}

fn mask_key(gamma: &[bool]) -> Vec<u64> {
    let mut key = vec![0u64; gamma.len().div_ceil(64)];
    for (j, g) in gamma.iter().enumerate() {
        if *g {
            key[j / 64] |= 1 << (j % 64);
        }
    }
    key
}

impl ModelEvidenceCache {
    pub fn new(d: &Dataset, sigma2: &Array1<f64>, rho2: f64, tau2: f64) -> Self {
        let w = sigma2.mapv(|s| 1.0 / s);
        let n = d.n() as f64;
        let yty: f64 = d.y.iter().zip(w.iter()).map(|(y, w)| y * y * w).sum();
        let log_det_sigma: f64 = sigma2.iter().map(|s| s.ln()).sum();
        Self {
            gram: weighted_gram(d.x.view(), w.view()),
            cross: weighted_cross(d.x.view(), w.view(), d.y.view()),
            base: n * LN_2PI + log_det_sigma + yty,
            prior_var: rho2 * tau2,
            memo: HashMap::new(),
        }
    }

    /// Factor of `A = X_γᵀΣ⁻¹X_γ + I/(ρ²τ²)` and `b = X_γᵀΣ⁻¹Y`.
    pub fn system(&self, active: &[usize]) -> Result<(Cholesky, Array1<f64>)> {
        let k = active.len();
        let inv_v = 1.0 / self.prior_var;
        let a = Array2::from_shape_fn((k, k), |(r, c)| {
            self.gram[(active[r], active[c])] + if r == c { inv_v } else { 0.0 }
        });
        let b = Array1::from_shape_fn(k, |r| self.cross[active[r]]);
        Ok((Cholesky::factor(a.view())?, b))
    }

    fn compute(&self, active: &[usize]) -> Result<f64> {
        let (chol, b) = self.system(active)?;
        let z = chol.solve_lower(b.view());
        let quad: f64 = z.iter().map(|v| v * v).sum();
        let k = active.len() as f64;
        Ok(-0.5 * (self.base + k * self.prior_var.ln() + chol.log_det() - quad))
    }

    pub fn log_marginal(&mut self, gamma: &[bool]) -> Result<f64> {
        let key = mask_key(gamma);
        if let Some(v) = self.memo.get(&key) {
            return Ok(*v);
        }
        let v = self.compute(&active_indices(gamma))?;
        self.memo.insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}

/// `log p(Y | γ, σ², ρ², τ²)` with β_γ integrated out:
/// `−½[n log 2π + Σ log σ²_i + p_γ log(ρ²τ²) + log det A + YᵀΣ⁻¹Y − bᵀA⁻¹b]`.
pub fn log_marginal_y(
    gamma: &[bool],
    sigma2: &Array1<f64>,
    rho2: f64,
    tau2: f64,
    d: &Dataset,
) -> Result<f64> {
    ModelEvidenceCache::new(d, sigma2, rho2, tau2).compute(&active_indices(gamma))
}

/// Log Metropolis-Hastings ratio for flipping `γ_j`, with the prior odds
/// `θ/(1−θ)` (addition) or its inverse (deletion).
pub fn flip_log_ratio(cache: &mut ModelEvidenceCache, gamma: &[bool], j: usize, theta: f64) -> Result<f64> {
    let current = cache.log_marginal(gamma)?;
    let mut proposed = gamma.to_vec();
    proposed[j] = !proposed[j];
    let candidate = cache.log_marginal(&proposed)?;
    let log_odds = (theta / (1.0 - theta)).ln();
    Ok(candidate - current + if proposed[j] { log_odds } else { -log_odds })
}

/// Draw `β_γ ~ N(A⁻¹b, A⁻¹)`; zero off-model.
pub fn draw_beta<R: Rng + ?Sized>(
    cache: &ModelEvidenceCache,
    gamma: &[bool],
    rng: &mut R,
) -> Result<Array1<f64>> {
    let active = active_indices(gamma);
    let (chol, b) = cache.system(&active)?;
    let mean = chol.solve(b.view());
    let z = Array1::from_shape_fn(active.len(), |_| standard_normal(rng));
    let noise = chol.solve_upper(z.view());
    let mut beta = Array1::zeros(gamma.len());
    for (k, j) in active.iter().enumerate() {
        beta[*j] = mean[k] + noise[k];
    }
    Ok(beta)
}

/// Conditional mean of β given γ and the other parameters.
pub fn beta_conditional_mean(cache: &ModelEvidenceCache, gamma: &[bool]) -> Result<Array1<f64>> {
    let active = active_indices(gamma);
    let (chol, b) = cache.system(&active)?;
    let mean = chol.solve(b.view());
    let mut beta = Array1::zeros(gamma.len());
    for (k, j) in active.iter().enumerate() {
        beta[*j] = mean[k];
    }
    Ok(beta)
}

/// One random-scan sweep of single-flip moves over all coordinates, then a
/// joint redraw of the active coefficients.
pub fn update_gamma_mh<R: Rng + ?Sized>(state: &mut GibbsState, d: &Dataset, rng: &mut R) -> Result<()> {
    let p = state.gamma.len();
    if p == 0 {
        return Ok(());
    }
    let mut cache = ModelEvidenceCache::new(d, &state.sigma2, state.rho2, state.tau2);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    for j in order {
        let log_ratio = flip_log_ratio(&mut cache, &state.gamma, j, state.theta)?;
        let u: f64 = rng.random();
        if log_ratio >= 0.0 || u.ln() < log_ratio {
            state.gamma[j] = !state.gamma[j];
        }
    }
    state.beta = draw_beta(&cache, &state.gamma, rng)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Full conditionals
// ---------------------------------------------------------------------------

/// `σ²_i | · ~ GIG(½, η/ρ², ηρ² + r_i²)`.
pub fn sigma2_conditional(state: &GibbsState, residual: f64) -> Result<GigParams> {
    sigma2_params(state.eta, state.rho2, residual)
}

fn sigma2_params(eta: f64, rho2: f64, residual: f64) -> Result<GigParams> {
    GigParams::new(0.5, eta / rho2, eta * rho2 + residual * residual)
}

pub fn residuals(state: &GibbsState, d: &Dataset) -> Array1<f64> {
    &d.y - &d.x.dot(&state.beta)
}

pub fn update_sigma2<R: Rng + ?Sized>(state: &mut GibbsState, d: &Dataset, rng: &mut R) -> Result<()> {
    let r = residuals(state, d);
    let (eta, rho2) = (state.eta, state.rho2);
    for (s, ri) in state.sigma2.iter_mut().zip(r.iter()) {
        *s = gig_sample(&sigma2_params(eta, rho2, *ri)?, rng);
    }
    Ok(())
}

fn beta_sq(state: &GibbsState) -> f64 {
    state.beta.iter().map(|b| b * b).sum()
}

/// `ρ² | · ~ GIG(−(n + p_γ/2 + a_ρ), ηΣ1/σ²_i, ηΣσ²_i + βᵀβ/τ² + 2b_ρ)`.
pub fn rho2_conditional(state: &GibbsState, hp: &HyperParams) -> Result<GigParams> {
    let n = state.sigma2.len() as f64;
    let p_gamma = state.model_size() as f64;
    let inv_sum: f64 = state.sigma2.iter().map(|s| 1.0 / s).sum();
    GigParams::new(
        -(n + p_gamma / 2.0 + hp.a_rho),
        state.eta * inv_sum,
        state.eta * state.sigma2.sum() + beta_sq(state) / state.tau2 + 2.0 * hp.b_rho,
    )
}

pub fn update_rho2<R: Rng + ?Sized>(state: &mut GibbsState, hp: &HyperParams, rng: &mut R) -> Result<()> {
    state.rho2 = gig_sample(&rho2_conditional(state, hp)?, rng);
    Ok(())
}

/// `τ² | · ~ InvGamma((p_γ + λ_τ)/2, (λ_τ + βᵀβ/ρ²)/2)` as `(shape, scale)`.
pub fn tau2_conditional(state: &GibbsState, hp: &HyperParams) -> (f64, f64) {
    let p_gamma = state.model_size() as f64;
    (
        (p_gamma + hp.lambda_tau) / 2.0,
        (hp.lambda_tau + beta_sq(state) / state.rho2) / 2.0,
    )
}

pub fn update_tau2<R: Rng + ?Sized>(state: &mut GibbsState, hp: &HyperParams, rng: &mut R) -> Result<()> {
    let (shape, scale) = tau2_conditional(state, hp);
    state.tau2 = inv_gamma_sample(shape, scale, rng)?;
    Ok(())
}

/// `θ | · ~ Beta(c_θ + Σγ, d_θ + p − Σγ)`.
pub fn theta_conditional(state: &GibbsState, hp: &HyperParams) -> (f64, f64) {
    let k = state.model_size() as f64;
    let p = state.gamma.len() as f64;
    (hp.c_theta + k, hp.d_theta + p - k)
}

pub fn update_theta<R: Rng + ?Sized>(state: &mut GibbsState, hp: &HyperParams, rng: &mut R) -> Result<()> {
    let (c, d) = theta_conditional(state, hp);
    state.theta = beta_sample(c, d, rng)?.clamp(THETA_EDGE, 1.0 - THETA_EDGE);
    Ok(())
}

/// Unnormalized log conditional of η over the grid:
/// `−n log K₁(η) − (η/2)[Σσ²_i/ρ² + ρ²Σ1/σ²_i]`.
pub fn eta_log_weights(state: &GibbsState, hp: &HyperParams) -> Result<Vec<f64>> {
    let n = state.sigma2.len() as f64;
    let s: f64 = state.sigma2.sum() / state.rho2
        + state.rho2 * state.sigma2.iter().map(|s| 1.0 / s).sum::<f64>();
    hp.eta_grid
        .iter()
        .map(|&eta| Ok(-n * log_bessel_k(1.0, eta)? - 0.5 * eta * s))
        .collect()
}

pub fn update_eta<R: Rng + ?Sized>(state: &mut GibbsState, hp: &HyperParams, rng: &mut R) -> Result<()> {
    let w = eta_log_weights(state, hp)?;
    state.eta = hp.eta_grid[categorical_sample(&w, rng)?];
    Ok(())
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsSchedule {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
}

impl Default for GibbsSchedule {
    fn default() -> Self {
        Self {
            iters: 11_000,
            burnin: 1_000,
            thin: 1,
        }
    }
}

impl GibbsSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if self.burnin > self.iters {
            return Err(Error::InvalidParameter(format!(
                "burnin {} exceeds iters {}",
                self.burnin, self.iters
            )));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }

    /// Whether 1-based iteration `t` is stored.
    pub fn keeps(&self, t: usize) -> bool {
        t > self.burnin && (t - self.burnin) % self.thin == 0
    }
}

/// Starting values for the continuous parameters. Missing σ² default to 1,
/// and η to the grid point closest to `eta_fixed`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsInit {
    pub sigma2: Option<Array1<f64>>,
    pub rho2: f64,
    pub tau2: f64,
    pub theta: f64,
    pub eta: Option<f64>,
}

impl Default for GibbsInit {
    fn default() -> Self {
        Self {
            sigma2: None,
            rho2: 1.0,
            tau2: 1.0,
            theta: 0.5,
            eta: None,
        }
    }
}

/// Full model with β at its conditional mean.
pub fn initial_state(d: &Dataset, hp: &HyperParams, init: &GibbsInit) -> Result<GibbsState> {
    let sigma2 = match &init.sigma2 {
        Some(s) if s.len() == d.n() => s.clone(),
        Some(s) => {
            return Err(Error::InvalidParameter(format!(
                "initial sigma2 has {} entries, data has {} rows",
                s.len(),
                d.n()
            )))
        }
        None => Array1::ones(d.n()),
    };
    let target = init.eta.unwrap_or(hp.eta_fixed);
    let eta = hp
        .eta_grid
        .iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .ok_or_else(|| Error::InvalidParameter("eta grid is empty".into()))?;
    let gamma = vec![true; d.p()];
    let cache = ModelEvidenceCache::new(d, &sigma2, init.rho2, init.tau2);
    let beta = beta_conditional_mean(&cache, &gamma)?;
    Ok(GibbsState {
        gamma,
        beta,
        sigma2,
        rho2: init.rho2,
        tau2: init.tau2,
        theta: init.theta.clamp(THETA_EDGE, 1.0 - THETA_EDGE),
        eta,
    })
}

/// One retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDraw {
    pub iteration: usize,
    pub eta: f64,
    pub rho2: f64,
    pub tau2: f64,
    pub theta: f64,
    pub gamma: Vec<bool>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDraws {
    pub draws: Vec<GibbsDraw>,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub column_names: Vec<String>,
}

impl GibbsDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn p(&self) -> usize {
        self.column_names.len()
    }
}

pub fn gibbs_iteration<R: Rng + ?Sized>(
    state: &mut GibbsState,
    d: &Dataset,
    hp: &HyperParams,
    rng: &mut R,
) -> Result<()> {
    update_gamma_mh(state, d, rng)?;
    update_sigma2(state, d, rng)?;
    update_rho2(state, hp, rng)?;
    update_tau2(state, hp, rng)?;
    update_theta(state, hp, rng)?;
    update_eta(state, hp, rng)
}

fn check_state(state: &GibbsState) -> Result<()> {
    let finite = state.rho2.is_finite()
        && state.rho2 > 0.0
        && state.tau2.is_finite()
        && state.tau2 > 0.0
        && state.beta.iter().all(|b| b.is_finite())
        && state.sigma2.iter().all(|s| s.is_finite() && *s > 0.0);
    if finite {
        Ok(())
    } else {
        Err(Error::Domain("non-finite or non-positive parameter".into()))
    }
}

/// Run the chain from `init` and keep the iterations selected by `schedule`.
/// A numerical failure aborts with the iteration number and a state dump.
pub fn run_gibbs(
    d: &Dataset,
    hp: &HyperParams,
    init: &GibbsInit,
    schedule: GibbsSchedule,
    rng: &mut RngStream,
) -> Result<GibbsDraws> {
    hp.validate()?;
    schedule.validate()?;
    let mut state = initial_state(d, hp, init)?;
    let mut draws = Vec::with_capacity(schedule.retained());
    for t in 1..=schedule.iters {
        let step = gibbs_iteration(&mut state, d, hp, rng).and_then(|_| check_state(&state));
        if let Err(source) = step {
            return Err(Error::SamplerFailure {
                iteration: t,
                state_dump: state.dump(),
                source: Box::new(source),
            });
        }
        if schedule.keeps(t) {
            draws.push(GibbsDraw {
                iteration: t,
                eta: state.eta,
                rho2: state.rho2,
                tau2: state.tau2,
                theta: state.theta,
                gamma: state.gamma.clone(),
                beta: state.beta.clone(),
            });
        }
    }
    Ok(GibbsDraws {
        draws,
        burnin: schedule.burnin,
        thin: schedule.thin,
        seed: rng.seed(),
        column_names: d.column_names.clone(),
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// One row per retained iteration:
/// `iteration, eta, rho2, tau2, theta, gamma_<col>…, beta_<col>…`.
pub fn write_draws_csv(draws: &GibbsDraws, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = vec!["iteration".to_string(), "eta".into(), "rho2".into(), "tau2".into(), "theta".into()];
    header.extend(draws.column_names.iter().map(|c| format!("gamma_{c}")));
    header.extend(draws.column_names.iter().map(|c| format!("beta_{c}")));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for dr in &draws.draws {
        write!(w, "{},{},{},{},{}", dr.iteration, dr.eta, dr.rho2, dr.tau2, dr.theta).map_err(io)?;
        for g in &dr.gamma {
            write!(w, ",{}", u8::from(*g)).map_err(io)?;
        }
        for b in &dr.beta {
            write!(w, ",{b}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Inverse of [`write_draws_csv`]. `burnin`, `thin` and `seed` are not in the
/// file and are supplied by the caller.
pub fn read_draws_csv(path: impl AsRef<Path>, burnin: usize, thin: usize, seed: u64) -> Result<GibbsDraws> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let fixed = ["iteration", "eta", "rho2", "tau2", "theta"];
    if header.len() < fixed.len() || header[..fixed.len()] != fixed {
        return Err(Error::InvalidData(format!(
            "{}: draws header must start with {}",
            path.display(),
            fixed.join(",")
        )));
    }
    let rest = &header[fixed.len()..];
    if rest.len() % 2 != 0 {
        return Err(Error::InvalidData(format!("{}: unpaired gamma/beta columns", path.display())));
    }
    let p = rest.len() / 2;
    let mut column_names = Vec::with_capacity(p);
    for j in 0..p {
        let g = rest[j].strip_prefix("gamma_");
        let b = rest[p + j].strip_prefix("beta_");
        match (g, b) {
            (Some(g), Some(b)) if g == b => column_names.push(g.to_string()),
            _ => {
                return Err(Error::ColumnMismatch(format!(
                    "{}: columns `{}` and `{}` do not pair",
                    path.display(),
                    rest[j],
                    rest[p + j]
                )))
            }
        }
    }
    let mut draws = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|e| Error::Parse {
                row: row + 1,
                column: header[k].clone(),
                message: e.to_string(),
            })
        };
        let gamma = (0..p)
            .map(|j| field(fixed.len() + j).map(|v| v != 0.0))
            .collect::<Result<Vec<_>>>()?;
        let beta = (0..p)
            .map(|j| field(fixed.len() + p + j))
            .collect::<Result<Array1<f64>>>()?;
        draws.push(GibbsDraw {
            iteration: field(0)? as usize,
            eta: field(1)?,
            rho2: field(2)?,
            tau2: field(3)?,
            theta: field(4)?,
            gamma,
            beta,
        });
    }
    Ok(GibbsDraws {
        draws,
        burnin,
        thin,
        seed,
        column_names,
    })
}
