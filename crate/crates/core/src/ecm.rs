//! Posterior-mode screening with a continuous spike-and-slab prior.
//!
//! The model for the standardized data is
//!
//! ```text
//! Y | β, σ, ρ²        ~ N(Xβ, ρ² diag(σ²))
//! σ²_i | η            ~ GIG(1, η, η)           (η fixed)
//! β_j | γ_j, ρ², τ²   ~ (1−γ_j) N(0, κ₀ρ²τ²) + γ_j N(0, κ₁ρ²τ²)
//! τ² ~ InvGamma(λ_τ/2, λ_τ/2),  ρ² ~ InvGamma(a_ρ, b_ρ)
//! γ_j | θ ~ Bernoulli(θ),       θ ~ Beta(c_θ, d_θ)
//! ```
//!
//! ECM treats γ as missing data. The E-step computes `g_j = P(γ_j = 1 | ·)`;
//! the CM-step updates β̂ → ρ̂² → τ̂² → θ̂ → σ̂² in closed form, each one the
//! exact maximizer of the expected complete-data log posterior `Q` given the
//! others. A covariate survives screening when its final `g_j ≥ 0.5`.
//!
//! The reported objective is `Q + H(g)`, with `H` the Bernoulli entropy of
//! the E-step probabilities. After an E-step this equals the log posterior
//! with γ summed out, which is the quantity ECM is guaranteed to increase.

use ndarray::Array1;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{weighted_cross, weighted_gram, Cholesky};
use crate::special_fn::log_bessel_k;

pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_REL_TOL: f64 = 1e-6;
const THETA_FLOOR: f64 = 1e-12;

/// Fixed prior hyperparameters and tuning grids.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Spike scale κ₀.
    pub kappa0: f64,
    /// Slab scale κ₁.
    pub kappa1: f64,
    pub lambda_tau: f64,
    pub a_rho: f64,
    pub b_rho: f64,
    pub c_theta: f64,
    pub d_theta: f64,
    /// Tail shape used by the screening step.
    pub eta_fixed: f64,
    /// Support of the discrete uniform prior on η in the sampling step.
    pub eta_grid: Vec<f64>,
    /// Candidate spike scales for cross-validation.
    pub kappa0_grid: Vec<f64>,
}

pub fn default_eta_grid() -> Vec<f64> {
    let mut grid = vec![0.05];
    grid.extend((1..=9).map(|k| k as f64 / 10.0));
    grid.extend([1.0, 2.0, 5.0, 10.0, 20.0, 50.0]);
    grid
}

pub fn default_kappa0_grid() -> Vec<f64> {
    (1..=51).map(|k| k as f64 / 100.0).collect()
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            kappa0: 0.1,
            kappa1: 1.0,
            lambda_tau: 1.0,
            a_rho: 2.1,
            b_rho: 0.1,
            c_theta: 1.0,
            d_theta: 1.0,
            eta_fixed: 1.0,
            eta_grid: default_eta_grid(),
            kappa0_grid: default_kappa0_grid(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("kappa0", self.kappa0),
            ("kappa1", self.kappa1),
            ("lambda_tau", self.lambda_tau),
            ("a_rho", self.a_rho),
            ("b_rho", self.b_rho),
            ("c_theta", self.c_theta),
            ("d_theta", self.d_theta),
            ("eta_fixed", self.eta_fixed),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.kappa0 >= self.kappa1 {
            return Err(Error::InvalidParameter(format!(
                "kappa0 ({}) must be smaller than kappa1 ({})",
                self.kappa0, self.kappa1
            )));
        }
        validate_grid("eta_grid", &self.eta_grid, true)?;
        validate_grid("kappa0_grid", &self.kappa0_grid, false)?;
        if let Some(k) = self.kappa0_grid.iter().find(|k| **k >= self.kappa1) {
            return Err(Error::InvalidParameter(format!(
                "kappa0_grid entry {k} is not below kappa1 = {}",
                self.kappa1
            )));
        }
        Ok(())
    }

    /// Copy with a different spike scale.
    pub fn with_kappa0(&self, kappa0: f64) -> Self {
        Self {
            kappa0,
            ..self.clone()
        }
    }
}

fn validate_grid(name: &str, grid: &[f64], distinct: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!("{name} has non-positive entry {v}")));
    }
    if distinct {
        for (i, a) in grid.iter().enumerate() {
            if grid[..i].contains(a) {
                return Err(Error::InvalidParameter(format!("{name} repeats {a}")));
            }
        }
    }
    Ok(())
}

/// One ECM iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmState {
    pub beta_hat: Array1<f64>,
    pub rho2_hat: f64,
    pub tau2_hat: f64,
    pub theta_hat: f64,
    pub sigma2_hat: Array1<f64>,
    /// `g_j = P(γ_j = 1 | current estimates)`.
    pub g: Array1<f64>,
    /// `Q + H(g)` at this state.
    pub q_value: f64,
}

/// `E[log α_j]` and `E[1/α_j]` where `α_j = κ₀(1−γ_j) + κ₁γ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMoments {
    pub e_log_alpha: Array1<f64>,
    /// Diagonal of Ω.
    pub e_inv_alpha: Array1<f64>,
}

impl AlphaMoments {
    pub fn from_g(g: &Array1<f64>, hp: &HyperParams) -> Self {
        let (lk0, lk1) = (hp.kappa0.ln(), hp.kappa1.ln());
        Self {
            e_log_alpha: g.mapv(|g| (1.0 - g) * lk0 + g * lk1),
            e_inv_alpha: g.mapv(|g| (1.0 - g) / hp.kappa0 + g / hp.kappa1),
        }
    }
}

/// Slab probability for one coefficient, evaluated in log space.
pub fn inclusion_probability(beta: f64, theta: f64, rho2: f64, tau2: f64, hp: &HyperParams) -> f64 {
    let v = rho2 * tau2;
    let slab = theta.ln() - 0.5 * (hp.kappa1 * v).ln() - beta * beta / (2.0 * hp.kappa1 * v);
    let spike =
        (1.0 - theta).ln() - 0.5 * (hp.kappa0 * v).ln() - beta * beta / (2.0 * hp.kappa0 * v);
    let diff = slab - spike;
    if diff >= 0.0 {
        1.0 / (1.0 + (-diff).exp())
    } else {
        let e = diff.exp();
        e / (1.0 + e)
    }
}

/// E-step: refresh `g` from the current estimates and return the derived
/// moments of `α`.
pub fn e_step(state: &mut EcmState, hp: &HyperParams) -> AlphaMoments {
    let (theta, rho2, tau2) = (state.theta_hat, state.rho2_hat, state.tau2_hat);
    state.g = state
        .beta_hat
        .mapv(|b| inclusion_probability(b, theta, rho2, tau2, hp));
    AlphaMoments::from_g(&state.g, hp)
}

/// Closed-form maximizer of `σ²` in `−½(log σ² + ησ² + (η + r²/ρ²)/σ²)`,
/// written to avoid cancellation when `η` is small.
pub fn sigma2_update(residual: f64, rho2: f64, eta: f64) -> f64 {
    let c = eta + residual * residual / rho2;
    2.0 * c / (1.0 + (1.0 + 4.0 * eta * c).sqrt())
}

/// CM-step over all blocks in the order β̂ → ρ̂² → τ̂² → θ̂ → σ̂², each using
/// the freshest values of the others. `g` (hence Ω) is taken from `state`.
pub fn cm_step(state: &EcmState, d: &Dataset, hp: &HyperParams) -> Result<EcmState> {
    let mut next = state.clone();
    let moments = AlphaMoments::from_g(&state.g, hp);
    update_beta(&mut next, d, &moments)?;
    update_rho2(&mut next, d, hp, &moments);
    update_tau2(&mut next, hp, &moments);
    update_theta(&mut next, hp);
    update_sigma2(&mut next, d, hp);
    Ok(next)
}

/// `β̂ = (XᵀΣ̂⁻¹X + Ω/τ̂²)⁻¹ XᵀΣ̂⁻¹Y`.
pub fn update_beta(state: &mut EcmState, d: &Dataset, m: &AlphaMoments) -> Result<()> {
    let w = state.sigma2_hat.mapv(|s| 1.0 / s);
    let mut a = weighted_gram(d.x.view(), w.view());
    for (j, omega) in m.e_inv_alpha.iter().enumerate() {
        a[(j, j)] += omega / state.tau2_hat;
    }
    let b = weighted_cross(d.x.view(), w.view(), d.y.view());
    state.beta_hat = Cholesky::factor(a.view())?.solve(b.view());
    Ok(())
}

fn weighted_rss(state: &EcmState, d: &Dataset) -> f64 {
    let r = &d.y - &d.x.dot(&state.beta_hat);
    r.iter().zip(state.sigma2_hat.iter()).map(|(r, s)| r * r / s).sum()
}

fn beta_omega_beta(state: &EcmState, m: &AlphaMoments) -> f64 {
    state
        .beta_hat
        .iter()
        .zip(m.e_inv_alpha.iter())
        .map(|(b, o)| o * b * b)
        .sum()
}

pub fn update_rho2(state: &mut EcmState, d: &Dataset, hp: &HyperParams, m: &AlphaMoments) {
    let (n, p) = (d.n() as f64, d.p() as f64);
    let num = 2.0 * hp.b_rho + weighted_rss(state, d) + beta_omega_beta(state, m) / state.tau2_hat;
    state.rho2_hat = num / (n + p + 2.0 * hp.a_rho + 2.0);
}

pub fn update_tau2(state: &mut EcmState, hp: &HyperParams, m: &AlphaMoments) {
    let p = state.beta_hat.len() as f64;
    state.tau2_hat =
        (hp.lambda_tau + beta_omega_beta(state, m) / state.rho2_hat) / (p + hp.lambda_tau + 2.0);
}

pub fn update_theta(state: &mut EcmState, hp: &HyperParams) {
    let p = state.g.len() as f64;
    let theta = (hp.c_theta + state.g.sum() - 1.0) / (hp.c_theta + hp.d_theta + p - 2.0);
    state.theta_hat = if theta.is_nan() {
        0.5
    } else {
        theta.clamp(THETA_FLOOR, 1.0 - THETA_FLOOR)
    };
}

pub fn update_sigma2(state: &mut EcmState, d: &Dataset, hp: &HyperParams) {
    let fitted = d.x.dot(&state.beta_hat);
    let rho2 = state.rho2_hat;
    state.sigma2_hat = ndarray::Zip::from(&d.y)
        .and(&fitted)
        .map_collect(|y, f| sigma2_update(y - f, rho2, hp.eta_fixed));
}

/// Expected complete-data log posterior `Q` (up to an additive constant) at
/// the state's parameters, with the expectation over γ taken under `state.g`.
pub fn objective(state: &EcmState, d: &Dataset, hp: &HyperParams) -> Result<f64> {
    let (n, p) = (d.n() as f64, d.p() as f64);
    let eta = hp.eta_fixed;
    let rho2 = state.rho2_hat;
    let tau2 = state.tau2_hat;
    let theta = state.theta_hat;
    let m = AlphaMoments::from_g(&state.g, hp);

    let sigma_terms: f64 = state
        .sigma2_hat
        .iter()
        .map(|s| s.ln() + eta * s + eta / s)
        .sum();
    let likelihood = -0.5
        * (n * rho2.ln()
            + sigma_terms
            + weighted_rss(state, d) / rho2
            + 2.0 * n * log_bessel_k(1.0, eta)?);
    let beta_prior = -0.5
        * (m.e_log_alpha.sum()
            + p * rho2.ln()
            + beta_omega_beta(state, &m) / (rho2 * tau2)
            + (p + hp.lambda_tau + 2.0) * tau2.ln()
            + hp.lambda_tau / tau2);
    let rho_prior = -((hp.a_rho + 1.0) * rho2.ln() + hp.b_rho / rho2);
    let theta_terms = (p + hp.d_theta - 1.0) * (1.0 - theta).ln()
        + (hp.c_theta - 1.0) * theta.ln()
        + (theta / (1.0 - theta)).ln() * state.g.sum();
    Ok(likelihood + beta_prior + rho_prior + theta_terms)
}

/// Bernoulli entropy `Σ −g log g − (1−g) log(1−g)`.
pub fn entropy(g: &Array1<f64>) -> f64 {
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    g.iter().map(|&g| -xlogx(g) - xlogx(1.0 - g)).sum()
}

/// `Q + H(g)`.
pub fn free_energy(state: &EcmState, d: &Dataset, hp: &HyperParams) -> Result<f64> {
    Ok(objective(state, d, hp)? + entropy(&state.g))
}

/// Starting point and stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmInit {
    /// Explicit start; `None` means the ridge start
    /// `β̂ = (XᵀX + I)⁻¹XᵀY`, `σ̂² = 1`, `ρ̂² = τ̂² = 1`, `θ̂ = ½`.
    pub start: Option<EcmState>,
    pub max_iter: usize,
    /// Stop when `|ΔQ| / (|Q| + 1)` drops below this.
    pub rel_tol: f64,
}

impl Default for EcmInit {
    fn default() -> Self {
        Self {
            start: None,
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

pub fn ridge_start(d: &Dataset) -> Result<EcmState> {
    let ones = Array1::ones(d.n());
    let mut a = weighted_gram(d.x.view(), ones.view());
    for j in 0..d.p() {
        a[(j, j)] += 1.0;
    }
    let beta = Cholesky::factor(a.view())?.solve(d.x.t().dot(&d.y).view());
    Ok(EcmState {
        g: Array1::from_elem(d.p(), 0.5),
        beta_hat: beta,
        rho2_hat: 1.0,
        tau2_hat: 1.0,
        theta_hat: 0.5,
        sigma2_hat: Array1::ones(d.n()),
        q_value: f64::NEG_INFINITY,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcmFit {
    pub final_state: EcmState,
    pub iterations: usize,
    pub converged: bool,
    /// `γ̂_j = 1` iff `g_j ≥ 0.5`.
    pub selected: Vec<bool>,
    pub reduced_indices: Vec<usize>,
    /// `q_value` after the initial E-step and after every iteration.
    pub q_trace: Vec<f64>,
}

impl EcmFit {
    pub fn p_star(&self) -> usize {
        self.reduced_indices.len()
    }
}

/// Alternate E- and CM-steps on standardized data until the relative change
/// of the objective falls below `init.rel_tol`, then threshold `g` at ½.
/// Non-convergence within `init.max_iter` is reported, not raised.
pub fn run_ecm(d: &Dataset, hp: &HyperParams, init: &EcmInit) -> Result<EcmFit> {
    hp.validate()?;
    if d.p() == 0 {
        return Err(Error::InvalidData("ECM needs at least one covariate".into()));
    }
    let mut state = match &init.start {
        Some(s) => {
            if s.beta_hat.len() != d.p() || s.sigma2_hat.len() != d.n() {
                return Err(Error::InvalidParameter("ECM start has wrong dimensions".into()));
            }
            s.clone()
        }
        None => ridge_start(d)?,
    };
    e_step(&mut state, hp);
    state.q_value = free_energy(&state, d, hp)?;
    let mut q_trace = vec![state.q_value];

    let mut converged = false;
    let mut iterations = 0;
    while iterations < init.max_iter {
        iterations += 1;
        let prev = state.q_value;
        state = cm_step(&state, d, hp)?;
        e_step(&mut state, hp);
        state.q_value = free_energy(&state, d, hp)?;
        q_trace.push(state.q_value);
        if !state.q_value.is_finite() {
            return Err(Error::Domain(format!(
                "ECM objective became non-finite at iteration {iterations}"
            )));
        }
        if (state.q_value - prev).abs() / (prev.abs() + 1.0) < init.rel_tol {
            converged = true;
            break;
        }
    }

    let selected: Vec<bool> = state.g.iter().map(|g| *g >= 0.5).collect();
    let reduced_indices = selected
        .iter()
        .enumerate()
        .filter_map(|(j, s)| s.then_some(j))
        .collect();
    Ok(EcmFit {
        final_state: state,
        iterations,
        converged,
        selected,
        reduced_indices,
        q_trace,
    })
}

/// Standardized-scale fitted values `Xβ̂`.
pub fn fitted(fit: &EcmFit, x_std: &ndarray::Array2<f64>) -> Array1<f64> {
    x_std.dot(&fit.final_state.beta_hat)
}
