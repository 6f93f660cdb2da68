//! Densities and random variate generators in the parameterizations used by
//! the hierarchical model.
//!
//! * `GIG(λ, a, b)`: density `(a/b)^{λ/2} / (2K_λ(√(ab))) x^{λ−1} e^{−(ax + b/x)/2}`.
//! * `Hyperbolic(η, ρ²)`: density `e^{−√(η(η + ε²/ρ²))} / (2√(ηρ²) K₁(η))`.
//! * `Gamma(a, b)`: shape `a`, rate `b`.
//! * `InvGamma(a, b)`: shape `a`, scale `b`, density `bᵃ/Γ(a) x^{−a−1} e^{−b/x}`.
//! * `Beta(c, d)`, `N(μ, σ²)` (variance parameterization), Student-t.
//!
//! All samplers take any [`rand::Rng`]; reproducible streams come from
//! [`RngStream`].

use std::f64::consts::{LN_2, PI};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Open01, StandardNormal, StudentT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::special_fn::log_bessel_k;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Below this `√(ab)` the GIG is indistinguishable from its gamma or
/// inverse-gamma limit.
const GIG_OMEGA_FLOOR: f64 = 10.0 * f64::EPSILON;

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Streams with the same seed and different ids are statistically
/// independent, so parallel tasks can each own one without coordination.
/// Child streams are derived deterministically with [`RngStream::derive`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    core: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut core = ChaCha8Rng::seed_from_u64(seed);
        core.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            core,
        }
    }

    /// Stream whose id is derived from a stage name.
    pub fn named(seed: u64, name: &str) -> Self {
        Self::new(seed, fnv1a(name.as_bytes()))
    }

    /// Child stream for a numbered draw site (fold, task, observation...).
    /// Depends only on this stream's identity, not on how much of it has
    /// been consumed.
    pub fn derive(&self, index: u64) -> Self {
        Self::new(self.seed, splitmix64(self.stream_id ^ splitmix64(index)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.core.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.core.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

// ---------------------------------------------------------------------------
// Generalized inverse Gaussian
// ---------------------------------------------------------------------------

/// Parameters of `GIG(λ, a, b)`; `a` multiplies `x`, `b` multiplies `1/x`.
///
/// The two-sided case `a, b > 0` is the normal one. The boundary limits
/// `a = 0, λ < 0` (inverse gamma) and `b = 0, λ > 0` (gamma) are accepted
/// because a full conditional with no data degenerates to them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

impl GigParams {
    pub fn new(lambda: f64, a: f64, b: f64) -> Result<Self> {
        let ok = lambda.is_finite()
            && a.is_finite()
            && b.is_finite()
            && a >= 0.0
            && b >= 0.0
            && ((a > 0.0 && b > 0.0) || (a == 0.0 && b > 0.0 && lambda < 0.0)
                || (b == 0.0 && a > 0.0 && lambda > 0.0));
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "GIG(lambda={lambda}, a={a}, b={b})"
            )));
        }
        Ok(Self { lambda, a, b })
    }

    /// Log normalizing constant `log[(a/b)^{λ/2} / (2K_λ(√(ab)))]`.
    pub fn log_normalizer(&self) -> Result<f64> {
        if self.a == 0.0 {
            let shape = -self.lambda;
            let scale = 0.5 * self.b;
            return Ok(shape * scale.ln() - ln_gamma(shape));
        }
        if self.b == 0.0 {
            let rate = 0.5 * self.a;
            return Ok(self.lambda * rate.ln() - ln_gamma(self.lambda));
        }
        let omega = (self.a * self.b).sqrt();
        Ok(0.5 * self.lambda * (self.a.ln() - self.b.ln())
            - LN_2
            - log_bessel_k(self.lambda, omega)?)
    }
}

pub fn gig_logpdf(x: f64, p: &GigParams) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("GIG density needs x > 0, got {x}")));
    }
    Ok(p.log_normalizer()? + (p.lambda - 1.0) * x.ln() - 0.5 * (p.a * x + p.b / x))
}

/// Exact draw from `GIG(λ, a, b)`.
///
/// Uses the ratio-of-uniforms family of Hörmann and Leydold on the
/// standardized law `y^{λ−1} e^{−ω(y + 1/y)/2}` with `ω = √(ab)`, then
/// rescales by `√(b/a)`. Negative `λ` is handled through `1/Y ~ GIG(−λ)`.
pub fn gig_sample<R: Rng + ?Sized>(p: &GigParams, rng: &mut R) -> f64 {
    let GigParams { lambda, a, b } = *p;
    if a == 0.0 {
        return 1.0 / gamma_sample(-lambda, 0.5 * b, rng);
    }
    if b == 0.0 {
        return gamma_sample(lambda, 0.5 * a, rng);
    }
    let omega = (a * b).sqrt();
    if omega < GIG_OMEGA_FLOOR {
        if lambda > 0.0 {
            return gamma_sample(lambda, 0.5 * a, rng);
        }
        if lambda < 0.0 {
            return 1.0 / gamma_sample(-lambda, 0.5 * b, rng);
        }
    }
    let scale = (b / a).sqrt();
    let abs_lambda = lambda.abs();
    let y = if abs_lambda > 2.0 || omega > 3.0 {
        gig_rou_shifted(abs_lambda, omega, rng)
    } else if abs_lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        gig_rou_unshifted(abs_lambda, omega, rng)
    } else {
        gig_concave_hat(abs_lambda, omega, rng)
    };
    if lambda < 0.0 {
        scale / y
    } else {
        scale * y
    }
}

/// Mode of the standardized GIG density, `λ ≥ 0`.
fn gig_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        ((lambda - 1.0).hypot(omega) + (lambda - 1.0)) / omega
    } else {
        omega / ((1.0 - lambda).hypot(omega) + (1.0 - lambda))
    }
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// Ratio-of-uniforms with the mode shifted to the origin; bounding rectangle
/// from the roots of the cubic for `(x − m)√f(x)`.
fn gig_rou_shifted<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let log_half_density = |x: f64| t * x.ln() - s * (x + 1.0 / x);
    let nc = log_half_density(xm);

    let ca = -(2.0 * (lambda + 1.0) / omega + xm);
    let cb = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let cc = xm;
    let p = cb - ca * ca / 3.0;
    let q = 2.0 * ca * ca * ca / 27.0 - ca * cb / 3.0 + cc;
    let phi = (-q / (2.0 * (-p * p * p / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (phi / 3.0).cos() - ca / 3.0;
    let y2 = fak * (phi / 3.0 + 4.0 / 3.0 * PI).cos() - ca / 3.0;
    let u_plus = (y1 - xm) * (log_half_density(y1) - nc).exp();
    let u_minus = (y2 - xm) * (log_half_density(y2) - nc).exp();

    loop {
        let u = u_minus + open01(rng) * (u_plus - u_minus);
        let v = open01(rng);
        let x = u / v + xm;
        if x <= 0.0 {
            continue;
        }
        if v.ln() <= log_half_density(x) - nc {
            return x;
        }
    }
}

/// Ratio-of-uniforms without mode shift.
fn gig_rou_unshifted<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + (lambda + 1.0).hypot(omega)) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    loop {
        let u = um * open01(rng);
        let v = open01(rng);
        let x = u / v;
        if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// Rejection from a three-piece hat for `0 ≤ λ < 1` with small `ω`, where
/// the density is not T-concave.
fn gig_concave_hat<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = gig_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let two_over_omega = 2.0 / omega;

    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let a0 = k0 * x0;
    let (k1, a1, k2, a2) = if x0 >= two_over_omega {
        let k2 = x0.powf(lambda - 1.0);
        (0.0, 0.0, k2, k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega)
    } else {
        let k1 = (-omega).exp();
        let a1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * (two_over_omega.powf(lambda) - x0.powf(lambda))
        };
        let k2 = two_over_omega.powf(lambda - 1.0);
        (k1, a1, k2, k2 * 2.0 * (-1f64).exp() / omega)
    };
    let total = a0 + a1 + a2;

    loop {
        let mut v = total * open01(rng);
        let (x, hx) = if v <= a0 {
            (x0 * v / a0, k0)
        } else {
            v -= a0;
            if v <= a1 {
                if lambda == 0.0 {
                    let x = omega * (omega.exp() * v).exp();
                    (x, k1 / x)
                } else {
                    let x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    (x, k1 * x.powf(lambda - 1.0))
                }
            } else {
                v -= a1;
                let start = x0.max(two_over_omega);
                let x = -two_over_omega
                    * ((-omega / 2.0 * start).exp() - omega / (2.0 * k2) * v).ln();
                (x, k2 * (-omega / 2.0 * x).exp())
            }
        };
        let u = open01(rng) * hx;
        if u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return x;
        }
    }
}

// ---------------------------------------------------------------------------
// Hyperbolic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicParams {
    pub eta: f64,
    pub rho2: f64,
}

impl HyperbolicParams {
    pub fn new(eta: f64, rho2: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite() && rho2 > 0.0 && rho2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Hyperbolic(eta={eta}, rho2={rho2})"
            )));
        }
        Ok(Self { eta, rho2 })
    }

    pub fn log_normalizer(&self) -> Result<f64> {
        Ok(-(LN_2 + 0.5 * (self.eta * self.rho2).ln() + log_bessel_k(1.0, self.eta)?))
    }
}

pub fn hyperbolic_logpdf(eps: f64, p: &HyperbolicParams) -> Result<f64> {
    if !eps.is_finite() {
        return Err(Error::Domain(format!("hyperbolic density needs finite eps, got {eps}")));
    }
    Ok(p.log_normalizer()? - (p.eta * (p.eta + eps * eps / p.rho2)).sqrt())
}

/// Draw through the normal scale mixture: `a² ~ GIG(1, η, η)`, then
/// `N(0, ρ²a²)`.
pub fn hyperbolic_sample<R: Rng + ?Sized>(p: &HyperbolicParams, rng: &mut R) -> f64 {
    let mix = GigParams {
        lambda: 1.0,
        a: p.eta,
        b: p.eta,
    };
    let a2 = gig_sample(&mix, rng);
    (p.rho2 * a2).sqrt() * standard_normal(rng)
}

// ---------------------------------------------------------------------------
// Standard distributions
// ---------------------------------------------------------------------------

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_sample<R: Rng + ?Sized>(mu: f64, var: f64, rng: &mut R) -> f64 {
    mu + var.sqrt() * standard_normal(rng)
}

pub fn normal_logpdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn student_t_sample<R: Rng + ?Sized>(df: f64, rng: &mut R) -> Result<f64> {
    let dist = StudentT::new(df)
        .map_err(|e| Error::InvalidParameter(format!("Student-t df={df}: {e}")))?;
    Ok(dist.sample(rng))
}

/// Gamma with shape and *rate*. Callers validate the parameters.
fn gamma_sample<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters validated by caller")
        .sample(rng)
}

fn check_positive(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name}{values:?}")))
    }
}

pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `InvGamma(shape, scale)`.
pub fn inv_gamma_sample<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    check_positive("InvGamma", &[shape, scale])?;
    Ok(1.0 / gamma_sample(shape, scale, rng))
}

pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn beta_sample<R: Rng + ?Sized>(c: f64, d: f64, rng: &mut R) -> Result<f64> {
    check_positive("Beta", &[c, d])?;
    let dist = Beta::new(c, d).map_err(|e| Error::InvalidParameter(format!("Beta: {e}")))?;
    Ok(dist.sample(rng))
}

pub fn beta_logpdf(x: f64, c: f64, d: f64) -> f64 {
    ln_gamma(c + d) - ln_gamma(c) - ln_gamma(d) + (c - 1.0) * x.ln() + (d - 1.0) * (1.0 - x).ln()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index drawn with probability proportional to `exp(log_weights[k])`.
pub fn categorical_sample<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let lse = log_sum_exp(log_weights);
    if log_weights.is_empty() || !lse.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "categorical log-weights must contain a finite entry: {log_weights:?}"
        )));
    }
    if log_weights.len() == 1 {
        return Ok(0);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in log_weights.iter().enumerate() {
        acc += (w - lse).exp();
        if u < acc {
            return Ok(k);
        }
    }
    // Rounding left the cumulative sum a hair below one.
    Ok(log_weights
        .iter()
        .rposition(|w| w.is_finite())
        .expect("at least one finite weight"))
}
