//! Oracles shared by the integration suites. Nothing here calls the code
//! under test except the Bessel function, which has its own reference suite.

#![allow(dead_code)]

use gecm_hem::data::Dataset;
use gecm_hem::ecm::HyperParams;
use gecm_hem::gibbs::GibbsState;
use gecm_hem::special_fn::log_bessel_k;
use ndarray::{Array1, Array2};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

// ---------------------------------------------------------------------------
// Densities written out from their formulas
// ---------------------------------------------------------------------------

pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// `(a/b)^{λ/2} / (2K_λ(√(ab))) x^{λ−1} exp(−(ax + b/x)/2)`.
pub fn ln_gig(x: f64, lambda: f64, a: f64, b: f64) -> f64 {
    0.5 * lambda * (a / b).ln() - std::f64::consts::LN_2 - log_bessel_k(lambda, (a * b).sqrt()).unwrap()
        + (lambda - 1.0) * x.ln()
        - 0.5 * (a * x + b / x)
}

pub fn ln_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn ln_beta_density(x: f64, c: f64, d: f64) -> f64 {
    ln_gamma(c + d) - ln_gamma(c) - ln_gamma(d) + (c - 1.0) * x.ln() + (d - 1.0) * (1.0 - x).ln()
}

pub fn hyperbolic_density(eps: f64, eta: f64, rho2: f64) -> f64 {
    let norm = 2.0 * (eta * rho2).sqrt() * log_bessel_k(1.0, eta).unwrap().exp();
    (-(eta * (eta + eps * eps / rho2)).sqrt()).exp() / norm
}

/// Log joint density of data and parameters under the sampling-step
/// hierarchy, one factor at a time.
pub fn log_joint(s: &GibbsState, d: &Dataset, hp: &HyperParams) -> f64 {
    let mut lp = 0.0;
    let fitted = d.x.dot(&s.beta);
    for i in 0..d.n() {
        lp += ln_normal(d.y[i], fitted[i], s.sigma2[i]);
        lp += ln_gig(s.sigma2[i], 1.0, s.eta / s.rho2, s.eta * s.rho2);
    }
    for (j, g) in s.gamma.iter().enumerate() {
        if *g {
            lp += ln_normal(s.beta[j], 0.0, s.rho2 * s.tau2);
            lp += s.theta.ln();
        } else {
            assert_eq!(s.beta[j], 0.0);
            lp += (1.0 - s.theta).ln();
        }
    }
    lp += ln_beta_density(s.theta, hp.c_theta, hp.d_theta);
    lp += ln_inv_gamma(s.rho2, hp.a_rho, hp.b_rho);
    lp += ln_inv_gamma(s.tau2, hp.lambda_tau / 2.0, hp.lambda_tau / 2.0);
    assert!(hp.eta_grid.contains(&s.eta));
    lp -= (hp.eta_grid.len() as f64).ln();
    lp
}

// ---------------------------------------------------------------------------
// Dense linear algebra by Gaussian elimination
// ---------------------------------------------------------------------------

/// `log N(y; 0, C)` for a dense covariance, via LU with partial pivoting.
pub fn ln_dense_gaussian(y: &Array1<f64>, c: &Array2<f64>) -> f64 {
    let n = y.len();
    let mut a = c.clone();
    let mut b = y.clone();
    let mut log_det = 0.0;
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
            .unwrap();
        if piv != k {
            for col in 0..n {
                a.swap((k, col), (piv, col));
            }
            b.swap(k, piv);
        }
        log_det += a[(k, k)].abs().ln();
        for i in k + 1..n {
            let f = a[(i, k)] / a[(k, k)];
            for col in k..n {
                a[(i, col)] -= f * a[(k, col)];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[(i, k)] * x[k]).sum();
        x[i] = (b[i] - s) / a[(i, i)];
    }
    let quad: f64 = y.iter().zip(x.iter()).map(|(u, v)| u * v).sum();
    -0.5 * (n as f64 * LN_2PI + log_det + quad)
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Composite 8-point Gauss-Legendre over `[a, b]` with `pieces` panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * h;
            GL_NODES
                .iter()
                .zip(GL_WEIGHTS.iter())
                .map(|(x, w)| w * f(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Goodness of fit
// ---------------------------------------------------------------------------

/// Pearson χ² p-value for observed counts against expected counts, merging
/// adjacent cells until every expected count is at least 5.
pub fn chi_square_p_value(observed: &[f64], expected: &[f64]) -> f64 {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += o_acc;
        last.1 += e_acc;
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (cells.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// χ² test of continuous draws against a density. Interior bin edges come
/// from the 0.5%..99.5% range of an independent pilot sample; the two tail
/// cells take the remaining mass.
pub fn chi_square_continuous(draws: &[f64], pilot: &[f64], density: impl Fn(f64) -> f64, bins: usize) -> f64 {
    let mut sorted = pilot.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[(0.005 * sorted.len() as f64) as usize];
    let hi = sorted[(0.995 * sorted.len() as f64) as usize];
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();

    let m = draws.len() as f64;
    let mut probs: Vec<f64> = edges
        .windows(2)
        .map(|w| integrate(&density, w[0], w[1], 16))
        .collect();
    let inner: f64 = probs.iter().sum();
    // lower tail then upper tail: split the leftover mass by integrating the
    // lower tail directly when the support allows it
    let lower_tail = lower_tail_mass(&density, lo);
    let upper_tail = (1.0 - inner - lower_tail).max(0.0);
    probs.insert(0, lower_tail);
    probs.push(upper_tail);

    let mut observed = vec![0.0; bins + 2];
    for &x in draws {
        let idx = if x < lo {
            0
        } else if x >= hi {
            bins + 1
        } else {
            1 + (((x - lo) / width) as usize).min(bins - 1)
        };
        observed[idx] += 1.0;
    }
    let expected: Vec<f64> = probs.iter().map(|p| p * m).collect();
    chi_square_p_value(&observed, &expected)
}

/// Mass below `lo`, integrating on a log-spaced grid towards 0 for positive
/// support and on an expanding grid towards −∞ otherwise.
fn lower_tail_mass(density: &impl Fn(f64) -> f64, lo: f64) -> f64 {
    if lo > 0.0 {
        // positive support assumed when the pilot never goes negative
        let mut total = 0.0;
        let mut b = lo;
        for _ in 0..200 {
            let a = b / 2.0;
            total += integrate(density, a, b, 8);
            b = a;
            if b < 1e-300 {
                break;
            }
        }
        total
    } else {
        let mut total = 0.0;
        let mut b = lo;
        let mut step = lo.abs().max(1.0);
        for _ in 0..200 {
            let a = b - step;
            let piece = integrate(density, a, b, 8);
            total += piece;
            b = a;
            step *= 1.5;
            if piece < 1e-16 * total.max(1e-300) {
                break;
            }
        }
        total
    }
}

/// Two-sided KS statistic of draws against a CDF.
pub fn ks_statistic(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = draws.to_vec();
    x.sort_by(f64::total_cmp);
    let m = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let f = cdf(*v);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// KS statistic of symmetric draws against the quadrature CDF of a density
/// symmetric about zero. The CDF is accumulated along the sorted `|x|`.
pub fn ks_symmetric(draws: &[f64], density: impl Fn(f64) -> f64) -> f64 {
    let mut abs: Vec<f64> = draws.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    abs.dedup();
    let mut half_cdf = Vec::with_capacity(abs.len());
    let (mut prev, mut acc) = (0.0, 0.0);
    for &a in &abs {
        acc += integrate(&density, prev, a, 1);
        half_cdf.push(acc);
        prev = a;
    }
    let cdf = |x: f64| {
        let k = abs.partition_point(|v| *v < x.abs());
        let h = half_cdf[k.min(half_cdf.len() - 1)];
        if x >= 0.0 {
            0.5 + h
        } else {
            0.5 - h
        }
    };
    ks_statistic(draws, cdf)
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Central-difference derivative of `f` at `x` relative to the derivative
/// one percent of the scale away on either side. Near zero at a stationary
/// point; order one elsewhere.
pub fn stationarity_ratio(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let scale = x.abs() + 0.1;
    let h = 1e-4 * scale;
    let d = |t: f64| (f(t + h) - f(t - h)) / (2.0 * h);
    let delta = 1e-2 * scale;
    let reference = 0.5 * (d(x + delta).abs() + d(x - delta).abs());
    d(x).abs() / reference
}
