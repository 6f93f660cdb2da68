mod common;

use common::*;
use gecm_hem::data::Dataset;
use gecm_hem::distributions::*;
use gecm_hem::ecm::HyperParams;
use gecm_hem::gibbs::*;
use gecm_hem::special_fn::log_bessel_k;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, InverseGamma};

const PAIRS: usize = 100;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(1.0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
    let x = Array2::from_shape_fn((n, p), |_| normal(rng));
    let y = Array1::from_shape_fn(n, |i| if p > 0 { x[(i, 0)] } else { 0.0 } + normal(rng));
    Dataset::unnamed(y, x).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, d: &Dataset, hp: &HyperParams) -> GibbsState {
    let gamma: Vec<bool> = (0..d.p()).map(|_| rng.random_bool(0.5)).collect();
    let beta = Array1::from_shape_fn(d.p(), |j| if gamma[j] { 2.0 * normal(rng) } else { 0.0 });
    GibbsState {
        gamma,
        beta,
        sigma2: Array1::from_shape_fn(d.n(), |_| rng.random_range(0.1..5.0)),
        rho2: rng.random_range(0.1..5.0),
        tau2: rng.random_range(0.1..5.0),
        theta: rng.random_range(0.02..0.98),
        eta: hp.eta_grid[rng.random_range(0..hp.eta_grid.len())],
    }
}

/// Runs `check(state, proposal)` on random pairs that differ only in the
/// block changed by `perturb`.
fn for_random_pairs(
    seed: u64,
    perturb: impl Fn(&mut GibbsState, &mut ChaCha8Rng, &HyperParams),
    check: impl Fn(&GibbsState, &GibbsState, &Dataset, &HyperParams) -> f64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hp = HyperParams::default();
    for k in 0..PAIRS {
        let n = rng.random_range(2..15);
        let p = rng.random_range(0..6);
        let d = random_data(&mut rng, n, p);
        let s = random_state(&mut rng, &d, &hp);
        let mut t = s.clone();
        perturb(&mut t, &mut rng, &hp);
        let implemented = check(&s, &t, &d, &hp);
        let joint = log_joint(&t, &d, &hp) - log_joint(&s, &d, &hp);
        assert!(close(joint, implemented), "pair {k}: joint {joint} vs conditional {implemented}");
    }
}

#[test]
fn sigma2_conditional_ratio() {
    for_random_pairs(
        1,
        |t, rng, _| t.sigma2.iter_mut().for_each(|s| *s = rng.random_range(0.05..8.0)),
        |s, t, d, _| {
            let r = residuals(s, d);
            (0..d.n())
                .map(|i| {
                    let c = sigma2_conditional(s, r[i]).unwrap();
                    gig_logpdf(t.sigma2[i], &c).unwrap() - gig_logpdf(s.sigma2[i], &c).unwrap()
                })
                .sum()
        },
    );
}

#[test]
fn rho2_conditional_ratio() {
    for_random_pairs(
        2,
        |t, rng, _| t.rho2 = rng.random_range(0.05..8.0),
        |s, t, _, hp| {
            let c = rho2_conditional(s, hp).unwrap();
            gig_logpdf(t.rho2, &c).unwrap() - gig_logpdf(s.rho2, &c).unwrap()
        },
    );
}

#[test]
fn tau2_conditional_ratio() {
    for_random_pairs(
        3,
        |t, rng, _| t.tau2 = rng.random_range(0.05..8.0),
        |s, t, _, hp| {
            let (shape, scale) = tau2_conditional(s, hp);
            inv_gamma_logpdf(t.tau2, shape, scale) - inv_gamma_logpdf(s.tau2, shape, scale)
        },
    );
}

#[test]
fn theta_conditional_ratio() {
    for_random_pairs(
        4,
        |t, rng, _| t.theta = rng.random_range(0.01..0.99),
        |s, t, _, hp| {
            let (c, d) = theta_conditional(s, hp);
            beta_logpdf(t.theta, c, d) - beta_logpdf(s.theta, c, d)
        },
    );
}

#[test]
fn eta_conditional_ratio() {
    for_random_pairs(
        5,
        |t, rng, hp| t.eta = hp.eta_grid[rng.random_range(0..hp.eta_grid.len())],
        |s, t, _, hp| {
            let w = eta_log_weights(s, hp).unwrap();
            let at = |eta: f64| w[hp.eta_grid.iter().position(|g| *g == eta).unwrap()];
            at(t.eta) - at(s.eta)
        },
    );
}

fn dense_marginal(gamma: &[bool], s: &GibbsState, d: &Dataset) -> f64 {
    let n = d.n();
    let v = s.rho2 * s.tau2;
    let active = active_indices(gamma);
    let c = Array2::from_shape_fn((n, n), |(i, k)| {
        let xx: f64 = active.iter().map(|j| d.x[(i, *j)] * d.x[(k, *j)]).sum();
        v * xx + if i == k { s.sigma2[i] } else { 0.0 }
    });
    ln_dense_gaussian(&d.y, &c)
}

#[test]
fn marginal_likelihood_matches_dense_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hp = HyperParams::default();
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let p = rng.random_range(0..=3);
        let x = Array2::from_shape_fn((n, p), |_| normal(&mut rng));
        let y = Array1::from_shape_fn(n, |_| 3.0 * normal(&mut rng));
        let d = Dataset {
            y,
            x,
            column_names: (0..p).map(|j| format!("x{j}")).collect(),
        };
        let s = random_state(&mut rng, &d, &hp);
        let got = log_marginal_y(&s.gamma, &s.sigma2, s.rho2, s.tau2, &d).unwrap();
        let want = dense_marginal(&s.gamma, &s, &d);
        assert!(close(want, got), "n={n} gamma={:?}: {got} vs {want}", s.gamma);
    }
}

#[test]
fn flip_ratio_matches_dense_posterior_odds() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hp = HyperParams::default();
    for _ in 0..100 {
        let d = random_data(&mut rng, 7, 3);
        let s = random_state(&mut rng, &d, &hp);
        let j = rng.random_range(0..3);
        let mut flipped = s.gamma.clone();
        flipped[j] = !flipped[j];
        let prior = if flipped[j] {
            (s.theta / (1.0 - s.theta)).ln()
        } else {
            ((1.0 - s.theta) / s.theta).ln()
        };
        let want = dense_marginal(&flipped, &s, &d) - dense_marginal(&s.gamma, &s, &d) + prior;
        let mut cache = ModelEvidenceCache::new(&d, &s.sigma2, s.rho2, s.tau2);
        let got = flip_log_ratio(&mut cache, &s.gamma, j, s.theta).unwrap();
        assert!(close(want, got), "{got} vs {want}");
    }
}

/// Batch-means standard error of a correlated series.
fn batch_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = x.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    mean_and_se(&means).1
}

#[test]
fn duplicated_columns_are_exchangeable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 30;
    let col = Array1::from_shape_fn(n, |_| normal(&mut rng));
    let x = Array2::from_shape_fn((n, 2), |(i, _)| col[i]);
    let y = Array1::from_shape_fn(n, |i| 0.4 * col[i] + normal(&mut rng));
    let d = Dataset::unnamed(y, x).unwrap();
    let hp = HyperParams::default();
    let mut state = initial_state(&d, &hp, &GibbsInit::default()).unwrap();
    let mut stream = RngStream::new(9, 0);
    let sweeps = 100_000;
    let mut diff = Vec::with_capacity(sweeps);
    let mut incl = [0.0; 2];
    for _ in 0..sweeps {
        gibbs_iteration(&mut state, &d, &hp, &mut stream).unwrap();
        let (a, b) = (state.gamma[0] as u8 as f64, state.gamma[1] as u8 as f64);
        incl[0] += a;
        incl[1] += b;
        diff.push(a - b);
    }
    let mean_diff = diff.iter().sum::<f64>() / sweeps as f64;
    let se = batch_se(&diff, 100);
    eprintln!("inclusion frequencies {:?}, diff {mean_diff} (se {se})", incl.map(|c| c / sweeps as f64));
    assert!(mean_diff.abs() < 3.0 * se, "diff {mean_diff}, se {se}");
}

#[test]
fn certain_prior_fills_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = random_data(&mut rng, 20, 5);
    let hp = HyperParams::default();
    let mut state = random_state(&mut rng, &d, &hp);
    state.gamma = vec![false; 5];
    state.beta = Array1::zeros(5);
    state.theta = 1.0 - 1e-12;
    let mut stream = RngStream::new(10, 0);
    for _ in 0..3 {
        update_gamma_mh(&mut state, &d, &mut stream).unwrap();
    }
    assert!(state.gamma.iter().all(|g| *g));
}

#[test]
fn coefficients_vanish_off_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = random_data(&mut rng, 25, 8);
    let hp = HyperParams::default();
    let mut state = initial_state(&d, &hp, &GibbsInit::default()).unwrap();
    let mut stream = RngStream::new(11, 0);
    for _ in 0..300 {
        gibbs_iteration(&mut state, &d, &hp, &mut stream).unwrap();
        for (g, b) in state.gamma.iter().zip(state.beta.iter()) {
            assert!(*g || *b == 0.0);
        }
    }
}

fn zero_residual_state(n: usize, rho2: f64, eta: f64, residual: f64) -> (GibbsState, Dataset) {
    let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 7) as f64 - 3.0);
    let y = x.column(0).mapv(|v| 1.5 * v + residual);
    let d = Dataset::unnamed(y, x).unwrap();
    let state = GibbsState {
        gamma: vec![true],
        beta: ndarray::array![1.5],
        sigma2: Array1::ones(n),
        rho2,
        tau2: 1.0,
        theta: 0.5,
        eta,
    };
    (state, d)
}

#[test]
fn zero_residual_sigma2_mean_is_two() {
    // GIG(1/2, 1, 1): K_{3/2}(1)/K_{1/2}(1) = 1 + 1/1 = 2
    let (mut state, d) = zero_residual_state(10_000, 1.0, 1.0, 0.0);
    assert!(residuals(&state, &d).iter().all(|r| *r == 0.0));
    let mut rng = RngStream::new(12, 0);
    let mut draws = Vec::with_capacity(1_000_000);
    for _ in 0..100 {
        update_sigma2(&mut state, &d, &mut rng).unwrap();
        draws.extend(state.sigma2.iter().copied());
    }
    let (m, se) = mean_and_se(&draws);
    assert!((m - 2.0).abs() < 3.0 * se, "{m} (se {se})");
}

#[test]
fn sigma2_draws_scale_with_rho2() {
    let c: f64 = 3.7;
    let (mut a, da) = zero_residual_state(10_000, 0.8, 0.5, 0.6);
    let (mut b, db) = zero_residual_state(10_000, 0.8 * c, 0.5, 0.6 * c.sqrt());
    update_sigma2(&mut a, &da, &mut RngStream::new(13, 0)).unwrap();
    update_sigma2(&mut b, &db, &mut RngStream::new(14, 0)).unwrap();
    let scaled: Vec<f64> = b.sigma2.iter().map(|v| v / c).collect();
    let ks = ks_two_sample(a.sigma2.as_slice().unwrap(), &scaled);
    // 1% critical value for two samples of 10⁴
    assert!(ks < 1.63 * (2.0f64 / 10_000.0).sqrt(), "KS = {ks}");
}

#[test]
fn rho2_without_data_is_the_prior() {
    let hp = HyperParams::default();
    let mut state = GibbsState {
        gamma: vec![],
        beta: Array1::zeros(0),
        sigma2: Array1::zeros(0),
        rho2: 1.0,
        tau2: 1.0,
        theta: 0.5,
        eta: 1.0,
    };
    let mut rng = RngStream::new(15, 0);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            update_rho2(&mut state, &hp, &mut rng).unwrap();
            state.rho2
        })
        .collect();
    let prior = InverseGamma::new(hp.a_rho, hp.b_rho).unwrap();
    let ks = ks_statistic(&draws, |x| prior.cdf(x));
    assert!(ks < 0.01, "KS = {ks}");
}

#[test]
fn rho2_small_state_histogram() {
    let hp = HyperParams::default();
    let mut state = GibbsState {
        gamma: vec![true, false],
        beta: ndarray::array![0.7, 0.0],
        sigma2: ndarray::array![0.6, 1.9],
        rho2: 1.0,
        tau2: 0.8,
        theta: 0.5,
        eta: 2.0,
    };
    let inv: f64 = state.sigma2.iter().map(|s| 1.0 / s).sum();
    let (lambda, a, b) = (
        -(2.0 + 0.5 + hp.a_rho),
        2.0 * inv,
        2.0 * state.sigma2.sum() + 0.49 / 0.8 + 2.0 * hp.b_rho,
    );
    let mut rng = RngStream::new(16, 0);
    let mut draw = |k: usize| -> Vec<f64> {
        (0..k)
            .map(|_| {
                update_rho2(&mut state, &hp, &mut rng).unwrap();
                state.rho2
            })
            .collect()
    };
    let draws = draw(100_000);
    let pilot = draw(20_000);
    let pv = chi_square_continuous(&draws, &pilot, |x| ln_gig(x, lambda, a, b).exp(), 40);
    assert!(pv > 0.001, "p = {pv}");
}

#[test]
fn two_point_eta_grid() {
    let hp = HyperParams {
        eta_grid: vec![0.05, 50.0],
        ..HyperParams::default()
    };
    let state = GibbsState {
        gamma: vec![],
        beta: Array1::zeros(0),
        sigma2: Array1::ones(100),
        rho2: 1.0,
        tau2: 1.0,
        theta: 0.5,
        eta: 0.05,
    };
    let w = eta_log_weights(&state, &hp).unwrap();
    let oracle = |eta: f64| -100.0 * log_bessel_k(1.0, eta).unwrap() - 100.0 * eta;
    assert!(close(w[1] - w[0], oracle(50.0) - oracle(0.05)));
    let p_small = 1.0 / (1.0 + (w[1] - w[0]).exp());
    assert!(p_small < 1e-6, "P(eta = 0.05) = {p_small}");
    let mut s = state.clone();
    let mut rng = RngStream::new(17, 0);
    for _ in 0..1000 {
        update_eta(&mut s, &hp, &mut rng).unwrap();
        assert_eq!(s.eta, 50.0);
    }
}

#[test]
fn strong_single_signal_is_always_included() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let n = 50;
    let x = Array2::from_shape_fn((n, 1), |_| normal(&mut rng));
    let noise = HyperbolicParams::new(0.5, 2.0).unwrap();
    let mut e_rng = RngStream::new(18, 1);
    let y = Array1::from_shape_fn(n, |i| 2.0 * x[(i, 0)] + hyperbolic_sample(&noise, &mut e_rng));
    let (d, _) = gecm_hem::data::standardize(&Dataset::unnamed(y, x).unwrap()).unwrap();
    let hp = HyperParams::default();
    let schedule = GibbsSchedule {
        iters: 3000,
        burnin: 500,
        thin: 1,
    };
    let draws = run_gibbs(&d, &hp, &GibbsInit::default(), schedule, &mut RngStream::new(19, 0)).unwrap();
    let pip = draws.draws.iter().filter(|s| s.gamma[0]).count() as f64 / draws.len() as f64;
    assert!(pip > 0.99, "PIP = {pip}");

    // Two-model enumeration at posterior draws of the scale parameters.
    let mut state = initial_state(&d, &hp, &GibbsInit::default()).unwrap();
    let mut stream = RngStream::new(20, 0);
    let mut odds = Vec::new();
    for t in 0..500 {
        gibbs_iteration(&mut state, &d, &hp, &mut stream).unwrap();
        if t >= 100 {
            let with = log_marginal_y(&[true], &state.sigma2, state.rho2, state.tau2, &d).unwrap();
            let without = log_marginal_y(&[false], &state.sigma2, state.rho2, state.tau2, &d).unwrap();
            odds.push(with - without + (state.theta / (1.0 - state.theta)).ln());
        }
    }
    let exact_pip = odds.iter().map(|o| 1.0 / (1.0 + (-o).exp())).sum::<f64>() / odds.len() as f64;
    assert!(exact_pip > 0.99, "enumerated PIP = {exact_pip}");
}
