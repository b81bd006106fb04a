//! Library results against independently computed reference values.

use seesim::engine::{simulate_ensemble_with, Recording, SimOptions, TimeGrid};
use seesim::estimators::estimate_moment;
use seesim::models::presets::{anderson, gbm, smooth_initial, UNIT_TORUS_NU};
use seesim::models::{hs_weight_sum, make_rough_initial};
use seesim::special::{beta_function, gen_exp};
use seesim::spectral::{chi_constant, kappa_constant, make_periodic_laplacian, DiagonalOperator};
use statrs::function::beta::{beta as statrs_beta, ln_beta};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn beta_matches_statrs() {
    for &x in &[0.05, 0.3, 0.5, 1.0, 2.5, 7.0, 31.0] {
        for &y in &[0.1, 0.5, 0.7, 1.0, 3.0, 12.0] {
            let ours = beta_function(x, y).unwrap();
            let theirs = statrs_beta(x, y);
            assert!(rel(ours, theirs) < 1e-12, "B({x},{y}) = {ours} vs {theirs}");
        }
    }
}

/// Plain series with Kahan summation and log-space terms.
fn gen_exp_brute(a: f64, b: f64, x: f64) -> f64 {
    let c = 1.0 - b;
    let (mut sum, mut comp) = (1.0f64, 0.0f64);
    let mut log_term = 0.0;
    for n in 1..200_000 {
        log_term += x.ln() + ln_beta(c, (n - 1) as f64 * c + 1.0 - a);
        let term = log_term.exp();
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if n > 5 && term < 1e-18 * sum {
            break;
        }
    }
    sum
}

#[test]
fn gen_exp_matches_brute_force_series() {
    for &(a, b) in &[(0.0, 0.0), (0.25, 0.5), (0.5, 0.25), (0.6, 0.6), (-0.5, 0.3)] {
        for &x in &[0.1, 1.0, 2.5, 5.0] {
            let ours = gen_exp(a, b, x).unwrap();
            let brute = gen_exp_brute(a, b, x);
            assert!(brute.is_finite(), "E_({a},{b})[{x}] overflows");
            assert!(rel(ours, brute) < 1e-10, "E_({a},{b})[{x}] = {ours} vs {brute}");
        }
    }
    assert!(rel(gen_exp(0.0, 0.0, 3.0).unwrap(), 3f64.exp()) < 1e-12);
}

fn brute_sup(op: &DiagonalOperator, horizon: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = 100_000;
    let (lo, hi) = ((horizon * 1e-9).ln(), horizon.ln());
    let mut best = 0.0f64;
    for &lam in op.eigenvalues() {
        for i in 0..=n {
            let t = (lo + (hi - lo) * i as f64 / n as f64).exp();
            best = best.max(f(lam, t));
        }
    }
    best
}

#[test]
fn chi_and_kappa_match_grid_search() {
    let op = DiagonalOperator::explicit(vec![0, 1, 2, 3], vec![-0.3, 0.0, 2.0, 40.0], 1.5).unwrap();
    let eta = op.eta();
    for &r in &[0.0, 0.25, 0.5, 1.0] {
        let chi = chi_constant(&op, r, 1.0).unwrap();
        let brute = brute_sup(&op, 1.0, |lam, t| (t * (eta + lam)).powf(r) * (-lam * t).exp());
        assert!(rel(chi, brute) < 1e-6, "chi^{r}: {chi} vs {brute}");
        if r > 0.0 {
            let kappa = kappa_constant(&op, r, 1.0).unwrap();
            let brute = brute_sup(&op, 1.0, |lam, t| {
                (-lam * t).exp_m1().abs() / (t * (eta + lam)).powf(r)
            });
            assert!(rel(kappa, brute) < 1e-6, "kappa^{r}: {kappa} vs {brute}");
        }
    }
}

#[test]
fn hilbert_schmidt_sum_matches_transform() {
    // B(1) b_k = b_k for the Anderson model, so the HS norm is the weight sum
    let m = anderson(12, UNIT_TORUS_NU, 1.0, smooth_initial(12)).unwrap();
    let one: Vec<f64> = m.operator().modes().iter().map(|&k| if k == 0 { 1.0 } else { 0.0 }).collect();
    let hs = m.hilbert_schmidt_sq(&one, 0.3);
    assert!(rel(hs, hs_weight_sum(m.operator(), 0.3)) < 1e-12);
}

#[test]
fn rough_initial_norm_is_a_partial_sum() {
    let op = make_periodic_laplacian(50, 1.0, 1.0).unwrap();
    let xi = make_rough_initial(&op, 0.5);
    let direct: f64 = 1.0 + 2.0 * (1..=50).map(|n| n as f64 / (1.0 + (n * n) as f64)).sum::<f64>();
    let ours = seesim::spectral::hr_norm(&xi, &op, -0.5).unwrap().powi(2);
    assert!(rel(ours, direct) < 1e-13);
}

#[test]
fn gbm_second_moment() {
    // the exponential Euler chain has E X_n² = (1 + ℓ²dt)^n e^{-2λ t_n}
    let m = gbm(1.0, 0.5).unwrap();
    let steps = 64;
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let opts = SimOptions {
        recording: Recording::None,
        norm_indices: vec![0.0],
        ..Default::default()
    };
    let ens = simulate_ensemble_with(&m, &grid, 20_000, 11, &opts).unwrap();
    let e = estimate_moment(&ens, steps, 2.0, 0.0).unwrap();
    let discrete = (1.0 + 0.25 / steps as f64).powi(steps as i32) * (-2.0f64).exp();
    assert!((e.value - discrete).abs() < 4.0 * e.stderr, "{} ± {} vs {discrete}", e.value, e.stderr);
}
