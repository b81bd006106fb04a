//! Monte Carlo statistics over path ensembles.
//!
//! Standard errors use the delta method on the empirical `p`-th moment. For
//! `p = 2` powers and roots go through `x * x` and `sqrt`, which commute
//! exactly with scaling by powers of two.

use serde::Serialize;

use crate::engine::PathEnsemble;
use crate::error::{invalid, Error, Result};
use crate::models::ModelSpec;
use crate::spectral::{hr_norm_raw, hr_norm_sq_raw, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedSup {
    pub value: f64,
    pub stderr: f64,
    pub node: usize,
    pub t: f64,
}

#[inline]
fn pow_p(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v * v
    } else {
        v.powf(p)
    }
}

#[inline]
fn root_p(m: f64, p: f64) -> f64 {
    if p == 2.0 {
        m.sqrt()
    } else {
        m.powf(1.0 / p)
    }
}

/// Mean and standard error of a sample.
pub fn mean_stderr(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Estimate { value: mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Estimate {
        value: mean,
        stderr: (var / n).sqrt(),
    }
}

/// `(mean v^p)^{1/p}` with a delta-method standard error.
pub fn lp_from_norms(norms: &[f64], p: f64) -> Result<Estimate> {
    if norms.is_empty() {
        return invalid("empty ensemble");
    }
    let powered: Vec<f64> = norms.iter().map(|&v| pow_p(v, p)).collect();
    let m = mean_stderr(&powered);
    let value = root_p(m.value, p);
    let stderr = if m.value > 0.0 {
        value / (p * m.value) * m.stderr
    } else {
        0.0
    };
    Ok(Estimate { value, stderr })
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 2.0) || !p.is_finite() {
        return invalid(format!("moment order must be finite and >= 2, got {p}"));
    }
    Ok(())
}

/// `‖X_t‖_{H_r}` for every path at grid node `node`.
pub fn node_norms(ens: &PathEnsemble, node: usize, r: f64) -> Result<Vec<f64>> {
    if node > ens.grid().steps() {
        return Err(Error::OutOfRange(format!("node {node} outside grid")));
    }
    if node == 0 && r > -ens.delta() {
        return Err(Error::OutOfRange(format!(
            "the initial value only lies in H_{{-{}}}; no H_{r} statistics at t = 0",
            ens.delta()
        )));
    }
    if ens.has_field(node) {
        (0..ens.paths())
            .map(|i| Ok(hr_norm_raw(ens.operator(), ens.field(i, node)?, r)))
            .collect()
    } else {
        ens.stored_norms(node, r)
            .ok_or_else(|| Error::OutOfRange(format!("node {node}, index {r} not recorded")))
    }
}

/// `(E ‖X_t‖^p_{H_r})^{1/p}`.
pub fn estimate_lp_norm(ens: &PathEnsemble, node: usize, p: f64, r: f64) -> Result<Estimate> {
    check_p(p)?;
    lp_from_norms(&node_norms(ens, node, r)?, p)
}

/// `E ‖X_t‖^q_{H_r}` with its standard error.
pub fn estimate_moment(ens: &PathEnsemble, node: usize, q: f64, r: f64) -> Result<Estimate> {
    let v: Vec<f64> = node_norms(ens, node, r)?
        .into_iter()
        .map(|x| pow_p(x, q))
        .collect();
    Ok(mean_stderr(&v))
}

/// Nodes with `t > 0` that carry statistics for index `r`.
fn positive_nodes(ens: &PathEnsemble, r: f64) -> Vec<usize> {
    let all = ens.norm_indices().contains(&r);
    (1..=ens.grid().steps())
        .filter(|&k| all || ens.has_field(k))
        .collect()
}

/// `max_{t_m > 0} t_m^λ ‖X_{t_m}‖_{L^p(H_r)}`.
pub fn weighted_sup(ens: &PathEnsemble, lambda: f64, p: f64, r: f64) -> Result<WeightedSup> {
    check_p(p)?;
    let nodes = positive_nodes(ens, r);
    if nodes.is_empty() {
        return Err(Error::OutOfRange("no positive grid node recorded".into()));
    }
    let mut best = WeightedSup {
        value: f64::NEG_INFINITY,
        stderr: 0.0,
        node: 0,
        t: 0.0,
    };
    for k in nodes {
        let t = ens.grid().nodes()[k];
        let w = t.powf(lambda);
        let e = estimate_lp_norm(ens, k, p, r)?;
        if w * e.value > best.value {
            best = WeightedSup {
                value: w * e.value,
                stderr: w * e.stderr,
                node: k,
                t,
            };
        }
    }
    Ok(best)
}

/// `t^λ ‖X_t‖_{L^p(H_r)}` at every positive node, as `(t, estimate)`.
pub fn weighted_profile(
    ens: &PathEnsemble,
    lambda: f64,
    p: f64,
    r: f64,
) -> Result<Vec<(f64, Estimate)>> {
    check_p(p)?;
    positive_nodes(ens, r)
        .into_iter()
        .map(|k| {
            let t = ens.grid().nodes()[k];
            let w = t.powf(lambda);
            let e = estimate_lp_norm(ens, k, p, r)?;
            Ok((
                t,
                Estimate {
                    value: w * e.value,
                    stderr: w * e.stderr,
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IsometryCheck {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// `∫_0^h e^{-a(h-u)} ℓ(u) du` for the linear interpolant `ℓ` of `(g0, g1)`.
fn product_trapezoid(a: f64, h: f64, g0: f64, g1: f64) -> f64 {
    let x = a * h;
    // φ0 = (1 - e^{-x})/x, φ1 = (x - 1 + e^{-x})/x²
    let (phi0, phi1) = if x < 1e-3 {
        (
            1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0,
            0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0,
        )
    } else {
        let em = (-x).exp_m1();
        (-em / x, (x + em) / (x * x))
    };
    h * (g0 * (phi0 - phi1) + g1 * phi1)
}

/// Both sides of `E‖X_t‖²_{H_{-r}} = ‖e^{tA}ξ‖²_{H_{-r}} + ∫_0^t Σ_b (η+λ_b)^{-2r}
/// e^{-2λ_b(t-s)} E G_b(X_s) ds` with `G_b` the diffusion energy.
///
/// The time integral is a product trapezoid rule: the path mean of `G_b` is
/// interpolated linearly between nodes and integrated against the exact
/// exponential kernel.
pub fn ito_isometry_residual(
    model: &ModelSpec,
    ens: &PathEnsemble,
    node: usize,
    r: f64,
) -> Result<IsometryCheck> {
    if !model.has_zero_drift() || !model.has_linear_diffusion() {
        return Err(Error::WrongModel(format!(
            "isometry needs zero drift and linear diffusion, got {}/{}",
            model.drift_kind(),
            model.diffusion_kind()
        )));
    }
    let energy = ens
        .energy()
        .ok_or_else(|| Error::InvalidParameter("ensemble simulated without energy".into()))?;
    if node == 0 || node > ens.grid().steps() {
        return Err(Error::OutOfRange(format!("isometry node {node}")));
    }
    let op = ens.operator();
    let n = op.len();
    let nodes = ens.grid().nodes();
    let t = nodes[node];
    let lhs = estimate_moment(ens, node, 2.0, -r)?;
    let w = op.power_weights(-2.0 * r);
    let xi = model.initial().coeffs();
    let mut rhs = 0.0;
    for b in 0..n {
        let lam = op.eigenvalues()[b];
        let mut acc = (-2.0 * lam * t).exp() * xi[b] * xi[b];
        for m in 0..node {
            let h = nodes[m + 1] - nodes[m];
            let tail = (-2.0 * lam * (t - nodes[m + 1])).exp();
            acc += tail
                * product_trapezoid(2.0 * lam, h, energy[m * n + b], energy[(m + 1) * n + b]);
        }
        rhs += w[b] * acc;
    }
    let residual = if lhs.value > 0.0 {
        (lhs.value - rhs).abs() / lhs.value
    } else if rhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(IsometryCheck {
        lhs: lhs.value,
        lhs_stderr: lhs.stderr,
        rhs,
        residual,
    })
}

/// `‖x − y‖_{H_{-δ}}`.
fn difference_norm(x: &SpectralField, y: &SpectralField, ens: &PathEnsemble, delta: f64) -> f64 {
    let d: Vec<f64> = x.coeffs().iter().zip(y.coeffs()).map(|(a, b)| a - b).collect();
    hr_norm_sq_raw(ens.operator(), &d, -delta).sqrt()
}

fn check_coupled(a: &PathEnsemble, b: &PathEnsemble) -> Result<()> {
    if a.seed() != b.seed() || a.first_path() != b.first_path() {
        return invalid("ensembles are not coupled: different noise");
    }
    if a.paths() != b.paths() || a.grid() != b.grid() || a.operator().modes() != b.operator().modes() {
        return Err(Error::ModeMismatch("ensembles differ in paths, grid or modes".into()));
    }
    Ok(())
}

/// `sup_{t>0} t^δ ‖X^x_t − X^y_t‖_{L^p(H)} / ‖x − y‖_{H_{-δ}}` on coupled paths.
pub fn lipschitz_ratio(
    ens_x: &PathEnsemble,
    ens_y: &PathEnsemble,
    x: &SpectralField,
    y: &SpectralField,
    delta: f64,
    p: f64,
) -> Result<WeightedSup> {
    check_p(p)?;
    check_coupled(ens_x, ens_y)?;
    x.check(ens_x.operator())?;
    y.check(ens_x.operator())?;
    if x.coeffs() == y.coeffs() {
        return invalid("initial values coincide");
    }
    let denom = difference_norm(x, y, ens_x, delta);
    let mut best = WeightedSup {
        value: f64::NEG_INFINITY,
        stderr: 0.0,
        node: 0,
        t: 0.0,
    };
    for k in 1..=ens_x.grid().steps() {
        if !(ens_x.has_field(k) && ens_y.has_field(k)) {
            continue;
        }
        let e = coupled_difference(ens_x, ens_y, k, k, p)?;
        let t = ens_x.grid().nodes()[k];
        let w = t.powf(delta);
        let v = w * e.value / denom;
        if v > best.value {
            best = WeightedSup {
                value: v,
                stderr: w * e.stderr / denom,
                node: k,
                t,
            };
        }
    }
    if best.node == 0 {
        return Err(Error::OutOfRange("no positive node recorded in both ensembles".into()));
    }
    Ok(best)
}

/// `‖X_s − Y_t‖_{L^p(H)}` pathwise over two ensembles (possibly the same).
fn coupled_difference(
    a: &PathEnsemble,
    b: &PathEnsemble,
    s: usize,
    t: usize,
    p: f64,
) -> Result<Estimate> {
    let norms = (0..a.paths())
        .map(|i| {
            let u = a.field(i, s)?;
            let v = b.field(i, t)?;
            let d: f64 = u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum();
            Ok(d.sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    lp_from_norms(&norms, p)
}

/// `‖X_s − X_t‖_{L^p(H)}` for recorded nodes `s <= t`.
pub fn holder_increment(ens: &PathEnsemble, s: usize, t: usize, p: f64) -> Result<Estimate> {
    check_p(p)?;
    if s > t {
        return invalid(format!("holder increment needs s <= t, got {s} > {t}"));
    }
    if !ens.has_field(s) || !ens.has_field(t) {
        return Err(Error::OutOfRange(format!("nodes {s}, {t} not both recorded")));
    }
    coupled_difference(ens, ens, s, t, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate_ensemble, simulate_ensemble_with, SimOptions, TimeGrid};
    use crate::models::presets;
    use crate::models::{DiffusionSpec, DriftSpec, InitialSpec, ProfileSpec};
    use crate::spectral::{hr_norm, make_periodic_laplacian, semigroup_apply};

    fn deterministic(pairs: Vec<(i64, f64)>) -> ModelSpec {
        let op = make_periodic_laplacian(3, 1.0, 1.0).unwrap();
        ModelSpec::new(
            "det",
            op,
            DriftSpec::Zero,
            DiffusionSpec::Zero,
            ProfileSpec::default(),
            InitialSpec::Modes { pairs },
            None,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_ensemble_norms() {
        let m = deterministic(vec![(1, 2.0), (-2, 1.0)]);
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let ens = simulate_ensemble(&m, &g, 5, 3).unwrap();
        let e = estimate_lp_norm(&ens, 4, 3.0, -0.5).unwrap();
        let x = semigroup_apply(m.operator(), g.nodes()[4], m.initial()).unwrap();
        let direct = hr_norm(&x, m.operator(), -0.5).unwrap();
        assert!((e.value - direct).abs() < 1e-14 * direct);
        assert_eq!(e.stderr, 0.0);
        assert!(estimate_lp_norm(&ens, 0, 2.0, 0.5).is_err());
        assert!(estimate_lp_norm(&ens, 0, 2.0, 0.0).is_ok());
    }

    #[test]
    fn weighted_sup_matches_calculus() {
        // t^λ e^{-t}, maximum at t = λ
        let m = deterministic(vec![(1, 1.0)]);
        let g = TimeGrid::uniform(1.0, 2000).unwrap();
        let ens = simulate_ensemble(&m, &g, 1, 0).unwrap();
        let lam = 0.4;
        let s = weighted_sup(&ens, lam, 2.0, 0.0).unwrap();
        let exact = lam.powf(lam) * (-lam).exp();
        assert!((s.value - exact).abs() < 1e-3 * exact);
        assert!((s.t - lam).abs() < 1e-3);
    }

    #[test]
    fn isometry_exact_without_noise() {
        let op = make_periodic_laplacian(3, 1.0, 1.0).unwrap();
        let m = ModelSpec::new(
            "z",
            op,
            DriftSpec::Zero,
            DiffusionSpec::NormDiffusion { w: vec![(0, 0.0)] },
            ProfileSpec::default(),
            InitialSpec::Rough { gamma: 0.0, scale: 1.0 },
            None,
        )
        .unwrap();
        let g = TimeGrid::uniform(1.0, 16).unwrap();
        let opts = SimOptions { energy: true, ..Default::default() };
        let ens = simulate_ensemble_with(&m, &g, 4, 1, &opts).unwrap();
        let c = ito_isometry_residual(&m, &ens, 8, 0.5).unwrap();
        assert!(c.residual < 1e-14, "{c:?}");
    }

    #[test]
    fn product_trapezoid_limits() {
        let h = 0.1;
        assert!((product_trapezoid(0.0, h, 1.0, 3.0) - 0.2).abs() < 1e-15);
        for a in [1e-4, 0.5, 10.0, 500.0] {
            // constant integrand
            let exact = -(-a * h).exp_m1() / a;
            assert!((product_trapezoid(a, h, 2.0, 2.0) - 2.0 * exact).abs() < 1e-14 * exact.max(1.0));
        }
        // series branch against the closed form just below the switch
        let x: f64 = 0.9e-3;
        let em = (-x).exp_m1();
        let closed = h * ((-em / x - (x + em) / (x * x)) + 2.0 * (x + em) / (x * x));
        assert!((product_trapezoid(x / h, h, 1.0, 2.0) - closed).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_rejects_equal_inputs() {
        let m = presets::anderson(3, 1.0, 1.0, presets::smooth_initial(3)).unwrap();
        let g = TimeGrid::uniform(0.1, 4).unwrap();
        let a = simulate_ensemble(&m, &g, 2, 5).unwrap();
        let x = m.initial();
        assert!(lipschitz_ratio(&a, &a, x, x, 0.1, 2.0).is_err());
    }

    #[test]
    fn holder_increment_closed_form() {
        let m = deterministic(vec![(0, 1.0), (2, 1.0), (-3, 0.5)]);
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let ens = simulate_ensemble(&m, &g, 2, 0).unwrap();
        assert_eq!(holder_increment(&ens, 3, 3, 2.0).unwrap().value, 0.0);
        let (s, t) = (g.nodes()[2], g.nodes()[7]);
        let exact: f64 = m
            .initial()
            .coeffs()
            .iter()
            .zip(m.operator().eigenvalues())
            .map(|(c, &l)| (c * ((-l * s).exp() - (-l * t).exp())).powi(2))
            .sum::<f64>()
            .sqrt();
        let e = holder_increment(&ens, 2, 7, 2.0).unwrap();
        assert!((e.value - exact).abs() < 1e-13);
        assert!(holder_increment(&ens, 7, 2, 2.0).is_err());
    }
}
