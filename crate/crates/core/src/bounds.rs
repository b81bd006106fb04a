//! Closed-form constants and bounds for mild solutions with singular
//! coefficients: the growth constant Θ, the a priori bound, perturbation and
//! Lipschitz estimates, the integral bounds and the temporal Hölder bound.
//!
//! `+∞` is a legitimate value. Products go through [`ext_mul`] so that
//! `0 · ∞ = 0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{chi_constant, chi_unchecked, kappa_constant, DiagonalOperator};
use crate::special::{beta_unchecked, gen_exp};

/// Exponents and Lipschitz constants of the drift `F: H -> H_{-α}` and the
/// diffusion `B: H -> HS(U, H_{-β})`, plus the moment order and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularityProfile {
    pub alpha: f64,
    pub alpha_hat: f64,
    pub beta: f64,
    pub beta_hat: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
    #[serde(rename = "L0_hat")]
    pub l0_hat: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L1_hat")]
    pub l1_hat: f64,
    pub p: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl Default for SingularityProfile {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            alpha_hat: 0.0,
            beta: 0.0,
            beta_hat: 0.0,
            l0: 0.0,
            l0_hat: 0.0,
            l1: 0.0,
            l1_hat: 0.0,
            p: 2.0,
            horizon: 1.0,
        }
    }
}

impl SingularityProfile {
    pub fn validate(&self) -> Result<()> {
        let s = self;
        if !(0.0..1.0).contains(&s.alpha) {
            return invalid(format!("alpha must lie in [0,1), got {}", s.alpha));
        }
        if !(s.alpha_hat < 1.0) {
            return invalid(format!("alpha_hat must be < 1, got {}", s.alpha_hat));
        }
        if !(0.0..0.5).contains(&s.beta) {
            return invalid(format!("beta must lie in [0,1/2), got {}", s.beta));
        }
        if !(s.beta_hat < 0.5) {
            return invalid(format!("beta_hat must be < 1/2, got {}", s.beta_hat));
        }
        for (name, v) in [("L0", s.l0), ("L0_hat", s.l0_hat), ("L1", s.l1), ("L1_hat", s.l1_hat)] {
            if !(v >= 0.0) || !v.is_finite() {
                return invalid(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(s.p >= 2.0) || !s.p.is_finite() {
            return invalid(format!("p must be >= 2, got {}", s.p));
        }
        if !(s.horizon > 0.0) || !s.horizon.is_finite() {
            return invalid(format!("T must be positive, got {}", s.horizon));
        }
        if s.l1 > 0.0 && !(s.alpha + s.alpha_hat < 1.5) {
            return invalid("alpha + alpha_hat must be < 3/2 when L1 > 0");
        }
        Ok(())
    }

    fn has_noise_lipschitz(&self) -> bool {
        self.l1 > 0.0
    }

    /// `(1/2)(1 + 1_{0}(L1))`: 1 without Lipschitz noise, 1/2 otherwise.
    pub fn lambda_ceiling(&self) -> f64 {
        if self.has_noise_lipschitz() {
            0.5
        } else {
            1.0
        }
    }

    fn t_or_one(&self) -> f64 {
        self.horizon.max(1.0)
    }
}

/// Product on `[0, ∞]` with `0 · ∞ = 0`.
pub fn ext_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Θ^{α,β,λ}(L0, L1).
pub fn theta(profile: &SingularityProfile, op: &DiagonalOperator, lambda: f64) -> Result<f64> {
    profile.validate()?;
    let SingularityProfile {
        alpha,
        beta,
        l0,
        l1,
        p,
        horizon: t,
        ..
    } = *profile;
    let chi_a = chi_constant(op, alpha, t)?;
    if l1 > 0.0 && lambda < 0.5 {
        let chi_b = chi_constant(op, beta, t)?;
        let inner = chi_a * l0 * 2f64.sqrt() * t.powf(1.0 - alpha) / (1.0 - alpha).sqrt()
            + chi_b * l1 * (p * (p - 1.0) * t.powf(1.0 - 2.0 * beta)).sqrt();
        let e = gen_exp(2.0 * lambda, alpha.max(2.0 * beta), inner * inner)?;
        Ok(2f64.sqrt() * e.sqrt())
    } else if l1 == 0.0 {
        if lambda >= 1.0 {
            return Ok(f64::INFINITY);
        }
        gen_exp(lambda, alpha, chi_a * l0 * t.powf(1.0 - alpha))
    } else {
        Ok(f64::INFINITY)
    }
}

fn check_apriori_window(profile: &SingularityProfile, delta: f64, lambda: f64) -> Result<()> {
    let ceiling = profile.lambda_ceiling();
    if !(delta < ceiling) {
        return Err(Error::Window(format!("delta = {delta} must be < {ceiling}")));
    }
    let floor = delta
        .max(profile.alpha + profile.alpha_hat - 1.0)
        .max(profile.beta + profile.beta_hat - 0.5);
    if !(lambda >= floor && lambda < ceiling) {
        return Err(Error::Window(format!(
            "lambda = {lambda} must lie in [{floor}, {ceiling})"
        )));
    }
    Ok(())
}

/// Bound on `sup_{t∈(0,T]} t^λ ‖X_t‖_{L^p(H)}` for the mild solution.
pub fn apriori_bound(
    profile: &SingularityProfile,
    op: &DiagonalOperator,
    delta: f64,
    lambda: f64,
    xi_factor: f64,
) -> Result<f64> {
    profile.validate()?;
    check_apriori_window(profile, delta, lambda)?;
    if !(xi_factor >= 0.0) {
        return invalid(format!("xi_factor must be nonnegative, got {xi_factor}"));
    }
    let s = profile;
    let t = s.horizon;
    let chi_a = chi_constant(op, s.alpha, t)?;
    let chi_b = chi_constant(op, s.beta, t)?;
    let drift = if s.l0_hat == 0.0 {
        0.0
    } else {
        chi_a * s.l0_hat * beta_unchecked(1.0 - s.alpha, 1.0 - s.alpha_hat)
            / t.powf(s.alpha + s.alpha_hat - 1.0)
    };
    let noise = if s.l1_hat == 0.0 {
        0.0
    } else {
        chi_b
            * s.l1_hat
            * (s.p * (s.p - 1.0) * beta_unchecked(1.0 - 2.0 * s.beta, 1.0 - 2.0 * s.beta_hat)).sqrt()
            / (2f64.sqrt() * t.powf(s.beta + s.beta_hat - 0.5))
    };
    let bracket = xi_factor / t.powf(delta) + drift + noise;
    Ok(ext_mul(t.powf(lambda) * bracket, theta(profile, op, lambda)?))
}

/// Bound on `sup_t t^λ ‖X^1_t - X^2_t‖_{L^p(H)}` for two initial values.
pub fn initial_perturbation_bound(
    profile: &SingularityProfile,
    op: &DiagonalOperator,
    delta: f64,
    lambda: f64,
    x_minus_y_norm: f64,
) -> Result<f64> {
    profile.validate()?;
    let ceiling = profile.lambda_ceiling();
    if !(0.0..ceiling).contains(&delta) {
        return Err(Error::Window(format!("delta = {delta} must lie in [0, {ceiling})")));
    }
    if !(lambda >= delta && lambda < ceiling) {
        return Err(Error::Window(format!(
            "lambda = {lambda} must lie in [{delta}, {ceiling})"
        )));
    }
    if !(x_minus_y_norm >= 0.0) {
        return invalid("initial difference norm must be nonnegative");
    }
    let t = profile.horizon;
    let prefactor = chi_constant(op, delta, t)? * t.powf(lambda - delta) * x_minus_y_norm;
    Ok(ext_mul(prefactor, theta(profile, op, lambda)?))
}

/// Bound on `sup_t t^{max(λ,α̂)+α-1} ‖∫_0^t e^{(t-s)A} F(s, Y_s) ds‖` for an
/// input process with `sup_t t^λ ‖Y_t‖ <= K`.
pub fn drift_integral_bound(
    profile: &SingularityProfile,
    op: &DiagonalOperator,
    lambda: f64,
    k: f64,
) -> Result<f64> {
    profile.validate()?;
    if !(lambda < 1.0) {
        return Err(Error::Window(format!("lambda = {lambda} must be < 1")));
    }
    let s = profile;
    let amp = s.l0_hat + ext_mul(s.l0, k);
    if amp == 0.0 {
        return Ok(0.0);
    }
    Ok(amp
        * s.t_or_one().powf((lambda - s.alpha_hat).abs())
        * beta_unchecked(1.0 - s.alpha, 1.0 - lambda.max(s.alpha_hat))
        * chi_constant(op, s.alpha, s.horizon)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochBound {
    pub value: f64,
    /// Weight exponent of the bound, `ρ = max(λ + (β̂ - λ) 1_{0}(L1), β̂)`.
    pub rho: f64,
}

fn rho_of(profile: &SingularityProfile, lambda: f64) -> f64 {
    let shift = if profile.has_noise_lipschitz() {
        0.0
    } else {
        profile.beta_hat - lambda
    };
    (lambda + shift).max(profile.beta_hat)
}

/// Bound on `sup_t t^{ρ+β-1/2} ‖∫_0^t e^{(t-s)A} B(s, Y_s) dW_s‖_{L^p}`.
pub fn stoch_integral_bound(
    profile: &SingularityProfile,
    op: &DiagonalOperator,
    lambda: f64,
    k: f64,
) -> Result<StochBound> {
    profile.validate()?;
    let s = profile;
    if s.has_noise_lipschitz() && !(lambda < 0.5) {
        return Err(Error::Window(format!(
            "lambda = {lambda} must be < 1/2 when L1 > 0"
        )));
    }
    let rho = rho_of(s, lambda);
    let amp = s.l1_hat + ext_mul(s.l1, k);
    if amp == 0.0 {
        return Ok(StochBound { value: 0.0, rho });
    }
    let exponent = if s.has_noise_lipschitz() {
        (lambda - s.beta_hat).abs()
    } else {
        0.0
    };
    let value = (s.p * (s.p - 1.0) / 2.0 * beta_unchecked(1.0 - 2.0 * s.beta, 1.0 - 2.0 * rho))
        .sqrt()
        * s.t_or_one().powf(exponent)
        * chi_constant(op, s.beta, s.horizon)?
        * amp;
    Ok(StochBound { value, rho })
}

/// Inputs of [`temporal_holder_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderArgs {
    pub delta: f64,
    pub lambda: f64,
    pub varrho: f64,
    pub s: f64,
    pub t: f64,
    /// `‖ξ‖_{L^p(H_{-max(δ,0)})}`.
    pub xi_norm: f64,
    /// `sup_u u^λ ‖X_u‖_{L^p(H)}`.
    pub k: f64,
}

/// Bound on `‖X_s - X_t‖_{L^p(H)}` for `0 < s <= t <= T`.
pub fn temporal_holder_bound(
    profile: &SingularityProfile,
    op: &DiagonalOperator,
    args: HolderArgs,
) -> Result<f64> {
    profile.validate()?;
    let HolderArgs {
        delta,
        lambda,
        varrho,
        s,
        t,
        xi_norm,
        k,
    } = args;
    let pr = profile;
    check_apriori_window(pr, delta, lambda)?;
    let rmax = (1.0 - pr.alpha).min(0.5 - pr.beta);
    if !(0.0..rmax).contains(&varrho) {
        return Err(Error::Window(format!("varrho = {varrho} must lie in [0, {rmax})")));
    }
    if !(s > 0.0 && s <= t && t <= pr.horizon) {
        return Err(Error::Window(format!("need 0 < s <= t <= T, got s = {s}, t = {t}")));
    }
    if !(xi_norm >= 0.0 && k >= 0.0) {
        return invalid("xi_norm and K must be nonnegative");
    }
    let horizon = pr.horizon;
    let gap = t - s;
    let dplus = delta.max(0.0);
    let kap = kappa_constant(op, varrho, horizon)?;

    let initial = if xi_norm == 0.0 {
        0.0
    } else {
        kap * chi_unchecked(op, varrho + dplus, horizon) * xi_norm / s.powf(varrho + dplus)
    };

    let m = lambda.max(pr.alpha_hat);
    let drift_amp = pr.l0_hat + ext_mul(pr.l0, k);
    let drift = if drift_amp == 0.0 {
        0.0
    } else {
        let near = chi_constant(op, pr.alpha, horizon)? * gap.powf(1.0 - pr.alpha - varrho)
            / ((1.0 - pr.alpha) * s.powf(m).min(t.powf(m)));
        let far = kap
            * chi_unchecked(op, varrho + pr.alpha, horizon)
            * beta_unchecked(1.0 - pr.alpha - varrho, 1.0 - m)
            / s.powf(varrho + pr.alpha + m - 1.0);
        pr.t_or_one().powf((lambda - pr.alpha_hat).abs()) * drift_amp * (near + far)
    };

    let rho = rho_of(pr, lambda);
    let noise_amp = pr.l1_hat + ext_mul(pr.l1, k);
    let noise = if noise_amp == 0.0 {
        0.0
    } else {
        let exponent = if pr.has_noise_lipschitz() {
            (lambda - pr.beta_hat).abs()
        } else {
            0.0
        };
        let near = chi_constant(op, pr.beta, horizon)? * gap.powf(0.5 - pr.beta - varrho)
            / (s.powf(rho).min(t.powf(rho)) * (1.0 - 2.0 * pr.beta).sqrt());
        let far = kap
            * chi_unchecked(op, varrho + pr.beta, horizon)
            * beta_unchecked(1.0 - 2.0 * pr.beta - 2.0 * varrho, 1.0 - 2.0 * rho).sqrt()
            / s.powf(rho + varrho + pr.beta - 0.5);
        (pr.p * (pr.p - 1.0) / 2.0).sqrt() * pr.t_or_one().powf(exponent) * noise_amp * (near + far)
    };

    let total = initial + drift + noise;
    Ok(ext_mul(gap.powf(varrho), total))
}

/// Right-hand side of the perturbation estimate: `Θ(λ) · defect`.
pub fn perturbation_rhs(
    profile: &SingularityProfile,
    op: &DiagonalOperator,
    lambda: f64,
    defect: f64,
) -> Result<f64> {
    profile.validate()?;
    let ceiling = profile.lambda_ceiling();
    if !(lambda < ceiling) {
        return Err(Error::Window(format!("lambda = {lambda} must be < {ceiling}")));
    }
    if !(defect >= 0.0) {
        return invalid("defect must be nonnegative");
    }
    Ok(ext_mul(theta(profile, op, lambda)?, defect))
}

/// Which side of the inequality the empirical value is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `empirical <= theoretical + slack`.
    Upper,
    /// `theoretical <= empirical + slack`.
    Lower,
    /// `|empirical - theoretical| <= slack`.
    Within,
}

/// A theoretical value paired with a Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub kind: BoundKind,
    pub theoretical: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl BoundReport {
    pub fn new(
        name: impl Into<String>,
        kind: BoundKind,
        theoretical: f64,
        empirical: f64,
        stderr: f64,
        slack: f64,
    ) -> Self {
        let satisfied = match kind {
            BoundKind::Upper => empirical <= theoretical + slack,
            BoundKind::Lower => theoretical <= empirical + slack,
            BoundKind::Within => (empirical - theoretical).abs() <= slack,
        };
        let mut metadata = BTreeMap::new();
        metadata.insert("slack".to_string(), serde_json::json!(slack));
        if theoretical.is_infinite() && kind == BoundKind::Upper {
            metadata.insert("vacuous".to_string(), serde_json::Value::Bool(true));
        }
        Self {
            name: name.into(),
            kind,
            theoretical,
            empirical,
            stderr,
            slack,
            satisfied,
            metadata,
        }
    }

    /// A report for a computation that failed; never satisfied.
    pub fn failed(name: impl Into<String>, reason: &str) -> Self {
        let mut r = Self::new(name, BoundKind::Upper, f64::NAN, f64::NAN, f64::NAN, 0.0);
        r.satisfied = false;
        r.metadata
            .insert("error".to_string(), serde_json::Value::String(reason.to_string()));
        r
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn is_vacuous(&self) -> bool {
        self.metadata.contains_key("vacuous")
    }
}
