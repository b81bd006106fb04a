//! Diagonal generators, fields in the interpolation spaces `H_r`, and the
//! smoothing constants χ and κ.
//!
//! The generator acts as `-λ_b` on mode `b`; `(η - A)^r` acts as
//! `(η + λ_b)^r`. All quantities are per-mode, so every operator here is a
//! coefficient-wise map.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How an operator was built. Kept so it can be written back to JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    PeriodicLaplacian { n: usize },
    Explicit,
}

/// Diagonal generator over a finite, ordered mode set.
#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    kind: OperatorKind,
    modes: Arc<[i64]>,
    eigenvalues: Vec<f64>,
    eta: f64,
    nu: Option<f64>,
    index: HashMap<i64, usize>,
}

/// Canonical ordering of the periodic modes: 0, 1, -1, 2, -2, ...
pub fn periodic_mode_order(n: usize) -> Vec<i64> {
    let mut modes = Vec::with_capacity(2 * n + 1);
    modes.push(0);
    for m in 1..=n as i64 {
        modes.push(m);
        modes.push(-m);
    }
    modes
}

/// Position of a mode in [`periodic_mode_order`]. Also the noise slot of the
/// mode, which makes Brownian increments independent of the truncation.
pub fn canonical_slot(mode: i64) -> u64 {
    match mode {
        0 => 0,
        m if m > 0 => 2 * m as u64 - 1,
        m => 2 * m.unsigned_abs(),
    }
}

impl DiagonalOperator {
    /// Operator with explicit modes and eigenvalues.
    pub fn explicit(modes: Vec<i64>, eigenvalues: Vec<f64>, eta: f64) -> Result<Self> {
        Self::build(OperatorKind::Explicit, modes, eigenvalues, eta, None)
    }

    fn build(
        kind: OperatorKind,
        modes: Vec<i64>,
        eigenvalues: Vec<f64>,
        eta: f64,
        nu: Option<f64>,
    ) -> Result<Self> {
        if modes.is_empty() {
            return invalid("mode set is empty");
        }
        if modes.len() != eigenvalues.len() {
            return invalid(format!(
                "{} modes but {} eigenvalues",
                modes.len(),
                eigenvalues.len()
            ));
        }
        if !eta.is_finite() {
            return invalid("eta must be finite");
        }
        let mut index = HashMap::with_capacity(modes.len());
        for (i, &m) in modes.iter().enumerate() {
            if index.insert(m, i).is_some() {
                return invalid(format!("duplicate mode {m}"));
            }
        }
        for (&m, &lam) in modes.iter().zip(&eigenvalues) {
            if !lam.is_finite() || eta + lam <= 0.0 {
                return invalid(format!("eta + lambda must be positive (mode {m}, lambda {lam})"));
            }
        }
        Ok(Self {
            kind,
            modes: modes.into(),
            eigenvalues,
            eta,
            nu,
            index,
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn modes(&self) -> &[i64] {
        &self.modes
    }

    pub(crate) fn mode_set(&self) -> &Arc<[i64]> {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn nu(&self) -> Option<f64> {
        self.nu
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn index_of(&self, mode: i64) -> Option<usize> {
        self.index.get(&mode).copied()
    }

    pub fn eigenvalue(&self, mode: i64) -> Option<f64> {
        self.index_of(mode).map(|i| self.eigenvalues[i])
    }

    pub fn max_abs_mode(&self) -> u64 {
        self.modes.iter().map(|m| m.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when the modes are exactly `{-N..N}` and `λ_n = λ_{-n}`.
    pub fn is_symmetric_full(&self) -> bool {
        let n = self.max_abs_mode() as i64;
        if self.len() as i64 != 2 * n + 1 {
            return false;
        }
        (0..=n).all(|m| match (self.eigenvalue(m), self.eigenvalue(-m)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        })
    }

    /// `(η + λ_b)^r` for every mode.
    pub fn power_weights(&self, r: f64) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&lam| (self.eta + lam).powf(r))
            .collect()
    }

    pub fn to_spec(&self) -> OperatorSpec {
        match self.kind {
            OperatorKind::PeriodicLaplacian { n } => OperatorSpec::PeriodicLaplacian {
                n,
                nu: self.nu.unwrap_or(1.0),
                eta: self.eta,
            },
            OperatorKind::Explicit => OperatorSpec::Explicit {
                n: Some(self.len()),
                eta: self.eta,
                eigenvalues: self.eigenvalues.clone(),
                modes: Some(self.modes.to_vec()),
                nu: self.nu,
            },
        }
    }
}

/// `λ_n = ν n²` on `{-N..N}`.
pub fn make_periodic_laplacian(n: usize, nu: f64, eta: f64) -> Result<DiagonalOperator> {
    if n == 0 {
        return invalid("periodic Laplacian needs N >= 1");
    }
    if !(nu > 0.0) || !(eta > 0.0) {
        return invalid("nu and eta must be positive");
    }
    let modes = periodic_mode_order(n);
    let eigenvalues = modes.iter().map(|&m| nu * (m * m) as f64).collect();
    DiagonalOperator::build(
        OperatorKind::PeriodicLaplacian { n },
        modes,
        eigenvalues,
        eta,
        Some(nu),
    )
}

/// JSON form of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    PeriodicLaplacian {
        #[serde(rename = "N")]
        n: usize,
        nu: f64,
        eta: f64,
    },
    Explicit {
        #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        eta: f64,
        eigenvalues: Vec<f64>,
        /// Defaults to `1..=len`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modes: Option<Vec<i64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nu: Option<f64>,
    },
}

impl OperatorSpec {
    pub fn build(&self) -> Result<DiagonalOperator> {
        match self {
            OperatorSpec::PeriodicLaplacian { n, nu, eta } => make_periodic_laplacian(*n, *nu, *eta),
            OperatorSpec::Explicit {
                n,
                eta,
                eigenvalues,
                modes,
                nu,
            } => {
                if let Some(n) = n {
                    if *n != eigenvalues.len() {
                        return invalid(format!(
                            "N = {n} but {} eigenvalues given",
                            eigenvalues.len()
                        ));
                    }
                }
                let modes = modes
                    .clone()
                    .unwrap_or_else(|| (1..=eigenvalues.len() as i64).collect());
                let mut op = DiagonalOperator::explicit(modes, eigenvalues.clone(), *eta)?;
                op.nu = *nu;
                Ok(op)
            }
        }
    }
}

/// Truncated element of `H_r`, indexed by an operator's modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    modes: Arc<[i64]>,
    coeffs: Vec<f64>,
    space_index: f64,
}

impl SpectralField {
    pub fn zeros(op: &DiagonalOperator, space_index: f64) -> Self {
        Self {
            modes: op.mode_set().clone(),
            coeffs: vec![0.0; op.len()],
            space_index,
        }
    }

    pub fn from_coeffs(op: &DiagonalOperator, coeffs: Vec<f64>, space_index: f64) -> Result<Self> {
        if coeffs.len() != op.len() {
            return Err(Error::ModeMismatch(format!(
                "{} coefficients for {} modes",
                coeffs.len(),
                op.len()
            )));
        }
        Ok(Self {
            modes: op.mode_set().clone(),
            coeffs,
            space_index,
        })
    }

    /// Field with the given `(mode, coefficient)` pairs and zeros elsewhere.
    pub fn from_pairs(op: &DiagonalOperator, pairs: &[(i64, f64)], space_index: f64) -> Result<Self> {
        let mut v = Self::zeros(op, space_index);
        for &(m, c) in pairs {
            let i = op
                .index_of(m)
                .ok_or_else(|| Error::ModeMismatch(format!("mode {m} not in operator")))?;
            v.coeffs[i] = c;
        }
        Ok(v)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn modes(&self) -> &[i64] {
        &self.modes
    }

    pub fn space_index(&self) -> f64 {
        self.space_index
    }

    pub fn with_space_index(mut self, r: f64) -> Self {
        self.space_index = r;
        self
    }

    pub fn coeff(&self, mode: i64) -> Option<f64> {
        self.modes.iter().position(|&m| m == mode).map(|i| self.coeffs[i])
    }

    pub(crate) fn check(&self, op: &DiagonalOperator) -> Result<()> {
        if Arc::ptr_eq(&self.modes, op.mode_set()) || *self.modes == **op.mode_set() {
            Ok(())
        } else {
            Err(Error::ModeMismatch(
                "field is not indexed by the operator's modes".into(),
            ))
        }
    }
}

/// `‖v‖_{H_r}`.
pub fn hr_norm(v: &SpectralField, op: &DiagonalOperator, r: f64) -> Result<f64> {
    v.check(op)?;
    Ok(hr_norm_raw(op, v.coeffs(), r))
}

pub(crate) fn hr_norm_raw(op: &DiagonalOperator, coeffs: &[f64], r: f64) -> f64 {
    hr_norm_sq_raw(op, coeffs, r).sqrt()
}

pub(crate) fn hr_norm_sq_raw(op: &DiagonalOperator, coeffs: &[f64], r: f64) -> f64 {
    if r == 0.0 {
        return coeffs.iter().map(|c| c * c).sum();
    }
    op.eigenvalues
        .iter()
        .zip(coeffs)
        .map(|(&lam, &c)| {
            let w = (op.eta + lam).powf(r) * c;
            w * w
        })
        .sum()
}

/// `e^{tA} v`.
pub fn semigroup_apply(op: &DiagonalOperator, t: f64, v: &SpectralField) -> Result<SpectralField> {
    if !(t >= 0.0) {
        return invalid(format!("semigroup time must be nonnegative, got {t}"));
    }
    v.check(op)?;
    let mut out = v.clone();
    for (c, &lam) in out.coeffs.iter_mut().zip(&op.eigenvalues) {
        *c *= (-lam * t).exp();
    }
    Ok(out)
}

/// `(η - A)^r v`; the result lives in `H_{s-r}`.
pub fn fractional_power_apply(
    op: &DiagonalOperator,
    r: f64,
    v: &SpectralField,
) -> Result<SpectralField> {
    v.check(op)?;
    let mut out = v.clone();
    for (c, &lam) in out.coeffs.iter_mut().zip(&op.eigenvalues) {
        *c *= (op.eta + lam).powf(r);
    }
    out.space_index -= r;
    Ok(out)
}

/// Zero every coefficient outside `subset`.
pub fn galerkin_project(
    op: &DiagonalOperator,
    v: &SpectralField,
    subset: &[i64],
) -> Result<SpectralField> {
    v.check(op)?;
    let mut keep = vec![false; op.len()];
    for &m in subset {
        let i = op
            .index_of(m)
            .ok_or_else(|| Error::ModeMismatch(format!("mode {m} not in operator")))?;
        keep[i] = true;
    }
    let mut out = v.clone();
    for (c, k) in out.coeffs.iter_mut().zip(keep) {
        if !k {
            *c = 0.0;
        }
    }
    Ok(out)
}

fn check_unit(name: &str, r: f64, horizon: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return invalid(format!("{name} exponent must lie in [0,1], got {r}"));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return invalid(format!("horizon must be positive, got {horizon}"));
    }
    Ok(())
}

/// χ^{r,T} = sup_b sup_{t∈(0,T]} t^r (η+λ_b)^r e^{-λ_b t}.
pub fn chi_constant(op: &DiagonalOperator, r: f64, horizon: f64) -> Result<f64> {
    check_unit("chi", r, horizon)?;
    Ok(chi_unchecked(op, r, horizon))
}

/// χ for any `r >= 0`. The closed form does not need `r <= 1`.
pub(crate) fn chi_unchecked(op: &DiagonalOperator, r: f64, horizon: f64) -> f64 {
    op.eigenvalues
        .iter()
        .map(|&lam| chi_mode(lam, op.eta, r, horizon))
        .fold(0.0, f64::max)
}

pub(crate) fn chi_mode(lam: f64, eta: f64, r: f64, horizon: f64) -> f64 {
    if r == 0.0 {
        // never attained when λ > 0: the value 1 is the t -> 0 limit
        return if lam >= 0.0 { 1.0 } else { (-lam * horizon).exp() };
    }
    let t = if lam > 0.0 { (r / lam).min(horizon) } else { horizon };
    (t * (eta + lam)).powf(r) * (-lam * t).exp()
}

/// κ^{s,T} = sup_b sup_{t∈(0,T]} t^{-s} (η+λ_b)^{-s} |e^{-λ_b t} - 1|.
pub fn kappa_constant(op: &DiagonalOperator, s: f64, horizon: f64) -> Result<f64> {
    check_unit("kappa", s, horizon)?;
    Ok(op
        .eigenvalues
        .iter()
        .map(|&lam| kappa_mode(lam, op.eta, s, horizon))
        .fold(0.0, f64::max))
}

pub(crate) fn kappa_mode(lam: f64, eta: f64, s: f64, horizon: f64) -> f64 {
    let base = eta + lam;
    if lam == 0.0 {
        return 0.0;
    }
    if lam < 0.0 {
        // (e^{|λ|t} - 1) t^{-s} is increasing for s <= 1
        return (-lam * horizon).exp_m1() / (horizon * base).powf(s);
    }
    if s == 1.0 {
        return lam / base;
    }
    let t = if s == 0.0 {
        horizon
    } else {
        (stationary_u(s) / lam).min(horizon)
    };
    -(-lam * t).exp_m1() / (t * base).powf(s)
}

/// Root `u > 0` of `u / (e^u - 1) = s` for `s ∈ (0,1)`; `(1 - e^{-u}) u^{-s}`
/// increases before it and decreases after.
fn stationary_u(s: f64) -> f64 {
    let g = |u: f64| u / u.exp_m1() - s;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid == 0.0 || g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lam: f64, eta: f64) -> DiagonalOperator {
        DiagonalOperator::explicit(vec![1], vec![lam], eta).unwrap()
    }

    #[test]
    fn periodic_laplacian_eigenvalues() {
        let op = make_periodic_laplacian(1, 1.0, 1.0).unwrap();
        assert_eq!(op.modes(), &[0, 1, -1]);
        assert_eq!(op.eigenvalues(), &[0.0, 1.0, 1.0]);
        let op = make_periodic_laplacian(2, 4.0 * std::f64::consts::PI.powi(2), 1.0).unwrap();
        assert!((op.eigenvalue(-2).unwrap() - 157.913_670_417_429_7).abs() < 1e-9);
        assert!(make_periodic_laplacian(0, 1.0, 1.0).is_err());
        assert!(make_periodic_laplacian(3, 0.0, 1.0).is_err());
        assert!(make_periodic_laplacian(3, 1.0, -1.0).is_err());
    }

    #[test]
    fn operator_invariants() {
        assert!(DiagonalOperator::explicit(vec![], vec![], 1.0).is_err());
        assert!(DiagonalOperator::explicit(vec![1, 1], vec![0.0, 0.0], 1.0).is_err());
        assert!(DiagonalOperator::explicit(vec![1], vec![-2.0], 1.0).is_err());
        assert!(DiagonalOperator::explicit(vec![1], vec![-0.5], 1.0).is_ok());
    }

    #[test]
    fn slots_follow_canonical_order() {
        let modes = periodic_mode_order(5);
        for (i, &m) in modes.iter().enumerate() {
            assert_eq!(canonical_slot(m), i as u64);
        }
    }

    #[test]
    fn norms() {
        let op = make_periodic_laplacian(1, 1.0, 1.0).unwrap();
        let e0 = SpectralField::from_pairs(&op, &[(0, 1.0)], 0.0).unwrap();
        assert_eq!(hr_norm(&e0, &op, -0.5).unwrap(), 1.0);
        let ones = SpectralField::from_coeffs(&op, vec![1.0; 3], 0.0).unwrap();
        assert!((hr_norm(&ones, &op, 0.0).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!((hr_norm(&ones, &op, 0.5).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        let other = make_periodic_laplacian(2, 1.0, 1.0).unwrap();
        assert!(hr_norm(&ones, &other, 0.0).is_err());
    }

    #[test]
    fn semigroup_examples() {
        let op = single(1.0, 1.0);
        let v = SpectralField::from_coeffs(&op, vec![1.0], 0.0).unwrap();
        assert_eq!(semigroup_apply(&op, 0.0, &v).unwrap(), v);
        let w = semigroup_apply(&op, 1.0, &v).unwrap();
        assert!((w.coeffs()[0] - (-1f64).exp()).abs() < 1e-16);
        assert!(semigroup_apply(&op, -1.0, &v).is_err());
        let lap = make_periodic_laplacian(2, 1.0, 1.0).unwrap();
        let v = SpectralField::from_pairs(&lap, &[(2, 1.0)], 0.0).unwrap();
        let w = semigroup_apply(&lap, 0.5, &v).unwrap();
        assert_eq!(w.coeff(2).unwrap(), (-2f64).exp());
    }

    #[test]
    fn fractional_power_examples() {
        let op = single(1.0, 2.0);
        let v = SpectralField::from_coeffs(&op, vec![1.0], 0.0).unwrap();
        assert_eq!(fractional_power_apply(&op, 0.0, &v).unwrap().coeffs(), v.coeffs());
        let w = fractional_power_apply(&op, 1.0, &v).unwrap();
        assert_eq!(w.coeffs()[0], 3.0);
        assert_eq!(w.space_index(), -1.0);
        let lap = make_periodic_laplacian(3, 1.0, 1.0).unwrap();
        let v = SpectralField::from_pairs(&lap, &[(3, 1.0)], 0.0).unwrap();
        let w = fractional_power_apply(&lap, -0.5, &v).unwrap();
        assert!((w.coeff(3).unwrap() - 10f64.powf(-0.5)).abs() < 1e-16);
    }

    #[test]
    fn chi_examples() {
        let lap = make_periodic_laplacian(4, 1.0, 1.0).unwrap();
        assert_eq!(chi_constant(&lap, 0.0, 3.0).unwrap(), 1.0);
        let v = chi_constant(&single(1.0, 2.0), 1.0, 1.0).unwrap();
        assert!((v - 3.0 * (-1f64).exp()).abs() < 1e-14);
        let v = chi_constant(&single(2.0, 1.0), 0.5, 10.0).unwrap();
        assert!((v - 3f64.sqrt() / 2.0 * (-0.5f64).exp()).abs() < 1e-14);
        assert!(chi_constant(&lap, 1.5, 1.0).is_err());
        assert!(chi_constant(&lap, 0.5, 0.0).is_err());
    }

    #[test]
    fn kappa_examples() {
        let v = kappa_constant(&single(1.0, 1.0), 0.0, 1.0).unwrap();
        assert!((v - (1.0 - (-1f64).exp())).abs() < 1e-15);
        let v = kappa_constant(&single(1.0, 2.0), 1.0, 5.0).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        let zero = DiagonalOperator::explicit(vec![1, 2], vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(kappa_constant(&zero, 1.0, 1.0).unwrap(), 0.0);
        assert!(kappa_constant(&zero, -0.1, 1.0).is_err());
    }

    #[test]
    fn stationary_point_solves_equation() {
        for s in [0.01, 0.25, 0.5, 0.9, 0.999] {
            let u = stationary_u(s);
            assert!((u / u.exp_m1() - s).abs() < 1e-12, "s = {s}");
        }
    }

    #[test]
    fn galerkin_examples() {
        let op = DiagonalOperator::explicit(vec![1, 2, 3, 4], vec![1.0; 4], 1.0).unwrap();
        let v = SpectralField::from_coeffs(&op, (1..=4).map(|n| (n as f64).sqrt()).collect(), 0.0)
            .unwrap();
        assert_eq!(galerkin_project(&op, &v, &[1, 2, 3, 4]).unwrap(), v);
        let z = galerkin_project(&op, &v, &[]).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
        let p = galerkin_project(&op, &v, &[1, 2]).unwrap();
        assert!((hr_norm(&p, &op, 0.0).unwrap().powi(2) - 3.0).abs() < 1e-14);
        assert!(galerkin_project(&op, &v, &[7]).is_err());
    }

    #[test]
    fn spec_roundtrip() {
        let json = r#"{"kind":"periodic_laplacian","N":3,"nu":2.0,"eta":1.5}"#;
        let spec: OperatorSpec = serde_json::from_str(json).unwrap();
        let op = spec.build().unwrap();
        assert_eq!(op.len(), 7);
        assert_eq!(op.to_spec(), spec);
        let json = r#"{"kind":"explicit","N":2,"eta":1.0,"eigenvalues":[0.5,2.0]}"#;
        let op: DiagonalOperator = serde_json::from_str::<OperatorSpec>(json)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(op.modes(), &[1, 2]);
        let back = op.to_spec().build().unwrap();
        assert_eq!(back.eigenvalues(), op.eigenvalues());
    }
}
