//! Ready-made models used by the experiments.

use super::{
    hs_weight_sum, DiagonalEntries, DiffusionSpec, DriftSpec, InitialSpec, ModelSpec, ProfileSpec,
    ScalarFn, ScalarName,
};
use crate::error::Result;
use crate::spectral::{make_periodic_laplacian, DiagonalOperator};

/// `ν` for which `ν n²` are the eigenvalues of `-Δ` on the unit periodic
/// interval with the basis `1, √2 cos(2πnx), √2 sin(2πnx)`.
pub const UNIT_TORUS_NU: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

/// Stochastic heat equation with `f = 0.5 tanh` and affine multiplicative
/// noise `b(u) = s (u + 1)`, `s` chosen so that `L1 = l1` at `β = 0.3`.
/// Rough initial value with `γ = 0`.
pub fn nemytskii_heat(n: usize, l1: f64) -> Result<ModelSpec> {
    let op = make_periodic_laplacian(n, 1.0, 1.0)?;
    let beta = 0.3;
    let s = l1 / hs_weight_sum(&op, beta).sqrt();
    ModelSpec::new(
        "nemytskii_heat",
        op,
        DriftSpec::Nemytskii {
            f: ScalarFn::new(ScalarName::Tanh, 0.5, 0.0),
        },
        DiffusionSpec::NemytskiiMult {
            b: ScalarFn::new(ScalarName::Affine, s, s),
        },
        ProfileSpec {
            beta: Some(beta),
            p: Some(2.0),
            horizon: Some(1.0),
            ..Default::default()
        },
        InitialSpec::Rough { gamma: 0.0, scale: 1.0 },
        Some(0.25),
    )
}

/// Parabolic Anderson model `dX = ΔX dt + X dW` on `{-N..N}`.
pub fn anderson(n: usize, nu: f64, eta: f64, initial: InitialSpec) -> Result<ModelSpec> {
    let op = make_periodic_laplacian(n, nu, eta)?;
    ModelSpec::new(
        "anderson",
        op,
        DriftSpec::Zero,
        DiffusionSpec::Anderson,
        ProfileSpec {
            beta: Some(0.3),
            ..Default::default()
        },
        initial,
        None,
    )
}

/// Smooth initial value `c_m = 0.5^{|m|}`, sign alternating between cos and sin.
pub fn smooth_initial(n: usize) -> InitialSpec {
    let coeffs = crate::spectral::periodic_mode_order(n)
        .into_iter()
        .map(|m| 0.5f64.powi(m.unsigned_abs() as i32) * if m < 0 { -0.5 } else { 1.0 })
        .collect();
    InitialSpec::Explicit { coeffs }
}

/// One mode with eigenvalue `lambda`, `dX = -λX dt + ℓ X dW`, `X_0 = 1`.
pub fn gbm(lambda: f64, ell: f64) -> Result<ModelSpec> {
    let op = DiagonalOperator::explicit(vec![0], vec![lambda], 1.0)?;
    ModelSpec::new(
        "gbm",
        op,
        DriftSpec::Zero,
        DiffusionSpec::CommutingLinear {
            generators: vec![DiagonalEntries::Scalar(ell)],
        },
        ProfileSpec::default(),
        InitialSpec::Explicit { coeffs: vec![1.0] },
        None,
    )
}

/// Scalar noise `B(v)u = u ‖v‖_H w0 b_0` on the periodic Laplacian.
pub fn norm_diffusion(n: usize, w0: f64, initial: InitialSpec) -> Result<ModelSpec> {
    let op = make_periodic_laplacian(n, 1.0, 1.0)?;
    ModelSpec::new(
        "norm_diffusion",
        op,
        DriftSpec::Zero,
        DiffusionSpec::NormDiffusion { w: vec![(0, w0)] },
        ProfileSpec::default(),
        initial,
        None,
    )
}

/// Deterministic `dX = (AX + ‖X‖_H w b_0) dt` on the periodic Laplacian.
pub fn norm_drift(n: usize, w: f64, initial: InitialSpec) -> Result<ModelSpec> {
    let op = make_periodic_laplacian(n, 1.0, 1.0)?;
    ModelSpec::new(
        "norm_drift",
        op,
        DriftSpec::NormDrift { b0: 0, w },
        DiffusionSpec::Zero,
        ProfileSpec::default(),
        initial,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_constants() {
        let m = nemytskii_heat(64, 0.25).unwrap();
        let p = m.profile();
        assert_eq!(p.l0, 0.5);
        assert!((p.l1 - 0.25).abs() < 1e-14);
        assert!((p.l1_hat - 0.25).abs() < 1e-14);
        assert_eq!(p.beta, 0.3);
        assert_eq!(m.delta(), 0.25);
    }

    #[test]
    fn presets_build() {
        assert!(anderson(8, 1.0, 1.0, smooth_initial(8)).is_ok());
        assert_eq!(gbm(1.0, 0.5).unwrap().noise_len(), 1);
        assert!(norm_diffusion(4, 1.0, smooth_initial(4)).unwrap().has_linear_diffusion());
        assert_eq!(norm_drift(4, 1.0, smooth_initial(4)).unwrap().noise_len(), 0);
    }
}
