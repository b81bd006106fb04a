//! Drift and diffusion operators on a spectral Galerkin truncation, the
//! model file format, and derived singularity profiles.
//!
//! The noise is indexed by "noise slots". Cylindrical noise has one slot per
//! retained mode, in operator order; finite noise has `k` slots.

pub mod presets;
pub mod transform;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::bounds::SingularityProfile;
use crate::error::{invalid, Error, Result};
use crate::spectral::{hr_norm_raw, DiagonalOperator, OperatorSpec, SpectralField};
pub use transform::{TransformScratch, TrigTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarName {
    Identity,
    Sin,
    Tanh,
    Affine,
}

fn one() -> f64 {
    1.0
}

/// `u ↦ scale · g(u) + offset` with `g` one of the built-in 1-Lipschitz maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarFn {
    pub name: ScalarName,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

impl ScalarFn {
    pub fn new(name: ScalarName, scale: f64, offset: f64) -> Self {
        Self { name, scale, offset }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let g = match self.name {
            ScalarName::Identity | ScalarName::Affine => u,
            ScalarName::Sin => u.sin(),
            ScalarName::Tanh => u.tanh(),
        };
        self.scale * g + self.offset
    }

    pub fn lipschitz(&self) -> f64 {
        self.scale.abs()
    }

    pub fn at_zero(&self) -> f64 {
        self.offset
    }

    fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || !self.offset.is_finite() {
            return invalid("scalar function parameters must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    #[default]
    Zero,
    Nemytskii { f: ScalarFn },
    /// `F(v) = ‖v‖_H · w b₀`.
    NormDrift { b0: i64, w: f64 },
}

/// A diagonal map given either as one number (a multiple of the identity)
/// or one entry per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiagonalEntries {
    Scalar(f64),
    PerMode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSpec {
    #[default]
    Zero,
    /// `B(v)u = v · u` pointwise.
    Anderson,
    /// `B(v)u = u ‖v‖_H w` with scalar noise; `w` as `(mode, coefficient)` pairs.
    NormDiffusion { w: Vec<(i64, f64)> },
    /// `B(v)y = Σ_l y_l L_l v` with diagonal `L_l`.
    CommutingLinear { generators: Vec<DiagonalEntries> },
    /// `B(v)u = b(v) · u` pointwise.
    NemytskiiMult { b: ScalarFn },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `c_n = scale · max(|n|, 1)^γ`.
    Rough {
        gamma: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Coefficients in operator mode order.
    Explicit { coeffs: Vec<f64> },
    /// `(mode, coefficient)` pairs, zero elsewhere.
    Modes { pairs: Vec<(i64, f64)> },
}

/// Profile entries of a model file. Missing Lipschitz constants are derived
/// from the drift and diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_hat: Option<f64>,
    #[serde(rename = "L0", default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
    #[serde(rename = "L0_hat", default, skip_serializing_if = "Option::is_none")]
    pub l0_hat: Option<f64>,
    #[serde(rename = "L1", default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(rename = "L1_hat", default, skip_serializing_if = "Option::is_none")]
    pub l1_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub drift: DriftSpec,
    #[serde(default)]
    pub diffusion: DiffusionSpec,
    #[serde(default)]
    pub profile: ProfileSpec,
    pub initial: InitialSpec,
    /// Declared regularity: the initial value lies in `H_{-delta}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseDim {
    Cylindrical,
    Finite(usize),
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::enum_variant_names)]
enum Drift {
    Zero,
    Nemytskii(ScalarFn),
    NormDrift { index: usize, mode: i64, w: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::enum_variant_names)]
enum Diffusion {
    Zero,
    Anderson,
    NemytskiiMult(ScalarFn),
    NormDiffusion(Vec<f64>),
    CommutingLinear(Vec<Vec<f64>>),
}

impl Diffusion {
    fn on_grid(&self) -> bool {
        matches!(self, Diffusion::Anderson | Diffusion::NemytskiiMult(_))
    }
}

/// A fully resolved stochastic evolution equation on a mode truncation.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    id: String,
    operator: DiagonalOperator,
    drift: Drift,
    diffusion: Diffusion,
    profile: SingularityProfile,
    initial: SpectralField,
    initial_spec: InitialSpec,
    profile_spec: ProfileSpec,
    delta: f64,
    transform: Option<Arc<TrigTransform>>,
}

/// Per-thread evaluation buffers.
pub struct Workspace {
    tr: Option<TransformScratch>,
}

/// `c_n = max(|n|, 1)^γ` on the operator's modes.
pub fn make_rough_initial(op: &DiagonalOperator, gamma: f64) -> SpectralField {
    let coeffs = op
        .modes()
        .iter()
        .map(|&m| (m.unsigned_abs().max(1) as f64).powf(gamma))
        .collect();
    SpectralField::from_coeffs(op, coeffs, 0.0).expect("length matches")
}

/// `Σ_n c_n (η + λ_n)^{-2β}` with `c_n = 1` on a full symmetric mode set and
/// the conservative `c_n = 2` (`n ≠ 0`) otherwise.
pub fn hs_weight_sum(op: &DiagonalOperator, beta: f64) -> f64 {
    let sym = op.is_symmetric_full();
    op.modes()
        .iter()
        .zip(op.eigenvalues())
        .map(|(&m, &lam)| {
            let c = if sym || m == 0 { 1.0 } else { 2.0 };
            c * (op.eta() + lam).powf(-2.0 * beta)
        })
        .sum()
}

fn resolve_initial(op: &DiagonalOperator, spec: &InitialSpec) -> Result<SpectralField> {
    match spec {
        InitialSpec::Rough { gamma, scale } => {
            if !gamma.is_finite() || !scale.is_finite() {
                return invalid("rough initial data needs finite gamma and scale");
            }
            let mut xi = make_rough_initial(op, *gamma);
            for c in xi.coeffs_mut() {
                *c *= scale;
            }
            Ok(xi)
        }
        InitialSpec::Explicit { coeffs } => SpectralField::from_coeffs(op, coeffs.clone(), 0.0),
        InitialSpec::Modes { pairs } => SpectralField::from_pairs(op, pairs, 0.0),
    }
}

fn resolve_diagonal(op: &DiagonalOperator, d: &DiagonalEntries) -> Result<Vec<f64>> {
    match d {
        DiagonalEntries::Scalar(s) => Ok(vec![*s; op.len()]),
        DiagonalEntries::PerMode(v) if v.len() == op.len() => Ok(v.clone()),
        DiagonalEntries::PerMode(v) => Err(Error::ModeMismatch(format!(
            "generator with {} entries for {} modes",
            v.len(),
            op.len()
        ))),
    }
}

impl ModelSpec {
    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let operator = file.operator.build()?;
        let id = file.id.clone().unwrap_or_else(|| "model".to_string());
        Self::assemble(
            id,
            operator,
            &file.drift,
            &file.diffusion,
            file.profile,
            file.initial.clone(),
            file.delta,
        )
    }

    pub fn new(
        id: impl Into<String>,
        operator: DiagonalOperator,
        drift: DriftSpec,
        diffusion: DiffusionSpec,
        profile: ProfileSpec,
        initial: InitialSpec,
        delta: Option<f64>,
    ) -> Result<Self> {
        Self::assemble(id.into(), operator, &drift, &diffusion, profile, initial, delta)
    }

    fn assemble(
        id: String,
        operator: DiagonalOperator,
        drift: &DriftSpec,
        diffusion: &DiffusionSpec,
        profile_spec: ProfileSpec,
        initial_spec: InitialSpec,
        delta: Option<f64>,
    ) -> Result<Self> {
        let drift = match *drift {
            DriftSpec::Zero => Drift::Zero,
            DriftSpec::Nemytskii { f } => {
                f.validate()?;
                Drift::Nemytskii(f)
            }
            DriftSpec::NormDrift { b0, w } => {
                let index = operator
                    .index_of(b0)
                    .ok_or_else(|| Error::ModeMismatch(format!("b0 = {b0} not in operator")))?;
                if !(w > 0.0) || !w.is_finite() {
                    return invalid(format!("norm_drift needs <b0, w> > 0, got {w}"));
                }
                Drift::NormDrift { index, mode: b0, w }
            }
        };
        let diffusion = match diffusion {
            DiffusionSpec::Zero => Diffusion::Zero,
            DiffusionSpec::Anderson => Diffusion::Anderson,
            DiffusionSpec::NemytskiiMult { b } => {
                b.validate()?;
                Diffusion::NemytskiiMult(*b)
            }
            DiffusionSpec::NormDiffusion { w } => {
                Diffusion::NormDiffusion(SpectralField::from_pairs(&operator, w, 0.0)?.into_coeffs())
            }
            DiffusionSpec::CommutingLinear { generators } => {
                if generators.is_empty() {
                    return invalid("commuting_linear needs at least one generator");
                }
                let g = generators
                    .iter()
                    .map(|d| resolve_diagonal(&operator, d))
                    .collect::<Result<Vec<_>>>()?;
                Diffusion::CommutingLinear(g)
            }
        };
        let initial = resolve_initial(&operator, &initial_spec)?;
        let delta = match delta {
            Some(d) => d,
            None => match initial_spec {
                InitialSpec::Rough { gamma, .. } => ((2.0 * gamma + 1.0) / 4.0).max(0.0),
                _ => 0.0,
            },
        };
        if !(delta >= 0.0) || !delta.is_finite() {
            return invalid(format!("delta must be finite and nonnegative, got {delta}"));
        }
        let profile = derive_profile(&operator, &drift, &diffusion, &profile_spec)?;
        let transform = (matches!(drift, Drift::Nemytskii(_)) || diffusion.on_grid())
            .then(|| Arc::new(TrigTransform::new(operator.modes())));
        Ok(Self {
            id,
            operator,
            drift,
            diffusion,
            profile,
            initial,
            initial_spec,
            profile_spec,
            delta,
            transform,
        })
    }

    pub fn to_file(&self) -> ModelFile {
        let drift = match self.drift {
            Drift::Zero => DriftSpec::Zero,
            Drift::Nemytskii(f) => DriftSpec::Nemytskii { f },
            Drift::NormDrift { mode, w, .. } => DriftSpec::NormDrift { b0: mode, w },
        };
        let diffusion = match &self.diffusion {
            Diffusion::Zero => DiffusionSpec::Zero,
            Diffusion::Anderson => DiffusionSpec::Anderson,
            Diffusion::NemytskiiMult(b) => DiffusionSpec::NemytskiiMult { b: *b },
            Diffusion::NormDiffusion(w) => DiffusionSpec::NormDiffusion {
                w: self
                    .operator
                    .modes()
                    .iter()
                    .zip(w)
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(&m, &c)| (m, c))
                    .collect(),
            },
            Diffusion::CommutingLinear(g) => DiffusionSpec::CommutingLinear {
                generators: g.iter().map(|v| DiagonalEntries::PerMode(v.clone())).collect(),
            },
        };
        ModelFile {
            id: Some(self.id.clone()),
            operator: self.operator.to_spec(),
            drift,
            diffusion,
            profile: self.profile_spec,
            initial: self.initial_spec.clone(),
            delta: Some(self.delta),
        }
    }

    /// Same model with a different initial value.
    pub fn with_initial(&self, xi: &SpectralField) -> Result<Self> {
        xi.check(&self.operator)?;
        let mut m = self.clone();
        m.initial = xi.clone();
        m.initial_spec = InitialSpec::Explicit {
            coeffs: xi.coeffs().to_vec(),
        };
        Ok(m)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn operator(&self) -> &DiagonalOperator {
        &self.operator
    }

    pub fn profile(&self) -> &SingularityProfile {
        &self.profile
    }

    pub fn initial(&self) -> &SpectralField {
        &self.initial
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn transform(&self) -> Option<&Arc<TrigTransform>> {
        self.transform.as_ref()
    }

    pub fn drift_kind(&self) -> &'static str {
        match self.drift {
            Drift::Zero => "zero",
            Drift::Nemytskii(_) => "nemytskii",
            Drift::NormDrift { .. } => "norm_drift",
        }
    }

    pub fn diffusion_kind(&self) -> &'static str {
        match self.diffusion {
            Diffusion::Zero => "zero",
            Diffusion::Anderson => "anderson",
            Diffusion::NemytskiiMult(_) => "nemytskii_mult",
            Diffusion::NormDiffusion(_) => "norm_diffusion",
            Diffusion::CommutingLinear(_) => "commuting_linear",
        }
    }

    pub fn noise_dim(&self) -> NoiseDim {
        match &self.diffusion {
            Diffusion::Zero => NoiseDim::Finite(0),
            Diffusion::Anderson | Diffusion::NemytskiiMult(_) => NoiseDim::Cylindrical,
            Diffusion::NormDiffusion(_) => NoiseDim::Finite(1),
            Diffusion::CommutingLinear(g) => NoiseDim::Finite(g.len()),
        }
    }

    /// Number of Brownian motions driving the truncated system.
    pub fn noise_len(&self) -> usize {
        match self.noise_dim() {
            NoiseDim::Cylindrical => self.operator.len(),
            NoiseDim::Finite(k) => k,
        }
    }

    /// Diagonal entries `ℓ_{l,b}` of a commuting linear diffusion.
    pub fn generators(&self) -> Option<&[Vec<f64>]> {
        match &self.diffusion {
            Diffusion::CommutingLinear(g) => Some(g),
            _ => None,
        }
    }

    /// `(b0 index, <b0, w>)` of a norm drift.
    pub fn norm_drift(&self) -> Option<(i64, f64)> {
        match self.drift {
            Drift::NormDrift { mode, w, .. } => Some((mode, w)),
            _ => None,
        }
    }

    /// `w` of a norm diffusion, in operator mode order.
    pub fn norm_diffusion_weights(&self) -> Option<&[f64]> {
        match &self.diffusion {
            Diffusion::NormDiffusion(w) => Some(w),
            _ => None,
        }
    }

    pub fn has_zero_drift(&self) -> bool {
        self.drift == Drift::Zero
    }

    pub fn has_zero_diffusion(&self) -> bool {
        self.diffusion == Diffusion::Zero
    }

    /// Diffusion linear in the state (the Itô isometry applies in closed form).
    pub fn has_linear_diffusion(&self) -> bool {
        matches!(
            self.diffusion,
            Diffusion::Zero
                | Diffusion::Anderson
                | Diffusion::NormDiffusion(_)
                | Diffusion::CommutingLinear(_)
        )
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            tr: self.transform.as_ref().map(|t| t.scratch()),
        }
    }

    /// `out = drift_scale · F(x) + B(x) dw` in coefficient space.
    ///
    /// With `dw = None` the diffusion term is skipped; with `drift_scale = 0`
    /// the drift is.
    pub fn combine(
        &self,
        x: &[f64],
        drift_scale: f64,
        dw: Option<&[f64]>,
        ws: &mut Workspace,
        out: &mut [f64],
    ) {
        out.fill(0.0);
        let with_drift = drift_scale != 0.0;
        let grid_drift = with_drift && matches!(self.drift, Drift::Nemytskii(_));
        let grid_diff = dw.is_some() && self.diffusion.on_grid();
        if grid_drift || grid_diff {
            let tr = self.transform.as_ref().expect("grid models carry a transform");
            let s = ws.tr.as_mut().expect("workspace built for this model");
            // separate transforms keep linear diffusions exactly homogeneous in x
            if grid_diff {
                tr.synthesize(dw.unwrap(), s);
                for (w, v) in s.vals.iter_mut().zip(&s.buf) {
                    *w = v.re;
                }
            }
            tr.synthesize(x, s);
            let f = match self.drift {
                Drift::Nemytskii(f) if grid_drift => Some(f),
                _ => None,
            };
            let diff = if grid_diff { Some(&self.diffusion) } else { None };
            for (v, &w) in s.buf.iter_mut().zip(&s.vals) {
                let u = v.re;
                let mut h = 0.0;
                if let Some(f) = f {
                    h += drift_scale * f.eval(u);
                }
                match diff {
                    Some(Diffusion::Anderson) => h += u * w,
                    Some(Diffusion::NemytskiiMult(b)) => h += b.eval(u) * w,
                    _ => {}
                }
                *v = Complex::new(h, 0.0);
            }
            tr.to_spectrum(s);
            tr.extract(&s.buf, out);
        }
        if with_drift {
            if let Drift::NormDrift { index, w, .. } = self.drift {
                out[index] += drift_scale * w * hr_norm_raw(&self.operator, x, 0.0);
            }
        }
        if let Some(dw) = dw {
            match &self.diffusion {
                Diffusion::NormDiffusion(w) => {
                    let s = hr_norm_raw(&self.operator, x, 0.0) * dw[0];
                    for (o, &wi) in out.iter_mut().zip(w) {
                        *o += s * wi;
                    }
                }
                Diffusion::CommutingLinear(gens) => {
                    for (g, &d) in gens.iter().zip(dw) {
                        for ((o, &l), &xb) in out.iter_mut().zip(g).zip(x) {
                            *o += l * xb * d;
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Per output mode `n`, the diffusion energy `G_n(x) = Σ_k <b_n, B(x) b_k>²`
    /// summed over the noise slots.
    ///
    /// For pointwise diffusions on a full symmetric mode set the pair
    /// `G_m + G_{-m}` is computed exactly and split evenly between `±m`;
    /// weighted sums with `λ_m = λ_{-m}` are unaffected.
    pub fn diffusion_energy(&self, x: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        out.fill(0.0);
        match &self.diffusion {
            Diffusion::Zero => {}
            Diffusion::NormDiffusion(w) => {
                let n2 = crate::spectral::hr_norm_sq_raw(&self.operator, x, 0.0);
                for (o, &wi) in out.iter_mut().zip(w) {
                    *o = n2 * wi * wi;
                }
            }
            Diffusion::CommutingLinear(gens) => {
                for g in gens {
                    for ((o, &l), &xb) in out.iter_mut().zip(g).zip(x) {
                        *o += (l * xb) * (l * xb);
                    }
                }
            }
            Diffusion::Anderson | Diffusion::NemytskiiMult(_) => {
                let tr = self.transform.as_ref().expect("grid models carry a transform");
                let s = ws.tr.as_mut().expect("workspace built for this model");
                tr.synthesize(x, s);
                if let Diffusion::NemytskiiMult(b) = &self.diffusion {
                    for v in s.buf.iter_mut() {
                        v.re = b.eval(v.re);
                    }
                }
                for v in s.buf.iter_mut() {
                    v.im = 0.0;
                }
                tr.to_spectrum(s);
                if self.operator.is_symmetric_full() {
                    shell_energy(tr, &s.buf, self.operator.modes(), out);
                } else {
                    let g = &s.buf;
                    for (i, o) in out.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for k in 0..x.len() {
                            let c = coupling(tr, g, i, k);
                            acc += c * c;
                        }
                        *o = acc;
                    }
                }
            }
        }
    }

    /// `Σ_k ‖B(v) b_k‖²_{H_{-β}}` over the noise slots.
    pub fn hilbert_schmidt_sq(&self, v: &[f64], beta: f64) -> f64 {
        let mut ws = self.workspace();
        let mut g = vec![0.0; v.len()];
        self.diffusion_energy(v, &mut ws, &mut g);
        let w = self.operator.power_weights(-2.0 * beta);
        g.iter().zip(&w).map(|(a, b)| a * b).sum()
    }
}

/// `<b_n, g b_k>` from the spectrum of `g`.
fn coupling(tr: &TrigTransform, g: &[Complex<f64>], n: usize, k: usize) -> f64 {
    let fk = tr.basis_freqs(k);
    let freqs: &[i64] = if fk[0] == fk[1] { &fk[..1] } else { &fk };
    tr.real_coeff(n, |j| {
        freqs
            .iter()
            .map(|&l| tr.at(g, j - l) * tr.basis_weight(k, l))
            .sum()
    })
}

/// Shell sums `S(n) = Σ_{|k|<=N} |ĝ_{k-n}|²` via prefix sums.
fn shell_energy(tr: &TrigTransform, g: &[Complex<f64>], modes: &[i64], out: &mut [f64]) {
    let n = modes.iter().map(|m| m.abs()).max().unwrap_or(0);
    // prefix[j + 2n] = Σ_{i < j} |ĝ_i|² for j in [-2n, 2n + 1)
    let mut prefix = Vec::with_capacity((4 * n + 2) as usize);
    prefix.push(0.0);
    let mut acc = 0.0;
    for j in -2 * n..=2 * n {
        acc += tr.at(g, j).norm_sqr();
        prefix.push(acc);
    }
    let window = |shift: i64| {
        let lo = (-n - shift + 2 * n) as usize;
        let hi = (n - shift + 2 * n + 1) as usize;
        prefix[hi] - prefix[lo]
    };
    for (o, &m) in out.iter_mut().zip(modes) {
        let a = m.abs();
        *o = if a == 0 {
            window(0)
        } else {
            0.5 * (window(a) + window(-a))
        };
    }
}

fn derive_profile(
    op: &DiagonalOperator,
    drift: &Drift,
    diffusion: &Diffusion,
    spec: &ProfileSpec,
) -> Result<SingularityProfile> {
    let pointwise = diffusion.on_grid();
    let beta = spec.beta.unwrap_or(if pointwise { 0.3 } else { 0.0 });
    if pointwise && !(beta > 0.25 && beta < 0.5) {
        return invalid(format!(
            "pointwise multiplicative noise needs beta in (1/4, 1/2), got {beta}"
        ));
    }
    let alpha = spec.alpha.unwrap_or(0.0);
    let eta = op.eta();
    let weights = |r: f64| op.power_weights(r);
    let norm_neg = |w: &[f64], r: f64| {
        w.iter()
            .zip(weights(-r))
            .map(|(c, q)| (c * q) * (c * q))
            .sum::<f64>()
            .sqrt()
    };
    let max_weight = |r: f64| weights(-r).into_iter().fold(0.0, f64::max);
    let (l0, l0_hat) = match *drift {
        Drift::Zero => (0.0, 0.0),
        Drift::Nemytskii(f) => {
            let hat = op
                .eigenvalue(0)
                .map(|lam0| f.at_zero().abs() * (eta + lam0).powf(-alpha))
                .unwrap_or(0.0);
            (f.lipschitz() * max_weight(alpha), hat)
        }
        Drift::NormDrift { index, w, .. } => {
            let lam = op.eigenvalues()[index];
            (w * (eta + lam).powf(-alpha), 0.0)
        }
    };
    let (l1, l1_hat) = match diffusion {
        Diffusion::Zero => (0.0, 0.0),
        Diffusion::Anderson => (hs_weight_sum(op, beta).sqrt(), 0.0),
        Diffusion::NemytskiiMult(b) => {
            let exact: f64 = weights(-2.0 * beta).iter().sum();
            (
                b.lipschitz() * hs_weight_sum(op, beta).sqrt(),
                b.at_zero().abs() * exact.sqrt(),
            )
        }
        Diffusion::NormDiffusion(w) => (norm_neg(w, beta), 0.0),
        Diffusion::CommutingLinear(gens) => {
            let wb = weights(-2.0 * beta);
            let worst = (0..op.len())
                .map(|b| gens.iter().map(|g| g[b] * g[b]).sum::<f64>() * wb[b])
                .fold(0.0, f64::max);
            (worst.sqrt(), 0.0)
        }
    };
    let profile = SingularityProfile {
        alpha,
        alpha_hat: spec.alpha_hat.unwrap_or(0.0),
        beta,
        beta_hat: spec.beta_hat.unwrap_or(0.0),
        l0: spec.l0.unwrap_or(l0),
        l0_hat: spec.l0_hat.unwrap_or(l0_hat),
        l1: spec.l1.unwrap_or(l1),
        l1_hat: spec.l1_hat.unwrap_or(l1_hat),
        p: spec.p.unwrap_or(2.0),
        horizon: spec.horizon.unwrap_or(1.0),
    };
    profile.validate()?;
    Ok(profile)
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::OutOfRange(format!("time {t}")));
    }
    Ok(())
}

/// `F(v)`; the models are time-homogeneous so `t` is only validated.
pub fn eval_drift(model: &ModelSpec, t: f64, v: &SpectralField) -> Result<SpectralField> {
    check_time(t)?;
    v.check(&model.operator)?;
    let mut out = vec![0.0; v.coeffs().len()];
    if !model.has_zero_drift() {
        let mut ws = model.workspace();
        model.combine(v.coeffs(), 1.0, None, &mut ws, &mut out);
    }
    SpectralField::from_coeffs(&model.operator, out, -model.profile.alpha)
}

/// `B(v)` applied to the unit vector of noise slot `direction`.
pub fn eval_diffusion(
    model: &ModelSpec,
    t: f64,
    v: &SpectralField,
    direction: usize,
) -> Result<SpectralField> {
    check_time(t)?;
    v.check(&model.operator)?;
    let k = model.noise_len();
    if direction >= k {
        return Err(Error::OutOfRange(format!(
            "noise direction {direction} outside dimension {k}"
        )));
    }
    let mut dw = vec![0.0; k];
    dw[direction] = 1.0;
    let mut out = vec![0.0; v.coeffs().len()];
    let mut ws = model.workspace();
    model.combine(v.coeffs(), 0.0, Some(&dw), &mut ws, &mut out);
    SpectralField::from_coeffs(&model.operator, out, -model.profile.beta)
}

/// `X_t = exp(tA + Σ_l (W_t^l L_l − t L_l²/2)) ξ` for commuting linear noise
/// and zero drift.
pub fn exact_solution(
    model: &ModelSpec,
    t: f64,
    xi: &SpectralField,
    brownian: &[f64],
) -> Result<SpectralField> {
    let gens = match (&model.drift, &model.diffusion) {
        (Drift::Zero, Diffusion::CommutingLinear(g)) => g,
        _ => {
            return Err(Error::WrongModel(format!(
                "exact solution needs commuting_linear diffusion and zero drift, got {}/{}",
                model.drift_kind(),
                model.diffusion_kind()
            )))
        }
    };
    check_time(t)?;
    xi.check(&model.operator)?;
    if brownian.len() != gens.len() {
        return Err(Error::ModeMismatch(format!(
            "{} Brownian values for {} generators",
            brownian.len(),
            gens.len()
        )));
    }
    let mut out = xi.coeffs().to_vec();
    exact_factors(model.operator.eigenvalues(), gens, t, brownian, &mut out);
    SpectralField::from_coeffs(&model.operator, out, xi.space_index())
}

/// Multiplies `x` in place by the per-mode exact-solution factor.
pub(crate) fn exact_factors(eigs: &[f64], gens: &[Vec<f64>], t: f64, w: &[f64], x: &mut [f64]) {
    for (b, c) in x.iter_mut().enumerate() {
        let mut e = -eigs[b] * t;
        for (g, &wl) in gens.iter().zip(w) {
            e += g[b] * wl - 0.5 * t * g[b] * g[b];
        }
        *c *= e.exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{hr_norm, make_periodic_laplacian};

    fn heat(n: usize, drift: DriftSpec, diffusion: DiffusionSpec) -> ModelSpec {
        let op = make_periodic_laplacian(n, 1.0, 1.0).unwrap();
        ModelSpec::new(
            "t",
            op,
            drift,
            diffusion,
            ProfileSpec::default(),
            InitialSpec::Rough { gamma: 0.0, scale: 1.0 },
            None,
        )
        .unwrap()
    }

    fn smooth(op: &DiagonalOperator) -> SpectralField {
        let c = op
            .modes()
            .iter()
            .map(|&m| 0.3 * (-(m.abs() as f64)).exp() * if m < 0 { -1.0 } else { 1.0 })
            .collect();
        SpectralField::from_coeffs(op, c, 0.0).unwrap()
    }

    #[test]
    fn zero_drift_is_zero() {
        let m = heat(4, DriftSpec::Zero, DiffusionSpec::Zero);
        let v = smooth(m.operator());
        let f = eval_drift(&m, 0.5, &v).unwrap();
        assert!(f.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn norm_drift_definition() {
        let m = heat(3, DriftSpec::NormDrift { b0: 0, w: 2.0 }, DiffusionSpec::Zero);
        let v = SpectralField::from_pairs(m.operator(), &[(2, 1.0)], 0.0).unwrap();
        let f = eval_drift(&m, 0.1, &v).unwrap();
        assert_eq!(f.coeff(0), Some(2.0));
        assert_eq!(f.coeffs().iter().filter(|&&c| c != 0.0).count(), 1);
    }

    #[test]
    fn identity_nemytskii_round_trip() {
        let f = ScalarFn::new(ScalarName::Identity, 1.0, 0.0);
        let m = heat(16, DriftSpec::Nemytskii { f }, DiffusionSpec::Zero);
        let v = smooth(m.operator());
        let out = eval_drift(&m, 0.1, &v).unwrap();
        for (a, b) in v.coeffs().iter().zip(out.coeffs()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn norm_diffusion_at_zero() {
        let m = heat(3, DriftSpec::Zero, DiffusionSpec::NormDiffusion { w: vec![(0, 1.0)] });
        let v = SpectralField::zeros(m.operator(), 0.0);
        let b = eval_diffusion(&m, 0.1, &v, 0).unwrap();
        assert!(b.coeffs().iter().all(|&c| c == 0.0));
        assert!(eval_diffusion(&m, 0.1, &v, 1).is_err());
    }

    #[test]
    fn commuting_identity_generator() {
        let gens = vec![DiagonalEntries::Scalar(0.7)];
        let m = heat(3, DriftSpec::Zero, DiffusionSpec::CommutingLinear { generators: gens });
        let v = smooth(m.operator());
        let b = eval_diffusion(&m, 0.2, &v, 0).unwrap();
        for (a, c) in v.coeffs().iter().zip(b.coeffs()) {
            assert!((0.7 * a - c).abs() < 1e-15);
        }
    }

    #[test]
    fn anderson_times_constant() {
        let m = heat(8, DriftSpec::Zero, DiffusionSpec::Anderson);
        let one = SpectralField::from_pairs(m.operator(), &[(0, 1.0)], 0.0).unwrap();
        for k in 0..m.operator().len() {
            let b = eval_diffusion(&m, 0.2, &one, k).unwrap();
            for (i, &c) in b.coeffs().iter().enumerate() {
                let e = if i == k { 1.0 } else { 0.0 };
                assert!((c - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn anderson_product_of_cosines() {
        // √2cos(a)·√2cos(b) = √2 (√2cos(a+b) + √2cos(a−b)) / 2
        let m = heat(6, DriftSpec::Zero, DiffusionSpec::Anderson);
        let v = SpectralField::from_pairs(m.operator(), &[(2, 1.0)], 0.0).unwrap();
        let k = m.operator().index_of(3).unwrap();
        let b = eval_diffusion(&m, 0.2, &v, k).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.coeff(5).unwrap() - h).abs() < 1e-13);
        assert!((b.coeff(1).unwrap() - h).abs() < 1e-13);
        let rest: f64 = b.coeffs().iter().map(|c| c * c).sum::<f64>() - 1.0;
        assert!(rest.abs() < 1e-13);
    }

    #[test]
    fn shell_energy_matches_direct() {
        let m = heat(5, DriftSpec::Zero, DiffusionSpec::Anderson);
        let v = smooth(m.operator());
        let mut ws = m.workspace();
        let mut fast = vec![0.0; v.coeffs().len()];
        m.diffusion_energy(v.coeffs(), &mut ws, &mut fast);
        let mut direct = vec![0.0; v.coeffs().len()];
        for k in 0..direct.len() {
            let b = eval_diffusion(&m, 0.1, &v, k).unwrap();
            for (d, c) in direct.iter_mut().zip(b.coeffs()) {
                *d += c * c;
            }
        }
        // pairs agree exactly, individual entries only after averaging
        let modes = m.operator().modes();
        for a in 0..=5i64 {
            let i = modes.iter().position(|&x| x == a).unwrap();
            let j = modes.iter().position(|&x| x == -a).unwrap();
            let (f, d) = if a == 0 {
                (fast[i], direct[i])
            } else {
                (fast[i] + fast[j], direct[i] + direct[j])
            };
            assert!((f - d).abs() < 1e-12, "shell {a}: {f} vs {d}");
        }
    }

    #[test]
    fn general_energy_matches_direct() {
        let op = DiagonalOperator::explicit(vec![0, 1, 3, -2], vec![0.0, 1.0, 9.0, 4.0], 1.0).unwrap();
        let m = ModelSpec::new(
            "g",
            op.clone(),
            DriftSpec::Zero,
            DiffusionSpec::Anderson,
            ProfileSpec::default(),
            InitialSpec::Explicit { coeffs: vec![1.0, 0.2, -0.3, 0.5] },
            None,
        )
        .unwrap();
        let v = m.initial().clone();
        let mut ws = m.workspace();
        let mut fast = vec![0.0; 4];
        m.diffusion_energy(v.coeffs(), &mut ws, &mut fast);
        for (i, &f) in fast.iter().enumerate() {
            let mut d = 0.0;
            for k in 0..4 {
                let b = eval_diffusion(&m, 0.1, &v, k).unwrap();
                d += b.coeffs()[i].powi(2);
            }
            assert!((f - d).abs() < 1e-13, "{i}: {f} vs {d}");
        }
    }

    #[test]
    fn exact_solution_examples() {
        let op = DiagonalOperator::explicit(vec![0], vec![1.0], 1.0).unwrap();
        let gens = vec![DiagonalEntries::Scalar(0.0)];
        let m = ModelSpec::new(
            "gbm",
            op.clone(),
            DriftSpec::Zero,
            DiffusionSpec::CommutingLinear { generators: gens },
            ProfileSpec::default(),
            InitialSpec::Explicit { coeffs: vec![1.0] },
            None,
        )
        .unwrap();
        let xi = m.initial().clone();
        assert_eq!(exact_solution(&m, 0.0, &xi, &[0.0]).unwrap(), xi);
        let x = exact_solution(&m, 0.7, &xi, &[0.3]).unwrap();
        assert!((x.coeffs()[0] - (-0.7f64).exp()).abs() < 1e-15);
        let anderson = heat(2, DriftSpec::Zero, DiffusionSpec::Anderson);
        let r = exact_solution(&anderson, 0.1, anderson.initial(), &[0.0]);
        assert!(matches!(r, Err(Error::WrongModel(_))));
    }

    #[test]
    fn rough_initial_partial_sums() {
        let nu = 1.0;
        let norm_sq = |n: usize, gamma: f64, delta: f64| {
            let op = make_periodic_laplacian(n, nu, 1.0).unwrap();
            hr_norm(&make_rough_initial(&op, gamma), &op, -delta).unwrap().powi(2)
        };
        // γ = 0: bounded
        let a = norm_sq(256, 0.0, 0.5);
        let b = norm_sq(1024, 0.0, 0.5);
        assert!(b - a < 2.0 / 256.0 && b > a);
        // γ = 1/2: grows like (2/ν) log N
        let growth = norm_sq(4096, 0.5, 0.5) - norm_sq(256, 0.5, 0.5);
        assert!((growth - 2.0 * (16f64).ln()).abs() < 0.01);
        // γ = 1/2, δ = 0.75: bounded
        let c = norm_sq(4096, 0.5, 0.75) - norm_sq(1024, 0.5, 0.75);
        assert!(c < 0.1);
    }

    #[test]
    fn profile_derivation() {
        let b = ScalarFn::new(ScalarName::Affine, 0.1, 0.2);
        let f = ScalarFn::new(ScalarName::Tanh, 0.5, 0.0);
        let m = heat(4, DriftSpec::Nemytskii { f }, DiffusionSpec::NemytskiiMult { b });
        let p = m.profile();
        assert_eq!(p.l0, 0.5);
        assert_eq!(p.l0_hat, 0.0);
        let c = hs_weight_sum(m.operator(), 0.3).sqrt();
        assert!((p.l1 - 0.1 * c).abs() < 1e-15);
        assert!((p.l1_hat - 0.2 * c).abs() < 1e-15);
        assert_eq!(p.beta, 0.3);
    }

    #[test]
    fn beta_window_enforced() {
        let op = make_periodic_laplacian(2, 1.0, 1.0).unwrap();
        let spec = ProfileSpec { beta: Some(0.25), ..Default::default() };
        let r = ModelSpec::new(
            "a",
            op,
            DriftSpec::Zero,
            DiffusionSpec::Anderson,
            spec,
            InitialSpec::Rough { gamma: 0.0, scale: 1.0 },
            None,
        );
        assert!(r.is_err());
    }

    #[test]
    fn file_round_trip() {
        let text = r#"{
            "id": "heat",
            "operator": {"kind": "periodic_laplacian", "N": 8, "nu": 1.0, "eta": 1.0},
            "drift": {"kind": "nemytskii", "f": {"name": "tanh", "scale": 0.5}},
            "diffusion": {"kind": "nemytskii_mult", "b": {"name": "affine", "scale": 0.1, "offset": 0.1}},
            "profile": {"beta": 0.3, "p": 2, "T": 1},
            "initial": {"kind": "rough", "gamma": 0}
        }"#;
        let file = ModelFile::from_json(text).unwrap();
        let m = ModelSpec::from_file(&file).unwrap();
        assert_eq!(m.delta(), 0.25);
        let again = ModelSpec::from_file(&ModelFile::from_json(&m.to_file().to_json()).unwrap()).unwrap();
        assert_eq!(again.profile(), m.profile());
        assert_eq!(again.initial(), m.initial());
        assert!(ModelFile::from_json(r#"{"operator": {"kind": "periodic_laplacian", "N": 2, "nu": 1, "eta": 1}, "initial": {"kind": "rough", "gamma": 0}, "bogus": 1}"#).is_err());
    }
}
