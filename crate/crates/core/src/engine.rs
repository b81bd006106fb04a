//! Time grids, counter-based Wiener increments, the exponential Euler scheme,
//! parallel ensembles and the Picard fixed-point iteration.

use std::io::Write;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::models::{ModelSpec, NoiseDim, Workspace};
use crate::spectral::{canonical_slot, hr_norm_raw, DiagonalOperator, SpectralField};

/// Upper limit on stored `f64` values in one ensemble (512 MiB).
pub const MAX_STORED_VALUES: usize = 1 << 26;

/// Paths per parallel work unit. Fixed so reductions are schedule independent.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    grading: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        Self::graded(horizon, steps, 1.0)
    }

    /// `t_m = T (m / M)^q`.
    pub fn graded(horizon: f64, steps: usize, q: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        if steps == 0 {
            return invalid("grid needs at least one step");
        }
        if !(q >= 1.0) || !q.is_finite() {
            return invalid(format!("grading exponent must be >= 1, got {q}"));
        }
        let m = steps as f64;
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|i| {
                if q == 1.0 {
                    horizon * i as f64 / m
                } else {
                    horizon * (i as f64 / m).powf(q)
                }
            })
            .collect();
        nodes[steps] = horizon;
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("grid is not strictly increasing; too many steps");
        }
        Ok(Self {
            horizon,
            grading: q,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn dt(&self, step: usize) -> f64 {
        if self.is_uniform() {
            return self.horizon / self.steps() as f64;
        }
        self.nodes[step + 1] - self.nodes[step]
    }

    pub fn is_uniform(&self) -> bool {
        self.grading == 1.0
    }

    /// Index of the node equal to `t`, within a relative tolerance of 1e-12.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.horizon;
        self.nodes.iter().position(|&s| (s - t).abs() <= tol)
    }
}

/// Gaussian increments as a pure function of `(seed, path, slot, step)`.
///
/// Each stream is a ChaCha8 generator keyed by the master seed and selected
/// by the path index; the draw for `(slot, step)` sits at a fixed word
/// offset, so any value can be regenerated without replaying the others.
#[derive(Clone)]
pub struct NoiseStream {
    master_seed: u64,
    path_index: u64,
    rng: ChaCha8Rng,
    tmp: Vec<f64>,
}

impl std::fmt::Debug for NoiseStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NoiseStream")
            .field("master_seed", &self.master_seed)
            .field("path_index", &self.path_index)
            .finish()
    }
}

const SLOT_BITS: u32 = 24;
const MAX_SLOTS: u64 = 1 << (SLOT_BITS - 2);

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        let key = ChaCha8Rng::seed_from_u64(master_seed).get_seed();
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(path_index);
        Self {
            master_seed,
            path_index,
            rng,
            tmp: Vec::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    fn seek(&mut self, slot: u64, step: u64) {
        self.rng
            .set_word_pos(((step as u128) << SLOT_BITS) + 4 * slot as u128);
    }

    #[inline]
    fn draw(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Standard normal for `(slot, step)`.
    pub fn standard_normal(&mut self, slot: u64, step: u64) -> f64 {
        assert!(slot < MAX_SLOTS, "noise slot {slot} out of range");
        self.seek(slot, step);
        self.draw()
    }

    /// `out[i] = scale · Z(slots[i], step)`.
    pub fn fill(&mut self, step: u64, slots: &[u64], scale: f64, out: &mut [f64]) {
        let top = slots.iter().copied().max().map_or(0, |s| s + 1);
        assert!(top <= MAX_SLOTS, "noise slot out of range");
        self.seek(0, step);
        let mut tmp = std::mem::take(&mut self.tmp);
        tmp.clear();
        for _ in 0..top {
            let z = self.draw();
            tmp.push(z);
        }
        for (o, &s) in out.iter_mut().zip(slots) {
            *o = scale * tmp[s as usize];
        }
        self.tmp = tmp;
    }
}

/// Noise slots of each Brownian motion driving `model`: canonical mode slots
/// for cylindrical noise, so that truncations at different `N` share noise.
pub fn noise_slots(model: &ModelSpec) -> Vec<u64> {
    match model.noise_dim() {
        NoiseDim::Cylindrical => model.operator().modes().iter().map(|&m| canonical_slot(m)).collect(),
        NoiseDim::Finite(k) => (0..k as u64).collect(),
    }
}

/// `ΔW` for one step of `grid`, one entry per mode of `modes`.
pub fn wiener_increments(
    stream: &mut NoiseStream,
    grid: &TimeGrid,
    step: usize,
    modes: &[i64],
) -> Result<Vec<f64>> {
    if step >= grid.steps() {
        return Err(Error::OutOfRange(format!(
            "step {step} outside grid with {} steps",
            grid.steps()
        )));
    }
    let slots: Vec<u64> = modes.iter().map(|&m| canonical_slot(m)).collect();
    if slots.iter().any(|&s| s >= MAX_SLOTS) {
        return Err(Error::OutOfRange("mode too large for the noise layout".into()));
    }
    let mut out = vec![0.0; modes.len()];
    stream.fill(step as u64, &slots, grid.dt(step).sqrt(), &mut out);
    Ok(out)
}

/// `e^{-λ_b dt}` for every mode.
pub fn decay_factors(op: &DiagonalOperator, dt: f64) -> Vec<f64> {
    op.eigenvalues().iter().map(|&lam| (-lam * dt).exp()).collect()
}

/// Semigroup factors for each step of a grid.
#[derive(Debug, Clone)]
pub struct DecayTable {
    rows: Vec<Vec<f64>>,
    uniform: bool,
}

impl DecayTable {
    pub fn new(op: &DiagonalOperator, grid: &TimeGrid) -> Self {
        if grid.is_uniform() {
            Self {
                rows: vec![decay_factors(op, grid.dt(0))],
                uniform: true,
            }
        } else {
            Self {
                rows: (0..grid.steps()).map(|m| decay_factors(op, grid.dt(m))).collect(),
                uniform: false,
            }
        }
    }

    pub fn row(&self, step: usize) -> &[f64] {
        if self.uniform {
            &self.rows[0]
        } else {
            &self.rows[step]
        }
    }
}

/// Reusable state for exponential Euler steps of one model.
pub struct Stepper<'a> {
    model: &'a ModelSpec,
    ws: Workspace,
    incr: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a ModelSpec) -> Self {
        Self {
            model,
            ws: model.workspace(),
            incr: vec![0.0; model.operator().len()],
        }
    }

    /// `x ← e^{dt A}(x + dt F(x) + B(x) dW)` with the semigroup factors `decay`.
    ///
    /// The models are time-homogeneous, so the left-endpoint shift of the
    /// evaluation time away from zero has no effect on the increment.
    pub fn step(&mut self, decay: &[f64], dt: f64, x: &mut [f64], dw: &[f64]) {
        let noise = if dw.is_empty() || self.model.has_zero_diffusion() {
            None
        } else {
            Some(dw)
        };
        let drift = if self.model.has_zero_drift() { 0.0 } else { dt };
        if noise.is_none() && drift == 0.0 {
            for (c, &d) in x.iter_mut().zip(decay) {
                *c *= d;
            }
            return;
        }
        self.model.combine(x, drift, noise, &mut self.ws, &mut self.incr);
        for ((c, &d), &inc) in x.iter_mut().zip(decay).zip(&self.incr) {
            *c = d * (*c + inc);
        }
    }

    pub fn energy(&mut self, x: &[f64], out: &mut [f64]) {
        self.model.diffusion_energy(x, &mut self.ws, out);
    }
}

/// One exponential Euler step from `t_m` with step `dt`.
pub fn exp_euler_step(
    model: &ModelSpec,
    t_m: f64,
    dt: f64,
    x: &SpectralField,
    dw: &[f64],
) -> Result<SpectralField> {
    if !(t_m >= 0.0) || !(dt > 0.0) {
        return Err(Error::OutOfRange(format!("step from {t_m} with dt = {dt}")));
    }
    x.check(model.operator())?;
    if dw.len() != model.noise_len() {
        return Err(Error::ModeMismatch(format!(
            "{} increments for noise dimension {}",
            dw.len(),
            model.noise_len()
        )));
    }
    let mut c = x.coeffs().to_vec();
    let decay = decay_factors(model.operator(), dt);
    Stepper::new(model).step(&decay, dt, &mut c, dw);
    SpectralField::from_coeffs(model.operator(), c, 0.0)
}

/// Which grid nodes keep full coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Recording {
    All,
    Every(usize),
    Nodes(Vec<usize>),
    FinalOnly,
    None,
}

impl Recording {
    fn indices(&self, steps: usize) -> Result<Vec<usize>> {
        Ok(match self {
            Recording::All => (0..=steps).collect(),
            Recording::Every(k) if *k > 0 => {
                let mut v: Vec<usize> = (0..=steps).step_by(*k).collect();
                if *v.last().unwrap() != steps {
                    v.push(steps);
                }
                v
            }
            Recording::Every(_) => return invalid("recording stride must be positive"),
            Recording::Nodes(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                if v.last().is_some_and(|&i| i > steps) {
                    return Err(Error::OutOfRange("recorded node outside grid".into()));
                }
                v
            }
            Recording::FinalOnly => vec![steps],
            Recording::None => vec![],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub recording: Recording,
    /// Space indices `r` whose `‖X‖_{H_r}` is kept for every path and node.
    pub norm_indices: Vec<f64>,
    /// Accumulate the path mean of the diffusion energy at every node.
    pub energy: bool,
    /// Index of the first path; later paths follow consecutively.
    pub first_path: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            recording: Recording::All,
            norm_indices: Vec::new(),
            energy: false,
            first_path: 0,
        }
    }
}

/// Monte Carlo sample of Galerkin paths on a shared grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub(crate) model_id: String,
    pub(crate) seed: u64,
    pub(crate) first_path: u64,
    pub(crate) grid: TimeGrid,
    pub(crate) operator: DiagonalOperator,
    pub(crate) delta: f64,
    pub(crate) paths: usize,
    pub(crate) field_nodes: Vec<usize>,
    pub(crate) fields: Vec<f64>,
    pub(crate) norm_indices: Vec<f64>,
    pub(crate) norms: Vec<f64>,
    pub(crate) energy: Option<Vec<f64>>,
}

impl PathEnsemble {
    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn first_path(&self) -> u64 {
        self.first_path
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn operator(&self) -> &DiagonalOperator {
        &self.operator
    }

    /// Declared regularity of the initial value.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn field_nodes(&self) -> &[usize] {
        &self.field_nodes
    }

    pub fn norm_indices(&self) -> &[f64] {
        &self.norm_indices
    }

    fn modes(&self) -> usize {
        self.operator.len()
    }

    pub fn has_field(&self, node: usize) -> bool {
        self.field_nodes.binary_search(&node).is_ok()
    }

    /// Coefficients of path `path` at grid node `node`.
    pub fn field(&self, path: usize, node: usize) -> Result<&[f64]> {
        let k = self
            .field_nodes
            .binary_search(&node)
            .map_err(|_| Error::OutOfRange(format!("node {node} not recorded")))?;
        if path >= self.paths {
            return Err(Error::OutOfRange(format!("path {path} of {}", self.paths)));
        }
        let n = self.modes();
        let off = (path * self.field_nodes.len() + k) * n;
        Ok(&self.fields[off..off + n])
    }

    /// Stored `‖X‖_{H_r}` of every path at `node`, if `r` was requested.
    pub fn stored_norms(&self, node: usize, r: f64) -> Option<Vec<f64>> {
        let ri = self.norm_indices.iter().position(|&x| x == r)?;
        let nodes = self.grid.steps() + 1;
        let nr = self.norm_indices.len();
        Some(
            (0..self.paths)
                .map(|i| self.norms[(i * nr + ri) * nodes + node])
                .collect(),
        )
    }

    /// Path mean of the diffusion energy per node and mode.
    pub fn energy(&self) -> Option<&[f64]> {
        self.energy.as_deref()
    }

    /// Raw dump: magic, `u64` paths/nodes/modes, recorded node times, then the
    /// coefficients path-major, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SEESIMv1")?;
        for d in [self.paths, self.field_nodes.len(), self.modes()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &k in &self.field_nodes {
            w.write_all(&self.grid.nodes()[k].to_le_bytes())?;
        }
        for v in &self.fields {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct ChunkOut {
    fields: Vec<f64>,
    norms: Vec<f64>,
    energy: Vec<f64>,
}

fn check_limits(paths: usize, nodes: usize, modes: usize, extra: usize) -> Result<()> {
    let total = paths
        .checked_mul(nodes)
        .and_then(|v| v.checked_mul(modes))
        .and_then(|v| v.checked_add(extra));
    match total {
        Some(t) if t <= MAX_STORED_VALUES => Ok(()),
        _ => Err(Error::ResourceLimit(format!(
            "{paths} paths x {nodes} nodes x {modes} modes exceeds {MAX_STORED_VALUES} stored values"
        ))),
    }
}

/// Exponential Euler paths with every node recorded.
pub fn simulate_ensemble(
    model: &ModelSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_ensemble_with(model, grid, paths, seed, &SimOptions::default())
}

pub fn simulate_ensemble_with(
    model: &ModelSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    if paths == 0 {
        return invalid("ensemble needs at least one path");
    }
    let op = model.operator();
    let n = op.len();
    let steps = grid.steps();
    let nodes = steps + 1;
    let field_nodes = opts.recording.indices(steps)?;
    let nr = opts.norm_indices.len();
    check_limits(paths, field_nodes.len(), n, paths * nr * nodes)?;
    let decay = DecayTable::new(op, grid);
    let slots = Arc::new(noise_slots(model));
    let xi = model.initial().coeffs().to_vec();
    let chunks = paths.div_ceil(CHUNK);

    let outs: Vec<ChunkOut> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(paths);
            let mut out = ChunkOut {
                fields: Vec::with_capacity((hi - lo) * field_nodes.len() * n),
                norms: Vec::with_capacity((hi - lo) * nr * nodes),
                energy: if opts.energy { vec![0.0; nodes * n] } else { Vec::new() },
            };
            let mut stepper = Stepper::new(model);
            let mut dw = vec![0.0; slots.len()];
            let mut e = vec![0.0; n];
            let mut x = vec![0.0; n];
            let mut path_norms = vec![0.0; nr * nodes];
            for i in lo..hi {
                let mut stream = NoiseStream::new(seed, opts.first_path + i as u64);
                x.copy_from_slice(&xi);
                let mut next_field = 0;
                for m in 0..=steps {
                    if next_field < field_nodes.len() && field_nodes[next_field] == m {
                        out.fields.extend_from_slice(&x);
                        next_field += 1;
                    }
                    for (ri, &r) in opts.norm_indices.iter().enumerate() {
                        path_norms[ri * nodes + m] = hr_norm_raw(op, &x, r);
                    }
                    if opts.energy {
                        stepper.energy(&x, &mut e);
                        for (acc, v) in out.energy[m * n..(m + 1) * n].iter_mut().zip(&e) {
                            *acc += v;
                        }
                    }
                    if m == steps {
                        break;
                    }
                    let dt = grid.dt(m);
                    if !dw.is_empty() {
                        stream.fill(m as u64, &slots, dt.sqrt(), &mut dw);
                    }
                    stepper.step(decay.row(m), dt, &mut x, &dw);
                }
                out.norms.extend_from_slice(&path_norms);
            }
            out
        })
        .collect();

    let mut fields = Vec::with_capacity(paths * field_nodes.len() * n);
    let mut norms = Vec::with_capacity(paths * nr * nodes);
    let mut energy = opts.energy.then(|| vec![0.0; nodes * n]);
    for o in outs {
        fields.extend_from_slice(&o.fields);
        norms.extend_from_slice(&o.norms);
        if let Some(acc) = energy.as_mut() {
            for (a, v) in acc.iter_mut().zip(&o.energy) {
                *a += v;
            }
        }
    }
    if let Some(acc) = energy.as_mut() {
        let inv = 1.0 / paths as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    Ok(PathEnsemble {
        model_id: model.id().to_string(),
        seed,
        first_path: opts.first_path,
        grid: grid.clone(),
        operator: op.clone(),
        delta: model.delta(),
        paths,
        field_nodes,
        fields,
        norm_indices: opts.norm_indices.clone(),
        norms,
        energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub max_iterations: usize,
    /// Exponential weight `r <= 0` in `e^{rt} t^λ`.
    pub r: f64,
    pub lambda: f64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    /// Final iterate, every node recorded.
    pub ensemble: PathEnsemble,
    /// `d_j` between consecutive iterates, starting with `d(Y¹, Y⁰)`.
    pub distances: Vec<f64>,
    pub converged: bool,
    /// Set when `d_j` failed to decrease three times in a row.
    pub stalled: bool,
}

/// Fixed-point iteration of the discretized mild-solution map
/// `Φ(Y)_{t_n} = e^{t_n A}ξ + Σ_{m<n} e^{(t_n − t_m)A}(F(Y_{t_m})Δt_m + B(Y_{t_m})ΔW_m)`
/// from `Y⁰ = e^{tA}ξ`, on the same noise as [`simulate_ensemble`].
pub fn picard_solve(
    model: &ModelSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    opts: PicardOptions,
) -> Result<PicardResult> {
    if paths == 0 {
        return invalid("ensemble needs at least one path");
    }
    if !(opts.r <= 0.0) {
        return invalid(format!("Picard weight r must be <= 0, got {}", opts.r));
    }
    if !(opts.p >= 1.0) || !(opts.lambda >= 0.0) {
        return invalid("Picard distance needs p >= 1 and lambda >= 0");
    }
    let op = model.operator();
    let n = op.len();
    let steps = grid.steps();
    let nodes = steps + 1;
    let k = model.noise_len();
    check_limits(paths, 2 * nodes, n, paths * steps * k)?;
    let decay = DecayTable::new(op, grid);
    let slots = noise_slots(model);
    let xi = model.initial().coeffs().to_vec();

    struct PathState {
        y: Vec<f64>,
        dw: Vec<f64>,
    }

    // Y⁰ through the same recursion with zero increments, so that a model
    // without drift and noise reproduces it bit for bit.
    let mut states: Vec<PathState> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut stream = NoiseStream::new(seed, i as u64);
            let mut dw = vec![0.0; steps * k];
            if k > 0 {
                for m in 0..steps {
                    stream.fill(m as u64, &slots, grid.dt(m).sqrt(), &mut dw[m * k..(m + 1) * k]);
                }
            }
            let mut y = vec![0.0; nodes * n];
            y[..n].copy_from_slice(&xi);
            for m in 0..steps {
                let (head, tail) = y.split_at_mut((m + 1) * n);
                for ((t, &h), &d) in tail[..n].iter_mut().zip(&head[m * n..]).zip(decay.row(m)) {
                    *t = d * h;
                }
            }
            PathState { y, dw }
        })
        .collect();

    let weights: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&t| (opts.r * t).exp() * t.powf(opts.lambda))
        .collect();
    let mut distances = Vec::new();
    let mut converged = false;
    let mut stalled = false;
    let mut non_decrease = 0;
    for _ in 0..opts.max_iterations {
        let per_path: Vec<Vec<f64>> = states
            .par_iter_mut()
            .with_min_len(1)
            .map(|st| {
                let mut next = vec![0.0; nodes * n];
                next[..n].copy_from_slice(&xi);
                let mut inc = vec![0.0; n];
                let mut ws = model.workspace();
                let mut diffs = vec![0.0; nodes];
                for m in 0..steps {
                    let dt = grid.dt(m);
                    let ym = &st.y[m * n..(m + 1) * n];
                    let drift = if model.has_zero_drift() { 0.0 } else { dt };
                    let noise = (k > 0).then(|| &st.dw[m * k..(m + 1) * k]);
                    if drift != 0.0 || noise.is_some() {
                        model.combine(ym, drift, noise, &mut ws, &mut inc);
                    } else {
                        inc.fill(0.0);
                    }
                    let (head, tail) = next.split_at_mut((m + 1) * n);
                    let prev = &head[m * n..];
                    for (((t, &h), &d), &c) in tail[..n].iter_mut().zip(prev).zip(decay.row(m)).zip(&inc) {
                        *t = if drift == 0.0 && noise.is_none() { d * h } else { d * (h + c) };
                    }
                }
                for (m, d) in diffs.iter_mut().enumerate() {
                    let a = &next[m * n..(m + 1) * n];
                    let b = &st.y[m * n..(m + 1) * n];
                    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    *d = if opts.p == 2.0 { s } else { s.sqrt().powf(opts.p) };
                }
                st.y = next;
                diffs
            })
            .collect();
        let mut d = 0.0f64;
        for m in 0..nodes {
            let mut acc = 0.0;
            for v in &per_path {
                acc += v[m];
            }
            let lp = (acc / paths as f64).powf(1.0 / opts.p);
            d = d.max(weights[m] * lp);
        }
        if let Some(&last) = distances.last() {
            if d >= last {
                non_decrease += 1;
            } else {
                non_decrease = 0;
            }
        }
        distances.push(d);
        if d == 0.0 {
            converged = true;
            break;
        }
        if non_decrease >= 3 {
            stalled = true;
            break;
        }
    }

    let mut fields = Vec::with_capacity(paths * nodes * n);
    for st in &states {
        fields.extend_from_slice(&st.y);
    }
    let ensemble = PathEnsemble {
        model_id: model.id().to_string(),
        seed,
        first_path: 0,
        grid: grid.clone(),
        operator: op.clone(),
        delta: model.delta(),
        paths,
        field_nodes: (0..nodes).collect(),
        fields,
        norm_indices: Vec::new(),
        norms: Vec::new(),
        energy: None,
    };
    Ok(PicardResult {
        ensemble,
        distances,
        converged,
        stalled,
    })
}
