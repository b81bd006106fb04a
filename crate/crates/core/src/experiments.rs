//! The named experiments behind the command line tool.
//!
//! Each experiment turns an [`ExperimentConfig`] into bound reports and
//! tables. Failures never abort a run: they become unsatisfied reports.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::bounds::{
    apriori_bound, initial_perturbation_bound, temporal_holder_bound, theta, BoundKind,
    BoundReport, HolderArgs,
};
use crate::config::{stream_seed, with_modes, Experiment, ExperimentConfig};
use crate::engine::{
    decay_factors, noise_slots, simulate_ensemble_with, NoiseStream, Recording, SimOptions,
    Stepper, TimeGrid,
};
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    estimate_lp_norm, estimate_moment, ito_isometry_residual, lipschitz_ratio, lp_from_norms,
    mean_stderr, node_norms, weighted_profile, Estimate,
};
use crate::models::presets::{
    anderson, gbm, nemytskii_heat, norm_diffusion, norm_drift, smooth_initial, UNIT_TORUS_NU,
};
use crate::models::{exact_factors, make_rough_initial, InitialSpec, ModelSpec};
use crate::output::{fmt_num, write_file, write_reports_csv, Table};
use crate::special::log_spaced;
use crate::spectral::{chi_constant, kappa_constant, hr_norm, DiagonalOperator, SpectralField};

/// Reports and tables produced by one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub experiment: Experiment,
    pub reports: Vec<BoundReport>,
    pub tables: Vec<Table>,
    /// Raw ensemble dump, written as `<experiment>.bin`.
    pub dump: Option<Vec<u8>>,
}

impl ExperimentOutput {
    fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            reports: Vec::new(),
            tables: Vec::new(),
            dump: None,
        }
    }

    pub fn all_satisfied(&self) -> bool {
        self.reports.iter().all(|r| r.satisfied)
    }

    pub fn report(&self, name: &str) -> Option<&BoundReport> {
        self.reports.iter().find(|r| r.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Runs `f`, turning an error into a failed report named `name`.
    fn part(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<()>) {
        if let Err(e) = f(self) {
            self.reports.push(BoundReport::failed(name, &e.to_string()));
        }
    }
}

pub fn run(experiment: Experiment, cfg: &ExperimentConfig) -> ExperimentOutput {
    let mut out = ExperimentOutput::new(experiment);
    let name = experiment.name();
    out.part(name, |o| match experiment {
        Experiment::Constants => run_constants(cfg, o),
        Experiment::Simulate => run_simulate(cfg, o),
        Experiment::Apriori => run_apriori(cfg, o),
        Experiment::Perturbation => run_perturbation(cfg, o),
        Experiment::Barrier => run_barrier(cfg, o),
        Experiment::Convergence => run_convergence(cfg, o),
        Experiment::Counterexamples => run_counterexamples(cfg, o),
        Experiment::Isometry => run_isometry(cfg, o),
    });
    out
}

/// Writes `<exp>.csv`, one `<exp>_<table>.csv` per table, the optional dump
/// and the `<exp>.json` sidecar. Returns the written paths.
pub fn write_output(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let name = out.experiment.name();
    let mut files = Vec::new();
    let path = dir.join(format!("{name}.csv"));
    write_file(&path, |b| write_reports_csv(&out.reports, b))?;
    files.push(path);
    for t in &out.tables {
        let path = dir.join(format!("{name}_{}.csv", t.name));
        write_file(&path, |b| t.write_csv(b))?;
        files.push(path);
    }
    if let Some(bytes) = &out.dump {
        let path = dir.join(format!("{name}.bin"));
        std::fs::write(&path, bytes)?;
        files.push(path);
    }
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name()?.to_str().map(str::to_string))
        .collect();
    let sidecar = json!({
        "experiment": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "reports": out.reports.len(),
        "all_satisfied": out.all_satisfied(),
        "files": names,
    });
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    files.push(path);
    Ok(files)
}

fn model_or(cfg: &ExperimentConfig, default: impl FnOnce(usize) -> Result<ModelSpec>, n: usize) -> Result<ModelSpec> {
    match cfg.model()? {
        Some(m) => Ok(m),
        None => default(cfg.modes.unwrap_or(n)),
    }
}

/// Uniform unless the initial value is rough; graded grids resolve the
/// singularity at `t = 0`.
fn grid_for(cfg: &ExperimentConfig, model: &ModelSpec, steps: usize, q: f64) -> Result<TimeGrid> {
    let q = cfg.grading.unwrap_or(if model.delta() > 0.0 { q } else { 1.0 });
    TimeGrid::graded(model.profile().horizon, cfg.steps.unwrap_or(steps), q)
}

fn seed_for(cfg: &ExperimentConfig, name: &str) -> u64 {
    stream_seed(cfg.seed(), name)
}

fn norms_only(r: f64) -> SimOptions {
    SimOptions {
        recording: Recording::None,
        norm_indices: vec![r],
        ..Default::default()
    }
}

/// `sup_{t ∈ (0,T]} t^δ ‖e^{tA}ξ‖_H`, by a log grid and golden-section search.
pub fn xi_weighted_sup(op: &DiagonalOperator, xi: &[f64], delta: f64, horizon: f64) -> f64 {
    let f = |t: f64| -> f64 {
        let s: f64 = op
            .eigenvalues()
            .iter()
            .zip(xi)
            .map(|(&lam, &c)| (-2.0 * lam * t).exp() * c * c)
            .sum();
        t.powf(delta) * s.sqrt()
    };
    let ts = log_spaced(horizon * 1e-12, horizon, 2001);
    let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let (k, mut best) = vals
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    if delta == 0.0 {
        best = best.max(xi.iter().map(|c| c * c).sum::<f64>().sqrt());
    }
    if k > 0 && k + 1 < ts.len() {
        let (mut a, mut b) = (ts[k - 1].ln(), ts[k + 1].ln());
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c.exp()) > f(d.exp()) {
                b = d;
            } else {
                a = c;
            }
        }
        best = best.max(f((0.5 * (a + b)).exp()));
    }
    best
}

fn run_constants(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let model = model_or(cfg, |n| nemytskii_heat(n, 0.25), 64)?;
    let pr = *model.profile();
    let op = model.operator();
    let t = pr.horizon;
    let delta = model.delta();
    let lambda = cfg.lambda.unwrap_or(delta.max(pr.alpha + pr.alpha_hat - 1.0).max(pr.beta + pr.beta_hat - 0.5));
    let varrho = cfg
        .varrho
        .unwrap_or(0.5 * (1.0 - pr.alpha).min(0.5 - pr.beta));
    let xi_factor = xi_weighted_sup(op, model.initial().coeffs(), delta, t);
    let xi_norm = hr_norm(model.initial(), op, -delta)?;
    let mut table = Table::new("values", &["quantity", "value"]);
    let mut row = |name: &str, v: Result<f64>, out: &mut ExperimentOutput| match v {
        Ok(v) => table.push(vec![name.to_string(), fmt_num(v)]),
        Err(e) => out
            .reports
            .push(BoundReport::failed(format!("constants_{name}"), &e.to_string())),
    };
    for (name, v) in [
        ("alpha", pr.alpha),
        ("alpha_hat", pr.alpha_hat),
        ("beta", pr.beta),
        ("beta_hat", pr.beta_hat),
        ("L0", pr.l0),
        ("L0_hat", pr.l0_hat),
        ("L1", pr.l1),
        ("L1_hat", pr.l1_hat),
        ("p", pr.p),
        ("T", t),
        ("delta", delta),
        ("lambda", lambda),
        ("varrho", varrho),
        ("xi_factor", xi_factor),
        ("xi_norm", xi_norm),
    ] {
        row(name, Ok(v), out);
    }
    row("chi_alpha", chi_constant(op, pr.alpha, t), out);
    row("chi_beta", chi_constant(op, pr.beta, t), out);
    row("chi_delta", chi_constant(op, delta, t), out);
    row("kappa_varrho", kappa_constant(op, varrho, t), out);
    row("theta", theta(&pr, op, lambda), out);
    let k = apriori_bound(&pr, op, delta, lambda, xi_factor);
    let k_val = k.as_ref().ok().copied();
    row("apriori_bound", k, out);
    row("lipschitz_bound", initial_perturbation_bound(&pr, op, delta, lambda, 1.0), out);
    if let Some(k) = k_val {
        let args = HolderArgs {
            delta,
            lambda,
            varrho,
            s: 0.25 * t,
            t: 0.5 * t,
            xi_norm,
            k,
        };
        row("holder_bound", temporal_holder_bound(&pr, op, args), out);
    }
    out.tables.push(table);
    Ok(())
}

fn run_simulate(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let model = model_or(cfg, |n| nemytskii_heat(n, 0.25), 64)?;
    let grid = grid_for(cfg, &model, 256, 2.0)?;
    let r = cfg.r.unwrap_or(0.0);
    let p = model.profile().p;
    let dump = cfg.dump.unwrap_or(false);
    let opts = SimOptions {
        recording: if dump { Recording::All } else { Recording::None },
        norm_indices: vec![r],
        ..Default::default()
    };
    let ens = simulate_ensemble_with(&model, &grid, cfg.paths.unwrap_or(1000), seed_for(cfg, "simulate"), &opts)?;
    let mut table = Table::new("summary", &["t", "mean", "L2", "Lp", "stderr"]);
    for (k, &t) in grid.nodes().iter().enumerate() {
        let Ok(norms) = node_norms(&ens, k, r) else {
            continue;
        };
        let lp = lp_from_norms(&norms, p)?;
        table.push_nums(&[t, mean_stderr(&norms).value, lp_from_norms(&norms, 2.0)?.value, lp.value, lp.stderr]);
    }
    out.tables.push(table);
    if dump {
        let mut buf = Vec::new();
        ens.write_binary(&mut buf)?;
        out.dump = Some(buf);
    }
    Ok(())
}

fn run_apriori(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let model = model_or(cfg, |n| nemytskii_heat(n, 0.25), 64)?;
    let pr = *model.profile();
    let op = model.operator();
    let delta = model.delta();
    let lambda = cfg.lambda.unwrap_or(delta);
    let xi_factor = xi_weighted_sup(op, model.initial().coeffs(), delta, pr.horizon);
    let theo = if lambda >= pr.lambda_ceiling() && delta < pr.lambda_ceiling() {
        f64::INFINITY
    } else {
        apriori_bound(&pr, op, delta, lambda, xi_factor)?
    };
    let grid = grid_for(cfg, &model, 256, 2.0)?;
    let paths = cfg.paths.unwrap_or(4000);
    let ens = simulate_ensemble_with(&model, &grid, paths, seed_for(cfg, "apriori"), &norms_only(0.0))?;
    let prof = weighted_profile(&ens, lambda, pr.p, 0.0)?;
    let mut table = Table::new("profile", &["t", "weighted_norm", "stderr", "bound"]);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut violations = 0usize;
    for (t, e) in &prof {
        table.push_nums(&[*t, e.value, e.stderr, theo]);
        if e.value > theo {
            violations += 1;
        }
        if e.value > best.0 {
            best = (e.value, e.stderr, *t);
        }
    }
    out.reports.push(
        BoundReport::new("apriori_weighted_sup", BoundKind::Upper, theo, best.0, best.1, 0.0)
            .with_meta("t", best.2)
            .with_meta("delta", delta)
            .with_meta("lambda", lambda)
            .with_meta("xi_factor", xi_factor)
            .with_meta("paths", paths)
            .with_meta("nodes", prof.len())
            .with_meta("node_violations", violations),
    );
    out.tables.push(table);
    Ok(())
}

/// Bound on the Lipschitz ratio, `+∞` when `δ` reaches the ceiling.
fn lipschitz_bound(model: &ModelSpec, delta: f64) -> Result<f64> {
    let pr = model.profile();
    if delta >= pr.lambda_ceiling() {
        return Ok(f64::INFINITY);
    }
    initial_perturbation_bound(pr, model.operator(), delta, delta, 1.0)
}

fn run_perturbation(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let model = model_or(cfg, |n| nemytskii_heat(n, 0.25), 64)?;
    let op = model.operator().clone();
    let p = model.profile().p;
    let grid = grid_for(cfg, &model, 256, 2.0)?;
    let paths = cfg.paths.unwrap_or(500);
    let seed = seed_for(cfg, "perturbation");
    let eps = cfg.epsilon.unwrap_or(0.5);
    let opts = SimOptions {
        recording: Recording::Every(4),
        ..Default::default()
    };
    let x = model.initial().clone();
    let ens_x = simulate_ensemble_with(&model, &grid, paths, seed, &opts)?;
    let deltas = cfg.deltas.clone().unwrap_or_else(|| vec![0.0, 0.25, 0.45]);
    let mut table = Table::new("ratios", &["delta", "ratio", "stderr", "t", "bound"]);
    for &delta in &deltas {
        let name = format!("lipschitz_delta_{}", fmt_num(delta));
        out.part(&name.clone(), |o| {
            // a rough direction normalized in H_{-δ}, so ‖x − y‖_{H_{-δ}} = ε
            let rho = make_rough_initial(&op, 2.0 * delta - 0.75);
            let scale = eps / hr_norm(&rho, &op, -delta)?;
            let y: Vec<f64> = x.coeffs().iter().zip(rho.coeffs()).map(|(a, b)| a + scale * b).collect();
            let y = SpectralField::from_coeffs(&op, y, 0.0)?;
            let ens_y = simulate_ensemble_with(&model.with_initial(&y)?, &grid, paths, seed, &opts)?;
            let ratio = lipschitz_ratio(&ens_x, &ens_y, &x, &y, delta, p)?;
            let bound = lipschitz_bound(&model, delta)?;
            table.push_nums(&[delta, ratio.value, ratio.stderr, ratio.t, bound]);
            o.reports.push(
                BoundReport::new(name, BoundKind::Upper, bound, ratio.value, ratio.stderr, 0.0)
                    .with_meta("t", ratio.t)
                    .with_meta("epsilon", eps)
                    .with_meta("paths", paths),
            );
            Ok(())
        });
    }
    out.tables.push(table);
    out.part("anderson_lipschitz", |o| anderson_pair(cfg, o));
    Ok(())
}

/// Coupled Anderson pair at `δ = 0.3`: domination, and a ratio that is
/// bit-identical when both initial values are doubled.
fn anderson_pair(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let n = cfg.modes.unwrap_or(64).min(16);
    let delta = 0.3;
    let model = anderson(n, UNIT_TORUS_NU, 1.0, smooth_initial(n))?;
    let op = model.operator().clone();
    let grid = TimeGrid::graded(1.0, 64, 2.0)?;
    let paths = cfg.paths.unwrap_or(500).min(256);
    let seed = seed_for(cfg, "perturbation/anderson");
    let opts = SimOptions {
        recording: Recording::All,
        ..Default::default()
    };
    let x = model.initial().clone();
    let rho = make_rough_initial(&op, 2.0 * delta - 0.75);
    let scale = 0.5 / hr_norm(&rho, &op, -delta)?;
    let y: Vec<f64> = x.coeffs().iter().zip(rho.coeffs()).map(|(a, b)| a + scale * b).collect();
    let y = SpectralField::from_coeffs(&op, y, 0.0)?;
    let ratio_for = |x: &SpectralField, y: &SpectralField| -> Result<f64> {
        let ex = simulate_ensemble_with(&model.with_initial(x)?, &grid, paths, seed, &opts)?;
        let ey = simulate_ensemble_with(&model.with_initial(y)?, &grid, paths, seed, &opts)?;
        Ok(lipschitz_ratio(&ex, &ey, x, y, delta, 2.0)?.value)
    };
    let double = |v: &SpectralField| {
        SpectralField::from_coeffs(&op, v.coeffs().iter().map(|c| 2.0 * c).collect(), 0.0)
    };
    let r1 = ratio_for(&x, &y)?;
    let r2 = ratio_for(&double(&x)?, &double(&y)?)?;
    let bound = lipschitz_bound(&model, delta)?;
    out.reports.push(
        BoundReport::new("anderson_lipschitz_delta_0.3", BoundKind::Upper, bound, r1, 0.0, 0.0)
            .with_meta("modes", n)
            .with_meta("paths", paths),
    );
    let mut same = BoundReport::new("anderson_doubling_invariance", BoundKind::Within, r1, r2, 0.0, 0.0)
        .with_meta("bits_equal", r1.to_bits() == r2.to_bits());
    same.satisfied = r1.to_bits() == r2.to_bits();
    out.reports.push(same);
    Ok(())
}

fn run_barrier(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let gamma = cfg.gamma.unwrap_or(0.5);
    let r = cfg.r.unwrap_or(1.0);
    let sweep = cfg.n_sweep.clone().unwrap_or_else(|| vec![16, 64, 256, 1024]);
    if sweep.is_empty() {
        return invalid("barrier needs a nonempty N sweep");
    }
    let base = cfg.model_file()?;
    let paths = cfg.paths.unwrap_or(1000);
    let seed = seed_for(cfg, "barrier");
    let mut table = Table::new("sweep", &["N", "xi_norm_sq", "lower_bound", "moment", "stderr"]);
    let mut prev: Option<(usize, Vec<f64>, f64)> = None;
    for &n in &sweep {
        let model = match &base {
            Some(f) => {
                let m = ModelSpec::from_file(&with_modes(f, n)?)?;
                if m.diffusion_kind() != "anderson" || !m.has_zero_drift() {
                    return Err(Error::WrongModel(format!(
                        "barrier needs the Anderson model, got {}/{}",
                        m.drift_kind(),
                        m.diffusion_kind()
                    )));
                }
                m
            }
            None => anderson(n, UNIT_TORUS_NU, 1.0, InitialSpec::Rough { gamma, scale: 1.0 })?,
        };
        let op = model.operator();
        let eta = op.eta();
        let grid = grid_for(cfg, &model, 256, 3.0)?;
        let horizon = grid.horizon();
        let ens = simulate_ensemble_with(&model, &grid, paths, seed, &norms_only(-r))?;
        let last = grid.steps();
        let norms = node_norms(&ens, last, -r)?;
        let sq: Vec<f64> = norms.iter().map(|v| v * v).collect();
        let moment = mean_stderr(&sq);
        let l2 = estimate_lp_norm(&ens, last, 2.0, -r)?;
        let xi_sq = hr_norm(model.initial(), op, -0.5)?.powi(2);
        let lb = eta.powf(-r) * (0.5 * -(-2.0 * eta * horizon).exp_m1()).sqrt() * xi_sq.sqrt();
        table.push_nums(&[n as f64, xi_sq, lb, moment.value, moment.stderr]);
        out.reports.push(
            BoundReport::new(format!("barrier_lower_N{n}"), BoundKind::Lower, lb, l2.value, l2.stderr, 3.0 * l2.stderr)
                .with_meta("N", n)
                .with_meta("gamma", gamma)
                .with_meta("paths", paths),
        );
        if gamma >= 0.5 {
            if let Some((m, p_sq, _)) = &prev {
                // same seed and canonical slots: the truncations share noise
                let d: Vec<f64> = sq.iter().zip(p_sq).map(|(a, b)| a - b).collect();
                let e = mean_stderr(&d);
                out.reports.push(
                    BoundReport::new(format!("barrier_monotone_N{m}_N{n}"), BoundKind::Lower, 0.0, e.value, e.stderr, 3.0 * e.stderr)
                        .with_meta("paired", true),
                );
            }
        }
        prev = Some((n, sq, moment.value));
    }
    if gamma < 0.5 && sweep.len() >= 2 {
        let col = table.column("moment").unwrap_or_default();
        let (a, b) = (col[col.len() - 2], col[col.len() - 1]);
        let change = (b - a).abs() / a;
        out.reports.push(
            BoundReport::new("barrier_stabilization", BoundKind::Upper, 0.1, change, 0.0, 0.0)
                .with_meta("from_N", sweep[sweep.len() - 2])
                .with_meta("to_N", sweep[sweep.len() - 1]),
        );
    }
    out.tables.push(table);
    Ok(())
}

/// Squared strong errors at `T` for one path on each level of the sweep.
fn path_errors(
    model: &ModelSpec,
    gens: &[Vec<f64>],
    levels: &[(usize, f64, Vec<f64>)],
    fine_steps: usize,
    fine_dt: f64,
    seed: u64,
    path: u64,
) -> Vec<f64> {
    let slots = noise_slots(model);
    let k = slots.len();
    let mut stream = NoiseStream::new(seed, path);
    let mut inc = vec![0.0; fine_steps * k];
    for m in 0..fine_steps {
        stream.fill(m as u64, &slots, fine_dt.sqrt(), &mut inc[m * k..(m + 1) * k]);
    }
    let mut w_t = vec![0.0; k];
    for m in 0..fine_steps {
        for l in 0..k {
            w_t[l] += inc[m * k + l];
        }
    }
    let xi = model.initial().coeffs();
    let horizon = fine_dt * fine_steps as f64;
    let mut exact = xi.to_vec();
    exact_factors(model.operator().eigenvalues(), gens, horizon, &w_t, &mut exact);
    let mut stepper = Stepper::new(model);
    let mut dw = vec![0.0; k];
    levels
        .iter()
        .map(|(steps, dt, decay)| {
            let block = fine_steps / steps;
            let mut x = xi.to_vec();
            for j in 0..*steps {
                dw.iter_mut().for_each(|v| *v = 0.0);
                for m in j * block..(j + 1) * block {
                    for l in 0..k {
                        dw[l] += inc[m * k + l];
                    }
                }
                stepper.step(decay, *dt, &mut x, &dw);
            }
            x.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum()
        })
        .collect()
}

fn run_convergence(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let model = match cfg.model()? {
        Some(m) => m,
        None => gbm(1.0, 0.5)?,
    };
    let gens = match (model.has_zero_drift(), model.generators()) {
        (true, Some(g)) => g.to_vec(),
        _ => {
            return Err(Error::WrongModel(format!(
                "convergence needs commuting_linear diffusion and zero drift, got {}/{}",
                model.drift_kind(),
                model.diffusion_kind()
            )))
        }
    };
    let horizon = model.profile().horizon;
    let mut dts = cfg
        .dt_sweep
        .clone()
        .unwrap_or_else(|| (4..=9).map(|e| 2f64.powi(-e)).collect());
    dts.sort_by(|a, b| b.total_cmp(a));
    let steps_of = |dt: f64| -> Result<usize> {
        let s = (horizon / dt).round();
        if !(dt > 0.0) || s < 1.0 || ((s * dt - horizon).abs() > 1e-9 * horizon) {
            return invalid(format!("dt = {dt} does not divide T = {horizon}"));
        }
        Ok(s as usize)
    };
    let fine_dt = *dts.last().ok_or_else(|| Error::InvalidParameter("empty dt sweep".into()))?;
    let fine_steps = steps_of(fine_dt)?;
    let mut levels = Vec::new();
    for &dt in &dts {
        let s = steps_of(dt)?;
        if fine_steps % s != 0 {
            return invalid(format!("dt = {dt} is not a multiple of the finest step"));
        }
        let dt = horizon / s as f64;
        levels.push((s, dt, decay_factors(model.operator(), dt)));
    }
    let paths = cfg.paths.unwrap_or(10_000);
    let seed = seed_for(cfg, "convergence");
    const CHUNK: usize = 64;
    let chunks: Vec<Vec<Vec<f64>>> = (0..paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(paths))
                .map(|i| path_errors(&model, &gens, &levels, fine_steps, fine_dt, seed, i as u64))
                .collect()
        })
        .collect();
    let per_path: Vec<Vec<f64>> = chunks.into_iter().flatten().collect();
    let mut table = Table::new("errors", &["dt", "steps", "strong_error", "stderr"]);
    let mut errs = Vec::new();
    for (j, (s, dt, _)) in levels.iter().enumerate() {
        let norms: Vec<f64> = per_path.iter().map(|e| e[j].sqrt()).collect();
        let e = lp_from_norms(&norms, 2.0)?;
        table.push_nums(&[*dt, *s as f64, e.value, e.stderr]);
        errs.push((*dt, e));
    }
    out.tables.push(table);
    let max_err = errs.iter().map(|(_, e)| e.value).fold(0.0, f64::max);
    if max_err == 0.0 {
        out.reports.push(
            BoundReport::new("convergence_exact", BoundKind::Upper, 0.0, 0.0, 0.0, 0.0)
                .with_meta("levels", errs.len()),
        );
    } else {
        let pts: Vec<(f64, f64)> = errs
            .iter()
            .filter(|(_, e)| e.value > 0.0)
            .map(|(dt, e)| (dt.ln(), e.value.ln()))
            .collect();
        let slope = ls_slope(&pts);
        out.reports.push(
            BoundReport::new("convergence_order", BoundKind::Within, 0.5, slope, 0.0, 0.15)
                .with_meta("paths", paths)
                .with_meta("levels", pts.len()),
        );
    }
    out.part("exact_moment", |o| exact_moment(cfg, &model, &gens, fine_steps, o));
    Ok(())
}

/// Least-squares slope of `y` on `x`; NaN for fewer than two points.
pub fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// `E‖X_T‖²_H = Σ_b ξ_b² exp((Σ_l g_{lb}² − 2λ_b) T)` for commuting linear noise.
pub fn commuting_second_moment(model: &ModelSpec, gens: &[Vec<f64>], t: f64) -> f64 {
    let xi = model.initial().coeffs();
    model
        .operator()
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(b, &lam)| {
            let q: f64 = gens.iter().map(|g| g[b] * g[b]).sum();
            xi[b] * xi[b] * ((q - 2.0 * lam) * t).exp()
        })
        .sum()
}

fn exact_moment(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    gens: &[Vec<f64>],
    steps: usize,
    out: &mut ExperimentOutput,
) -> Result<()> {
    let horizon = model.profile().horizon;
    let grid = TimeGrid::uniform(horizon, steps)?;
    let paths = cfg.moment_paths.unwrap_or(100_000);
    let ens = simulate_ensemble_with(model, &grid, paths, seed_for(cfg, "convergence/moment"), &norms_only(0.0))?;
    let e = estimate_moment(&ens, steps, 2.0, 0.0)?;
    let theo = commuting_second_moment(model, gens, horizon);
    out.reports.push(
        BoundReport::new("exact_moment", BoundKind::Within, theo, e.value, e.stderr, 3.0 * e.stderr)
            .with_meta("paths", paths)
            .with_meta("steps", steps),
    );
    Ok(())
}

fn run_counterexamples(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let given = cfg.model()?;
    let (diffusion, drift) = match given {
        None => (
            Some(norm_diffusion(cfg.modes.unwrap_or(16), 0.5, InitialSpec::Rough { gamma: 0.0, scale: 1.0 })?),
            Some(norm_drift(
                cfg.modes.unwrap_or(16),
                1.0,
                InitialSpec::Modes {
                    pairs: vec![(0, 0.5), (1, 1.0)],
                },
            )?),
        ),
        Some(m) if m.diffusion_kind() == "norm_diffusion" && m.has_zero_drift() => (Some(m), None),
        Some(m) if m.norm_drift().is_some() && m.has_zero_diffusion() => (None, Some(m)),
        Some(m) => {
            return Err(Error::WrongModel(format!(
                "counterexamples need norm_diffusion or norm_drift, got {}/{}",
                m.drift_kind(),
                m.diffusion_kind()
            )))
        }
    };
    let times = cfg.times.clone().unwrap_or_else(|| vec![0.1, 0.5, 1.0]);
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
        return invalid("counterexample times must be positive");
    }
    if let Some(m) = diffusion {
        out.part("norm_diffusion", |o| norm_diffusion_case(cfg, &m, &times, o));
    }
    if let Some(m) = drift {
        out.part("norm_drift", |o| norm_drift_case(cfg, &m, &times, o));
    }
    Ok(())
}

fn time_grid(times: &[f64], steps: usize) -> Result<(TimeGrid, Vec<usize>)> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let grid = TimeGrid::uniform(horizon, steps)?;
    let idx = times
        .iter()
        .map(|&t| {
            grid.node_index(t)
                .ok_or_else(|| Error::OutOfRange(format!("t = {t} is not a grid node")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, idx))
}

/// `E‖X_t‖²_{H_{-r}}` in closed form when the noise direction is a single mode.
pub fn norm_diffusion_moment(model: &ModelSpec, t: f64, r: f64) -> Option<f64> {
    let w = model.norm_diffusion_weights()?;
    let nz: Vec<usize> = (0..w.len()).filter(|&b| w[b] != 0.0).collect();
    let &[b0] = nz.as_slice() else {
        return None;
    };
    let op = model.operator();
    let lam = op.eigenvalues();
    let weights = op.power_weights(-2.0 * r);
    let xi = model.initial().coeffs();
    let w0 = w[b0];
    let c = w0 * w0 - 2.0 * lam[b0];
    let psi: f64 = (0..xi.len())
        .map(|b| {
            let d = -2.0 * lam[b] - c;
            let f = if d.abs() < 1e-12 {
                t * (c * t).exp()
            } else {
                ((-2.0 * lam[b] * t).exp() - (c * t).exp()) / d
            };
            xi[b] * xi[b] * f
        })
        .sum();
    let free: f64 = (0..xi.len())
        .map(|b| weights[b] * (-2.0 * lam[b] * t).exp() * xi[b] * xi[b])
        .sum();
    Some(free + weights[b0] * w0 * w0 * psi)
}

fn norm_diffusion_case(cfg: &ExperimentConfig, model: &ModelSpec, times: &[f64], out: &mut ExperimentOutput) -> Result<()> {
    let r = cfg.r.unwrap_or(1.0);
    let (grid, idx) = time_grid(times, cfg.steps.unwrap_or(1000))?;
    let paths = cfg.paths.unwrap_or(10_000);
    let ens = simulate_ensemble_with(model, &grid, paths, seed_for(cfg, "counterexamples/norm_diffusion"), &norms_only(-r))?;
    let op = model.operator();
    let eta = op.eta();
    let w = model.norm_diffusion_weights().unwrap_or_default();
    let sup_spec = -op.min_eigenvalue();
    let xi_half = hr_norm(model.initial(), op, -0.5)?;
    let tol = cfg.tolerance.unwrap_or(0.05);
    let weights = op.power_weights(-2.0 * r);
    for (&t, &k) in times.iter().zip(&idx) {
        let semi_w: f64 = op
            .eigenvalues()
            .iter()
            .zip(w)
            .zip(&weights)
            .map(|((&lam, &c), &q)| q * (-2.0 * lam * t).exp() * c * c)
            .sum::<f64>()
            .sqrt();
        let lb = (-eta.abs() * t).exp()
            * (0.5 * -(-2.0 * (eta - sup_spec) * t).exp_m1()).sqrt()
            * semi_w
            * xi_half;
        let e = estimate_lp_norm(&ens, k, 2.0, -r)?;
        out.reports.push(
            BoundReport::new(format!("norm_diffusion_lower_t{}", fmt_num(t)), BoundKind::Lower, lb, e.value, e.stderr, 3.0 * e.stderr)
                .with_meta("t", t)
                .with_meta("paths", paths),
        );
        if let Some(m) = norm_diffusion_moment(model, t, r) {
            let e: Estimate = estimate_moment(&ens, k, 2.0, -r)?;
            out.reports.push(
                BoundReport::new(format!("norm_diffusion_moment_t{}", fmt_num(t)), BoundKind::Within, m, e.value, e.stderr, tol * m)
                    .with_meta("t", t),
            );
        }
    }
    Ok(())
}

fn norm_drift_case(cfg: &ExperimentConfig, model: &ModelSpec, times: &[f64], out: &mut ExperimentOutput) -> Result<()> {
    let (grid, idx) = time_grid(times, cfg.steps.unwrap_or(10_000))?;
    let opts = SimOptions {
        recording: Recording::Nodes(idx.clone()),
        ..Default::default()
    };
    let ens = simulate_ensemble_with(model, &grid, 1, seed_for(cfg, "counterexamples/norm_drift"), &opts)?;
    let op = model.operator();
    let (mode, w) = model.norm_drift().ok_or_else(|| Error::WrongModel("norm_drift expected".into()))?;
    let b0 = op.index_of(mode).ok_or_else(|| Error::ModeMismatch(format!("mode {mode}")))?;
    let lam = op.eigenvalues();
    let eta = op.eta();
    let xi = model.initial().coeffs();
    let mut rest = xi.to_vec();
    rest[b0] = 0.0;
    let rest_norm = hr_norm(&SpectralField::from_coeffs(op, rest, 0.0)?, op, -1.0)?;
    let inf_lam = op.min_eigenvalue();
    for (&t, &k) in times.iter().zip(&idx) {
        let lb = w * (-(lam[b0] + eta.abs()) * t).exp() * -(-(inf_lam + eta) * t).exp_m1() * rest_norm;
        let emp = ens.field(0, k)?[b0] - (-lam[b0] * t).exp() * xi[b0];
        out.reports.push(
            BoundReport::new(format!("norm_drift_lower_t{}", fmt_num(t)), BoundKind::Lower, lb, emp, 0.0, 1e-6)
                .with_meta("t", t)
                .with_meta("steps", grid.steps()),
        );
    }
    Ok(())
}

fn run_isometry(cfg: &ExperimentConfig, out: &mut ExperimentOutput) -> Result<()> {
    let t = cfg.times.as_ref().and_then(|v| v.first().copied()).unwrap_or(0.5);
    let steps = cfg.steps.unwrap_or((t * 256.0).round().max(1.0) as usize);
    let r = cfg.r.unwrap_or(0.5);
    let tol = cfg.tolerance.unwrap_or(0.05);
    let models = match cfg.model()? {
        Some(m) => vec![m],
        None => {
            let n = cfg.modes.unwrap_or(32);
            vec![gbm(1.0, 0.5)?, anderson(n, UNIT_TORUS_NU, 1.0, smooth_initial(n))?]
        }
    };
    for model in models {
        let id = model.id().to_string();
        out.part(&format!("isometry_{id}"), |o| {
            let grid = TimeGrid::uniform(t, steps)?;
            let paths = cfg.paths.unwrap_or(10_000);
            let opts = SimOptions {
                recording: Recording::None,
                norm_indices: vec![-r],
                energy: true,
                ..Default::default()
            };
            let ens = simulate_ensemble_with(&model, &grid, paths, seed_for(cfg, &format!("isometry/{id}")), &opts)?;
            let chk = ito_isometry_residual(&model, &ens, steps, r)?;
            let mut rep = BoundReport::new(format!("isometry_{id}"), BoundKind::Upper, tol, chk.residual, 0.0, 0.0)
                .with_meta("lhs", chk.lhs)
                .with_meta("lhs_stderr", chk.lhs_stderr)
                .with_meta("rhs", chk.rhs)
                .with_meta("t", t)
                .with_meta("paths", paths);
            rep.satisfied = chk.residual < tol;
            o.reports.push(rep);
            if let (true, Some(g)) = (model.has_zero_drift(), model.generators()) {
                let w = model.operator().power_weights(-2.0 * r);
                let xi = model.initial().coeffs();
                let theo: f64 = model
                    .operator()
                    .eigenvalues()
                    .iter()
                    .enumerate()
                    .map(|(b, &lam)| {
                        let q: f64 = g.iter().map(|g| g[b] * g[b]).sum();
                        w[b] * xi[b] * xi[b] * ((q - 2.0 * lam) * t).exp()
                    })
                    .sum();
                let rel = (chk.lhs - theo).abs() / theo;
                o.reports.push(
                    BoundReport::new(format!("isometry_{id}_closed_form"), BoundKind::Within, theo, chk.lhs, chk.lhs_stderr, 3.0 * chk.lhs_stderr)
                        .with_meta("relative_error", rel),
                );
            }
            Ok(())
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_periodic_laplacian;

    #[test]
    fn xi_sup_matches_closed_form() {
        // single mode: t^δ e^{-λt} peaks at t = δ/λ
        let op = DiagonalOperator::explicit(vec![0], vec![2.0], 1.0).unwrap();
        let v = xi_weighted_sup(&op, &[1.0], 0.5, 1.0);
        let exact = 0.25f64.sqrt() * (-0.5f64).exp();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
        assert_eq!(xi_weighted_sup(&op, &[3.0], 0.0, 1.0), 3.0);
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 0.5 * i as f64 - 1.0)).collect();
        assert!((ls_slope(&pts) - 0.5).abs() < 1e-14);
        assert!(ls_slope(&pts[..1]).is_nan());
    }

    #[test]
    fn norm_diffusion_moment_limits() {
        let m = norm_diffusion(4, 1.0, InitialSpec::Rough { gamma: 0.0, scale: 1.0 }).unwrap();
        // at t = 0 only the initial value contributes
        let op = make_periodic_laplacian(4, 1.0, 1.0).unwrap();
        let at0 = norm_diffusion_moment(&m, 0.0, 1.0).unwrap();
        assert!((at0 - hr_norm(m.initial(), &op, -1.0).unwrap().powi(2)).abs() < 1e-13);
        // mode 0 with λ = 0 and w0 = 1: d/dt E X_0² = E‖X‖², so the moment grows
        assert!(norm_diffusion_moment(&m, 1.0, 1.0).unwrap() > at0);
    }

    #[test]
    fn failures_become_reports() {
        let cfg = ExperimentConfig {
            dt_sweep: Some(vec![0.3]),
            ..Default::default()
        };
        let out = run(Experiment::Convergence, &cfg);
        assert!(!out.all_satisfied());
        assert!(out.reports[0].metadata.contains_key("error"));
    }

    #[test]
    fn wrong_model_kind() {
        let cfg = ExperimentConfig {
            model: Some(crate::config::ModelRef::Inline(Box::new(
                anderson(4, 1.0, 1.0, smooth_initial(4)).unwrap().to_file(),
            ))),
            ..Default::default()
        };
        let out = run(Experiment::Convergence, &cfg);
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].metadata["error"].as_str().unwrap().contains("wrong model"));
    }

    #[test]
    fn zero_diffusion_isometry_is_exact() {
        let op = make_periodic_laplacian(4, 1.0, 1.0).unwrap();
        let m = ModelSpec::new(
            "still",
            op,
            crate::models::DriftSpec::Zero,
            crate::models::DiffusionSpec::Zero,
            Default::default(),
            smooth_initial(4),
            None,
        )
        .unwrap();
        let cfg = ExperimentConfig {
            model: Some(crate::config::ModelRef::Inline(Box::new(m.to_file()))),
            paths: Some(2),
            ..Default::default()
        };
        let out = run(Experiment::Isometry, &cfg);
        let r = out.report("isometry_still").unwrap();
        assert!(r.satisfied);
        assert!(r.empirical < 1e-12, "{}", r.empirical);
    }
}
