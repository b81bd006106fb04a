//! Beta function, the generalized exponential `E_{a,b}`, and a numerical
//! certificate for the singular Gronwall inequality
//! `e(t) <= a t^{-α} + b ∫_0^t (t-s)^{-β} e(s) ds  =>  e(t) <= a t^{-α} E_{α,β}[b t^{1-β}]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Lanczos sum and shifted argument for `Γ(x)`, `x >= 0.5`.
fn lanczos_parts(x: f64) -> (f64, f64) {
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    (a, z + LANCZOS_G + 0.5)
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return ln_gamma(x + 1.0) - x.ln();
    }
    let (a, t) = lanczos_parts(x);
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * t.ln() - t + a.ln()
}

/// `ln Γ(y) - ln Γ(x + y)` without cancelling the large `y ln y` terms.
fn ln_gamma_ratio(x: f64, y: f64) -> f64 {
    if y < 8.0 {
        return ln_gamma(y) - ln_gamma(x + y);
    }
    let (ay, _) = lanczos_parts(y);
    let (axy, txy) = lanczos_parts(x + y);
    (y - 0.5) * (-x / txy).ln_1p() - x * txy.ln() + x + (ay / axy).ln()
}

fn small_integer(v: f64) -> Option<u32> {
    (v.fract() == 0.0 && (1.0..=64.0).contains(&v)).then_some(v as u32)
}

/// 𝔹(x,y) = Γ(x)Γ(y)/Γ(x+y). Exactly symmetric.
pub fn beta_function(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite() {
        return invalid(format!("beta arguments must be positive, got ({x}, {y})"));
    }
    Ok(beta_unchecked(x, y))
}

pub(crate) fn beta_unchecked(x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    // 𝔹(x, n) = (n-1)! / (x (x+1) ... (x+n-1))
    let product = |x: f64, n: u32| {
        let mut v = 1.0 / x;
        for k in 1..n {
            v *= k as f64 / (x + k as f64);
        }
        v
    };
    if let Some(n) = small_integer(hi) {
        return product(lo, n);
    }
    if let Some(n) = small_integer(lo) {
        return product(hi, n);
    }
    (ln_gamma(lo) + ln_gamma_ratio(lo, hi)).exp()
}

/// Parameters of `E_{a,b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenExpParams {
    pub a: f64,
    pub b: f64,
    pub tolerance: f64,
    pub max_terms: usize,
}

impl GenExpParams {
    pub const DEFAULT_TOLERANCE: f64 = 1e-12;
    pub const DEFAULT_MAX_TERMS: usize = 1_000_000;

    pub fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_terms: Self::DEFAULT_MAX_TERMS,
        }
    }
}

/// Truncated series value with a certified bound on the neglected tail.
/// `value` is `+∞` when the partial sums overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenExpValue {
    pub value: f64,
    pub tail_bound: f64,
    pub terms: usize,
}

/// `E_{a,b}[x] = 1 + Σ_{n>=1} x^n Π_{k<n} 𝔹(1-b, k(1-b)+1-a)`.
pub fn gen_exponential(params: GenExpParams, x: f64) -> Result<GenExpValue> {
    let GenExpParams {
        a,
        b,
        tolerance,
        max_terms,
    } = params;
    if !(a < 1.0 && b < 1.0) {
        return invalid(format!("E_(a,b) needs a, b < 1, got ({a}, {b})"));
    }
    if !(x >= 0.0) {
        return invalid(format!("E_(a,b) argument must be nonnegative, got {x}"));
    }
    if !(tolerance > 0.0) || max_terms == 0 {
        return invalid("tolerance and max_terms must be positive");
    }
    if x == 0.0 {
        return Ok(GenExpValue {
            value: 1.0,
            tail_bound: 0.0,
            terms: 1,
        });
    }
    if x.is_infinite() {
        return Ok(GenExpValue {
            value: f64::INFINITY,
            tail_bound: 0.0,
            terms: 1,
        });
    }
    let c = 1.0 - b;
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut n = 0usize;
    loop {
        let ratio = x * beta_unchecked(c, n as f64 * c + 1.0 - a);
        // second argument grows with n, so later ratios are smaller: geometric tail
        if n >= 1 && term <= tolerance * sum && ratio < 1.0 {
            return Ok(GenExpValue {
                value: sum,
                tail_bound: term * ratio / (1.0 - ratio),
                terms: n + 1,
            });
        }
        if n >= max_terms {
            return Err(Error::SeriesDiverged(max_terms));
        }
        term *= ratio;
        sum += term;
        n += 1;
        if !sum.is_finite() {
            return Ok(GenExpValue {
                value: f64::INFINITY,
                tail_bound: 0.0,
                terms: n + 1,
            });
        }
    }
}

/// `E_{a,b}[x]` at the default tolerance.
pub fn gen_exp(a: f64, b: f64, x: f64) -> Result<f64> {
    gen_exponential(GenExpParams::new(a, b), x).map(|v| v.value)
}

/// One output row of [`gronwall_certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallRow {
    pub t: f64,
    pub e: f64,
    pub bound: f64,
    /// `bound - e`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub rows: Vec<GronwallRow>,
    pub subintervals: usize,
}

impl GronwallReport {
    /// True when `e <= bound (1 + rel_tol)` at every row.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.rows.iter().all(|r| r.e <= r.bound * (1.0 + rel_tol))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Default Volterra resolution.
pub const GRONWALL_SUBINTERVALS: usize = 1 << 12;

/// Solves the saturated Volterra equation
/// `e(t) = a t^{-α} + b ∫_0^t (t-s)^{-β} e(s) ds` and compares it with the
/// closed-form bound at the requested times.
///
/// Writing `e(s) = s^{-α} g(s)`, `g` is frozen at the left end of each cell
/// and the kernel `(t-s)^{-β} s^{-α}` is integrated exactly over the cell.
/// Since the true `g` is nondecreasing the discrete solution stays below the
/// true one, so any violation of the bound is a real one.
pub fn gronwall_certify(
    a: f64,
    b: f64,
    alpha: f64,
    beta: f64,
    horizon: f64,
    times: &[f64],
) -> Result<GronwallReport> {
    gronwall_certify_with(a, b, alpha, beta, horizon, times, GRONWALL_SUBINTERVALS)
}

pub fn gronwall_certify_with(
    a: f64,
    b: f64,
    alpha: f64,
    beta: f64,
    horizon: f64,
    times: &[f64],
    subintervals: usize,
) -> Result<GronwallReport> {
    if !(alpha < 1.0) || !(beta < 1.0) {
        return invalid(format!("need alpha, beta < 1, got ({alpha}, {beta})"));
    }
    if !(a >= 0.0 && b >= 0.0) {
        return invalid("a and b must be nonnegative");
    }
    if !(horizon > 0.0) || subintervals == 0 {
        return invalid("horizon and subintervals must be positive");
    }
    if let Some(&t) = times.iter().find(|&&t| !(t > 0.0 && t <= horizon)) {
        return invalid(format!("output time {t} outside (0, T]"));
    }
    let kernel = Kernel { alpha, beta };
    let h = horizon / subintervals as f64;
    let g = kernel.solve_nodes(a, b, h, subintervals);
    let params = GenExpParams::new(alpha, beta);
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let m = ((t / h).floor() as usize).min(subintervals);
        let mut integral = 0.0;
        for (j, &gj) in g.iter().enumerate().take(m + 1) {
            let lo = j as f64 * h;
            if lo >= t {
                break;
            }
            let hi = ((j + 1) as f64 * h).min(t);
            integral += gj * (kernel.tail(t, lo) - kernel.tail(t, hi));
        }
        let e = a * t.powf(-alpha) + b * integral;
        let bound = a * t.powf(-alpha) * gen_exponential(params, b * t.powf(1.0 - beta))?.value;
        rows.push(GronwallRow {
            t,
            e,
            bound,
            slack: bound - e,
        });
    }
    Ok(GronwallReport { rows, subintervals })
}

/// The kernel `(t-s)^{-β} s^{-α}`.
struct Kernel {
    alpha: f64,
    beta: f64,
}

impl Kernel {
    /// `g_j = t_j^α e(t_j)` on the uniform node grid, `g_0 = a`.
    fn solve_nodes(&self, a: f64, b: f64, h: f64, n: usize) -> Vec<f64> {
        let (alpha, beta) = (self.alpha, self.beta);
        let (xq, wq) = gauss_legendre_unit(8);
        // u = j + x_q in cell j, i - u = d - x_q with d = i - j
        let u_pow: Vec<[f64; 8]> = (0..n)
            .map(|j| std::array::from_fn(|q| (j as f64 + xq[q]).powf(-alpha)))
            .collect();
        let d_pow: Vec<[f64; 8]> = (0..=n)
            .map(|d| std::array::from_fn(|q| (d as f64 - xq[q]).powf(-beta)))
            .collect();
        let scale = h.powf(1.0 - alpha - beta);
        let full = beta_unchecked(1.0 - alpha, 1.0 - beta);
        let mut g = Vec::with_capacity(n + 1);
        g.push(a);
        for i in 1..=n {
            let fi = i as f64;
            let mut acc = 0.0;
            if i == 1 {
                acc += g[0] * full;
            } else {
                acc += g[0] * fi.powf(-beta) * pochhammer_series(beta, alpha, 1.0 / fi, 1.0);
                acc += g[i - 1] * fi.powf(-alpha) * pochhammer_series(alpha, beta, 1.0 / fi, 1.0);
                for (j, &gj) in g.iter().enumerate().take(i - 1).skip(1) {
                    let (up, dp) = (&u_pow[j], &d_pow[i - j]);
                    let mut w = 0.0;
                    for q in 0..8 {
                        w += wq[q] * up[q] * dp[q];
                    }
                    acc += gj * w;
                }
            }
            let t = fi * h;
            let e = a * t.powf(-alpha) + b * scale * acc;
            g.push(t.powf(alpha) * e);
        }
        g
    }

    /// `∫_c^t (t-s)^{-β} s^{-α} ds` for `0 <= c <= t`.
    fn tail(&self, t: f64, c: f64) -> f64 {
        let (alpha, beta) = (self.alpha, self.beta);
        if c >= t {
            return 0.0;
        }
        let scale = t.powf(1.0 - alpha - beta);
        let rho = (t - c) / t;
        if rho <= 0.5 {
            return scale * rho.powf(1.0 - beta) * pochhammer_series(alpha, beta, rho, 1.0);
        }
        let full = beta_unchecked(1.0 - alpha, 1.0 - beta);
        let sigma = c / t;
        let head = if sigma == 0.0 {
            0.0
        } else {
            sigma.powf(1.0 - alpha) * pochhammer_series(beta, alpha, sigma, 1.0)
        };
        scale * (full - head)
    }
}

/// `Σ_k (p)_k / k! · z^k / (k + w - q)`, the term-wise integral of
/// `∫_0^1 u^{-q} (1 - z u)^{-p} du` scaled so that `w = 1`. Requires `z <= 1/2`
/// for fast convergence.
fn pochhammer_series(p: f64, q: f64, z: f64, w: f64) -> f64 {
    let mut coef = 1.0;
    let mut zk = 1.0;
    let mut sum = 1.0 / (w - q);
    for k in 1..400 {
        let kf = k as f64;
        coef *= (p + kf - 1.0) / kf;
        zk *= z;
        let term = coef * zk / (kf + w - q);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `count` log-spaced points in `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}
