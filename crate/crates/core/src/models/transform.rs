//! Synthesis and analysis between coefficients in the real trigonometric
//! basis `{1, √2 cos(2πmx), √2 sin(2πmx)}` and values on a uniform grid.
//!
//! Mode `m > 0` is the cosine, mode `-m` the sine. In complex form
//! `b_m = (e_m + e_{-m})/√2` and `b_{-m} = (e_m - e_{-m})/(√2 i)`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Basis {
    Constant,
    Cos(usize),
    Sin(usize),
}

impl Basis {
    fn of(mode: i64) -> Self {
        match mode {
            0 => Basis::Constant,
            m if m > 0 => Basis::Cos(m as usize),
            m => Basis::Sin(m.unsigned_abs() as usize),
        }
    }
}

/// Smallest `2^a 3^b 5^c >= n`.
fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

pub struct TrigTransform {
    size: usize,
    max_freq: usize,
    basis: Vec<Basis>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TrigTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrigTransform")
            .field("size", &self.size)
            .field("max_freq", &self.max_freq)
            .finish()
    }
}

/// Per-thread buffers for [`TrigTransform`].
pub struct TransformScratch {
    pub(crate) buf: Vec<Complex<f64>>,
    pub(crate) vals: Vec<f64>,
    fft: Vec<Complex<f64>>,
}

impl TrigTransform {
    /// Grid of at least `2 (2N + 1)` points for modes with `|mode| <= N`, so
    /// products of two retained fields are resolved without aliasing.
    pub fn new(modes: &[i64]) -> Self {
        let max_freq = modes.iter().map(|m| m.unsigned_abs() as usize).max().unwrap_or(0);
        let size = next_smooth(2 * (2 * max_freq + 1));
        let mut planner = FftPlanner::new();
        Self {
            size,
            max_freq,
            basis: modes.iter().map(|&m| Basis::of(m)).collect(),
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn max_freq(&self) -> usize {
        self.max_freq
    }

    pub fn scratch(&self) -> TransformScratch {
        let len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        TransformScratch {
            buf: vec![Complex::new(0.0, 0.0); self.size],
            vals: vec![0.0; self.size],
            fft: vec![Complex::new(0.0, 0.0); len],
        }
    }

    /// Adds `z · Σ c_i b_i` to the complex spectrum in `buf`.
    pub(crate) fn load(&self, coeffs: &[f64], z: Complex<f64>, buf: &mut [Complex<f64>]) {
        let g = self.size;
        for (&c, &b) in coeffs.iter().zip(&self.basis) {
            if c == 0.0 {
                continue;
            }
            match b {
                Basis::Constant => buf[0] += z * c,
                Basis::Cos(m) => {
                    let v = z * (c * FRAC_1_SQRT_2);
                    buf[m] += v;
                    buf[g - m] += v;
                }
                Basis::Sin(m) => {
                    let v = z * Complex::new(0.0, c * FRAC_1_SQRT_2);
                    buf[m] -= v;
                    buf[g - m] += v;
                }
            }
        }
    }

    /// Spectrum -> grid values, in place.
    pub(crate) fn to_values(&self, s: &mut TransformScratch) {
        self.inverse.process_with_scratch(&mut s.buf, &mut s.fft);
    }

    /// Grid values -> normalized spectrum `ĉ_k`, in place.
    pub(crate) fn to_spectrum(&self, s: &mut TransformScratch) {
        self.forward.process_with_scratch(&mut s.buf, &mut s.fft);
        let inv = 1.0 / self.size as f64;
        for v in s.buf.iter_mut() {
            *v *= inv;
        }
    }

    /// Real coefficients from a normalized spectrum of a real function.
    pub(crate) fn extract(&self, spectrum: &[Complex<f64>], out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(&self.basis) {
            *o = match b {
                Basis::Constant => spectrum[0].re,
                Basis::Cos(m) => SQRT_2 * spectrum[m].re,
                Basis::Sin(m) => -SQRT_2 * spectrum[m].im,
            };
        }
    }

    /// `ĉ_k` for `-size/2 < k <= size/2`, read from a normalized spectrum.
    pub(crate) fn at(&self, spectrum: &[Complex<f64>], k: i64) -> Complex<f64> {
        let g = self.size as i64;
        spectrum[k.rem_euclid(g) as usize]
    }

    /// Grid values of `Σ c_i b_i`; the real parts of `s.buf` afterwards.
    pub fn synthesize(&self, coeffs: &[f64], s: &mut TransformScratch) {
        s.buf.fill(Complex::new(0.0, 0.0));
        self.load(coeffs, Complex::new(1.0, 0.0), &mut s.buf);
        self.to_values(s);
    }

    /// Coefficients of the function whose grid values are in `s.buf` (real parts).
    pub fn analyze(&self, s: &mut TransformScratch, out: &mut [f64]) {
        for v in s.buf.iter_mut() {
            v.im = 0.0;
        }
        self.to_spectrum(s);
        self.extract(&s.buf, out);
    }

    /// Complex coefficient of `e_k` in the basis function with index `i`.
    pub(crate) fn basis_weight(&self, i: usize, k: i64) -> Complex<f64> {
        match self.basis[i] {
            Basis::Constant if k == 0 => Complex::new(1.0, 0.0),
            Basis::Cos(m) if k.unsigned_abs() as usize == m => Complex::new(FRAC_1_SQRT_2, 0.0),
            Basis::Sin(m) if k == m as i64 => Complex::new(0.0, -FRAC_1_SQRT_2),
            Basis::Sin(m) if k == -(m as i64) => Complex::new(0.0, FRAC_1_SQRT_2),
            _ => Complex::new(0.0, 0.0),
        }
    }

    /// Signed frequencies carried by the basis function with index `i`.
    pub(crate) fn basis_freqs(&self, i: usize) -> [i64; 2] {
        match self.basis[i] {
            Basis::Constant => [0, 0],
            Basis::Cos(m) | Basis::Sin(m) => [m as i64, -(m as i64)],
        }
    }

    /// Real coefficient of basis index `i` from complex coefficients `ĥ_{±m}`
    /// of a real function.
    pub(crate) fn real_coeff(&self, i: usize, h: impl Fn(i64) -> Complex<f64>) -> f64 {
        match self.basis[i] {
            Basis::Constant => h(0).re,
            Basis::Cos(m) => SQRT_2 * h(m as i64).re,
            Basis::Sin(m) => -SQRT_2 * h(m as i64).im,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::periodic_mode_order;

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(4098), 4320);
        assert_eq!(next_smooth(130), 135);
        assert_eq!(next_smooth(6), 6);
        assert_eq!(next_smooth(14), 15);
    }

    #[test]
    fn values_of_basis_functions() {
        let modes = periodic_mode_order(3);
        let tr = TrigTransform::new(&modes);
        let mut s = tr.scratch();
        let g = tr.size();
        for (i, &m) in modes.iter().enumerate() {
            let mut c = vec![0.0; modes.len()];
            c[i] = 1.0;
            tr.synthesize(&c, &mut s);
            for j in 0..g {
                let x = j as f64 / g as f64;
                let a = 2.0 * std::f64::consts::PI * m.unsigned_abs() as f64 * x;
                let expect = match m {
                    0 => 1.0,
                    m if m > 0 => SQRT_2 * a.cos(),
                    _ => SQRT_2 * a.sin(),
                };
                assert!((s.buf[j].re - expect).abs() < 1e-13, "mode {m} at {j}");
                assert!(s.buf[j].im.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn round_trip() {
        let modes = periodic_mode_order(7);
        let tr = TrigTransform::new(&modes);
        let mut s = tr.scratch();
        let c: Vec<f64> = (0..modes.len()).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
        tr.synthesize(&c, &mut s);
        let mut back = vec![0.0; c.len()];
        tr.analyze(&mut s, &mut back);
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
