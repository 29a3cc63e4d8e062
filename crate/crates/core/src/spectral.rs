//! Spectral fields on the 2-torus: sharp truncation, dealiased products,
//! the linear Schrodinger flow, and Sobolev norms.
//!
//! A field is stored as a dense square array of Fourier coefficients over
//! `[-K, K]^2` with `K = ceil(sqrt(N^2 - 1))`; entries outside the shell
//! `<k> <= N` are structurally zero.  Fields are immutable values once
//! built; every operation returns a fresh field and is safe to call from
//! many workers at once.  FFT plans are cached per thread.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("grid size {m} cannot hold a degree-{degree} product (needs >= {needed})")]
    GridTooSmall { m: usize, degree: usize, needed: usize },
    #[error("mode ({kx},{ky}) lies outside the shell of cutoff {cutoff}")]
    OutOfShell { kx: i32, ky: i32, cutoff: u32 },
    #[error("coefficient buffer holds {got} entries, cutoff {cutoff} needs {expected}")]
    BadBuffer { cutoff: u32, expected: usize, got: usize },
}

/// Lattice frequency on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Wavenumber {
    pub kx: i32,
    pub ky: i32,
}

impl Wavenumber {
    pub fn new(kx: i32, ky: i32) -> Self {
        Wavenumber { kx, ky }
    }

    /// |k|^2 as an exact integer.
    pub fn norm_sq(self) -> i64 {
        (self.kx as i64).pow(2) + (self.ky as i64).pow(2)
    }

    /// <k>^2 = |k|^2 + 1 as an exact integer.
    pub fn bracket_sq(self) -> i64 {
        self.norm_sq() + 1
    }

    /// <k> = sqrt(|k|^2 + 1).
    pub fn bracket(self) -> f64 {
        (self.bracket_sq() as f64).sqrt()
    }

    /// Shell membership <k> <= N, decided in integer arithmetic.
    pub fn in_shell(self, cutoff: u32) -> bool {
        self.bracket_sq() <= (cutoff as i64).pow(2)
    }
}

/// Side radius of the dense storage square for a cutoff: smallest K with
/// K^2 >= N^2 - 1.  The outermost ring can be structurally zero; the tight
/// support bound is `shell_radius`.
pub fn storage_radius(cutoff: u32) -> i32 {
    let target = (cutoff as i64).pow(2) - 1;
    let mut k = (target as f64).sqrt().floor() as i64;
    while k * k < target {
        k += 1;
    }
    while k > 0 && (k - 1) * (k - 1) >= target {
        k -= 1;
    }
    k as i32
}

/// Largest coordinate magnitude of any in-shell mode: floor(sqrt(N^2 - 1)).
pub fn shell_radius(cutoff: u32) -> i32 {
    let target = (cutoff as i64).pow(2) - 1;
    let mut k = (target as f64).sqrt().floor() as i64;
    while k * k > target {
        k -= 1;
    }
    while (k + 1) * (k + 1) <= target {
        k += 1;
    }
    k as i32
}

/// All modes of the shell <k> <= N in row-major (ky, then kx) order.
pub fn shell_modes(cutoff: u32) -> Vec<Wavenumber> {
    let k = storage_radius(cutoff);
    let mut out = Vec::new();
    for ky in -k..=k {
        for kx in -k..=k {
            let w = Wavenumber::new(kx, ky);
            if w.in_shell(cutoff) {
                out.push(w);
            }
        }
    }
    out
}

/// Modes of the dyadic band N/2 < <k> <= N, in row-major order.
pub fn band_modes(cutoff: u32) -> Vec<Wavenumber> {
    shell_modes(cutoff)
        .into_iter()
        .filter(|w| 4 * w.bracket_sq() > (cutoff as i64).pow(2))
        .collect()
}

/// Truncated Fourier coefficient array, the simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    cutoff: u32,
    k_max: i32,
    side: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zero(cutoff: u32) -> Self {
        assert!(cutoff >= 1, "cutoff must be positive");
        let k_max = storage_radius(cutoff);
        let side = (2 * k_max + 1) as usize;
        SpectralField { cutoff, k_max, side, coeffs: vec![Complex64::new(0.0, 0.0); side * side] }
    }

    pub fn from_fn(cutoff: u32, mut f: impl FnMut(Wavenumber) -> Complex64) -> Self {
        let mut u = SpectralField::zero(cutoff);
        for ky in -u.k_max..=u.k_max {
            for kx in -u.k_max..=u.k_max {
                let w = Wavenumber::new(kx, ky);
                if w.in_shell(cutoff) {
                    let idx = u.index(w);
                    u.coeffs[idx] = f(w);
                }
            }
        }
        u
    }

    /// Single-mode field a * e^{i k.x}.
    pub fn single_mode(cutoff: u32, k: Wavenumber, a: Complex64) -> Self {
        let mut u = SpectralField::zero(cutoff);
        u.set(k, a);
        u
    }

    /// Rebuild from a dense row-major buffer; out-of-shell entries must be zero.
    pub fn from_raw(cutoff: u32, coeffs: Vec<Complex64>) -> Result<Self, SpectralError> {
        let k_max = storage_radius(cutoff.max(1));
        let side = (2 * k_max + 1) as usize;
        if coeffs.len() != side * side {
            return Err(SpectralError::BadBuffer { cutoff, expected: side * side, got: coeffs.len() });
        }
        let u = SpectralField { cutoff: cutoff.max(1), k_max, side, coeffs };
        for ky in -k_max..=k_max {
            for kx in -k_max..=k_max {
                let w = Wavenumber::new(kx, ky);
                if !w.in_shell(u.cutoff) && u.coeffs[u.index(w)] != Complex64::new(0.0, 0.0) {
                    return Err(SpectralError::OutOfShell { kx, ky, cutoff: u.cutoff });
                }
            }
        }
        Ok(u)
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    /// Tight support bound: no in-shell mode has a coordinate beyond this.
    pub fn support_radius(&self) -> i32 {
        shell_radius(self.cutoff)
    }

    fn index(&self, k: Wavenumber) -> usize {
        debug_assert!(k.kx.abs() <= self.k_max && k.ky.abs() <= self.k_max);
        ((k.ky + self.k_max) as usize) * self.side + (k.kx + self.k_max) as usize
    }

    pub fn get(&self, k: Wavenumber) -> Complex64 {
        if k.kx.abs() > self.k_max || k.ky.abs() > self.k_max {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[self.index(k)]
    }

    /// Panics when the mode lies outside the shell; structural zeros stay zero.
    pub fn set(&mut self, k: Wavenumber, v: Complex64) {
        assert!(k.in_shell(self.cutoff), "mode ({},{}) outside shell of cutoff {}", k.kx, k.ky, self.cutoff);
        let idx = self.index(k);
        self.coeffs[idx] = v;
    }

    /// In-shell modes paired with coefficients, fixed row-major order.
    pub fn iter_shell(&self) -> impl Iterator<Item = (Wavenumber, Complex64)> + '_ {
        let k_max = self.k_max;
        let cutoff = self.cutoff;
        (-k_max..=k_max).flat_map(move |ky| (-k_max..=k_max).map(move |kx| Wavenumber::new(kx, ky))).filter_map(
            move |w| {
                if w.in_shell(cutoff) {
                    Some((w, self.coeffs[self.index(w)]))
                } else {
                    None
                }
            },
        )
    }

    /// Sharp truncation to <k> <= n.
    pub fn project(&self, n: u32) -> SpectralField {
        let out_cutoff = self.cutoff.min(n.max(1));
        let mut out = SpectralField::zero(out_cutoff);
        for (w, c) in self.iter_shell() {
            if w.in_shell(out_cutoff) {
                let idx = out.index(w);
                out.coeffs[idx] = c;
            }
        }
        out
    }

    /// Dyadic band N/2 < <k> <= N of this field.
    pub fn delta_band(&self, n: u32) -> SpectralField {
        let mut out = SpectralField::zero(n.min(self.cutoff).max(1));
        let n_sq = (n as i64).pow(2);
        for (w, c) in self.iter_shell() {
            if w.bracket_sq() <= n_sq && 4 * w.bracket_sq() > n_sq {
                let idx = out.index(w);
                out.coeffs[idx] = c;
            }
        }
        out
    }

    /// Spatial mean A u = u_0.
    pub fn mean(&self) -> Complex64 {
        self.get(Wavenumber::new(0, 0))
    }

    /// (sum <k>^{2s} |u_k|^2)^{1/2}.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (w, c) in self.iter_shell() {
            acc += (w.bracket_sq() as f64).powf(s) * c.norm_sqr();
        }
        acc.sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// sum |k|^2 |u_k|^2, the gradient part of the energy.
    pub fn gradient_energy(&self) -> f64 {
        let mut acc = 0.0;
        for (w, c) in self.iter_shell() {
            acc += w.norm_sq() as f64 * c.norm_sqr();
        }
        acc
    }

    /// e^{it Delta}: multiply mode k by exp(-i |k|^2 t).
    pub fn linear_flow(&self, t: f64) -> SpectralField {
        let mut out = self.clone();
        for ky in -out.k_max..=out.k_max {
            for kx in -out.k_max..=out.k_max {
                let w = Wavenumber::new(kx, ky);
                if w.in_shell(out.cutoff) {
                    let idx = out.index(w);
                    let phase = Complex64::from_polar(1.0, -(w.norm_sq() as f64) * t);
                    out.coeffs[idx] *= phase;
                }
            }
        }
        out
    }

    /// Pointwise-in-k multiply by exp(+i |k|^2 t); inverse of `linear_flow`.
    pub fn linear_flow_back(&self, t: f64) -> SpectralField {
        self.linear_flow(-t)
    }

    pub fn scale(&self, a: Complex64) -> SpectralField {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            *c *= a;
        }
        out
    }

    pub fn add(&self, rhs: &SpectralField) -> SpectralField {
        self.combine(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &SpectralField) -> SpectralField {
        self.combine(rhs, |a, b| a - b)
    }

    /// self + a * rhs, allowing mixed cutoffs (result takes the larger shell).
    pub fn add_scaled(&self, a: Complex64, rhs: &SpectralField) -> SpectralField {
        self.combine(rhs, |x, y| x + a * y)
    }

    fn combine(&self, rhs: &SpectralField, f: impl Fn(Complex64, Complex64) -> Complex64) -> SpectralField {
        let cutoff = self.cutoff.max(rhs.cutoff);
        let mut out = SpectralField::zero(cutoff);
        for ky in -out.k_max..=out.k_max {
            for kx in -out.k_max..=out.k_max {
                let w = Wavenumber::new(kx, ky);
                if w.in_shell(cutoff) {
                    let idx = out.index(w);
                    out.coeffs[idx] = f(self.get(w), rhs.get(w));
                }
            }
        }
        out
    }

    /// A(u vbar) = sum_k u_k conj(v_k).
    pub fn mean_pair(&self, v: &SpectralField) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let k = self.k_max.min(v.k_max);
        for ky in -k..=k {
            for kx in -k..=k {
                let w = Wavenumber::new(kx, ky);
                acc += self.get(w) * v.get(w).conj();
            }
        }
        acc
    }

    /// Largest coefficient difference against another field.
    pub fn max_diff(&self, rhs: &SpectralField) -> f64 {
        let k = self.k_max.max(rhs.k_max);
        let mut best = 0.0f64;
        for ky in -k..=k {
            for kx in -k..=k {
                let w = Wavenumber::new(kx, ky);
                best = best.max((self.get(w) - rhs.get(w)).norm());
            }
        }
        best
    }

    /// Raw dense buffer in row-major (ky, kx) order; out-of-shell slots are zero.
    pub fn raw(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn raw_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

/// Uniform M x M sample grid of a trigonometric polynomial on [0, 2pi)^2.
#[derive(Debug, Clone)]
pub struct PhysicalGrid {
    pub m: usize,
    pub values: Vec<Complex64>,
}

impl PhysicalGrid {
    pub fn zero(m: usize) -> Self {
        PhysicalGrid { m, values: vec![Complex64::new(0.0, 0.0); m * m] }
    }

    /// Average of the samples; equals the k=0 coefficient whenever the
    /// represented polynomial has no mode with a coordinate multiple of M.
    pub fn mean(&self) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for v in &self.values {
            acc += v;
        }
        acc / self.values.len() as f64
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(m: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut map = cell.borrow_mut();
        map.entry((m, forward))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                let dir = if forward { FftDirection::Forward } else { FftDirection::Inverse };
                planner.plan_fft(m, dir)
            })
            .clone()
    })
}

/// In-place 2D FFT over a row-major M x M buffer.
fn fft2(values: &mut [Complex64], m: usize, forward: bool) {
    let fft = plan(m, forward);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for row in values.chunks_exact_mut(m) {
        fft.process_with_scratch(row, &mut scratch);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m {
        for i in 0..m {
            col[i] = values[i * m + j];
        }
        fft.process_with_scratch(&mut col, &mut scratch);
        for i in 0..m {
            values[i * m + j] = col[i];
        }
    }
}

/// Smallest integer >= n whose prime factors are all in {2, 3, 5, 7}.
pub fn next_smooth(n: usize) -> usize {
    fn is_smooth(mut v: usize) -> bool {
        for p in [2usize, 3, 5, 7] {
            while v % p == 0 {
                v /= p;
            }
        }
        v == 1
    }
    let mut m = n.max(1);
    while !is_smooth(m) {
        m += 1;
    }
    m
}

/// Grid size for a product whose output is read back only on modes
/// |k| <= out_k_max: aliases from the support box of radius sum(k_maxes)
/// cannot reach the retained modes, and the read window itself stays
/// residue-injective even when it is wider than the product support.
pub fn grid_size_projected(input_k_maxes: &[i32], out_k_max: i32) -> usize {
    let support: i64 = input_k_maxes.iter().map(|&k| k as i64).sum();
    // every input must also land alias-free on its own
    let place = input_k_maxes.iter().map(|&k| 2 * k as i64 + 1).max().unwrap_or(1);
    let need = (support + out_k_max as i64 + 1)
        .max(2 * out_k_max as i64 + 1)
        .max(place);
    next_smooth(need as usize)
}

/// Grid size reproducing the entire product support exactly.
pub fn grid_size_full(input_k_maxes: &[i32]) -> usize {
    let support: i64 = input_k_maxes.iter().map(|&k| k as i64).sum();
    next_smooth((2 * support + 1) as usize)
}

/// Cutoff whose shell contains every mode a product of fields with these
/// cutoffs can reach.  Each factor lives in the Euclidean disk of radius
/// sqrt(N_i^2 - 1), so the product support is the disk of the summed radii;
/// |k|^2 of a lattice mode is an integer, which makes the floor bound exact.
pub fn full_product_cutoff(cutoffs: &[u32]) -> u32 {
    let s: f64 = cutoffs.iter().map(|&n| ((n as i64).pow(2) as f64 - 1.0).sqrt()).sum();
    let t = (s * s + 1e-9).floor() as i64 + 1;
    let mut n = ((t as f64).sqrt().floor()) as i64;
    while n * n < t {
        n += 1;
    }
    n.max(1) as u32
}

/// Grid size reproducing a product exactly on the whole shell of
/// `out_cutoff` (which must contain the product support).
pub fn grid_size_for_shell(out_cutoff: u32) -> usize {
    next_smooth((2 * shell_radius(out_cutoff) + 1) as usize)
}

/// Samples of the field on the M x M grid, exact whenever all in-shell
/// modes land on distinct grid residues.
pub fn to_physical(u: &SpectralField, m: usize) -> PhysicalGrid {
    let r = u.support_radius();
    assert!(m as i64 >= 2 * r as i64 + 1, "grid {m} cannot place support radius {r}");
    let mut g = PhysicalGrid::zero(m);
    for (w, c) in u.iter_shell() {
        let ix = (w.kx.rem_euclid(m as i32)) as usize;
        let iy = (w.ky.rem_euclid(m as i32)) as usize;
        g.values[iy * m + ix] += c;
    }
    fft2(&mut g.values, m, false);
    g
}

/// Coefficients of the grid function on the shell of `cutoff`.
///
/// Exact whenever no mode of the underlying polynomial aliases into the
/// requested shell; product callers guarantee that through the grid-size
/// helpers above.
pub fn to_spectral(g: &PhysicalGrid, cutoff: u32) -> SpectralField {
    let mut buf = g.values.clone();
    let m = g.m;
    fft2(&mut buf, m, true);
    let norm = 1.0 / (m * m) as f64;
    let mut u = SpectralField::zero(cutoff);
    let r = u.support_radius();
    assert!(m as i64 >= 2 * r as i64 + 1, "grid {m} cannot resolve cutoff {cutoff}");
    for ky in -r..=r {
        for kx in -r..=r {
            let w = Wavenumber::new(kx, ky);
            if w.in_shell(cutoff) {
                let ix = (kx.rem_euclid(m as i32)) as usize;
                let iy = (ky.rem_euclid(m as i32)) as usize;
                let idx = u.index(w);
                u.coeffs[idx] = buf[iy * m + ix] * norm;
            }
        }
    }
    u
}

/// Pointwise combination of several fields on a shared grid, read back on
/// the shell of `out_cutoff`.  The caller picks `m` with the grid-size
/// helpers so the combination is alias-free on the retained modes.
pub fn eval_pointwise(
    inputs: &[&SpectralField],
    m: usize,
    out_cutoff: u32,
    f: impl Fn(&[Complex64]) -> Complex64,
) -> SpectralField {
    let grids: Vec<PhysicalGrid> = inputs.iter().map(|u| to_physical(u, m)).collect();
    let mut out = PhysicalGrid::zero(m);
    let mut args = vec![Complex64::new(0.0, 0.0); inputs.len()];
    for i in 0..m * m {
        for (j, g) in grids.iter().enumerate() {
            args[j] = g.values[i];
        }
        out.values[i] = f(&args);
    }
    to_spectral(&out, out_cutoff)
}
