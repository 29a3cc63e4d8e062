//! Windowed time-frequency analysis of mode trajectories and kernels:
//! smooth compactly supported time cutoffs, the twisted line transform
//! that recenters each mode at its free rotation rate, the dispersive
//! norm proxies built on the DFT dual grid, and the discrete one-sided /
//! two-sided Duhamel operators.
//!
//! All norms here are grid proxies: the time grid is whatever uniform
//! grid the trajectory was saved on, the dual grid is its DFT frequency
//! set, and bracket weights are evaluated at the bin frequencies.

use crate::dynamics::Trajectory;
use crate::spectral::{shell_modes, SpectralField, Wavenumber};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

/// Fraction of the bracket-weighted line mass allowed in the top dyadic
/// frequency octave before a norm evaluation is rejected as under-resolved.
pub const LEAK_LIMIT: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum TimeFreqError {
    #[error("window support [{0:.4}, {1:.4}] is not covered by the grid period [{2:.4}, {3:.4})")]
    WindowNotCovered(f64, f64, f64, f64),
    #[error("time grid is not uniform: max spacing deviation {max_dev:.3e}")]
    NonUniformGrid { max_dev: f64 },
    #[error("need at least two time samples")]
    TooFewSamples,
    #[error("top-octave tail holds {tail_fraction:.3} of the line mass (limit {limit}); refine the time grid")]
    Leakage { tail_fraction: f64, limit: f64 },
    #[error("series length {got} does not match grid length {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

fn half_exp(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff profile: identically 1 on [-1, 1], identically 0 outside
/// (-2, 2), and a smooth partition-of-unity ramp in between.
pub fn bump(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        let y = a - 1.0;
        half_exp(1.0 - y) / (half_exp(1.0 - y) + half_exp(y))
    }
}

/// Scaled and recentered cutoff chi((t - center)/tau): identically 1 within
/// tau of the center, supported within 2 tau of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub center: f64,
    pub tau: f64,
}

impl TimeWindow {
    pub fn new(center: f64, tau: f64) -> Self {
        assert!(tau > 0.0, "window scale must be positive");
        TimeWindow { center, tau }
    }

    /// Unit-scale window centered at the origin.
    pub fn unit() -> Self {
        TimeWindow::new(0.0, 1.0)
    }

    /// Largest window whose support is exactly the span [t0, t1].
    pub fn for_span(t0: f64, t1: f64) -> Self {
        assert!(t1 > t0, "window span must be nonempty");
        TimeWindow::new(0.5 * (t0 + t1), 0.25 * (t1 - t0))
    }

    pub fn eval(&self, t: f64) -> f64 {
        bump((t - self.center) / self.tau)
    }

    pub fn support(&self) -> [f64; 2] {
        [self.center - 2.0 * self.tau, self.center + 2.0 * self.tau]
    }
}

/// Uniform time grid together with its DFT dual grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub const DEFAULT_LEN: usize = 1 << 10;

    pub fn new(t0: f64, dt: f64, len: usize) -> Self {
        assert!(dt > 0.0 && len >= 2);
        TimeGrid { t0, dt, len }
    }

    /// Default analysis grid: DEFAULT_LEN points covering the window support.
    pub fn spanning(window: &TimeWindow, len: usize) -> Self {
        let [a, b] = window.support();
        TimeGrid::new(a, (b - a) / len as f64, len)
    }

    /// Recover the grid from a saved uniform time axis.
    pub fn from_times(times: &[f64]) -> Result<Self, TimeFreqError> {
        if times.len() < 2 {
            return Err(TimeFreqError::TooFewSamples);
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if dt <= 0.0 {
            return Err(TimeFreqError::NonUniformGrid { max_dev: f64::NAN });
        }
        let max_dev = times
            .windows(2)
            .map(|w| ((w[1] - w[0]) - dt).abs())
            .fold(0.0, f64::max);
        if max_dev > 1e-9 * dt.abs().max(1e-300) {
            return Err(TimeFreqError::NonUniformGrid { max_dev });
        }
        Ok(TimeGrid::new(times[0], dt, times.len()))
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    /// Grid period; the DFT treats the samples as one period of this length.
    pub fn period(&self) -> f64 {
        self.len as f64 * self.dt
    }

    pub fn d_lambda(&self) -> f64 {
        2.0 * PI / self.period()
    }

    /// Signed dual frequency of bin m.
    pub fn lambda(&self, m: usize) -> f64 {
        let signed = if m <= self.len / 2 { m as i64 } else { m as i64 - self.len as i64 };
        signed as f64 * self.d_lambda()
    }

    pub fn lambda_max(&self) -> f64 {
        PI / self.dt
    }
}

fn bracket_pow(x_sq_plus: f64, e: f64) -> f64 {
    x_sq_plus.powf(e)
}

/// Twisted line transform on a fixed grid: multiplies a mode series by the
/// window and by exp(i |k|^2 t), then takes the dt-scaled DFT, so the free
/// rotation of mode k lands in the zero-frequency bin.
pub struct LineTransform {
    pub grid: TimeGrid,
    window_vals: Vec<f64>,
    bin_prefactors: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
}

impl LineTransform {
    pub fn new(grid: TimeGrid, window: &TimeWindow) -> Result<Self, TimeFreqError> {
        let [a, b] = window.support();
        let lo = grid.t0;
        let hi = grid.t0 + grid.period();
        let slack = 1e-9 * grid.dt;
        if a < lo - slack || b > hi + slack {
            return Err(TimeFreqError::WindowNotCovered(a, b, lo, hi));
        }
        let window_vals = (0..grid.len).map(|j| window.eval(grid.time(j))).collect();
        let bin_prefactors = (0..grid.len)
            .map(|m| grid.dt * Complex64::from_polar(1.0, -grid.lambda(m) * grid.t0))
            .collect();
        let fft = FftPlanner::new().plan_fft(grid.len, FftDirection::Forward);
        Ok(LineTransform { grid, window_vals, bin_prefactors, fft })
    }

    pub fn from_times(times: &[f64], window: &TimeWindow) -> Result<Self, TimeFreqError> {
        LineTransform::new(TimeGrid::from_times(times)?, window)
    }

    /// Transform one mode line; `norm_sq` is the squared wavenumber of the
    /// mode the series belongs to (zero for an untwisted transform).
    pub fn twisted_line(&self, series: &[Complex64], norm_sq: f64) -> Result<Vec<Complex64>, TimeFreqError> {
        if series.len() != self.grid.len {
            return Err(TimeFreqError::LengthMismatch { got: series.len(), expected: self.grid.len });
        }
        let mut buf: Vec<Complex64> = (0..self.grid.len)
            .map(|j| {
                series[j]
                    * self.window_vals[j]
                    * Complex64::from_polar(1.0, norm_sq * self.grid.time(j))
            })
            .collect();
        self.fft.process(&mut buf);
        for (m, z) in buf.iter_mut().enumerate() {
            *z *= self.bin_prefactors[m];
        }
        Ok(buf)
    }

    /// Fraction of the line's squared mass carried by the top dyadic octave
    /// of the dual grid.
    pub fn tail_fraction(&self, line: &[Complex64]) -> f64 {
        let half = self.grid.lambda_max() / 2.0;
        let mut tail = 0.0;
        let mut total = 0.0;
        for (m, z) in line.iter().enumerate() {
            let w = z.norm_sqr();
            total += w;
            if self.grid.lambda(m).abs() >= half {
                tail += w;
            }
        }
        if total > 0.0 {
            tail / total
        } else {
            0.0
        }
    }
}

struct TailMeter {
    tail: f64,
    total: f64,
}

impl TailMeter {
    fn new() -> Self {
        TailMeter { tail: 0.0, total: 0.0 }
    }

    fn absorb(&mut self, lt: &LineTransform, line: &[Complex64], weight: f64) {
        let half = lt.grid.lambda_max() / 2.0;
        for (m, z) in line.iter().enumerate() {
            let w = weight * z.norm_sqr();
            self.total += w;
            if lt.grid.lambda(m).abs() >= half {
                self.tail += w;
            }
        }
    }

    fn check(&self) -> Result<(), TimeFreqError> {
        if self.total > 0.0 {
            let f = self.tail / self.total;
            if f > LEAK_LIMIT {
                return Err(TimeFreqError::Leakage { tail_fraction: f, limit: LEAK_LIMIT });
            }
        }
        Ok(())
    }
}

/// Dispersive-weighted spacetime norm of a windowed trajectory: the l2 sum
/// over modes of bracket-weighted dual-grid line masses,
/// sum_k <k>^{2s} sum_m <lambda_m>^{2b} |twisted_k(m)|^2 dlambda / 2 pi.
/// The dual measure is normalized so that (s, b) = (0, 0) reproduces the
/// discrete spacetime l2 norm of the windowed samples.
pub fn xsb_norm(traj: &Trajectory, window: &TimeWindow, s: f64, b: f64) -> Result<f64, TimeFreqError> {
    let lt = LineTransform::from_times(&traj.times, window)?;
    let measure = lt.grid.d_lambda() / (2.0 * PI);
    let mut total = 0.0;
    let mut meter = TailMeter::new();
    for k in shell_modes(traj.cutoff) {
        let series: Vec<Complex64> = traj.states.iter().map(|u| u.get(k)).collect();
        if series.iter().all(|z| z.norm_sqr() == 0.0) {
            continue;
        }
        let line = lt.twisted_line(&series, k.norm_sq() as f64)?;
        let wk = bracket_pow(k.bracket_sq() as f64, s);
        meter.absorb(&lt, &line, wk);
        for (m, z) in line.iter().enumerate() {
            let lam = lt.grid.lambda(m);
            total += wk * bracket_pow(1.0 + lam * lam, b) * z.norm_sqr() * measure;
        }
    }
    meter.check()?;
    Ok(total.sqrt())
}

/// Twisted dual-grid lines of a kernel: row wavenumbers k, column
/// wavenumbers k*, one line per (k, k*) pair, each twisted at the row's
/// rotation rate.
pub struct KernelSpectra {
    pub grid: TimeGrid,
    pub rows: Vec<Wavenumber>,
    pub cols: Vec<Wavenumber>,
    /// lines[row * cols.len() + col][m]
    pub lines: Vec<Vec<Complex64>>,
}

impl KernelSpectra {
    /// Twist every kernel entry line; `series` yields the (row, col) time
    /// series on the grid.
    pub fn build(
        lt: &LineTransform,
        rows: Vec<Wavenumber>,
        cols: Vec<Wavenumber>,
        mut series: impl FnMut(usize, usize) -> Vec<Complex64>,
    ) -> Result<Self, TimeFreqError> {
        let mut lines = Vec::with_capacity(rows.len() * cols.len());
        let mut meter = TailMeter::new();
        for (ri, k) in rows.iter().enumerate() {
            let nsq = k.norm_sq() as f64;
            for ci in 0..cols.len() {
                let line = lt.twisted_line(&series(ri, ci), nsq)?;
                meter.absorb(lt, &line, 1.0);
                lines.push(line);
            }
        }
        meter.check()?;
        Ok(KernelSpectra { grid: lt.grid, rows, cols, lines })
    }

    fn lambda_weights(&self, b: f64) -> Vec<f64> {
        let measure = self.grid.d_lambda() / (2.0 * PI);
        (0..self.grid.len)
            .map(|m| {
                let lam = self.grid.lambda(m);
                bracket_pow(1.0 + lam * lam, b) * measure
            })
            .collect()
    }

    /// Hilbert-Schmidt style norm: l2 over rows, columns and dual bins with
    /// the bracket weight <lambda>^{2b}.
    pub fn zb_norm(&self, b: f64) -> f64 {
        let w = self.lambda_weights(b);
        let mut total = 0.0;
        for line in &self.lines {
            for (m, z) in line.iter().enumerate() {
                total += w[m] * z.norm_sqr();
            }
        }
        total.sqrt()
    }

    /// zb norm with the row-column separation factor (1 + |k - k*| / l)^kappa
    /// on each entry, accumulated in log space; kappa large enough to
    /// overflow the factor still yields a finite logarithm internally, but
    /// the returned norm may be infinite.
    pub fn weighted_zb_norm(&self, b: f64, kappa: f64, l: f64) -> f64 {
        assert!(l > 0.0);
        let w = self.lambda_weights(b);
        let ncols = self.cols.len();
        let mut log_terms: Vec<f64> = Vec::new();
        for (ri, k) in self.rows.iter().enumerate() {
            for (ci, ks) in self.cols.iter().enumerate() {
                let dx = (k.kx - ks.kx) as f64;
                let dy = (k.ky - ks.ky) as f64;
                let sep = (dx * dx + dy * dy).sqrt();
                let log_factor = 2.0 * kappa * (1.0 + sep / l).ln();
                let line = &self.lines[ri * ncols + ci];
                let mass: f64 =
                    line.iter().enumerate().map(|(m, z)| w[m] * z.norm_sqr()).sum();
                if mass > 0.0 {
                    log_terms.push(log_factor + mass.ln());
                }
            }
        }
        if log_terms.is_empty() {
            return 0.0;
        }
        let peak = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_terms.iter().map(|t| (t - peak).exp()).sum();
        (0.5 * (peak + sum.ln())).exp()
    }

    /// Apply the kernel to a column-indexed vector, returning the
    /// bracket-weighted image with the L2 dual measure folded in as
    /// sqrt-weights; the squared l2 norm of the output is then the squared
    /// image norm.
    pub fn apply(&self, b: f64, g: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(g.len(), self.cols.len());
        let w: Vec<f64> = self.lambda_weights(b).iter().map(|x| x.sqrt()).collect();
        let ncols = self.cols.len();
        let nlam = self.grid.len;
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows.len() * nlam];
        for ri in 0..self.rows.len() {
            for ci in 0..ncols {
                let gc = g[ci];
                if gc.norm_sqr() == 0.0 {
                    continue;
                }
                let line = &self.lines[ri * ncols + ci];
                let row_out = &mut out[ri * nlam..(ri + 1) * nlam];
                for (m, z) in line.iter().enumerate() {
                    row_out[m] += w[m] * z * gc;
                }
            }
        }
        out
    }

    /// Norm estimate from one random start: `iters` rounds of the normal
    /// map followed by one application; converges to yb_norm from below.
    pub fn probe_norm(&self, b: f64, start: &[Complex64], iters: usize) -> f64 {
        assert_eq!(start.len(), self.cols.len());
        let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut x = start.to_vec();
        let n = norm(&x);
        if n == 0.0 {
            return 0.0;
        }
        for z in x.iter_mut() {
            *z /= n;
        }
        for _ in 0..iters {
            let y = self.apply(b, &x);
            let mut xn = self.apply_adjoint(b, &y);
            let nn = norm(&xn);
            if nn == 0.0 {
                return 0.0;
            }
            for z in xn.iter_mut() {
                *z /= nn;
            }
            x = xn;
        }
        norm(&self.apply(b, &x))
    }

    fn apply_adjoint(&self, b: f64, y: &[Complex64]) -> Vec<Complex64> {
        let w: Vec<f64> = self.lambda_weights(b).iter().map(|x| x.sqrt()).collect();
        let ncols = self.cols.len();
        let nlam = self.grid.len;
        assert_eq!(y.len(), self.rows.len() * nlam);
        let mut out = vec![Complex64::new(0.0, 0.0); ncols];
        for ri in 0..self.rows.len() {
            let row_y = &y[ri * nlam..(ri + 1) * nlam];
            for ci in 0..ncols {
                let line = &self.lines[ri * ncols + ci];
                let mut acc = Complex64::new(0.0, 0.0);
                for (m, z) in line.iter().enumerate() {
                    acc += (w[m] * z).conj() * row_y[m];
                }
                out[ci] += acc;
            }
        }
        out
    }

    /// Operator norm from the column l2 space to the bracket-weighted image
    /// space, computed by power iteration on the normal operator; always at
    /// most the zb norm.
    pub fn yb_norm(&self, b: f64) -> f64 {
        let ncols = self.cols.len();
        if ncols == 0 || self.rows.is_empty() {
            return 0.0;
        }
        // deterministic full-support start vector
        let mut x: Vec<Complex64> = (0..ncols)
            .map(|i| Complex64::from_polar(1.0, 0.7 * i as f64 + 0.3))
            .collect();
        let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nx = norm(&x);
        for z in x.iter_mut() {
            *z /= nx;
        }
        let mut sigma = 0.0;
        for _ in 0..300 {
            let y = self.apply(b, &x);
            let s = norm(&y);
            if s == 0.0 {
                return 0.0;
            }
            let mut xn = self.apply_adjoint(b, &y);
            let nn = norm(&xn);
            if nn == 0.0 {
                return 0.0;
            }
            for z in xn.iter_mut() {
                *z /= nn;
            }
            x = xn;
            if (s - sigma).abs() <= 1e-10 * s.max(1.0) {
                return s;
            }
            sigma = s;
        }
        sigma
    }
}

/// One-sided windowed Duhamel operator on a sampled forcing: at each grid
/// point t, chi(t) times the trapezoid quadrature of flow(t - t') chi(t')
/// F(t') from the grid anchor time `anchor` to t. The anchor must be a grid
/// point; quadrature endpoints carry half weights so that the two-sided
/// difference identity below is exact on the grid.
pub fn duhamel_one_sided(
    series: &[SpectralField],
    grid: &TimeGrid,
    window: &TimeWindow,
    anchor: usize,
) -> Vec<SpectralField> {
    assert_eq!(series.len(), grid.len);
    assert!(anchor < grid.len);
    let cutoff = series.iter().map(|f| f.cutoff()).max().unwrap();
    // integrand pulled back to the anchor frame: flow(-t') chi(t') F(t')
    let pulled: Vec<SpectralField> = series
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let t = grid.time(j);
            f.linear_flow(-t).scale(Complex64::new(window.eval(t), 0.0))
        })
        .collect();
    let zero = SpectralField::zero(cutoff);
    // prefix[m] = sum_{j < m} pulled[j]
    let mut prefix = Vec::with_capacity(grid.len + 1);
    prefix.push(zero.clone());
    for p in &pulled {
        let last = prefix.last().unwrap();
        prefix.push(last.add(p));
    }
    let half = Complex64::new(0.5, 0.0);
    let signed_integral = |m: usize| -> SpectralField {
        // trapezoid from anchor to m with half-weight endpoints, signed
        let (lo, hi, sign) = if m >= anchor { (anchor, m, 1.0) } else { (m, anchor, -1.0) };
        if lo == hi {
            return zero.clone();
        }
        let interior = prefix[hi].sub(&prefix[lo + 1]);
        let ends = pulled[lo].scale(half).add(&pulled[hi].scale(half));
        interior.add(&ends).scale(Complex64::new(sign * grid.dt, 0.0))
    };
    (0..grid.len)
        .map(|m| {
            let t = grid.time(m);
            signed_integral(m)
                .linear_flow(t)
                .scale(Complex64::new(window.eval(t), 0.0))
        })
        .collect()
}

/// Two-sided windowed Duhamel operator: chi(t) times the difference of the
/// quadratures over (-inf, t] and [t, inf) restricted to the grid, with the
/// same half-weight split at t' = t.
pub fn duhamel_two_sided(
    series: &[SpectralField],
    grid: &TimeGrid,
    window: &TimeWindow,
) -> Vec<SpectralField> {
    assert_eq!(series.len(), grid.len);
    let cutoff = series.iter().map(|f| f.cutoff()).max().unwrap();
    let pulled: Vec<SpectralField> = series
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let t = grid.time(j);
            f.linear_flow(-t).scale(Complex64::new(window.eval(t), 0.0))
        })
        .collect();
    let zero = SpectralField::zero(cutoff);
    let mut prefix = Vec::with_capacity(grid.len + 1);
    prefix.push(zero.clone());
    for p in &pulled {
        let last = prefix.last().unwrap();
        prefix.push(last.add(p));
    }
    let total = prefix.last().unwrap().clone();
    (0..grid.len)
        .map(|m| {
            let t = grid.time(m);
            // left sum_{j<m} + m/2 minus right (m/2 + sum_{j>m}):
            // prefix[m] - (total - prefix[m+1]) with the half terms canceling
            let left = &prefix[m];
            let right = total.sub(&prefix[m + 1]);
            left.sub(&right)
                .scale(Complex64::new(grid.dt, 0.0))
                .linear_flow(t)
                .scale(Complex64::new(window.eval(t), 0.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(cutoff: u32, rng: &mut ChaCha8Rng) -> SpectralField {
        let mut f = SpectralField::zero(cutoff);
        for k in shell_modes(cutoff) {
            f.set(k, Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        }
        f
    }

    fn synthetic_trajectory(cutoff: u32, grid: &TimeGrid, seed: u64) -> Trajectory {
        // temporally smooth lines: each mode rotates at its own slow rate,
        // keeping the dual-grid content far from the top octave
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = shell_modes(cutoff);
        let profile: Vec<(Complex64, f64)> = modes
            .iter()
            .map(|_| {
                let c = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                (c, rng.gen_range(-4.0..4.0))
            })
            .collect();
        let states: Vec<SpectralField> = (0..grid.len)
            .map(|j| {
                let t = grid.time(j);
                let mut f = SpectralField::zero(cutoff);
                for (k, (c, om)) in modes.iter().zip(&profile) {
                    f.set(*k, c * Complex64::from_polar(1.0, -om * t));
                }
                f
            })
            .collect();
        Trajectory {
            cutoff,
            r: 1,
            gauged: false,
            times: (0..grid.len).map(|j| grid.time(j)).collect(),
            states,
            mass_log: vec![0.0; grid.len],
            energy_log: vec![0.0; grid.len],
            wick_mean_log: vec![0.0; grid.len],
            b_phase: vec![0.0; grid.len],
        }
    }

    #[test]
    fn bump_profile() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 1.0);
        assert_eq!(bump(-0.73), 1.0);
        assert_eq!(bump(2.0), 0.0);
        assert_eq!(bump(-2.4), 0.0);
        assert!((bump(1.5) - 0.5).abs() < 1e-14, "ramp midpoint {}", bump(1.5));
        for i in 0..40 {
            let x = 1.0 + 0.025 * i as f64;
            assert!((bump(x) - bump(-x)).abs() < 1e-15);
            if i > 0 {
                assert!(bump(x) <= bump(x - 0.025) + 1e-15, "ramp not monotone at {x}");
            }
        }
    }

    #[test]
    fn xsb_at_zero_indices_is_spacetime_parseval() {
        let grid = TimeGrid::new(-2.0, 4.0 / 128.0, 128);
        let window = TimeWindow::unit();
        let traj = synthetic_trajectory(3, &grid, 11);
        let norm = xsb_norm(&traj, &window, 0.0, 0.0).unwrap();
        let direct: f64 = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, u)| {
                let w = window.eval(t);
                w * w * u.iter_shell().map(|(_, c)| c.norm_sqr()).sum::<f64>() * grid.dt
            })
            .sum();
        let gap = (norm - direct.sqrt()).abs() / direct.sqrt();
        println!("parseval gap {gap:.3e}");
        assert!(gap < 1e-12, "parseval mismatch {gap}");
    }

    #[test]
    fn zero_trajectory_has_zero_norm() {
        let grid = TimeGrid::new(-2.0, 4.0 / 64.0, 64);
        let mut traj = synthetic_trajectory(2, &grid, 5);
        for s in traj.states.iter_mut() {
            *s = SpectralField::zero(2);
        }
        assert_eq!(xsb_norm(&traj, &TimeWindow::unit(), 0.3, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn twist_centers_free_rotation_at_zero_frequency() {
        // a freely rotating mode must concentrate in the lowest dual bins
        // after twisting; the raw transform parks it near -|k|^2 instead
        let grid = TimeGrid::new(-2.0, 4.0 / 256.0, 256);
        let window = TimeWindow::unit();
        let k = Wavenumber::new(3, 1);
        let nsq = k.norm_sq() as f64;
        let series: Vec<Complex64> = (0..grid.len)
            .map(|j| Complex64::from_polar(1.3, -nsq * grid.time(j)))
            .collect();
        let lt = LineTransform::new(grid, &window).unwrap();
        let low_mass = |line: &[Complex64]| -> f64 {
            line.iter()
                .enumerate()
                .filter(|(m, _)| grid.lambda(*m).abs() <= 3.0 * grid.d_lambda())
                .map(|(_, z)| z.norm_sqr())
                .sum()
        };
        let twisted = lt.twisted_line(&series, nsq).unwrap();
        let total: f64 = twisted.iter().map(|z| z.norm_sqr()).sum();
        let low = low_mass(&twisted);
        println!("low-bin fraction {:.6}", low / total);
        assert!(low / total > 0.99, "twist did not recenter: {}", low / total);

        let raw = lt.twisted_line(&series, 0.0).unwrap();
        let raw_low = low_mass(&raw);
        assert!(raw_low / total < 0.01, "untwisted line should sit away from zero");
    }

    #[test]
    fn windowed_transform_matches_continuum_on_a_smooth_line() {
        // chi(t) e^{-i a t} has transform chi_hat(lambda + a); compare the
        // dt-scaled DFT against fine Riemann quadrature of chi_hat
        let grid = TimeGrid::new(-2.0, 4.0 / 512.0, 512);
        let window = TimeWindow::unit();
        let a = 3.0;
        let series: Vec<Complex64> =
            (0..grid.len).map(|j| Complex64::from_polar(1.0, -a * grid.time(j))).collect();
        let lt = LineTransform::new(grid, &window).unwrap();
        let line = lt.twisted_line(&series, 0.0).unwrap();
        for m in [0usize, 1, 3, 508, 510] {
            let lam = grid.lambda(m);
            let fine = 8192;
            let h = 4.0 / fine as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..fine {
                let t = -2.0 + (j as f64 + 0.5) * h;
                acc += window.eval(t) * Complex64::from_polar(1.0, -(lam + a) * t) * h;
            }
            let gap = (line[m] - acc).norm();
            assert!(gap < 1e-6, "bin {m}: got {:?} want {:?}", line[m], acc);
        }
    }

    #[test]
    fn window_coverage_and_uniformity_are_enforced() {
        let grid = TimeGrid::new(0.0, 0.01, 64);
        let wide = TimeWindow::new(0.0, 1.0);
        assert!(matches!(
            LineTransform::new(grid, &wide),
            Err(TimeFreqError::WindowNotCovered(..))
        ));
        let times = vec![0.0, 0.1, 0.25, 0.3];
        assert!(matches!(
            TimeGrid::from_times(&times),
            Err(TimeFreqError::NonUniformGrid { .. })
        ));
    }

    #[test]
    fn undersampled_oscillation_is_rejected_as_leakage() {
        let grid = TimeGrid::new(-2.0, 4.0 / 64.0, 64);
        let window = TimeWindow::unit();
        let traj = {
            let mut traj = synthetic_trajectory(1, &grid, 7);
            // park every mode on an oscillation at the edge of the dual grid
            let lam = grid.lambda_max() * 0.9;
            for (j, s) in traj.states.iter_mut().enumerate() {
                let mut f = SpectralField::zero(1);
                f.set(
                    Wavenumber::new(0, 0),
                    Complex64::from_polar(1.0, -lam * grid.time(j)),
                );
                *s = f;
            }
            traj
        };
        match xsb_norm(&traj, &window, 0.0, 0.0) {
            Err(TimeFreqError::Leakage { tail_fraction, .. }) => {
                println!("tail fraction {tail_fraction:.3}");
                assert!(tail_fraction > LEAK_LIMIT);
            }
            other => panic!("expected leakage rejection, got {other:?}"),
        }
    }

    #[test]
    fn diagonal_kernel_norms_reduce_to_the_scalar_profile() {
        // identity-band kernel rotating freely: every diagonal line twists
        // to the same windowed-constant profile, so yb equals the scalar
        // profile norm and zb picks up the sqrt of the column count
        let grid = TimeGrid::new(-2.0, 4.0 / 128.0, 128);
        let window = TimeWindow::unit();
        let lt = LineTransform::new(grid, &window).unwrap();
        let band: Vec<Wavenumber> =
            crate::spectral::band_modes(4).into_iter().collect();
        let rows = band.clone();
        let cols = band.clone();
        let nrow = rows.len();
        let spec = KernelSpectra::build(&lt, rows.clone(), cols.clone(), |ri, ci| {
            (0..grid.len)
                .map(|j| {
                    if ri == ci {
                        let nsq = rows[ri].norm_sq() as f64;
                        Complex64::from_polar(1.0, -nsq * grid.time(j))
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .unwrap();
        let b = 0.5;
        // scalar profile: windowed constant line
        let ones: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); grid.len];
        let profile = lt.twisted_line(&ones, 0.0).unwrap();
        let measure = grid.d_lambda() / (2.0 * PI);
        let scalar: f64 = profile
            .iter()
            .enumerate()
            .map(|(m, z)| {
                let lam = grid.lambda(m);
                (1.0 + lam * lam).powf(b) * z.norm_sqr() * measure
            })
            .sum::<f64>()
            .sqrt();
        let yb = spec.yb_norm(b);
        let zb = spec.zb_norm(b);
        println!("yb {yb:.6} zb {zb:.6} scalar {scalar:.6}");
        assert!((yb - scalar).abs() < 1e-6 * scalar, "yb {yb} vs scalar {scalar}");
        let expected_zb = scalar * (nrow as f64).sqrt();
        assert!((zb - expected_zb).abs() < 1e-9 * expected_zb);
        assert!(yb <= zb * (1.0 + 1e-12));
        // the separation weight is 1 on the diagonal for any kappa
        let wzb = spec.weighted_zb_norm(b, 37.0, 2.0);
        assert!((wzb - zb).abs() < 1e-9 * zb, "diagonal weighting changed zb: {wzb} vs {zb}");
    }

    #[test]
    fn yb_norm_dominates_random_probes() {
        let grid = TimeGrid::new(-2.0, 4.0 / 64.0, 64);
        let window = TimeWindow::unit();
        let lt = LineTransform::new(grid, &window).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let rows: Vec<Wavenumber> = shell_modes(3);
        let cols: Vec<Wavenumber> = crate::spectral::band_modes(3);
        let mut entries = Vec::new();
        for _ in 0..rows.len() * cols.len() {
            let amp = rng.gen::<f64>();
            let freq = rng.gen_range(-6.0..6.0);
            let phase = rng.gen::<f64>();
            entries.push((amp, freq, phase));
        }
        let ncols = cols.len();
        let spec = KernelSpectra::build(&lt, rows.clone(), cols.clone(), |ri, ci| {
            let (amp, freq, phase) = entries[ri * ncols + ci];
            (0..grid.len)
                .map(|j| Complex64::from_polar(amp, freq * grid.time(j) + phase))
                .collect()
        })
        .unwrap();
        let b = 0.4;
        let yb = spec.yb_norm(b);
        let mut sup = 0.0f64;
        for _ in 0..50 {
            let g: Vec<Complex64> = (0..ncols)
                .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let single = {
                let n = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                let img = spec.apply(b, &g);
                img.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / n
            };
            assert!(single <= yb * (1.0 + 1e-9), "probe beat the operator norm: {single} > {yb}");
            let refined = spec.probe_norm(b, &g, 8);
            assert!(refined <= yb * (1.0 + 1e-9), "refined probe beat the norm: {refined} > {yb}");
            sup = sup.max(refined);
        }
        println!("yb {yb:.6} refined probe sup {sup:.6}");
        assert!(sup >= 0.95 * yb, "probe sup {sup} strays from power-iteration value {yb}");
        assert!(yb <= spec.zb_norm(b) * (1.0 + 1e-12));
    }

    #[test]
    fn weighted_zb_grows_with_kappa_off_the_diagonal() {
        let grid = TimeGrid::new(-2.0, 4.0 / 64.0, 64);
        let window = TimeWindow::unit();
        let lt = LineTransform::new(grid, &window).unwrap();
        let rows = vec![Wavenumber::new(0, 0), Wavenumber::new(2, 0)];
        let cols = vec![Wavenumber::new(1, 1)];
        let spec = KernelSpectra::build(&lt, rows, cols, |_, _| {
            vec![Complex64::new(0.3, 0.1); grid.len]
        })
        .unwrap();
        let a = spec.weighted_zb_norm(0.5, 1.0, 2.0);
        let b = spec.weighted_zb_norm(0.5, 4.0, 2.0);
        let c = spec.weighted_zb_norm(0.5, 16.0, 2.0);
        println!("weighted zb at kappa 1, 4, 16: {a:.4e} {b:.4e} {c:.4e}");
        assert!(a < b && b < c, "separation weight must grow with kappa");
        assert!(spec.zb_norm(0.5) < a);
    }

    #[test]
    fn duhamel_difference_identity_is_grid_exact() {
        // the two-sided operator minus its value propagated from the anchor
        // reproduces twice the one-sided operator at every grid point
        let grid = TimeGrid::new(-2.0, 4.0 / 96.0, 96);
        let window = TimeWindow::unit();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let series: Vec<SpectralField> =
            (0..grid.len).map(|_| random_field(2, &mut rng)).collect();
        let anchor = grid.len / 2;
        assert!(grid.time(anchor).abs() < 1e-12, "anchor must sit at t = 0");
        let one = duhamel_one_sided(&series, &grid, &window, anchor);
        let two = duhamel_two_sided(&series, &grid, &window);
        let j0 = &two[anchor];
        let mut worst = 0.0f64;
        for m in 0..grid.len {
            let t = grid.time(m);
            let transported = j0.linear_flow(t).scale(Complex64::new(window.eval(t), 0.0));
            let lhs = one[m].scale(Complex64::new(2.0, 0.0));
            let rhs = two[m].sub(&transported);
            worst = worst.max(lhs.max_diff(&rhs));
        }
        println!("duhamel identity gap {worst:.3e}");
        assert!(worst < 1e-8, "identity gap {worst}");
    }

    #[test]
    fn duhamel_one_sided_solves_the_forced_flow_inside_the_flat_window()
    {
        // on [-1, 1] the window is 1, so the operator is the exact Duhamel
        // integral and u(t) = I F solves i u_t + Delta u = i^{-1}... the
        // derivative check: u(t_{m+1}) - flow(dt) u(t_m) matches the
        // trapezoid increment of the forcing to O(dt^3)
        let grid = TimeGrid::new(-2.0, 4.0 / 256.0, 256);
        let window = TimeWindow::unit();
        let k = Wavenumber::new(1, 0);
        let series: Vec<SpectralField> = (0..grid.len)
            .map(|j| {
                let t = grid.time(j);
                SpectralField::single_mode(
                    2,
                    k,
                    Complex64::new((1.3 * t).cos(), (0.7 * t).sin()),
                )
            })
            .collect();
        let anchor = grid.len / 2;
        let out = duhamel_one_sided(&series, &grid, &window, anchor);
        let mut worst = 0.0f64;
        for m in anchor..anchor + 40 {
            let t = grid.time(m);
            let incr = out[m + 1].get(k)
                - out[m].linear_flow(grid.dt).get(k);
            let f_mid = series[m]
                .scale(Complex64::new(window.eval(t), 0.0))
                .linear_flow(grid.dt)
                .get(k)
                * 0.5
                + series[m + 1].get(k) * window.eval(grid.time(m + 1)) * 0.5;
            let gap = (incr - f_mid * grid.dt).norm();
            worst = worst.max(gap);
        }
        println!("local duhamel increment gap {worst:.3e}");
        assert!(worst < 1e-6, "increment gap {worst}");
    }
}
