//! Shell-by-shell decomposition of the gauged flow: linear response solves
//! driven by a low-cutoff trajectory, their kernel matrices on a dyadic
//! band, scale differences, the remainder against the flow difference, and
//! proxy-norm scans over the scale ladder.

use crate::dynamics::{evolve, EvolutionConfig, EvolveError, Trajectory};
use crate::params::{Dyadic, Params};
use crate::spectral::{band_modes, shell_modes, SpectralField, Wavenumber};
use crate::timefreq::{KernelSpectra, LineTransform, TimeFreqError, TimeGrid, TimeWindow};
use crate::wick::{mass, script_n_polarized, sigma, PolarizationSlot, WickContext};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AveragingError {
    #[error("driver trajectory grid unusable: {0}")]
    DriverGrid(String),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    TimeFreq(#[from] TimeFreqError),
    #[error("scale pair (N = {n}, L = {l}) outside the scale set")]
    OutsideScaleSet { n: u32, l: Dyadic },
}

/// Dyadic scale pairs (N, L) with 1/2 <= L < N^{1 - delta}.
#[derive(Debug, Clone, Copy)]
pub struct ScaleSet {
    pub delta: f64,
}

impl ScaleSet {
    pub fn new(delta: f64) -> Self {
        assert!((0.0..1.0).contains(&delta));
        ScaleSet { delta }
    }

    /// Membership test; the strict upper comparison runs through logs with
    /// a fixed safety margin so dyadic boundary cases resolve exactly.
    pub fn contains(&self, n: Dyadic, l: Dyadic) -> bool {
        if l.exp < -1 || n.exp < 0 {
            return false;
        }
        let lhs = l.exp as f64 * std::f64::consts::LN_2;
        let rhs = (1.0 - self.delta) * n.exp as f64 * std::f64::consts::LN_2;
        lhs < rhs - 1e-12
    }

    /// Largest admissible low scale for the given high scale.
    pub fn l0(&self, n: Dyadic) -> Dyadic {
        let mut l = Dyadic::HALF;
        while self.contains(n, l.double()) {
            l = l.double();
        }
        l
    }

    /// All admissible low scales for n, ascending from 1/2.
    pub fn ladder(&self, n: Dyadic) -> Vec<Dyadic> {
        let mut out = Vec::new();
        let mut l = Dyadic::HALF;
        while self.contains(n, l) {
            out.push(l);
            l = l.double();
        }
        out
    }
}

/// A zero driver on the given grid; stands in for the flow below the
/// smallest scale, whose projection is empty.
pub fn zero_driver(t0: f64, dt: f64, len: usize) -> Trajectory {
    Trajectory {
        cutoff: 1,
        r: 1,
        gauged: true,
        times: (0..len).map(|j| t0 + j as f64 * dt).collect(),
        states: (0..len).map(|_| SpectralField::zero(1)).collect(),
        mass_log: vec![0.0; len],
        energy_log: vec![0.0; len],
        wick_mean_log: vec![0.0; len],
        b_phase: vec![0.0; len],
    }
}

/// One linear response solve at output cutoff N: the unknown rides in the
/// first (unconjugated) slot of every simple block, the driver fills the
/// rest, and the block coefficients carry the frozen renormalized mass of
/// the level-N data.
pub struct ResponseProblem<'a> {
    pub ctx: &'a WickContext,
    /// Renormalized mass of the level-N data, mass(P_N f) - sigma_N.
    pub m_star: f64,
    /// Driver trajectory saved at every step (its spacing is half the
    /// response step).
    pub driver: &'a Trajectory,
    /// Save stride on the response step grid.
    pub save_stride: usize,
}

impl ResponseProblem<'_> {
    fn grid(&self) -> Result<(TimeGrid, usize), AveragingError> {
        let grid = TimeGrid::from_times(&self.driver.times)
            .map_err(|e| AveragingError::DriverGrid(e.to_string()))?;
        let steps = grid.len - 1;
        if steps == 0 || steps % 2 != 0 {
            return Err(AveragingError::DriverGrid(format!(
                "driver needs an even positive step count, got {steps}"
            )));
        }
        let psi_steps = steps / 2;
        if psi_steps % self.save_stride != 0 {
            return Err(AveragingError::DriverGrid(format!(
                "response step count {psi_steps} not divisible by save stride {}",
                self.save_stride
            )));
        }
        Ok((grid, psi_steps))
    }
}

/// Right-hand side of the response equation at one driver state: the sum
/// over degrees of (l + 1) c_l m*^{r-l} times the first-slot polarized
/// block, projected to the output cutoff and rotated by -i. The degree-0
/// block vanishes identically, so the sum starts at 1.
fn response_rhs(
    psi: &SpectralField,
    v: &SpectralField,
    ctx: &WickContext,
    m_star: f64,
) -> SpectralField {
    let mut acc = SpectralField::zero(ctx.cutoff);
    for l in 1..=ctx.r {
        let block = script_n_polarized(l, PolarizationSlot::new(1), psi, v, ctx.cutoff)
            .expect("first slot exists for every block arity");
        let coeff = (l + 1) as f64 * ctx.c_coeff(l) * m_star.powi((ctx.r - l) as i32);
        acc = acc.add_scaled(Complex64::new(coeff, 0.0), &block);
    }
    acc.scale(Complex64::new(0.0, -1.0))
}

/// Solve the linear response equation with the given data, stepping on the
/// driver grid with the interaction-picture fourth-order scheme. The
/// trajectory carries mass logs only; the other logs stay zero.
pub fn solve_psi(data: &SpectralField, p: &ResponseProblem) -> Result<Trajectory, AveragingError> {
    let (grid, psi_steps) = p.grid()?;
    let h = 2.0 * grid.dt;
    let ctx = p.ctx;
    let mut state = data.project(ctx.cutoff);
    let mut traj = Trajectory {
        cutoff: ctx.cutoff,
        r: ctx.r,
        gauged: true,
        times: Vec::new(),
        states: Vec::new(),
        mass_log: Vec::new(),
        energy_log: Vec::new(),
        wick_mean_log: Vec::new(),
        b_phase: Vec::new(),
    };
    let save = |t: f64, u: &SpectralField, traj: &mut Trajectory| {
        traj.times.push(t);
        traj.states.push(u.clone());
        traj.mass_log.push(mass(u));
        traj.energy_log.push(0.0);
        traj.wick_mean_log.push(0.0);
        traj.b_phase.push(0.0);
    };
    save(grid.t0, &state, &mut traj);
    let c = |x: f64| Complex64::new(x, 0.0);
    for step in 0..psi_steps {
        let v0 = &p.driver.states[2 * step];
        let vh = &p.driver.states[2 * step + 1];
        let v1 = &p.driver.states[2 * step + 2];
        let rhs = |u: &SpectralField, v: &SpectralField| response_rhs(u, v, ctx, p.m_star);
        let flow = |u: &SpectralField| u.linear_flow(h / 2.0);
        let u1 = flow(&state);
        let k1 = flow(&rhs(&state, v0));
        let k2 = rhs(&u1.add_scaled(c(h / 2.0), &k1), vh);
        let k3 = rhs(&u1.add_scaled(c(h / 2.0), &k2), vh);
        let k4 = rhs(&flow(&u1.add_scaled(c(h), &k3)), v1);
        state = flow(
            &u1.add_scaled(c(h / 6.0), &k1)
                .add_scaled(c(h / 3.0), &k2)
                .add_scaled(c(h / 3.0), &k3),
        )
        .add_scaled(c(h / 6.0), &k4);
        if (step + 1) % p.save_stride == 0 {
            save(grid.t0 + (step + 1) as f64 * h, &state, &mut traj);
        }
    }
    Ok(traj)
}

/// Kernel matrix of the response solve on a dyadic band: column k* holds
/// the modes of the solution with one-frequency data, so applying the
/// matrix to the data coefficients reconstructs the response of any data
/// supported on the band.
pub struct KernelMatrix {
    pub n: u32,
    pub l: Dyadic,
    pub times: Vec<f64>,
    pub rows: Vec<Wavenumber>,
    pub cols: Vec<Wavenumber>,
    /// frames[t][row * cols.len() + col]
    pub frames: Vec<Vec<Complex64>>,
}

impl KernelMatrix {
    pub fn get(&self, t: usize, row: usize, col: usize) -> Complex64 {
        self.frames[t][row * self.cols.len() + col]
    }

    /// Entry difference with an equally shaped kernel at the same N.
    pub fn sub(&self, rhs: &KernelMatrix) -> KernelMatrix {
        assert_eq!(self.n, rhs.n);
        assert_eq!(self.times.len(), rhs.times.len());
        assert_eq!(self.rows, rhs.rows);
        assert_eq!(self.cols, rhs.cols);
        KernelMatrix {
            n: self.n,
            l: self.l,
            times: self.times.clone(),
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            frames: self
                .frames
                .iter()
                .zip(&rhs.frames)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }

    /// Apply the kernel to band data coefficients at every saved time.
    pub fn reconstruct(&self, data: &SpectralField) -> Vec<SpectralField> {
        let ncols = self.cols.len();
        let weights: Vec<Complex64> = self.cols.iter().map(|k| data.get(*k)).collect();
        self.frames
            .iter()
            .map(|frame| {
                let mut out = SpectralField::zero(self.n);
                for (ri, k) in self.rows.iter().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (ci, w) in weights.iter().enumerate() {
                        acc += frame[ri * ncols + ci] * w;
                    }
                    out.set(*k, acc);
                }
                out
            })
            .collect()
    }

    /// Twisted dual-grid lines of every entry.
    pub fn spectra(&self, window: &TimeWindow) -> Result<KernelSpectra, TimeFreqError> {
        let lt = LineTransform::from_times(&self.times, window)?;
        let ncols = self.cols.len();
        KernelSpectra::build(&lt, self.rows.clone(), self.cols.clone(), |ri, ci| {
            self.frames.iter().map(|f| f[ri * ncols + ci]).collect()
        })
    }
}

/// Build the kernel by solving one response problem per band column; the
/// columns are independent and run in parallel with index-ordered
/// collection, so the result does not depend on the worker count.
pub fn build_h(p: &ResponseProblem, l: Dyadic) -> Result<KernelMatrix, AveragingError> {
    let n = p.ctx.cutoff;
    let cols = band_modes(n);
    let rows = shell_modes(n);
    let solves: Result<Vec<Trajectory>, AveragingError> = cols
        .par_iter()
        .map(|kstar| {
            let data = SpectralField::single_mode(n, *kstar, Complex64::new(1.0, 0.0));
            solve_psi(&data, p)
        })
        .collect();
    let solves = solves?;
    let times = solves[0].times.clone();
    let ncols = cols.len();
    let frames: Vec<Vec<Complex64>> = (0..times.len())
        .map(|t| {
            let mut frame = vec![Complex64::new(0.0, 0.0); rows.len() * ncols];
            for (ci, traj) in solves.iter().enumerate() {
                let state = &traj.states[t];
                for (ri, k) in rows.iter().enumerate() {
                    frame[ri * ncols + ci] = state.get(*k);
                }
            }
            frame
        })
        .collect();
    Ok(KernelMatrix { n, l, times, rows, cols, frames })
}

/// Grid plan shared by every solve entering one decomposition: all flows
/// step at the level-N spacing and land on a common save grid.
#[derive(Debug, Clone, Copy)]
pub struct DecompositionConfig {
    pub r: usize,
    pub t_end: f64,
    /// Save intervals on the comparison grid.
    pub saves: usize,
    pub delta: f64,
}

impl DecompositionConfig {
    pub fn new(r: usize, t_end: f64, saves: usize, delta: f64) -> Self {
        assert!(t_end > 0.0 && saves >= 2);
        DecompositionConfig { r, t_end, saves, delta }
    }

    /// Steps per save interval: even, and fine enough for the stability
    /// margin dt <= 0.1 / N^2.
    pub fn substeps(&self, n: u32) -> usize {
        let need = self.t_end * (n as f64).powi(2) / (0.1 * self.saves as f64);
        2 * (need / 2.0).ceil().max(1.0) as usize
    }

    pub fn dt(&self, n: u32) -> f64 {
        self.t_end / (self.saves * self.substeps(n)) as f64
    }

    fn flow_config(&self, n: u32, stride: usize) -> EvolutionConfig {
        let mut cfg = EvolutionConfig::new(self.dt(n), self.t_end);
        cfg.save_stride = stride;
        cfg
    }
}

/// Scale differences and remainder of the flow at one high scale: the
/// response ladder, its consecutive differences, the dyadic flow
/// difference, and the remainder after subtracting the top response.
pub struct Decomposition {
    pub n: u32,
    pub times: Vec<f64>,
    /// (L, psi_{N,L}) ascending in L, starting at the free base scale.
    pub psi: Vec<(Dyadic, Trajectory)>,
    /// (L, zeta_{N,L} states), L >= 1.
    pub zeta: Vec<(Dyadic, Vec<SpectralField>)>,
    pub y: Vec<SpectralField>,
    pub z: Vec<SpectralField>,
}

/// Decompose the flow at high scale n for the given data. With
/// `full_ladder` false only the top response is solved, which is all the
/// remainder needs; with it true the whole ladder and the differences are
/// produced.
pub fn decompose(
    f: &SpectralField,
    n: u32,
    cfg: &DecompositionConfig,
    full_ladder: bool,
) -> Result<Decomposition, AveragingError> {
    assert!(n >= 2, "decomposition needs a scale below n, got n = {n}");
    let scales = ScaleSet::new(cfg.delta);
    let nd = Dyadic::from_int(n);
    let l0 = scales.l0(nd);
    let substeps = cfg.substeps(n);
    let ctx_n = WickContext::new(cfg.r, n);
    let data_n = f.project(n);
    let m_star = mass(&data_n) - sigma(n);

    let v_n = evolve(&data_n, &ctx_n, &cfg.flow_config(n, substeps), true)?;
    let half = n / 2;
    let ctx_half = WickContext::new(cfg.r, half);
    let v_half = evolve(&f.project(half), &ctx_half, &cfg.flow_config(n, substeps), true)?;
    let y: Vec<SpectralField> = v_n
        .states
        .iter()
        .zip(&v_half.states)
        .map(|(a, b)| a.sub(b))
        .collect();

    let driver_len = cfg.saves * substeps + 1;
    let dt = cfg.dt(n);
    let mut drivers: Vec<(Dyadic, Trajectory)> = Vec::new();
    let ladder = scales.ladder(nd);
    let wanted: Vec<Dyadic> =
        if full_ladder { ladder.clone() } else { vec![Dyadic::HALF, l0] };
    for l in &wanted {
        let traj = if l.exp < 0 {
            zero_driver(0.0, dt, driver_len)
        } else {
            let lc = l.as_int();
            let ctx_l = WickContext::new(cfg.r, lc);
            evolve(&f.project(lc), &ctx_l, &cfg.flow_config(n, 1), true)?
        };
        drivers.push((*l, traj));
    }

    let stride = substeps / 2;
    let mut psi: Vec<(Dyadic, Trajectory)> = Vec::new();
    let band_data = data_n.delta_band(n);
    for (l, driver) in &drivers {
        let p = ResponseProblem { ctx: &ctx_n, m_star, driver, save_stride: stride };
        psi.push((*l, solve_psi(&band_data, &p)?));
    }

    let mut zeta: Vec<(Dyadic, Vec<SpectralField>)> = Vec::new();
    if full_ladder {
        for w in psi.windows(2) {
            let (l_hi, hi) = (&w[1].0, &w[1].1);
            let lo = &w[0].1;
            let diff: Vec<SpectralField> =
                hi.states.iter().zip(&lo.states).map(|(a, b)| a.sub(b)).collect();
            zeta.push((*l_hi, diff));
        }
    }

    let top = &psi.last().unwrap().1;
    let z: Vec<SpectralField> = y.iter().zip(&top.states).map(|(a, b)| a.sub(b)).collect();
    Ok(Decomposition { n, times: v_n.times.clone(), psi, zeta, y, z })
}

/// Wrap a state sequence as a trajectory for norm evaluation.
pub fn states_as_trajectory(
    cutoff: u32,
    r: usize,
    times: &[f64],
    states: Vec<SpectralField>,
) -> Trajectory {
    let len = states.len();
    Trajectory {
        cutoff,
        r,
        gauged: true,
        times: times.to_vec(),
        states,
        mass_log: vec![0.0; len],
        energy_log: vec![0.0; len],
        wick_mean_log: vec![0.0; len],
        b_phase: vec![0.0; len],
    }
}

/// Measured proxy norms of the remainder at one (N, seed) pair, next to
/// the reference decay N^{-1+gamma} the trend is fitted against.
#[derive(Debug, Clone)]
pub struct RemainderRow {
    pub n: u32,
    pub seed: u64,
    pub z_xb: f64,
    pub y_xb: f64,
    pub z_bound: f64,
}

/// Measured kernel-difference norms at one (N, L) pair, next to the
/// reference decays L^{-delta0} and N^{1/2+gamma0} L^{-1/2}. The smallest
/// scale row is the difference with the empty scale, the kernel itself.
#[derive(Debug, Clone)]
pub struct KernelRow {
    pub n: u32,
    pub l: Dyadic,
    pub yb: f64,
    pub zb: f64,
    pub yb_bound: f64,
    pub zb_bound: f64,
}

/// Ladder scan report: remainder norms over the high-scale ladder with the
/// fitted decay exponent, and kernel-difference norms over the low-scale
/// ladder at one fixed high scale.
pub struct ScanReport {
    pub remainder: Vec<RemainderRow>,
    /// Slope of mean log z-norm against log N.
    pub z_slope: f64,
    pub kernel: Vec<KernelRow>,
    /// Slope of log Z^b-proxy against log L at the fixed kernel scale.
    pub kernel_zb_slope: f64,
    pub b: f64,
}

pub struct ScanConfig {
    pub n_values: Vec<u32>,
    pub seeds: Vec<u64>,
    pub r: usize,
    pub t_end: f64,
    pub saves: usize,
    pub kernel_n: Option<u32>,
    pub params: Params,
}

/// Run the remainder scan over (N, seed) and, if requested, the kernel
/// difference scan over L at the fixed kernel scale. The sampler for the
/// data is supplied by the caller so the scan stays sampler-agnostic.
pub fn apriori_scan(
    cfg: &ScanConfig,
    mut sample: impl FnMut(u32, u64) -> SpectralField,
) -> Result<ScanReport, AveragingError> {
    let b = cfg.params.b;
    let mut remainder = Vec::new();
    for &n in &cfg.n_values {
        let dcfg = DecompositionConfig::new(cfg.r, cfg.t_end, cfg.saves, cfg.params.delta);
        for &seed in &cfg.seeds {
            let f = sample(n, seed);
            let dec = decompose(&f, n, &dcfg, false)?;
            let window = TimeWindow::for_span(dec.times[0], *dec.times.last().unwrap());
            let z_traj = states_as_trajectory(n, cfg.r, &dec.times, dec.z);
            let y_traj = states_as_trajectory(n, cfg.r, &dec.times, dec.y);
            let z_xb = crate::timefreq::xsb_norm(&z_traj, &window, 0.0, b)?;
            let y_xb = crate::timefreq::xsb_norm(&y_traj, &window, 0.0, b)?;
            let z_bound = (n as f64).powf(-1.0 + cfg.params.gamma);
            remainder.push(RemainderRow { n, seed, z_xb, y_xb, z_bound });
        }
    }
    let mut mean_logs: Vec<(f64, f64)> = Vec::new();
    for &n in &cfg.n_values {
        let logs: Vec<f64> = remainder
            .iter()
            .filter(|r| r.n == n)
            .map(|r| r.z_xb.max(1e-300).ln())
            .collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        mean_logs.push(((n as f64).ln(), mean));
    }
    let xs: Vec<f64> = mean_logs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = mean_logs.iter().map(|p| p.1).collect();
    let z_slope = if xs.len() >= 2 { crate::stats::linear_fit(&xs, &ys).0 } else { f64::NAN };

    let mut kernel = Vec::new();
    if let Some(kn) = cfg.kernel_n {
        let dcfg = DecompositionConfig::new(cfg.r, cfg.t_end, cfg.saves, cfg.params.delta);
        let scales = ScaleSet::new(cfg.params.delta);
        let nd = Dyadic::from_int(kn);
        let ctx = WickContext::new(cfg.r, kn);
        let f = sample(kn, cfg.seeds[0]);
        let m_star = mass(&f.project(kn)) - sigma(kn);
        let substeps = dcfg.substeps(kn);
        let driver_len = dcfg.saves * substeps + 1;
        let dt = dcfg.dt(kn);
        let stride = substeps / 2;
        let mut prev: Option<KernelMatrix> = None;
        let mut ladder = vec![Dyadic::HALF];
        ladder.extend(scales.ladder(nd).into_iter().filter(|l| l.exp >= 0));
        for l in ladder {
            let driver = if l.exp < 0 {
                zero_driver(0.0, dt, driver_len)
            } else {
                let lc = l.as_int();
                let ctx_l = WickContext::new(cfg.r, lc);
                evolve(&f.project(lc), &ctx_l, &dcfg.flow_config(kn, 1), true)?
            };
            let p = ResponseProblem { ctx: &ctx, m_star, driver: &driver, save_stride: stride };
            let h_l = build_h(&p, l)?;
            let diff = match prev.take() {
                Some(prev_h) => h_l.sub(&prev_h),
                None => h_l.sub(&zero_like(&h_l)),
            };
            let window = TimeWindow::for_span(diff.times[0], *diff.times.last().unwrap());
            let spec = diff.spectra(&window)?;
            let yb_bound = l.value().powf(-cfg.params.delta0);
            let zb_bound =
                (kn as f64).powf(0.5 + cfg.params.gamma0) * l.value().powf(-0.5);
            kernel.push(KernelRow {
                n: kn,
                l,
                yb: spec.yb_norm(b),
                zb: spec.zb_norm(b),
                yb_bound,
                zb_bound,
            });
            prev = Some(h_l);
        }
    }
    let kernel_zb_slope = if kernel.len() >= 2 {
        let xs: Vec<f64> = kernel.iter().map(|r| r.l.value().ln()).collect();
        let ys: Vec<f64> = kernel.iter().map(|r| r.zb.max(1e-300).ln()).collect();
        crate::stats::linear_fit(&xs, &ys).0
    } else {
        f64::NAN
    };
    Ok(ScanReport { remainder, z_slope, kernel, kernel_zb_slope, b })
}

fn zero_like(h: &KernelMatrix) -> KernelMatrix {
    KernelMatrix {
        n: h.n,
        l: h.l,
        times: h.times.clone(),
        rows: h.rows.clone(),
        cols: h.cols.clone(),
        frames: h
            .frames
            .iter()
            .map(|f| vec![Complex64::new(0.0, 0.0); f.len()])
            .collect(),
    }
}
