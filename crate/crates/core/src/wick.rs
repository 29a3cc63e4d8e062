//! Renormalized (centered) powers of complex fields: the sigma-centered
//! powers, the mass-centered pair-free polynomials, the simple cubic-type
//! blocks N_{2l+1}, their slot-polarized multilinear forms, and the gauged
//! nonlinearity assembled from them.
//!
//! All polynomial evaluation happens pointwise on alias-free grids sized by
//! the helpers in `spectral`; coefficient tables use exact integer
//! combinatorics and convert to floating point only at evaluation.

use crate::params::Params;
use crate::spectral::{
    full_product_cutoff, grid_size_for_shell, grid_size_projected, to_physical, to_spectral,
    PhysicalGrid,
    SpectralField,
};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WickError {
    #[error("slot index {index} out of range for arity {arity}")]
    SlotOutOfRange { index: usize, arity: usize },
    #[error("slot index {index} has parity {actual}, caller requested {requested}")]
    SlotParityMismatch { index: usize, actual: &'static str, requested: &'static str },
    #[error("evaluation paths disagree: relative gap {gap:.3e} exceeds {tol:.1e}")]
    PathDisagreement { gap: f64, tol: f64 },
}

/// Shared coefficient bundle for a fixed nonlinearity degree and cutoff.
#[derive(Debug, Clone)]
pub struct WickContext {
    pub r: usize,
    pub cutoff: u32,
    pub sigma: f64,
    pub params: Params,
    c: Vec<i128>,
}

impl WickContext {
    pub fn new(r: usize, cutoff: u32) -> Self {
        Self::with_params(r, cutoff, Params::default())
    }

    pub fn with_params(r: usize, cutoff: u32, params: Params) -> Self {
        assert!(r >= 1, "nonlinearity degree parameter must be >= 1");
        assert!(cutoff >= 1);
        let c = (0..=r).map(|l| binom((r + 1) as u64, (r - l) as u64) * int_ratio_factorial(r, l)).collect();
        WickContext { r, cutoff, sigma: sigma(cutoff), params, c }
    }

    /// Expansion coefficient for the degree-(2l+1) block, an exact integer.
    pub fn c_coeff_exact(&self, l: usize) -> i128 {
        self.c[l]
    }

    pub fn c_coeff(&self, l: usize) -> f64 {
        self.c[l] as f64
    }
}

/// Sum of <k>^{-2} over the shell <k> <= N, the expected truncated mass of
/// the free field.
pub fn sigma(cutoff: u32) -> f64 {
    crate::spectral::shell_modes(cutoff).iter().map(|w| 1.0 / w.bracket_sq() as f64).sum()
}

fn binom(n: u64, k: u64) -> i128 {
    if k > n {
        return 0;
    }
    let mut acc: i128 = 1;
    for i in 0..k.min(n - k) {
        acc = acc * (n - i) as i128 / (i + 1) as i128;
    }
    acc
}

/// p! / j! for j <= p, exact.
fn int_ratio_factorial(p: usize, j: usize) -> i128 {
    assert!(j <= p);
    ((j + 1)..=p).map(|v| v as i128).product()
}

/// Coefficients of s^j (s = |u|^2) in the centered even power of degree 2p.
fn centered_even_coeffs(p: usize, center: f64) -> Vec<f64> {
    (0..=p)
        .map(|j| {
            let sign = if (p - j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * (binom(p as u64, j as u64) * int_ratio_factorial(p, j)) as f64 * center.powi((p - j) as i32)
        })
        .collect()
}

/// Coefficients of s^j u in the centered odd power of degree 2p+1.
fn centered_odd_coeffs(p: usize, center: f64) -> Vec<f64> {
    (0..=p)
        .map(|j| {
            let sign = if (p - j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * (binom((p + 1) as u64, (p - j) as u64) * int_ratio_factorial(p, j)) as f64
                * center.powi((p - j) as i32)
        })
        .collect()
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * s + c;
    }
    acc
}

fn apply_centered_poly(grid: &PhysicalGrid, n: usize, center: f64) -> PhysicalGrid {
    let p = n / 2;
    let mut out = PhysicalGrid::zero(grid.m);
    if n % 2 == 0 {
        let coeffs = centered_even_coeffs(p, center);
        for (o, &z) in out.values.iter_mut().zip(&grid.values) {
            *o = Complex64::new(horner(&coeffs, z.norm_sqr()), 0.0);
        }
    } else {
        let coeffs = centered_odd_coeffs(p, center);
        for (o, &z) in out.values.iter_mut().zip(&grid.values) {
            *o = z * horner(&coeffs, z.norm_sqr());
        }
    }
    out
}

/// Centered power of degree n with explicit center: |u|^{2j}-expansion with
/// alternating center powers.  Result carries the full product support.
pub fn wick_power(u: &SpectralField, n: usize, sigma: f64) -> SpectralField {
    if n == 0 {
        return constant_one();
    }
    assert!(n <= 16, "degree {n} out of supported range");
    let out_cutoff = full_product_cutoff(&vec![u.cutoff(); n]);
    let m = grid_size_for_shell(out_cutoff);
    let grid = to_physical(u, m);
    to_spectral(&apply_centered_poly(&grid, n, sigma), out_cutoff)
}

/// Centered power read back only on the shell of `out_cutoff` (cheaper grid).
fn constant_one() -> SpectralField {
    SpectralField::single_mode(1, crate::spectral::Wavenumber::new(0, 0), Complex64::new(1.0, 0.0))
}

pub fn wick_power_projected(u: &SpectralField, n: usize, sigma: f64, out_cutoff: u32) -> SpectralField {
    if n == 0 {
        return constant_one().project(out_cutoff);
    }
    assert!(n <= 16);
    let k = u.support_radius();
    let m = grid_size_projected(&vec![k; n], crate::spectral::shell_radius(out_cutoff));
    let grid = to_physical(u, m);
    to_spectral(&apply_centered_poly(&grid, n, sigma), out_cutoff)
}

/// Spatial mean of the centered power, exact (no alias reaches k = 0).
pub fn wick_power_mean(u: &SpectralField, n: usize, sigma: f64) -> Complex64 {
    let k = u.support_radius();
    let m = grid_size_projected(&vec![k; n], 0);
    let grid = to_physical(u, m);
    apply_centered_poly(&grid, n, sigma).mean()
}

/// Exact truncated mass sum |u_k|^2 of the field itself.
pub fn mass(u: &SpectralField) -> f64 {
    u.iter_shell().map(|(_, c)| c.norm_sqr()).sum()
}

/// Mass-centered (pair-free) power: the centered power with the field's own
/// mean square mass as the center.
pub fn wick_pairfree(v: &SpectralField, n: usize) -> SpectralField {
    wick_power(v, n, mass(v))
}

pub fn wick_pairfree_projected(v: &SpectralField, n: usize, out_cutoff: u32) -> SpectralField {
    wick_power_projected(v, n, mass(v), out_cutoff)
}

/// Conjugate field: coefficients conjugated and reflected, so that its
/// physical samples are the pointwise conjugates of the input's.
pub fn conj_field(v: &SpectralField) -> SpectralField {
    SpectralField::from_fn(v.cutoff(), |w| v.get(crate::spectral::Wavenumber::new(-w.kx, -w.ky)).conj())
}

/// Exact mean of the pointwise product alpha(x) beta(x).
pub fn mean_product(alpha: &SpectralField, beta: &SpectralField) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (w, c) in alpha.iter_shell() {
        acc += c * beta.get(crate::spectral::Wavenumber::new(-w.kx, -w.ky));
    }
    acc
}

fn bifield_kmaxes(alpha: &SpectralField, beta: &SpectralField, n: usize) -> Vec<i32> {
    let p = n / 2;
    let holo = if n % 2 == 0 { p } else { p + 1 };
    let mut ks = vec![alpha.support_radius(); holo];
    ks.extend(vec![beta.support_radius(); p]);
    ks
}

/// Pair-free power with independent conjugate-slot field: beta's pointwise
/// values stand in for the conjugate of the diagonal argument, and the
/// centering constant is the mean of alpha(x) beta(x).  On the diagonal
/// (beta = conj_field(alpha)) this reproduces `wick_pairfree`.
pub fn pairfree_bifield(alpha: &SpectralField, beta: &SpectralField, n: usize, out_cutoff: u32) -> SpectralField {
    assert!((1..=16).contains(&n));
    let p = n / 2;
    let mu = mean_product(alpha, beta);
    let ks = bifield_kmaxes(alpha, beta, n);
    let m = grid_size_projected(&ks, crate::spectral::shell_radius(out_cutoff));
    let ga = to_physical(alpha, m);
    let gb = to_physical(beta, m);
    let mut out = PhysicalGrid::zero(m);
    // complex-center expansion: centers mu^{p-j} may be complex off-diagonal
    let int_coeffs: Vec<f64> = if n % 2 == 0 {
        (0..=p)
            .map(|j| {
                let sign = if (p - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (binom(p as u64, j as u64) * int_ratio_factorial(p, j)) as f64
            })
            .collect()
    } else {
        (0..=p)
            .map(|j| {
                let sign = if (p - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (binom((p + 1) as u64, (p - j) as u64) * int_ratio_factorial(p, j)) as f64
            })
            .collect()
    };
    let mu_pows: Vec<Complex64> = (0..=p).map(|e| mu.powu(e as u32)).collect();
    for i in 0..m * m {
        let a = ga.values[i];
        let b = gb.values[i];
        let s = a * b;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut s_pow = Complex64::new(1.0, 0.0);
        for j in 0..=p {
            acc += int_coeffs[j] * mu_pows[p - j] * s_pow;
            s_pow *= s;
        }
        out.values[i] = if n % 2 == 0 { acc } else { acc * a };
    }
    to_spectral(&out, out_cutoff)
}

/// The simple degree-(2l+1) block: pair-free odd power minus (l+1) times
/// the mean of the pair-free even power times the field.
pub fn script_n(v: &SpectralField, l: usize) -> SpectralField {
    let out_cutoff = full_product_cutoff(&vec![v.cutoff(); 2 * l + 1]);
    script_n_projected(v, l, out_cutoff)
}

pub fn script_n_projected(v: &SpectralField, l: usize, out_cutoff: u32) -> SpectralField {
    script_n_bifield(v, &conj_field(v), l, out_cutoff)
}

/// Bi-field version of the simple block, the basis for polarization.
pub fn script_n_bifield(alpha: &SpectralField, beta: &SpectralField, l: usize, out_cutoff: u32) -> SpectralField {
    if l == 0 {
        // :v: - A(:1:) v = 0 identically
        return SpectralField::zero(out_cutoff);
    }
    let odd = pairfree_bifield(alpha, beta, 2 * l + 1, out_cutoff);
    let even_mean = pairfree_bifield_mean(alpha, beta, 2 * l);
    odd.add_scaled(-((l + 1) as f64) * even_mean, &alpha.project(out_cutoff))
}

/// Exact mean of the bi-field pair-free power.
pub fn pairfree_bifield_mean(alpha: &SpectralField, beta: &SpectralField, n: usize) -> Complex64 {
    let p = n / 2;
    let mu = mean_product(alpha, beta);
    let ks = bifield_kmaxes(alpha, beta, n);
    let m = grid_size_projected(&ks, 0);
    let ga = to_physical(alpha, m);
    let gb = to_physical(beta, m);
    let int_coeffs: Vec<f64> = if n % 2 == 0 {
        (0..=p)
            .map(|j| {
                let sign = if (p - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (binom(p as u64, j as u64) * int_ratio_factorial(p, j)) as f64
            })
            .collect()
    } else {
        (0..=p)
            .map(|j| {
                let sign = if (p - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (binom((p + 1) as u64, (p - j) as u64) * int_ratio_factorial(p, j)) as f64
            })
            .collect()
    };
    let mu_pows: Vec<Complex64> = (0..=p).map(|e| mu.powu(e as u32)).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..m * m {
        let a = ga.values[i];
        let b = gb.values[i];
        let s = a * b;
        let mut val = Complex64::new(0.0, 0.0);
        let mut s_pow = Complex64::new(1.0, 0.0);
        for j in 0..=p {
            val += int_coeffs[j] * mu_pows[p - j] * s_pow;
            s_pow *= s;
        }
        acc += if n % 2 == 0 { val } else { val * a };
    }
    acc / (m * m) as f64
}

/// Argument position in the multilinear expansion of a simple block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolarizationSlot {
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotParity {
    Holomorphic,
    Antiholomorphic,
}

impl PolarizationSlot {
    pub fn new(index: usize) -> Self {
        assert!(index >= 1, "slot indices are 1-based");
        PolarizationSlot { index }
    }

    /// Odd slots take the field, even slots its conjugate.
    pub fn parity(self) -> SlotParity {
        if self.index % 2 == 1 {
            SlotParity::Holomorphic
        } else {
            SlotParity::Antiholomorphic
        }
    }

    pub fn with_parity(index: usize, parity: SlotParity) -> Result<Self, WickError> {
        let slot = PolarizationSlot::new(index);
        if slot.parity() != parity {
            let name = |p: SlotParity| match p {
                SlotParity::Holomorphic => "holomorphic",
                SlotParity::Antiholomorphic => "antiholomorphic",
            };
            return Err(WickError::SlotParityMismatch {
                index,
                actual: name(slot.parity()),
                requested: name(parity),
            });
        }
        Ok(slot)
    }
}

/// Extraction weights: y with sum_i y_i p(nodes_i) = coefficient of x^which
/// for every polynomial p of degree < nodes.len().
fn poly_coeff_weights(nodes: &[f64], which: usize) -> Vec<f64> {
    let d = nodes.len();
    assert!(which < d);
    // solve V^T y = e_which where V[i][j] = nodes[i]^j
    let mut a = vec![vec![0.0f64; d + 1]; d];
    for (j, row) in a.iter_mut().enumerate() {
        for (i, &x) in nodes.iter().enumerate() {
            row[i] = x.powi(j as i32);
        }
        row[d] = if j == which { 1.0 } else { 0.0 };
    }
    // partial-pivot elimination
    for col in 0..d {
        let piv = (col..d).max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        let pv = a[col][col];
        assert!(pv.abs() > 1e-12, "degenerate interpolation nodes");
        for row in col + 1..d {
            let f = a[row][col] / pv;
            for j in col..=d {
                a[row][j] -= f * a[col][j];
            }
        }
    }
    let mut y = vec![0.0f64; d];
    for row in (0..d).rev() {
        let mut acc = a[row][d];
        for j in row + 1..d {
            acc -= a[row][j] * y[j];
        }
        y[row] = acc / a[row][row];
    }
    y
}

fn interpolation_nodes(count: usize) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(count);
    nodes.push(0.0);
    let mut step = 1.0;
    while nodes.len() < count {
        nodes.push(step);
        if nodes.len() < count {
            nodes.push(-step);
        }
        step += 1.0;
    }
    nodes
}

/// Multilinear form of the degree-(2l+1) simple block with `w` in the given
/// slot and `v` in every other slot.  Linear in w for odd slots, conjugate
/// linear for even slots; the diagonal w = v reproduces `script_n`.
pub fn script_n_polarized(
    l: usize,
    slot: PolarizationSlot,
    w: &SpectralField,
    v: &SpectralField,
    out_cutoff: u32,
) -> Result<SpectralField, WickError> {
    let arity = 2 * l + 1;
    if slot.index > arity {
        return Err(WickError::SlotOutOfRange { index: slot.index, arity });
    }
    if l == 0 {
        return Ok(SpectralField::zero(out_cutoff));
    }
    let vbar = conj_field(v);
    let (multiplicity, degree) = match slot.parity() {
        SlotParity::Holomorphic => (l + 1, l + 1),
        SlotParity::Antiholomorphic => (l, l),
    };
    let nodes = interpolation_nodes(degree + 1);
    let weights = poly_coeff_weights(&nodes, 1);
    let mut acc: Option<SpectralField> = None;
    for (&eps, &wt) in nodes.iter().zip(&weights) {
        let value = match slot.parity() {
            SlotParity::Holomorphic => {
                let alpha = v.add_scaled(Complex64::new(eps, 0.0), w);
                script_n_bifield(&alpha, &vbar, l, out_cutoff)
            }
            SlotParity::Antiholomorphic => {
                let beta = vbar.add_scaled(Complex64::new(eps, 0.0), &conj_field(w));
                script_n_bifield(v, &beta, l, out_cutoff)
            }
        };
        acc = Some(match acc {
            None => value.scale(Complex64::new(wt, 0.0)),
            Some(a) => a.add_scaled(Complex64::new(wt, 0.0), &value),
        });
    }
    Ok(acc.unwrap().scale(Complex64::new(1.0 / multiplicity as f64, 0.0)))
}

/// Direct evaluation of the gauged nonlinearity: centered degree-(2r+1)
/// power minus (r+1) times the mean of the centered degree-2r power times
/// the field, both centered at sigma.
fn gauged_direct(v: &SpectralField, ctx: &WickContext, out_cutoff: u32) -> SpectralField {
    let w_odd = wick_power_projected(v, 2 * ctx.r + 1, ctx.sigma, out_cutoff);
    let w_even_mean = wick_power_mean(v, 2 * ctx.r, ctx.sigma);
    w_odd.add_scaled(-((ctx.r + 1) as f64) * w_even_mean, &v.project(out_cutoff))
}

/// Expansion evaluation: sum over l of c_{rl} (m*)^{r-l} times the simple
/// degree-(2l+1) blocks.
pub fn gauged_expansion(v: &SpectralField, ctx: &WickContext, m_star: f64, out_cutoff: u32) -> SpectralField {
    let mut acc = SpectralField::zero(out_cutoff);
    for l in (1..=ctx.r).rev() {
        let coeff = ctx.c_coeff(l) * m_star.powi((ctx.r - l) as i32);
        let block = script_n_projected(v, l, out_cutoff);
        acc = acc.add_scaled(Complex64::new(coeff, 0.0), &block);
    }
    acc
}

/// Gauged nonlinearity with the dual-path consistency check.  `m_star`
/// must be the frozen centered mass of v (mass(v) - sigma); the two
/// evaluation paths agree exactly then, and a disagreement beyond the
/// tolerance reports an error instead of returning silently wrong data.
pub fn gauged_nonlinearity(v: &SpectralField, ctx: &WickContext, m_star: f64) -> Result<SpectralField, WickError> {
    let out_cutoff = full_product_cutoff(&vec![v.cutoff(); 2 * ctx.r + 1]);
    let direct = gauged_direct(v, ctx, out_cutoff);
    let expansion = gauged_expansion(v, ctx, m_star, out_cutoff);
    let gap = direct.max_diff(&expansion);
    let scale = direct.l2_norm().max(1e-30);
    let tol = 1e-8;
    if gap / scale > tol {
        return Err(WickError::PathDisagreement { gap: gap / scale, tol });
    }
    Ok(expansion)
}

/// Single-pass expansion evaluation for integrator inner loops: one grid
/// round trip, with the even-power means read from the same grid.
pub fn gauged_fast(v: &SpectralField, ctx: &WickContext, m_star: f64, out_cutoff: u32) -> SpectralField {
    let r = ctx.r;
    let k = v.support_radius();
    let m_grid = grid_size_projected(&vec![k; 2 * r + 1], crate::spectral::shell_radius(out_cutoff));
    let grid = to_physical(v, m_grid);
    let m = mass(v);
    // means of s^j over the grid are exact for j <= r
    let mut mean_pows = vec![0.0f64; r + 1];
    for z in &grid.values {
        let s = z.norm_sqr();
        let mut s_pow = 1.0;
        for mp in mean_pows.iter_mut() {
            *mp += s_pow;
            s_pow *= s;
        }
    }
    for mp in mean_pows.iter_mut() {
        *mp /= (m_grid * m_grid) as f64;
    }
    // assemble P(s) and the scalar correction q with
    // Q = sum_l c_l (m*)^{r-l} [ :|v|^{2l}v: - (l+1) A(:|v|^{2l}:) v ]
    let mut poly = vec![0.0f64; r + 1];
    let mut q = 0.0f64;
    for l in 1..=r {
        let cl = ctx.c_coeff(l) * m_star.powi((r - l) as i32);
        let odd = centered_odd_coeffs(l, m);
        for (j, &co) in odd.iter().enumerate() {
            poly[j] += cl * co;
        }
        let even = centered_even_coeffs(l, m);
        let a_even: f64 = even.iter().zip(&mean_pows).map(|(c, mp)| c * mp).sum();
        q += cl * (l + 1) as f64 * a_even;
    }
    let mut out = PhysicalGrid::zero(m_grid);
    for (o, &z) in out.values.iter_mut().zip(&grid.values) {
        *o = z * (horner(&poly, z.norm_sqr()) - q);
    }
    to_spectral(&out, out_cutoff)
}
