//! Slow, obviously-correct reference computations used by tests and by
//! cross-check paths: sparse convolution products, direct resonant sums,
//! and brute-force divisor enumeration.

use crate::spectral::{SpectralField, Wavenumber};
use num_complex::Complex64;
use std::collections::BTreeMap;

/// Sparse Fourier map keyed by (kx, ky).
pub type SparseField = BTreeMap<(i64, i64), Complex64>;

pub fn from_field(u: &SpectralField) -> SparseField {
    let mut out = SparseField::new();
    for (w, c) in u.iter_shell() {
        if c.norm() != 0.0 {
            out.insert((w.kx as i64, w.ky as i64), c);
        }
    }
    out
}

/// Complex conjugate in physical space: coefficients conjugate and reflect.
pub fn conj_map(a: &SparseField) -> SparseField {
    let mut out = SparseField::new();
    for (&(kx, ky), &c) in a {
        out.insert((-kx, -ky), c.conj());
    }
    out
}

/// Exact convolution (pointwise product in physical space).
pub fn conv(a: &SparseField, b: &SparseField) -> SparseField {
    let mut out = SparseField::new();
    for (&(ax, ay), &ac) in a {
        for (&(bx, by), &bc) in b {
            *out.entry((ax + bx, ay + by)).or_insert(Complex64::new(0.0, 0.0)) += ac * bc;
        }
    }
    out
}

/// Product of factors u or conj(u) per the conjugation pattern.
pub fn product_path(u: &SpectralField, conj_flags: &[bool]) -> SparseField {
    assert!(!conj_flags.is_empty());
    let base = from_field(u);
    let factor = |flag: bool| if flag { conj_map(&base) } else { base.clone() };
    let mut acc = factor(conj_flags[0]);
    for &flag in &conj_flags[1..] {
        acc = conv(&acc, &factor(flag));
    }
    acc
}

/// |u|^2 u via iterated sparse convolution.
pub fn cubic_modulus_product(u: &SpectralField) -> SparseField {
    product_path(u, &[false, true, false])
}

/// |u|^{2p} u (p conjugated factors, p+1 plain ones).
pub fn modulus_power_odd(u: &SpectralField, p: usize) -> SparseField {
    let mut flags = Vec::new();
    for _ in 0..p {
        flags.push(false);
        flags.push(true);
    }
    flags.push(false);
    product_path(u, &flags)
}

/// |u|^{2p} (p conjugated factors, p plain ones).
pub fn modulus_power_even(u: &SpectralField, p: usize) -> SparseField {
    assert!(p >= 1);
    let mut flags = Vec::new();
    for _ in 0..p {
        flags.push(false);
        flags.push(true);
    }
    product_path(u, &flags)
}

/// Direct triple sum for the mean-free cubic resonant combination:
/// sum over k1 - k2 + k3 = k with k2 not in {k1, k3}, minus |u_k|^2 u_k.
pub fn cubic_resonant_direct(u: &SpectralField) -> SparseField {
    let modes: Vec<(Wavenumber, Complex64)> = u.iter_shell().filter(|(_, c)| c.norm() != 0.0).collect();
    let mut out = SparseField::new();
    for &(k1, c1) in &modes {
        for &(k2, c2) in &modes {
            if k2 == k1 {
                continue;
            }
            for &(k3, c3) in &modes {
                if k2 == k3 {
                    continue;
                }
                let k = ((k1.kx - k2.kx + k3.kx) as i64, (k1.ky - k2.ky + k3.ky) as i64);
                *out.entry(k).or_insert(Complex64::new(0.0, 0.0)) += c1 * c2.conj() * c3;
            }
        }
    }
    for &(k, c) in &modes {
        *out.entry((k.kx as i64, k.ky as i64)).or_insert(Complex64::new(0.0, 0.0)) -= c * c.norm_sqr();
    }
    out.retain(|_, v| v.norm() != 0.0);
    out
}

/// Largest difference between a dense field and a sparse map, over the
/// union of their supports.
pub fn max_diff_map(u: &SpectralField, m: &SparseField) -> f64 {
    let mut best = 0.0f64;
    let mut seen = std::collections::BTreeSet::new();
    for (&(kx, ky), &c) in m {
        seen.insert((kx, ky));
        let w = Wavenumber::new(kx as i32, ky as i32);
        let ours = if kx.abs() <= u.k_max() as i64 && ky.abs() <= u.k_max() as i64 {
            u.get(w)
        } else {
            Complex64::new(0.0, 0.0)
        };
        best = best.max((ours - c).norm());
    }
    for (w, c) in u.iter_shell() {
        if !seen.contains(&(w.kx as i64, w.ky as i64)) {
            best = best.max(c.norm());
        }
    }
    best
}

/// Sparse map restricted to the shell of a cutoff, as a dense field.
pub fn to_field(m: &SparseField, cutoff: u32) -> SpectralField {
    SpectralField::from_fn(cutoff, |w| {
        m.get(&(w.kx as i64, w.ky as i64)).copied().unwrap_or(Complex64::new(0.0, 0.0))
    })
}

/// Number of positive divisors of |n| by trial division; n must be nonzero.
pub fn divisor_count_naive(n: i64) -> u64 {
    let n = n.unsigned_abs();
    assert!(n > 0);
    let mut count = 0u64;
    let mut d = 1u64;
    while d * d <= n {
        if n % d == 0 {
            count += if d * d == n { 1 } else { 2 };
        }
        d += 1;
    }
    count
}

/// Gaussian integer a + b i.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GaussInt {
    pub a: i64,
    pub b: i64,
}

impl GaussInt {
    pub fn new(a: i64, b: i64) -> Self {
        GaussInt { a, b }
    }

    pub fn norm(self) -> i64 {
        self.a * self.a + self.b * self.b
    }

    pub fn mul(self, o: GaussInt) -> GaussInt {
        GaussInt::new(self.a * o.a - self.b * o.b, self.a * o.b + self.b * o.a)
    }

    /// Exact quotient self / d when d divides self.
    pub fn div_exact(self, d: GaussInt) -> Option<GaussInt> {
        let n = d.norm();
        if n == 0 {
            return None;
        }
        // self * conj(d) / |d|^2
        let re = self.a * d.a + self.b * d.b;
        let im = self.b * d.a - self.a * d.b;
        if re % n == 0 && im % n == 0 {
            Some(GaussInt::new(re / n, im / n))
        } else {
            None
        }
    }
}

/// All Gaussian divisors of z (nonzero), by scanning norms up to N(z).
/// Includes unit multiples; intended for small norms in tests.
pub fn gaussian_divisors_naive(z: GaussInt) -> Vec<GaussInt> {
    let n = z.norm();
    assert!(n > 0, "divisors of zero are not enumerable");
    let r = (n as f64).sqrt() as i64 + 1;
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            let d = GaussInt::new(a, b);
            if d.norm() == 0 || d.norm() > n {
                continue;
            }
            if z.div_exact(d).is_some() {
                out.push(d);
            }
        }
    }
    out.sort();
    out
}
