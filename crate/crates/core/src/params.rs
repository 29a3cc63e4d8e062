//! Small-parameter bookkeeping and dyadic scale arithmetic.

use serde::{Deserialize, Serialize};

/// Derived exponent block controlling every fit-based check.
///
/// All members are functions of `delta` alone; `from_delta` is the only
/// constructor so a serialized block is always self-consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub delta: f64,
    pub delta0: f64,
    pub gamma: f64,
    pub gamma0: f64,
    pub kappa: f64,
    pub b: f64,
    pub b1: f64,
    pub b2: f64,
    pub a0: f64,
    pub eps: f64,
}

impl Params {
    pub fn from_delta(delta: f64) -> Self {
        assert!(delta > 0.0 && delta < 0.5, "delta out of range: {delta}");
        let d4 = delta.powi(4);
        let d6 = delta.powi(6);
        let b = 0.5 + d4;
        Params {
            delta,
            delta0: delta.powf(1.0 / 50.0),
            gamma: delta.powf(0.75),
            gamma0: delta.powf(1.25),
            kappa: d4.recip(),
            b,
            b1: b + d4,
            b2: b - d6,
            a0: 2.0 * b - 10.0 * d6,
            eps: 1.0,
        }
    }

    /// Strict ordering chain of the derived exponents.
    ///
    /// Returns every adjacent pair that fails, empty when the chain holds.
    pub fn hierarchy_violations(&self) -> Vec<(&'static str, f64, &'static str, f64)> {
        let chain: [(&'static str, f64); 8] = [
            ("eps", self.eps),
            ("delta0", self.delta0),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("gamma0", self.gamma0),
            ("delta*gamma0", self.delta * self.gamma0),
            ("b-1/2", self.b - 0.5),
            ("delta^6", self.delta.powi(6)),
        ];
        let mut bad = Vec::new();
        for w in chain.windows(2) {
            if !(w[0].1 > w[1].1) {
                bad.push((w[0].0, w[0].1, w[1].0, w[1].1));
            }
        }
        if (self.b - 0.5 - (self.b1 - self.b)).abs() > 1e-15 {
            bad.push(("b-1/2", self.b - 0.5, "b1-b", self.b1 - self.b));
        }
        if (self.b - 0.5 - self.kappa.recip()).abs() > 1e-15 {
            bad.push(("b-1/2", self.b - 0.5, "1/kappa", self.kappa.recip()));
        }
        bad
    }
}

impl Default for Params {
    fn default() -> Self {
        Params::from_delta(0.1)
    }
}

/// Dyadic scale 2^exp; `exp = -1` encodes the base scale 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dyadic {
    pub exp: i32,
}

impl Dyadic {
    pub const HALF: Dyadic = Dyadic { exp: -1 };
    pub const ONE: Dyadic = Dyadic { exp: 0 };

    pub fn from_int(n: u32) -> Self {
        assert!(n >= 1 && n.is_power_of_two(), "not a dyadic integer: {n}");
        Dyadic { exp: n.trailing_zeros() as i32 }
    }

    pub fn value(self) -> f64 {
        2f64.powi(self.exp)
    }

    /// Integer value; panics on 1/2.
    pub fn as_int(self) -> u32 {
        assert!(self.exp >= 0, "dyadic {:?} is fractional", self);
        1u32 << self.exp
    }

    pub fn half(self) -> Dyadic {
        Dyadic { exp: self.exp - 1 }
    }

    pub fn double(self) -> Dyadic {
        Dyadic { exp: self.exp + 1 }
    }
}

impl std::fmt::Display for Dyadic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.exp >= 0 {
            write!(f, "{}", 1u64 << self.exp)
        } else {
            write!(f, "1/{}", 1u64 << (-self.exp))
        }
    }
}
