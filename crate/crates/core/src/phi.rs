//! The φ-functions of exponential integrators.
//!
//! For `k >= 1` these are
//!
//! ```text
//! φ_k(z) = ∫₀¹ e^{z(1-θ)} θ^{k-1}/(k-1)! dθ,      φ_0(z) = e^z,
//! ```
//!
//! and satisfy the recursion `φ_{k+1}(z) = (φ_k(z) - 1/k!) / z` with
//! `φ_k(0) = 1/k!`. Every exponential Runge–Kutta weight in this crate is a
//! linear combination of these values evaluated at `z = -c·h`.
//!
//! Near `z = 0` the recursion subtracts two nearly equal numbers, so small
//! arguments are evaluated from the Taylor series `Σ_j z^j / (j+k)!` instead.

use crate::error::{Error, Result};

/// Largest supported order.
pub const MAX_ORDER: usize = 12;

/// Below this magnitude the Taylor branch is used for every order.
pub const TAYLOR_THRESHOLD: f64 = 1.0;

const MAX_TAYLOR_TERMS: usize = 30;

/// A finite real argument for the φ-functions.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PhiArgument(f64);

impl PhiArgument {
    pub fn new(z: f64) -> Result<Self> {
        if z.is_finite() {
            Ok(Self(z))
        } else {
            Err(Error::Domain(format!("phi argument must be finite, got {z}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `φ_0(z), …, φ_q(z)` computed in one pass with a single branch decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    z: f64,
    values: Vec<f64>,
}

impl PhiTable {
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn max_order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `φ_k(z)`; panics if `k` exceeds the table's order.
    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }
}

/// Evaluate `φ_k(z)`.
///
/// ```
/// use res_core::phi::phi;
/// let e = std::f64::consts::E;
/// assert!((phi(1, -1.0).unwrap() - (1.0 - 1.0 / e)).abs() < 1e-15);
/// assert_eq!(phi(2, 0.0).unwrap(), 0.5);
/// ```
pub fn phi(k: usize, z: f64) -> Result<f64> {
    Ok(phi_table(k, z)?.values[k])
}

/// Evaluate `φ_0(z), …, φ_q(z)`.
pub fn phi_table(q: usize, z: f64) -> Result<PhiTable> {
    if q > MAX_ORDER {
        return Err(Error::UnsupportedOrder { order: q, ceiling: MAX_ORDER });
    }
    let z = PhiArgument::new(z)?.get();
    let mut values = vec![0.0; q + 1];
    if z.abs() < TAYLOR_THRESHOLD {
        for (k, v) in values.iter_mut().enumerate() {
            *v = taylor(k, z);
        }
    } else {
        values[0] = z.exp();
        let mut inv_fact = 1.0; // 1/(k-1)!
        for k in 1..=q {
            values[k] = (values[k - 1] - inv_fact) / z;
            inv_fact /= k as f64;
        }
    }
    Ok(PhiTable { z, values })
}

/// `Σ_{j≥0} z^j/(j+k)!`, summed until the terms stop contributing.
fn taylor(k: usize, z: f64) -> f64 {
    let mut term = 1.0 / factorial(k);
    let mut sum = term;
    for j in 1..MAX_TAYLOR_TERMS {
        term *= z / (j + k) as f64;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson on `φ_k(-h) = h^{-k} ∫₀ʰ e^{τ-h} τ^{k-1}/(k-1)! dτ`.
    fn simpson_phi(k: usize, h: f64, panels: usize) -> f64 {
        assert!(panels.is_multiple_of(2));
        let f = |t: f64| (t - h).exp() * t.powi(k as i32 - 1) / factorial(k - 1);
        let dt = h / panels as f64;
        let mut acc = f(0.0) + f(h);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * dt);
        }
        acc * dt / 3.0 / h.powi(k as i32)
    }

    #[test]
    fn values_at_zero_are_inverse_factorials() {
        assert_eq!(phi(0, 0.0).unwrap(), 1.0);
        assert_eq!(phi(1, 0.0).unwrap(), 1.0);
        assert_eq!(phi(2, 0.0).unwrap(), 0.5);
        for k in 0..=MAX_ORDER {
            assert_eq!(phi(k, 0.0).unwrap(), 1.0 / factorial(k));
        }
    }

    #[test]
    fn closed_forms() {
        let e = std::f64::consts::E;
        assert!((phi(1, -1.0).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-15);
        // (e^{-2} - 1 + 2) / 4
        let expect = ((-2.0f64).exp() + 1.0) / 4.0;
        assert!((phi(2, -2.0).unwrap() - expect).abs() < 1e-15);
        assert!((phi(2, -2.0).unwrap() - 0.283_833_820_809_153_2).abs() < 1e-15);
        let t = phi_table(1, -1.0).unwrap();
        assert!((t.get(0) - 1.0 / e).abs() < 1e-16);
        assert!((t.get(1) - (1.0 - 1.0 / e)).abs() < 1e-15);
    }

    #[test]
    fn simpson_agreement() {
        // 10^6 panels for the single spot values.
        assert!((simpson_phi(1, 1.0, 1_000_000) - phi(1, -1.0).unwrap()).abs() < 1e-12);
        assert!((simpson_phi(2, 2.0, 1_000_000) - phi(2, -2.0).unwrap()).abs() < 1e-12);
        for &h in &[0.1, 1.0, 5.0] {
            for k in 1..=3 {
                let q = simpson_phi(k, h, 100_000);
                assert!((q - phi(k, -h).unwrap()).abs() < 1e-9, "k={k} h={h}");
            }
        }
    }

    #[test]
    fn table_matches_long_taylor_near_zero() {
        let z = -0.001;
        let t = phi_table(3, z).unwrap();
        for k in 0..=3 {
            let mut oracle = 0.0;
            for j in 0..20 {
                oracle += z.powi(j as i32) / factorial(j + k);
            }
            assert!((t.get(k) - oracle).abs() < 1e-14);
        }
        assert_eq!(phi_table(2, 0.0).unwrap().values(), &[1.0, 1.0, 0.5]);
    }

    #[test]
    fn small_argument_continuity() {
        for k in 0..=MAX_ORDER {
            for z in [1e-13, -1e-13] {
                assert!((phi(k, z).unwrap() - 1.0 / factorial(k)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn high_orders_stay_accurate_on_both_sides_of_the_branch() {
        // 60-term Taylor sums are exact to rounding for |z| <= 3
        for z in [-0.999_999_999f64, -1.0, -1.000_000_001, -1.5, -3.0, 0.999, 1.0] {
            for k in 0..=MAX_ORDER {
                let mut oracle = 0.0;
                for j in 0..60 {
                    oracle += z.powi(j as i32) / factorial(j + k);
                }
                assert!((phi(k, z).unwrap() - oracle).abs() < 1e-14, "k={k} z={z}");
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(phi(1, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(phi(1, f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(phi(13, 0.1), Err(Error::UnsupportedOrder { order: 13, .. })));
    }

    proptest! {
        #[test]
        fn recursion_identity(
            z in prop_oneof![-50.0f64..-1e-8, 1e-8f64..1.0],
            k in 1usize..=6,
        ) {
            let t = phi_table(k + 1, z).unwrap();
            let lhs = t.get(k + 1) * z - t.get(k) + 1.0 / factorial(k);
            prop_assert!(lhs.abs() <= 1e-12 * t.get(k).abs().max(1.0));
        }

        #[test]
        fn phi1_is_a_proper_fraction(h in 1e-6f64..200.0) {
            let v = phi(1, -h).unwrap();
            prop_assert!(v > 0.0 && v < 1.0);
        }

        #[test]
        fn table_agrees_with_scalar(z in -20.0f64..2.0, q in 0usize..=MAX_ORDER) {
            let t = phi_table(q, z).unwrap();
            for k in 0..=q {
                prop_assert_eq!(t.get(k), phi(k, z).unwrap());
            }
        }
    }
}
