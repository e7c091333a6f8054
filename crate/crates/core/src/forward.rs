//! Small-particle Rayleigh scattering and the refractive-index relation.
//!
//! The angular form factor is fixed at 1 and the detector angle at 90°, so
//! a single summarized Rayleigh ratio per concentration level is modelled.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::PhysicalConstants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalParams {
    /// Refractive index increment dn/dc, mL/g.
    pub dndc: f64,
    pub constants: PhysicalConstants,
}

impl OpticalParams {
    pub fn new(dndc: f64, constants: PhysicalConstants) -> Self {
        OpticalParams { dndc, constants }
    }
}

/// The dn/dc-free part of K*: 4π² n0² / (N_A λ⁴).
#[inline]
pub fn optical_prefactor(constants: &PhysicalConstants) -> f64 {
    let n0 = constants.n0;
    4.0 * PI * PI * n0 * n0 / (constants.avogadro * constants.lambda.powi(4))
}

/// Material constant K* = 4π² n0² (dn/dc)² / (N_A λ⁴).
#[inline]
pub fn kstar(p: &OpticalParams) -> f64 {
    optical_prefactor(&p.constants) * p.dndc * p.dndc
}

/// Excess Rayleigh ratio R = K* Mw c (1 − 2 A2 Mw c), 1/cm.
#[inline]
pub fn rayleigh(c: f64, mw: f64, a2: f64, p: &OpticalParams) -> f64 {
    rayleigh_from_kstar(c, mw, a2, kstar(p))
}

#[inline]
pub(crate) fn rayleigh_from_kstar(c: f64, mw: f64, a2: f64, kstar: f64) -> f64 {
    kstar * mw * c * (1.0 - 2.0 * a2 * mw * c)
}

/// Refractive index difference Δn = c · dn/dc.
#[inline]
pub fn delta_n(c: f64, p: &OpticalParams) -> f64 {
    c * p.dndc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LYSOZYME_MONOMER_MASS;

    fn optics(dndc: f64) -> OpticalParams {
        OpticalParams::new(dndc, PhysicalConstants::lysozyme())
    }

    #[test]
    fn kstar_is_quadratic_in_dndc() {
        assert_eq!(kstar(&optics(0.0)), 0.0);
        let k1 = kstar(&optics(0.1));
        let k2 = kstar(&optics(0.2));
        assert!((k2 / k1 - 4.0).abs() < 1e-14);
    }

    #[test]
    fn rayleigh_limits() {
        let p = optics(0.197);
        assert_eq!(rayleigh(0.0, LYSOZYME_MONOMER_MASS, 1e-4, &p), 0.0);
        // A2 = 0: exactly linear in c
        let r1 = rayleigh(0.01, LYSOZYME_MONOMER_MASS, 0.0, &p);
        let r2 = rayleigh(0.02, LYSOZYME_MONOMER_MASS, 0.0, &p);
        assert!((r2 - 2.0 * r1).abs() <= 1e-15 * r2);
    }

    #[test]
    fn delta_n_product() {
        let p = optics(0.1970);
        assert_eq!(delta_n(0.0, &p), 0.0);
        assert!((delta_n(0.010, &p) - 0.00197).abs() < 1e-18);
        assert_eq!(delta_n(0.02, &p), 2.0 * delta_n(0.01, &p));
    }

    #[test]
    fn small_c_slope_is_kstar_mw() {
        let p = optics(0.2);
        let mw = LYSOZYME_MONOMER_MASS;
        for a2 in [-1e-2, -1e-4, 0.0, 1e-4, 1e-2] {
            // The ratio deviates by 2·A2·Mw·c, about 2.9e-6 at |A2| = 1e-2,
            // so the 1e-6 limit check only applies to the moderate values.
            let c = 1e-8;
            let ratio = rayleigh(c, mw, a2, &p) / c;
            let target = kstar(&p) * mw;
            if a2.abs() <= 1e-3 {
                assert!(((ratio - target) / target).abs() < 1e-6);
            }
            // positive slope by central differences at c = 1e-4
            let h = 1e-7;
            let slope = (rayleigh(1e-4 + h, mw, a2, &p) - rayleigh(1e-4 - h, mw, a2, &p)) / (2.0 * h);
            assert!(slope > 0.0);
        }
    }

    #[test]
    fn concave_for_positive_a2() {
        let p = optics(0.2);
        let mw = LYSOZYME_MONOMER_MASS;
        let a2 = 3.5e-4;
        let c_max = 1.0 / (4.0 * a2 * mw);
        let h = c_max / 200.0;
        let mut c = h;
        while c + h <= c_max {
            let d2 = rayleigh(c + h, mw, a2, &p) - 2.0 * rayleigh(c, mw, a2, &p)
                + rayleigh(c - h, mw, a2, &p);
            assert!(d2 <= 1e-18, "second difference {d2} at c={c}");
            c += h;
        }
    }
}
