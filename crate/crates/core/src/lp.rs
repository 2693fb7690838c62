//! Littlewood-Paley projections on the grid.
//!
//! The radial bump is `psi_lp(r) = eta(r/2) - eta(r)` with the smooth step
//! `eta(r) = e(2-2r) / (e(2-2r) + e(2r-1))`, `e(t) = exp(-1/t)` for positive
//! `t` and zero otherwise. `eta` is 1 on r <= 1/2 and 0 on r >= 1, which
//! makes the dyadic partition telescope exactly:
//! `sum_k psi_lp(2^k r) = 1` for every r > 0, and `psi_lp(1) = 1`.

use crate::error::{EwError, Result};
use crate::fft::{forward, inverse};
use crate::grid::{Field, Grid3};

fn e(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 1 for r <= 1/2, 0 for r >= 1.
pub fn eta(r: f64) -> f64 {
    let a = e(2.0 - 2.0 * r);
    let b = e(2.0 * r - 1.0);
    if a == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// The fixed radial profile, supported in the open annulus (1/2, 2).
pub fn lp_bump(r: f64) -> f64 {
    eta(0.5 * r) - eta(r)
}

/// One dyadic band nu = 2^k, k >= 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpBand {
    nu: f64,
}

impl LpBand {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(EwError::contract("dyadic band exponent must be >= 1"));
        }
        Ok(LpBand {
            nu: (1u64 << k) as f64,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Bump value at frequency magnitude |xi|.
    pub fn weight(&self, xi_abs: f64) -> f64 {
        lp_bump(xi_abs / self.nu)
    }
}

/// Largest radial frequency representable on the grid.
pub fn max_radial_xi(grid: Grid3) -> f64 {
    grid.nyquist_xi() * 3.0_f64.sqrt()
}

/// All bands whose support intersects the grid's frequency content,
/// in increasing order. Bands past the Nyquist are kept (truncated by
/// the grid), so that the partition telescopes to the identity.
pub fn representable_bands(grid: Grid3) -> Vec<LpBand> {
    let rmax = max_radial_xi(grid);
    let mut bands = Vec::new();
    let mut k = 1u32;
    loop {
        let band = LpBand::new(k).unwrap();
        // Support is (nu/2, 2 nu); once nu/2 >= rmax nothing is left,
        // but we need one extra band so eta(rmax / 2^K) = 1.
        bands.push(band);
        if (1u64 << k) as f64 >= rmax {
            break;
        }
        k += 1;
    }
    bands
}

/// Applies the band multiplier psi_lp(|xi| / nu).
///
/// Returns a warning flag when the band reaches beyond the grid Nyquist;
/// the filtered field is returned anyway (band truncated by the grid).
pub fn lp_project(f: &Field, band: LpBand) -> (Field, bool) {
    let grid = f.grid();
    let truncated = 2.0 * band.nu() > max_radial_xi(grid);
    let mut spec = forward(f);
    let l = grid.box_len();
    spec.map_modes(|mi, mj, mk, v| {
        let xi = 2.0 * std::f64::consts::PI / l
            * (((mi * mi + mj * mj + mk * mk) as f64).sqrt());
        v * band.weight(xi)
    });
    (inverse(&spec), truncated)
}

/// The low-pass complement of the dyadic bands: multiplier eta(|xi|/2).
pub fn lp_lowpass(f: &Field) -> Field {
    let grid = f.grid();
    let l = grid.box_len();
    let mut spec = forward(f);
    spec.map_modes(|mi, mj, mk, v| {
        let xi = 2.0 * std::f64::consts::PI / l
            * (((mi * mi + mj * mj + mk * mk) as f64).sqrt());
        v * eta(0.5 * xi)
    });
    inverse(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid3};

    #[test]
    fn bump_partition_of_unity_on_radial_sample() {
        // 10^3 radii spread over several decades.
        for q in 0..1000 {
            let r = 10f64.powf(-3.0 + 6.0 * (q as f64 + 0.5) / 1000.0);
            let mut s = 0.0;
            for k in -40..40_i32 {
                s += lp_bump(2f64.powi(k) * r);
            }
            assert!((s - 1.0).abs() <= 1e-10, "partition at r = {r}: {s}");
        }
    }

    #[test]
    fn bump_is_one_at_unit_radius_and_supported_in_annulus() {
        assert!((lp_bump(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(lp_bump(0.5), 0.0);
        assert_eq!(lp_bump(2.0), 0.0);
        assert_eq!(lp_bump(0.1), 0.0);
        assert_eq!(lp_bump(4.0), 0.0);
        assert!(lp_bump(0.75) > 0.0);
        assert!(lp_bump(1.5) > 0.0);
    }

    #[test]
    fn band_zero_exponent_rejected() {
        assert!(LpBand::new(0).is_err());
        assert!(LpBand::new(1).is_ok());
    }

    #[test]
    fn single_mode_at_band_center_passes_unchanged() {
        let grid = Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap();
        // |xi| = 2 with L = 2 pi.
        let f = Field::sample_scalar(grid, |x| (2.0 * x[0]).sin());
        let (p, _) = lp_project(&f, LpBand::new(1).unwrap());
        let mut err: f64 = 0.0;
        for (a, b) in f.data().iter().zip(p.data()) {
            err = err.max((a - b).abs());
        }
        assert!(err <= 1e-12, "band-center mode altered by {err}");
    }

    #[test]
    fn single_mode_far_outside_band_is_annihilated() {
        let grid = Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap();
        // |xi| = 8 = 4 * nu for nu = 2.
        let f = Field::sample_scalar(grid, |x| (8.0 * x[0]).sin());
        let (p, _) = lp_project(&f, LpBand::new(1).unwrap());
        assert!(p.max_abs() <= 1e-13);
    }

    #[test]
    fn bands_plus_lowpass_reconstruct_identity() {
        let grid = Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap();
        let f = crate::random::rough_random_field(grid, crate::grid::Rank::Scalar, 2.0, 1.0, 42)
            .unwrap();
        let mut recon = lp_lowpass(&f);
        for band in representable_bands(grid) {
            let (p, _) = lp_project(&f, band);
            recon.axpy(1.0, &p);
        }
        let mut err: f64 = 0.0;
        for (a, b) in f.data().iter().zip(recon.data()) {
            err = err.max((a - b).abs());
        }
        assert!(err <= 1e-10, "partition reconstruction error {err}");
    }

    #[test]
    fn distant_bands_are_orthogonal() {
        let grid = Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap();
        let f = crate::random::rough_random_field(grid, crate::grid::Rank::Scalar, 2.0, 1.0, 7)
            .unwrap();
        let (p2, _) = lp_project(&f, LpBand::new(1).unwrap());
        let (p8, _) = lp_project(&p2, LpBand::new(3).unwrap());
        assert!(p8.max_abs() <= 1e-14, "P_8 P_2 f = {}", p8.max_abs());
    }
}
