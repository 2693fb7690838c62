//! The admissible harmonic material model.
//!
//! The displacement obeys
//!   d_t^2 U - c2^2 Lap U - (c1^2 - c2^2) grad(div U)
//!     = div{ G(dU) I + b det(F) F^{-T} },
//! where the b-term drops by the Piola identity and the G-term reduces to
//! sum_{j,k} gamma'(d_j U^k) d_i d_j U^k, the gradient of G(dU).
//!
//! G is entrywise: G(M) = sum_{j,k} gamma(M_{jk}) with polynomial
//! gamma(m) = sum_{p>=2} kappa_p m^p / p, so gamma(0) = gamma'(0) = 0 and
//! every product is exactly dealiasable at quadratic order.

use crate::error::{EwError, Result};
use crate::fft::{forward, inverse};
use crate::grid::{Field, Rank};
use crate::spectral::{
    dealias, divergence_of_matrix, gradient_spectrum, spectral_derivative, DerivKind,
};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Wave speeds, Piola coefficient and nonlinearity profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    /// Longitudinal speed.
    pub c1: f64,
    /// Transverse speed.
    pub c2: f64,
    /// Coefficient of the det(F) F^{-T} stress term.
    pub b_coef: f64,
    /// Polynomial coefficients [kappa_2, kappa_3, ...].
    #[serde(default)]
    pub gamma: Vec<f64>,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        MaterialSpec {
            c1: 1.0,
            c2: 0.5,
            b_coef: 0.5,
            gamma: vec![0.4, 0.1],
        }
    }
}

impl MaterialSpec {
    pub fn new(c1: f64, c2: f64, b_coef: f64, gamma: Vec<f64>) -> Result<Self> {
        let spec = MaterialSpec {
            c1,
            c2,
            b_coef,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > self.c2 && self.c2 > 0.0) {
            return Err(EwError::contract(format!(
                "wave speeds must satisfy c1 > c2 > 0, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if !self.gamma.iter().all(|k| k.is_finite()) || !self.b_coef.is_finite() {
            return Err(EwError::contract("material coefficients must be finite"));
        }
        Ok(())
    }

    pub fn linear(c1: f64, c2: f64) -> Result<Self> {
        Self::new(c1, c2, 0.0, vec![])
    }

    /// gamma(m) = sum_p kappa_p m^p / p, p starting at 2.
    pub fn gamma_eval(&self, m: f64) -> f64 {
        let mut acc = 0.0;
        let mut mp = m; // m^(p-1)
        for (i, kappa) in self.gamma.iter().enumerate() {
            let p = (i + 2) as f64;
            mp *= m;
            acc += kappa * mp / p;
        }
        acc
    }

    /// gamma'(m) = sum_p kappa_p m^(p-1).
    pub fn gamma_prime(&self, m: f64) -> f64 {
        let mut acc = 0.0;
        let mut mp = 1.0;
        for kappa in &self.gamma {
            mp *= m;
            acc += kappa * mp;
        }
        acc
    }

    /// gamma''(m) = sum_p (p-1) kappa_p m^(p-2).
    pub fn gamma_second(&self, m: f64) -> f64 {
        let mut acc = 0.0;
        let mut mp = 1.0;
        for (i, kappa) in self.gamma.iter().enumerate() {
            let p = (i + 2) as f64;
            acc += (p - 1.0) * kappa * mp;
            mp *= m;
        }
        acc
    }

    /// max |gamma''| over |m| <= range, by dense sampling.
    pub fn max_gamma_second(&self, range: f64) -> f64 {
        (0..=200)
            .map(|q| {
                let m = -range + 2.0 * range * q as f64 / 200.0;
                self.gamma_second(m).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_linear(&self) -> bool {
        self.gamma.iter().all(|k| *k == 0.0)
    }
}

/// Displacement gradient as a matrix field, (dU)_{jk} = d_j U^k at c = 3j+k.
pub fn displacement_gradient(u: &Field) -> Result<Field> {
    if u.rank() != Rank::Vector3 {
        return Err(EwError::contract("displacement gradient expects a vector field"));
    }
    u.assert_finite()?;
    Ok(inverse(&gradient_spectrum(&forward(u))))
}

/// Deformation gradient F = I + dU.
pub fn deformation_gradient(u: &Field) -> Result<Field> {
    let mut f = displacement_gradient(u)?;
    for d in 0..3 {
        let c = 3 * d + d;
        for v in f.component_mut(c) {
            *v += 1.0;
        }
    }
    Ok(f)
}

/// Cofactor matrix of F, assembled entrywise (quadratic, no division):
/// cof(F) = det(F) F^{-T}.
pub fn cofactor_matrix(f: &Field) -> Result<Field> {
    if f.rank() != Rank::Matrix3x3 {
        return Err(EwError::contract("cofactor expects a matrix field"));
    }
    let grid = f.grid();
    let m = grid.points();
    let mut out = Field::zeros(grid, Rank::Matrix3x3);
    let get = |p: usize, q: usize| f.component(3 * p + q);
    // cof(F)_{pq} = d det / d F_{pq}
    let minors: [(usize, usize, [(usize, usize, usize, usize, f64); 2]); 9] = [
        (0, 0, [(1, 1, 2, 2, 1.0), (1, 2, 2, 1, -1.0)]),
        (0, 1, [(1, 2, 2, 0, 1.0), (1, 0, 2, 2, -1.0)]),
        (0, 2, [(1, 0, 2, 1, 1.0), (1, 1, 2, 0, -1.0)]),
        (1, 0, [(0, 2, 2, 1, 1.0), (0, 1, 2, 2, -1.0)]),
        (1, 1, [(0, 0, 2, 2, 1.0), (0, 2, 2, 0, -1.0)]),
        (1, 2, [(0, 1, 2, 0, 1.0), (0, 0, 2, 1, -1.0)]),
        (2, 0, [(0, 1, 1, 2, 1.0), (0, 2, 1, 1, -1.0)]),
        (2, 1, [(0, 2, 1, 0, 1.0), (0, 0, 1, 2, -1.0)]),
        (2, 2, [(0, 0, 1, 1, 1.0), (0, 1, 1, 0, -1.0)]),
    ];
    for (p, q, terms) in minors.iter() {
        let mut vals = vec![0.0; m];
        for (a, b, c, d, sign) in terms.iter() {
            let ab = get(*a, *b);
            let cd = get(*c, *d);
            for idx in 0..m {
                vals[idx] += sign * ab[idx] * cd[idx];
            }
        }
        out.component_mut(3 * p + q).copy_from_slice(&vals);
    }
    Ok(out)
}

/// det(F) pointwise.
pub fn determinant_field(f: &Field) -> Result<Field> {
    if f.rank() != Rank::Matrix3x3 {
        return Err(EwError::contract("determinant expects a matrix field"));
    }
    let grid = f.grid();
    let m = grid.points();
    let mut out = Field::zeros(grid, Rank::Scalar);
    let data = out.component_mut(0);
    for idx in 0..m {
        let e = |p: usize, q: usize| f.component(3 * p + q)[idx];
        data[idx] = e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1))
            - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
            + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0));
    }
    Ok(out)
}

/// div cof(F), spectrally with dealiasing. Vanishes identically for the
/// continuum cofactor (Jacobi's formula); the max norm measures aliasing
/// and roundoff only.
pub fn piola_identity_residual(u: &Field) -> Result<(Field, f64)> {
    let f = deformation_gradient(u)?;
    let cof = dealias(&cofactor_matrix(&f)?);
    let residual = divergence_of_matrix(&cof)?;
    let max_norm = residual.max_abs();
    Ok((residual, max_norm))
}

/// All second derivatives d_i d_j U^k from a precomputed spectrum,
/// indexed [sym(i,j)][k].
fn second_derivatives_from(uhat: &crate::fft::Spectrum) -> Vec<Field> {
    const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    PAIRS
        .iter()
        .map(|&(i, j)| inverse(&crate::spectral::mixed_spectrum(uhat, i, j)))
        .collect()
}

fn sym_pair_index(i: usize, j: usize) -> usize {
    const LOOKUP: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    LOOKUP[i][j]
}

/// Direct-form nonlinearity f_i = sum_{j,k} gamma'(d_j U^k) d_i d_j U^k,
/// pointwise with spectral second derivatives, result dealiased.
pub fn nonlinearity(u: &Field, spec: &MaterialSpec) -> Result<Field> {
    u.assert_finite()?;
    let uhat = forward(u);
    nonlinearity_from(&uhat, spec)
}

pub(crate) fn nonlinearity_from(
    uhat: &crate::fft::Spectrum,
    spec: &MaterialSpec,
) -> Result<Field> {
    spec.validate()?;
    let grid = uhat.grid;
    if spec.is_linear() {
        return Ok(Field::zeros(grid, Rank::Vector3));
    }
    let du = inverse(&gradient_spectrum(uhat));
    let d2 = second_derivatives_from(uhat);
    let m = grid.points();
    let mut out = Field::zeros(grid, Rank::Vector3);
    // gamma'(dU_{jk}) shared across output components.
    let mut gp = vec![0.0; 9 * m];
    for jk in 0..9 {
        let src = du.component(jk);
        let dst = &mut gp[jk * m..(jk + 1) * m];
        dst.par_iter_mut()
            .zip(src.par_iter())
            .for_each(|(g, &v)| *g = spec.gamma_prime(v));
    }
    for i in 0..3 {
        let mut comp = vec![0.0; m];
        for j in 0..3 {
            for k in 0..3 {
                let g = &gp[(3 * j + k) * m..(3 * j + k + 1) * m];
                let dd = d2[sym_pair_index(i, j)].component(k);
                for idx in 0..m {
                    comp[idx] += g[idx] * dd[idx];
                }
            }
        }
        out.component_mut(i).copy_from_slice(&comp);
    }
    Ok(dealias(&out))
}

/// Gradient-form evaluation: f = grad(G(dU)) with G dealiased first.
/// Agrees with [`nonlinearity`] wherever products are alias-free.
pub fn nonlinearity_gradient_form(u: &Field, spec: &MaterialSpec) -> Result<Field> {
    spec.validate()?;
    if spec.is_linear() {
        return Ok(Field::zeros(u.grid(), Rank::Vector3));
    }
    let du = displacement_gradient(u)?;
    let big_g = stored_energy_density(&du, spec);
    spectral_derivative(&dealias(&big_g), DerivKind::Grad)
}

/// G(dU) = sum_{j,k} gamma(dU_{jk}) pointwise.
pub fn stored_energy_density(du: &Field, spec: &MaterialSpec) -> Field {
    let grid = du.grid();
    let m = grid.points();
    let mut out = Field::zeros(grid, Rank::Scalar);
    let data = out.component_mut(0);
    for jk in 0..9 {
        let src = du.component(jk);
        for idx in 0..m {
            data[idx] += spec.gamma_eval(src[idx]);
        }
    }
    out
}

/// Reduced right-hand side: c2^2 Lap U + (c1^2 - c2^2) grad(div U) + f(U).
pub fn acceleration(u: &Field, spec: &MaterialSpec) -> Result<Field> {
    if u.rank() != Rank::Vector3 {
        return Err(EwError::contract("acceleration expects a vector field"));
    }
    u.assert_finite()?;
    let uhat = forward(u);
    let mut acc = linear_acceleration_from(&uhat, spec);
    if !spec.is_linear() {
        let f = nonlinearity_from(&uhat, spec)?;
        acc.axpy(1.0, &f);
    }
    Ok(acc)
}

/// The constant-coefficient principal part, assembled in one spectral pass.
pub fn linear_acceleration(u: &Field, spec: &MaterialSpec) -> Result<Field> {
    if u.rank() != Rank::Vector3 {
        return Err(EwError::contract("acceleration expects a vector field"));
    }
    Ok(linear_acceleration_from(&forward(u), spec))
}

fn linear_acceleration_from(uhat: &crate::fft::Spectrum, spec: &MaterialSpec) -> Field {
    let grid = uhat.grid;
    let n = grid.n();
    let mut out = crate::fft::Spectrum::zeros(grid, Rank::Vector3);
    let c2s = spec.c2 * spec.c2;
    let dc = spec.c1 * spec.c1 - c2s;
    let nyq = grid.nyquist_mode();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = (i * n + j) * n + k;
                let ms = [grid.mode(i), grid.mode(j), grid.mode(k)];
                let xi = [grid.xi(i), grid.xi(j), grid.xi(k)];
                let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                // First-derivative factors zero their axis Nyquist.
                let xi_odd = |a: usize| if ms[a] == nyq { 0.0 } else { xi[a] };
                let div: num_complex::Complex64 = (0..3)
                    .map(|a| uhat.component(a)[idx] * xi_odd(a))
                    .sum();
                for c in 0..3 {
                    let lap = -k2 * uhat.component(c)[idx];
                    let gd = -xi_odd(c) * div;
                    out.component_mut(c)[idx] = c2s * lap + dc * gd;
                }
            }
        }
    }
    inverse(&out)
}

/// One symmetric-eigenvalue scan of M = (c1^2 - c2^2) I + sym gamma'(dU):
/// returns (min eigenvalue, max eigenvalue) over the grid. The spatial
/// block of g^{-1} is M + c2^2 I, so this feeds both the hyperbolicity
/// margin and the CFL speed bound.
pub fn stability_scan(du: &Field, spec: &MaterialSpec) -> (f64, f64) {
    let m = du.grid().points();
    let dc = spec.c1 * spec.c1 - spec.c2 * spec.c2;
    let extremes: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|idx| {
            let mut mat = Matrix3::zeros();
            for j in 0..3 {
                for k in 0..3 {
                    let gp = spec.gamma_prime(du.component(3 * j + k)[idx]);
                    mat[(j, k)] = if j == k { dc + gp } else { gp };
                }
            }
            let sym = 0.5 * (mat + mat.transpose());
            let eig = sym.symmetric_eigenvalues();
            (eig.min(), eig.max())
        })
        .collect();
    extremes
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        })
}

/// Unreduced right-hand side div{ G(dU) I + b cof(F) }, for verification
/// against the reduced form (the b-term vanishes by the Piola identity).
pub fn acceleration_unreduced(u: &Field, spec: &MaterialSpec) -> Result<Field> {
    let du = displacement_gradient(u)?;
    let f = deformation_gradient(u)?;
    let cof = cofactor_matrix(&f)?;
    let big_g = stored_energy_density(&du, spec);
    let grid = u.grid();
    let m = grid.points();
    let mut stress = Field::zeros(grid, Rank::Matrix3x3);
    for p in 0..3 {
        for q in 0..3 {
            let c = 3 * p + q;
            let dst = stress.component_mut(c);
            let cpq = cof.component(c);
            let gd = big_g.component(0);
            for idx in 0..m {
                dst[idx] = spec.b_coef * cpq[idx] + if p == q { gd[idx] } else { 0.0 };
            }
        }
    }
    let nonlinear_part = divergence_of_matrix(&dealias(&stress))?;
    let mut acc = linear_acceleration(u, spec)?;
    acc.axpy(1.0, &dealias(&nonlinear_part));
    Ok(acc)
}

/// Hyperbolicity monitor for M_{jk} = (c1^2 - c2^2) delta_{jk} + gamma'(dU_{jk}),
/// symmetrized; margin is the minimum eigenvalue over the grid.
#[derive(Debug, Clone, Copy)]
pub struct HyperbolicityReport {
    pub ok: bool,
    pub margin: f64,
    pub lambda_max: f64,
    /// Two-sided constant C = max(lambda_max, 1 / lambda_min).
    pub c_bound: f64,
}

pub fn hyperbolicity_check(du: &Field, spec: &MaterialSpec) -> Result<HyperbolicityReport> {
    if du.rank() != Rank::Matrix3x3 {
        return Err(EwError::contract("hyperbolicity check expects the displacement gradient"));
    }
    let m = du.grid().points();
    let dc = spec.c1 * spec.c1 - spec.c2 * spec.c2;
    let extremes: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|idx| {
            let mut mat = Matrix3::zeros();
            for j in 0..3 {
                for k in 0..3 {
                    let gp = spec.gamma_prime(du.component(3 * j + k)[idx]);
                    mat[(j, k)] = if j == k { dc + gp } else { gp };
                }
            }
            let sym = 0.5 * (mat + mat.transpose());
            let eig = sym.symmetric_eigenvalues();
            (eig.min(), eig.max())
        })
        .collect();
    let mut margin = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    for (lo, hi) in extremes {
        margin = margin.min(lo);
        lambda_max = lambda_max.max(hi);
    }
    let ok = margin > 0.0 && lambda_max.is_finite();
    let c_bound = if margin > 0.0 {
        lambda_max.max(1.0 / margin)
    } else {
        f64::INFINITY
    };
    Ok(HyperbolicityReport {
        ok,
        margin,
        lambda_max,
        c_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid3;
    use crate::random::rough_random_field;
    use crate::spectral::helmholtz_decompose;

    fn grid32() -> Grid3 {
        Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap()
    }

    fn random_u(grid: Grid3, seed: u64, max_grad: f64) -> Field {
        let mut u = rough_random_field(grid, Rank::Vector3, 2.6, 1.0, seed).unwrap();
        let du = displacement_gradient(&u).unwrap();
        u.scale(max_grad / du.max_abs());
        u
    }

    #[test]
    fn zero_displacement_gives_identity_gradient() {
        let grid = Grid3::new(16, 1.0).unwrap();
        let u = Field::zeros(grid, Rank::Vector3);
        let f = deformation_gradient(&u).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!(f
                    .component(3 * j + k)
                    .iter()
                    .all(|v| (v - expect).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn shear_mode_has_expected_gradient_pattern() {
        // U = (eps sin(x2), 0, 0): dU_{21} = eps cos(x2), everything else 0.
        let grid = grid32();
        let eps = 0.05;
        let u = Field::sample(grid, Rank::Vector3, |x| vec![eps * x[1].sin(), 0.0, 0.0]);
        let du = displacement_gradient(&u).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let comp = du.component(3 * j + k);
                if (j, k) == (1, 0) {
                    let n = grid.n();
                    for jj in 0..n {
                        let x1 = grid.point(0, jj, 0)[1];
                        let got = du.get(3, 0, jj, 0);
                        assert!((got - eps * x1.cos()).abs() < 1e-12);
                    }
                } else {
                    assert!(comp.iter().all(|v| v.abs() < 1e-12), "c = {}", 3 * j + k);
                }
            }
        }
    }

    #[test]
    fn determinant_positive_for_moderate_gradients() {
        let grid = grid32();
        for seed in [1, 2, 3] {
            let u = random_u(grid, seed, 0.2);
            let f = deformation_gradient(&u).unwrap();
            let det = determinant_field(&f).unwrap();
            let min = det.data().iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "det F min {min}");
        }
    }

    #[test]
    fn piola_residual_zero_displacement() {
        let grid = Grid3::new(16, 1.0).unwrap();
        let u = Field::zeros(grid, Rank::Vector3);
        let (_, max) = piola_identity_residual(&u).unwrap();
        assert!(max <= 1e-14);
    }

    #[test]
    fn piola_residual_single_mode() {
        let grid = grid32();
        let u = Field::sample(grid, Rank::Vector3, |x| {
            vec![
                0.1 * (x[0] + x[1]).sin(),
                0.1 * (x[1] - 2.0 * x[2]).cos(),
                0.1 * (x[2]).sin(),
            ]
        });
        let (_, max) = piola_identity_residual(&u).unwrap();
        assert!(max <= 1e-9, "single-mode piola residual {max}");
    }

    #[test]
    fn nonlinearity_zero_cases() {
        let grid = grid32();
        let spec = MaterialSpec::default();
        let u = Field::zeros(grid, Rank::Vector3);
        assert_eq!(nonlinearity(&u, &spec).unwrap().max_abs(), 0.0);
        let lin = MaterialSpec::linear(1.0, 0.5).unwrap();
        let u2 = random_u(grid, 4, 0.1);
        assert_eq!(nonlinearity(&u2, &lin).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn nonlinearity_is_curl_free_and_routes_agree_quadratic() {
        let grid = grid32();
        let kappa = 0.7;
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![kappa]).unwrap();
        let u = random_u(grid, 9, 0.15);
        let f_direct = nonlinearity(&u, &spec).unwrap();
        let f_grad = nonlinearity_gradient_form(&u, &spec).unwrap();
        let curl = spectral_derivative(&f_direct, DerivKind::Curl).unwrap();
        assert!(curl.max_abs() <= 1e-9, "curl f = {}", curl.max_abs());
        let mut gap: f64 = 0.0;
        for (a, b) in f_direct.data().iter().zip(f_grad.data()) {
            gap = gap.max((a - b).abs());
        }
        assert!(gap <= 1e-9, "route gap {gap}");
    }

    #[test]
    fn reduced_and_unreduced_acceleration_agree() {
        let grid = grid32();
        let spec = MaterialSpec::new(1.0, 0.5, 0.7, vec![0.4]).unwrap();
        let u = random_u(grid, 21, 0.15);
        let reduced = acceleration(&u, &spec).unwrap();
        let unreduced = acceleration_unreduced(&u, &spec).unwrap();
        let mut gap: f64 = 0.0;
        for (a, b) in reduced.data().iter().zip(unreduced.data()) {
            gap = gap.max((a - b).abs());
        }
        assert!(gap <= 1e-8, "reduced vs unreduced gap {gap}");
    }

    #[test]
    fn plane_wave_dispersion_relations() {
        let grid = grid32();
        let spec = MaterialSpec::linear(1.3, 0.6).unwrap();
        // Longitudinal: U parallel to xi = (2,0,0).
        let ul = Field::sample(grid, Rank::Vector3, |x| vec![(2.0 * x[0]).sin(), 0.0, 0.0]);
        let acc = acceleration(&ul, &spec).unwrap();
        let k2 = 4.0;
        let mut err: f64 = 0.0;
        for (a, u) in acc.data().iter().zip(ul.data()) {
            err = err.max((a + spec.c1 * spec.c1 * k2 * u).abs());
        }
        assert!(err <= 1e-10, "longitudinal dispersion error {err}");
        // Transverse: U = e2 sin(2 x1).
        let ut = Field::sample(grid, Rank::Vector3, |x| vec![0.0, (2.0 * x[0]).sin(), 0.0]);
        let acc = acceleration(&ut, &spec).unwrap();
        let mut err: f64 = 0.0;
        for (a, u) in acc.data().iter().zip(ut.data()) {
            err = err.max((a + spec.c2 * spec.c2 * k2 * u).abs());
        }
        assert!(err <= 1e-10, "transverse dispersion error {err}");
    }

    #[test]
    fn hyperbolicity_margin_flat_and_threshold() {
        let grid = Grid3::new(16, 1.0).unwrap();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![1.0]).unwrap();
        let du = Field::zeros(grid, Rank::Matrix3x3);
        let rep = hyperbolicity_check(&du, &spec).unwrap();
        assert!(rep.ok);
        assert!((rep.margin - 0.75).abs() < 1e-12);
        // dU = -(c1^2 - c2^2) I + tiny: margin crosses zero.
        let mut du2 = Field::zeros(grid, Rank::Matrix3x3);
        for d in 0..3 {
            du2.component_mut(3 * d + d).fill(-0.75 + 1e-6);
        }
        let rep2 = hyperbolicity_check(&du2, &spec).unwrap();
        assert!(rep2.ok && rep2.margin < 1e-5);
        for d in 0..3 {
            du2.component_mut(3 * d + d).fill(-0.75 - 1e-6);
        }
        let rep3 = hyperbolicity_check(&du2, &spec).unwrap();
        assert!(!rep3.ok);
    }

    #[test]
    fn hyperbolicity_gershgorin_bound() {
        let grid = Grid3::new(16, 2.0 * std::f64::consts::PI).unwrap();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![1.0]).unwrap();
        let dc = 0.75;
        // |gamma'| <= bound keeps all Gershgorin disks positive.
        let bound = dc / (2.0 * 3.0);
        for seed in [5, 6, 7] {
            let mut du = rough_random_field(grid, Rank::Matrix3x3, 2.0, 1.0, seed).unwrap();
            du.scale(bound / du.max_abs());
            let rep = hyperbolicity_check(&du, &spec).unwrap();
            assert!(rep.ok, "seed {seed} margin {}", rep.margin);
        }
    }

    #[test]
    fn margin_is_lipschitz_in_du() {
        let grid = Grid3::new(16, 1.0).unwrap();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4, 0.1]).unwrap();
        let mut du = rough_random_field(grid, Rank::Matrix3x3, 2.0, 1.0, 11).unwrap();
        du.scale(0.1 / du.max_abs());
        let base = hyperbolicity_check(&du, &spec).unwrap().margin;
        let delta = 0.01;
        let mut du2 = du.clone();
        for v in du2.data_mut() {
            *v += delta;
        }
        let moved = hyperbolicity_check(&du2, &spec).unwrap().margin;
        let lip = 3.0 * spec.max_gamma_second(0.2) * delta;
        assert!(
            (moved - base).abs() <= lip * (1.0 + 1e-9),
            "margin moved {} > bound {lip}",
            (moved - base).abs()
        );
    }

    #[test]
    fn pseudo_irrotational_data_has_gradient_nonlinearity() {
        // curl of the nonlinearity vanishes even on mixed Helmholtz data.
        let grid = grid32();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4]).unwrap();
        let u = random_u(grid, 31, 0.2);
        let (phi, _, _) = helmholtz_decompose(&u).unwrap();
        let f = nonlinearity(&phi, &spec).unwrap();
        let curl = spectral_derivative(&f, DerivKind::Curl).unwrap();
        assert!(curl.max_abs() <= 1e-9);
    }
}
