//! Exact Fourier-multiplier calculus on periodic fields: derivatives,
//! dealiasing, and the Helmholtz projection pair.

use crate::error::{EwError, Result};
use crate::fft::{forward, inverse, Spectrum};
use crate::grid::{Field, Grid3, Rank};
use num_complex::Complex64;

/// Derivative kinds exposed by the spectral engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivKind {
    Grad,
    Div,
    Curl,
    Laplacian,
    /// Second mixed derivative d_i d_j.
    Mixed(usize, usize),
}

/// First-derivative multiplier i*xi, with the Nyquist mode of odd
/// derivatives zeroed (m = +n/2 has no conjugate partner on the grid).
fn ik(grid: Grid3, m: i64) -> Complex64 {
    if m == grid.nyquist_mode() {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::new(0.0, 2.0 * std::f64::consts::PI * m as f64 / grid.box_len())
    }
}

fn xi2(grid: Grid3, m: i64) -> f64 {
    let x = 2.0 * std::f64::consts::PI * m as f64 / grid.box_len();
    x * x
}

/// Gradient of every component: output component c' = 3*axis + c_in stride.
/// For a scalar this is the vector gradient; for a vector it is the
/// displacement-gradient layout (grad U)_{jk} = d_j U^k at c = 3j + k.
pub(crate) fn gradient_spectrum(spec: &Spectrum) -> Spectrum {
    let grid = spec.grid;
    let nc_in = spec.rank.components();
    let rank_out = match spec.rank {
        Rank::Scalar => Rank::Vector3,
        Rank::Vector3 => Rank::Matrix3x3,
        Rank::Matrix3x3 => panic!("gradient of a matrix field is not representable"),
    };
    let mut out = Spectrum::zeros(grid, rank_out);
    let n = grid.n();
    for axis in 0..3 {
        for c in 0..nc_in {
            let c_out = if nc_in == 1 { axis } else { 3 * axis + c };
            let src = spec.component(c);
            let dst = out.component_mut(c_out);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let idx = (i * n + j) * n + k;
                        let m = match axis {
                            0 => grid.mode(i),
                            1 => grid.mode(j),
                            _ => grid.mode(k),
                        };
                        dst[idx] = src[idx] * ik(grid, m);
                    }
                }
            }
        }
    }
    out
}

/// Divergence over the first (derivative) index of a matrix spectrum:
/// (div M)_q = d_p M_{pq}, components of M at c = 3p + q.
pub(crate) fn divergence_matrix_spectrum(spec: &Spectrum) -> Spectrum {
    assert_eq!(spec.rank, Rank::Matrix3x3);
    let grid = spec.grid;
    let n = grid.n();
    let mut out = Spectrum::zeros(grid, Rank::Vector3);
    for q in 0..3 {
        let dst = out.component_mut(q);
        for p in 0..3 {
            let src = spec.component(3 * p + q);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let idx = (i * n + j) * n + k;
                        let m = match p {
                            0 => grid.mode(i),
                            1 => grid.mode(j),
                            _ => grid.mode(k),
                        };
                        dst[idx] += src[idx] * ik(grid, m);
                    }
                }
            }
        }
    }
    out
}

fn divergence_vector_spectrum(spec: &Spectrum) -> Spectrum {
    assert_eq!(spec.rank, Rank::Vector3);
    let grid = spec.grid;
    let n = grid.n();
    let mut out = Spectrum::zeros(grid, Rank::Scalar);
    let dst = out.component_mut(0);
    for a in 0..3 {
        let src = spec.component(a);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = (i * n + j) * n + k;
                    let m = match a {
                        0 => grid.mode(i),
                        1 => grid.mode(j),
                        _ => grid.mode(k),
                    };
                    dst[idx] += src[idx] * ik(grid, m);
                }
            }
        }
    }
    out
}

fn curl_spectrum(spec: &Spectrum) -> Spectrum {
    assert_eq!(spec.rank, Rank::Vector3);
    let grid = spec.grid;
    let n = grid.n();
    let mut out = Spectrum::zeros(grid, Rank::Vector3);
    // (curl V)^i = eps_{iab} d_a V^b
    const EPS: [(usize, usize, usize, f64); 6] = [
        (0, 1, 2, 1.0),
        (0, 2, 1, -1.0),
        (1, 2, 0, 1.0),
        (1, 0, 2, -1.0),
        (2, 0, 1, 1.0),
        (2, 1, 0, -1.0),
    ];
    for &(i_out, a, b, sign) in EPS.iter() {
        let src = spec.component(b).to_vec();
        let dst = out.component_mut(i_out);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = (i * n + j) * n + k;
                    let m = match a {
                        0 => grid.mode(i),
                        1 => grid.mode(j),
                        _ => grid.mode(k),
                    };
                    dst[idx] += src[idx] * ik(grid, m) * sign;
                }
            }
        }
    }
    out
}

fn laplacian_spectrum(spec: &Spectrum) -> Spectrum {
    let grid = spec.grid;
    let mut out = spec.clone();
    out.map_modes(|mi, mj, mk, v| {
        let k2 = xi2(grid, mi) + xi2(grid, mj) + xi2(grid, mk);
        v * (-k2)
    });
    out
}

pub(crate) fn mixed_spectrum(spec: &Spectrum, a: usize, b: usize) -> Spectrum {
    let grid = spec.grid;
    let mut out = spec.clone();
    let pick = move |mi: i64, mj: i64, mk: i64, axis: usize| match axis {
        0 => mi,
        1 => mj,
        _ => mk,
    };
    if a == b {
        out.map_modes(|mi, mj, mk, v| v * (-xi2(grid, pick(mi, mj, mk, a))));
    } else {
        out.map_modes(|mi, mj, mk, v| {
            v * ik(grid, pick(mi, mj, mk, a)) * ik(grid, pick(mi, mj, mk, b))
        });
    }
    out
}

/// Exact Fourier-multiplier derivative of the trigonometric interpolant.
pub fn spectral_derivative(f: &Field, kind: DerivKind) -> Result<Field> {
    f.assert_finite()?;
    let spec = forward(f);
    let out = match (kind, f.rank()) {
        (DerivKind::Grad, Rank::Scalar) | (DerivKind::Grad, Rank::Vector3) => {
            gradient_spectrum(&spec)
        }
        (DerivKind::Div, Rank::Vector3) => divergence_vector_spectrum(&spec),
        (DerivKind::Curl, Rank::Vector3) => curl_spectrum(&spec),
        (DerivKind::Laplacian, _) => laplacian_spectrum(&spec),
        (DerivKind::Mixed(a, b), _) if a < 3 && b < 3 => mixed_spectrum(&spec, a, b),
        (kind, rank) => {
            return Err(EwError::contract(format!(
                "derivative {kind:?} incompatible with rank {rank:?}"
            )))
        }
    };
    Ok(inverse(&out))
}

/// 2/3-rule truncation, applied after pointwise products of spectral fields.
pub fn dealias(f: &Field) -> Field {
    let mut spec = forward(f);
    spec.dealias();
    inverse(&spec)
}

/// Fourier-space Helmholtz split of a vector field.
///
/// Returns (curl-free part, divergence-free part, zero mode). The zero
/// mode belongs to neither projection and is reported separately.
pub fn helmholtz_decompose(v: &Field) -> Result<(Field, Field, [f64; 3])> {
    if v.rank() != Rank::Vector3 {
        return Err(EwError::contract("helmholtz_decompose expects a vector field"));
    }
    v.assert_finite()?;
    let grid = v.grid();
    let n = grid.n();
    let spec = forward(v);
    let mut phi = Spectrum::zeros(grid, Rank::Vector3);
    let mut psi = Spectrum::zeros(grid, Rank::Vector3);
    let mut mean = [0.0_f64; 3];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = (i * n + j) * n + k;
                let xi = [grid.xi(i), grid.xi(j), grid.xi(k)];
                let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                let vhat = [
                    spec.component(0)[idx],
                    spec.component(1)[idx],
                    spec.component(2)[idx],
                ];
                if k2 == 0.0 {
                    for c in 0..3 {
                        mean[c] = vhat[c].re;
                    }
                    continue;
                }
                let dot = vhat[0] * xi[0] + vhat[1] * xi[1] + vhat[2] * xi[2];
                for c in 0..3 {
                    let p = dot * (xi[c] / k2);
                    phi.component_mut(c)[idx] = p;
                    psi.component_mut(c)[idx] = vhat[c] - p;
                }
            }
        }
    }
    Ok((inverse(&phi), inverse(&psi), mean))
}

/// Divergence of a matrix field over its first (derivative) index.
pub fn divergence_of_matrix(m: &Field) -> Result<Field> {
    if m.rank() != Rank::Matrix3x3 {
        return Err(EwError::contract("divergence_of_matrix expects a matrix field"));
    }
    let spec = forward(m);
    Ok(inverse(&divergence_matrix_spectrum(&spec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid3};

    fn grid32() -> Grid3 {
        Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap()
    }

    /// Deterministic band-limited test field from a tiny mode set.
    pub(crate) fn bandlimited_scalar(grid: Grid3, seed: u64) -> Field {
        let modes: Vec<([f64; 3], f64, f64)> = (0..6)
            .map(|q| {
                let h = crate::random::mix64(seed.wrapping_add(q * 0x9E37));
                let m = [
                    ((h >> 8) % 5) as f64 - 2.0,
                    ((h >> 20) % 5) as f64 - 2.0,
                    ((h >> 32) % 5) as f64 - 2.0,
                ];
                let amp = (((h >> 44) % 1000) as f64 / 1000.0 - 0.5) * 0.4;
                let phase = ((h >> 54) % 628) as f64 / 100.0;
                (m, amp, phase)
            })
            .collect();
        let l = grid.box_len();
        Field::sample_scalar(grid, move |x| {
            let mut v = 0.0;
            for (m, a, p) in &modes {
                let arg = 2.0 * std::f64::consts::PI / l
                    * (m[0] * x[0] + m[1] * x[1] + m[2] * x[2]);
                v += a * (arg + p).sin();
            }
            v
        })
    }

    pub(crate) fn bandlimited_vector(grid: Grid3, seed: u64) -> Field {
        let comps: Vec<Field> = (0..3)
            .map(|c| bandlimited_scalar(grid, seed.wrapping_add(c as u64 * 77)))
            .collect();
        let mut data = Vec::with_capacity(3 * grid.points());
        for c in comps {
            data.extend_from_slice(c.data());
        }
        Field::from_data(grid, Rank::Vector3, data).unwrap()
    }

    #[test]
    fn grad_of_single_mode_is_exact() {
        let grid = grid32();
        let l = grid.box_len();
        let f = Field::sample_scalar(grid, |x| (2.0 * std::f64::consts::PI * x[0] / l).sin());
        let g = spectral_derivative(&f, DerivKind::Grad).unwrap();
        let k = 2.0 * std::f64::consts::PI / l;
        let mut err: f64 = 0.0;
        let n = grid.n();
        for i in 0..n {
            let x = grid.point(i, 0, 0)[0];
            err = err.max((g.get(0, i, 0, 0) - k * (k * x).cos()).abs());
        }
        assert!(err <= 1e-12, "grad error {err}");
        assert!(g.component(1).iter().all(|v| v.abs() <= 1e-13));
        assert!(g.component(2).iter().all(|v| v.abs() <= 1e-13));
    }

    #[test]
    fn curl_of_grad_vanishes() {
        let grid = grid32();
        let f = bandlimited_scalar(grid, 11);
        let g = spectral_derivative(&f, DerivKind::Grad).unwrap();
        let c = spectral_derivative(&g, DerivKind::Curl).unwrap();
        assert!(c.max_abs() <= 1e-12, "curl grad = {}", c.max_abs());
    }

    #[test]
    fn div_of_curl_vanishes() {
        let grid = grid32();
        let a = bandlimited_vector(grid, 5);
        let c = spectral_derivative(&a, DerivKind::Curl).unwrap();
        let d = spectral_derivative(&c, DerivKind::Div).unwrap();
        assert!(d.max_abs() <= 1e-12, "div curl = {}", d.max_abs());
    }

    #[test]
    fn rank_mismatch_is_a_contract_violation() {
        let grid = Grid3::new(8, 1.0).unwrap();
        let f = Field::zeros(grid, Rank::Scalar);
        assert!(spectral_derivative(&f, DerivKind::Div).is_err());
        assert!(spectral_derivative(&f, DerivKind::Curl).is_err());
    }

    #[test]
    fn nonfinite_input_rejected() {
        let grid = Grid3::new(8, 1.0).unwrap();
        let mut f = Field::zeros(grid, Rank::Scalar);
        f.data_mut()[3] = f64::NAN;
        assert!(spectral_derivative(&f, DerivKind::Laplacian).is_err());
    }

    #[test]
    fn helmholtz_recomposes_and_projects() {
        let grid = grid32();
        let v = bandlimited_vector(grid, 23);
        let (phi, psi, mean) = helmholtz_decompose(&v).unwrap();
        // Recomposition oracle: the input itself.
        let mut err: f64 = 0.0;
        let scale = v.max_abs().max(1e-300);
        for c in 0..3 {
            for (idx, val) in v.component(c).iter().enumerate() {
                let r = phi.component(c)[idx] + psi.component(c)[idx] + mean[c];
                err = err.max((val - r).abs());
            }
        }
        assert!(err / scale <= 1e-12, "recomposition error {err}");
        let curl_phi = spectral_derivative(&phi, DerivKind::Curl).unwrap();
        let div_psi = spectral_derivative(&psi, DerivKind::Div).unwrap();
        assert!(curl_phi.max_abs() <= 1e-11);
        assert!(div_psi.max_abs() <= 1e-11);
    }

    #[test]
    fn helmholtz_of_gradient_is_pure_phi() {
        let grid = grid32();
        let f = bandlimited_scalar(grid, 3);
        let g = spectral_derivative(&f, DerivKind::Grad).unwrap();
        let (phi, psi, mean) = helmholtz_decompose(&g).unwrap();
        assert!(psi.max_abs() <= 1e-12);
        assert!(mean.iter().all(|m| m.abs() <= 1e-13));
        let scale = g.max_abs();
        let mut err: f64 = 0.0;
        for (a, b) in g.data().iter().zip(phi.data()) {
            err = err.max((a - b).abs());
        }
        assert!(err / scale <= 1e-12);
    }

    #[test]
    fn helmholtz_of_curl_is_pure_psi() {
        let grid = grid32();
        let a = bandlimited_vector(grid, 91);
        let v = spectral_derivative(&a, DerivKind::Curl).unwrap();
        let (phi, _psi, _) = helmholtz_decompose(&v).unwrap();
        assert!(phi.max_abs() <= 1e-12, "phi part {}", phi.max_abs());
    }

    #[test]
    fn helmholtz_is_a_projection_pair() {
        let grid = grid32();
        let v = bandlimited_vector(grid, 7);
        let (phi, _, _) = helmholtz_decompose(&v).unwrap();
        let (phi2, psi2, mean2) = helmholtz_decompose(&phi).unwrap();
        let mut err: f64 = 0.0;
        for (a, b) in phi.data().iter().zip(phi2.data()) {
            err = err.max((a - b).abs());
        }
        assert!(err <= 1e-11);
        assert!(psi2.max_abs() <= 1e-11);
        assert!(mean2.iter().all(|m| m.abs() <= 1e-12));
    }

    #[test]
    fn mixed_derivative_matches_grad_of_grad() {
        let grid = grid32();
        let f = bandlimited_scalar(grid, 17);
        let m01 = spectral_derivative(&f, DerivKind::Mixed(0, 1)).unwrap();
        let g = spectral_derivative(&f, DerivKind::Grad).unwrap();
        let g0 = Field::from_data(grid, Rank::Scalar, g.component(0).to_vec()).unwrap();
        let g01 = spectral_derivative(&g0, DerivKind::Grad).unwrap();
        let mut err: f64 = 0.0;
        for (a, b) in m01.component(0).iter().zip(g01.component(1)) {
            err = err.max((a - b).abs());
        }
        assert!(err <= 1e-12);
    }
}
