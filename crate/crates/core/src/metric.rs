//! Acoustic metrics of the two waves and the spacetime calculus built on
//! snapshot stacks: Christoffel symbols, wave operators, Ricci curvature.
//!
//! Both metrics are block diagonal in Cartesian coordinates:
//! g^{-1} = -dt x dt + [c1^2 delta + sym gamma'(dU)] d_j x d_k (faster wave),
//! h^{-1} = -dt x dt + c2^2 delta (slower wave, constant).

use crate::error::{EwError, Result};
use crate::fft::forward;
use crate::grid::{Field, Grid3, Rank};
use crate::material::MaterialSpec;
use crate::spectral::gradient_spectrum;
use nalgebra::{Matrix3, Matrix4};
use rayon::prelude::*;

pub(crate) const SYM_IDX: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Symmetric 3x3 field stored as six scalar components (11,12,13,22,23,33).
#[derive(Debug, Clone)]
pub struct SymField3 {
    pub grid: Grid3,
    pub comps: Vec<Vec<f64>>,
}

impl SymField3 {
    pub fn zeros(grid: Grid3) -> Self {
        SymField3 {
            grid,
            comps: (0..6).map(|_| vec![0.0; grid.points()]).collect(),
        }
    }

    pub fn constant(grid: Grid3, m: Matrix3<f64>) -> Self {
        let mut out = Self::zeros(grid);
        for (q, &(a, b)) in SYM_PAIRS.iter().enumerate() {
            out.comps[q].fill(m[(a, b)]);
        }
        out
    }

    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> Matrix3<f64> + Sync) -> Self {
        let mut out = Self::zeros(grid);
        let n = grid.n();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = (i * n + j) * n + k;
                    let m = f(grid.point(i, j, k));
                    for (q, &(a, b)) in SYM_PAIRS.iter().enumerate() {
                        out.comps[q][idx] = m[(a, b)];
                    }
                }
            }
        }
        out
    }

    pub fn at(&self, idx: usize) -> Matrix3<f64> {
        let c = |q: usize| self.comps[q][idx];
        Matrix3::new(
            c(0), c(1), c(2),
            c(1), c(3), c(4),
            c(2), c(4), c(5),
        )
    }

    pub fn set(&mut self, idx: usize, m: Matrix3<f64>) {
        for (q, &(a, b)) in SYM_PAIRS.iter().enumerate() {
            self.comps[q][idx] = m[(a, b)];
        }
    }

    /// Pointwise inverse; errors with the location if not positive definite.
    pub fn inverse_posdef(&self) -> Result<SymField3> {
        let mut out = SymField3::zeros(self.grid);
        let mut worst = (usize::MAX, f64::INFINITY);
        for idx in 0..self.grid.points() {
            let m = self.at(idx);
            let eig = m.symmetric_eigenvalues();
            let min_eig = eig.min();
            if min_eig <= 0.0 {
                if min_eig < worst.1 {
                    worst = (idx, min_eig);
                }
                continue;
            }
            let inv = m.try_inverse().expect("positive definite");
            out.set(idx, inv);
        }
        if worst.0 != usize::MAX {
            return Err(EwError::Signature {
                index: worst.0,
                min_eig: worst.1,
            });
        }
        Ok(out)
    }

    /// Spectral spatial derivatives, one SymField3 per axis.
    pub fn spatial_derivatives(&self) -> [SymField3; 3] {
        let grid = self.grid;
        let mut out = [
            SymField3::zeros(grid),
            SymField3::zeros(grid),
            SymField3::zeros(grid),
        ];
        for q in 0..6 {
            let f = Field::from_data(grid, Rank::Scalar, self.comps[q].clone()).unwrap();
            let g = crate::fft::inverse(&gradient_spectrum(&forward(&f)));
            for axis in 0..3 {
                out[axis].comps[q].copy_from_slice(g.component(axis));
            }
        }
        out
    }

    pub fn linear_comb(terms: &[(f64, &SymField3)]) -> SymField3 {
        let grid = terms[0].1.grid;
        let mut out = SymField3::zeros(grid);
        for q in 0..6 {
            for (w, f) in terms {
                for (o, v) in out.comps[q].iter_mut().zip(&f.comps[q]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.grid.points())
            .into_par_iter()
            .map(|idx| self.at(idx).symmetric_eigenvalues().min())
            .reduce(|| f64::INFINITY, f64::min)
    }
}

/// Pointwise 4x4 metric data for both waves.
#[derive(Debug, Clone, Copy)]
pub struct MetricSample {
    pub g_inv: Matrix4<f64>,
    pub g: Matrix4<f64>,
    pub h_inv: Matrix4<f64>,
    pub h: Matrix4<f64>,
}

pub fn block_metric(spatial: Matrix3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m[(0, 0)] = -1.0;
    for a in 0..3 {
        for b in 0..3 {
            m[(a + 1, b + 1)] = spatial[(a, b)];
        }
    }
    m
}

pub fn h_inv_matrix(spec: &MaterialSpec) -> Matrix4<f64> {
    block_metric(Matrix3::identity() * (spec.c2 * spec.c2))
}

pub fn h_matrix(spec: &MaterialSpec) -> Matrix4<f64> {
    block_metric(Matrix3::identity() / (spec.c2 * spec.c2))
}

/// The faster-wave metric field on one time slice.
#[derive(Debug, Clone)]
pub struct MetricField {
    pub grid: Grid3,
    /// Spatial block of g^{-1}.
    pub ginv: SymField3,
    /// Spatial block of g (pointwise inverse).
    pub g: SymField3,
    pub c1: f64,
    pub c2: f64,
}

impl MetricField {
    pub fn sample(&self, idx: usize) -> MetricSample {
        let ginv_sp = self.ginv.at(idx);
        let g_sp = self.g.at(idx);
        let c2i = Matrix3::identity() * (self.c2 * self.c2);
        MetricSample {
            g_inv: block_metric(ginv_sp),
            g: block_metric(g_sp),
            h_inv: block_metric(c2i),
            h: block_metric(Matrix3::identity() / (self.c2 * self.c2)),
        }
    }

    /// sqrt(det g_spatial) pointwise, the spatial volume weight.
    pub fn volume_weight(&self, idx: usize) -> f64 {
        self.g.at(idx).determinant().max(0.0).sqrt()
    }
}

/// Spatial block of g^{-1} from the gradients of the Helmholtz parts:
/// c1^2 delta^{jk} + (gamma'(w_jk) + gamma'(w_kj))/2, w = dphi + dpsi.
/// Errors when the block loses positive definiteness.
pub fn acoustic_metrics(dphi: &Field, dpsi: &Field, spec: &MaterialSpec) -> Result<MetricField> {
    if dphi.rank() != Rank::Matrix3x3 || dpsi.rank() != Rank::Matrix3x3 {
        return Err(EwError::contract("acoustic_metrics expects gradient matrix fields"));
    }
    if !dphi.same_shape(dpsi) {
        return Err(EwError::GridMismatch("dphi vs dpsi".into()));
    }
    let grid = dphi.grid();
    let m = grid.points();
    let mut w = dphi.clone();
    w.axpy(1.0, dpsi);
    metric_from_gradient_sum(&w, spec, m, grid)
}

/// Same formula fed directly with dU = d(phi + psi).
pub fn metric_from_displacement_gradient(du: &Field, spec: &MaterialSpec) -> Result<MetricField> {
    if du.rank() != Rank::Matrix3x3 {
        return Err(EwError::contract("expected displacement gradient matrix field"));
    }
    let grid = du.grid();
    metric_from_gradient_sum(du, spec, grid.points(), grid)
}

fn metric_from_gradient_sum(
    w: &Field,
    spec: &MaterialSpec,
    m: usize,
    grid: Grid3,
) -> Result<MetricField> {
    let c1s = spec.c1 * spec.c1;
    let mut ginv = SymField3::zeros(grid);
    for (q, &(j, k)) in SYM_PAIRS.iter().enumerate() {
        let wjk = w.component(3 * j + k);
        let wkj = w.component(3 * k + j);
        let dst = &mut ginv.comps[q];
        dst.par_iter_mut().enumerate().for_each(|(idx, v)| {
            let sym = 0.5 * (spec.gamma_prime(wjk[idx]) + spec.gamma_prime(wkj[idx]));
            *v = if j == k { c1s + sym } else { sym };
        });
    }
    let _ = m;
    let g = ginv.inverse_posdef()?;
    Ok(MetricField {
        grid,
        ginv,
        g,
        c1: spec.c1,
        c2: spec.c2,
    })
}

/// Ellipticity margins: g^{-1} - h^{-1} positive definite and g - h
/// negative definite, pointwise over the slice.
#[derive(Debug, Clone, Copy)]
pub struct EllipticityReport {
    pub ok: bool,
    /// min eigenvalue of g^{-1} - h^{-1} over the grid.
    pub margin_inverse: f64,
    /// min |eigenvalue| of g - h (all must be negative).
    pub margin_metric: f64,
}

pub fn ellipticity_check(metric: &MetricField, spec: &MaterialSpec) -> EllipticityReport {
    let c2s = spec.c2 * spec.c2;
    let m = metric.grid.points();
    let (mut min_inv, mut max_met) = (f64::INFINITY, f64::NEG_INFINITY);
    for idx in 0..m {
        let a = metric.ginv.at(idx) - Matrix3::identity() * c2s;
        let b = metric.g.at(idx) - Matrix3::identity() / c2s;
        min_inv = min_inv.min(a.symmetric_eigenvalues().min());
        max_met = max_met.max(b.symmetric_eigenvalues().max());
    }
    EllipticityReport {
        ok: min_inv > 0.0 && max_met < 0.0,
        margin_inverse: min_inv,
        margin_metric: -max_met,
    }
}

/// Pointwise first metric derivatives in our block gauge.
#[derive(Debug, Clone, Copy)]
pub struct MetricDerivs {
    pub g_sp: Matrix3<f64>,
    pub ginv_sp: Matrix3<f64>,
    pub dt_g: Matrix3<f64>,
    pub dx_g: [Matrix3<f64>; 3],
}

/// Christoffel symbols of the block metric at a point.
#[derive(Debug, Clone)]
pub struct Christoffel {
    /// Gamma_{alpha kappa lambda}.
    pub lower: [[[f64; 4]; 4]; 4],
    /// Gamma^beta_{kappa lambda}.
    pub upper: [[[f64; 4]; 4]; 4],
    /// Contracted Gamma_alpha = Gamma_{alpha kappa lambda} (g^{-1})^{kappa lambda}.
    pub contracted: [f64; 4],
}

pub fn christoffel_from_derivs(d: &MetricDerivs) -> Christoffel {
    let mut lower = [[[0.0; 4]; 4]; 4];
    // dg[mu][a][b] = d_mu g_{(a+1)(b+1)} (spatial block only varies).
    let dg = |mu: usize, a: usize, b: usize| -> f64 {
        if mu == 0 {
            d.dt_g[(a, b)]
        } else {
            d.dx_g[mu - 1][(a, b)]
        }
    };
    // Gamma_{alpha kappa lambda} = (d_kappa g_{alpha lambda} + d_lambda g_{alpha kappa}
    //                               - d_alpha g_{kappa lambda}) / 2,
    // with g_{00} = -1, g_{0j} = 0 constant.
    for j in 0..3 {
        for k in 0..3 {
            lower[0][j + 1][k + 1] = -0.5 * dg(0, j, k);
            lower[j + 1][0][k + 1] = 0.5 * dg(0, j, k);
            lower[j + 1][k + 1][0] = 0.5 * dg(0, j, k);
            for i in 0..3 {
                lower[i + 1][j + 1][k + 1] =
                    0.5 * (dg(j + 1, i, k) + dg(k + 1, i, j) - dg(i + 1, j, k));
            }
        }
    }
    let mut upper = [[[0.0; 4]; 4]; 4];
    for kappa in 0..4 {
        for lambda in 0..4 {
            upper[0][kappa][lambda] = -lower[0][kappa][lambda];
            for i in 0..3 {
                let mut acc = 0.0;
                for m in 0..3 {
                    acc += d.ginv_sp[(i, m)] * lower[m + 1][kappa][lambda];
                }
                upper[i + 1][kappa][lambda] = acc;
            }
        }
    }
    let mut contracted = [0.0; 4];
    for alpha in 0..4 {
        let mut acc = -lower[alpha][0][0];
        for j in 0..3 {
            for k in 0..3 {
                acc += d.ginv_sp[(j, k)] * lower[alpha][j + 1][k + 1];
            }
        }
        contracted[alpha] = acc;
    }
    Christoffel {
        lower,
        upper,
        contracted,
    }
}

/// Pointwise second metric derivatives (for curvature).
#[derive(Debug, Clone, Copy)]
pub struct MetricSecondDerivs {
    pub dtt_g: Matrix3<f64>,
    pub dtx_g: [Matrix3<f64>; 3],
    /// dxx_g[sym(a,b)] = d_a d_b g, symmetric pair order (11,12,13,22,23,33).
    pub dxx_g: [Matrix3<f64>; 6],
}

/// Ricci tensor from Christoffel first derivatives,
/// Ric_{sn} = d_k Gamma^k_{ns} - d_n Gamma^k_{ks}
///          + Gamma^k_{kl} Gamma^l_{ns} - Gamma^k_{nl} Gamma^l_{ks}.
pub fn ricci_from_derivs(d1: &MetricDerivs, d2: &MetricSecondDerivs) -> Matrix4<f64> {
    // Second derivatives of the spatial block: ddg[mu][nu][a][b].
    let ddg = |mu: usize, nu: usize, a: usize, b: usize| -> f64 {
        match (mu, nu) {
            (0, 0) => d2.dtt_g[(a, b)],
            (0, x) => d2.dtx_g[x - 1][(a, b)],
            (x, 0) => d2.dtx_g[x - 1][(a, b)],
            (x, y) => d2.dxx_g[SYM_IDX[x - 1][y - 1]][(a, b)],
        }
    };
    let dg = |mu: usize, a: usize, b: usize| -> f64 {
        if mu == 0 {
            d1.dt_g[(a, b)]
        } else {
            d1.dx_g[mu - 1][(a, b)]
        }
    };
    // d_mu Gamma_{alpha kappa lambda}
    let dlower = |mu: usize, alpha: usize, kappa: usize, lambda: usize| -> f64 {
        let (a, k, l) = (alpha, kappa, lambda);
        let spatial = |x: usize| x >= 1;
        if a == 0 && spatial(k) && spatial(l) {
            -0.5 * ddg(mu, 0, k - 1, l - 1)
        } else if spatial(a) && k == 0 && spatial(l) {
            0.5 * ddg(mu, 0, a - 1, l - 1)
        } else if spatial(a) && spatial(k) && l == 0 {
            0.5 * ddg(mu, 0, a - 1, k - 1)
        } else if spatial(a) && spatial(k) && spatial(l) {
            0.5 * (ddg(mu, k, a - 1, l - 1) + ddg(mu, l, a - 1, k - 1)
                - ddg(mu, a, k - 1, l - 1))
        } else {
            0.0
        }
    };
    let chr = christoffel_from_derivs(d1);
    // d_mu (g^{-1})^{ab} = -(g^{-1} d_mu g g^{-1})^{ab} on the spatial block.
    let mut dginv = [[0.0; 9]; 4];
    for mu in 0..4 {
        let mut dgm = Matrix3::zeros();
        for a in 0..3 {
            for b in 0..3 {
                dgm[(a, b)] = dg(mu, a, b);
            }
        }
        let m = -d1.ginv_sp * dgm * d1.ginv_sp;
        for a in 0..3 {
            for b in 0..3 {
                dginv[mu][3 * a + b] = m[(a, b)];
            }
        }
    }
    // d_mu Gamma^kappa_{nu sigma}
    let dupper = |mu: usize, kappa: usize, nu: usize, sigma: usize| -> f64 {
        if kappa == 0 {
            -dlower(mu, 0, nu, sigma)
        } else {
            let mut acc = 0.0;
            for m in 0..3 {
                acc += dginv[mu][3 * (kappa - 1) + m] * chr.lower[m + 1][nu][sigma]
                    + d1.ginv_sp[(kappa - 1, m)] * dlower(mu, m + 1, nu, sigma);
            }
            acc
        }
    };
    let mut ric = Matrix4::zeros();
    for sigma in 0..4 {
        for nu in 0..4 {
            let mut acc = 0.0;
            for kappa in 0..4 {
                acc += dupper(kappa, kappa, nu, sigma) - dupper(nu, kappa, kappa, sigma);
                for lambda in 0..4 {
                    acc += chr.upper[kappa][kappa][lambda] * chr.upper[lambda][nu][sigma]
                        - chr.upper[kappa][nu][lambda] * chr.upper[lambda][kappa][sigma];
                }
            }
            ric[(sigma, nu)] = acc;
        }
    }
    ric
}

/// Uniformly spaced snapshots of the faster-wave spatial metric, the
/// carrier for Christoffel symbols, wave operators and curvature.
#[derive(Debug, Clone)]
pub struct MetricStack {
    pub grid: Grid3,
    pub times: Vec<f64>,
    pub g_frames: Vec<SymField3>,
    pub ginv_frames: Vec<SymField3>,
    pub c1: f64,
    pub c2: f64,
}

/// Per-snapshot first derivatives of the metric.
pub struct FrameDerivs {
    pub g: SymField3,
    pub ginv: SymField3,
    pub dt_g: SymField3,
    pub dx_g: [SymField3; 3],
}

/// Per-snapshot second derivatives of the metric.
pub struct FrameSecondDerivs {
    pub dtt_g: SymField3,
    pub dtx_g: [SymField3; 3],
    pub dxx_g: Vec<SymField3>,
}

impl MetricStack {
    pub fn new(
        grid: Grid3,
        times: Vec<f64>,
        ginv_frames: Vec<SymField3>,
        c1: f64,
        c2: f64,
    ) -> Result<Self> {
        if times.len() != ginv_frames.len() || times.len() < 3 {
            return Err(EwError::InsufficientSnapshots {
                needed: 3,
                have: times.len(),
            });
        }
        let dt0 = times[1] - times[0];
        if times
            .windows(2)
            .any(|w| (w[1] - w[0] - dt0).abs() > 1e-9 * dt0.abs().max(1.0))
        {
            return Err(EwError::contract("metric snapshots must be uniformly spaced"));
        }
        let g_frames = ginv_frames
            .iter()
            .map(|f| f.inverse_posdef())
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricStack {
            grid,
            times,
            g_frames,
            ginv_frames,
            c1,
            c2,
        })
    }

    /// Builds the stack from displacement snapshots of a run.
    pub fn from_displacements(
        grid: Grid3,
        times: Vec<f64>,
        displacements: &[Field],
        spec: &MaterialSpec,
    ) -> Result<Self> {
        let ginv_frames = displacements
            .iter()
            .map(|u| {
                let du = crate::material::displacement_gradient(u)?;
                Ok(metric_from_displacement_gradient(&du, spec)?.ginv)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, times, ginv_frames, spec.c1, spec.c2)
    }

    /// Builds the stack from a closed-form spatial metric g_{ij}(t, x),
    /// used to inject synthetic metrics with known curvature.
    pub fn from_analytic(
        grid: Grid3,
        times: Vec<f64>,
        c1: f64,
        c2: f64,
        g_spatial: impl Fn(f64, [f64; 3]) -> Matrix3<f64> + Sync,
    ) -> Result<Self> {
        let mut ginv_frames = Vec::with_capacity(times.len());
        for &t in &times {
            let g = SymField3::from_fn(grid, |x| g_spatial(t, x));
            ginv_frames.push(g.inverse_posdef()?);
        }
        Self::new(grid, times, ginv_frames, c1, c2)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// d_t g at snapshot j: 4th-order central where the stencil fits,
    /// 2nd-order central next to the ends, one-sided 2nd-order at them.
    pub fn dt_g(&self, j: usize) -> SymField3 {
        let dt = self.dt();
        let n = self.len();
        let f = &self.g_frames;
        if j >= 2 && j + 2 < n {
            SymField3::linear_comb(&[
                (-1.0 / (12.0 * dt), &f[j + 2]),
                (8.0 / (12.0 * dt), &f[j + 1]),
                (-8.0 / (12.0 * dt), &f[j - 1]),
                (1.0 / (12.0 * dt), &f[j - 2]),
            ])
        } else if j >= 1 && j + 1 < n {
            SymField3::linear_comb(&[
                (0.5 / dt, &f[j + 1]),
                (-0.5 / dt, &f[j - 1]),
            ])
        } else if j == 0 {
            SymField3::linear_comb(&[
                (-1.5 / dt, &f[0]),
                (2.0 / dt, &f[1]),
                (-0.5 / dt, &f[2]),
            ])
        } else {
            SymField3::linear_comb(&[
                (1.5 / dt, &f[n - 1]),
                (-2.0 / dt, &f[n - 2]),
                (0.5 / dt, &f[n - 3]),
            ])
        }
    }

    /// d_t^2 g at snapshot j: 2nd-order central, one-sided at the ends.
    pub fn dtt_g(&self, j: usize) -> SymField3 {
        let dt2 = self.dt() * self.dt();
        let n = self.len();
        let f = &self.g_frames;
        if j >= 1 && j + 1 < n {
            SymField3::linear_comb(&[
                (1.0 / dt2, &f[j + 1]),
                (-2.0 / dt2, &f[j]),
                (1.0 / dt2, &f[j - 1]),
            ])
        } else if j == 0 {
            SymField3::linear_comb(&[
                (2.0 / dt2, &f[0]),
                (-5.0 / dt2, &f[1]),
                (4.0 / dt2, &f[2]),
                (-1.0 / dt2, &f[3]),
            ])
        } else {
            SymField3::linear_comb(&[
                (2.0 / dt2, &f[n - 1]),
                (-5.0 / dt2, &f[n - 2]),
                (4.0 / dt2, &f[n - 3]),
                (-1.0 / dt2, &f[n - 4]),
            ])
        }
    }

    pub fn frame_derivs(&self, j: usize) -> FrameDerivs {
        FrameDerivs {
            g: self.g_frames[j].clone(),
            ginv: self.ginv_frames[j].clone(),
            dt_g: self.dt_g(j),
            dx_g: self.g_frames[j].spatial_derivatives(),
        }
    }

    pub fn frame_second_derivs(&self, j: usize) -> FrameSecondDerivs {
        let dtx = self.dt_g(j).spatial_derivatives();
        let dx = self.g_frames[j].spatial_derivatives();
        // dxx[sym(a,b)] = d_a of (d_b g); exploit symmetry by pairs.
        let mut dxx = Vec::with_capacity(6);
        for &(a, b) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)].iter() {
            let dab = dx[b].spatial_derivatives();
            dxx.push(dab[a].clone());
        }
        FrameSecondDerivs {
            dtt_g: self.dtt_g(j),
            dtx_g: dtx,
            dxx_g: dxx,
        }
    }

    pub fn derivs_at(&self, fd: &FrameDerivs, idx: usize) -> MetricDerivs {
        MetricDerivs {
            g_sp: fd.g.at(idx),
            ginv_sp: fd.ginv.at(idx),
            dt_g: fd.dt_g.at(idx),
            dx_g: [fd.dx_g[0].at(idx), fd.dx_g[1].at(idx), fd.dx_g[2].at(idx)],
        }
    }

    /// Christoffel symbols at snapshot j, grid point idx; spatial
    /// derivatives spectral, time derivative central-differenced.
    pub fn christoffel_at(&self, j: usize, idx: usize) -> Result<Christoffel> {
        if self.len() < 3 {
            return Err(EwError::InsufficientSnapshots {
                needed: 3,
                have: self.len(),
            });
        }
        let fd = self.frame_derivs(j);
        Ok(christoffel_from_derivs(&self.derivs_at(&fd, idx)))
    }

    /// Contracted Christoffel Gamma_alpha as four scalar fields at snapshot j.
    pub fn contracted_christoffel_field(&self, j: usize) -> [Vec<f64>; 4] {
        let fd = self.frame_derivs(j);
        let m = self.grid.points();
        let mut out = [
            vec![0.0; m],
            vec![0.0; m],
            vec![0.0; m],
            vec![0.0; m],
        ];
        let vals: Vec<[f64; 4]> = (0..m)
            .into_par_iter()
            .map(|idx| christoffel_from_derivs(&self.derivs_at(&fd, idx)).contracted)
            .collect();
        for (idx, v) in vals.into_iter().enumerate() {
            for a in 0..4 {
                out[a][idx] = v[a];
            }
        }
        out
    }

    /// Ricci tensor field at snapshot j (needs 5 snapshots for clean
    /// interior time differences; ends are one-sided and less accurate).
    pub fn ricci_field(&self, j: usize) -> Result<Vec<Matrix4<f64>>> {
        if self.len() < 5 {
            return Err(EwError::InsufficientSnapshots {
                needed: 5,
                have: self.len(),
            });
        }
        let fd = self.frame_derivs(j);
        let sd = self.frame_second_derivs(j);
        let m = self.grid.points();
        Ok((0..m)
            .into_par_iter()
            .map(|idx| {
                let d1 = self.derivs_at(&fd, idx);
                let d2 = MetricSecondDerivs {
                    dtt_g: sd.dtt_g.at(idx),
                    dtx_g: [sd.dtx_g[0].at(idx), sd.dtx_g[1].at(idx), sd.dtx_g[2].at(idx)],
                    dxx_g: [
                        sd.dxx_g[0].at(idx),
                        sd.dxx_g[1].at(idx),
                        sd.dxx_g[2].at(idx),
                        sd.dxx_g[3].at(idx),
                        sd.dxx_g[4].at(idx),
                        sd.dxx_g[5].at(idx),
                    ],
                };
                ricci_from_derivs(&d1, &d2)
            })
            .collect())
    }
}

/// Reduced or full wave operator of scalar snapshots against the stack.
///
/// reduced: (g^{-1})^{ab} d_a d_b phi. Full subtracts Gamma^a d_a phi,
/// realizing box_g = reduced - Gamma^alpha d_alpha. Time derivatives are
/// central differences on the snapshot ladder, so accuracy is O(dt^2).
pub fn wave_operator(
    phi: &crate::rescale::SnapshotSeq,
    stack: &MetricStack,
    j: usize,
    reduced: bool,
) -> Result<Field> {
    let grid = stack.grid;
    if phi.fields[0].grid() != grid {
        return Err(EwError::GridMismatch("phi snapshots vs metric stack".into()));
    }
    if phi.times.len() != stack.times.len()
        || phi
            .times
            .iter()
            .zip(&stack.times)
            .any(|(a, b)| (a - b).abs() > 1e-10)
    {
        return Err(EwError::GridMismatch("phi snapshot times vs metric times".into()));
    }
    if j == 0 || j + 1 >= stack.len() {
        return Err(EwError::InsufficientSnapshots {
            needed: 3,
            have: stack.len(),
        });
    }
    let rank = phi.fields[0].rank();
    if rank != Rank::Scalar {
        return Err(EwError::contract("wave_operator expects scalar snapshots"));
    }
    let dt = stack.dt();
    let m = grid.points();
    // d_t^2 phi, 2nd-order central.
    let mut dtt = phi.fields[j + 1].clone();
    dtt.axpy(-2.0, &phi.fields[j]);
    dtt.axpy(1.0, &phi.fields[j - 1]);
    dtt.scale(1.0 / (dt * dt));
    // Spatial second derivatives.
    let phihat = forward(&phi.fields[j]);
    let d2: Vec<Field> = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
        .iter()
        .map(|&(a, b)| crate::fft::inverse(&crate::spectral::mixed_spectrum(&phihat, a, b)))
        .collect();
    let mut out = Field::zeros(grid, Rank::Scalar);
    {
        let data = out.component_mut(0);
        let ginv = &stack.ginv_frames[j];
        for idx in 0..m {
            let gi = ginv.at(idx);
            let mut acc = -dtt.component(0)[idx];
            for a in 0..3 {
                for b in 0..3 {
                    acc += gi[(a, b)] * d2[SYM_IDX[a][b]].component(0)[idx];
                }
            }
            data[idx] = acc;
        }
    }
    if reduced {
        return Ok(out);
    }
    // Gamma^alpha d_alpha phi with Gamma^0 = -Gamma_0, Gamma^i = ginv Gamma_j.
    let gam = stack.contracted_christoffel_field(j);
    let dtphi = {
        let f = &phi.fields;
        let n = stack.len();
        let mut d = if j >= 2 && j + 2 < n {
            let mut d = f[j + 2].clone();
            d.scale(-1.0);
            d.axpy(8.0, &f[j + 1]);
            d.axpy(-8.0, &f[j - 1]);
            d.axpy(1.0, &f[j - 2]);
            d.scale(1.0 / (12.0 * dt));
            d
        } else {
            let mut d = f[j + 1].clone();
            d.axpy(-1.0, &f[j - 1]);
            d.scale(0.5 / dt);
            d
        };
        d.assert_finite()?;
        d
    };
    let grad = crate::fft::inverse(&gradient_spectrum(&phihat));
    let data = out.component_mut(0);
    let ginv = &stack.ginv_frames[j];
    for idx in 0..m {
        let gi = ginv.at(idx);
        let mut up = [0.0; 4];
        up[0] = -gam[0][idx];
        for i in 0..3 {
            for k in 0..3 {
                up[i + 1] += gi[(i, k)] * gam[k + 1][idx];
            }
        }
        let mut drop = up[0] * dtphi.component(0)[idx];
        for a in 0..3 {
            drop += up[a + 1] * grad.component(a)[idx];
        }
        data[idx] -= drop;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid3, Rank};

    fn grid16() -> Grid3 {
        Grid3::new(16, 2.0 * std::f64::consts::PI).unwrap()
    }

    #[test]
    fn flat_metric_sample_is_diagonal() {
        let grid = grid16();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4]).unwrap();
        let zero = Field::zeros(grid, Rank::Matrix3x3);
        let metric = acoustic_metrics(&zero, &zero, &spec).unwrap();
        let s = metric.sample(0);
        let c1s = spec.c1 * spec.c1;
        assert!((s.g_inv[(0, 0)] + 1.0).abs() < 1e-14);
        for a in 1..4 {
            assert!((s.g_inv[(a, a)] - c1s).abs() < 1e-14);
            assert!((s.h_inv[(a, a)] - spec.c2 * spec.c2).abs() < 1e-14);
        }
        let prod = s.g * s.g_inv;
        assert!((prod - Matrix4::identity()).norm() < 1e-10);
    }

    #[test]
    fn single_entry_metric_matches_one_term_formula() {
        // gamma' linear (kappa2 only), d_1 phi^1 = a:
        // spatial block = c1^2 I + kappa2 a e1 x e1.
        let grid = grid16();
        let kappa2 = 0.4;
        let a = 0.1;
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![kappa2]).unwrap();
        let mut dphi = Field::zeros(grid, Rank::Matrix3x3);
        dphi.component_mut(0).fill(a);
        let dpsi = Field::zeros(grid, Rank::Matrix3x3);
        let metric = acoustic_metrics(&dphi, &dpsi, &spec).unwrap();
        let sp = metric.ginv.at(0);
        assert!((sp[(0, 0)] - (1.0 + kappa2 * a)).abs() < 1e-14);
        assert!((sp[(1, 1)] - 1.0).abs() < 1e-14);
        assert!(sp[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn metric_depends_on_gradient_sum_only() {
        let grid = grid16();
        let spec = MaterialSpec::default();
        let a = crate::random::rough_random_field(grid, Rank::Matrix3x3, 2.0, 0.05, 1).unwrap();
        let b = crate::random::rough_random_field(grid, Rank::Matrix3x3, 2.0, 0.05, 2).unwrap();
        let m1 = acoustic_metrics(&a, &b, &spec).unwrap();
        // Shuffle mass between the parts: (a + b, 0).
        let mut sum = a.clone();
        sum.axpy(1.0, &b);
        let zero = Field::zeros(grid, Rank::Matrix3x3);
        let m2 = acoustic_metrics(&sum, &zero, &spec).unwrap();
        for q in 0..6 {
            for (x, y) in m1.ginv.comps[q].iter().zip(&m2.ginv.comps[q]) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn metric_symmetry_is_exact() {
        let grid = grid16();
        let spec = MaterialSpec::default();
        let a = crate::random::rough_random_field(grid, Rank::Matrix3x3, 2.0, 0.1, 9).unwrap();
        let zero = Field::zeros(grid, Rank::Matrix3x3);
        let m = acoustic_metrics(&a, &zero, &spec).unwrap();
        for idx in [0, 100, 4000] {
            let sp = m.ginv.at(idx);
            assert_eq!(sp[(0, 1)], sp[(1, 0)]);
            assert_eq!(sp[(0, 2)], sp[(2, 0)]);
            assert_eq!(sp[(1, 2)], sp[(2, 1)]);
        }
    }

    #[test]
    fn ellipticity_margins_flat_case() {
        // c1 = 1, c2 = 1/2, dU = 0: g^{-1} - h^{-1} = 0.75 I,
        // g - h = (1 - 4) I = -3 I.
        let grid = grid16();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4]).unwrap();
        let zero = Field::zeros(grid, Rank::Matrix3x3);
        let metric = acoustic_metrics(&zero, &zero, &spec).unwrap();
        let rep = ellipticity_check(&metric, &spec);
        assert!(rep.ok);
        assert!((rep.margin_inverse - 0.75).abs() < 1e-12);
        assert!((rep.margin_metric - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hyperbolic_small_data_implies_elliptic() {
        let grid = grid16();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4, 0.1]).unwrap();
        for seed in 0..50u64 {
            let mut du =
                crate::random::rough_random_field(grid, Rank::Matrix3x3, 2.0, 1.0, seed).unwrap();
            du.scale(0.1 / du.max_abs());
            let hyp = crate::material::hyperbolicity_check(&du, &spec).unwrap();
            assert!(hyp.ok);
            let metric = metric_from_displacement_gradient(&du, &spec).unwrap();
            let rep = ellipticity_check(&metric, &spec);
            assert!(rep.ok, "seed {seed}");
        }
    }

    #[test]
    fn degenerate_speeds_rejected_by_constructor() {
        assert!(MaterialSpec::new(1.0, 1.0, 0.5, vec![]).is_err());
        assert!(MaterialSpec::new(0.5, 1.0, 0.5, vec![]).is_err());
        assert!(MaterialSpec::new(1.0, -0.5, 0.5, vec![]).is_err());
    }

    #[test]
    fn flat_christoffels_vanish() {
        let d = MetricDerivs {
            g_sp: Matrix3::identity(),
            ginv_sp: Matrix3::identity(),
            dt_g: Matrix3::zeros(),
            dx_g: [Matrix3::zeros(); 3],
        };
        let chr = christoffel_from_derivs(&d);
        for a in 0..4 {
            assert_eq!(chr.contracted[a], 0.0);
            for b in 0..4 {
                for c in 0..4 {
                    assert_eq!(chr.upper[a][b][c], 0.0);
                }
            }
        }
    }

    #[test]
    fn christoffel_symmetry_in_lower_pair() {
        let d = MetricDerivs {
            g_sp: Matrix3::identity(),
            ginv_sp: Matrix3::identity(),
            dt_g: Matrix3::new(0.1, 0.02, 0.0, 0.02, -0.05, 0.01, 0.0, 0.01, 0.03),
            dx_g: [
                Matrix3::new(0.01, 0.0, 0.0, 0.0, 0.02, 0.0, 0.0, 0.0, 0.03),
                Matrix3::new(0.0, 0.01, 0.0, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0),
                Matrix3::zeros(),
            ],
        };
        let chr = christoffel_from_derivs(&d);
        for b in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    assert_eq!(chr.upper[b][k][l], chr.upper[b][l][k]);
                }
            }
        }
    }

    fn flat_stack(grid: Grid3, c1: f64, nt: usize, dt: f64) -> MetricStack {
        let times: Vec<f64> = (0..nt).map(|j| j as f64 * dt).collect();
        MetricStack::from_analytic(grid, times, c1, 0.5 * c1, |_, _| {
            Matrix3::identity() / (c1 * c1)
        })
        .unwrap()
    }

    #[test]
    fn stack_flat_christoffels_vanish() {
        let grid = grid16();
        let stack = flat_stack(grid, 1.3, 5, 0.01);
        let chr = stack.christoffel_at(2, 7).unwrap();
        for a in 0..4 {
            assert!(chr.contracted[a].abs() <= 1e-10);
            for b in 0..4 {
                for c in 0..4 {
                    assert!(chr.upper[a][b][c].abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn stack_one_mode_metric_matches_hand_derivative() {
        // ginv = diag(c1^2 + kappa a sin(x1), c1^2, c1^2): only g_11
        // depends on x1; closed form differentiated by hand.
        let grid = Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap();
        let (c1, kappa, a) = (1.0, 0.4, 0.08);
        let times: Vec<f64> = (0..5).map(|j| j as f64 * 0.01).collect();
        let stack = MetricStack::from_analytic(grid, times, c1, 0.5, move |_, x| {
            let s11 = c1 * c1 + kappa * a * x[0].sin();
            Matrix3::new(
                1.0 / s11, 0.0, 0.0,
                0.0, 1.0 / (c1 * c1), 0.0,
                0.0, 0.0, 1.0 / (c1 * c1),
            )
        })
        .unwrap();
        let n = grid.n();
        for i in [0usize, 5, 13] {
            let x1 = grid.point(i, 0, 0)[0];
            let idx = (i * n + 0) * n + 0;
            let chr = stack.christoffel_at(2, idx).unwrap();
            let s11 = c1 * c1 + kappa * a * x1.sin();
            let dg11 = -kappa * a * x1.cos() / (s11 * s11);
            let expect_lower = 0.5 * dg11;
            assert!(
                (chr.lower[1][1][1] - expect_lower).abs() <= 1e-6,
                "Gamma_111 at x1 = {x1}: {} vs {expect_lower}",
                chr.lower[1][1][1]
            );
            let expect_upper = s11 * expect_lower;
            assert!((chr.upper[1][1][1] - expect_upper).abs() <= 1e-6);
            let expect_contracted = s11 * expect_lower;
            assert!((chr.contracted[1] - expect_contracted).abs() <= 1e-6);
            // Index symmetry is exact by the assembly formula.
            for b in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        assert_eq!(chr.upper[b][k][l], chr.upper[b][l][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn wave_operator_flat_plane_wave_annihilated() {
        let grid = grid16();
        let c1 = 1.0;
        let dt = 1e-3;
        let stack = flat_stack(grid, c1, 5, dt);
        let times = stack.times.clone();
        let fields: Vec<Field> = times
            .iter()
            .map(|&t| Field::sample_scalar(grid, |x| (x[0] - c1 * t).sin()))
            .collect();
        let phi = crate::rescale::SnapshotSeq::new(times, fields).unwrap();
        let red = wave_operator(&phi, &stack, 2, true).unwrap();
        assert!(red.max_abs() <= 1e-6, "box phi = {}", red.max_abs());
    }

    #[test]
    fn wave_operator_flat_static_mode_is_laplacian() {
        let grid = grid16();
        let c1 = 1.4;
        let stack = flat_stack(grid, c1, 5, 0.01);
        let f = Field::sample_scalar(grid, |x| (2.0 * x[1]).sin());
        let fields: Vec<Field> = (0..5).map(|_| f.clone()).collect();
        let phi = crate::rescale::SnapshotSeq::new(stack.times.clone(), fields).unwrap();
        let red = wave_operator(&phi, &stack, 2, true).unwrap();
        // c1^2 Lap phi = -4 c1^2 sin(2 x2).
        let expect = Field::sample_scalar(grid, |x| -4.0 * c1 * c1 * (2.0 * x[1]).sin());
        let mut err: f64 = 0.0;
        for (a, b) in red.component(0).iter().zip(expect.component(0)) {
            err = err.max((a - b).abs());
        }
        assert!(err <= 1e-9, "static-mode wave operator error {err}");
    }

    #[test]
    fn reduced_minus_contracted_matches_divergence_form() {
        // box phi = reduced - Gamma^a d_a phi, checked against the
        // independent divergence-form evaluation on a curved one-mode
        // metric with slow time dependence.
        let grid = grid16();
        let (c1, kappa, a) = (1.0, 0.4, 0.06);
        let dt = 1e-3;
        let times: Vec<f64> = (0..5).map(|j| j as f64 * dt).collect();
        let stack = MetricStack::from_analytic(grid, times.clone(), c1, 0.5, move |t, x| {
            let s11 = c1 * c1 + kappa * a * (x[0] + 0.3 * t).sin();
            Matrix3::new(
                1.0 / s11, 0.0, 0.0,
                0.0, 1.0 / (c1 * c1), 0.0,
                0.0, 0.0, 1.0 / (c1 * c1),
            )
        })
        .unwrap();
        let fields: Vec<Field> = times
            .iter()
            .map(|&t| Field::sample_scalar(grid, |x| (x[0] - t).sin() + 0.3 * (x[1] + 0.7 * t).cos()))
            .collect();
        let phi = crate::rescale::SnapshotSeq::new(times.clone(), fields.clone()).unwrap();
        let full = wave_operator(&phi, &stack, 2, false).unwrap();

        // Divergence-form oracle: (1/sqrt|det g|) d_a(sqrt|det g| ginv^{ab} d_b phi),
        // with det g = -det g_sp in the block gauge.
        let m = grid.points();
        let w_at = |j: usize| -> (Field, Field) {
            // (w^0, w^spatial) at snapshot j.
            let sq: Vec<f64> = (0..m)
                .map(|idx| stack.g_frames[j].at(idx).determinant().sqrt())
                .collect();
            let grad = crate::fft::inverse(&gradient_spectrum(&forward(&fields[j])));
            let mut w0 = Field::zeros(grid, Rank::Scalar);
            let mut wsp = Field::zeros(grid, Rank::Vector3);
            // d_t phi via 2nd-order central differences.
            let mut dtphi = fields[j + 1].clone();
            dtphi.axpy(-1.0, &fields[j - 1]);
            dtphi.scale(0.5 / dt);
            for idx in 0..m {
                let gi = stack.ginv_frames[j].at(idx);
                w0.component_mut(0)[idx] = -sq[idx] * dtphi.component(0)[idx];
                for i in 0..3 {
                    let mut acc = 0.0;
                    for b in 0..3 {
                        acc += gi[(i, b)] * grad.component(b)[idx];
                    }
                    wsp.component_mut(i)[idx] = sq[idx] * acc;
                }
            }
            (w0, wsp)
        };
        let (w0m, _) = w_at(1);
        let (_, wsp2) = w_at(2);
        let (w0p, _) = w_at(3);
        let mut dt_w0 = w0p;
        dt_w0.axpy(-1.0, &w0m);
        dt_w0.scale(0.5 / dt);
        let div_wsp = crate::spectral::spectral_derivative(&wsp2, crate::spectral::DerivKind::Div)
            .unwrap();
        let mut oracle = Field::zeros(grid, Rank::Scalar);
        for idx in 0..m {
            let sq = stack.g_frames[2].at(idx).determinant().sqrt();
            oracle.component_mut(0)[idx] =
                (dt_w0.component(0)[idx] + div_wsp.component(0)[idx]) / sq;
        }
        let mut err: f64 = 0.0;
        for (x, y) in full.component(0).iter().zip(oracle.component(0)) {
            err = err.max((x - y).abs());
        }
        assert!(err <= 1e-4, "wave-operator identity residual {err}");
    }

    #[test]
    fn stack_frw_ricci_matches_closed_form() {
        // g_sp = a(t)^2 I with a(t) = 1 + eps sin(w t):
        // Ric_00 = -3 addot / a, Ric_ij = (a addot + 2 adot^2) delta.
        let grid = Grid3::new(8, 2.0 * std::f64::consts::PI).unwrap();
        let (eps, w) = (0.05, 0.8);
        let dt = 2e-3;
        let times: Vec<f64> = (0..7).map(|j| j as f64 * dt).collect();
        let stack = MetricStack::from_analytic(grid, times.clone(), 1.0, 0.5, move |t, _| {
            let a = 1.0 + eps * (w * t).sin();
            Matrix3::identity() * (a * a)
        })
        .unwrap();
        let ric = stack.ricci_field(3).unwrap();
        let t = times[3];
        let a = 1.0 + eps * (w * t).sin();
        let adot = eps * w * (w * t).cos();
        let addot = -eps * w * w * (w * t).sin();
        let r = ric[17];
        assert!(
            (r[(0, 0)] - (-3.0 * addot / a)).abs() <= 1e-4,
            "Ric_00 {} vs {}",
            r[(0, 0)],
            -3.0 * addot / a
        );
        let expect = a * addot + 2.0 * adot * adot;
        for i in 1..4 {
            assert!((r[(i, i)] - expect).abs() <= 1e-4);
        }
        assert!((r - r.transpose()).norm() <= 1e-8);
    }

    #[test]
    fn frw_like_ricci_matches_closed_form() {
        // g = -dt^2 + a(t)^2 delta: Ric_00 = -3 addot / a,
        // Ric_ij = (a addot + 2 adot^2) delta_ij.
        let a0 = 1.3_f64;
        let adot = 0.21_f64;
        let addot = -0.4_f64;
        let g_sp = Matrix3::identity() * (a0 * a0);
        let d1 = MetricDerivs {
            g_sp,
            ginv_sp: Matrix3::identity() / (a0 * a0),
            dt_g: Matrix3::identity() * (2.0 * a0 * adot),
            dx_g: [Matrix3::zeros(); 3],
        };
        let d2 = MetricSecondDerivs {
            dtt_g: Matrix3::identity() * (2.0 * adot * adot + 2.0 * a0 * addot),
            dtx_g: [Matrix3::zeros(); 3],
            dxx_g: [Matrix3::zeros(); 6],
        };
        let ric = ricci_from_derivs(&d1, &d2);
        assert!((ric[(0, 0)] - (-3.0 * addot / a0)).abs() < 1e-12);
        for i in 1..4 {
            let expect = a0 * addot + 2.0 * adot * adot;
            assert!((ric[(i, i)] - expect).abs() < 1e-12, "Ric_{i}{i}");
        }
        assert!((ric - ric.transpose()).norm() < 1e-13);
    }
}
