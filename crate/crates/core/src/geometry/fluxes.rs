//! Null fluxes through traced cones and the slower-wave coerciveness
//! ratio: F1 integrates (L phi)^2 + |angular gradient|^2 over the cone,
//! F2 integrates the h-wave energy current Q[phi](T, V) against the
//! h-unit cone normal, and the coercive ratio divides F2 by the plain
//! integral of |d phi|^2.

use crate::error::{EwError, Result};
use crate::fft::{forward, inverse};
use crate::geometry::bundle::{BundleGeometry, GeodesicBundle};
use crate::geometry::spacetime::{interp_scalar, trilinear_stencil, SpacetimeMetric};
use crate::grid::{Field, Grid3, Rank};
use crate::rescale::SnapshotSeq;
use crate::spectral::gradient_spectrum;
use nalgebra::Vector3;

/// Interpolating sampler for a scalar snapshot sequence: value, time
/// derivative (4th/2nd-order differences) and spectral spatial gradient.
pub struct ScalarSampler {
    grid: Grid3,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    dt_values: Vec<Vec<f64>>,
    grads: Vec<[Vec<f64>; 3]>,
}

impl ScalarSampler {
    pub fn new(seq: &SnapshotSeq) -> Result<Self> {
        if seq.fields[0].rank() != Rank::Scalar {
            return Err(EwError::contract("scalar sampler expects scalar snapshots"));
        }
        let grid = seq.fields[0].grid();
        let n = seq.times.len();
        if n < 3 {
            return Err(EwError::InsufficientSnapshots { needed: 3, have: n });
        }
        let dt = seq.times[1] - seq.times[0];
        let mut values = Vec::with_capacity(n);
        let mut dt_values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for j in 0..n {
            values.push(seq.fields[j].component(0).to_vec());
            let d = if j >= 2 && j + 2 < n {
                let mut d = seq.fields[j + 2].clone();
                d.scale(-1.0);
                d.axpy(8.0, &seq.fields[j + 1]);
                d.axpy(-8.0, &seq.fields[j - 1]);
                d.axpy(1.0, &seq.fields[j - 2]);
                d.scale(1.0 / (12.0 * dt));
                d
            } else if j >= 1 && j + 1 < n {
                let mut d = seq.fields[j + 1].clone();
                d.axpy(-1.0, &seq.fields[j - 1]);
                d.scale(0.5 / dt);
                d
            } else if j == 0 {
                let mut d = seq.fields[0].clone();
                d.scale(-1.5);
                d.axpy(2.0, &seq.fields[1]);
                d.axpy(-0.5, &seq.fields[2]);
                d.scale(1.0 / dt);
                d
            } else {
                let mut d = seq.fields[n - 1].clone();
                d.scale(1.5);
                d.axpy(-2.0, &seq.fields[n - 2]);
                d.axpy(0.5, &seq.fields[n - 3]);
                d.scale(1.0 / dt);
                d
            };
            dt_values.push(d.component(0).to_vec());
            let g = inverse(&gradient_spectrum(&forward(&seq.fields[j])));
            grads.push([
                g.component(0).to_vec(),
                g.component(1).to_vec(),
                g.component(2).to_vec(),
            ]);
        }
        Ok(ScalarSampler {
            grid,
            times: seq.times.clone(),
            values,
            dt_values,
            grads,
        })
    }

    pub fn from_field_component(seq: &SnapshotSeq, component: usize) -> Result<Self> {
        let grid = seq.fields[0].grid();
        let scalars: Vec<Field> = seq
            .fields
            .iter()
            .map(|f| Field::from_data(grid, Rank::Scalar, f.component(component).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&SnapshotSeq::new(seq.times.clone(), scalars)?)
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap();
        let tol = 1e-10 * (1.0 + t1.abs());
        if t < t0 - tol || t > t1 + tol {
            return Err(EwError::OutsideCoverage { time: t, t0, t1 });
        }
        let dt = self.times[1] - self.times[0];
        let s = ((t - t0) / dt).clamp(0.0, (self.times.len() - 1) as f64);
        let j = (s.floor() as usize).min(self.times.len() - 2);
        Ok((j, s - j as f64))
    }

    /// (phi, d_t phi, grad phi) at an event.
    pub fn sample(&self, t: f64, x: [f64; 3]) -> Result<(f64, f64, Vector3<f64>)> {
        let (j, w) = self.locate(t)?;
        let st = trilinear_stencil(self.grid, x);
        let lerp = |a: &[f64], b: &[f64]| -> f64 {
            (1.0 - w) * interp_scalar(a, &st) + w * interp_scalar(b, &st)
        };
        let val = lerp(&self.values[j], &self.values[j + 1]);
        let dtv = lerp(&self.dt_values[j], &self.dt_values[j + 1]);
        let grad = Vector3::new(
            lerp(&self.grads[j][0], &self.grads[j + 1][0]),
            lerp(&self.grads[j][1], &self.grads[j + 1][1]),
            lerp(&self.grads[j][2], &self.grads[j + 1][2]),
        );
        Ok((val, dtv, grad))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FluxReport {
    pub f1: f64,
    pub f2: f64,
    /// Integral of |d phi|^2 over the cone, the coerciveness denominator.
    pub denom: f64,
    pub coercive_ratio: f64,
    /// Samples excluded near the tip.
    pub excluded_samples: usize,
}

/// Cone integrals of a scalar field over the traced bundle. The sphere
/// measure comes from the g-areas of the mesh triangles; the time
/// quadrature is trapezoidal over the bundle samples.
pub fn null_fluxes(
    bundle: &GeodesicBundle,
    geom: &BundleGeometry,
    metric: &SpacetimeMetric,
    field: &ScalarSampler,
    c2: f64,
) -> Result<FluxReport> {
    let mesh = &bundle.mesh;
    let ns = bundle.times.len();
    let mut f1_t = vec![0.0; ns];
    let mut f2_t = vec![0.0; ns];
    let mut den_t = vec![0.0; ns];
    let mut excluded = 0usize;
    for s in 0..ns {
        let r = bundle.r_tilde(s);
        if r < geom.r_min {
            excluded += 1;
            continue;
        }
        let t = bundle.times[s];
        metric.prefetch(t)?;
        // Per-vertex integrand values.
        let nv = mesh.len();
        let mut vals = vec![(0.0, 0.0, 0.0); nv];
        for v in 0..nv {
            let cs = &geom.samples[s][v];
            if !cs.valid {
                continue;
            }
            let x = bundle.rays[v].x[s];
            let l = Vector3::from(bundle.rays[v].l[s]);
            let (_, dtphi, grad) = field.sample(t, x)?;
            let lphi = dtphi + l.dot(&grad);
            let e = &geom.frames[s][v];
            let mut ang = 0.0;
            for a in 0..2 {
                let ea_phi = e[a].dot(&grad);
                ang += ea_phi * ea_phi;
            }
            // F2 integrand: Q-h[phi](T, V) = T phi V phi
            //   + (V^0/2) (h^{-1})^{ab} d_a phi d_b phi.
            let vv = match crate::geometry::bundle::h_unit_cone_normal(&l, e, c2) {
                Some(vv) => vv,
                None => continue,
            };
            let vphi =
                vv[0] * dtphi + vv[1] * grad[0] + vv[2] * grad[1] + vv[3] * grad[2];
            let hinv_contraction = -dtphi * dtphi + c2 * c2 * grad.dot(&grad);
            let q_tv = dtphi * vphi + 0.5 * vv[0] * hinv_contraction;
            let dphi_sq = dtphi * dtphi + grad.dot(&grad);
            vals[v] = (lphi * lphi + ang, q_tv, dphi_sq);
        }
        // Triangle quadrature with g-areas at face centroids.
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        let mut ad = 0.0;
        for &[ia, ib, ic] in &mesh.faces {
            let pa = Vector3::from(bundle.rays[ia].x[s]);
            let pb = Vector3::from(bundle.rays[ib].x[s]);
            let pc = Vector3::from(bundle.rays[ic].x[s]);
            let centroid = (pa + pb + pc) / 3.0;
            let (g_sp, _) = metric.metric_at(t, [centroid[0], centroid[1], centroid[2]])?;
            let e1 = pb - pa;
            let e2 = pc - pa;
            let g11 = (g_sp * e1).dot(&e1);
            let g22 = (g_sp * e2).dot(&e2);
            let g12 = (g_sp * e1).dot(&e2);
            let area = 0.5 * (g11 * g22 - g12 * g12).max(0.0).sqrt();
            let avg = |f: fn(&(f64, f64, f64)) -> f64| {
                (f(&vals[ia]) + f(&vals[ib]) + f(&vals[ic])) / 3.0
            };
            a1 += area * avg(|v| v.0);
            a2 += area * avg(|v| v.1);
            ad += area * avg(|v| v.2);
        }
        f1_t[s] = a1;
        f2_t[s] = a2;
        den_t[s] = ad;
    }
    // Trapezoid in t.
    let dt = if ns > 1 {
        bundle.times[1] - bundle.times[0]
    } else {
        0.0
    };
    let integrate = |series: &[f64]| -> f64 {
        let mut acc = 0.0;
        for s in 1..ns {
            acc += 0.5 * dt * (series[s - 1] + series[s]);
        }
        acc
    };
    let f1 = integrate(&f1_t);
    let f2 = integrate(&f2_t);
    let denom = integrate(&den_t);
    Ok(FluxReport {
        f1,
        f2,
        denom,
        coercive_ratio: if denom > 0.0 { f2 / denom } else { f64::NAN },
        excluded_samples: excluded,
    })
}
