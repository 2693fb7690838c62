//! 3D complex FFT on grid fields.
//!
//! Forward transforms return trigonometric coefficients `c_m` with
//! `f(x) = sum_m c_m exp(i xi_m . x)`, `xi = 2 pi m / L`, so Parseval reads
//! `int |f|^2 dx = L^3 sum |c_m|^2`.

use crate::grid::{Field, Grid3, Rank};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans_for(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Spectral coefficients of one field, layout matching [`Field`].
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub grid: Grid3,
    pub rank: Rank,
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid3, rank: Rank) -> Self {
        Spectrum {
            grid,
            rank,
            coeffs: vec![Complex64::new(0.0, 0.0); rank.components() * grid.points()],
        }
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let m = self.grid.points();
        &self.coeffs[c * m..(c + 1) * m]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let m = self.grid.points();
        &mut self.coeffs[c * m..(c + 1) * m]
    }

    /// Applies `f(mx, my, mz, value) -> value` to every coefficient,
    /// with `m` the signed integer wavevector.
    pub fn map_modes(&mut self, f: impl Fn(i64, i64, i64, Complex64) -> Complex64 + Sync) {
        let n = self.grid.n();
        let grid = self.grid;
        let m = grid.points();
        self.coeffs.par_chunks_mut(m).for_each(|comp| {
            for i in 0..n {
                let mi = grid.mode(i);
                for j in 0..n {
                    let mj = grid.mode(j);
                    for k in 0..n {
                        let mk = grid.mode(k);
                        let idx = (i * n + j) * n + k;
                        comp[idx] = f(mi, mj, mk, comp[idx]);
                    }
                }
            }
        });
    }

    /// Zeros every mode with any |m_axis| above the grid's 2/3 dealias bound.
    pub fn dealias(&mut self) {
        let kmax = self.grid.dealias_mode();
        self.map_modes(|mi, mj, mk, v| {
            if mi.abs() > kmax || mj.abs() > kmax || mk.abs() > kmax {
                Complex64::new(0.0, 0.0)
            } else {
                v
            }
        });
    }
}

fn transform_axis(data: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>, axis: usize) {
    // Layout within one component: idx = (i*n + j)*n + k.
    match axis {
        2 => {
            data.par_chunks_mut(n).for_each(|line| fft.process(line));
        }
        1 => {
            data.par_chunks_mut(n * n).for_each(|plane| {
                let mut line = vec![Complex64::new(0.0, 0.0); n];
                for k in 0..n {
                    for j in 0..n {
                        line[j] = plane[j * n + k];
                    }
                    fft.process(&mut line);
                    for j in 0..n {
                        plane[j * n + k] = line[j];
                    }
                }
            });
        }
        0 => {
            let nn = n * n;
            // Parallelize over (j,k) pairs via chunked row gather.
            let planes: Vec<usize> = (0..nn).collect();
            let cols: Vec<Vec<Complex64>> = planes
                .par_iter()
                .map(|&jk| {
                    let mut line = vec![Complex64::new(0.0, 0.0); n];
                    for i in 0..n {
                        line[i] = data[i * nn + jk];
                    }
                    fft.process(&mut line);
                    line
                })
                .collect();
            for (jk, line) in cols.into_iter().enumerate() {
                for i in 0..n {
                    data[i * nn + jk] = line[i];
                }
            }
        }
        _ => unreachable!(),
    }
}

/// Forward transform: real samples to trigonometric coefficients.
pub fn forward(field: &Field) -> Spectrum {
    let grid = field.grid();
    let n = grid.n();
    let plans = plans_for(n);
    let mut coeffs: Vec<Complex64> = field
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    let m = grid.points();
    for chunk in coeffs.chunks_mut(m) {
        transform_axis(chunk, n, &plans.forward, 2);
        transform_axis(chunk, n, &plans.forward, 1);
        transform_axis(chunk, n, &plans.forward, 0);
    }
    let scale = 1.0 / m as f64;
    coeffs.par_iter_mut().for_each(|c| *c *= scale);
    Spectrum {
        grid,
        rank: field.rank(),
        coeffs,
    }
}

/// Inverse transform back to real samples (imaginary residue discarded).
pub fn inverse(spec: &Spectrum) -> Field {
    let grid = spec.grid;
    let n = grid.n();
    let plans = plans_for(n);
    let mut coeffs = spec.coeffs.clone();
    let m = grid.points();
    for chunk in coeffs.chunks_mut(m) {
        transform_axis(chunk, n, &plans.inverse, 2);
        transform_axis(chunk, n, &plans.inverse, 1);
        transform_axis(chunk, n, &plans.inverse, 0);
    }
    let data: Vec<f64> = coeffs.par_iter().map(|c| c.re).collect();
    Field::from_data(grid, spec.rank, data).expect("shape preserved by transform")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid3, Rank};

    #[test]
    fn round_trip_is_identity_to_1e12() {
        let grid = Grid3::new(16, 2.0 * std::f64::consts::PI).unwrap();
        let f = Field::sample_scalar(grid, |x| {
            (x[0]).sin() + 0.3 * (2.0 * x[1]).cos() + 0.1 * (x[0] + 3.0 * x[2]).sin()
        });
        let back = inverse(&forward(&f));
        let scale = f.max_abs();
        let mut err: f64 = 0.0;
        for (a, b) in f.data().iter().zip(back.data()) {
            err = err.max((a - b).abs());
        }
        assert!(err / scale <= 1e-12, "round-trip error {err}");
    }

    #[test]
    fn single_mode_lands_on_expected_coefficient() {
        let grid = Grid3::new(8, 2.0 * std::f64::consts::PI).unwrap();
        // f = cos(2 x) => c_{m=(2,0,0)} = c_{(-2,0,0)} = 1/2.
        let f = Field::sample_scalar(grid, |x| (2.0 * x[0]).cos());
        let spec = forward(&f);
        let c = spec.component(0);
        let idx_pos = (2 * 8 + 0) * 8 + 0;
        let idx_neg = (6 * 8 + 0) * 8 + 0;
        assert!((c[idx_pos].re - 0.5).abs() < 1e-12);
        assert!((c[idx_neg].re - 0.5).abs() < 1e-12);
        let total: f64 = c.iter().map(|z| z.norm()).sum();
        assert!((total - 1.0).abs() < 1e-11);
    }

    #[test]
    fn dealias_clears_high_modes_only() {
        let grid = Grid3::new(8, 1.0).unwrap();
        let mut spec = Spectrum::zeros(grid, Rank::Scalar);
        spec.map_modes(|_, _, _, _| Complex64::new(1.0, 0.0));
        spec.dealias();
        // kmax = floor(7/3) = 2 for n = 8.
        let kept = spec
            .component(0)
            .iter()
            .filter(|z| z.norm() > 0.0)
            .count();
        assert_eq!(kept, 5 * 5 * 5);
    }
}
