//! Periodic cubic grid and sampled fields.
//!
//! All fields live on a [`Grid3`]: `n` samples per axis on a box of length
//! `box_len`, point `(i,j,k)` at `(i,j,k) * spacing`, indices wrapping mod
//! `n`. Sample data is stored component-major:
//! `index = ((c*n + i)*n + j)*n + k`.

use crate::error::{EwError, Result};
use serde::{Deserialize, Serialize};

/// Periodic cubic grid descriptor shared by all fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    n: usize,
    box_len: f64,
}

impl Grid3 {
    /// `n` must be a power of two, at least 8; `box_len` positive.
    pub fn new(n: usize, box_len: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(EwError::contract(format!(
                "grid resolution must be a power of two >= 8, got {n}"
            )));
        }
        if !(box_len > 0.0) || !box_len.is_finite() {
            return Err(EwError::contract(format!(
                "box length must be positive and finite, got {box_len}"
            )));
        }
        Ok(Grid3 { n, box_len })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_len(&self) -> f64 {
        self.box_len
    }

    pub fn spacing(&self) -> f64 {
        self.box_len / self.n as f64
    }

    pub fn points(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Position of the sample with (wrapped) index triple.
    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.spacing();
        [
            (i % self.n) as f64 * h,
            (j % self.n) as f64 * h,
            (k % self.n) as f64 * h,
        ]
    }

    /// Signed integer wavevector for a transform index, in (-n/2, n/2].
    pub fn mode(&self, idx: usize) -> i64 {
        let n = self.n as i64;
        let idx = idx as i64;
        if idx <= n / 2 {
            idx
        } else {
            idx - n
        }
    }

    /// Physical frequency xi = 2 pi m / L for a transform index.
    pub fn xi(&self, idx: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.mode(idx) as f64 / self.box_len
    }

    /// Largest representable |m| per axis (the positive Nyquist mode).
    pub fn nyquist_mode(&self) -> i64 {
        self.n as i64 / 2
    }

    /// Largest |xi| per axis.
    pub fn nyquist_xi(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.nyquist_mode() as f64 / self.box_len
    }

    /// Largest kept |m| per axis under the 2/3-rule used for dealiasing.
    ///
    /// Chosen so that aliases of quadratic products of kept modes land
    /// strictly outside the kept band: n - 2*kmax > kmax.
    pub fn dealias_mode(&self) -> i64 {
        ((self.n as i64) - 1) / 3
    }

    pub fn linear_index(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        ((c * self.n + i) * self.n + j) * self.n + k
    }
}

/// Tensor rank of a sampled field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank {
    Scalar,
    Vector3,
    Matrix3x3,
}

impl Rank {
    pub fn components(&self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector3 => 3,
            Rank::Matrix3x3 => 9,
        }
    }
}

/// Real samples of a scalar/vector/matrix field on a [`Grid3`].
///
/// Matrix fields index components as `c = 3*j + k`, so that the gradient
/// of a vector field `U` stores `(grad U)_{jk} = d_j U^k` at `c = 3*j + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid3,
    rank: Rank,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid3, rank: Rank) -> Self {
        Field {
            grid,
            rank,
            data: vec![0.0; rank.components() * grid.points()],
        }
    }

    pub fn from_data(grid: Grid3, rank: Rank, data: Vec<f64>) -> Result<Self> {
        if data.len() != rank.components() * grid.points() {
            return Err(EwError::contract(format!(
                "field data length {} does not match {} components on n = {}",
                data.len(),
                rank.components(),
                grid.n()
            )));
        }
        Ok(Field { grid, rank, data })
    }

    /// Samples the closure `f(position) -> component values` on the grid.
    pub fn sample(grid: Grid3, rank: Rank, f: impl Fn([f64; 3]) -> Vec<f64> + Sync) -> Self {
        let n = grid.n();
        let nc = rank.components();
        let mut data = vec![0.0; nc * grid.points()];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let vals = f(grid.point(i, j, k));
                    debug_assert_eq!(vals.len(), nc);
                    for (c, v) in vals.iter().enumerate() {
                        data[grid.linear_index(c, i, j, k)] = *v;
                    }
                }
            }
        }
        Field { grid, rank, data }
    }

    pub fn sample_scalar(grid: Grid3, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        Self::sample(grid, Rank::Scalar, |x| vec![f(x)])
    }

    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn components(&self) -> usize {
        self.rank.components()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// One component as a slice of n^3 samples.
    pub fn component(&self, c: usize) -> &[f64] {
        let m = self.grid.points();
        &self.data[c * m..(c + 1) * m]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let m = self.grid.points();
        &mut self.data[c * m..(c + 1) * m]
    }

    pub fn get(&self, c: usize, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.linear_index(c, i, j, k)]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.grid.linear_index(c, i, j, k);
        self.data[idx] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(EwError::RejectedInput("non-finite samples".into()))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Discrete L2 norm: sqrt(sum f^2 * spacing^3), fixed summation order.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.spacing().powi(3);
        let mut acc = 0.0;
        for v in &self.data {
            acc += v * v;
        }
        (acc * w).sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Field) {
        assert_eq!(self.data.len(), other.data.len());
        for (v, o) in self.data.iter_mut().zip(&other.data) {
            *v += a * o;
        }
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.grid == other.grid && self.rank == other.rank
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_resolutions() {
        assert!(Grid3::new(7, 1.0).is_err());
        assert!(Grid3::new(12, 1.0).is_err());
        assert!(Grid3::new(4, 1.0).is_err());
        assert!(Grid3::new(8, -1.0).is_err());
        assert!(Grid3::new(8, 1.0).is_ok());
    }

    #[test]
    fn spacing_times_n_is_box_len() {
        let g = Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap();
        assert_eq!(g.spacing() * g.n() as f64, g.box_len());
    }

    #[test]
    fn modes_cover_half_open_range() {
        let g = Grid3::new(8, 1.0).unwrap();
        let ms: Vec<i64> = (0..8).map(|i| g.mode(i)).collect();
        assert_eq!(ms, vec![0, 1, 2, 3, 4, -3, -2, -1]);
    }

    #[test]
    fn layout_is_component_major() {
        let g = Grid3::new(8, 1.0).unwrap();
        assert_eq!(g.linear_index(0, 0, 0, 1), 1);
        assert_eq!(g.linear_index(0, 0, 1, 0), 8);
        assert_eq!(g.linear_index(0, 1, 0, 0), 64);
        assert_eq!(g.linear_index(1, 0, 0, 0), 512);
    }
}
