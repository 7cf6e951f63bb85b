use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar type of the toolkit. Parameters are stored as `f32`; the same
/// code instantiated at `f64` backs the finite-difference checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense matrix. Sequences are stored one time step per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// `out += x · W` for a row vector `x` of length `W.rows()`.
pub(crate) fn vec_mat_acc<T: Real>(x: &[T], w: &Tensor2<T>, out: &mut [T]) {
    debug_assert_eq!(x.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
}

/// `out += W · g` (gradient w.r.t. the input of `x · W`).
pub(crate) fn mat_vec_acc<T: Real>(w: &Tensor2<T>, g: &[T], out: &mut [T]) {
    debug_assert_eq!(g.len(), w.cols);
    debug_assert_eq!(out.len(), w.rows);
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (&wij, &gj) in w.row(i).iter().zip(g) {
            acc += wij * gj;
        }
        *o += acc;
    }
}

/// `gw += outer(x, g)` where `gw` is a row-major `x.len() × g.len()` buffer.
pub(crate) fn outer_acc<T: Real>(gw: &mut [T], x: &[T], g: &[T]) {
    let cols = g.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        for (o, &gj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(g) {
            *o += xi * gj;
        }
    }
}

pub(crate) fn add_acc<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Tensor2::<f32>::from_vec(2, 2, vec![0.0; 3]).is_err());
        let t = Tensor2::<f32>::from_vec(2, 3, (0..6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.get(0, 2), 2.0);
    }

    #[test]
    fn kernels() {
        let w = Tensor2::<f64>::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = vec![0.0; 3];
        vec_mat_acc(&[1.0, 1.0], &w, &mut out);
        assert_eq!(out, vec![5.0, 7.0, 9.0]);
        let mut back = vec![0.0; 2];
        mat_vec_acc(&w, &[1.0, 0.0, 1.0], &mut back);
        assert_eq!(back, vec![4.0, 10.0]);
        let mut gw = vec![0.0; 6];
        outer_acc(&mut gw, &[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(gw, vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!(sigmoid(1000.0f32) <= 1.0);
    }
}
