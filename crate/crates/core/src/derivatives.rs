//! Exact gradients and Hessians of smooth models, single point and batched.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Derivatives, SmoothModel};
use crate::scalar::{all_finite, Scalar};

/// `∂θ/∂x_j` per unit of (standardized) feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<T>(pub Vec<T>);

impl<T> std::ops::Deref for GradientVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Dense symmetric matrix of second partials, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> HessianMatrix<T> {
    pub fn from_row_major(dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::InputShape {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> T {
        self.data[j * self.dim + k]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `max_{j,k} |H_jk − H_kj|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for j in 0..self.dim {
            for k in 0..j {
                worst = worst.max((self.get(j, k) - self.get(k, j)).abs());
            }
        }
        worst
    }
}

pub fn gradient<T: Scalar, M: SmoothModel<T> + ?Sized>(model: &M, x: &[T]) -> Result<GradientVector<T>> {
    model.check_input(x)?;
    let g = model.gradient_unchecked(x);
    if !all_finite(&g) {
        return Err(Error::Domain {
            what: "gradient".into(),
        });
    }
    Ok(GradientVector(g))
}

pub fn hessian<T: Scalar, M: SmoothModel<T> + ?Sized>(model: &M, x: &[T]) -> Result<HessianMatrix<T>> {
    let d = derivatives(model, x)?;
    HessianMatrix::from_row_major(d.gradient.len(), d.hessian)
}

pub fn derivatives<T: Scalar, M: SmoothModel<T> + ?Sized>(model: &M, x: &[T]) -> Result<Derivatives<T>> {
    model.check_input(x)?;
    let d = model.derivatives_unchecked(x);
    if !d.value.is_finite() || !all_finite(&d.gradient) || !all_finite(&d.hessian) {
        return Err(Error::Domain {
            what: "model derivatives".into(),
        });
    }
    Ok(d)
}

/// Derivatives at every row of `x`, returned in row order.
pub fn batch_derivatives<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
) -> Result<Vec<Derivatives<T>>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::InputShape {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    let rows: Vec<Vec<T>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.par_iter()
        .enumerate()
        .map(|(i, row)| {
            if !all_finite(row) {
                return Err(Error::Domain {
                    what: format!("feature row {i}"),
                });
            }
            let d = model.derivatives_unchecked(row);
            if !d.value.is_finite() || !all_finite(&d.gradient) || !all_finite(&d.hessian) {
                return Err(Error::Numeric { instance: i });
            }
            Ok(d)
        })
        .collect()
}

/// `θ` at every row of `x`, in row order.
pub fn batch_canonical<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
) -> Result<Vec<T>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::InputShape {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    let rows: Vec<Vec<T>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.par_iter()
        .enumerate()
        .map(|(i, row)| {
            let v = model.canonical_unchecked(row);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric { instance: i })
            }
        })
        .collect()
}
