//! Distorted expectations `E[θ(X) ζ(U)]`, with `U` the rank of the output, and
//! their sensitivities `E[X_j θ_j(X) ζ(U)]`. A Dirac density at `α` turns the
//! value into the `α`-quantile and the sensitivity into the first order
//! attribution at `a = 0`.

use std::fmt;
use std::sync::Arc;

use ndarray::ArrayView2;

use crate::derivatives::batch_derivatives;
use crate::engine::MacqSample;
use crate::error::{Error, Result};
use crate::model::SmoothModel;
use crate::quantile::{empirical_quantile, rank_positions, QuantileGrid, SmootherConfig};
use crate::scalar::Scalar;

pub const NORMALIZATION_TOL: f64 = 1e-8;
const QUADRATURE_INTERVALS: usize = 1 << 14;

type DensityFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Clone)]
pub enum DistortionDensity<T> {
    Uniform,
    Dirac(T),
    /// Piecewise constant on `m` equal cells of `[0, 1]`.
    Table(Vec<T>),
    Function(DensityFn<T>),
    /// `λ ζ₁ + (1 − λ) ζ₂`.
    Mixture(T, Box<DistortionDensity<T>>, Box<DistortionDensity<T>>),
}

impl<T: Scalar> fmt::Debug for DistortionDensity<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "Uniform"),
            Self::Dirac(a) => write!(f, "Dirac({a})"),
            Self::Table(t) => f.debug_tuple("Table").field(t).finish(),
            Self::Function(_) => write!(f, "Function(..)"),
            Self::Mixture(l, a, b) => f.debug_tuple("Mixture").field(l).field(a).field(b).finish(),
        }
    }
}

impl<T: Scalar> DistortionDensity<T> {
    pub fn function<F: Fn(T) -> T + Send + Sync + 'static>(f: F) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn mixture(lambda: T, first: Self, second: Self) -> Self {
        Self::Mixture(lambda, Box::new(first), Box::new(second))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Dirac(_) => "dirac",
            Self::Table(_) => "table",
            Self::Function(_) => "function",
            Self::Mixture(..) => "mixture",
        }
    }

    fn has_atom(&self) -> bool {
        match self {
            Self::Dirac(_) => true,
            Self::Mixture(_, a, b) => a.has_atom() || b.has_atom(),
            _ => false,
        }
    }

    /// `ζ(u)`; not defined for densities with a point mass.
    pub fn density(&self, u: T) -> Result<T> {
        Ok(match self {
            Self::Uniform => T::one(),
            Self::Dirac(_) => return Err(Error::arg("a Dirac density has no pointwise value")),
            Self::Table(t) => {
                let m = t.len();
                let cell = (u * T::from_usize_lossy(m)).floor().to_usize().unwrap_or(0).min(m - 1);
                t[cell]
            }
            Self::Function(f) => f(u),
            Self::Mixture(l, a, b) => *l * a.density(u)? + (T::one() - *l) * b.density(u)?,
        })
    }

    /// Checks non-negativity and `∫ζ = 1` within `1e-8`.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform => Ok(()),
            Self::Dirac(a) => {
                if *a > T::zero() && *a < T::one() {
                    Ok(())
                } else {
                    Err(Error::arg(format!("Dirac level {a} not in (0, 1)")))
                }
            }
            Self::Table(t) => {
                if t.is_empty() {
                    return Err(Error::arg("empty distortion table"));
                }
                if t.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
                    return Err(Error::arg("distortion table has negative or non-finite cells"));
                }
                let total = t.iter().copied().sum::<T>() / T::from_usize_lossy(t.len());
                check_total(total)
            }
            Self::Function(f) => {
                // Composite Simpson; non-negativity is checked on the nodes.
                let m = QUADRATURE_INTERVALS;
                let h = T::one() / T::from_usize_lossy(m);
                let mut total = T::zero();
                for i in 0..=m {
                    let v = f(T::from_usize_lossy(i) * h);
                    if !(v >= T::zero()) || !v.is_finite() {
                        return Err(Error::arg("distortion density is negative or non-finite"));
                    }
                    let w = if i == 0 || i == m {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    total += T::lit(w) * v;
                }
                check_total(total * h / T::lit(3.0))
            }
            Self::Mixture(l, a, b) => {
                if !(*l >= T::zero() && *l <= T::one()) {
                    return Err(Error::arg("mixture weight must lie in [0, 1]"));
                }
                a.validate()?;
                b.validate()
            }
        }
    }
}

fn check_total<T: Scalar>(total: T) -> Result<()> {
    if (total - T::one()).abs() <= T::lit(NORMALIZATION_TOL) {
        Ok(())
    } else {
        Err(Error::arg(format!("distortion density integrates to {total}, not 1")))
    }
}

/// Rank weights `ζ(Û_i)` with `Û_i = rank_i / n`.
fn rank_weights<T: Scalar>(theta: &[T], zeta: &DistortionDensity<T>) -> Result<Vec<T>> {
    rank_positions(theta)?.into_iter().map(|u| zeta.density(u)).collect()
}

/// Empirical `E[θ ζ(Û)]`.
pub fn distorted_value<T: Scalar>(theta: &[T], zeta: &DistortionDensity<T>) -> Result<T> {
    if theta.is_empty() {
        return Err(Error::arg("distorted value of an empty sample"));
    }
    zeta.validate()?;
    match zeta {
        DistortionDensity::Dirac(alpha) => empirical_quantile(theta, *alpha),
        DistortionDensity::Mixture(l, a, b) if zeta.has_atom() => {
            Ok(*l * distorted_value(theta, a)? + (T::one() - *l) * distorted_value(theta, b)?)
        }
        _ => {
            let w = rank_weights(theta, zeta)?;
            let nf = T::from_usize_lossy(theta.len());
            Ok(theta.iter().zip(&w).map(|(&t, &z)| t * z).sum::<T>() / nf)
        }
    }
}

/// Empirical `E[X_j θ_j(X) ζ(Û)]`; a Dirac density uses the smoothed
/// first order attribution at `a = 0` instead.
pub fn distortion_sensitivity<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    j: usize,
    zeta: &DistortionDensity<T>,
    smoother: SmootherConfig<T>,
) -> Result<T> {
    if j >= x.ncols() {
        return Err(Error::arg(format!("feature index {j} out of range (q = {})", x.ncols())));
    }
    if x.nrows() == 0 {
        return Err(Error::arg("empty sample"));
    }
    zeta.validate()?;
    match zeta {
        DistortionDensity::Dirac(alpha) => {
            let grid = QuantileGrid::new(vec![*alpha])?;
            let sample = MacqSample::new(model, x, &grid, smoother)?;
            let s = sample.first_order(&vec![T::zero(); x.ncols()])?;
            Ok(s[[0, j]])
        }
        DistortionDensity::Mixture(l, a, b) if zeta.has_atom() => Ok(*l
            * distortion_sensitivity(model, x, j, a, smoother)?
            + (T::one() - *l) * distortion_sensitivity(model, x, j, b, smoother)?),
        _ => {
            let d = batch_derivatives(model, x)?;
            let theta: Vec<T> = d.iter().map(|d| d.value).collect();
            let w = rank_weights(&theta, zeta)?;
            let nf = T::from_usize_lossy(theta.len());
            Ok(d
                .iter()
                .zip(&w)
                .enumerate()
                .map(|(i, (d, &z))| x[[i, j]] * d.gradient[j] * z)
                .sum::<T>()
                / nf)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;
    use ndarray::Array2;

    #[test]
    fn uniform_gives_the_mean_and_dirac_the_quantile() {
        let t = [3.0_f64, -1.0, 4.0, 1.0, 5.0];
        assert!((distorted_value(&t, &DistortionDensity::Uniform).unwrap() - 2.4).abs() < 1e-15);
        assert_eq!(distorted_value(&t, &DistortionDensity::Dirac(0.5)).unwrap(), 3.0);
    }

    #[test]
    fn linear_density_on_three_points() {
        let z = DistortionDensity::function(|u: f64| 2.0 * u);
        let v = distorted_value(&[1.0, 2.0, 3.0], &z).unwrap();
        assert!((v - 28.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn tables_are_validated_not_rescaled() {
        let ok = DistortionDensity::Table(vec![0.5, 1.5]);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.density(0.25).unwrap(), 0.5);
        assert_eq!(ok.density(1.0).unwrap(), 1.5);
        assert!(DistortionDensity::Table(vec![1.0, 1.5]).validate().is_err());
        assert!(DistortionDensity::Table(vec![-1.0, 3.0]).validate().is_err());
        assert!(DistortionDensity::function(|u: f64| 3.0 * u).validate().is_err());
        assert!(DistortionDensity::<f64>::Dirac(1.0).validate().is_err());
        assert!(distorted_value(&[1.0], &DistortionDensity::Table(vec![2.0])).is_err());
    }

    #[test]
    fn uniform_sensitivity_of_linear_model() {
        let m = LinearModel::new(1.0, vec![2.0, -3.0]).unwrap();
        let x = Array2::from_shape_fn((50, 2), |(i, j)| (i as f64 * 0.37 + j as f64).sin());
        let mean1: f64 = x.column(1).sum() / 50.0;
        let s = distortion_sensitivity(&m, x.view(), 1, &DistortionDensity::Uniform, SmootherConfig::default()).unwrap();
        assert!((s - -3.0 * mean1).abs() < 1e-12);
        let c = LinearModel::constant(2.0, 2).unwrap();
        assert_eq!(
            distortion_sensitivity(&c, x.view(), 0, &DistortionDensity::Uniform, SmootherConfig::default()).unwrap(),
            0.0
        );
        assert!(distortion_sensitivity(&m, x.view(), 2, &DistortionDensity::Uniform, SmootherConfig::default()).is_err());
    }
}
