//! Quantile-conditioned first and second order attributions.
//!
//! For a reference point `a`, every instance contributes
//! `(x_ij − a_j) θ_j(x_i)` (first order) and
//! `(x_ij − a_j)(x_ik − a_k) θ_jk(x_i)` (second order). Conditioning on the
//! output quantile is done with the shared rank smoother, so
//!
//! * `C1 = θ(a) + Σ_j S_j`
//! * `C2 = C1 − ½ Σ_j T_jj`
//! * `C22 = C2 − Σ_{j<k} T_jk = θ(a) + Σ_j V_j`
//!
//! hold level by level up to rounding.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivatives::batch_derivatives;
use crate::error::{Error, Result};
use crate::model::{Derivatives, SmoothModel};
use crate::quantile::{LevelKind, QuantileGrid, RankSmoother, SmootherConfig};
use crate::scalar::{all_finite, sigmoid, Scalar};

/// Interaction screening threshold on `max_α |T_jk|`.
pub const DEFAULT_SCREENING_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct MacqConfig<T> {
    pub grid: QuantileGrid<T>,
    pub smoother: SmootherConfig<T>,
    pub screening_threshold: T,
}

impl<T: Scalar> Default for MacqConfig<T> {
    fn default() -> Self {
        Self {
            grid: QuantileGrid::percent(),
            smoother: SmootherConfig::default(),
            screening_threshold: T::lit(DEFAULT_SCREENING_THRESHOLD),
        }
    }
}

/// Per-instance derivatives and rank smoother for one `(model, sample)` pair.
/// Reference-point dependent quantities are computed on demand.
#[derive(Debug, Clone)]
pub struct MacqSample<T> {
    x: Array2<T>,
    derivs: Vec<Derivatives<T>>,
    theta: Vec<T>,
    smoother: RankSmoother<T>,
}

impl<T: Scalar> MacqSample<T> {
    pub fn new<M: SmoothModel<T> + ?Sized>(
        model: &M,
        x: ArrayView2<'_, T>,
        grid: &QuantileGrid<T>,
        smoother: SmootherConfig<T>,
    ) -> Result<Self> {
        let derivs = batch_derivatives(model, x)?;
        let theta: Vec<T> = derivs.iter().map(|d| d.value).collect();
        let smoother = RankSmoother::new(&theta, grid, smoother)?;
        Ok(Self {
            x: x.to_owned(),
            derivs,
            theta,
            smoother,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn derivatives(&self) -> &[Derivatives<T>] {
        &self.derivs
    }

    pub fn smoother(&self) -> &RankSmoother<T> {
        &self.smoother
    }

    pub fn levels(&self) -> usize {
        self.smoother.grid().len()
    }

    fn check_reference(&self, a: &[T]) -> Result<()> {
        if a.len() != self.q() {
            return Err(Error::InputShape {
                expected: self.q(),
                found: a.len(),
            });
        }
        if !all_finite(a) {
            return Err(Error::Domain {
                what: "reference point".into(),
            });
        }
        Ok(())
    }

    /// `S[l, j]`: smoothed `(x_ij − a_j) θ_j(x_i)`.
    pub fn first_order(&self, a: &[T]) -> Result<Array2<T>> {
        self.check_reference(a)?;
        let q = self.q();
        let rows: Vec<Vec<T>> = (0..self.levels())
            .into_par_iter()
            .map(|l| {
                let mut acc = vec![T::zero(); q];
                for &(i, w) in self.smoother.level_weights(l) {
                    let xi = self.x.row(i);
                    let g = &self.derivs[i].gradient;
                    for j in 0..q {
                        acc[j] += w * ((xi[j] - a[j]) * g[j]);
                    }
                }
                acc
            })
            .collect();
        Ok(stack2(rows, q))
    }

    /// `T[l, j, k]`: smoothed `(x_ij − a_j)(x_ik − a_k) θ_jk(x_i)`, symmetrized.
    pub fn second_order(&self, a: &[T]) -> Result<Array3<T>> {
        self.check_reference(a)?;
        let q = self.q();
        let levels: Vec<Vec<T>> = (0..self.levels())
            .into_par_iter()
            .map(|l| {
                let mut acc = vec![T::zero(); q * q];
                let mut d = vec![T::zero(); q];
                for &(i, w) in self.smoother.level_weights(l) {
                    let xi = self.x.row(i);
                    for j in 0..q {
                        d[j] = xi[j] - a[j];
                    }
                    let h = &self.derivs[i].hessian;
                    for j in 0..q {
                        for k in 0..q {
                            acc[j * q + k] += w * (d[j] * d[k] * h[j * q + k]);
                        }
                    }
                }
                let mut sym = vec![T::zero(); q * q];
                for j in 0..q {
                    for k in 0..q {
                        sym[j * q + k] = (acc[j * q + k] + acc[k * q + j]) * T::half();
                    }
                }
                sym
            })
            .collect();
        let l = levels.len();
        let flat: Vec<T> = levels.into_iter().flatten().collect();
        Ok(Array3::from_shape_vec((l, q, q), flat).expect("level-major layout"))
    }

    /// Full attribution report relative to `a`.
    pub fn report<M: SmoothModel<T> + ?Sized>(
        &self,
        model: &M,
        a: &[T],
        screening_threshold: T,
    ) -> Result<AttributionReport<T>> {
        let reference_value = model.evaluate_canonical(a)?;
        let s = self.first_order(a)?;
        let t = self.second_order(a)?;
        let curves = contribution_curves(s.view(), &t, reference_value)?;
        let v = allocated_attributions(s.view(), &t)?;
        let quantiles = self.smoother.quantiles().to_vec();
        let (r1, r2) = approximation_residuals(&quantiles, &curves.c1, &curves.c22)?;
        let interactions = screen_interactions(&t, screening_threshold)?;
        Ok(AttributionReport {
            levels: self.smoother.grid().levels().to_vec(),
            quantiles,
            level_kinds: self.smoother.level_kinds().to_vec(),
            reference_point: a.to_vec(),
            reference_value,
            first_order: s,
            second_order: t,
            c1: curves.c1,
            c2: curves.c2,
            c22: curves.c22,
            allocated: v,
            residuals_first_order: r1,
            residuals_second_order: r2,
            screening_threshold,
            interactions,
        })
    }

    /// Per-instance `ω_ij` for the listed features with smoothed mean and sd bands.
    pub fn individual(&self, a: &[T], features: &[usize]) -> Result<IndividualContributions<T>> {
        self.check_reference(a)?;
        let q = self.q();
        if let Some(&bad) = features.iter().find(|&&j| j >= q) {
            return Err(Error::arg(format!("unknown feature index {bad} (q = {q})")));
        }
        let per_feature = features
            .iter()
            .map(|&j| {
                let omega: Vec<T> = (0..self.n())
                    .map(|i| {
                        let d = self.x[[i, j]] - a[j];
                        let dv = &self.derivs[i];
                        d * dv.gradient[j] - T::half() * d * d * dv.h(j, j)
                    })
                    .collect();
                let band_mean = self.smoother.smooth(&omega)?;
                let band_sd = self.smoother.conditional_sd(&omega)?;
                Ok(FeatureContributions {
                    feature: j,
                    values: self.x.column(j).to_vec(),
                    omega,
                    band_mean,
                    band_sd,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IndividualContributions {
            ranks: self.smoother.ranks().to_vec(),
            mean_response: self.theta.iter().map(|&t| sigmoid(t)).collect(),
            features: per_feature,
        })
    }
}

fn stack2<T: Scalar>(rows: Vec<Vec<T>>, q: usize) -> Array2<T> {
    let l = rows.len();
    Array2::from_shape_vec((l, q), rows.into_iter().flatten().collect()).expect("row-major layout")
}

/// `(j, k)` with `j < k` and the largest `|T_jk|` over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct InteractionPair<T> {
    pub j: usize,
    pub k: usize,
    pub max_abs: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ContributionCurves<T> {
    pub c1: Vec<T>,
    pub c2: Vec<T>,
    pub c22: Vec<T>,
}

/// Everything the engine reports for one reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct AttributionReport<T> {
    pub levels: Vec<T>,
    pub quantiles: Vec<T>,
    pub level_kinds: Vec<LevelKind>,
    pub reference_point: Vec<T>,
    pub reference_value: T,
    pub first_order: Array2<T>,
    pub second_order: Array3<T>,
    pub c1: Vec<T>,
    pub c2: Vec<T>,
    pub c22: Vec<T>,
    pub allocated: Array2<T>,
    pub residuals_first_order: Vec<T>,
    pub residuals_second_order: Vec<T>,
    pub screening_threshold: T,
    pub interactions: Vec<InteractionPair<T>>,
}

impl<T: Scalar> AttributionReport<T> {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn q(&self) -> usize {
        self.reference_point.len()
    }

    /// `S_j − ½ T_jj` per level and feature.
    pub fn diagonal_attributions(&self) -> Array2<T> {
        let mut out = self.first_order.clone();
        for ((l, j), v) in out.indexed_iter_mut() {
            *v -= T::half() * self.second_order[[l, j, j]];
        }
        out
    }

    /// `Σ_l |C22[l] − C2[l]|`.
    pub fn interaction_area(&self) -> T {
        self.c2
            .iter()
            .zip(&self.c22)
            .map(|(&a, &b)| (b - a).abs())
            .sum()
    }

    /// Re-checks shapes and the curve identities; returns the worst violation.
    pub fn validate(&self, tol: T) -> Result<T> {
        let l = self.levels.len();
        let q = self.reference_point.len();
        let lens = [
            self.quantiles.len(),
            self.c1.len(),
            self.c2.len(),
            self.c22.len(),
            self.residuals_first_order.len(),
            self.residuals_second_order.len(),
        ];
        if lens.iter().any(|&v| v != l)
            || self.first_order.dim() != (l, q)
            || self.second_order.dim() != (l, q, q)
            || self.allocated.dim() != (l, q)
        {
            return Err(Error::Schema("attribution report arrays have inconsistent shapes".into()));
        }
        let mut worst = T::zero();
        for li in 0..l {
            let s_sum: T = self.first_order.row(li).iter().copied().sum();
            let mut diag = T::zero();
            let mut off = T::zero();
            for j in 0..q {
                diag += self.second_order[[li, j, j]];
                for k in 0..q {
                    let a = self.second_order[[li, j, k]];
                    worst = worst.max((a - self.second_order[[li, k, j]]).abs());
                    if j < k {
                        off += a;
                    }
                }
            }
            let v_sum: T = self.allocated.row(li).iter().copied().sum();
            let checks = [
                self.c1[li] - (self.reference_value + s_sum),
                self.c2[li] - (self.c1[li] - T::half() * diag),
                self.c22[li] - (self.c2[li] - off),
                self.c22[li] - (self.reference_value + v_sum),
            ];
            for c in checks {
                worst = worst.max(c.abs());
            }
        }
        if !(worst <= tol) {
            return Err(Error::Schema(format!(
                "attribution identities violated by {worst} (tolerance {tol})"
            )));
        }
        Ok(worst)
    }
}

/// Per-feature individual contributions and their conditional bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FeatureContributions<T> {
    pub feature: usize,
    /// Feature values as seen by the model.
    pub values: Vec<T>,
    pub omega: Vec<T>,
    pub band_mean: Vec<T>,
    pub band_sd: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct IndividualContributions<T> {
    pub ranks: Vec<T>,
    pub mean_response: Vec<T>,
    pub features: Vec<FeatureContributions<T>>,
}

// ---------------------------------------------------------------------------
// Free-standing operations

pub fn first_order_attributions<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    a: &[T],
    grid: &QuantileGrid<T>,
    smoother: SmootherConfig<T>,
) -> Result<Array2<T>> {
    MacqSample::new(model, x, grid, smoother)?.first_order(a)
}

pub fn second_order_attributions<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    a: &[T],
    grid: &QuantileGrid<T>,
    smoother: SmootherConfig<T>,
) -> Result<Array3<T>> {
    MacqSample::new(model, x, grid, smoother)?.second_order(a)
}

fn check_st<T: Scalar>(s: ArrayView2<'_, T>, t: &Array3<T>) -> Result<()> {
    let (l, q) = s.dim();
    if t.dim() != (l, q, q) {
        return Err(Error::arg(format!(
            "second order array {:?} does not match first order {:?}",
            t.dim(),
            s.dim()
        )));
    }
    Ok(())
}

/// `(C1, C2, C22)` from `S`, `T` and the reference level `θ(a)`.
pub fn contribution_curves<T: Scalar>(
    s: ArrayView2<'_, T>,
    t: &Array3<T>,
    reference_value: T,
) -> Result<ContributionCurves<T>> {
    check_st(s, t)?;
    let (l, q) = s.dim();
    let mut c1 = Vec::with_capacity(l);
    let mut c2 = Vec::with_capacity(l);
    let mut c22 = Vec::with_capacity(l);
    for li in 0..l {
        let first = reference_value + s.row(li).iter().copied().sum::<T>();
        let mut diag = T::zero();
        let mut off = T::zero();
        for j in 0..q {
            diag += t[[li, j, j]];
            for k in j + 1..q {
                off += t[[li, j, k]];
            }
        }
        let second = first - T::half() * diag;
        c1.push(first);
        c2.push(second);
        c22.push(second - off);
    }
    Ok(ContributionCurves { c1, c2, c22 })
}

/// `V[l, j] = S[l, j] − ½ Σ_k T[l, j, k]`.
pub fn allocated_attributions<T: Scalar>(s: ArrayView2<'_, T>, t: &Array3<T>) -> Result<Array2<T>> {
    check_st(s, t)?;
    let mut v = s.to_owned();
    for ((li, j), out) in v.indexed_iter_mut() {
        let row_sum: T = t.index_axis(Axis(0), li).row(j).iter().copied().sum();
        *out -= T::half() * row_sum;
    }
    Ok(v)
}

/// Pairs `j < k` whose `max_l |T[l, j, k]|` exceeds `threshold`, strongest first.
pub fn screen_interactions<T: Scalar>(t: &Array3<T>, threshold: T) -> Result<Vec<InteractionPair<T>>> {
    let (_, q, q2) = t.dim();
    if q != q2 {
        return Err(Error::arg("second order array is not square per level"));
    }
    if !(threshold >= T::zero()) {
        return Err(Error::arg("screening threshold must be non-negative"));
    }
    let mut pairs = Vec::new();
    for j in 0..q {
        for k in j + 1..q {
            let max_abs = t
                .index_axis(Axis(2), k)
                .index_axis(Axis(1), j)
                .iter()
                .fold(T::zero(), |m, v| m.max(v.abs()));
            if max_abs > threshold {
                pairs.push(InteractionPair { j, k, max_abs });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.max_abs
            .partial_cmp(&a.max_abs)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.j, a.k).cmp(&(b.j, b.k)))
    });
    Ok(pairs)
}

/// `(|F̂^{-1}(α_l) − C1[l]|, |F̂^{-1}(α_l) − C22[l]|)`.
pub fn approximation_residuals<T: Scalar>(
    quantiles: &[T],
    c1: &[T],
    c22: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    if c1.len() != quantiles.len() || c22.len() != quantiles.len() {
        return Err(Error::arg("curve lengths differ from the quantile grid"));
    }
    let r1 = quantiles.iter().zip(c1).map(|(&f, &c)| (f - c).abs()).collect();
    let r2 = quantiles.iter().zip(c22).map(|(&f, &c)| (f - c).abs()).collect();
    Ok((r1, r2))
}

/// `ω_ij` for the listed features relative to `a`.
pub fn individual_contributions<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    a: &[T],
    features: &[usize],
    grid: &QuantileGrid<T>,
    smoother: SmootherConfig<T>,
) -> Result<IndividualContributions<T>> {
    MacqSample::new(model, x, grid, smoother)?.individual(a, features)
}

/// Runs the full analysis for reference point `a`.
pub fn analyze<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    a: &[T],
    config: &MacqConfig<T>,
) -> Result<AttributionReport<T>> {
    MacqSample::new(model, x, &config.grid, config.smoother)?.report(model, a, config.screening_threshold)
}
