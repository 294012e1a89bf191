//! Comparison methods: ICE, partial dependence, accumulated local effects and
//! permutation importance. Profiles are on the `θ` scale.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivatives::{batch_canonical, batch_derivatives};
use crate::error::{Error, Result};
use crate::model::SmoothModel;
use crate::quantile::empirical_quantile;
use crate::scalar::{all_finite, sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileMethod {
    Ice { instance: usize },
    Pdp,
    Ale { mode: AleMode, bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ProfileCurve<T> {
    pub feature: usize,
    pub method: ProfileMethod,
    pub points: Vec<T>,
    pub values: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> ProfileCurve<T> {
    /// Shifts the curve to have mean zero over its points.
    pub fn centered(&self) -> Vec<T> {
        let m = self.values.iter().copied().sum::<T>() / T::from_usize_lossy(self.values.len().max(1));
        self.values.iter().map(|&v| v - m).collect()
    }

    /// Linear interpolation (constant extrapolation) at `z`.
    pub fn interpolate(&self, z: T) -> T {
        interpolate(&self.points, &self.values, z)
    }
}

fn interpolate<T: Scalar>(xs: &[T], ys: &[T], z: T) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => ys[0],
        n => {
            if z <= xs[0] {
                return ys[0];
            }
            if z >= xs[n - 1] {
                return ys[n - 1];
            }
            let b = xs.partition_point(|&v| v <= z).clamp(1, n - 1);
            let (x0, x1) = (xs[b - 1], xs[b]);
            let t = (z - x0) / (x1 - x0);
            ys[b - 1] + t * (ys[b] - ys[b - 1])
        }
    }
}

fn check_feature(j: usize, q: usize) -> Result<()> {
    if j >= q {
        return Err(Error::arg(format!("feature index {j} out of range (q = {q})")));
    }
    Ok(())
}

fn check_points<T: Scalar>(points: &[T]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::arg("profile needs at least one evaluation point"));
    }
    if !all_finite(points) || points.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::arg("evaluation points must be finite and strictly increasing"));
    }
    Ok(())
}

/// `θ(x_i with x_ij = z)` for every `z` in `points`.
pub fn ice_profile<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    instance: usize,
    j: usize,
    points: &[T],
) -> Result<ProfileCurve<T>> {
    check_feature(j, x.ncols())?;
    check_points(points)?;
    if instance >= x.nrows() {
        return Err(Error::arg(format!("instance {instance} out of range (n = {})", x.nrows())));
    }
    let mut row = x.row(instance).to_vec();
    let values = points
        .iter()
        .map(|&z| {
            row[j] = z;
            model.evaluate_canonical(&row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileCurve {
        feature: j,
        method: ProfileMethod::Ice { instance },
        points: points.to_vec(),
        values,
        warnings: Vec::new(),
    })
}

/// Average of the ICE curves over all rows of `x`.
pub fn pdp_profile<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    j: usize,
    points: &[T],
) -> Result<ProfileCurve<T>> {
    check_feature(j, x.ncols())?;
    check_points(points)?;
    let (lo, hi) = column_range(x, j)?;
    if points[0] < lo || points[points.len() - 1] > hi {
        return Err(Error::arg(format!(
            "evaluation points must lie within the observed range [{lo}, {hi}] of feature {j}"
        )));
    }
    let nf = T::from_usize_lossy(x.nrows());
    let values = points
        .iter()
        .map(|&z| {
            let mut xz = x.to_owned();
            xz.column_mut(j).fill(z);
            Ok(batch_canonical(model, xz.view())?.into_iter().sum::<T>() / nf)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileCurve {
        feature: j,
        method: ProfileMethod::Pdp,
        points: points.to_vec(),
        values,
        warnings: Vec::new(),
    })
}

fn column_range<T: Scalar>(x: ArrayView2<'_, T>, j: usize) -> Result<(T, T)> {
    if x.nrows() == 0 {
        return Err(Error::arg("empty sample"));
    }
    let col = x.column(j);
    let lo = col.iter().copied().fold(T::infinity(), T::min);
    let hi = col.iter().copied().fold(T::neg_infinity(), T::max);
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AleMode {
    /// Bin average of `∂θ/∂x_j` times the bin width.
    Gradient,
    /// Bin average of `θ(upper edge) − θ(lower edge)`.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct AleConfig<T> {
    pub bins: usize,
    pub mode: AleMode,
    /// Point where the profile is pinned to zero; the lowest edge if unset.
    pub anchor: Option<T>,
}

impl<T: Scalar> Default for AleConfig<T> {
    fn default() -> Self {
        Self {
            bins: 40,
            mode: AleMode::Gradient,
            anchor: None,
        }
    }
}

/// Accumulated local effects of feature `j`, evaluated at the bin edges.
pub fn ale_profile<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    j: usize,
    config: &AleConfig<T>,
) -> Result<ProfileCurve<T>> {
    check_feature(j, x.ncols())?;
    if config.bins == 0 {
        return Err(Error::arg("ALE needs at least one bin"));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::arg("empty sample"));
    }
    let col: Vec<T> = x.column(j).to_vec();
    let (lo, hi) = column_range(x, j)?;
    if !(hi > lo) {
        return Err(Error::arg(format!("feature {j} is constant; ALE is undefined")));
    }
    let mut warnings = Vec::new();
    let mut edges = vec![lo];
    for b in 1..config.bins {
        let e = empirical_quantile(&col, T::from_usize_lossy(b) / T::from_usize_lossy(config.bins))?;
        if e > *edges.last().unwrap() && e < hi {
            edges.push(e);
        }
    }
    edges.push(hi);
    let k = edges.len() - 1;

    // Bin b covers (edges[b], edges[b + 1]]; the first bin also holds the minimum.
    let bin_of = |v: T| -> usize { edges.partition_point(|&e| e < v).saturating_sub(1).min(k - 1) };
    let members: Vec<usize> = col.iter().map(|&v| bin_of(v)).collect();

    let effects: Vec<T> = match config.mode {
        AleMode::Gradient => {
            let d = batch_derivatives(model, x)?;
            let mut sum = vec![T::zero(); k];
            let mut cnt = vec![0usize; k];
            for (i, &b) in members.iter().enumerate() {
                sum[b] += d[i].gradient[j];
                cnt[b] += 1;
            }
            (0..k)
                .map(|b| {
                    let width = edges[b + 1] - edges[b];
                    if cnt[b] == 0 {
                        T::nan()
                    } else {
                        sum[b] / T::from_usize_lossy(cnt[b]) * width
                    }
                })
                .collect()
        }
        AleMode::FiniteDifference => {
            let mut upper = x.to_owned();
            let mut lower = x.to_owned();
            for (i, &b) in members.iter().enumerate() {
                upper[[i, j]] = edges[b + 1];
                lower[[i, j]] = edges[b];
            }
            let up = batch_canonical(model, upper.view())?;
            let dn = batch_canonical(model, lower.view())?;
            let mut sum = vec![T::zero(); k];
            let mut cnt = vec![0usize; k];
            for (i, &b) in members.iter().enumerate() {
                sum[b] += up[i] - dn[i];
                cnt[b] += 1;
            }
            (0..k)
                .map(|b| {
                    if cnt[b] == 0 {
                        T::nan()
                    } else {
                        sum[b] / T::from_usize_lossy(cnt[b])
                    }
                })
                .collect()
        }
    };

    // Empty bins are merged into their right neighbour.
    let mut points = vec![edges[0]];
    let mut values = vec![T::zero()];
    let mut acc = T::zero();
    let mut merged = 0usize;
    for b in 0..k {
        if effects[b].is_nan() {
            merged += 1;
            if b == k - 1 {
                points.push(edges[k]);
                values.push(acc);
            }
            continue;
        }
        acc += effects[b];
        points.push(edges[b + 1]);
        values.push(acc);
    }
    if merged > 0 {
        warnings.push(format!("{merged} empty ALE bin(s) merged with a neighbour"));
    }

    let shift = match config.anchor {
        None => T::zero(),
        Some(z) => {
            if !z.is_finite() {
                return Err(Error::arg("ALE anchor must be finite"));
            }
            if z < points[0] || z > points[points.len() - 1] {
                warnings.push("ALE anchor lies outside the binned range; value clamped".into());
            }
            interpolate(&points, &values, z)
        }
    };
    for v in &mut values {
        *v -= shift;
    }
    Ok(ProfileCurve {
        feature: j,
        method: ProfileMethod::Ale {
            mode: config.mode,
            bins: points.len() - 1,
        },
        points,
        values,
        warnings,
    })
}

const MU_CLAMP: f64 = 1e-12;

/// `−2 Σ [y log μ + (1 − y) log(1 − μ)]` with `μ` clamped away from 0 and 1.
pub fn bernoulli_deviance<T: Scalar>(y: &[T], mu: &[T]) -> T {
    let lo = T::lit(MU_CLAMP);
    let hi = T::one() - lo;
    let s: T = y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let m = m.max(lo).min(hi);
            y * m.ln() + (T::one() - y) * (T::one() - m).ln()
        })
        .sum();
    -T::two() * s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct PermutationImportance<T> {
    pub baseline_deviance: T,
    /// Mean deviance increase per feature.
    pub importance: Vec<T>,
    /// Deviance increase per feature and repetition.
    pub repetitions: Vec<Vec<T>>,
    pub seed: u64,
}

/// Deviance increase when one column at a time is shuffled. Feature `j` uses
/// ChaCha8 stream `j` of `seed`, so results do not depend on thread scheduling.
pub fn permutation_importance<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    y: &[T],
    repetitions: usize,
    seed: u64,
) -> Result<PermutationImportance<T>> {
    if y.len() != x.nrows() {
        return Err(Error::InputShape {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if repetitions == 0 {
        return Err(Error::arg("permutation importance needs at least one repetition"));
    }
    if y.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::arg("responses must lie in [0, 1]"));
    }
    let mean_of = |x: &Array2<T>| -> Result<Vec<T>> {
        Ok(batch_canonical(model, x.view())?.into_iter().map(sigmoid).collect())
    };
    let base = bernoulli_deviance(y, &mean_of(&x.to_owned())?);
    let q = x.ncols();
    let reps = (0..q)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let original: Vec<T> = x.column(j).to_vec();
            let mut xp = x.to_owned();
            (0..repetitions)
                .map(|_| {
                    let mut col = original.clone();
                    col.shuffle(&mut rng);
                    for (dst, v) in xp.column_mut(j).iter_mut().zip(col) {
                        *dst = v;
                    }
                    Ok(bernoulli_deviance(y, &mean_of(&xp)?) - base)
                })
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rf = T::from_usize_lossy(repetitions);
    Ok(PermutationImportance {
        baseline_deviance: base,
        importance: reps.iter().map(|r| r.iter().copied().sum::<T>() / rf).collect(),
        repetitions: reps,
        seed,
    })
}
