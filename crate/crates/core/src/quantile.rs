//! Empirical quantiles, rank transforms and the local polynomial smoother
//! that estimates `E[Z | θ(X) = F^{-1}(α)]` on a grid of quantile levels.
//!
//! The smoother regresses per-instance quantities on the rank position
//! `rank(θ_i)/n` with tricube weights over the `ceil(span·n)` nearest ranks
//! and a local polynomial of degree at most two, evaluated at each level.
//! Because the fit is linear in the response, every level reduces to a fixed
//! weight vector (the equivalent kernel) that is computed once per sample and
//! reused for every smoothed quantity. Identities that hold per instance
//! therefore hold exactly for the smoothed curves.
//!
//! When the empirical quantile at a level is an atom holding at least as many
//! instances as the neighbourhood, the conditioning event has positive mass and
//! the conditional mean is the plain average over the atom.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SmootherConfig<T> {
    pub degree: usize,
    pub bandwidth_fraction: T,
}

impl<T: Scalar> Default for SmootherConfig<T> {
    fn default() -> Self {
        Self {
            degree: 2,
            bandwidth_fraction: T::lit(0.1),
        }
    }
}

impl<T: Scalar> SmootherConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.degree > 2 {
            return Err(Error::arg(format!("smoother degree {} not in 0..=2", self.degree)));
        }
        if !(self.bandwidth_fraction > T::zero() && self.bandwidth_fraction <= T::one()) {
            return Err(Error::arg(format!(
                "bandwidth fraction {} not in (0, 1]",
                self.bandwidth_fraction
            )));
        }
        Ok(())
    }

    /// Smallest sample the smoother accepts.
    pub fn min_sample(&self) -> usize {
        3 * (self.degree + 1)
    }

    /// Neighbourhood size `ceil(span · n)`.
    pub fn window(&self, n: usize) -> usize {
        let k = (self.bandwidth_fraction * T::from_usize_lossy(n)).ceil();
        k.to_usize().unwrap_or(n).clamp(1, n)
    }
}

/// Quantile levels `0 < α_1 < … < α_L < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct QuantileGrid<T> {
    levels: Vec<T>,
}

impl<T: Scalar> QuantileGrid<T> {
    pub fn new(levels: Vec<T>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::arg("quantile grid is empty"));
        }
        if levels.iter().any(|&a| !(a > T::zero() && a < T::one())) {
            return Err(Error::arg("quantile levels must lie in (0, 1)"));
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("quantile levels must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    /// `α_l = l/100` for `l = 1, …, 99`.
    pub fn percent() -> Self {
        Self::percent_range(1, 99).expect("valid default grid")
    }

    /// `α_l = l/100` for `lo ≤ l ≤ hi`.
    pub fn percent_range(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || hi >= 100 || lo > hi {
            return Err(Error::arg(format!("percent range {lo}:{hi} must satisfy 1 ≤ lo ≤ hi ≤ 99")));
        }
        Self::new((lo..=hi).map(|l| T::from_usize_lossy(l) / T::lit(100.0)).collect())
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Zero-based position of `F^{-1}(α) = inf{y : F(y) ≥ α}` in a sorted sample of size `n`.
pub fn quantile_position<T: Scalar>(n: usize, alpha: T) -> usize {
    let t = alpha * T::from_usize_lossy(n);
    let r = t.round();
    let tol = T::lit(64.0) * T::epsilon() * t.max(T::one());
    let count = if (t - r).abs() <= tol { r } else { t.ceil() };
    count.to_usize().unwrap_or(n).clamp(1, n) - 1
}

/// Generalized-inverse empirical quantile.
pub fn empirical_quantile<T: Scalar>(values: &[T], alpha: T) -> Result<T> {
    if values.is_empty() {
        return Err(Error::arg("empirical quantile of an empty sample"));
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::arg(format!("quantile level {alpha} not in (0, 1)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            what: "quantile sample".into(),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(sorted[quantile_position(values.len(), alpha)])
}

/// Indices sorting `values` ascending, ties broken by `keys` (row index by default).
pub fn rank_order<T: Scalar>(values: &[T], keys: Option<&[u64]>) -> Result<Vec<usize>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            what: "rank sample".into(),
        });
    }
    let key = |i: usize| keys.map_or(i as u64, |k| k[i]);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(Ordering::Equal)
            .then_with(|| key(a).cmp(&key(b)))
    });
    Ok(order)
}

/// `rank(v_i)/n` per instance, ties broken by row index.
pub fn rank_positions<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let order = rank_order(values, None)?;
    let nf = T::from_usize_lossy(values.len());
    let mut u = vec![T::zero(); values.len()];
    for (p, &i) in order.iter().enumerate() {
        u[i] = T::from_usize_lossy(p + 1) / nf;
    }
    Ok(u)
}

/// How a level's conditional expectation is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    LocalPolynomial,
    Atom,
}

/// Equivalent-kernel weights for every grid level of one `θ` sample.
#[derive(Debug, Clone)]
pub struct RankSmoother<T> {
    grid: QuantileGrid<T>,
    config: SmootherConfig<T>,
    quantiles: Vec<T>,
    ranks: Vec<T>,
    kinds: Vec<LevelKind>,
    weights: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> RankSmoother<T> {
    pub fn new(theta: &[T], grid: &QuantileGrid<T>, config: SmootherConfig<T>) -> Result<Self> {
        Self::with_tie_keys(theta, None, grid, config)
    }

    /// As [`RankSmoother::new`], breaking ties in `theta` by `keys` instead of row index.
    pub fn with_tie_keys(
        theta: &[T],
        keys: Option<&[u64]>,
        grid: &QuantileGrid<T>,
        config: SmootherConfig<T>,
    ) -> Result<Self> {
        config.validate()?;
        let n = theta.len();
        if n < config.min_sample() {
            return Err(Error::Smoothing {
                level: format!("{}", grid.levels()[0]),
                reason: format!(
                    "sample of {n} is below the minimum {} for a degree-{} smoother",
                    config.min_sample(),
                    config.degree
                ),
            });
        }
        if let Some(k) = keys {
            if k.len() != n {
                return Err(Error::InputShape {
                    expected: n,
                    found: k.len(),
                });
            }
        }
        let order = rank_order(theta, keys)?;
        let nf = T::from_usize_lossy(n);
        let sorted_u: Vec<T> = (1..=n).map(|p| T::from_usize_lossy(p) / nf).collect();
        let mut ranks = vec![T::zero(); n];
        for (p, &i) in order.iter().enumerate() {
            ranks[i] = sorted_u[p];
        }
        let k = config.window(n);

        let mut quantiles = Vec::with_capacity(grid.len());
        let mut kinds = Vec::with_capacity(grid.len());
        let mut weights = Vec::with_capacity(grid.len());
        for &alpha in grid.levels() {
            let qpos = quantile_position(n, alpha);
            let qval = theta[order[qpos]];
            quantiles.push(qval);

            // Extent of the atom holding the quantile.
            let mut lo = qpos;
            while lo > 0 && theta[order[lo - 1]] == qval {
                lo -= 1;
            }
            let mut hi = qpos + 1;
            while hi < n && theta[order[hi]] == qval {
                hi += 1;
            }
            if hi - lo >= k {
                let w = T::one() / T::from_usize_lossy(hi - lo);
                weights.push(order[lo..hi].iter().map(|&i| (i, w)).collect());
                kinds.push(LevelKind::Atom);
                continue;
            }

            let row = local_polynomial_kernel(&sorted_u, alpha, k, config.degree).map_err(|reason| {
                Error::Smoothing {
                    level: format!("{alpha}"),
                    reason,
                }
            })?;
            weights.push(row.into_iter().map(|(p, w)| (order[p], w)).collect());
            kinds.push(LevelKind::LocalPolynomial);
        }

        Ok(Self {
            grid: grid.clone(),
            config,
            quantiles,
            ranks,
            kinds,
            weights,
        })
    }

    pub fn grid(&self) -> &QuantileGrid<T> {
        &self.grid
    }

    pub fn config(&self) -> &SmootherConfig<T> {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.ranks.len()
    }

    /// `F̂^{-1}(α_l)` per level.
    pub fn quantiles(&self) -> &[T] {
        &self.quantiles
    }

    /// `rank(θ_i)/n` per instance.
    pub fn ranks(&self) -> &[T] {
        &self.ranks
    }

    pub fn level_kinds(&self) -> &[LevelKind] {
        &self.kinds
    }

    /// `(instance, weight)` pairs whose weighted sum gives the fit at level `l`.
    pub fn level_weights(&self, l: usize) -> &[(usize, T)] {
        &self.weights[l]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::InputShape {
                expected: self.n(),
                found: len,
            });
        }
        Ok(())
    }

    /// Smoothed conditional mean of `z` at every level.
    pub fn smooth(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len())?;
        Ok(self
            .weights
            .iter()
            .map(|row| row.iter().fold(T::zero(), |acc, &(i, w)| acc + w * z[i]))
            .collect())
    }

    /// Smooths `f(i)` evaluated lazily for each instance.
    pub fn smooth_with<F: Fn(usize) -> T>(&self, f: F) -> Vec<T> {
        self.weights
            .iter()
            .map(|row| row.iter().fold(T::zero(), |acc, &(i, w)| acc + w * f(i)))
            .collect()
    }

    /// `sqrt(max(0, smooth((z − m)²)))` with `m` the smoothed mean of the level.
    /// Equal to `smooth(z²) − smooth(z)²` since the weights sum to one, but
    /// without the cancellation.
    pub fn conditional_sd(&self, z: &[T]) -> Result<Vec<T>> {
        let means = self.smooth(z)?;
        Ok(means
            .iter()
            .enumerate()
            .map(|(l, &m)| {
                let var: T = self.weights[l].iter().map(|&(i, w)| w * (z[i] - m) * (z[i] - m)).sum();
                var.max(T::zero()).sqrt()
            })
            .collect())
    }
}

/// Fits `z` against `rank(θ)/n` and evaluates at every grid level.
pub fn conditional_mean_on_grid<T: Scalar>(
    z: &[T],
    theta: &[T],
    grid: &QuantileGrid<T>,
    config: SmootherConfig<T>,
) -> Result<Vec<T>> {
    if z.len() != theta.len() {
        return Err(Error::InputShape {
            expected: theta.len(),
            found: z.len(),
        });
    }
    RankSmoother::new(theta, grid, config)?.smooth(z)
}

/// Conditional standard deviation band of `z` on the grid.
pub fn conditional_sd_on_grid<T: Scalar>(
    z: &[T],
    theta: &[T],
    grid: &QuantileGrid<T>,
    config: SmootherConfig<T>,
) -> Result<Vec<T>> {
    if z.len() != theta.len() {
        return Err(Error::InputShape {
            expected: theta.len(),
            found: z.len(),
        });
    }
    RankSmoother::new(theta, grid, config)?.conditional_sd(z)
}

/// Equivalent kernel of a tricube-weighted local polynomial at `target`,
/// over the `k` sorted positions nearest to it. Returns `(position, weight)`.
fn local_polynomial_kernel<T: Scalar>(
    u: &[T],
    target: T,
    k: usize,
    degree: usize,
) -> std::result::Result<Vec<(usize, T)>, String> {
    let n = u.len();
    // Grow a contiguous window from the position nearest to the target.
    let centre = match u.binary_search_by(|v| v.partial_cmp(&target).unwrap_or(Ordering::Less)) {
        Ok(p) => p,
        Err(p) if p == 0 => 0,
        Err(p) if p >= n => n - 1,
        Err(p) => {
            if (target - u[p - 1]) <= (u[p] - target) {
                p - 1
            } else {
                p
            }
        }
    };
    let (mut lo, mut hi) = (centre, centre + 1);
    while hi - lo < k {
        let left = (lo > 0).then(|| target - u[lo - 1]);
        let right = (hi < n).then(|| u[hi] - target);
        match (left, right) {
            (Some(l), Some(r)) if l <= r => lo -= 1,
            (Some(_), Some(_)) => hi += 1,
            (Some(_), None) => lo -= 1,
            (None, Some(_)) => hi += 1,
            (None, None) => break,
        }
    }
    let h = (lo..hi).fold(T::zero(), |m, p| m.max((u[p] - target).abs()));
    if !(h > T::zero()) {
        return Err("neighbourhood has zero width".into());
    }

    let p = degree + 1;
    let mut rows: Vec<(usize, T, [T; 3])> = Vec::with_capacity(hi - lo);
    let mut total = T::zero();
    for pos in lo..hi {
        let t = (u[pos] - target) / h;
        let r = T::one() - t.abs().powi(3);
        let w = if r > T::zero() { r * r * r } else { T::zero() };
        if w > T::zero() {
            rows.push((pos, w, [T::one(), t, t * t]));
            total += w;
        }
    }
    if rows.len() < p {
        return Err(format!(
            "only {} distinct ranks carry weight, need {p} for degree {degree}",
            rows.len()
        ));
    }

    // Normal equations on the scaled local coordinate; ridge on the
    // non-intercept terms keeps constants reproduced exactly.
    let mut m = [[T::zero(); 3]; 3];
    for (_, w, x) in &mut rows {
        *w /= total;
        for a in 0..p {
            for b in 0..p {
                m[a][b] += *w * x[a] * x[b];
            }
        }
    }
    let ridge = T::lit(1e-10);
    for (a, row) in m.iter_mut().enumerate().take(p).skip(1) {
        row[a] += ridge;
    }
    let mut rhs = [T::zero(); 3];
    rhs[0] = T::one();
    let c = solve_small(m, rhs, p).ok_or_else(|| "singular local design".to_string())?;

    Ok(rows
        .into_iter()
        .map(|(pos, w, x)| {
            let proj = (0..p).fold(T::zero(), |acc, a| acc + c[a] * x[a]);
            (pos, w * proj)
        })
        .collect())
}

/// Gaussian elimination with partial pivoting on the leading `p × p` block.
fn solve_small<T: Scalar>(mut m: [[T; 3]; 3], mut b: [T; 3], p: usize) -> Option<[T; 3]> {
    for col in 0..p {
        let pivot = (col..p).max_by(|&r, &s| {
            m[r][col]
                .abs()
                .partial_cmp(&m[s][col].abs())
                .unwrap_or(Ordering::Equal)
        })?;
        if !(m[pivot][col].abs() > T::min_positive_value()) {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..p {
            let f = m[r][col] / m[col][col];
            for c in col..p {
                let v = m[col][c];
                m[r][c] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = [T::zero(); 3];
    for r in (0..p).rev() {
        let mut s = b[r];
        for c in r + 1..p {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inf_convention_quantiles() {
        let v = [5.0, 1.0, 3.0];
        assert_eq!(empirical_quantile(&v, 2.0 / 3.0).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&v, 0.99).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&v, 0.01).unwrap(), 1.0);
        assert!(empirical_quantile::<f64>(&[], 0.5).is_err());
        assert!(empirical_quantile(&v, 1.0).is_err());
    }

    #[test]
    fn quantile_position_is_robust_to_rounding() {
        // 2/3 · 3000 evaluates to 2000.0000000000002 in binary floating point.
        assert_eq!(quantile_position(3000, 2.0f64 / 3.0), 1999);
        assert_eq!(quantile_position(100, 0.29f64), 28);
        assert_eq!(quantile_position(100, 0.57f64), 56);
        assert_eq!(quantile_position(3, 0.99f32), 2);
    }

    #[test]
    fn ranks_are_a_permutation_with_index_ties() {
        let v = [2.0, 1.0, 2.0, 0.5];
        let u = rank_positions(&v).unwrap();
        assert_eq!(u, vec![0.75, 0.5, 1.0, 0.25]);
    }

    #[test]
    fn grid_validation() {
        assert!(QuantileGrid::new(vec![0.2, 0.1]).is_err());
        assert!(QuantileGrid::new(vec![0.0, 0.1]).is_err());
        let g = QuantileGrid::<f64>::percent();
        assert_eq!(g.len(), 99);
        assert_eq!(g.levels()[0], 0.01);
        let r = QuantileGrid::<f64>::percent_range(95, 99).unwrap();
        assert_eq!(r.levels(), &[0.95, 0.96, 0.97, 0.98, 0.99]);
        assert!(QuantileGrid::<f64>::percent_range(0, 5).is_err());
    }

    #[test]
    fn config_validation_and_small_samples() {
        let bad = SmootherConfig {
            degree: 3,
            bandwidth_fraction: 0.1,
        };
        assert!(bad.validate().is_err());
        let bad = SmootherConfig {
            degree: 2,
            bandwidth_fraction: 0.0,
        };
        assert!(bad.validate().is_err());
        let theta = [1.0, 2.0, 3.0];
        let g = QuantileGrid::percent();
        assert!(matches!(
            RankSmoother::new(&theta, &g, SmootherConfig::default()),
            Err(Error::Smoothing { .. })
        ));
    }

    #[test]
    fn narrow_window_is_a_smoothing_error() {
        let theta: Vec<f64> = (0..30).map(f64::from).collect();
        let cfg = SmootherConfig {
            degree: 2,
            bandwidth_fraction: 0.05,
        };
        assert!(matches!(
            RankSmoother::new(&theta, &QuantileGrid::percent(), cfg),
            Err(Error::Smoothing { .. })
        ));
    }

    #[test]
    fn constant_and_quadratic_reproduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 997;
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let grid = QuantileGrid::percent();
        let sm = RankSmoother::new(&theta, &grid, SmootherConfig::default()).unwrap();
        let c = sm.smooth(&vec![4.25; n]).unwrap();
        assert!(c.iter().all(|&v| (v - 4.25).abs() < 1e-12));

        let f = |u: f64| 0.3 - 2.0 * u + 5.0 * u * u;
        let z: Vec<f64> = sm.ranks().iter().map(|&u| f(u)).collect();
        let fit = sm.smooth(&z).unwrap();
        for (&a, &v) in grid.levels().iter().zip(&fit) {
            assert!((v - f(a)).abs() < 1e-9, "level {a}: {v} vs {}", f(a));
        }
        let sd = sm.conditional_sd(&vec![1.0; n]).unwrap();
        assert!(sd.iter().all(|&s| s < 1e-12));
    }

    #[test]
    fn atoms_are_averaged_exactly() {
        // Three atoms of equal mass; each level sits on one atom.
        let theta: Vec<f64> = (0..300).map(|i| [1.0, 3.0, 5.0][i % 3]).collect();
        let z: Vec<f64> = (0..300).map(|i| (i % 3) as f64 * 10.0 + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let grid = QuantileGrid::new(vec![0.2, 2.0 / 3.0, 0.9]).unwrap();
        let sm = RankSmoother::new(&theta, &grid, SmootherConfig::default()).unwrap();
        assert_eq!(sm.quantiles(), &[1.0, 3.0, 5.0]);
        assert!(sm.level_kinds().iter().all(|&k| k == LevelKind::Atom));
        let m = sm.smooth(&z).unwrap();
        for (l, want) in [0.0, 10.0, 20.0].iter().enumerate() {
            assert!((m[l] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn custom_tie_keys_change_only_the_ordering_key() {
        let theta = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0];
        let grid = QuantileGrid::new(vec![0.3, 0.5, 0.7]).unwrap();
        let cfg = SmootherConfig {
            degree: 1,
            bandwidth_fraction: 0.5,
        };
        let keys: Vec<u64> = (0..10).rev().collect();
        let a = RankSmoother::new(&theta, &grid, cfg).unwrap();
        let b = RankSmoother::with_tie_keys(&theta, Some(&keys), &grid, cfg).unwrap();
        assert_eq!(a.quantiles(), b.quantiles());
        assert_ne!(a.ranks(), b.ranks());
    }
}
