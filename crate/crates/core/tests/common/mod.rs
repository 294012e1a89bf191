//! Independent oracles shared by the integration tests. Nothing here calls
//! the smoother or the engine.
#![allow(dead_code)]

use std::collections::BTreeMap;

use macq::model::SmoothModel;
use ndarray::ArrayView2;

/// Central differences with `h = 1e-5 (1 + |x_j|)`.
pub fn fd_gradient<M: SmoothModel<f64>>(m: &M, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let h = 1e-5 * (1.0 + x[j].abs());
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[j] += h;
            q[j] -= h;
            (m.canonical_unchecked(&p) - m.canonical_unchecked(&q)) / (2.0 * h)
        })
        .collect()
}

/// Row-major Hessian from central differences of the analytic gradient.
pub fn fd_hessian<M: SmoothModel<f64>>(m: &M, x: &[f64]) -> Vec<f64> {
    let q = x.len();
    let mut out = vec![0.0; q * q];
    for k in 0..q {
        let h = 1e-5 * (1.0 + x[k].abs());
        let mut p = x.to_vec();
        let mut s = x.to_vec();
        p[k] += h;
        s[k] -= h;
        let gp = m.gradient_unchecked(&p);
        let gs = m.gradient_unchecked(&s);
        for j in 0..q {
            out[j * q + k] = (gp[j] - gs[j]) / (2.0 * h);
        }
    }
    out
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(floor, |m, y| m.max(y.abs()));
    num / den
}

/// The sample split into its distinct θ values, each with the rows that
/// produce it. Exact when the data consist of a few repeated points.
pub struct Atoms {
    pub values: Vec<f64>,
    pub rows: Vec<Vec<usize>>,
    pub n: usize,
}

impl Atoms {
    pub fn new(theta: &[f64]) -> Self {
        let mut map: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
        for (i, &t) in theta.iter().enumerate() {
            // Order-preserving key for finite doubles.
            let bits = t.to_bits();
            let key = if t >= 0.0 { bits | (1 << 63) } else { !bits };
            map.entry(key).or_insert((t, Vec::new())).1.push(i);
        }
        let (values, rows) = map.into_values().unzip();
        Self {
            values,
            rows,
            n: theta.len(),
        }
    }

    /// Index of the atom holding `inf{y : F(y) ≥ α}`.
    pub fn level(&self, alpha: f64) -> usize {
        let mut cum = 0usize;
        for (a, r) in self.rows.iter().enumerate() {
            cum += r.len();
            if cum as f64 >= alpha * self.n as f64 - 1e-9 {
                return a;
            }
        }
        self.rows.len() - 1
    }

    pub fn quantile(&self, alpha: f64) -> f64 {
        self.values[self.level(alpha)]
    }

    /// Plain average of `f(i)` over the conditioning atom of level `α`.
    pub fn conditional_mean(&self, alpha: f64, f: impl Fn(usize) -> f64) -> f64 {
        let rows = &self.rows[self.level(alpha)];
        rows.iter().map(|&i| f(i)).sum::<f64>() / rows.len() as f64
    }

    pub fn min_mass(&self) -> f64 {
        self.rows.iter().map(|r| r.len()).min().unwrap_or(0) as f64 / self.n as f64
    }
}

/// `θ` per row, evaluated directly.
pub fn thetas<M: SmoothModel<f64>>(m: &M, x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.rows().into_iter().map(|r| m.canonical_unchecked(&r.to_vec())).collect()
}

/// Generalized-inverse quantile by sorting, `⌈αn⌉`-th order statistic.
pub fn sorted_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((alpha * s.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    s[k - 1]
}
