//! Choosing the reference point `a` so that the second order expansion tracks
//! the empirical quantile function.
//!
//! With smoothing weights `w_li` at level `l`,
//!
//! ```text
//! r_l(a) = F_l − θ(a) + aᵀEg_l − EXg_l + ½ (aᵀ EH_l a − 2 aᵀ EHX_l + EXHX_l)
//! G(a)   = Σ_l r_l(a)²
//! ∇G(a)  = 2 Σ_l r_l(a) (−∇θ(a) + Eg_l + EH_l a − EHX_l)
//! ```
//!
//! where `Eg_l = Σ_i w_li ∇θ(x_i)`, `EXg_l = Σ_i w_li x_iᵀ∇θ(x_i)`,
//! `EH_l = Σ_i w_li ∇²θ(x_i)`, `EHX_l = Σ_i w_li ∇²θ(x_i) x_i` and
//! `EXHX_l = Σ_i w_li x_iᵀ∇²θ(x_i) x_i`. These do not depend on `a` and are
//! computed once. `r_l(a)` equals `F_l − C22_l(a)`.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::MacqSample;
use crate::error::{Error, Result};
use crate::model::SmoothModel;
use crate::quantile::{QuantileGrid, SmootherConfig};
use crate::scalar::{all_finite, dot, norm, Scalar};

/// Smoothed, reference-independent pieces of `G`, one entry per level.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectivePrecompute<T> {
    q: usize,
    quantiles: Vec<T>,
    eg: Vec<Vec<T>>,
    exg: Vec<T>,
    eh: Vec<Vec<T>>,
    ehx: Vec<Vec<T>>,
    exhx: Vec<T>,
}

impl<T: Scalar> ObjectivePrecompute<T> {
    pub fn new(sample: &MacqSample<T>) -> Self {
        let q = sample.q();
        let x = sample.features();
        let derivs = sample.derivatives();
        let sm = sample.smoother();
        let per_level: Vec<_> = (0..sm.grid().len())
            .into_par_iter()
            .map(|l| {
                let mut eg = vec![T::zero(); q];
                let mut exg = T::zero();
                let mut eh = vec![T::zero(); q * q];
                let mut ehx = vec![T::zero(); q];
                let mut exhx = T::zero();
                let mut hx = vec![T::zero(); q];
                for &(i, w) in sm.level_weights(l) {
                    let xi = x.row(i);
                    let d = &derivs[i];
                    for j in 0..q {
                        eg[j] += w * d.gradient[j];
                        exg += w * (xi[j] * d.gradient[j]);
                        let mut acc = T::zero();
                        for k in 0..q {
                            let h = d.hessian[j * q + k];
                            eh[j * q + k] += w * h;
                            acc += h * xi[k];
                        }
                        hx[j] = acc;
                    }
                    for j in 0..q {
                        ehx[j] += w * hx[j];
                        exhx += w * (xi[j] * hx[j]);
                    }
                }
                (eg, exg, eh, ehx, exhx)
            })
            .collect();
        let mut out = Self {
            q,
            quantiles: sm.quantiles().to_vec(),
            eg: Vec::new(),
            exg: Vec::new(),
            eh: Vec::new(),
            ehx: Vec::new(),
            exhx: Vec::new(),
        };
        for (eg, exg, eh, ehx, exhx) in per_level {
            out.eg.push(eg);
            out.exg.push(exg);
            out.eh.push(eh);
            out.ehx.push(ehx);
            out.exhx.push(exhx);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn levels(&self) -> usize {
        self.quantiles.len()
    }

    fn check(&self, a: &[T]) -> Result<()> {
        if a.len() != self.q {
            return Err(Error::InputShape {
                expected: self.q,
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

    /// `r_l(a)` for every level, given `θ(a)`.
    pub fn residuals(&self, a: &[T], theta_a: T) -> Result<Vec<T>> {
        self.check(a)?;
        Ok((0..self.levels()).map(|l| self.residual(l, a, theta_a)).collect())
    }

    fn residual(&self, l: usize, a: &[T], theta_a: T) -> T {
        let q = self.q;
        let eh = &self.eh[l];
        let mut quad = T::zero();
        for j in 0..q {
            let mut row = T::zero();
            for k in 0..q {
                row += eh[j * q + k] * a[k];
            }
            quad += a[j] * row;
        }
        let cross = dot(a, &self.ehx[l]);
        self.quantiles[l] - theta_a + dot(a, &self.eg[l]) - self.exg[l]
            + T::half() * (quad - T::two() * cross + self.exhx[l])
    }

    pub fn value<M: SmoothModel<T> + ?Sized>(&self, model: &M, a: &[T]) -> Result<T> {
        let theta_a = model.evaluate_canonical(a)?;
        let r = self.residuals(a, theta_a)?;
        Ok(r.iter().map(|&v| v * v).sum())
    }

    /// `(G(a), ∇G(a))`.
    pub fn value_and_gradient<M: SmoothModel<T> + ?Sized>(&self, model: &M, a: &[T]) -> Result<(T, Vec<T>)> {
        self.check(a)?;
        model.check_input(a)?;
        let d = model.derivatives_unchecked(a);
        let q = self.q;
        let mut g_total = vec![T::zero(); q];
        let mut value = T::zero();
        for l in 0..self.levels() {
            let r = self.residual(l, a, d.value);
            value += r * r;
            let eh = &self.eh[l];
            for j in 0..q {
                let mut eha = T::zero();
                for k in 0..q {
                    eha += eh[j * q + k] * a[k];
                }
                let term = -d.gradient[j] + self.eg[l][j] + eha - self.ehx[l][j];
                g_total[j] += T::two() * r * term;
            }
        }
        Ok((value, g_total))
    }
}

pub fn objective_g<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    a: &[T],
    grid: &QuantileGrid<T>,
    smoother: SmootherConfig<T>,
) -> Result<T> {
    let sample = MacqSample::new(model, x, grid, smoother)?;
    ObjectivePrecompute::new(&sample).value(model, a)
}

pub fn gradient_g<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    a: &[T],
    grid: &QuantileGrid<T>,
    smoother: SmootherConfig<T>,
) -> Result<Vec<T>> {
    let sample = MacqSample::new(model, x, grid, smoother)?;
    Ok(ObjectivePrecompute::new(&sample).value_and_gradient(model, a)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct RefOptConfig<T> {
    pub steps: usize,
    /// Length of every step: `ε = learning_rate / ‖∇G‖`.
    pub learning_rate: T,
    pub gradient_tolerance: T,
    /// Halve the step while `G` increases.
    pub backtracking: bool,
    pub max_halvings: usize,
    /// Keep a copy of `a` every this many iterations (0 disables).
    pub snapshot_every: usize,
}

impl<T: Scalar> Default for RefOptConfig<T> {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: T::lit(1e-2),
            gradient_tolerance: T::lit(1e-10),
            backtracking: false,
            max_halvings: 30,
            snapshot_every: 25,
        }
    }
}

impl<T: Scalar> RefOptConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("refopt needs at least one step"));
        }
        if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
            return Err(Error::arg("refopt learning rate must be positive"));
        }
        if !(self.gradient_tolerance >= T::zero()) {
            return Err(Error::arg("gradient tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchStatus {
    /// Used the whole step budget.
    BudgetExhausted,
    /// `‖∇G‖` fell below the tolerance.
    Converged,
    /// `G` or its gradient became non-finite at this iteration.
    Aborted { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct TraceEntry<T> {
    pub iteration: usize,
    pub objective: T,
    pub gradient_norm: T,
    /// Step length that produced this iterate (0 for the start).
    pub step: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Snapshot<T> {
    pub iteration: usize,
    pub point: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ReferenceSearchState<T> {
    pub start: Vec<T>,
    pub current: Vec<T>,
    pub iteration: usize,
    pub best_point: Vec<T>,
    pub best_objective: T,
    pub best_iteration: usize,
    pub status: SearchStatus,
    /// `G` at `a⁽⁰⁾, …, a⁽ᵗ⁾`.
    pub trace: Vec<TraceEntry<T>>,
    pub snapshots: Vec<Snapshot<T>>,
}

impl<T: Scalar> ReferenceSearchState<T> {
    /// Running minimum of the objective trace.
    pub fn best_trace(&self) -> Vec<T> {
        let mut best = T::infinity();
        self.trace
            .iter()
            .map(|e| {
                best = best.min(e.objective);
                best
            })
            .collect()
    }

    pub fn initial_objective(&self) -> T {
        self.trace[0].objective
    }
}

/// Normalized gradient descent on `G` from `a0`; reports the best point seen.
pub fn optimize_reference<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    objective: &ObjectivePrecompute<T>,
    a0: &[T],
    config: &RefOptConfig<T>,
) -> Result<ReferenceSearchState<T>> {
    config.validate()?;
    let (g0, grad0) = objective.value_and_gradient(model, a0)?;
    if !g0.is_finite() || !all_finite(&grad0) {
        return Err(Error::Domain {
            what: "objective at the starting point".into(),
        });
    }
    let mut state = ReferenceSearchState {
        start: a0.to_vec(),
        current: a0.to_vec(),
        iteration: 0,
        best_point: a0.to_vec(),
        best_objective: g0,
        best_iteration: 0,
        status: SearchStatus::BudgetExhausted,
        trace: vec![TraceEntry {
            iteration: 0,
            objective: g0,
            gradient_norm: norm(&grad0),
            step: T::zero(),
        }],
        snapshots: vec![Snapshot {
            iteration: 0,
            point: a0.to_vec(),
        }],
    };
    let mut value = g0;
    let mut grad = grad0;
    for t in 1..=config.steps {
        let gnorm = norm(&grad);
        if gnorm < config.gradient_tolerance || gnorm == T::zero() {
            state.status = SearchStatus::Converged;
            break;
        }
        let mut step = config.learning_rate / gnorm;
        let mut candidate: Vec<T> = state.current.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect();
        let mut evaluated = objective.value_and_gradient(model, &candidate);
        if config.backtracking {
            let mut halvings = 0;
            while halvings < config.max_halvings {
                match &evaluated {
                    Ok((v, _)) if v.is_finite() && *v <= value => break,
                    _ => {}
                }
                step *= T::half();
                candidate = state.current.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect();
                evaluated = objective.value_and_gradient(model, &candidate);
                halvings += 1;
            }
        }
        let (v, g) = match evaluated {
            Ok((v, g)) if v.is_finite() && all_finite(&g) => (v, g),
            Ok(_) | Err(Error::Domain { .. }) => {
                state.status = SearchStatus::Aborted { iteration: t };
                break;
            }
            Err(e) => return Err(e),
        };
        state.current = candidate;
        state.iteration = t;
        value = v;
        grad = g;
        state.trace.push(TraceEntry {
            iteration: t,
            objective: v,
            gradient_norm: norm(&grad),
            step: step * gnorm,
        });
        if v < state.best_objective {
            state.best_objective = v;
            state.best_point = state.current.clone();
            state.best_iteration = t;
        }
        if config.snapshot_every > 0 && t % config.snapshot_every == 0 {
            state.snapshots.push(Snapshot {
                iteration: t,
                point: state.current.clone(),
            });
        }
    }
    Ok(state)
}

/// Convenience wrapper building the precomputation from a sample.
pub fn optimize_reference_on<T: Scalar, M: SmoothModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<'_, T>,
    a0: &[T],
    grid: &QuantileGrid<T>,
    smoother: SmootherConfig<T>,
    config: &RefOptConfig<T>,
) -> Result<ReferenceSearchState<T>> {
    let sample = MacqSample::new(model, x, grid, smoother)?;
    optimize_reference(model, &ObjectivePrecompute::new(&sample), a0, config)
}
