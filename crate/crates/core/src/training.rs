//! Fitting a tanh network to a `[0, 1]` response under Bernoulli deviance.
//!
//! Mini-batch gradient descent with momentum, a seeded shuffle split into
//! training and validation rows, and early stopping on validation deviance.
//! Everything runs sequentially, so a fixed seed gives bit-identical weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{MlpModel, DEFAULT_HIDDEN};
use crate::scalar::{dot, sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 200,
            validation_fraction: 0.2,
            patience: 20,
            batch_size: 128,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::arg("hidden layer widths must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::arg("validation fraction must lie in (0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::arg("patience must be at least 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("learning rate must be positive and momentum in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean per-row deviance after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct TrainingHistory<T> {
    pub train_deviance: Vec<T>,
    pub validation_deviance: Vec<T>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub train_rows: usize,
    pub validation_rows: usize,
}

impl<T: Scalar> TrainingHistory<T> {
    pub fn best_validation(&self) -> T {
        self.validation_deviance[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub model: MlpModel<T>,
    pub history: TrainingHistory<T>,
}

/// `−2 [y log μ + (1 − y) log(1 − μ)]` evaluated from `θ` without forming `μ`.
fn row_deviance<T: Scalar>(theta: T, y: T) -> T {
    let softplus = |t: T| if t > T::zero() { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    T::two() * (y * softplus(-theta) + (T::one() - y) * softplus(theta))
}

/// Mean deviance of the best constant predictor `μ = mean(y)`.
pub fn constant_deviance<T: Scalar>(y: &[T]) -> T {
    let nf = T::from_usize_lossy(y.len());
    let m = y.iter().copied().sum::<T>() / nf;
    let theta = (m / (T::one() - m)).ln();
    y.iter().map(|&v| row_deviance(theta, v)).sum::<T>() / nf
}

pub fn mean_deviance<T: Scalar>(model: &MlpModel<T>, dataset: &Dataset<T>, rows: &[usize]) -> T {
    let x = &dataset.features;
    let total: T = rows
        .iter()
        .map(|&i| {
            let xi = x.row(i).to_vec();
            row_deviance(forward(model, &xi), dataset.response[i])
        })
        .sum();
    total / T::from_usize_lossy(rows.len().max(1))
}

fn forward<T: Scalar>(model: &MlpModel<T>, x: &[T]) -> T {
    let trace = model.forward_trace(x);
    let r = model.readout();
    r.intercept + dot(&r.coefficients, trace.last().expect("non-empty trace"))
}

/// Flat parameter-shaped buffer (gradients or velocities).
#[derive(Clone)]
struct Params<T> {
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    readout: Vec<T>,
    intercept: T,
}

impl<T: Scalar> Params<T> {
    fn zeros_like(model: &MlpModel<T>) -> Self {
        Self {
            weights: model.layers().iter().map(|l| vec![T::zero(); l.weights().len()]).collect(),
            biases: model.layers().iter().map(|l| vec![T::zero(); l.bias().len()]).collect(),
            readout: vec![T::zero(); model.readout().coefficients.len()],
            intercept: T::zero(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().flatten().for_each(|v| *v = T::zero());
        self.biases.iter_mut().flatten().for_each(|v| *v = T::zero());
        self.readout.iter_mut().for_each(|v| *v = T::zero());
        self.intercept = T::zero();
    }
}

/// Adds `∂ deviance / ∂ parameters` for one row; returns the row deviance.
fn accumulate<T: Scalar>(model: &MlpModel<T>, x: &[T], y: T, grad: &mut Params<T>) -> T {
    let trace = model.forward_trace(x);
    let r = model.readout();
    let top = trace.last().expect("non-empty trace");
    let theta = r.intercept + dot(&r.coefficients, top);
    let g = T::two() * (sigmoid(theta) - y);
    grad.intercept += g;
    for (acc, &z) in grad.readout.iter_mut().zip(top) {
        *acc += g * z;
    }
    let mut upstream: Vec<T> = r.coefficients.iter().map(|&b| g * b).collect();
    for (k, layer) in model.layers().iter().enumerate().rev() {
        let z_in = &trace[k];
        let z_out = &trace[k + 1];
        let n_in = layer.in_dim();
        let mut next = vec![T::zero(); n_in];
        for m in 0..layer.out_dim() {
            let delta = upstream[m] * layer.activation().slopes(z_out[m]).0;
            grad.biases[k][m] += delta;
            let row = &layer.weights()[m * n_in..(m + 1) * n_in];
            let gw = &mut grad.weights[k][m * n_in..(m + 1) * n_in];
            for i in 0..n_in {
                gw[i] += delta * z_in[i];
                next[i] += delta * row[i];
            }
        }
        upstream = next;
    }
    row_deviance(theta, y)
}

fn apply_step<T: Scalar>(model: &mut MlpModel<T>, grad: &Params<T>, vel: &mut Params<T>, lr: T, mu: T) {
    let update = |p: &mut T, v: &mut T, g: T| {
        *v = mu * *v - lr * g;
        *p += *v;
    };
    for (k, layer) in model.layers_mut().iter_mut().enumerate() {
        for ((p, v), &g) in layer.weights.iter_mut().zip(&mut vel.weights[k]).zip(&grad.weights[k]) {
            update(p, v, g);
        }
        for ((p, v), &g) in layer.bias.iter_mut().zip(&mut vel.biases[k]).zip(&grad.biases[k]) {
            update(p, v, g);
        }
    }
    let readout = model.readout_mut();
    for ((p, v), &g) in readout.coefficients.iter_mut().zip(&mut vel.readout).zip(&grad.readout) {
        update(p, v, g);
    }
    update(&mut readout.intercept, &mut vel.intercept, grad.intercept);
}

/// Shuffled split: the first `⌈fraction · n⌉` rows of the permutation validate.
pub fn split_rows(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_val = ((fraction * n as f64).ceil() as usize).max(1);
    if n_val >= n {
        return Err(Error::arg(format!("{n} rows are too few for a training/validation split")));
    }
    let train = idx.split_off(n_val);
    Ok((train, idx))
}

pub fn fit_network<T: Scalar>(dataset: &Dataset<T>, config: &FitConfig) -> Result<FitResult<T>> {
    config.validate()?;
    if !dataset.has_response() {
        return Err(Error::arg("training needs a response column"));
    }
    let (train, val) = split_rows(dataset.n(), config.validation_fraction, config.seed)?;
    let mut model = MlpModel::random(dataset.q(), &config.hidden, config.seed)?;
    // Start the output at the training log-odds.
    let ybar = train.iter().map(|&i| dataset.response[i]).sum::<T>() / T::from_usize_lossy(train.len());
    let eps = T::lit(1e-6);
    let ybar = ybar.max(eps).min(T::one() - eps);
    model.readout_mut().intercept = (ybar / (T::one() - ybar)).ln();

    let lr = T::lit(config.learning_rate);
    let mu = T::lit(config.momentum);
    let mut grad = Params::zeros_like(&model);
    let mut vel = Params::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order = train.clone();

    let mut history = TrainingHistory {
        train_deviance: Vec::new(),
        validation_deviance: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
        stopped_early: false,
        train_rows: train.len(),
        validation_rows: val.len(),
    };
    let mut best = model.clone();
    let mut best_val = T::infinity();
    let mut since_best = 0;
    let mut xi = vec![T::zero(); dataset.q()];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.clear();
            for &i in batch {
                for (dst, &v) in xi.iter_mut().zip(dataset.features.row(i)) {
                    *dst = v;
                }
                accumulate(&model, &xi, dataset.response[i], &mut grad);
            }
            let scale = T::one() / T::from_usize_lossy(batch.len());
            let mut scaled = grad.clone();
            scaled.weights.iter_mut().flatten().for_each(|g| *g *= scale);
            scaled.biases.iter_mut().flatten().for_each(|g| *g *= scale);
            scaled.readout.iter_mut().for_each(|g| *g *= scale);
            scaled.intercept *= scale;
            apply_step(&mut model, &scaled, &mut vel, lr, mu);
        }
        let tr = mean_deviance(&model, dataset, &train);
        let va = mean_deviance(&model, dataset, &val);
        if !tr.is_finite() || !va.is_finite() {
            return Err(Error::Training { epoch });
        }
        history.train_deviance.push(tr);
        history.validation_deviance.push(va);
        history.epochs_run = epoch;
        if va < best_val {
            best_val = va;
            best = model.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    Ok(FitResult { model: best, history })
}
