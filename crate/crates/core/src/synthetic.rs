//! Seeded synthetic datasets paired with the exact model that generated them.
//!
//! Features are used as model inputs directly (identity standardization).
//! Responses are Bernoulli draws with mean `sigmoid(θ(x))`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{AdditiveTanhModel, Derivatives, LinearModel, MlpModel, QuadraticModel, SmoothModel};
use crate::scalar::{sigmoid, Scalar};

pub const GENERATORS: [&str; 11] = [
    "linear-3atom",
    "quadratic-4atom",
    "linear-atoms",
    "linear-gaussian",
    "additive-tanh",
    "planted-interaction",
    "planted-gaussian",
    "product",
    "dominant",
    "separable",
    "bike-like",
];

/// Coefficients of the five-feature linear fixtures.
pub const LINEAR_BETA: [f64; 5] = [1.0, -0.5, 2.0, 0.25, -1.5];
pub const LINEAR_INTERCEPT: f64 = 0.3;

/// Interaction strength of the planted model `x₁ + x₂ + γ x₁x₂`.
pub const PLANTED_GAMMA: f64 = 3.0;

const BIKE_LIKE_GAIN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticModel<T> {
    Linear(LinearModel<T>),
    Quadratic(QuadraticModel<T>),
    AdditiveTanh(AdditiveTanhModel<T>),
    Network(MlpModel<T>),
}

impl<T: Scalar> SmoothModel<T> for SyntheticModel<T> {
    fn input_dim(&self) -> usize {
        match self {
            Self::Linear(m) => m.input_dim(),
            Self::Quadratic(m) => m.input_dim(),
            Self::AdditiveTanh(m) => m.input_dim(),
            Self::Network(m) => m.input_dim(),
        }
    }

    fn canonical_unchecked(&self, x: &[T]) -> T {
        match self {
            Self::Linear(m) => m.canonical_unchecked(x),
            Self::Quadratic(m) => m.canonical_unchecked(x),
            Self::AdditiveTanh(m) => m.canonical_unchecked(x),
            Self::Network(m) => m.canonical_unchecked(x),
        }
    }

    fn gradient_unchecked(&self, x: &[T]) -> Vec<T> {
        match self {
            Self::Linear(m) => m.gradient_unchecked(x),
            Self::Quadratic(m) => m.gradient_unchecked(x),
            Self::AdditiveTanh(m) => m.gradient_unchecked(x),
            Self::Network(m) => m.gradient_unchecked(x),
        }
    }

    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T> {
        match self {
            Self::Linear(m) => m.derivatives_unchecked(x),
            Self::Quadratic(m) => m.derivatives_unchecked(x),
            Self::AdditiveTanh(m) => m.derivatives_unchecked(x),
            Self::Network(m) => m.derivatives_unchecked(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase<T> {
    pub name: String,
    pub dataset: Dataset<T>,
    pub model: SyntheticModel<T>,
}

fn names(q: usize) -> Vec<String> {
    (1..=q).map(|j| format!("x{j}")).collect()
}

fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, q: usize) -> Array2<T> {
    Array2::from_shape_simple_fn((n, q), || T::lit(rng.sample::<f64, _>(StandardNormal)))
}

fn lits<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// Builds the named fixture with `n` rows.
pub fn generate<T: Scalar>(name: &str, n: usize, seed: u64) -> Result<SyntheticCase<T>> {
    if n == 0 {
        return Err(Error::arg("synthetic sample size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, model): (Array2<T>, SyntheticModel<T>) = match name {
        "linear-3atom" => (
            Array2::from_shape_fn((n, 1), |(i, _)| T::from_usize_lossy(i % 3)),
            SyntheticModel::Linear(LinearModel::new(T::one(), vec![T::two()])?),
        ),
        "quadratic-4atom" => (
            Array2::from_shape_fn((n, 1), |(i, _)| T::lit([-2.0, -1.0, 1.0, 2.0][i % 4])),
            SyntheticModel::Quadratic(QuadraticModel::squared_norm(1)?),
        ),
        "linear-atoms" => {
            // Eight prototype rows, each carrying exactly 1/8 of the sample.
            let protos: Array2<T> = gaussian(&mut rng, 8, 5);
            (
                Array2::from_shape_fn((n, 5), |(i, j)| protos[[i % 8, j]]),
                SyntheticModel::Linear(LinearModel::new(T::lit(LINEAR_INTERCEPT), lits(&LINEAR_BETA))?),
            )
        }
        "linear-gaussian" => (
            gaussian(&mut rng, n, 5),
            SyntheticModel::Linear(LinearModel::new(T::lit(LINEAR_INTERCEPT), lits(&LINEAR_BETA))?),
        ),
        "additive-tanh" => (
            gaussian(&mut rng, n, 4),
            SyntheticModel::AdditiveTanh(AdditiveTanhModel::new(
                T::lit(-0.5),
                lits(&[1.5, -1.0, 0.8, 2.0]),
                lits(&[1.0, 0.7, 1.3, 0.5]),
            )?),
        ),
        "planted-interaction" => {
            // Three equally likely levels with unit variance.
            let s = 1.5f64.sqrt();
            let levels = [-s, 0.0, s];
            (
                Array2::from_shape_simple_fn((n, 2), || T::lit(levels[rng.random_range(0..3)])),
                SyntheticModel::Quadratic(QuadraticModel::planted_interaction(T::lit(PLANTED_GAMMA))?),
            )
        }
        "planted-gaussian" => (
            gaussian(&mut rng, n, 2),
            SyntheticModel::Quadratic(QuadraticModel::planted_interaction(T::lit(PLANTED_GAMMA))?),
        ),
        "product" => (
            gaussian(&mut rng, n, 2),
            SyntheticModel::Quadratic(QuadraticModel::new(
                T::zero(),
                vec![T::zero(); 2],
                lits(&[0.0, 0.5, 0.5, 0.0]),
            )?),
        ),
        "dominant" => (
            gaussian(&mut rng, n, 3),
            SyntheticModel::Linear(LinearModel::new(T::zero(), lits(&[5.0, 0.1, 0.0]))?),
        ),
        "separable" => (
            gaussian(&mut rng, n, 2),
            SyntheticModel::Linear(LinearModel::new(T::zero(), lits(&[4.0, -2.0]))?),
        ),
        "bike-like" => bike_like(&mut rng, n)?,
        other => {
            return Err(Error::arg(format!(
                "unknown synthetic generator `{other}` (known: {})",
                GENERATORS.join(", ")
            )))
        }
    };
    let theta: Vec<T> = x.rows().into_iter().map(|r| model.canonical_unchecked(&r.to_vec())).collect();
    let y: Vec<T> = theta
        .iter()
        .map(|&t| {
            let p = sigmoid(t).to_f64_lossy();
            if rng.random::<f64>() < p {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    let q = x.ncols();
    Ok(SyntheticCase {
        name: name.to_string(),
        dataset: Dataset::unscaled(names(q), x, y)?,
        model,
    })
}

/// Hour-of-day style cyclic feature, a binary day type, temperature and
/// humidity, fed through a small fixed tanh network.
fn bike_like<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Result<(Array2<T>, SyntheticModel<T>)> {
    let mut x = Array2::zeros((n, 4));
    for i in 0..n {
        let hour = rng.random_range(0..24) as f64;
        let workday = if rng.random::<f64>() < 0.7 { 1.0 } else { 0.0 };
        let temp: f64 = rng.sample(StandardNormal);
        let hum: f64 = 0.5 * temp + 0.85 * rng.sample::<f64, _>(StandardNormal);
        x[[i, 0]] = T::lit((hour - 11.5) / 6.92);
        x[[i, 1]] = T::lit((workday - 0.7) / 0.458);
        x[[i, 2]] = T::lit(temp);
        x[[i, 3]] = T::lit(hum);
    }
    let mut net = MlpModel::random(4, &[8, 6], 7)?;
    for layer in net.layers_mut() {
        layer.weights.iter_mut().for_each(|w| *w *= T::lit(BIKE_LIKE_GAIN));
    }
    let readout = net.readout_mut();
    readout.intercept = T::lit(-1.5);
    readout.coefficients.iter_mut().for_each(|w| *w *= T::lit(3.0));
    Ok((x, SyntheticModel::Network(net)))
}
