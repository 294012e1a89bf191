//! Smooth regression models with analytic first and second derivatives.
//!
//! Every model exposes the canonical (pre-sigmoid) output `θ(x)`; the mean
//! response is `σ(θ(x))`. Only twice continuously differentiable building
//! blocks are representable: affine maps and `tanh` layers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, sigmoid, Scalar};

/// Value, gradient and dense row-major Hessian of `θ` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: Vec<T>,
}

impl<T: Scalar> Derivatives<T> {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    #[inline]
    pub fn h(&self, j: usize, k: usize) -> T {
        self.hessian[j * self.gradient.len() + k]
    }
}

/// Contract for models the attribution engine can explain.
///
/// Implementors provide unchecked evaluation; the checked entry points
/// (`evaluate_canonical`, `evaluate_mean`) validate shape and finiteness.
pub trait SmoothModel<T: Scalar>: Send + Sync {
    fn input_dim(&self) -> usize;

    fn canonical_unchecked(&self, x: &[T]) -> T;

    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T>;

    fn gradient_unchecked(&self, x: &[T]) -> Vec<T> {
        self.derivatives_unchecked(x).gradient
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if !all_finite(x) {
            return Err(Error::Domain {
                what: "model input".into(),
            });
        }
        Ok(())
    }

    /// `θ(x)` on the canonical scale.
    fn evaluate_canonical(&self, x: &[T]) -> Result<T> {
        self.check_input(x)?;
        Ok(self.canonical_unchecked(x))
    }

    /// `μ(x) = σ(θ(x))`.
    fn evaluate_mean(&self, x: &[T]) -> Result<T> {
        self.evaluate_canonical(x).map(sigmoid)
    }
}

impl<T: Scalar, M: SmoothModel<T> + ?Sized> SmoothModel<T> for &M {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn canonical_unchecked(&self, x: &[T]) -> T {
        (**self).canonical_unchecked(x)
    }
    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T> {
        (**self).derivatives_unchecked(x)
    }
    fn gradient_unchecked(&self, x: &[T]) -> Vec<T> {
        (**self).gradient_unchecked(x)
    }
}

impl<T: Scalar, M: SmoothModel<T> + ?Sized> SmoothModel<T> for Box<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn canonical_unchecked(&self, x: &[T]) -> T {
        (**self).canonical_unchecked(x)
    }
    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T> {
        (**self).derivatives_unchecked(x)
    }
    fn gradient_unchecked(&self, x: &[T]) -> Vec<T> {
        (**self).gradient_unchecked(x)
    }
}

// ---------------------------------------------------------------------------
// Linear

/// `θ(x) = β_0 + βᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub intercept: T,
    pub coefficients: Vec<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(intercept: T, coefficients: Vec<T>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Model("linear model needs at least one feature".into()));
        }
        if !intercept.is_finite() || !all_finite(&coefficients) {
            return Err(Error::Model("non-finite linear coefficient".into()));
        }
        Ok(Self {
            intercept,
            coefficients,
        })
    }

    /// `θ ≡ c` on `R^q`.
    pub fn constant(c: T, q: usize) -> Result<Self> {
        Self::new(c, vec![T::zero(); q])
    }
}

impl<T: Scalar> SmoothModel<T> for LinearModel<T> {
    fn input_dim(&self) -> usize {
        self.coefficients.len()
    }

    fn canonical_unchecked(&self, x: &[T]) -> T {
        self.intercept + dot(&self.coefficients, x)
    }

    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T> {
        let q = self.coefficients.len();
        Derivatives {
            value: self.canonical_unchecked(x),
            gradient: self.coefficients.clone(),
            hessian: vec![T::zero(); q * q],
        }
    }

    fn gradient_unchecked(&self, _x: &[T]) -> Vec<T> {
        self.coefficients.clone()
    }
}

// ---------------------------------------------------------------------------
// Quadratic

/// `θ(x) = c + bᵀx + xᵀAx` with `A` stored symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel<T> {
    constant: T,
    linear: Vec<T>,
    quadratic: Vec<T>,
}

impl<T: Scalar> QuadraticModel<T> {
    /// `quadratic` is a row-major `q × q` matrix; it is replaced by `(A + Aᵀ)/2`.
    pub fn new(constant: T, linear: Vec<T>, quadratic: Vec<T>) -> Result<Self> {
        let q = linear.len();
        if q == 0 || quadratic.len() != q * q {
            return Err(Error::Model(format!(
                "quadratic form needs a {q}x{q} matrix, got {} entries",
                quadratic.len()
            )));
        }
        let mut sym = vec![T::zero(); q * q];
        for j in 0..q {
            for k in 0..q {
                sym[j * q + k] = (quadratic[j * q + k] + quadratic[k * q + j]) * T::half();
            }
        }
        Ok(Self {
            constant,
            linear,
            quadratic: sym,
        })
    }

    /// `θ(x) = ‖x‖²`.
    pub fn squared_norm(q: usize) -> Result<Self> {
        let mut a = vec![T::zero(); q * q];
        for j in 0..q {
            a[j * q + j] = T::one();
        }
        Self::new(T::zero(), vec![T::zero(); q], a)
    }

    /// `θ(x) = x_1 + x_2 + γ·x_1 x_2` on `R^2`.
    pub fn planted_interaction(gamma: T) -> Result<Self> {
        let off = gamma * T::half();
        Self::new(
            T::zero(),
            vec![T::one(), T::one()],
            vec![T::zero(), off, off, T::zero()],
        )
    }

    pub fn matrix(&self) -> &[T] {
        &self.quadratic
    }
}

impl<T: Scalar> SmoothModel<T> for QuadraticModel<T> {
    fn input_dim(&self) -> usize {
        self.linear.len()
    }

    fn canonical_unchecked(&self, x: &[T]) -> T {
        let q = self.linear.len();
        let mut v = self.constant + dot(&self.linear, x);
        for j in 0..q {
            v += x[j] * dot(&self.quadratic[j * q..(j + 1) * q], x);
        }
        v
    }

    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T> {
        let q = self.linear.len();
        let gradient = (0..q)
            .map(|j| self.linear[j] + T::two() * dot(&self.quadratic[j * q..(j + 1) * q], x))
            .collect();
        Derivatives {
            value: self.canonical_unchecked(x),
            gradient,
            hessian: self.quadratic.iter().map(|&a| a * T::two()).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Additive tanh

/// `θ(x) = c + Σ_j w_j tanh(s_j x_j)`; no cross partials by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveTanhModel<T> {
    pub intercept: T,
    pub amplitudes: Vec<T>,
    pub scales: Vec<T>,
}

impl<T: Scalar> AdditiveTanhModel<T> {
    pub fn new(intercept: T, amplitudes: Vec<T>, scales: Vec<T>) -> Result<Self> {
        if amplitudes.is_empty() || amplitudes.len() != scales.len() {
            return Err(Error::Model("amplitudes and scales must have equal, positive length".into()));
        }
        Ok(Self {
            intercept,
            amplitudes,
            scales,
        })
    }
}

impl<T: Scalar> SmoothModel<T> for AdditiveTanhModel<T> {
    fn input_dim(&self) -> usize {
        self.scales.len()
    }

    fn canonical_unchecked(&self, x: &[T]) -> T {
        self.amplitudes
            .iter()
            .zip(&self.scales)
            .zip(x)
            .fold(self.intercept, |acc, ((&w, &s), &xj)| acc + w * (s * xj).tanh())
    }

    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T> {
        let q = self.scales.len();
        let mut gradient = vec![T::zero(); q];
        let mut hessian = vec![T::zero(); q * q];
        for j in 0..q {
            let t = (self.scales[j] * x[j]).tanh();
            let d1 = T::one() - t * t;
            gradient[j] = self.amplitudes[j] * self.scales[j] * d1;
            hessian[j * q + j] =
                -T::two() * self.amplitudes[j] * self.scales[j] * self.scales[j] * t * d1;
        }
        Derivatives {
            value: self.canonical_unchecked(x),
            gradient,
            hessian,
        }
    }
}

// ---------------------------------------------------------------------------
// Shifted

/// `y ↦ θ(a + y)`, the model seen from reference point `a`.
#[derive(Debug, Clone)]
pub struct ShiftedModel<M, T> {
    inner: M,
    shift: Vec<T>,
}

impl<T: Scalar, M: SmoothModel<T>> ShiftedModel<M, T> {
    pub fn new(inner: M, shift: Vec<T>) -> Result<Self> {
        if shift.len() != inner.input_dim() {
            return Err(Error::InputShape {
                expected: inner.input_dim(),
                found: shift.len(),
            });
        }
        Ok(Self { inner, shift })
    }

    fn point(&self, y: &[T]) -> Vec<T> {
        self.shift.iter().zip(y).map(|(&a, &v)| a + v).collect()
    }
}

impl<T: Scalar, M: SmoothModel<T>> SmoothModel<T> for ShiftedModel<M, T> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn canonical_unchecked(&self, y: &[T]) -> T {
        self.inner.canonical_unchecked(&self.point(y))
    }
    fn derivatives_unchecked(&self, y: &[T]) -> Derivatives<T> {
        self.inner.derivatives_unchecked(&self.point(y))
    }
}

// ---------------------------------------------------------------------------
// Feed-forward network

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Identity => a,
        }
    }

    /// First and second derivative expressed through the activated value `z`.
    #[inline]
    pub(crate) fn slopes<T: Scalar>(self, z: T) -> (T, T) {
        match self {
            Activation::Tanh => {
                let d1 = T::one() - z * z;
                (d1, -T::two() * z * d1)
            }
            Activation::Identity => (T::one(), T::zero()),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" | "affine" => Ok(Activation::Identity),
            other => Err(Error::Model(format!(
                "activation `{other}` is not twice continuously differentiable; \
                 only tanh and identity layers are permitted"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

/// Fully connected layer `z ↦ act(W z + b)`, `W` row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weights: Vec<T>,
    pub(crate) bias: Vec<T>,
    pub(crate) activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(in_dim: usize, weights: Vec<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        let out_dim = bias.len();
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Model("layer widths must be positive".into()));
        }
        if weights.len() != out_dim * in_dim {
            return Err(Error::Model(format!(
                "weight matrix must be {out_dim}x{in_dim}, got {} entries",
                weights.len()
            )));
        }
        if !all_finite(&weights) || !all_finite(&bias) {
            return Err(Error::Model("non-finite layer parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub(crate) fn row(&self, m: usize) -> &[T] {
        &self.weights[m * self.in_dim..(m + 1) * self.in_dim]
    }

    pub(crate) fn forward(&self, z: &[T]) -> Vec<T> {
        (0..self.out_dim)
            .map(|m| self.activation.apply(self.bias[m] + dot(self.row(m), z)))
            .collect()
    }
}

/// Affine output `β_0 + βᵀz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout<T> {
    pub intercept: T,
    pub coefficients: Vec<T>,
}

/// Feed-forward network `θ(x) = β_0 + βᵀ z^(d:1)(x)` with smooth hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    input_dim: usize,
    layers: Vec<DenseLayer<T>>,
    readout: Readout<T>,
}

/// Hidden widths used for the bike-sharing network.
pub const DEFAULT_HIDDEN: [usize; 3] = [20, 15, 10];

impl<T: Scalar> MlpModel<T> {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer<T>>, readout: Readout<T>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Model("input dimension must be positive".into()));
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim != width {
                return Err(Error::Model(format!(
                    "layer {} expects {} inputs but receives {width}",
                    k + 1,
                    layer.in_dim
                )));
            }
            width = layer.out_dim;
        }
        if readout.coefficients.len() != width {
            return Err(Error::Model(format!(
                "readout has {} coefficients for a representation of width {width}",
                readout.coefficients.len()
            )));
        }
        if !readout.intercept.is_finite() || !all_finite(&readout.coefficients) {
            return Err(Error::Model("non-finite readout".into()));
        }
        Ok(Self {
            input_dim,
            layers,
            readout,
        })
    }

    /// `tanh` network with weights uniform in `±1/√fan_in` drawn from `seed`.
    pub fn random(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize, count: usize| -> Vec<T> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..count)
                .map(|_| T::lit(rng.random_range(-bound..=bound)))
                .collect()
        };
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            if h == 0 || width == 0 {
                return Err(Error::Model("layer widths must be positive".into()));
            }
            let w = uniform(width, h * width);
            let b = uniform(width, h);
            layers.push(DenseLayer::new(width, w, b, Activation::Tanh)?);
            width = h;
        }
        let coefficients = uniform(width.max(1), width);
        Self::new(
            input_dim,
            layers,
            Readout {
                intercept: T::zero(),
                coefficients,
            },
        )
    }

    /// The affine model `β_0 + βᵀx` expressed as a network without hidden layers.
    pub fn from_linear(linear: &LinearModel<T>) -> Self {
        Self {
            input_dim: linear.coefficients.len(),
            layers: Vec::new(),
            readout: Readout {
                intercept: linear.intercept,
                coefficients: linear.coefficients.clone(),
            },
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn readout(&self) -> &Readout<T> {
        &self.readout
    }

    /// `(q, q_1, …, q_d)`.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub(crate) fn readout_mut(&mut self) -> &mut Readout<T> {
        &mut self.readout
    }

    /// Activations of every hidden layer, input first.
    pub(crate) fn forward_trace(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("non-empty trace"));
            trace.push(next);
        }
        trace
    }

    /// Splits the network after hidden layer `k` into the representation
    /// `x ↦ z^(k:1)(x)` and the remaining network on `R^{q_k}`.
    pub fn truncate_at_layer(&self, k: usize) -> Result<TruncatedModel<T>> {
        if k > self.layers.len() {
            return Err(Error::arg(format!(
                "layer index {k} out of range 0..={}",
                self.layers.len()
            )));
        }
        let representation = Representation {
            input_dim: self.input_dim,
            layers: self.layers[..k].to_vec(),
        };
        let rep_dim = representation.output_dim();
        let remaining = MlpModel {
            input_dim: rep_dim,
            layers: self.layers[k..].to_vec(),
            readout: self.readout.clone(),
        };
        Ok(TruncatedModel {
            k,
            representation,
            remaining,
        })
    }
}

impl<T: Scalar> SmoothModel<T> for MlpModel<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn canonical_unchecked(&self, x: &[T]) -> T {
        let mut z = x.to_vec();
        for layer in &self.layers {
            z = layer.forward(&z);
        }
        self.readout.intercept + dot(&self.readout.coefficients, &z)
    }

    fn gradient_unchecked(&self, x: &[T]) -> Vec<T> {
        let trace = self.forward_trace(x);
        let mut delta = self.readout.coefficients.clone();
        for (layer, z) in self.layers.iter().zip(&trace[1..]).rev() {
            let mut back = vec![T::zero(); layer.in_dim];
            for m in 0..layer.out_dim {
                let (d1, _) = layer.activation.slopes(z[m]);
                let g = delta[m] * d1;
                for (b, &w) in back.iter_mut().zip(layer.row(m)) {
                    *b += g * w;
                }
            }
            delta = back;
        }
        delta
    }

    fn derivatives_unchecked(&self, x: &[T]) -> Derivatives<T> {
        let q = self.input_dim;
        // Forward sweep: activations plus Jacobians of pre-activations w.r.t. x.
        let mut jac: Vec<T> = (0..q * q)
            .map(|i| if i % (q + 1) == 0 { T::one() } else { T::zero() })
            .collect();
        let mut z = x.to_vec();
        let mut pre_jacs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (n_in, n_out) = (layer.in_dim, layer.out_dim);
            let mut pre = vec![T::zero(); n_out * q];
            for m in 0..n_out {
                let row = layer.row(m);
                let out = &mut pre[m * q..(m + 1) * q];
                for (n, &w) in row.iter().enumerate().take(n_in) {
                    if w == T::zero() {
                        continue;
                    }
                    for (o, &jv) in out.iter_mut().zip(&jac[n * q..(n + 1) * q]) {
                        *o += w * jv;
                    }
                }
            }
            let next = layer.forward(&z);
            let mut next_jac = pre.clone();
            for m in 0..n_out {
                let (d1, _) = layer.activation.slopes(next[m]);
                for v in &mut next_jac[m * q..(m + 1) * q] {
                    *v *= d1;
                }
            }
            pre_jacs.push(pre);
            acts.push(next.clone());
            z = next;
            jac = next_jac;
        }

        let value = self.readout.intercept + dot(&self.readout.coefficients, &z);
        let mut gradient = vec![T::zero(); q];
        for (m, &beta) in self.readout.coefficients.iter().enumerate() {
            for (g, &jv) in gradient.iter_mut().zip(&jac[m * q..(m + 1) * q]) {
                *g += beta * jv;
            }
        }

        // Backward sweep: H = Σ_k Σ_m δ_km σ''(a_km) ∇a_km ∇a_kmᵀ.
        let mut hessian = vec![T::zero(); q * q];
        let mut delta = self.readout.coefficients.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &pre_jacs[k];
            let zk = &acts[k];
            let mut back = vec![T::zero(); layer.in_dim];
            for m in 0..layer.out_dim {
                let (d1, d2) = layer.activation.slopes(zk[m]);
                let c = delta[m] * d2;
                if c != T::zero() {
                    let grad_a = &pre[m * q..(m + 1) * q];
                    for r in 0..q {
                        let cr = c * grad_a[r];
                        for s in r..q {
                            hessian[r * q + s] += cr * grad_a[s];
                        }
                    }
                }
                let g = delta[m] * d1;
                for (b, &w) in back.iter_mut().zip(layer.row(m)) {
                    *b += g * w;
                }
            }
            delta = back;
        }
        for r in 0..q {
            for s in 0..r {
                hessian[r * q + s] = hessian[s * q + r];
            }
        }

        Derivatives {
            value,
            gradient,
            hessian,
        }
    }
}

/// `x ↦ x^(k:1) = (z^(k) ∘ … ∘ z^(1))(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation<T> {
    input_dim: usize,
    layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> Representation<T> {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.out_dim)
    }

    pub fn map(&self, x: &[T]) -> Vec<T> {
        let mut z = x.to_vec();
        for layer in &self.layers {
            z = layer.forward(&z);
        }
        z
    }

    /// Row-major `output_dim × input_dim` Jacobian.
    pub fn jacobian(&self, x: &[T]) -> Vec<T> {
        let q = self.input_dim;
        let mut jac: Vec<T> = (0..q * q)
            .map(|i| if i % (q + 1) == 0 { T::one() } else { T::zero() })
            .collect();
        let mut z = x.to_vec();
        for layer in &self.layers {
            let next = layer.forward(&z);
            let mut out = vec![T::zero(); layer.out_dim * q];
            for m in 0..layer.out_dim {
                let (d1, _) = layer.activation.slopes(next[m]);
                for (n, &w) in layer.row(m).iter().enumerate() {
                    for c in 0..q {
                        out[m * q + c] += d1 * w * jac[n * q + c];
                    }
                }
            }
            jac = out;
            z = next;
        }
        jac
    }
}

/// A network split into a learned representation and the sub-network above it.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedModel<T> {
    k: usize,
    representation: Representation<T>,
    remaining: MlpModel<T>,
}

impl<T: Scalar> TruncatedModel<T> {
    pub fn layer(&self) -> usize {
        self.k
    }

    pub fn representation(&self) -> &Representation<T> {
        &self.representation
    }

    pub fn remaining(&self) -> &MlpModel<T> {
        &self.remaining
    }

    /// Maps every row of `x` through the representation.
    pub fn represent_rows(&self, x: ndarray::ArrayView2<'_, T>) -> ndarray::Array2<T> {
        let n = x.nrows();
        let width = self.representation.output_dim();
        let mut out = ndarray::Array2::zeros((n, width));
        for (i, row) in x.rows().into_iter().enumerate() {
            let row: Vec<T> = row.iter().copied().collect();
            for (o, v) in out.row_mut(i).iter_mut().zip(self.representation.map(&row)) {
                *o = v;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Model file

pub const MODEL_SCHEMA: &str = "macq-model/1";

/// On-disk JSON document describing a network and its input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: String,
    pub arch: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub readout: Readout<f64>,
    pub standardization: Standardization<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_names: Vec<String>,
}

fn default_activation() -> String {
    "tanh".into()
}

impl ModelFile {
    pub fn from_model<T: Scalar>(
        model: &MlpModel<T>,
        standardization: Standardization<f64>,
        seed: u64,
        feature_names: Vec<String>,
    ) -> Self {
        let to64 = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        let activation = model
            .layers
            .first()
            .map_or(Activation::Tanh, |l| l.activation)
            .to_string();
        Self {
            schema_version: MODEL_SCHEMA.into(),
            arch: model.arch(),
            activation,
            weights: model.layers.iter().map(|l| to64(&l.weights)).collect(),
            biases: model.layers.iter().map(|l| to64(&l.bias)).collect(),
            readout: Readout {
                intercept: model.readout.intercept.to_f64_lossy(),
                coefficients: to64(&model.readout.coefficients),
            },
            standardization,
            seed,
            feature_names,
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<MlpModel<T>> {
        if self.schema_version != MODEL_SCHEMA {
            return Err(Error::Schema(format!(
                "unsupported model schema `{}` (expected `{MODEL_SCHEMA}`)",
                self.schema_version
            )));
        }
        if self.arch.is_empty() || self.arch.contains(&0) {
            return Err(Error::Schema("arch must list positive widths".into()));
        }
        let depth = self.arch.len() - 1;
        if self.weights.len() != depth || self.biases.len() != depth {
            return Err(Error::Schema(format!(
                "arch implies {depth} hidden layers but found {} weight and {} bias arrays",
                self.weights.len(),
                self.biases.len()
            )));
        }
        let activation: Activation = self.activation.parse()?;
        let q = self.arch[0];
        if self.standardization.mean.len() != q || self.standardization.std.len() != q {
            return Err(Error::Schema("standardization length differs from input width".into()));
        }
        let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let layers = (0..depth)
            .map(|k| {
                if self.biases[k].len() != self.arch[k + 1] {
                    return Err(Error::Schema(format!("bias {} has wrong length", k + 1)));
                }
                DenseLayer::new(self.arch[k], conv(&self.weights[k]), conv(&self.biases[k]), activation)
                    .map_err(|e| Error::Schema(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::new(
            q,
            layers,
            Readout {
                intercept: T::lit(self.readout.intercept),
                coefficients: conv(&self.readout.coefficients),
            },
        )
        .map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_neuron() -> MlpModel<f64> {
        let layer = DenseLayer::new(1, vec![1.0], vec![0.0], Activation::Tanh).unwrap();
        MlpModel::new(
            1,
            vec![layer],
            Readout {
                intercept: 0.0,
                coefficients: vec![1.0],
            },
        )
        .unwrap()
    }

    #[test]
    fn linear_canonical_values() {
        let m = LinearModel::new(1.0, vec![2.0, -1.0]).unwrap();
        assert_eq!(m.evaluate_canonical(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(m.evaluate_canonical(&[1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn tanh_neuron_at_zero() {
        let m = tanh_neuron();
        assert_eq!(m.evaluate_canonical(&[0.0]).unwrap(), 0.0);
        let d = m.derivatives_unchecked(&[0.0]);
        assert_eq!(d.gradient, vec![1.0]);
        assert_eq!(d.hessian, vec![0.0]);
    }

    #[test]
    fn checked_evaluation_rejects_bad_input() {
        let m = LinearModel::new(1.0, vec![2.0, -1.0]).unwrap();
        assert!(matches!(
            m.evaluate_canonical(&[1.0]),
            Err(Error::InputShape { expected: 2, found: 1 })
        ));
        assert!(matches!(
            m.evaluate_canonical(&[1.0, f64::NAN]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn mean_is_sigmoid_of_canonical() {
        let m = MlpModel::<f64>::random(4, &DEFAULT_HIDDEN, 3).unwrap();
        let x = [0.3, -1.2, 2.0, 0.1];
        let t = m.evaluate_canonical(&x).unwrap();
        let mu = m.evaluate_mean(&x).unwrap();
        assert!((sigmoid(t) - mu).abs() < 1e-15);
        assert!(mu > 0.0 && mu < 1.0);
    }

    #[test]
    fn non_smooth_activation_is_rejected() {
        let err = "relu".parse::<Activation>().unwrap_err();
        assert!(err.to_string().contains("relu"));
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
    }

    #[test]
    fn layer_shapes_are_validated() {
        assert!(DenseLayer::<f64>::new(3, vec![0.0; 5], vec![0.0; 2], Activation::Tanh).is_err());
        let layer = DenseLayer::new(3, vec![0.0; 6], vec![0.0; 2], Activation::Tanh).unwrap();
        let bad = MlpModel::new(
            4,
            vec![layer],
            Readout {
                intercept: 0.0,
                coefficients: vec![1.0, 1.0],
            },
        );
        assert!(bad.is_err());
    }

    #[test]
    fn truncation_bounds() {
        let m = MlpModel::<f64>::random(11, &DEFAULT_HIDDEN, 1).unwrap();
        assert!(m.truncate_at_layer(4).is_err());
        let t1 = m.truncate_at_layer(1).unwrap();
        assert_eq!(t1.representation().output_dim(), 20);
        let t0 = m.truncate_at_layer(0).unwrap();
        assert_eq!(t0.remaining(), &m);
        let t3 = m.truncate_at_layer(3).unwrap();
        let x = vec![0.1; 10];
        let d = t3.remaining().derivatives_unchecked(&x);
        assert!(d.hessian.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn random_init_is_bounded_and_seeded() {
        let a = MlpModel::<f64>::random(5, &[7, 3], 9).unwrap();
        let b = MlpModel::<f64>::random(5, &[7, 3], 9).unwrap();
        assert_eq!(a, b);
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.layers()[0].weights().iter().all(|w| w.abs() <= bound));
        assert_ne!(a, MlpModel::<f64>::random(5, &[7, 3], 10).unwrap());
    }

    #[test]
    fn model_file_round_trip() {
        let m = MlpModel::<f64>::random(3, &[4, 2], 5).unwrap();
        let file = ModelFile::from_model(&m, Standardization::identity(3), 5, vec![]);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model::<f64>().unwrap(), m);

        let mut bad = file.clone();
        bad.schema_version = "other/9".into();
        assert!(matches!(bad.to_model::<f64>(), Err(Error::Schema(_))));
        let mut relu = file;
        relu.activation = "relu".into();
        assert!(relu.to_model::<f64>().is_err());
    }

    #[test]
    fn f32_network_evaluates() {
        let m = MlpModel::<f32>::random(3, &[5], 2).unwrap();
        let d = m.derivatives_unchecked(&[0.1, 0.2, -0.3]);
        assert!(d.value.is_finite());
        assert_eq!(d.hessian.len(), 9);
    }
}
