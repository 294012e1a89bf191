mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use common::{thetas, Atoms};
use macq::engine::MacqSample;
use macq::model::{Activation, DenseLayer, Derivatives, LinearModel, MlpModel, QuadraticModel, Readout, SmoothModel};
use macq::quantile::{QuantileGrid, SmootherConfig};
use macq::reference::{objective_g, optimize_reference, ObjectivePrecompute, RefOptConfig, SearchStatus};
use macq::synthetic::generate;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn precompute<M: SmoothModel<f64>>(m: &M, x: &Array2<f64>) -> ObjectivePrecompute<f64> {
    let s = MacqSample::new(m, x.view(), &QuantileGrid::percent(), SmootherConfig::default()).unwrap();
    ObjectivePrecompute::new(&s)
}

/// `Σ_l (F_l − C22_l(a))²` with every conditional mean taken over the atom.
fn enumerated_g<M: SmoothModel<f64>>(m: &M, x: &Array2<f64>, a: &[f64]) -> f64 {
    let atoms = Atoms::new(&thetas(m, x.view()));
    let theta_a = m.canonical_unchecked(a);
    let q = a.len();
    (1..100)
        .map(|l| {
            let alpha = l as f64 / 100.0;
            let c22 = theta_a
                + atoms.conditional_mean(alpha, |i| {
                    let xi = x.row(i).to_vec();
                    let d = m.derivatives_unchecked(&xi);
                    let mut v = 0.0;
                    for j in 0..q {
                        v += (xi[j] - a[j]) * d.gradient[j];
                        for k in 0..q {
                            v -= 0.5 * (xi[j] - a[j]) * (xi[k] - a[k]) * d.h(j, k);
                        }
                    }
                    v
                });
            (atoms.quantile(alpha) - c22).powi(2)
        })
        .sum()
}

fn fd_gradient_of_g<M: SmoothModel<f64>>(pre: &ObjectivePrecompute<f64>, m: &M, a: &[f64], h: f64) -> Vec<f64> {
    (0..a.len())
        .map(|j| {
            let mut p = a.to_vec();
            let mut s = a.to_vec();
            p[j] += h;
            s[j] -= h;
            (pre.value(m, &p).unwrap() - pre.value(m, &s).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn atom_rows(protos: &[Vec<f64>], n: usize) -> Array2<f64> {
    let q = protos[0].len();
    Array2::from_shape_fn((n, q), |(i, j)| protos[i % protos.len()][j])
}

#[test]
fn linear_models_zero_the_objective() {
    let c = generate::<f64>("linear-atoms", 4000, 2).unwrap();
    let x = &c.dataset.features;
    let pre = precompute(&c.model, x);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let scale: f64 = (1..100)
        .map(|l| common::sorted_quantile(&thetas(&c.model, x.view()), l as f64 / 100.0).powi(2))
        .sum();
    for _ in 0..10 {
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (g, grad) = pre.value_and_gradient(&c.model, &a).unwrap();
        assert!(g < 1e-10 && g < 1e-8 * scale, "G = {g}");
        assert!(grad.iter().all(|v| v.abs() < 1e-10));
    }
    let st = optimize_reference(&c.model, &pre, &[0.0; 5], &RefOptConfig::default()).unwrap();
    assert_eq!(st.status, SearchStatus::Converged);
    assert!(st.current.iter().all(|v| v.abs() < 1e-12));
    assert!(st.trace.iter().all(|e| e.objective < 1e-20));

    let k = LinearModel::constant(2.0, 2).unwrap();
    let xk = Array2::from_shape_fn((300, 2), |(i, j)| (i * (j + 1)) as f64 / 50.0);
    assert_eq!(objective_g(&k, xk.view(), &[3.0, -1.0], &QuantileGrid::percent(), SmootherConfig::default()).unwrap(), 0.0);
}

#[test]
fn objective_matches_enumeration_on_atoms() {
    let protos: Vec<Vec<f64>> = vec![
        vec![0.0, 1.0],
        vec![1.0, -1.0],
        vec![-0.5, 0.5],
        vec![2.0, 1.5],
        vec![-1.5, -2.0],
    ];
    let x = atom_rows(&protos, 1000);
    let quad = QuadraticModel::new(0.0, vec![0.0; 2], vec![1.0, 0.3, 0.3, -0.5]).unwrap();
    let net = MlpModel::<f64>::random(2, &[6, 4], 5).unwrap();
    for a in [[0.0, 0.0], [0.4, -1.2], [3.0, 2.0]] {
        let g = precompute(&quad, &x).value(&quad, &a).unwrap();
        assert!((g - enumerated_g(&quad, &x, &a)).abs() < 1e-9);
        let g = precompute(&net, &x).value(&net, &a).unwrap();
        let oracle = enumerated_g(&net, &x, &a);
        assert!((g - oracle).abs() < 1e-9 * (1.0 + oracle), "{g} vs {oracle}");
    }
}

#[test]
fn square_toy_objective_does_not_depend_on_the_reference() {
    // Second order expansion of x² is exact, so G(0) and G(5) both vanish.
    let c = generate::<f64>("quadratic-4atom", 4000, 0).unwrap();
    let x = &c.dataset.features;
    let pre = precompute(&c.model, x);
    let (g0, d0) = pre.value_and_gradient(&c.model, &[0.0]).unwrap();
    let (g5, d5) = pre.value_and_gradient(&c.model, &[5.0]).unwrap();
    assert!((g0 - enumerated_g(&c.model, x, &[0.0])).abs() < 1e-9);
    assert!((g5 - enumerated_g(&c.model, x, &[5.0])).abs() < 1e-9);
    assert!(g0 < 1e-20 && g5 < 1e-20);
    assert!(d0[0].abs() < 1e-10 && d5[0].abs() < 1e-10);
}

#[test]
fn gradient_matches_differences_on_a_network() {
    let m = MlpModel::<f64>::random(3, &[8, 6], 21).unwrap();
    let x = generate::<f64>("additive-tanh", 3000, 3).unwrap().dataset.features.slice_move(ndarray::s![.., 0..3]);
    let pre = precompute(&m, &x);
    for a in [[0.0, 0.0, 0.0], [0.5, -0.3, 1.0], [-1.0, 0.7, 0.2]] {
        let (_, g) = pre.value_and_gradient(&m, &a).unwrap();
        let fd = fd_gradient_of_g(&pre, &m, &a, 1e-6);
        assert!(common::rel_err(&g, &fd, 1e-12) < 1e-5, "{g:?} vs {fd:?}");
    }
}

#[test]
fn symmetric_model_and_data_give_symmetric_gradient() {
    // θ = tanh x1 + tanh x2 + ½ tanh(x1 + x2); every prototype comes with its mirror image.
    let layer = DenseLayer::new(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![0.0; 3], Activation::Tanh).unwrap();
    let m = MlpModel::new(
        2,
        vec![layer],
        Readout {
            intercept: 0.0,
            coefficients: vec![1.0, 1.0, 0.5],
        },
    )
    .unwrap();
    let protos = vec![vec![0.3, -1.0], vec![-1.0, 0.3], vec![1.2, 0.4], vec![0.4, 1.2], vec![-0.7, -0.7]];
    let x = atom_rows(&protos, 2000);
    let pre = precompute(&m, &x);
    for a in [0.0, 0.35, -1.1] {
        let (_, g) = pre.value_and_gradient(&m, &[a, a]).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-10, "{g:?}");
    }
}

#[test]
fn single_step_has_the_prescribed_length_and_direction() {
    let c = generate::<f64>("bike-like", 3000, 4).unwrap();
    let x = &c.dataset.features;
    let pre = precompute(&c.model, x);
    let a0 = [0.0; 4];
    let (_, g) = pre.value_and_gradient(&c.model, &a0).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cfg = RefOptConfig {
        steps: 1,
        ..RefOptConfig::default()
    };
    let st = optimize_reference(&c.model, &pre, &a0, &cfg).unwrap();
    assert_eq!(st.trace.len(), 2);
    for j in 0..4 {
        assert!((st.current[j] - (-1e-2 * g[j] / norm)).abs() < 1e-15);
    }
}

#[test]
fn bike_like_model_halves_the_objective_in_a_hundred_steps() {
    let c = generate::<f64>("bike-like", 5000, 1).unwrap();
    let pre = precompute(&c.model, &c.dataset.features);
    let cfg = RefOptConfig {
        steps: 100,
        ..RefOptConfig::default()
    };
    let st = optimize_reference(&c.model, &pre, &[0.0; 4], &cfg).unwrap();
    assert_eq!(st.trace.len(), 101);
    assert!(st.best_objective <= 0.5 * st.initial_objective());
    let best = st.best_trace();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert!((pre.value(&c.model, &st.best_point).unwrap() - st.best_objective).abs() < 1e-12);
}

/// Network whose derivatives turn NaN after a fixed number of evaluations.
struct Failing {
    inner: MlpModel<f64>,
    calls: AtomicUsize,
    limit: usize,
}

impl SmoothModel<f64> for Failing {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn canonical_unchecked(&self, x: &[f64]) -> f64 {
        self.inner.canonical_unchecked(x)
    }
    fn derivatives_unchecked(&self, x: &[f64]) -> Derivatives<f64> {
        let mut d = self.inner.derivatives_unchecked(x);
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.limit {
            d.value = f64::NAN;
        }
        d
    }
}

#[test]
fn non_finite_objective_aborts_and_keeps_the_trace() {
    let x = generate::<f64>("bike-like", 500, 2).unwrap().dataset.features;
    let m = Failing {
        inner: MlpModel::random(4, &[5], 3).unwrap(),
        calls: AtomicUsize::new(0),
        limit: usize::MAX,
    };
    let pre = precompute(&m, &x);
    let m = Failing { limit: 3, ..m };
    m.calls.store(0, Ordering::SeqCst);
    let st = optimize_reference(&m, &pre, &[0.0; 4], &RefOptConfig::default()).unwrap();
    assert_eq!(st.status, SearchStatus::Aborted { iteration: 3 });
    assert_eq!(st.trace.len(), 3);
    assert!(st.best_objective.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_is_non_negative(seed in any::<u64>(), a in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let m = MlpModel::<f64>::random(2, &[4], seed).unwrap();
        let x = Array2::from_shape_fn((200, 2), |(i, j)| ((i * (j + 5) + seed as usize % 11) % 23) as f64 / 5.0 - 2.0);
        let g = precompute(&m, &x).value(&m, &a).unwrap();
        prop_assert!(g >= 0.0);
    }
}
