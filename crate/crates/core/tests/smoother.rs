mod common;

use common::sorted_quantile;
use macq::quantile::{empirical_quantile, QuantileGrid, RankSmoother, SmootherConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

#[test]
fn quantile_examples() {
    let v = [5.0, 1.0, 3.0];
    assert_eq!(empirical_quantile(&v, 2.0 / 3.0).unwrap(), 3.0);
    assert_eq!(empirical_quantile(&v, 0.5).unwrap(), 3.0);
    assert_eq!(empirical_quantile(&v, 0.99).unwrap(), 5.0);
}

#[test]
fn quantiles_agree_with_sorting_oracle() {
    let v = uniform(1234, 8);
    for l in 1..100 {
        let a = l as f64 / 100.0;
        assert_eq!(empirical_quantile(&v, a).unwrap(), sorted_quantile(&v, a));
    }
}

#[test]
fn quadratic_in_rank_is_reproduced() {
    let theta = uniform(5000, 1);
    let sm = RankSmoother::new(&theta, &QuantileGrid::percent(), SmootherConfig::default()).unwrap();
    let f = |u: f64| -1.5 + 4.0 * u - 2.5 * u * u;
    let z: Vec<f64> = sm.ranks().iter().map(|&u| f(u)).collect();
    for (&a, &c) in QuantileGrid::<f64>::percent().levels().iter().zip(&sm.smooth(&z).unwrap()) {
        assert!((c - f(a)).abs() < 1e-9, "level {a}");
    }
    let c = sm.smooth(&vec![-2.0; 5000]).unwrap();
    assert!(c.iter().all(|&v| (v + 2.0).abs() < 1e-12));
}

#[test]
fn monte_carlo_conditional_mean_at_the_median() {
    // θ(X) = X with X uniform: E[X | θ = F^{-1}(0.5)] = 0.5.
    let x = uniform(10_000, 3);
    let grid = QuantileGrid::new(vec![0.5]).unwrap();
    let sm = RankSmoother::new(&x, &grid, SmootherConfig::default()).unwrap();
    let c = sm.smooth(&x).unwrap();
    assert!((c[0] - 0.5).abs() < 0.01, "{}", c[0]);
}

#[test]
fn conditional_sd_examples() {
    let theta = uniform(10_000, 4);
    let grid = QuantileGrid::percent();
    let sm = RankSmoother::new(&theta, &grid, SmootherConfig::default()).unwrap();
    let sd = sm.conditional_sd(&vec![3.0; 10_000]).unwrap();
    assert!(sd.iter().all(|&s| s < 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let signs: Vec<f64> = (0..10_000).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let sd = sm.conditional_sd(&signs).unwrap();
    for (l, &s) in sd.iter().enumerate() {
        assert!((s - 1.0).abs() < 0.05, "level {}: {s}", l + 1);
    }

    // z = θ: dispersion bounded by the θ range covered by the window.
    let sd = sm.conditional_sd(&theta).unwrap();
    let mut sorted = theta.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = SmootherConfig::<f64>::default().window(10_000);
    for (l, &s) in sd.iter().enumerate() {
        let centre = ((l + 1) * 100).min(9999);
        let lo = centre.saturating_sub(k);
        let hi = (centre + k).min(9999);
        assert!(s <= sorted[hi] - sorted[lo], "level {}: {s}", l + 1);
    }
}

#[test]
fn monotone_input_gives_monotone_interior_curve() {
    let theta = uniform(4000, 6);
    let sm = RankSmoother::new(&theta, &QuantileGrid::percent(), SmootherConfig::default()).unwrap();
    let z: Vec<f64> = theta.iter().map(|&t| (5.0 * t).exp() + t.powi(3)).collect();
    let c = sm.smooth(&z).unwrap();
    for l in 1..97 {
        assert!(c[l + 1] >= c[l] - 1e-8, "levels {} and {}", l + 1, l + 2);
    }
}

#[test]
fn degenerate_configurations_are_errors() {
    let theta = uniform(8, 1);
    assert!(RankSmoother::new(&theta, &QuantileGrid::percent(), SmootherConfig::default()).is_err());
    let theta = uniform(200, 1);
    let cfg = SmootherConfig {
        degree: 2,
        bandwidth_fraction: 0.01,
    };
    assert!(RankSmoother::new(&theta, &QuantileGrid::percent(), cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_is_linear(
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let n = 600;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let z1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sm = RankSmoother::new(&theta, &QuantileGrid::percent(), SmootherConfig::default()).unwrap();
        let mix: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| a * x + b * y).collect();
        let s1 = sm.smooth(&z1).unwrap();
        let s2 = sm.smooth(&z2).unwrap();
        let sm_mix = sm.smooth(&mix).unwrap();
        for l in 0..99 {
            prop_assert!((sm_mix[l] - (a * s1[l] + b * s2[l])).abs() < 1e-12);
        }
    }

    #[test]
    fn row_order_does_not_matter_without_ties(seed in any::<u64>()) {
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let z: Vec<f64> = theta.iter().map(|t| (7.0 * t).sin()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % n);
        let tp: Vec<f64> = perm.iter().map(|&i| theta[i]).collect();
        let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
        let grid = QuantileGrid::percent();
        let a = RankSmoother::new(&theta, &grid, SmootherConfig::default()).unwrap().smooth(&z).unwrap();
        let b = RankSmoother::new(&tp, &grid, SmootherConfig::default()).unwrap().smooth(&zp).unwrap();
        for l in 0..99 {
            prop_assert!((a[l] - b[l]).abs() < 1e-12);
        }
    }
}
