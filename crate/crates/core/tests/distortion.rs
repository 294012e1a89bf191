use macq::distortion::{distorted_value, distortion_sensitivity, DistortionDensity};
use macq::engine::MacqSample;
use macq::model::{LinearModel, SmoothModel};
use macq::quantile::{QuantileGrid, SmootherConfig};
use macq::synthetic::generate;
use ndarray::Array2;

#[test]
fn dirac_two_thirds_on_the_three_atom_fixture() {
    let c = generate::<f64>("linear-3atom", 3000, 0).unwrap();
    let x = c.dataset.features.view();
    let alpha = 2.0 / 3.0;
    let s = distortion_sensitivity(&c.model, x, 0, &DistortionDensity::Dirac(alpha), SmootherConfig::default()).unwrap();
    assert!((s - 2.0).abs() < 1e-9, "{s}");
    let grid = QuantileGrid::new(vec![alpha]).unwrap();
    let sample = MacqSample::new(&c.model, x, &grid, SmootherConfig::default()).unwrap();
    assert!((sample.first_order(&[0.0]).unwrap()[[0, 0]] - s).abs() < 1e-9);
}

#[test]
fn dirac_bridge_matches_first_order_attribution() {
    for name in ["linear-atoms", "planted-interaction", "quadratic-4atom"] {
        let c = generate::<f64>(name, 4000, 1).unwrap();
        let x = c.dataset.features.view();
        let grid = QuantileGrid::percent_range(5, 95).unwrap();
        let sample = MacqSample::new(&c.model, x, &grid, SmootherConfig::default()).unwrap();
        let s = sample.first_order(&vec![0.0; x.ncols()]).unwrap();
        for (l, &alpha) in grid.levels().iter().enumerate().step_by(10) {
            for j in 0..x.ncols() {
                let d = distortion_sensitivity(&c.model, x, j, &DistortionDensity::Dirac(alpha), SmootherConfig::default()).unwrap();
                assert!((d - s[[l, j]]).abs() < 1e-9, "{name} α={alpha} j={j}");
            }
        }
    }
}

#[test]
fn sensitivity_is_linear_in_the_density() {
    let c = generate::<f64>("bike-like", 2000, 2).unwrap();
    let x = c.dataset.features.view();
    let z1 = DistortionDensity::Table(vec![0.5, 0.5, 1.0, 2.0]);
    let z2 = DistortionDensity::function(|u: f64| 2.0 * u);
    let lambda = 0.3;
    let mix = DistortionDensity::mixture(lambda, z1.clone(), z2.clone());
    let theta: Vec<f64> = x.rows().into_iter().map(|r| c.model.canonical_unchecked(&r.to_vec())).collect();
    let v = |z: &DistortionDensity<f64>| distorted_value(&theta, z).unwrap();
    assert!((v(&mix) - (lambda * v(&z1) + (1.0 - lambda) * v(&z2))).abs() < 1e-12);
    for j in 0..4 {
        let s = |z: &DistortionDensity<f64>| distortion_sensitivity(&c.model, x, j, z, SmootherConfig::default()).unwrap();
        assert!((s(&mix) - (lambda * s(&z1) + (1.0 - lambda) * s(&z2))).abs() < 1e-12);
    }
    // A mixture holding a point mass combines the two routes.
    let dm = DistortionDensity::mixture(0.5, DistortionDensity::Dirac(0.5), DistortionDensity::Uniform);
    let s = |z: &DistortionDensity<f64>| distortion_sensitivity(&c.model, x, 1, z, SmootherConfig::default()).unwrap();
    assert!((s(&dm) - 0.5 * (s(&DistortionDensity::Dirac(0.5)) + s(&DistortionDensity::Uniform))).abs() < 1e-12);
}

#[test]
fn uniform_density_gives_the_mean() {
    let c = generate::<f64>("additive-tanh", 1000, 3).unwrap();
    let theta: Vec<f64> = c.dataset.features.rows().into_iter().map(|r| c.model.canonical_unchecked(&r.to_vec())).collect();
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    assert!((distorted_value(&theta, &DistortionDensity::Uniform).unwrap() - mean).abs() < 1e-12);
    let k = LinearModel::constant(-1.0, 2).unwrap();
    let x = Array2::from_shape_fn((40, 2), |(i, j)| (i + j) as f64);
    assert_eq!(distortion_sensitivity(&k, x.view(), 1, &DistortionDensity::Uniform, SmootherConfig::default()).unwrap(), 0.0);
}
