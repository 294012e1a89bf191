use macq::data::{load_bike_csv, standardize, Dataset, BIKE_FEATURES};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

const HEADER: &str = "instant,dteday,season,yr,mnth,hr,holiday,weekday,workingday,weathersit,temp,atemp,hum,windspeed,casual,registered,cnt";

fn bike_rows(n: usize) -> String {
    let mut s = format!("{HEADER}\n");
    for i in 0..n {
        let cnt = 5 + i % 37;
        let casual = i % 5;
        s.push_str(&format!(
            "{},2011-01-{:02},1,{},{},{},{},{},{},{},{:.2},{:.4},{:.2},{:.4},{},{},{}\n",
            i + 1,
            1 + i % 28,
            i % 2,
            1 + i % 12,
            i % 24,
            usize::from(i % 17 == 0),
            i % 7,
            usize::from(i % 7 < 5),
            1 + i % 3,
            0.1 + (i % 9) as f64 * 0.08,
            0.12 + (i % 11) as f64 * 0.07,
            0.3 + (i % 13) as f64 * 0.05,
            (i % 6) as f64 * 0.05,
            casual,
            cnt - casual,
            cnt
        ));
    }
    s
}

#[test]
fn loading_twice_gives_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("hour.csv");
    std::fs::write(&p, bike_rows(200)).unwrap();
    let a: Dataset<f64> = load_bike_csv(&p).unwrap();
    let b: Dataset<f64> = load_bike_csv(&p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.q(), BIKE_FEATURES.len());
    assert_eq!(a.feature_index("hour"), Some(2));
    assert!(a.response.iter().all(|&y| (0.0..=1.0).contains(&y)));
    let expect: Vec<f64> = (0..200).map(|i| (i % 5) as f64 / (5 + i % 37) as f64).collect();
    assert_eq!(a.response, expect);
}

#[test]
fn reference_point_maps_back_to_original_units() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("hour.csv");
    std::fs::write(&p, bike_rows(120)).unwrap();
    let d: Dataset<f64> = load_bike_csv(&p).unwrap();
    let z = d.features.row(17).to_vec();
    let back = d.standardization.inverse_point(&z);
    for (a, b) in back.iter().zip(d.raw.row(17)) {
        assert!((a - b).abs() < 1e-12);
    }
    let origin = d.standardization.inverse_point(&vec![0.0; d.q()]);
    for (j, col) in d.raw.axis_iter(Axis(1)).enumerate() {
        assert!((origin[j] - col.mean().unwrap()).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn standardized_columns_have_zero_mean_and_unit_variance(
        cells in proptest::collection::vec(-1e3f64..1e3, 20..120),
    ) {
        let n = cells.len() / 2;
        let raw = Array2::from_shape_vec((n, 2), cells[..2 * n].to_vec()).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        prop_assume!(raw.axis_iter(Axis(1)).all(|c| c.iter().any(|&v| v != c[0])));
        let (z, st) = standardize(raw.view(), &names).unwrap();
        for col in z.axis_iter(Axis(1)) {
            let m = col.mean().unwrap();
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((v - 1.0).abs() < 1e-8);
        }
        let back = st.inverse(z.view()).unwrap();
        for (a, b) in back.iter().zip(raw.iter()) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }
}
