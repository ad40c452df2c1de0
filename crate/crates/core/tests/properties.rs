use nalgebra::DMatrix;
use proptest::prelude::*;

use sensorsel_core::basis::full_basis;
use sensorsel_core::dataset::CalibrationDataset;
use sensorsel_core::glr::fit;
use sensorsel_core::pme::pme_from_total_indices;

fn dataset(inputs: &[f64], n: usize, y: DMatrix<f64>) -> CalibrationDataset {
    let x = DMatrix::from_fn(n, 1, |i, _| inputs[3 * i]);
    let z = DMatrix::from_fn(n, 2, |i, j| inputs[3 * i + 1 + j]);
    CalibrationDataset::new(vec!["x".into()], vec!["z1".into(), "z2".into()], vec!["y".into()], x, z, y, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // A response that lies in the span of the basis is fitted exactly.
    #[test]
    fn fit_reproduces_polynomials_in_the_span(
        inputs in prop::collection::vec(-3.0f64..3.0, 3 * 40),
        coef in prop::collection::vec(-2.0f64..2.0, 10),
    ) {
        let n = 40;
        let probe = dataset(&inputs, n, DMatrix::zeros(n, 1));
        let basis = full_basis(&probe, &[0, 1], 2).unwrap();
        prop_assert_eq!(basis.k(), 10);
        let design = basis.design_matrix(&basis.inputs_of(&probe).unwrap());
        let y = &design * DMatrix::from_column_slice(10, 1, &coef);
        let train = dataset(&inputs, n, y.clone());
        let model = fit(&train, 0, &basis).unwrap();
        let scale = y.amax().max(1.0);
        for i in 0..n {
            prop_assert!((model.predict_row(&train, i) - y[(i, 0)]).abs() < 1e-8 * scale);
        }
    }

    // Additive games split exactly along their weights; any monotone game
    // gives non-negative shares that sum to one.
    #[test]
    fn shares_are_a_normalized_allocation(w in prop::collection::vec(0.05f64..1.0, 2..5), bumps in prop::collection::vec(0.0f64..0.3, 16)) {
        let d = w.len();
        let total: f64 = w.iter().sum();
        let additive: Vec<f64> = (0..1usize << d)
            .map(|m| (0..d).filter(|j| m >> j & 1 == 1).map(|j| w[j]).sum::<f64>() / total)
            .collect();
        let (shares, _) = pme_from_total_indices(&additive, d).unwrap();
        for j in 0..d {
            prop_assert!((shares[j] - w[j] / total).abs() < 1e-10);
        }

        // Superadditive perturbation, renormalized so the full coalition is 1.
        let full = (1usize << d) - 1;
        let mut v: Vec<f64> = (0..=full).map(|m| additive[m] * (1.0 + bumps[m % bumps.len()] * (m.count_ones() as f64 - 1.0).max(0.0))).collect();
        let top = v[full];
        v.iter_mut().for_each(|x| *x = (*x / top).min(1.0));
        let (shares, _) = pme_from_total_indices(&v, d).unwrap();
        prop_assert!(shares.iter().all(|s| *s >= 0.0));
        prop_assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}
