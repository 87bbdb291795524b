//! Fitting oracles: planted-coefficient recovery, pseudo-inverse comparison,
//! stepwise-selection behavior, and the affine-in-control property.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use thermens_core::models::{
    build_feature_vector, fit_dictionary_regression, fit_least_squares, solve_ridge, window_at, Feature,
    FeatureSpec, ModelLibrary, TimeSeriesWindow, VarCountMode, D_AMBIENT,
};
use thermens_core::sim::{Row, RoomDataset};

fn ts(day: u32, step: usize) -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 11, day).unwrap().and_hms_opt(0, 0, 0).unwrap()
        + chrono::Duration::minutes(15 * step as i64)
}

/// Rows where `x_{t+1} = a x_t + b u_t + e amb_t + c` exactly (plus optional noise).
fn planted_dataset(n: usize, coefs: (f64, f64, f64, f64), noise_sd: f64, seed: u64) -> RoomDataset {
    let (a, b, e, c) = coefs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd.max(1e-12)).unwrap();
    let mut x = 20.0;
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let amb = 8.0 + 5.0 * (t as f64 * 0.05).sin();
        let u = *[0.0, 1000.0, 2000.0].get(rng.gen_range(0..3)).unwrap();
        rows.push(Row {
            timestamp: ts(2, t),
            t_room: x,
            u_hvac: u,
            t_amb: amb,
            occupancy: 0.0,
            solar: 0.0,
            day_type: 0.0,
        });
        let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        x = a * x + b * u + e * amb + c + eps;
    }
    RoomDataset { room_id: "planted".into(), sampling_minutes: 15, rows }
}

fn planted_spec() -> FeatureSpec {
    FeatureSpec::new(
        4,
        vec![
            Feature::StateLag(0),
            Feature::CurrentControl,
            Feature::DisturbanceLag { channel: D_AMBIENT, lag: 0 },
        ],
    )
}

#[test]
fn feature_vector_read_off() {
    let window = TimeSeriesWindow::new(
        vec![20.0; 4],
        vec![0.0; 3],
        vec![[10.0, 0.0, 0.0, 0.0]; 4],
        15,
    )
    .unwrap();
    let spec = FeatureSpec::new(
        4,
        vec![
            Feature::StateLag(0),
            Feature::StateLag(1),
            Feature::ControlLag(1),
            Feature::DisturbanceLag { channel: D_AMBIENT, lag: 0 },
            Feature::CurrentControl,
        ],
    );
    let v = build_feature_vector(&window, 0.0, &spec).unwrap();
    assert_eq!(v, vec![20.0, 20.0, 0.0, 10.0, 0.0]);
}

#[test]
fn product_feature_value() {
    let window = TimeSeriesWindow::new(
        vec![18.0, 19.0, 20.0],
        vec![500.0, 700.0],
        vec![[5.0, 0.0, 0.0, 0.0]; 3],
        15,
    )
    .unwrap();
    let spec = FeatureSpec::new(3, vec![Feature::CurrentControlTimesAmbientDelta]);
    let v = build_feature_vector(&window, 1000.0, &spec).unwrap();
    assert_eq!(v, vec![1000.0 * (5.0 - 20.0)]);
}

#[test]
fn weekend_indicator_from_saturday_rows() {
    // 2023-11-04 is a Saturday.
    let rows: Vec<Row> = (0..4)
        .map(|t| Row {
            timestamp: ts(4, t),
            t_room: 20.0,
            u_hvac: 0.0,
            t_amb: 8.0,
            occupancy: 0.0,
            solar: 0.0,
            day_type: 1.0,
        })
        .collect();
    let window = window_at(&rows, 3, 4, 15).unwrap();
    let spec = FeatureSpec::new(4, vec![Feature::DayType]);
    assert_eq!(build_feature_vector(&window, 0.0, &spec).unwrap(), vec![1.0]);
}

#[test]
fn lag_exceeding_window_is_contract_error() {
    let window =
        TimeSeriesWindow::new(vec![20.0; 3], vec![0.0; 2], vec![[0.0; 4]; 3], 15).unwrap();
    let spec = FeatureSpec::new(3, vec![Feature::StateLag(3)]);
    assert!(build_feature_vector(&window, 0.0, &spec).is_err());
}

#[test]
fn noiseless_planted_recovery() {
    let coefs = (0.92, 2.0e-4, 0.05, 0.4);
    let ds = planted_dataset(600, coefs, 0.0, 11);
    let model = fit_least_squares(&ds, &planted_spec(), 1e-8).unwrap();
    assert!((model.coefficients[0] - coefs.0).abs() < 1e-6, "a: {}", model.coefficients[0]);
    assert!((model.coefficients[1] - coefs.1).abs() < 1e-6, "b: {}", model.coefficients[1]);
    assert!((model.coefficients[2] - coefs.2).abs() < 1e-6, "e: {}", model.coefficients[2]);
    assert!((model.intercept - coefs.3).abs() < 1e-6, "c: {}", model.intercept);
}

#[test]
fn intercept_only_spec_recovers_mean() {
    let ds = planted_dataset(200, (0.0, 0.0, 0.0, 21.5), 0.0, 3);
    let spec = FeatureSpec::new(2, vec![]);
    let model = fit_least_squares(&ds, &spec, 1e-8).unwrap();
    assert!((model.intercept - 21.5).abs() < 1e-9);
}

#[test]
fn duplicated_column_matches_pseudo_inverse_residual() {
    let ds = planted_dataset(400, (0.9, 1.5e-4, 0.08, 0.2), 0.05, 21);
    let spec = FeatureSpec::new(
        4,
        vec![
            Feature::StateLag(0),
            Feature::StateLag(0), // duplicate
            Feature::CurrentControl,
            Feature::DisturbanceLag { channel: D_AMBIENT, lag: 0 },
        ],
    );
    let model = fit_least_squares(&ds, &spec, 1e-8).unwrap();
    assert!(model.coefficients.iter().all(|c| c.is_finite()));

    // Independent route: minimum-norm least squares via SVD pseudo-inverse.
    let l = spec.lookback;
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for t in l - 1..ds.rows.len() - 1 {
        let w = window_at(&ds.rows, t, l, 15).unwrap();
        let mut feats = build_feature_vector(&w, ds.rows[t].u_hvac, &spec).unwrap();
        feats.push(1.0);
        rows.push(feats);
        ys.push(ds.rows[t + 1].t_room);
    }
    let n = rows.len();
    let p = rows[0].len();
    let a = nalgebra::DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let y = nalgebra::DVector::from_vec(ys.clone());
    let beta = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-10)
        .expect("svd solve");
    let oracle_rss = (&a * &beta - &y).norm_squared();

    let model_rss: f64 = (l - 1..ds.rows.len() - 1)
        .map(|t| {
            let w = window_at(&ds.rows, t, l, 15).unwrap();
            let pred = model.predict(&w, ds.rows[t].u_hvac).unwrap();
            let e = ds.rows[t + 1].t_room - pred;
            e * e
        })
        .sum();
    assert!(
        (model_rss - oracle_rss).abs() < 1e-8,
        "ridge residual {model_rss} vs pseudo-inverse residual {oracle_rss}"
    );
}

#[test]
fn fit_residual_is_local_minimum() {
    let ds = planted_dataset(500, (0.9, 1.5e-4, 0.08, 0.2), 0.3, 5);
    let spec = planted_spec();
    let ridge = 1e-8;
    let model = fit_least_squares(&ds, &spec, ridge).unwrap();

    let penalized = |coefs: &[f64], intercept: f64| -> f64 {
        let l = spec.lookback;
        let mut sse = 0.0;
        for t in l - 1..ds.rows.len() - 1 {
            let w = window_at(&ds.rows, t, l, 15).unwrap();
            let feats = build_feature_vector(&w, ds.rows[t].u_hvac, &spec).unwrap();
            let pred = intercept + feats.iter().zip(coefs).map(|(f, c)| f * c).sum::<f64>();
            let e = ds.rows[t + 1].t_room - pred;
            sse += e * e;
        }
        sse + ridge * coefs.iter().map(|c| c * c).sum::<f64>()
    };

    let base = penalized(&model.coefficients, model.intercept);
    for j in 0..model.coefficients.len() {
        for delta in [-1e-3, 1e-3] {
            let mut c = model.coefficients.clone();
            c[j] += delta;
            assert!(
                penalized(&c, model.intercept) >= base - 1e-9,
                "perturbing coefficient {j} by {delta} reduced the training loss"
            );
        }
    }
    for delta in [-1e-3, 1e-3] {
        assert!(penalized(&model.coefficients, model.intercept + delta) >= base - 1e-9);
    }
}

#[test]
fn dictionary_recovers_planted_terms() {
    // Target built from exactly two dictionary terms plus sigma = 0.01 noise.
    let ds = planted_dataset(800, (0.95, 2.0e-4, 0.0, 1.0), 0.01, 31);
    let dict = FeatureSpec::dictionary(4);
    let model = fit_dictionary_regression(&ds, &dict, 6, 1e-8).unwrap();
    assert!(
        model.spec.features.contains(&Feature::StateLag(0)),
        "missing state term: {:?}",
        model.spec.features
    );
    assert!(
        model.spec.features.contains(&Feature::CurrentControl),
        "missing control term: {:?}",
        model.spec.features
    );
    let mse = thermens_core::models::training_mse(&model, &ds).unwrap();
    assert!(mse < 1e-3, "residual mse {mse}");
}

#[test]
fn dictionary_single_term_matches_brute_force() {
    let ds = planted_dataset(600, (0.95, 2.0e-4, 0.0, 1.0), 0.01, 41);
    let dict = FeatureSpec::dictionary(4);
    let model = fit_dictionary_regression(&ds, &dict, 1, 1e-8).unwrap();
    assert_eq!(model.spec.len(), 1);

    // Brute force: refit every single-term model and take the smallest RSS.
    let l = dict.lookback;
    let mut best: Option<(f64, Feature)> = None;
    for &feat in &dict.features {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for t in l - 1..ds.rows.len() - 1 {
            let w = window_at(&ds.rows, t, l, 15).unwrap();
            let spec1 = FeatureSpec::new(l, vec![feat]);
            rows.push(build_feature_vector(&w, ds.rows[t].u_hvac, &spec1).unwrap());
            ys.push(ds.rows[t + 1].t_room);
        }
        let (coefs, intercept) = solve_ridge(&rows, &ys, 1e-8).unwrap();
        let rss: f64 = rows
            .iter()
            .zip(&ys)
            .map(|(r, &y)| {
                let p = intercept + r[0] * coefs[0];
                (y - p) * (y - p)
            })
            .sum();
        if best.map_or(true, |(b, _)| rss < b) {
            best = Some((rss, feat));
        }
    }
    assert_eq!(model.spec.features[0], best.unwrap().1);
}

#[test]
fn dictionary_pure_noise_stays_small() {
    let mut ds = planted_dataset(600, (0.0, 0.0, 0.0, 0.0), 0.0, 51);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let noise = Normal::new(0.0, 1.0).unwrap();
    for row in &mut ds.rows {
        row.t_room = noise.sample(&mut rng);
    }
    let dict = FeatureSpec::dictionary(4);
    let model = fit_dictionary_regression(&ds, &dict, 6, 1e-8).unwrap();
    assert!(model.spec.len() <= 1, "selected {:?}", model.spec.features);
}

#[test]
fn variable_count_definitions() {
    let spec = FeatureSpec::new(
        4,
        vec![Feature::StateLag(0), Feature::StateLag(1), Feature::CurrentControl],
    );
    let mut model = thermens_core::models::BaseModel {
        spec,
        coefficients: vec![0.5, 0.3, 1e-4],
        intercept: 1.0,
        source_room: "r".into(),
        method: thermens_core::models::FitMethod::Mlr,
        trained_from: ts(2, 0),
        trained_to: ts(2, 10),
        variable_count: 0,
    };
    // x appears twice, u once: 2 distinct raw variables.
    assert_eq!(model.count_variables(VarCountMode::DistinctRaw), 2);
    assert_eq!(model.count_variables(VarCountMode::TermCount), 3);
    model.coefficients = vec![0.0, 0.0, 0.0];
    assert_eq!(model.count_variables(VarCountMode::DistinctRaw), 0);
}

#[test]
fn fitted_count_matches_recount() {
    let ds = planted_dataset(600, (0.92, 2.0e-4, 0.05, 0.4), 0.1, 61);
    let model = fit_least_squares(&ds, &FeatureSpec::default_mlr(4), 1e-8).unwrap();
    let mut expect = std::collections::BTreeSet::new();
    for (f, c) in model.spec.features.iter().zip(&model.coefficients) {
        if c.abs() > 1e-12 {
            expect.extend(f.raw_vars());
        }
    }
    assert_eq!(model.variable_count, expect.len());
}

#[test]
fn library_roundtrip_is_bit_identical() {
    let ds = planted_dataset(600, (0.92, 2.0e-4, 0.05, 0.4), 0.1, 71);
    let m1 = fit_least_squares(&ds, &FeatureSpec::default_mlr(4), 1e-8).unwrap();
    let m2 = fit_dictionary_regression(&ds, &FeatureSpec::dictionary(4), 6, 1e-8).unwrap();
    let lib = ModelLibrary::new(vec![m1, m2]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("library.json");
    lib.save(&path).unwrap();
    let back = ModelLibrary::load(&path).unwrap();
    assert_eq!(lib.len(), back.len());

    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(10.0..30.0)).collect();
        let u: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..3000.0)).collect();
        let d: Vec<[f64; 4]> = (0..4)
            .map(|_| [rng.gen_range(-5.0..15.0), rng.gen_range(0.0..4.0), rng.gen_range(0.0..500.0), 0.0])
            .collect();
        let w = TimeSeriesWindow::new(x, u, d, 15).unwrap();
        let u_t = rng.gen_range(0.0..3000.0);
        for i in 0..lib.len() {
            let a = lib.get(i).predict(&w, u_t).unwrap();
            let b = back.get(i).predict(&w, u_t).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn predictions_are_affine_in_control() {
    let ds = planted_dataset(600, (0.92, 2.0e-4, 0.05, 0.4), 0.1, 81);
    let models = [
        fit_least_squares(&ds, &FeatureSpec::default_mlr(4), 1e-8).unwrap(),
        fit_dictionary_regression(&ds, &FeatureSpec::dictionary(4), 6, 1e-8).unwrap(),
    ];
    let w = window_at(&ds.rows, 10, 4, 15).unwrap();
    for m in &models {
        // Second finite difference in u_t vanishes for an affine map.
        let h = 500.0;
        let f0 = m.predict(&w, 1000.0 - h).unwrap();
        let f1 = m.predict(&w, 1000.0).unwrap();
        let f2 = m.predict(&w, 1000.0 + h).unwrap();
        assert!((f2 - 2.0 * f1 + f0).abs() < 1e-9);
    }
    // Pure linear-u spec obeys the affine identity exactly.
    let m = fit_least_squares(&ds, &planted_spec(), 1e-8).unwrap();
    let (a, b) = (700.0, 1900.0);
    let lhs = m.predict(&w, a).unwrap() + m.predict(&w, b).unwrap() - m.predict(&w, 0.0).unwrap();
    let rhs = m.predict(&w, a + b).unwrap();
    assert!((lhs - rhs).abs() < 1e-9);
}

#[test]
fn degenerate_model_predicts_intercept() {
    let spec = FeatureSpec::new(3, vec![Feature::StateLag(0), Feature::CurrentControl]);
    let model = thermens_core::models::BaseModel {
        spec,
        coefficients: vec![0.0, 0.0],
        intercept: 21.0,
        source_room: "r".into(),
        method: thermens_core::models::FitMethod::Mlr,
        trained_from: ts(2, 0),
        trained_to: ts(2, 10),
        variable_count: 0,
    };
    let w = TimeSeriesWindow::new(vec![15.0; 3], vec![100.0; 2], vec![[0.0; 4]; 3], 15).unwrap();
    assert_eq!(model.predict(&w, 2500.0).unwrap(), 21.0);
    assert_eq!(model.predict(&w, 0.0).unwrap(), 21.0);
}

#[test]
fn insufficient_rows_is_fit_error() {
    let ds = planted_dataset(20, (0.9, 1e-4, 0.0, 0.5), 0.0, 91);
    let err = fit_least_squares(&ds, &FeatureSpec::default_mlr(4), 1e-8).unwrap_err();
    assert!(matches!(err, thermens_core::Error::Fit(_)));
}
