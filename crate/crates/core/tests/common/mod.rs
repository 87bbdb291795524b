//! Shared fixtures: streams generated by a known affine recurrence and
//! libraries planted around the generating model.

#![allow(dead_code)]

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use thermens_core::models::{BaseModel, Feature, FeatureSpec, FitMethod, ModelLibrary, D_AMBIENT};
use thermens_core::sim::{Row, RoomDataset};

pub const PLANTED_COEFS: (f64, f64, f64, f64) = (0.9, 2.0e-4, 0.08, 0.3);

pub fn planted_spec() -> FeatureSpec {
    FeatureSpec::new(
        4,
        vec![
            Feature::StateLag(0),
            Feature::CurrentControl,
            Feature::DisturbanceLag { channel: D_AMBIENT, lag: 0 },
        ],
    )
}

fn ts(step: usize) -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 11, 2).unwrap().and_hms_opt(0, 0, 0).unwrap()
        + chrono::Duration::minutes(15 * step as i64)
}

/// Stream whose next state follows the planted recurrence exactly, with
/// randomized control excitation.
pub fn planted_stream(n: usize, noise_sd: f64, seed: u64) -> RoomDataset {
    let (a, b, e, c) = PLANTED_COEFS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd.max(1e-12)).unwrap();
    let mut x = 15.0;
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let amb = 8.0 + 5.0 * (t as f64 * 0.07).sin() + rng.gen_range(-0.5..0.5);
        let u = *[0.0, 500.0, 1000.0, 2000.0, 3000.0].get(rng.gen_range(0..5)).unwrap();
        let occ = if (t / 4) % 24 >= 9 && (t / 4) % 24 < 18 { rng.gen_range(0..3) as f64 } else { 0.0 };
        rows.push(Row {
            timestamp: ts(t),
            t_room: x,
            u_hvac: u,
            t_amb: amb,
            occupancy: occ,
            solar: 0.0,
            day_type: 0.0,
        });
        let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        x = a * x + b * u + e * amb + c + eps;
    }
    RoomDataset { room_id: "planted".into(), sampling_minutes: 15, rows }
}

pub fn model_from_coefs(coefs: (f64, f64, f64, f64), room: &str) -> BaseModel {
    let mut m = BaseModel {
        spec: planted_spec(),
        coefficients: vec![coefs.0, coefs.1, coefs.2],
        intercept: coefs.3,
        source_room: room.to_string(),
        method: FitMethod::Mlr,
        trained_from: ts(0),
        trained_to: ts(100),
        variable_count: 0,
    };
    m.variable_count = m.count_variables(Default::default());
    m
}

/// Library of `n_models` with the exact generating model planted at index 0
/// and perturbed copies elsewhere.
pub fn oracle_library(n_models: usize, seed: u64) -> (ModelLibrary, usize) {
    let (a, b, e, c) = PLANTED_COEFS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut models = vec![model_from_coefs((a, b, e, c), "oracle")];
    for i in 1..n_models {
        let coefs = (
            a + rng.gen_range(-0.08..0.08),
            b * rng.gen_range(0.2..2.5),
            e + rng.gen_range(-0.05..0.05),
            c + rng.gen_range(-1.0..1.0),
        );
        models.push(model_from_coefs(coefs, &format!("noisy_{i}")));
    }
    (ModelLibrary::new(models), 0)
}
