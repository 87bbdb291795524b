use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One exogenous sample handed to the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExoSample {
    pub t_ambient: f64,
    /// Headcount, >= 0.
    pub occupancy: f64,
    /// Irradiance, W/m^2, >= 0.
    pub solar_wm2: f64,
    /// 1.0 on weekends, 0.0 on workdays.
    pub day_type: f64,
    /// Nominal peak irradiance used to normalize solar gain.
    pub solar_peak_wm2: f64,
}

impl ExoSample {
    /// Irradiance as a fraction of the nominal peak.
    pub fn solar_norm(&self) -> f64 {
        if self.solar_peak_wm2 > 0.0 {
            self.solar_wm2 / self.solar_peak_wm2
        } else {
            0.0
        }
    }
}

/// Generator settings for ambient temperature, occupancy, and solar series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoConfig {
    pub start: NaiveDateTime,
    pub sampling_minutes: u32,
    pub ambient_mean_c: f64,
    pub ambient_daily_amp_c: f64,
    /// Clock hour of the daily ambient maximum.
    pub ambient_peak_hour: f64,
    pub ambient_trend_amp_c: f64,
    pub ambient_trend_period_days: f64,
    pub ambient_noise_sd_c: f64,
    pub occupancy_max: u32,
    pub occupancy_start_hour: u32,
    pub occupancy_end_hour: u32,
    pub solar_peak_wm2: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
}

impl Default for ExoConfig {
    fn default() -> Self {
        ExoConfig {
            start: chrono::NaiveDate::from_ymd_opt(2023, 11, 2).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            sampling_minutes: 15,
            ambient_mean_c: 8.0,
            ambient_daily_amp_c: 5.0,
            ambient_peak_hour: 15.0,
            ambient_trend_amp_c: 3.0,
            ambient_trend_period_days: 30.0,
            ambient_noise_sd_c: 0.5,
            occupancy_max: 4,
            occupancy_start_hour: 9,
            occupancy_end_hour: 18,
            solar_peak_wm2: 500.0,
            sunrise_hour: 7.0,
            sunset_hour: 17.0,
        }
    }
}

/// Aligned exogenous columns at a uniform sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub t_ambient: Vec<f64>,
    pub occupancy: Vec<f64>,
    pub solar_wm2: Vec<f64>,
    pub day_type: Vec<f64>,
    pub solar_peak_wm2: f64,
}

impl ExogenousSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn sample(&self, i: usize) -> ExoSample {
        ExoSample {
            t_ambient: self.t_ambient[i],
            occupancy: self.occupancy[i],
            solar_wm2: self.solar_wm2[i],
            day_type: self.day_type[i],
            solar_peak_wm2: self.solar_peak_wm2,
        }
    }
}

pub fn is_weekend(ts: &NaiveDateTime) -> bool {
    matches!(ts.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Build a deterministic exogenous series of `horizon` steps.
///
/// Ambient = daily sinusoid + slow trend + Gaussian noise; occupancy is
/// nonzero only within the schedule window on workdays; solar is a clipped
/// half-sine between sunrise and sunset.
pub fn synthesize_exogenous(config: &ExoConfig, horizon: usize, seed: u64) -> Result<ExogenousSeries> {
    if horizon == 0 {
        return Err(Error::config("exogenous horizon must be positive"));
    }
    if config.sampling_minutes == 0 || 1440 % config.sampling_minutes != 0 {
        return Err(Error::config(format!(
            "sampling_minutes = {} must divide a day",
            config.sampling_minutes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.ambient_noise_sd_c.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    let step = chrono::Duration::minutes(config.sampling_minutes as i64);

    let n = horizon;
    let mut out = ExogenousSeries {
        timestamps: Vec::with_capacity(n),
        t_ambient: Vec::with_capacity(n),
        occupancy: Vec::with_capacity(n),
        solar_wm2: Vec::with_capacity(n),
        day_type: Vec::with_capacity(n),
        solar_peak_wm2: config.solar_peak_wm2,
    };

    // Hourly occupancy counts are drawn up front so the headcount is constant
    // within an hour instead of flickering per sample.
    let steps_per_day = (1440 / config.sampling_minutes) as usize;
    let days = n.div_ceil(steps_per_day) + 1;
    let mut hourly_occ = Vec::with_capacity(days * 24);
    for _ in 0..days * 24 {
        hourly_occ.push(1.0 + rng.gen_range(0..=config.occupancy_max.saturating_sub(1)) as f64);
    }

    let mut ts = config.start;
    for i in 0..n {
        let hour = ts.hour() as f64 + ts.minute() as f64 / 60.0;
        let day_frac = i as f64 / steps_per_day as f64;

        let daily = config.ambient_daily_amp_c
            * (2.0 * std::f64::consts::PI * (hour - config.ambient_peak_hour) / 24.0).cos();
        let trend = if config.ambient_trend_amp_c != 0.0 {
            config.ambient_trend_amp_c
                * (2.0 * std::f64::consts::PI * day_frac / config.ambient_trend_period_days).sin()
        } else {
            0.0
        };
        let eps = if config.ambient_noise_sd_c > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let t_amb = config.ambient_mean_c + daily + trend + eps;

        let weekend = is_weekend(&ts);
        let in_schedule =
            ts.hour() >= config.occupancy_start_hour && ts.hour() < config.occupancy_end_hour;
        let occ = if !weekend && in_schedule {
            let hour_index = i / (60 / config.sampling_minutes) as usize;
            hourly_occ[hour_index]
        } else {
            0.0
        };

        let solar = if hour >= config.sunrise_hour && hour <= config.sunset_hour {
            let span = config.sunset_hour - config.sunrise_hour;
            config.solar_peak_wm2 * (std::f64::consts::PI * (hour - config.sunrise_hour) / span).sin().max(0.0)
        } else {
            0.0
        };

        out.timestamps.push(ts);
        out.t_ambient.push(t_amb);
        out.occupancy.push(occ);
        out.solar_wm2.push(solar);
        out.day_type.push(if weekend { 1.0 } else { 0.0 });
        ts += step;
    }
    Ok(out)
}
