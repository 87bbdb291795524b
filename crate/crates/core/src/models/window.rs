use crate::error::{Error, Result};
use crate::sim::Row;

pub const D_AMBIENT: usize = 0;
pub const D_OCCUPANCY: usize = 1;
pub const D_SOLAR: usize = 2;
pub const D_DAY_TYPE: usize = 3;
pub const DIST_CHANNELS: usize = 4;

/// Look-back slice ending at time `t`, stored in ascending time order:
/// `x` has length `L` with `x[L-1] = x_t`, `u` has length `L-1` with
/// `u[L-2] = u_{t-1}`, and `d` has one row of disturbance channels per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<[f64; DIST_CHANNELS]>,
    pub sampling_minutes: u32,
}

impl TimeSeriesWindow {
    pub fn new(x: Vec<f64>, u: Vec<f64>, d: Vec<[f64; DIST_CHANNELS]>, sampling_minutes: u32) -> Result<Self> {
        let l = x.len();
        if l < 2 {
            return Err(Error::contract("window look-back must be at least 2"));
        }
        if u.len() != l - 1 || d.len() != l {
            return Err(Error::contract(format!(
                "window lengths must be L, L-1, L; got x: {}, u: {}, d: {}",
                l,
                u.len(),
                d.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite())
            || u.iter().any(|v| !v.is_finite())
            || d.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::contract("window contains missing or non-finite values"));
        }
        Ok(TimeSeriesWindow { x, u, d, sampling_minutes })
    }

    /// Look-back length `L`.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `x_{t-k}`.
    pub fn x_lag(&self, k: usize) -> Result<f64> {
        let l = self.len();
        if k >= l {
            return Err(Error::contract(format!("state lag {k} exceeds window of length {l}")));
        }
        Ok(self.x[l - 1 - k])
    }

    /// `u_{t-k}` for `k` in `1..L`.
    pub fn u_lag(&self, k: usize) -> Result<f64> {
        let l = self.len();
        if k == 0 || k >= l {
            return Err(Error::contract(format!(
                "control lag {k} outside 1..{} for window of length {l}",
                l - 1
            )));
        }
        Ok(self.u[l - 1 - k])
    }

    /// Disturbance channel at lag `k`.
    pub fn d_lag(&self, channel: usize, k: usize) -> Result<f64> {
        let l = self.len();
        if channel >= DIST_CHANNELS {
            return Err(Error::contract(format!("disturbance channel {channel} out of range")));
        }
        if k >= l {
            return Err(Error::contract(format!("disturbance lag {k} exceeds window of length {l}")));
        }
        Ok(self.d[l - 1 - k][channel])
    }

    /// Shift the window one step forward: the model's prediction becomes the
    /// newest state, `applied_u` the newest past control, `next_d` the newest
    /// disturbance row. Used by multi-step controller rollouts.
    pub fn advance(&self, new_x: f64, applied_u: f64, next_d: [f64; DIST_CHANNELS]) -> Self {
        let mut x = self.x[1..].to_vec();
        x.push(new_x);
        let mut u = self.u[1..].to_vec();
        u.push(applied_u);
        let mut d = self.d[1..].to_vec();
        d.push(next_d);
        TimeSeriesWindow { x, u, d, sampling_minutes: self.sampling_minutes }
    }
}

/// Window over `rows[t-L+1 ..= t]`.
pub fn window_at(rows: &[Row], t: usize, lookback: usize, sampling_minutes: u32) -> Result<TimeSeriesWindow> {
    if lookback < 2 {
        return Err(Error::contract("look-back must be at least 2"));
    }
    if t + 1 < lookback || t >= rows.len() {
        return Err(Error::contract(format!(
            "cannot build window at t = {t} with look-back {lookback} over {} rows",
            rows.len()
        )));
    }
    let slice = &rows[t + 1 - lookback..=t];
    let x = slice.iter().map(|r| r.t_room).collect();
    let u = slice[..lookback - 1].iter().map(|r| r.u_hvac).collect();
    let d = slice
        .iter()
        .map(|r| [r.t_amb, r.occupancy, r.solar, r.day_type])
        .collect();
    TimeSeriesWindow::new(x, u, d, sampling_minutes)
}
