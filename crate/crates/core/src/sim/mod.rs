//! 2R2C gray-box thermal simulator.
//!
//! Each room is a two-node lumped circuit: an air node driven by HVAC,
//! occupant, and solar gains, and a wall node that exchanges heat with both
//! the air and the ambient. Explicit Euler at short substeps keeps the
//! integration trivially checkable by hand.

mod dataset;
mod exo;

pub use dataset::{generate_room_dataset, sample_room, DatasetConfig, RoomDataset, RoomMeta, Row, ThermostatConfig};
pub use exo::{synthesize_exogenous, ExoConfig, ExoSample, ExogenousSeries};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperatures outside this band abort the simulation as a blow-up.
pub const PLAUSIBLE_C: (f64, f64) = (-20.0, 50.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    /// Fraction of nominal solar gain reaching the room.
    pub fn solar_factor(&self) -> f64 {
        match self {
            Orientation::South => 1.0,
            Orientation::East | Orientation::West => 0.6,
            Orientation::North => 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HvacMode {
    Heating,
    Cooling,
}

impl HvacMode {
    fn sign(&self) -> f64 {
        match self {
            HvacMode::Heating => 1.0,
            HvacMode::Cooling => -1.0,
        }
    }
}

/// Lumped thermal parameters of one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomParams {
    /// Air-node heat capacity, J/K.
    pub c_room: f64,
    /// Wall-node heat capacity, J/K.
    pub c_wall: f64,
    /// Room-wall resistance, K/W.
    pub r_room_wall: f64,
    /// Room-ambient (and wall-ambient) resistance, K/W.
    pub r_room_ambient: f64,
    /// HVAC conversion efficiency (thermal W per electrical W).
    pub hvac_efficiency: f64,
    /// Solar gain at peak irradiance before the orientation factor, W.
    pub solar_gain_peak: f64,
    /// Heat emitted per occupant, W.
    pub occupant_gain: f64,
    pub orientation: Orientation,
    pub mode: HvacMode,
}

impl RoomParams {
    pub fn validate(&self) -> Result<()> {
        if self.c_room <= 0.0 || self.c_wall <= 0.0 || self.r_room_wall <= 0.0 || self.r_room_ambient <= 0.0 {
            return Err(Error::contract("room capacitances and resistances must be strictly positive"));
        }
        if self.hvac_efficiency <= 0.0 || self.hvac_efficiency > 5.0 {
            return Err(Error::contract("hvac_efficiency must lie in (0, 5]"));
        }
        Ok(())
    }

    /// Draw heterogeneous but stable parameters.
    pub fn sample(rng: &mut impl Rng, mode: HvacMode) -> Self {
        let orientation = match rng.gen_range(0..4) {
            0 => Orientation::North,
            1 => Orientation::East,
            2 => Orientation::South,
            _ => Orientation::West,
        };
        RoomParams {
            c_room: rng.gen_range(1.0e6..=8.0e6),
            c_wall: rng.gen_range(5.0e6..=3.0e7),
            r_room_wall: rng.gen_range(0.002..=0.02),
            r_room_ambient: rng.gen_range(0.01..=0.05),
            hvac_efficiency: rng.gen_range(0.8..=3.5),
            solar_gain_peak: rng.gen_range(100.0..=800.0),
            occupant_gain: rng.gen_range(80.0..=120.0),
            orientation,
            mode,
        }
    }
}

/// Instantaneous thermal state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomState {
    pub t_room: f64,
    pub t_wall: f64,
}

impl RoomState {
    pub fn uniform(t: f64) -> Self {
        RoomState { t_room: t, t_wall: t }
    }
}

/// One explicit-Euler substep of the 2R2C circuit.
///
/// Room node: `C_r dT_r/dt = (T_w - T_r)/R_rw + (T_a - T_r)/R_ra + s n u + q_occ + q_sol`,
/// wall node: the analogous exchange terms without HVAC or internal gains.
pub fn step_room(state: RoomState, u: f64, exo: &ExoSample, params: &RoomParams, dt: f64) -> Result<RoomState> {
    if dt <= 0.0 || dt > 120.0 {
        return Err(Error::contract(format!("integration substep dt = {dt} s outside (0, 120]")));
    }
    if u < 0.0 {
        return Err(Error::contract(format!("hvac power u = {u} W must be nonnegative")));
    }
    let q_hvac = params.mode.sign() * params.hvac_efficiency * u;
    let q_occ = exo.occupancy * params.occupant_gain;
    let q_sol = exo.solar_norm() * params.solar_gain_peak * params.orientation.solar_factor();

    let flow_wall_room = (state.t_wall - state.t_room) / params.r_room_wall;
    let flow_amb_room = (exo.t_ambient - state.t_room) / params.r_room_ambient;
    let d_room = (flow_wall_room + flow_amb_room + q_hvac + q_occ + q_sol) / params.c_room;

    let flow_room_wall = (state.t_room - state.t_wall) / params.r_room_wall;
    let flow_amb_wall = (exo.t_ambient - state.t_wall) / params.r_room_ambient;
    let d_wall = (flow_room_wall + flow_amb_wall) / params.c_wall;

    let next = RoomState {
        t_room: state.t_room + dt * d_room,
        t_wall: state.t_wall + dt * d_wall,
    };
    let (lo, hi) = PLAUSIBLE_C;
    if !next.t_room.is_finite()
        || !next.t_wall.is_finite()
        || next.t_room < lo
        || next.t_room > hi
        || next.t_wall < lo
        || next.t_wall > hi
    {
        return Err(Error::SimBlowUp {
            dt,
            msg: format!(
                "state left [{lo}, {hi}] degC: t_room = {:.2}, t_wall = {:.2}, params = {params:?}",
                next.t_room, next.t_wall
            ),
        });
    }
    Ok(next)
}
