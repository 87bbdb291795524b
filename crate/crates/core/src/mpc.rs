//! Receding-horizon controller over one-step what-if models, plus the
//! closed-loop harness that drives the thermal simulator with it.
//!
//! Candidates are discrete power levels held constant over the horizon, so a
//! decision costs `H * |U|` model evaluations; only the first step is applied.

use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ActionMode, HrlAgents};
use crate::engine::ErrorTracker;
use crate::error::{Error, Result};
use crate::models::{window_at, BaseModel, ModelLibrary};
use crate::sim::{step_room, ExoSample, ExogenousSeries, RoomParams, RoomState, Row};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub setpoint_c: f64,
    /// Comfort half-band around the setpoint.
    pub band_c: f64,
    pub window_start_hour: u32,
    pub window_end_hour: u32,
    pub comfort_weight: f64,
    pub energy_weight_per_kwh: f64,
    pub penalty_weight: f64,
    pub t_min_c: f64,
    pub t_max_c: f64,
    pub power_limit_w: f64,
    pub horizon: usize,
    pub candidates_w: Vec<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            setpoint_c: 20.0,
            band_c: 2.0,
            window_start_hour: 10,
            window_end_hour: 20,
            comfort_weight: 1.0,
            energy_weight_per_kwh: 0.15,
            penalty_weight: 100.0,
            t_min_c: 5.0,
            t_max_c: 35.0,
            power_limit_w: 4000.0,
            horizon: 1,
            candidates_w: (0..=8).map(|i| i as f64 * 500.0).collect(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.band_c <= 0.0 {
            bad.push("band_c");
        }
        if self.candidates_w.is_empty() || !self.candidates_w.contains(&0.0) {
            bad.push("candidates_w (must be nonempty and include 0)");
        }
        if self.horizon == 0 {
            bad.push("horizon");
        }
        if self.window_end_hour <= self.window_start_hour || self.window_end_hour > 24 {
            bad.push("comfort window hours");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("invalid mpc config: {}", bad.join(", "))))
        }
    }

    pub fn in_comfort_window(&self, ts: &NaiveDateTime) -> bool {
        ts.hour() >= self.window_start_hour && ts.hour() < self.window_end_hour
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub j_comfort: f64,
    pub j_consume: f64,
    pub p_e: f64,
    pub total: f64,
}

/// Cost of a predicted trajectory under constant-per-step controls.
/// `in_window[k]` flags whether the temperature at step `k` falls inside the
/// comfort schedule.
pub fn evaluate_objective(
    temps: &[f64],
    controls: &[f64],
    in_window: &[bool],
    dt_s: f64,
    cfg: &MpcConfig,
) -> ObjectiveBreakdown {
    debug_assert_eq!(temps.len(), controls.len());
    debug_assert_eq!(temps.len(), in_window.len());
    let mut j_comfort = 0.0;
    let mut j_consume = 0.0;
    let mut p_e = 0.0;
    for ((&t, &u), &inw) in temps.iter().zip(controls).zip(in_window) {
        if inw {
            let excess = ((t - cfg.setpoint_c).abs() - cfg.band_c).max(0.0);
            j_comfort += cfg.comfort_weight * excess * excess;
        }
        j_consume += cfg.energy_weight_per_kwh * u * dt_s / 3.6e6;
        let hot = (t - cfg.t_max_c).max(0.0);
        let cold = (cfg.t_min_c - t).max(0.0);
        let over = ((u - cfg.power_limit_w).max(0.0)) / 1000.0;
        p_e += cfg.penalty_weight * (hot * hot + cold * cold + over * over);
    }
    ObjectiveBreakdown { j_comfort, j_consume, p_e, total: j_comfort + j_consume + p_e }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: f64,
    pub predicted: Vec<f64>,
    pub objective: ObjectiveBreakdown,
    /// Set when every candidate failed and the controller fell back to 0 W.
    pub fallback: bool,
}

/// Exhaustive argmin over the candidate grid. `rollout` maps a constant
/// control to the H-step predicted temperature trajectory. Ties break toward
/// lower total energy, then lower `u`; candidates with non-finite predictions
/// are discarded, and if none survive the decision falls back to `u = 0`.
pub fn choose_control(
    rollout: impl Fn(f64) -> Result<Vec<f64>>,
    in_window: &[bool],
    dt_s: f64,
    cfg: &MpcConfig,
) -> Result<ControlDecision> {
    cfg.validate()?;
    let mut candidates = cfg.candidates_w.clone();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best: Option<ControlDecision> = None;
    for &u in &candidates {
        let temps = match rollout(u) {
            Ok(t) => t,
            Err(_) => continue,
        };
        if temps.len() != cfg.horizon || temps.iter().any(|t| !t.is_finite()) {
            continue;
        }
        let controls = vec![u; cfg.horizon];
        let objective = evaluate_objective(&temps, &controls, in_window, dt_s, cfg);
        let better = match &best {
            None => true,
            // Ascending candidate order makes "strictly less" implement the
            // lower-energy-then-lower-u tie-break.
            Some(b) => objective.total < b.objective.total,
        };
        if better {
            best = Some(ControlDecision { u, predicted: temps, objective, fallback: false });
        }
    }
    Ok(best.unwrap_or(ControlDecision {
        u: 0.0,
        predicted: Vec::new(),
        objective: ObjectiveBreakdown::default(),
        fallback: true,
    }))
}

/// What-if model driving the controller.
pub enum ModelSource<'a> {
    /// True physics with access to the hidden wall state (oracle).
    Physics(&'a RoomParams),
    /// One customized base model.
    Single(&'a BaseModel),
    /// Greedy hierarchical ensemble with a live error tracker.
    Ensemble { library: &'a ModelLibrary, agents: &'a HrlAgents },
}

impl ModelSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSource::Physics(_) => "physics",
            ModelSource::Single(_) => "single",
            ModelSource::Ensemble { .. } => "hrl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRow {
    pub timestamp: NaiveDateTime,
    pub t_room: f64,
    pub u_chosen: f64,
    pub j_comfort: f64,
    pub j_consume: f64,
    pub p_e: f64,
    pub energy_kwh_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    pub rows: Vec<ClosedLoopRow>,
    pub energy_kwh: f64,
    /// Fraction of comfort-window steps with |T - setpoint| <= band.
    pub compliance: f64,
    pub j_total: f64,
}

const SUBSTEP_S: f64 = 60.0;

fn advance_truth(
    state: RoomState,
    u: f64,
    exo: &ExoSample,
    params: &RoomParams,
    interval_s: f64,
) -> Result<RoomState> {
    let substeps = (interval_s / SUBSTEP_S).round() as usize;
    let mut s = state;
    for _ in 0..substeps {
        s = step_room(s, u, exo, params, SUBSTEP_S)?;
    }
    Ok(s)
}

fn realized_row(
    ts: NaiveDateTime,
    t_room: f64,
    u: f64,
    dt_s: f64,
    cfg: &MpcConfig,
    energy_kwh_cum: f64,
) -> ClosedLoopRow {
    let ob = evaluate_objective(&[t_room], &[u], &[cfg.in_comfort_window(&ts)], dt_s, cfg);
    ClosedLoopRow {
        timestamp: ts,
        t_room,
        u_chosen: u,
        j_comfort: ob.j_comfort,
        j_consume: ob.j_consume,
        p_e: ob.p_e,
        energy_kwh_cum,
    }
}

/// Drive the simulator with the controller for `run_steps` decisions after a
/// thermostat-driven warmup that fills the look-back window (and, for the
/// ensemble source, the error tracker).
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_simulate(
    params: &RoomParams,
    init: RoomState,
    exo: &ExogenousSeries,
    warmup_steps: usize,
    run_steps: usize,
    source: &ModelSource,
    cfg: &MpcConfig,
    lookback: usize,
) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    params.validate()?;
    let sampling_minutes = {
        let gap = exo.timestamps[1] - exo.timestamps[0];
        gap.num_minutes() as u32
    };
    let interval_s = sampling_minutes as f64 * 60.0;
    if warmup_steps < lookback {
        return Err(Error::config(format!(
            "warmup of {warmup_steps} steps cannot fill a look-back of {lookback}"
        )));
    }
    if warmup_steps + run_steps + cfg.horizon >= exo.len() {
        return Err(Error::config("exogenous series too short for the requested run"));
    }

    let mut state = init;
    let mut rows: Vec<Row> = Vec::with_capacity(warmup_steps + run_steps);
    let mut tracker = ErrorTracker::new(match source {
        ModelSource::Ensemble { library, .. } => library.len(),
        _ => 0,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0); // greedy acts never draw

    // Warmup: bang-bang toward the setpoint at the largest candidate power.
    let warm_power = cfg.candidates_w.iter().cloned().fold(0.0, f64::max);
    let mut heater_on = false;
    for t in 0..warmup_steps {
        let sample = exo.sample(t);
        if state.t_room < cfg.setpoint_c - 0.5 {
            heater_on = true;
        } else if state.t_room > cfg.setpoint_c + 0.5 {
            heater_on = false;
        }
        let u = if heater_on { warm_power } else { 0.0 };
        rows.push(Row {
            timestamp: exo.timestamps[t],
            t_room: state.t_room,
            u_hvac: u,
            t_amb: sample.t_ambient,
            occupancy: sample.occupancy,
            solar: sample.solar_wm2,
            day_type: sample.day_type,
        });
        // Keep the ensemble tracker warm during the prefix.
        if let ModelSource::Ensemble { library, .. } = source {
            if rows.len() > lookback {
                let t_idx = rows.len() - 2;
                let window = window_at(&rows, t_idx, lookback, sampling_minutes)?;
                let next = advance_truth(state, u, &sample, params, interval_s)?;
                let errs: Vec<f64> = library
                    .predict_all(&window, u)?
                    .iter()
                    .map(|p| (p - next.t_room) * (p - next.t_room))
                    .collect();
                tracker.update(errs);
                state = next;
                continue;
            }
        }
        state = advance_truth(state, u, &sample, params, interval_s)?;
    }

    // MPC phase.
    let mut log = Vec::with_capacity(run_steps);
    let mut energy_kwh = 0.0;
    let mut compliant = 0usize;
    let mut window_steps = 0usize;
    let mut j_total = 0.0;

    for step in 0..run_steps {
        let t = warmup_steps + step;
        let ts = exo.timestamps[t];
        let sample = exo.sample(t);
        rows.push(Row {
            timestamp: ts,
            t_room: state.t_room,
            u_hvac: 0.0, // patched below with the chosen control
            t_amb: sample.t_ambient,
            occupancy: sample.occupancy,
            solar: sample.solar_wm2,
            day_type: sample.day_type,
        });
        let t_idx = rows.len() - 1;
        let window = window_at(&rows, t_idx, lookback, sampling_minutes)?;

        let future_d: Vec<[f64; 4]> = (1..=cfg.horizon)
            .map(|k| {
                let s = exo.sample(t + k);
                [s.t_ambient, s.occupancy, s.solar_wm2, s.day_type]
            })
            .collect();
        let in_window: Vec<bool> = (1..=cfg.horizon)
            .map(|k| cfg.in_comfort_window(&exo.timestamps[t + k]))
            .collect();

        let decision = match source {
            ModelSource::Physics(p) => {
                let base = state;
                choose_control(
                    |u| {
                        let mut s = base;
                        let mut traj = Vec::with_capacity(cfg.horizon);
                        for k in 0..cfg.horizon {
                            s = advance_truth(s, u, &exo.sample(t + k), p, interval_s)?;
                            traj.push(s.t_room);
                        }
                        Ok(traj)
                    },
                    &in_window,
                    interval_s,
                    cfg,
                )?
            }
            ModelSource::Single(model) => choose_control(
                |u| {
                    let mut win = window.clone();
                    let mut traj = Vec::with_capacity(cfg.horizon);
                    for k in 0..cfg.horizon {
                        let yhat = model.predict(&win, u)?;
                        traj.push(yhat);
                        win = win.advance(yhat, u, future_d[k]);
                    }
                    Ok(traj)
                },
                &in_window,
                interval_s,
                cfg,
            )?,
            ModelSource::Ensemble { library, agents } => {
                let (_, low) = agents.act(&window, tracker.errors(), ActionMode::Greedy, &mut rng)?;
                choose_control(
                    |u| {
                        let mut win = window.clone();
                        let mut traj = Vec::with_capacity(cfg.horizon);
                        for k in 0..cfg.horizon {
                            let mut yhat = 0.0;
                            for (i, &wi) in low.w.iter().enumerate() {
                                if wi != 0.0 {
                                    yhat += wi * library.get(i).predict(&win, u)?;
                                }
                            }
                            traj.push(yhat);
                            win = win.advance(yhat, u, future_d[k]);
                        }
                        Ok(traj)
                    },
                    &in_window,
                    interval_s,
                    cfg,
                )?
            }
        };

        let u = decision.u;
        rows[t_idx].u_hvac = u;

        // Tracker learns from the realized outcome of the applied control.
        let next = advance_truth(state, u, &sample, params, interval_s)?;
        if let ModelSource::Ensemble { library, .. } = source {
            let errs: Vec<f64> = library
                .predict_all(&window, u)?
                .iter()
                .map(|p| (p - next.t_room) * (p - next.t_room))
                .collect();
            tracker.update(errs);
        }

        energy_kwh += u * interval_s / 3.6e6;
        if cfg.in_comfort_window(&ts) {
            window_steps += 1;
            if (state.t_room - cfg.setpoint_c).abs() <= cfg.band_c {
                compliant += 1;
            }
        }
        let row = realized_row(ts, state.t_room, u, interval_s, cfg, energy_kwh);
        j_total += row.j_comfort + row.j_consume + row.p_e;
        log.push(row);
        state = next;
    }

    Ok(ClosedLoopResult {
        rows: log,
        energy_kwh,
        compliance: if window_steps == 0 { 1.0 } else { compliant as f64 / window_steps as f64 },
        j_total,
    })
}

/// Always-on bang-bang reference with the same logging and tallies.
pub fn closed_loop_thermostat(
    params: &RoomParams,
    init: RoomState,
    exo: &ExogenousSeries,
    warmup_steps: usize,
    run_steps: usize,
    power_w: f64,
    cfg: &MpcConfig,
) -> Result<ClosedLoopResult> {
    let sampling_minutes = (exo.timestamps[1] - exo.timestamps[0]).num_minutes() as u32;
    let interval_s = sampling_minutes as f64 * 60.0;
    let mut state = init;
    let mut heater_on = false;
    let mut step_th = |state: &mut RoomState, t: usize, tally: bool, acc: &mut (f64, usize, usize, f64, Vec<ClosedLoopRow>)| -> Result<()> {
        let sample = exo.sample(t);
        if state.t_room < cfg.setpoint_c - 0.5 {
            heater_on = true;
        } else if state.t_room > cfg.setpoint_c + 0.5 {
            heater_on = false;
        }
        let u = if heater_on { power_w } else { 0.0 };
        if tally {
            acc.0 += u * interval_s / 3.6e6;
            let ts = exo.timestamps[t];
            if cfg.in_comfort_window(&ts) {
                acc.1 += 1;
                if (state.t_room - cfg.setpoint_c).abs() <= cfg.band_c {
                    acc.2 += 1;
                }
            }
            let row = realized_row(ts, state.t_room, u, interval_s, cfg, acc.0);
            acc.3 += row.j_comfort + row.j_consume + row.p_e;
            acc.4.push(row);
        }
        *state = advance_truth(*state, u, &sample, params, interval_s)?;
        Ok(())
    };
    let mut acc = (0.0, 0usize, 0usize, 0.0, Vec::new());
    for t in 0..warmup_steps {
        step_th(&mut state, t, false, &mut acc)?;
    }
    for step in 0..run_steps {
        step_th(&mut state, warmup_steps + step, true, &mut acc)?;
    }
    Ok(ClosedLoopResult {
        rows: acc.4,
        energy_kwh: acc.0,
        compliance: if acc.1 == 0 { 1.0 } else { acc.2 as f64 / acc.1 as f64 },
        j_total: acc.3,
    })
}

const LOG_HEADER: [&str; 7] =
    ["timestamp", "t_room", "u_chosen", "j_comfort", "j_consume", "p_e", "energy_kwh_cum"];
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn write_closed_loop_csv(path: impl AsRef<Path>, rows: &[ClosedLoopRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOG_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.timestamp.format(TS_FORMAT).to_string(),
            r.t_room.to_string(),
            r.u_chosen.to_string(),
            r.j_comfort.to_string(),
            r.j_consume.to_string(),
            r.p_e.to_string(),
            r.energy_kwh_cum.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
