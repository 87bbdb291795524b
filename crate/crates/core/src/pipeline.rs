//! Experiment orchestration: configuration, artifact layout, and the six
//! pipeline commands (simulate, fit, train, evaluate, mpc-run, report).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::agents::{train_single_tier, train_two_stage, write_training_log, HrlAgents, SingleTierAgent, TrainConfig};
use crate::baselines::{best_single_weights, static_search_weights, BaselineConfig};
use crate::encoder::EncoderConfig;
use crate::engine::{run_evaluation, write_records_csv, EvalMethod, EvalOutcome, RoomMetrics};
use crate::error::{Error, Result};
use crate::frames::StreamFrames;
use crate::metrics::MetricsReport;
use crate::models::{
    fit_dictionary_regression, fit_least_squares, window_at, BaseModel, Feature, FeatureSpec, FitMethod,
    ModelLibrary,
};
use crate::mpc::{closed_loop_simulate, closed_loop_thermostat, write_closed_loop_csv, ModelSource, MpcConfig};
use crate::sim::{generate_room_dataset, DatasetConfig, ExoConfig, HvacMode, RoomDataset, RoomMeta, RoomParams, RoomState, ThermostatConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub rooms: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub sampling_minutes: u32,
    pub days: u32,
    pub start_date: NaiveDate,
    pub sensor_noise_sd_c: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            rooms: 25,
            train_fraction: 0.8,
            test_fraction: 0.2,
            sampling_minutes: 15,
            days: 90,
            start_date: NaiveDate::from_ymd_opt(2023, 11, 2).unwrap(),
            sensor_noise_sd_c: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsSection {
    pub methods: Vec<FitMethod>,
    pub lookback: usize,
    pub ridge: f64,
    pub dict_max_terms: usize,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection { methods: vec![FitMethod::Mlr, FitMethod::Dict], lookback: 8, ridge: 1e-8, dict_max_terms: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub cfg: TrainConfig,
    /// Encoder hidden width `d_h`.
    pub d_h: usize,
    pub raw_error_embedding: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { cfg: TrainConfig::default(), d_h: 64, raw_error_embedding: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcSection {
    #[serde(flatten)]
    pub cfg: MpcConfig,
    pub days: u32,
    pub warmup_days: u32,
    /// Which test room (by position in the split) the case study runs on.
    pub room_index: usize,
    /// Any of "hrl", "single", "physics", "thermostat".
    pub sources: Vec<String>,
    pub thermostat_power_w: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        MpcSection {
            cfg: MpcConfig { horizon: 6, comfort_weight: 50.0, energy_weight_per_kwh: 0.05, ..MpcConfig::default() },
            days: 4,
            warmup_days: 1,
            room_index: 0,
            sources: vec!["hrl".into(), "single".into(), "thermostat".into()],
            thermostat_power_w: 2000.0,
        }
    }
}

/// Full experiment configuration; a flat TOML document with one section per
/// subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub simulate: SimulateSection,
    pub models: ModelsSection,
    pub train: TrainSection,
    pub baselines: BaselineConfig,
    pub mpc: MpcSection,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.out_dir.as_os_str().is_empty() {
            bad.push("out_dir".to_string());
        }
        let s = &self.simulate;
        if (s.train_fraction + s.test_fraction - 1.0).abs() > 1e-9 {
            bad.push("simulate.train_fraction + simulate.test_fraction (must sum to 1)".into());
        }
        if s.rooms < 2 {
            bad.push("simulate.rooms (need at least one train and one test room)".into());
        }
        if !matches!(s.sampling_minutes, 15 | 60) {
            bad.push("simulate.sampling_minutes (15 or 60)".into());
        }
        if s.days < 2 {
            bad.push("simulate.days".into());
        }
        if self.models.methods.is_empty() {
            bad.push("models.methods".into());
        }
        if self.models.lookback < 2 {
            bad.push("models.lookback".into());
        }
        if self.models.dict_max_terms == 0 {
            bad.push("models.dict_max_terms".into());
        }
        if self.train.d_h == 0 {
            bad.push("train.d_h".into());
        }
        if let Err(e) = self.train.cfg.validate() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.baselines.validate() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.mpc.cfg.validate() {
            bad.push(e.to_string());
        }
        if self.mpc.days == 0 || self.mpc.warmup_days == 0 {
            bad.push("mpc.days / mpc.warmup_days".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(bad.join("; ")))
        }
    }

    pub fn train_rooms(&self) -> usize {
        ((self.simulate.rooms as f64) * self.simulate.train_fraction).round() as usize
    }

    fn room_id(i: usize) -> String {
        format!("room_{i:03}")
    }

    fn dir(&self, sub: &str) -> PathBuf {
        self.out_dir.join(sub)
    }

    fn data_csv(&self, id: &str) -> PathBuf {
        self.dir("data").join(format!("{id}.csv"))
    }

    fn data_meta(&self, id: &str) -> PathBuf {
        self.dir("data").join(format!("{id}.meta.json"))
    }

    fn split_path(&self) -> PathBuf {
        self.dir("data").join("split.json")
    }

    fn library_path(&self) -> PathBuf {
        self.dir("models").join("library.json")
    }

    fn agents_paths(&self) -> (PathBuf, PathBuf) {
        (self.dir("train").join("agents.json"), self.dir("train").join("agents_meta.json"))
    }

    fn single_tier_paths(&self) -> (PathBuf, PathBuf) {
        (self.dir("train").join("single_tier.json"), self.dir("train").join("single_tier_meta.json"))
    }

    fn metrics_path(&self) -> PathBuf {
        self.dir("eval").join("metrics.json")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { path: path.to_path_buf(), produced_by: produced_by.to_string() })
    }
}

fn load_split(cfg: &ExperimentConfig) -> Result<RoomSplit> {
    require(&cfg.split_path(), "simulate")?;
    let f = std::fs::File::open(cfg.split_path())?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn load_dataset(cfg: &ExperimentConfig, id: &str) -> Result<RoomDataset> {
    require(&cfg.data_csv(id), "simulate")?;
    RoomDataset::read_csv(cfg.data_csv(id), id, cfg.simulate.sampling_minutes)
}

fn load_meta(cfg: &ExperimentConfig, id: &str) -> Result<RoomMeta> {
    require(&cfg.data_meta(id), "simulate")?;
    let f = std::fs::File::open(cfg.data_meta(id))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Per-room exogenous settings with mild heterogeneity keyed by the room seed.
fn room_exo(cfg: &ExperimentConfig, rng: &mut impl rand::Rng) -> ExoConfig {
    ExoConfig {
        start: cfg.simulate.start_date.and_hms_opt(0, 0, 0).unwrap(),
        sampling_minutes: cfg.simulate.sampling_minutes,
        ambient_mean_c: 8.0 + rng.gen_range(-1.5..1.5),
        occupancy_start_hour: rng.gen_range(8..=10),
        occupancy_end_hour: rng.gen_range(17..=19),
        occupancy_max: rng.gen_range(2..=5),
        ..ExoConfig::default()
    }
}

/// Generate every room stream and the train/test split.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(cfg.dir("data"))?;
    let n_train = cfg.train_rooms();
    let mut split = RoomSplit { train: Vec::new(), test: Vec::new() };
    for i in 0..cfg.simulate.rooms {
        let id = ExperimentConfig::room_id(i);
        let room_seed = crate::derive_seed(cfg.seed, "room", i as u64);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(room_seed);
        let params = RoomParams::sample(&mut rng, HvacMode::Heating);
        let thermostat = ThermostatConfig::sample(&mut rng, &params, 0.0);
        let exo = room_exo(cfg, &mut rng);
        let ds_cfg = DatasetConfig {
            room_id: id.clone(),
            params: params.clone(),
            thermostat: thermostat.clone(),
            exo,
            days: cfg.simulate.days,
            sampling_minutes: cfg.simulate.sampling_minutes,
            sensor_noise_sd_c: cfg.simulate.sensor_noise_sd_c,
        };
        let ds = generate_room_dataset(&ds_cfg, room_seed)?;
        ds.write_csv(cfg.data_csv(&id))?;
        let meta = RoomMeta {
            room_id: id.clone(),
            seed: room_seed,
            sampling_minutes: cfg.simulate.sampling_minutes,
            params,
            thermostat,
        };
        let f = std::fs::File::create(cfg.data_meta(&id))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &meta)?;
        if i < n_train {
            split.train.push(id);
        } else {
            split.test.push(id);
        }
    }
    let f = std::fs::File::create(cfg.split_path())?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &split)?;
    Ok(())
}

/// Dictionary fit that always keeps a handle on the candidate control, so the
/// resulting model stays usable inside the controller.
fn fit_dict_controllable(ds: &RoomDataset, lookback: usize, max_terms: usize, ridge: f64) -> Result<BaseModel> {
    let dict = FeatureSpec::dictionary(lookback);
    let mut model = fit_dictionary_regression(ds, &dict, max_terms, ridge)?;
    if model.spec.validate_controllable().is_err() {
        let mut features = model.spec.features.clone();
        features.push(Feature::CurrentControl);
        let spec = FeatureSpec::new(lookback, features);
        let mut refit = fit_least_squares(ds, &spec, ridge)?;
        refit.method = FitMethod::Dict;
        model = refit;
    }
    Ok(model)
}

fn fit_customized(ds: &RoomDataset, method: FitMethod, models_cfg: &ModelsSection) -> Result<BaseModel> {
    match method {
        FitMethod::Mlr => {
            fit_least_squares(ds, &FeatureSpec::default_mlr(models_cfg.lookback), models_cfg.ridge)
        }
        FitMethod::Dict => {
            fit_dict_controllable(ds, models_cfg.lookback, models_cfg.dict_max_terms, models_cfg.ridge)
        }
    }
}

/// Fit the base-model library from the training rooms.
pub fn cmd_fit(cfg: &ExperimentConfig) -> Result<()> {
    let split = load_split(cfg)?;
    std::fs::create_dir_all(cfg.dir("models"))?;
    let mut models = Vec::new();
    for id in &split.train {
        let ds = load_dataset(cfg, id)?;
        for &method in &cfg.models.methods {
            models.push(fit_customized(&ds, method, &cfg.models)?);
        }
    }
    ModelLibrary::new(models).save(cfg.library_path())
}

fn encoder_config(cfg: &ExperimentConfig, n_models: usize) -> EncoderConfig {
    let mut e = EncoderConfig::new(n_models).with_hidden(cfg.train.d_h);
    e.raw_error_embedding = cfg.train.raw_error_embedding;
    e
}

/// Train the hierarchical agents (and the flat ablation when enabled).
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let split = load_split(cfg)?;
    require(&cfg.library_path(), "fit")?;
    let library = ModelLibrary::load(cfg.library_path())?;
    std::fs::create_dir_all(cfg.dir("train"))?;

    let mut streams = Vec::new();
    for id in &split.train {
        let ds = load_dataset(cfg, id)?;
        streams.push(StreamFrames::build(&ds, &library, cfg.models.lookback)?);
    }
    let enc = encoder_config(cfg, library.len());
    let mut train_cfg = cfg.train.cfg.clone();
    train_cfg.seed = crate::derive_seed(cfg.seed, "train-agents", 0);

    let (agents, log) = train_two_stage(&streams, &library, &enc, &train_cfg)?;
    let (p, m) = cfg.agents_paths();
    agents.save(&p, &m)?;
    write_training_log(cfg.dir("train").join("training_log.csv"), &log)?;

    if cfg.baselines.single_tier {
        let mut st_cfg = train_cfg.clone();
        st_cfg.seed = crate::derive_seed(cfg.seed, "train-single-tier", 0);
        let (st, st_log) = train_single_tier(&streams, &library, &enc, &st_cfg)?;
        let (p, m) = cfg.single_tier_paths();
        st.save(&p, &m)?;
        write_training_log(cfg.dir("train").join("single_tier_log.csv"), &st_log)?;
    }
    Ok(())
}

/// Rows of the first half of a stream (validation) as a standalone dataset.
fn validation_half(ds: &RoomDataset) -> RoomDataset {
    let mid = ds.rows.len() / 2;
    RoomDataset { room_id: ds.room_id.clone(), sampling_minutes: ds.sampling_minutes, rows: ds.rows[..mid].to_vec() }
}

/// Frames whose first prediction lands on the first test-half row; the
/// look-back tail of the validation half provides the needed history.
fn test_half_frames(ds: &RoomDataset, library: &ModelLibrary, lookback: usize) -> Result<StreamFrames> {
    let mid = ds.rows.len() / 2;
    let start = mid.saturating_sub(lookback);
    let slice = RoomDataset {
        room_id: ds.room_id.clone(),
        sampling_minutes: ds.sampling_minutes,
        rows: ds.rows[start..].to_vec(),
    };
    StreamFrames::build(&slice, library, lookback)
}

fn merge_outcomes(name: &str, parts: Vec<EvalOutcome>) -> EvalOutcome {
    let mut per_room = BTreeMap::new();
    for p in parts {
        per_room.extend(p.per_room);
    }
    let total: usize = per_room.values().map(|m| m.steps).sum();
    let mae = per_room.values().map(|m| m.mae * m.steps as f64).sum::<f64>() / total as f64;
    let mse = per_room.values().map(|m| m.mse * m.steps as f64).sum::<f64>() / total as f64;
    EvalOutcome { method: name.to_string(), per_room, mae, mse, steps: total }
}

/// MAE/MSE of one customized model over the test half of its own room.
fn eval_customized(model: &BaseModel, ds: &RoomDataset, lookback: usize) -> Result<RoomMetrics> {
    let mid = ds.rows.len() / 2;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut steps = 0usize;
    for t in mid - 1..ds.rows.len() - 1 {
        let window = window_at(&ds.rows, t, lookback, ds.sampling_minutes)?;
        let pred = model.predict(&window, ds.rows[t].u_hvac)?;
        let e = pred - ds.rows[t + 1].t_room;
        abs += e.abs();
        sq += e * e;
        steps += 1;
    }
    Ok(RoomMetrics { mae: abs / steps as f64, mse: sq / steps as f64, steps })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTimings {
    pub wall_seconds: BTreeMap<String, f64>,
}

/// Evaluate the trained ensemble, every baseline, and the customized
/// reference models over the test rooms' held-out halves.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let split = load_split(cfg)?;
    require(&cfg.library_path(), "fit")?;
    let (agents_path, agents_meta) = cfg.agents_paths();
    require(&agents_path, "train")?;
    let library = ModelLibrary::load(cfg.library_path())?;
    let agents = HrlAgents::load(&agents_path, &agents_meta)?;
    let single_tier = if cfg.baselines.single_tier {
        let (p, m) = cfg.single_tier_paths();
        require(&p, "train")?;
        Some(SingleTierAgent::load(&p, &m)?)
    } else {
        None
    };
    std::fs::create_dir_all(cfg.dir("eval"))?;

    let lookback = cfg.models.lookback;
    let mut test_sets = Vec::new();
    for id in &split.test {
        let ds = load_dataset(cfg, id)?;
        let frames = test_half_frames(&ds, &library, lookback)?;
        let validation = StreamFrames::build(&validation_half(&ds), &library, lookback)?;
        test_sets.push((ds, frames, validation));
    }
    let test_frames: Vec<&StreamFrames> = test_sets.iter().map(|(_, f, _)| f).collect();
    let alpha = cfg.train.cfg.alpha;
    let beta = cfg.train.cfg.beta;
    let mut outcomes = Vec::new();
    let mut timings = BTreeMap::new();

    let frames_owned: Vec<StreamFrames> = Vec::new(); // placeholder for lifetimes
    drop(frames_owned);

    let mut run_uniform = |method: EvalMethod, name: &str, timings: &mut BTreeMap<String, f64>| -> Result<EvalOutcome> {
        let start = Instant::now();
        let mut records_all = Vec::new();
        let mut parts = Vec::new();
        for frames in &test_frames {
            let (records, outcome) = run_evaluation(std::slice::from_ref(*frames), &method, &library, alpha, beta)?;
            records_all.extend(records);
            parts.push(outcome);
        }
        write_records_csv(cfg.dir("eval").join(format!("records_{name}.csv")), &records_all)?;
        timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        Ok(merge_outcomes(name, parts))
    };

    outcomes.push(run_uniform(EvalMethod::Hrl(&agents), "hrl", &mut timings)?);
    outcomes.push(run_uniform(
        EvalMethod::HeuristicTopN(cfg.baselines.heuristic_n),
        "heuristic",
        &mut timings,
    )?);
    outcomes.push(run_uniform(EvalMethod::EqualWeightAll, "equal", &mut timings)?);
    if let Some(st) = &single_tier {
        outcomes.push(run_uniform(EvalMethod::SingleTier(st), "single_tier", &mut timings)?);
    }

    // Static search and best-single pick their weights per room on the
    // validation half.
    type Picker = fn(&[&StreamFrames], &BaselineConfig, u64) -> Result<Vec<f64>>;
    let pickers: [(&str, Picker); 2] = [("static", pick_static), ("best_single", pick_best_single)];
    for (name, pick) in pickers {
        let start = Instant::now();
        let mut records_all = Vec::new();
        let mut parts = Vec::new();
        for (i, (_, frames, validation)) in test_sets.iter().enumerate() {
            let w = pick(&[validation], &cfg.baselines, crate::derive_seed(cfg.seed, name, i as u64))?;
            let (records, outcome) = run_evaluation(
                std::slice::from_ref(frames),
                &EvalMethod::StaticWeights(&w),
                &library,
                alpha,
                beta,
            )?;
            records_all.extend(records);
            parts.push(outcome);
        }
        write_records_csv(cfg.dir("eval").join(format!("records_{name}.csv")), &records_all)?;
        timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        outcomes.push(merge_outcomes(name, parts));
    }

    // Customized per-room reference models.
    for &method in &cfg.models.methods {
        let name = match method {
            FitMethod::Mlr => "customized_mlr",
            FitMethod::Dict => "customized_dict",
        };
        let start = Instant::now();
        let mut per_room = BTreeMap::new();
        for (ds, _, _) in &test_sets {
            let customized = fit_customized(&validation_half(ds), method, &cfg.models)?;
            per_room.insert(ds.room_id.clone(), eval_customized(&customized, ds, lookback)?);
        }
        let total: usize = per_room.values().map(|m| m.steps).sum();
        let mae = per_room.values().map(|m| m.mae * m.steps as f64).sum::<f64>() / total as f64;
        let mse = per_room.values().map(|m| m.mse * m.steps as f64).sum::<f64>() / total as f64;
        timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        outcomes.push(EvalOutcome { method: name.to_string(), per_room, mae, mse, steps: total });
    }

    let references: Vec<String> = cfg
        .models
        .methods
        .iter()
        .map(|m| match m {
            FitMethod::Mlr => "customized_mlr".to_string(),
            FitMethod::Dict => "customized_dict".to_string(),
        })
        .collect();
    let report = MetricsReport::build(&outcomes, &references, cfg.seed)?;
    report.save(cfg.metrics_path())?;
    let f = std::fs::File::create(cfg.dir("eval").join("timings.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &EvalTimings { wall_seconds: timings })?;
    Ok(())
}

fn pick_static(validation: &[&StreamFrames], cfg: &BaselineConfig, seed: u64) -> Result<Vec<f64>> {
    static_search_weights(validation, cfg.static_search_budget, seed)
}

fn pick_best_single(validation: &[&StreamFrames], _cfg: &BaselineConfig, _seed: u64) -> Result<Vec<f64>> {
    best_single_weights(validation)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcSummaryEntry {
    pub energy_kwh: f64,
    pub compliance: f64,
    pub j_total: f64,
}

/// Closed-loop case study on one test room, one run per configured source.
pub fn cmd_mpc_run(cfg: &ExperimentConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let room_id = split
        .test
        .get(cfg.mpc.room_index)
        .ok_or_else(|| Error::config(format!("mpc.room_index {} out of range", cfg.mpc.room_index)))?;
    let meta = load_meta(cfg, room_id)?;
    std::fs::create_dir_all(cfg.dir("mpc"))?;

    let steps_per_day = (1440 / cfg.simulate.sampling_minutes) as usize;
    let warmup_steps = cfg.mpc.warmup_days as usize * steps_per_day;
    let run_steps = cfg.mpc.days as usize * steps_per_day;
    let horizon = cfg.mpc.cfg.horizon;
    let mut exo_cfg = ExoConfig::default();
    exo_cfg.start = cfg.simulate.start_date.and_hms_opt(0, 0, 0).unwrap();
    exo_cfg.sampling_minutes = cfg.simulate.sampling_minutes;
    let exo = crate::sim::synthesize_exogenous(
        &exo_cfg,
        warmup_steps + run_steps + horizon + 1,
        crate::derive_seed(cfg.seed, "mpc-exo", 0),
    )?;
    let init = RoomState::uniform(cfg.mpc.cfg.setpoint_c - 2.0);
    let lookback = cfg.models.lookback;

    let mut summary = BTreeMap::new();
    for source_name in &cfg.mpc.sources {
        let result = match source_name.as_str() {
            "physics" => closed_loop_simulate(
                &meta.params,
                init,
                &exo,
                warmup_steps,
                run_steps,
                &ModelSource::Physics(&meta.params),
                &cfg.mpc.cfg,
                lookback,
            )?,
            "single" => {
                let ds = load_dataset(cfg, room_id)?;
                let customized = fit_customized(&validation_half(&ds), FitMethod::Dict, &cfg.models)?;
                closed_loop_simulate(
                    &meta.params,
                    init,
                    &exo,
                    warmup_steps,
                    run_steps,
                    &ModelSource::Single(&customized),
                    &cfg.mpc.cfg,
                    lookback,
                )?
            }
            "hrl" => {
                require(&cfg.library_path(), "fit")?;
                let (p, m) = cfg.agents_paths();
                require(&p, "train")?;
                let library = ModelLibrary::load(cfg.library_path())?;
                let agents = HrlAgents::load(&p, &m)?;
                closed_loop_simulate(
                    &meta.params,
                    init,
                    &exo,
                    warmup_steps,
                    run_steps,
                    &ModelSource::Ensemble { library: &library, agents: &agents },
                    &cfg.mpc.cfg,
                    lookback,
                )?
            }
            "thermostat" => closed_loop_thermostat(
                &meta.params,
                init,
                &exo,
                warmup_steps,
                run_steps,
                cfg.mpc.thermostat_power_w,
                &cfg.mpc.cfg,
            )?,
            other => return Err(Error::config(format!("unknown mpc source {other:?}"))),
        };
        write_closed_loop_csv(cfg.dir("mpc").join(format!("closedloop_{source_name}.csv")), &result.rows)?;
        summary.insert(
            source_name.clone(),
            MpcSummaryEntry {
                energy_kwh: result.energy_kwh,
                compliance: result.compliance,
                j_total: result.j_total,
            },
        );
    }
    let f = std::fs::File::create(cfg.dir("mpc").join("summary.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &summary)?;
    Ok(())
}

/// Aggregate tables from the metrics document (and MPC summary when present).
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    require(&cfg.metrics_path(), "evaluate")?;
    let report = MetricsReport::load(cfg.metrics_path())?;
    std::fs::create_dir_all(cfg.dir("report"))?;

    let mut w = csv::Writer::from_path(cfg.dir("report").join("report.csv"))?;
    let mut header = vec!["method".to_string(), "mae".into(), "mse".into(), "steps".into()];
    for r in &report.references {
        header.push(format!("imp_pct_vs_{r}"));
    }
    w.write_record(&header)?;
    for (name, m) in &report.methods {
        let mut rec = vec![name.clone(), m.mae.to_string(), m.mse.to_string(), m.steps.to_string()];
        for r in &report.references {
            rec.push(m.improvement_pct.get(r).map(|v| format!("{v:.1}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut text = String::new();
    text.push_str(&format!("Prediction performance (seed {})\n", report.seed));
    text.push_str(&format!("{:<16} {:>8} {:>9}", "method", "MAE", "MSE"));
    for r in &report.references {
        text.push_str(&format!(" {:>22}", format!("Imp% vs {r}")));
    }
    text.push('\n');
    for (name, m) in &report.methods {
        text.push_str(&format!("{:<16} {:>8.3} {:>9.3}", name, m.mae, m.mse));
        for r in &report.references {
            match m.improvement_pct.get(r) {
                Some(v) => text.push_str(&format!(" {:>21.1}%", v)),
                None => text.push_str(&format!(" {:>22}", "-")),
            }
        }
        text.push('\n');
    }

    let mpc_summary = cfg.dir("mpc").join("summary.json");
    if mpc_summary.exists() {
        let f = std::fs::File::open(mpc_summary)?;
        let summary: BTreeMap<String, MpcSummaryEntry> = serde_json::from_reader(std::io::BufReader::new(f))?;
        text.push_str("\nClosed-loop case study\n");
        text.push_str(&format!("{:<12} {:>12} {:>12} {:>10}\n", "source", "energy_kWh", "compliance", "J_total"));
        for (name, e) in &summary {
            text.push_str(&format!(
                "{:<12} {:>12.2} {:>12.3} {:>10.2}\n",
                name, e.energy_kwh, e.compliance, e.j_total
            ));
        }
    }
    std::fs::write(cfg.dir("report").join("report.txt"), text)?;
    Ok(())
}

/// Dispatch one named command.
pub fn run_command(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match command {
        "simulate" => cmd_simulate(cfg),
        "fit" => cmd_fit(cfg),
        "train" => cmd_train(cfg),
        "evaluate" => cmd_evaluate(cfg),
        "mpc-run" => cmd_mpc_run(cfg),
        "report" => cmd_report(cfg),
        other => Err(Error::config(format!("unknown command {other:?}"))),
    }
}
