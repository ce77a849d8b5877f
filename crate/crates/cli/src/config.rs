//! Structured run configuration: one TOML file with `[scenario]`, `[train]`
//! and `[explain]` sections layered over the desk-scale defaults. Every
//! resolved field is echoed into the run summary so runs are
//! self-describing.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use aerolink_core::channel::{BasestationSite, ParamMode};
use aerolink_core::dqn::TrainConfig;
use aerolink_core::env::{ChmParams, Scenario, TrajectorySpec};
use aerolink_core::explain::Method;
use aerolink_core::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub explain: ExplainSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Base stations; omitted = the default 7-site hex layout.
    pub bs: Option<Vec<BsEntry>>,
    /// Area size in metres, [width, height].
    pub area_m: Option<[f64; 2]>,
    /// State grid, [cols, rows].
    pub grid_cells: Option<[usize; 2]>,
    pub uav_altitude_m: Option<f64>,
    pub episode_steps: Option<usize>,
    pub num_candidates: Option<usize>,
    pub ping_pong_window: Option<usize>,
    /// (buffer relief, handover penalty, RSRP bonus, RSRQ bonus).
    pub reward_weights: Option<[f64; 4]>,
    pub rsrp_threshold_dbm: Option<f64>,
    pub rsrq_threshold_db: Option<f64>,
    /// "random-walk" or an explicit waypoint list.
    pub trajectory: Option<TrajectoryEntry>,
    #[serde(default)]
    pub chm: ChmSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub traffic: TrafficSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsEntry {
    pub id: u32,
    /// [x, y, height] in metres.
    pub position: [f64; 3],
    pub tx_power_dbm: Option<f64>,
    pub antenna_gain_dbi: Option<f64>,
    pub carrier_freq_ghz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TrajectoryEntry {
    /// "random-walk"
    Named(String),
    /// Explicit waypoint list: [[x, y], ...]
    Waypoints(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChmSection {
    pub hysteresis_db: Option<f64>,
    pub time_to_trigger_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub noise_power_dbm: Option<f64>,
    pub uav_antenna_gain_dbi: Option<f64>,
    pub uav_tx_power_dbm: Option<f64>,
    pub shadowing_grid_resolution_m: Option<f64>,
    /// Fixed LOS breakpoint distance d1 in metres (omit for altitude-derived).
    pub d1_m: Option<f64>,
    /// Fixed LOS decay parameter p1 in metres (omit for altitude-derived).
    pub p1_m: Option<f64>,
    /// Seed of the frozen shadowing/LOS field; defaults to the global seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub lambda: Option<f64>,
    pub data_packet_bits: Option<f64>,
    pub control_packet_bits: Option<f64>,
    pub q_max_bits: Option<f64>,
    pub rrb_bandwidth_hz: Option<f64>,
    pub rrbs_per_uav: Option<u32>,
    pub step_duration_s: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: Option<usize>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub target_update_every: Option<usize>,
    pub epsilon_start: Option<f64>,
    pub epsilon_end: Option<f64>,
    pub epsilon_decay: Option<f64>,
    pub alpha0: Option<f64>,
    pub eta: Option<f64>,
    pub buffer_capacity: Option<usize>,
    pub eval_every: Option<usize>,
    pub hidden_dims: Option<Vec<usize>>,
    pub train_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    /// "exact", "sampled", or "deeplift".
    pub method: Option<String>,
    pub background_size: Option<usize>,
    pub n_permutations: Option<usize>,
    /// Cap on per-step waterfall CSV exports.
    pub max_waterfalls: Option<usize>,
}

/// Resolved explain settings.
#[derive(Debug, Clone, Serialize)]
pub struct ExplainSettings {
    pub method: Method,
    pub background_size: usize,
    pub n_permutations: usize,
    pub max_waterfalls: usize,
}

/// Fully resolved run configuration; serializing this is the config echo.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenario: Scenario,
    pub train: TrainConfig,
    pub explain: ExplainSettings,
}

pub fn parse_method(name: &str, n_permutations: usize) -> Result<Method> {
    match name {
        "exact" => Ok(Method::Exact),
        "sampled" => Ok(Method::Permutation(n_permutations)),
        "deeplift" => Ok(Method::DeepLift),
        other => Err(Error::config(format!(
            "explain.method must be exact|sampled|deeplift, got {other:?}"
        ))),
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Layer this file over the desk defaults.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<ResolvedConfig> {
        let seed = seed_override.or(self.seed).unwrap_or(0);
        let mut scenario = Scenario::desk_default(seed);
        let s = &self.scenario;
        if let Some(bs) = &s.bs {
            scenario.bs_sites = bs
                .iter()
                .map(|b| BasestationSite {
                    id: b.id,
                    position: b.position,
                    tx_power: b.tx_power_dbm.unwrap_or(46.0),
                    antenna_gain: b.antenna_gain_dbi.unwrap_or(0.0),
                    carrier_freq: b.carrier_freq_ghz.unwrap_or(2.0),
                })
                .collect();
        }
        if let Some([w, h]) = s.area_m {
            scenario.grid.width_m = w;
            scenario.grid.height_m = h;
        }
        if let Some([cols, rows]) = s.grid_cells {
            scenario.grid.cols = cols;
            scenario.grid.rows = rows;
        }
        if let Some(v) = s.uav_altitude_m {
            scenario.uav_altitude = v;
        }
        if let Some(v) = s.episode_steps {
            scenario.episode_steps = v;
        }
        if let Some(v) = s.num_candidates {
            scenario.num_candidates = v;
        }
        if let Some(v) = s.ping_pong_window {
            scenario.ping_pong_window = v;
        }
        if let Some(v) = s.reward_weights {
            scenario.reward_weights = v;
        }
        if let Some(v) = s.rsrp_threshold_dbm {
            scenario.rsrp_threshold = v;
        }
        if let Some(v) = s.rsrq_threshold_db {
            scenario.rsrq_threshold = v;
        }
        match &s.trajectory {
            None => {}
            Some(TrajectoryEntry::Named(name)) if name == "random-walk" => {
                scenario.trajectory = TrajectorySpec::RandomWalk;
            }
            Some(TrajectoryEntry::Named(other)) => {
                return Err(Error::config(format!(
                    "scenario.trajectory: unknown name {other:?} (use \"random-walk\" or a waypoint list)"
                )));
            }
            Some(TrajectoryEntry::Waypoints(pts)) => {
                scenario.trajectory = TrajectorySpec::Waypoints(pts.clone());
            }
        }
        scenario.chm = ChmParams {
            hysteresis_db: s.chm.hysteresis_db.unwrap_or(scenario.chm.hysteresis_db),
            time_to_trigger_steps: s
                .chm
                .time_to_trigger_steps
                .unwrap_or(scenario.chm.time_to_trigger_steps),
        };
        let c = &s.channel;
        if let Some(v) = c.noise_power_dbm {
            scenario.channel.noise_power = v;
        }
        if let Some(v) = c.uav_antenna_gain_dbi {
            scenario.channel.uav_antenna_gain = v;
        }
        if let Some(v) = c.uav_tx_power_dbm {
            scenario.channel.uav_tx_power = v;
        }
        if let Some(v) = c.shadowing_grid_resolution_m {
            scenario.channel.shadowing_grid_resolution = v;
        }
        if let Some(v) = c.d1_m {
            scenario.channel.d1_mode = ParamMode::Fixed(v);
        }
        if let Some(v) = c.p1_m {
            scenario.channel.p1_mode = ParamMode::Fixed(v);
        }
        scenario.channel.seed = c.seed.unwrap_or(seed);
        scenario.seed = seed;
        let t = &s.traffic;
        if let Some(v) = t.lambda {
            scenario.traffic.lambda = v;
        }
        if let Some(v) = t.data_packet_bits {
            scenario.traffic.data_packet_bits = v;
        }
        if let Some(v) = t.control_packet_bits {
            scenario.traffic.control_packet_bits = v;
        }
        if let Some(v) = t.q_max_bits {
            scenario.traffic.q_max = v;
        }
        if let Some(v) = t.rrb_bandwidth_hz {
            scenario.traffic.rrb_bandwidth_hz = v;
        }
        if let Some(v) = t.rrbs_per_uav {
            scenario.traffic.rrbs_per_uav = v;
        }
        if let Some(v) = t.step_duration_s {
            scenario.traffic.step_duration_s = v;
        }
        scenario.validate()?;

        let defaults = TrainConfig::default();
        let tr = &self.train;
        let train = TrainConfig {
            episodes: tr.episodes.unwrap_or(defaults.episodes),
            batch_size: tr.batch_size.unwrap_or(defaults.batch_size),
            gamma: tr.gamma.unwrap_or(defaults.gamma),
            target_update_every: tr.target_update_every.unwrap_or(defaults.target_update_every),
            epsilon_start: tr.epsilon_start.unwrap_or(defaults.epsilon_start),
            epsilon_end: tr.epsilon_end.unwrap_or(defaults.epsilon_end),
            epsilon_decay: tr.epsilon_decay.unwrap_or(defaults.epsilon_decay),
            alpha0: tr.alpha0.unwrap_or(defaults.alpha0),
            eta: tr.eta.unwrap_or(defaults.eta),
            buffer_capacity: tr.buffer_capacity.unwrap_or(defaults.buffer_capacity),
            eval_every: tr.eval_every.unwrap_or(defaults.eval_every),
            hidden_dims: tr.hidden_dims.clone().unwrap_or(defaults.hidden_dims),
            train_every: tr.train_every.unwrap_or(defaults.train_every),
            seed,
        };
        train.validate()?;

        let e = &self.explain;
        let n_permutations = e.n_permutations.unwrap_or(2000);
        let explain = ExplainSettings {
            method: parse_method(e.method.as_deref().unwrap_or("exact"), n_permutations)?,
            background_size: e.background_size.unwrap_or(32),
            n_permutations,
            max_waterfalls: e.max_waterfalls.unwrap_or(8),
        };
        if explain.background_size == 0 {
            return Err(Error::config("explain.background_size must be >= 1"));
        }

        Ok(ResolvedConfig {
            seed,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
            scenario,
            train,
            explain,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_desk_defaults() {
        let cfg: FileConfig = toml::from_str("").unwrap();
        let resolved = cfg.resolve(None).unwrap();
        assert_eq!(resolved.seed, 0);
        assert_eq!(resolved.scenario.bs_sites.len(), 7);
        assert_eq!(resolved.scenario.episode_steps, 200);
        assert_eq!(resolved.train.episodes, 1500);
        assert_eq!(resolved.explain.background_size, 32);
    }

    #[test]
    fn overrides_apply_and_echo() {
        let text = r#"
seed = 7
[scenario]
episode_steps = 50
reward_weights = [2.0, 1.0, 0.0, 0.0]
[scenario.traffic]
lambda = 3.5
[train]
episodes = 10
hidden_dims = [8, 8]
[explain]
method = "sampled"
n_permutations = 128
"#;
        let cfg: FileConfig = toml::from_str(text).unwrap();
        let resolved = cfg.resolve(None).unwrap();
        assert_eq!(resolved.seed, 7);
        assert_eq!(resolved.scenario.episode_steps, 50);
        assert_eq!(resolved.scenario.traffic.lambda, 3.5);
        assert_eq!(resolved.train.episodes, 10);
        assert_eq!(resolved.explain.method, Method::Permutation(128));
        // seed override beats the file
        assert_eq!(cfg.resolve(Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn unknown_fields_are_rejected_with_names() {
        let err = toml::from_str::<FileConfig>("[scenario]\nnot_a_field = 3\n").unwrap_err();
        assert!(err.to_string().contains("not_a_field"));
    }

    #[test]
    fn waypoint_trajectory_parses() {
        let text = "[scenario]\ntrajectory = [[100.0, 100.0], [500.0, 900.0]]\n";
        let cfg: FileConfig = toml::from_str(text).unwrap();
        let resolved = cfg.resolve(None).unwrap();
        match resolved.scenario.trajectory {
            TrajectorySpec::Waypoints(ref pts) => assert_eq!(pts.len(), 2),
            ref other => panic!("expected waypoints, got {other:?}"),
        }
    }

    #[test]
    fn invalid_method_is_a_config_error() {
        let cfg: FileConfig = toml::from_str("[explain]\nmethod = \"magic\"\n").unwrap();
        assert!(matches!(cfg.resolve(None), Err(Error::Config(_))));
    }
}
