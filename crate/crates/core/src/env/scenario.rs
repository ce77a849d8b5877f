use serde::{Deserialize, Serialize};

use crate::channel::{BasestationSite, ChannelParams, Pos3};
use crate::traffic::TrafficParams;
use crate::{Error, Result};

/// Rectangular area quantized into a row-major cell grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub cols: usize,
    pub rows: usize,
}

impl GridSpec {
    pub fn cell_width(&self) -> f64 {
        self.width_m / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.height_m / self.rows as f64
    }

    pub fn num_cells(&self) -> usize {
        self.cols * self.rows
    }

    /// Row-major cell index of an (x, y) position.
    pub fn cell_index(&self, x: f64, y: f64) -> Result<usize> {
        if !(0.0..=self.width_m).contains(&x) || !(0.0..=self.height_m).contains(&y) {
            return Err(Error::OutOfBounds(format!(
                "position ({x:.1}, {y:.1}) outside {}x{} m area",
                self.width_m, self.height_m
            )));
        }
        let col = ((x / self.cell_width()) as usize).min(self.cols - 1);
        let row = ((y / self.cell_height()) as usize).min(self.rows - 1);
        Ok(row * self.cols + col)
    }

    /// Centre of a cell given its row-major index.
    pub fn cell_center(&self, index: usize) -> (f64, f64) {
        let row = index / self.cols;
        let col = index % self.cols;
        ((col as f64 + 0.5) * self.cell_width(), (row as f64 + 0.5) * self.cell_height())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_m > 0.0) || !(self.height_m > 0.0) || self.cols == 0 || self.rows == 0 {
            return Err(Error::config("grid: dimensions must be positive"));
        }
        Ok(())
    }
}

/// How the UAV moves across the area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectorySpec {
    /// Seeded walk between neighbouring grid cells, random start cell.
    RandomWalk,
    /// Fly through explicit (x, y) waypoints at one cell-width per step.
    Waypoints(Vec<[f64; 2]>),
}

/// A3-style baseline handover parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChmParams {
    pub hysteresis_db: f64,
    pub time_to_trigger_steps: usize,
}

impl Default for ChmParams {
    fn default() -> Self {
        ChmParams { hysteresis_db: 3.0, time_to_trigger_steps: 2 }
    }
}

/// Full world description for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs_sites: Vec<BasestationSite>,
    pub grid: GridSpec,
    pub uav_altitude: f64,
    pub trajectory: TrajectorySpec,
    pub episode_steps: usize,
    pub channel: ChannelParams,
    pub traffic: TrafficParams,
    /// (buffer relief, handover penalty, RSRP threshold bonus, RSRQ threshold bonus).
    pub reward_weights: [f64; 4],
    pub rsrp_threshold: f64,
    pub rsrq_threshold: f64,
    /// Candidate list length L.
    pub num_candidates: usize,
    /// Handovers returning to a BS served within this many steps count as
    /// ping-pongs.
    pub ping_pong_window: usize,
    pub chm: ChmParams,
    pub seed: u64,
}

impl Scenario {
    /// Desk-scale default: 7 base stations on a hex-like layout in a
    /// 2 km x 2 km area with a 20x20 state grid.
    pub fn desk_default(seed: u64) -> Self {
        let mut bs_sites = vec![BasestationSite {
            id: 0,
            position: [1000.0, 1000.0, 25.0],
            tx_power: 46.0,
            antenna_gain: 0.0,
            carrier_freq: 2.0,
        }];
        for k in 0..6u32 {
            let theta = std::f64::consts::PI / 3.0 * k as f64;
            bs_sites.push(BasestationSite {
                id: k + 1,
                position: [1000.0 + 700.0 * theta.cos(), 1000.0 + 700.0 * theta.sin(), 25.0],
                tx_power: 46.0,
                antenna_gain: 0.0,
                carrier_freq: 2.0,
            });
        }
        Scenario {
            bs_sites,
            grid: GridSpec { width_m: 2000.0, height_m: 2000.0, cols: 20, rows: 20 },
            uav_altitude: 120.0,
            trajectory: TrajectorySpec::RandomWalk,
            episode_steps: 200,
            channel: ChannelParams { seed, ..ChannelParams::default() },
            traffic: TrafficParams::default(),
            reward_weights: [1.0, 1.0, 0.5, 0.5],
            rsrp_threshold: -95.0,
            rsrq_threshold: 0.0,
            num_candidates: 4,
            ping_pong_window: 3,
            chm: ChmParams::default(),
            seed,
        }
    }

    pub fn bs_by_id(&self, id: u32) -> Result<&BasestationSite> {
        self.bs_sites
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::NotFound(format!("bs {id} not in scenario")))
    }

    /// Number of state features: position, altitude, buffer, serving slot,
    /// plus RSRP and RSRQ per candidate.
    pub fn state_dim(&self) -> usize {
        4 + 2 * self.num_candidates
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.channel.validate()?;
        self.traffic.validate()?;
        if self.num_candidates < 2 {
            return Err(Error::config("scenario: num_candidates must be >= 2"));
        }
        if self.num_candidates > self.bs_sites.len() {
            return Err(Error::config(format!(
                "scenario: num_candidates {} exceeds {} base stations",
                self.num_candidates,
                self.bs_sites.len()
            )));
        }
        if !(self.uav_altitude > 0.0) {
            return Err(Error::config("scenario: uav_altitude must be > 0"));
        }
        if self.episode_steps == 0 {
            return Err(Error::config("scenario: episode_steps must be >= 1"));
        }
        if self.ping_pong_window == 0 {
            return Err(Error::config("scenario: ping_pong_window must be >= 1"));
        }
        if !self.rsrp_threshold.is_finite() || !self.rsrq_threshold.is_finite() {
            return Err(Error::config("scenario: thresholds must be finite"));
        }
        if self.reward_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("scenario: reward weights must be non-negative"));
        }
        let mut ids: Vec<u32> = self.bs_sites.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.bs_sites.len() {
            return Err(Error::config("scenario: duplicate base station ids"));
        }
        for bs in &self.bs_sites {
            bs.validate()?;
        }
        if let TrajectorySpec::Waypoints(ref pts) = self.trajectory {
            if pts.is_empty() {
                return Err(Error::config("scenario: waypoint list is empty"));
            }
            for p in pts {
                self.grid.cell_index(p[0], p[1])?;
            }
        }
        Ok(())
    }

    /// Initial UAV position for a trajectory starting cell.
    pub fn position_at_cell(&self, cell: usize) -> Pos3 {
        let (x, y) = self.grid.cell_center(cell);
        [x, y, self.uav_altitude]
    }
}
