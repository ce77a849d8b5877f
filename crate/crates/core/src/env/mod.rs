//! The MDP environment: base-station grid, UAV trajectories, candidate
//! selection, state assembly, reward, episode loop, the CHM baseline
//! policy, and handover/ping-pong/overflow metrics.

mod scenario;
mod state;

pub use scenario::{ChmParams, GridSpec, Scenario, TrajectorySpec};
pub use state::{
    feature_names, StateVector, FEAT_ALTITUDE, FEAT_BUFFER, FEAT_CANDIDATE_BASE, FEAT_POSITION,
    FEAT_SERVING,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, LinkMeasurement, Pos3};
use crate::traffic::{self, BufferState};
use crate::{Error, Result};

/// What one environment step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateVector,
    pub reward: f64,
    pub handover: bool,
    pub ping_pong: bool,
    /// Bits dropped to the buffer clamp during this step.
    pub dropped_bits: f64,
    /// RSRP threshold (C3) satisfied on the chosen link.
    pub c3_met: bool,
    /// RSRQ threshold (C4) satisfied on the chosen link.
    pub c4_met: bool,
}

/// Aggregate episode statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub handover_count: u64,
    pub ping_pong_count: u64,
    /// 100 * ping_pongs / max(handovers, 1).
    pub ping_pong_percentage: f64,
    pub mean_buffer_bits: f64,
    pub dropped_bits_total: f64,
    pub mean_reward: f64,
}

/// One recorded step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    /// State observed before the action.
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub handover: bool,
    pub ping_pong: bool,
    pub dropped_bits: f64,
    /// Buffer occupancy after the step.
    pub buffer_after: f64,
}

/// Full (s, a, r, s') record of an episode, for replay and explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub final_state: StateVector,
}

impl EpisodeTrace {
    /// Recompute metrics from the recorded steps alone.
    pub fn metrics(&self) -> EpisodeMetrics {
        let n = self.steps.len().max(1) as f64;
        let handover_count = self.steps.iter().filter(|s| s.handover).count() as u64;
        let ping_pong_count = self.steps.iter().filter(|s| s.ping_pong).count() as u64;
        EpisodeMetrics {
            handover_count,
            ping_pong_count,
            ping_pong_percentage: 100.0 * ping_pong_count as f64 / (handover_count.max(1) as f64),
            mean_buffer_bits: self.steps.iter().map(|s| s.buffer_after).sum::<f64>() / n,
            dropped_bits_total: self.steps.iter().map(|s| s.dropped_bits).sum(),
            mean_reward: self.steps.iter().map(|s| s.reward).sum::<f64>() / n,
        }
    }

    /// CSV export: one row per step with the state measurement slots.
    pub fn to_csv(&self) -> String {
        let l = self.final_state.num_candidates();
        let mut out = String::from("t,cell,action,reward,handover,q_bits");
        for i in 0..l {
            out.push_str(&format!(",rsrp_{i}"));
        }
        for i in 0..l {
            out.push_str(&format!(",rsrq_{i}"));
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                s.t,
                s.state.position_cell(),
                s.action,
                s.reward,
                s.handover as u8,
                s.state.buffer_bits()
            ));
            for i in 0..l {
                out.push_str(&format!(",{}", s.state.rsrp(i)));
            }
            for i in 0..l {
                out.push_str(&format!(",{}", s.state.rsrq(i)));
            }
            out.push('\n');
        }
        out
    }
}

/// A handover decision rule. Policies may carry per-episode state (the CHM
/// time-to-trigger counter does); `reset` is called at episode start.
pub trait Policy {
    fn select(&mut self, state: &StateVector) -> usize;
    fn reset(&mut self) {}
}

impl<T: FnMut(&StateVector) -> usize> Policy for T {
    fn select(&mut self, state: &StateVector) -> usize {
        self(state)
    }
}

/// Always keeps the serving BS.
#[derive(Debug, Default)]
pub struct StayPolicy;

impl Policy for StayPolicy {
    fn select(&mut self, state: &StateVector) -> usize {
        state.serving_slot()
    }
}

/// Conventional handover management: A3-style rule with fixed hysteresis
/// and time-to-trigger. Hands over to the strongest candidate once its RSRP
/// exceeds the serving RSRP by more than the hysteresis for
/// `time_to_trigger_steps` consecutive steps.
#[derive(Debug, Clone)]
pub struct ChmPolicy {
    pub params: ChmParams,
    streak: usize,
    target: Option<u32>,
}

impl ChmPolicy {
    pub fn new(params: ChmParams) -> Self {
        ChmPolicy { params, streak: 0, target: None }
    }
}

impl Policy for ChmPolicy {
    fn select(&mut self, state: &StateVector) -> usize {
        let serving_slot = state.serving_slot();
        // slots are RSRP-descending, so slot 0 is the strongest candidate
        let best_slot = 0usize;
        if best_slot == serving_slot {
            self.streak = 0;
            self.target = None;
            return serving_slot;
        }
        let condition =
            state.rsrp(best_slot) > state.rsrp(serving_slot) + self.params.hysteresis_db;
        if !condition {
            self.streak = 0;
            self.target = None;
            return serving_slot;
        }
        let best_id = state.candidate_bs_ids[best_slot];
        if self.target == Some(best_id) {
            self.streak += 1;
        } else {
            self.target = Some(best_id);
            self.streak = 1;
        }
        if self.streak >= self.params.time_to_trigger_steps {
            self.streak = 0;
            self.target = None;
            best_slot
        } else {
            serving_slot
        }
    }

    fn reset(&mut self) {
        self.streak = 0;
        self.target = None;
    }
}

/// True iff a handover to `target_bs` returns to a BS that served within
/// the last `window_steps` steps of `serving_history`.
pub fn detect_ping_pong(serving_history: &[u32], target_bs: u32, window_steps: usize) -> bool {
    debug_assert!(window_steps >= 1);
    serving_history.iter().rev().take(window_steps).any(|&b| b == target_bs)
}

/// Ordered candidate list: the serving BS plus the strongest others, sorted
/// by RSRP descending (ties broken by lower BS id).
pub fn build_candidates(
    uav_pos: Pos3,
    serving_bs_id: u32,
    scenario: &Scenario,
) -> Result<Vec<LinkMeasurement>> {
    let l = scenario.num_candidates;
    if scenario.bs_sites.len() < l {
        return Err(Error::config(format!(
            "candidate selection needs {} BSs, scenario has {}",
            l,
            scenario.bs_sites.len()
        )));
    }
    let mut measurements = Vec::with_capacity(scenario.bs_sites.len());
    for bs in &scenario.bs_sites {
        measurements.push(channel::measure_link(uav_pos, bs, &scenario.bs_sites, &scenario.channel)?);
    }
    let by_strength =
        |a: &LinkMeasurement, b: &LinkMeasurement| match b.rsrp.partial_cmp(&a.rsrp) {
            Some(std::cmp::Ordering::Equal) | None => a.bs_id.cmp(&b.bs_id),
            Some(ord) => ord,
        };
    measurements.sort_by(by_strength);
    let serving_idx = measurements
        .iter()
        .position(|m| m.bs_id == serving_bs_id)
        .ok_or_else(|| Error::NotFound(format!("serving bs {serving_bs_id} not measured")))?;
    let serving = measurements.remove(serving_idx);
    let mut chosen: Vec<LinkMeasurement> = measurements.into_iter().take(l - 1).collect();
    chosen.push(serving);
    chosen.sort_by(by_strength);
    Ok(chosen)
}

/// Assemble the observation for a UAV position, buffer, and serving BS.
pub fn assemble_state(
    uav_pos: Pos3,
    buffer: &BufferState,
    serving_bs_id: u32,
    scenario: &Scenario,
) -> Result<StateVector> {
    let cell = scenario.grid.cell_index(uav_pos[0], uav_pos[1])?;
    let candidates = build_candidates(uav_pos, serving_bs_id, scenario)?;
    let serving_slot = candidates
        .iter()
        .position(|m| m.bs_id == serving_bs_id)
        .expect("serving pinned into candidate list");
    let rsrp: Vec<f64> = candidates.iter().map(|m| m.rsrp).collect();
    let rsrq: Vec<f64> = candidates.iter().map(|m| m.rsrq).collect();
    let ids: Vec<u32> = candidates.iter().map(|m| m.bs_id).collect();
    Ok(StateVector::new(cell, uav_pos[2], buffer.bits_queued, serving_slot, &rsrp, &rsrq, ids))
}

/// Per-step reward.
///
/// `omega_1 / (1 + q_norm) - omega_2 * handover + omega_3 * [RSRP >= th]
/// + omega_4 * [RSRQ >= th]`, with the buffer normalized by its capacity so
/// the relief term stays at a usable scale.
pub fn reward(
    next_buffer_bits: f64,
    handover: bool,
    chosen_rsrp: f64,
    chosen_rsrq: f64,
    scenario: &Scenario,
) -> f64 {
    let [w1, w2, w3, w4] = scenario.reward_weights;
    let q_norm = next_buffer_bits / scenario.traffic.q_max;
    let mut r = w1 / (1.0 + q_norm);
    if handover {
        r -= w2;
    }
    if chosen_rsrp >= scenario.rsrp_threshold {
        r += w3;
    }
    if chosen_rsrq >= scenario.rsrq_threshold {
        r += w4;
    }
    r
}

/// One live episode of the MDP.
pub struct Environment<'a> {
    scenario: &'a Scenario,
    rng: ChaCha8Rng,
    pos: Pos3,
    serving_bs: u32,
    buffer: BufferState,
    t: usize,
    serving_history: Vec<u32>,
    state: StateVector,
    waypoint_idx: usize,
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix-style combine so per-episode streams are independent
    let mut x = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^ (x >> 31)
}

impl<'a> Environment<'a> {
    pub fn new(scenario: &'a Scenario, episode_seed: u64) -> Result<Self> {
        scenario.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scenario.seed, episode_seed));
        let (pos, waypoint_idx) = match &scenario.trajectory {
            TrajectorySpec::RandomWalk => {
                let cell = rng.gen_range(0..scenario.grid.num_cells());
                (scenario.position_at_cell(cell), 0)
            }
            TrajectorySpec::Waypoints(pts) => {
                ([pts[0][0], pts[0][1], scenario.uav_altitude], 1.min(pts.len() - 1))
            }
        };
        // initial attach: strongest RSRP, ties to the lower id
        let mut best: Option<(f64, u32)> = None;
        for bs in &scenario.bs_sites {
            let r = channel::rsrp(pos, bs, &scenario.channel)?;
            let better = match best {
                None => true,
                Some((br, bid)) => r > br || (r == br && bs.id < bid),
            };
            if better {
                best = Some((r, bs.id));
            }
        }
        let serving_bs = best.expect("scenario has at least one BS").1;
        let buffer = BufferState::empty();
        let state = assemble_state(pos, &buffer, serving_bs, scenario)?;
        Ok(Environment {
            scenario,
            rng,
            pos,
            serving_bs,
            buffer,
            t: 0,
            serving_history: vec![serving_bs],
            state,
            waypoint_idx,
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.scenario.episode_steps
    }

    pub fn serving_bs(&self) -> u32 {
        self.serving_bs
    }

    fn advance_position(&mut self) {
        match &self.scenario.trajectory {
            TrajectorySpec::RandomWalk => {
                let grid = &self.scenario.grid;
                let cell = self.state.position_cell();
                let (row, col) = (cell / grid.cols, cell % grid.cols);
                let mut moves: Vec<(isize, isize)> = Vec::with_capacity(4);
                if row + 1 < grid.rows {
                    moves.push((1, 0));
                }
                if row > 0 {
                    moves.push((-1, 0));
                }
                if col + 1 < grid.cols {
                    moves.push((0, 1));
                }
                if col > 0 {
                    moves.push((0, -1));
                }
                let (dr, dc) = moves[self.rng.gen_range(0..moves.len())];
                let next = (row as isize + dr) as usize * grid.cols + (col as isize + dc) as usize;
                self.pos = self.scenario.position_at_cell(next);
            }
            TrajectorySpec::Waypoints(pts) => {
                let speed = self.scenario.grid.cell_width();
                let target = pts[self.waypoint_idx];
                let dx = target[0] - self.pos[0];
                let dy = target[1] - self.pos[1];
                let dist = (dx * dx + dy * dy).sqrt();
                if dist <= speed {
                    self.pos = [target[0], target[1], self.pos[2]];
                    if self.waypoint_idx + 1 < pts.len() {
                        self.waypoint_idx += 1;
                    }
                } else {
                    self.pos = [self.pos[0] + dx / dist * speed, self.pos[1] + dy / dist * speed, self.pos[2]];
                }
            }
        }
    }

    /// Execute one association decision.
    pub fn step(&mut self, action_slot: usize) -> Result<StepOutcome> {
        let l = self.scenario.num_candidates;
        if action_slot >= l {
            return Err(Error::invalid(format!("action slot {action_slot} out of 0..{l}")));
        }
        let chosen_id = self.state.candidate_bs_ids[action_slot];
        let chosen_rsrp = self.state.rsrp(action_slot);
        let chosen_rsrq = self.state.rsrq(action_slot);
        let handover = chosen_id != self.serving_bs;
        let ping_pong = handover
            && detect_ping_pong(&self.serving_history, chosen_id, self.scenario.ping_pong_window);

        let chosen_bs = self.scenario.bs_by_id(chosen_id)?;
        let sinr = channel::uplink_sinr(self.pos, chosen_bs, &self.scenario.channel)?;
        let service = traffic::service_bits(sinr, &self.scenario.traffic);
        let arrivals = traffic::draw_arrivals(&self.scenario.traffic, &mut self.rng);
        let (next_buffer, delta) =
            traffic::step_queue(&self.buffer, arrivals, handover, service, &self.scenario.traffic);

        let r = reward(next_buffer.bits_queued, handover, chosen_rsrp, chosen_rsrq, self.scenario);

        self.buffer = next_buffer;
        self.serving_bs = chosen_id;
        self.serving_history.push(chosen_id);
        self.advance_position();
        self.t += 1;
        self.state = assemble_state(self.pos, &self.buffer, self.serving_bs, self.scenario)?;

        Ok(StepOutcome {
            next_state: self.state.clone(),
            reward: r,
            handover,
            ping_pong,
            dropped_bits: delta.dropped_bits,
            c3_met: chosen_rsrp >= self.scenario.rsrp_threshold,
            c4_met: chosen_rsrq >= self.scenario.rsrq_threshold,
        })
    }
}

/// Run one full episode under a policy; returns aggregated metrics and the
/// complete trace.
pub fn run_episode(
    policy: &mut dyn Policy,
    scenario: &Scenario,
    episode_seed: u64,
) -> Result<(EpisodeMetrics, EpisodeTrace)> {
    policy.reset();
    let mut env = Environment::new(scenario, episode_seed)?;
    let mut steps = Vec::with_capacity(scenario.episode_steps);
    while !env.is_done() {
        let state = env.state().clone();
        let t = env.t();
        let action = policy.select(&state);
        let outcome = env.step(action)?;
        steps.push(TraceStep {
            t,
            state,
            action,
            reward: outcome.reward,
            handover: outcome.handover,
            ping_pong: outcome.ping_pong,
            dropped_bits: outcome.dropped_bits,
            buffer_after: outcome.next_state.buffer_bits(),
        });
    }
    let trace = EpisodeTrace { steps, final_state: env.state().clone() };
    Ok((trace.metrics(), trace))
}
