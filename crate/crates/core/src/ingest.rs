//! Flight measurement log ingestion: strict-schema CSV parsing, and replay
//! of logged measurements into the simulator's state layout with a
//! synthesized buffer (the traffic model re-run over the logged link
//! quality, since real logs carry no queue state).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Read;

use crate::channel::dbm_to_mw;
use crate::env::{ChmPolicy, GridSpec, Policy, Scenario, StateVector};
use crate::traffic::{self, BufferState, TrafficParams};
use crate::{Error, Result};

/// Exact header of the flight-log schema.
pub const FLIGHT_LOG_HEADER: &str = "t,uav_id,x,y,alt,serving_cell,c0_id,c0_rsrp,c0_rsrq,c1_id,c1_rsrp,c1_rsrq,c2_id,c2_rsrp,c2_rsrq,c3_id,c3_rsrp,c3_rsrq";

/// Candidates per log row (fixed by the schema).
pub const LOG_CANDIDATES: usize = 4;

/// Padding sentinels for rows that report fewer than four candidates.
/// They sit at the floor of the normalization ranges, never NaN.
pub const PAD_RSRP_DBM: f64 = -140.0;
pub const PAD_RSRQ_DB: f64 = -30.0;
pub const PAD_CELL_ID: i64 = -1;

/// One logged candidate measurement. `cell_id < 0` marks padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMeasurement {
    pub cell_id: i64,
    pub rsrp: f64,
    pub rsrq: f64,
}

impl CandidateMeasurement {
    pub fn padded() -> Self {
        CandidateMeasurement { cell_id: PAD_CELL_ID, rsrp: PAD_RSRP_DBM, rsrq: PAD_RSRQ_DB }
    }

    pub fn is_padding(&self) -> bool {
        self.cell_id < 0
    }
}

/// One parsed flight-log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightLogRow {
    pub timestamp: f64,
    pub uav_id: u32,
    pub x: f64,
    pub y: f64,
    pub altitude: f64,
    pub serving_cell: u32,
    pub candidates: [CandidateMeasurement; LOG_CANDIDATES],
}

/// One replayed step: the reconstructed state plus handover bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedStep {
    pub timestamp: f64,
    pub uav_id: u32,
    pub serving_cell: u32,
    /// Serving cell changed relative to the previous kept row of this UAV.
    pub handover: bool,
    pub state: StateVector,
}

/// A flight log replayed into simulator-layout states.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedTrace {
    pub steps: Vec<ReplayedStep>,
    /// Rows dropped for being out of the grid or missing their serving cell.
    pub skipped_rows: usize,
}

fn parse_field<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what}: {field:?}"),
    })
}

/// Parse a flight log from a CSV stream, validating the exact schema.
///
/// Rows reporting fewer than four candidates leave the trailing triples
/// empty; those are padded with the documented sentinels. Malformed rows
/// and per-UAV timestamp regressions are errors with line numbers.
pub fn parse_flight_log<R: Read>(reader: R) -> Result<Vec<FlightLogRow>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .comment(Some(b'#'))
        .from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let got: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
        let expected: Vec<&str> = FLIGHT_LOG_HEADER.split(',').collect();
        if got != expected {
            return Err(Error::Schema(format!(
                "flight log header mismatch: expected `{FLIGHT_LOG_HEADER}`, got `{}`",
                got.join(",")
            )));
        }
    }
    let mut rows = Vec::new();
    let mut last_t: HashMap<u32, f64> = HashMap::new();
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let timestamp: f64 = parse_field(&record[0], "t", line)?;
        let uav_id: u32 = parse_field(&record[1], "uav_id", line)?;
        let x: f64 = parse_field(&record[2], "x", line)?;
        let y: f64 = parse_field(&record[3], "y", line)?;
        let altitude: f64 = parse_field(&record[4], "alt", line)?;
        let serving_cell: u32 = parse_field(&record[5], "serving_cell", line)?;
        let mut candidates = [CandidateMeasurement::padded(); LOG_CANDIDATES];
        let mut finite_seen = false;
        for (slot, cand) in candidates.iter_mut().enumerate() {
            let base = 6 + slot * 3;
            let triple = [&record[base], &record[base + 1], &record[base + 2]];
            let empties = triple.iter().filter(|f| f.trim().is_empty()).count();
            if empties == 3 {
                continue; // padded candidate
            }
            if empties != 0 {
                return Err(Error::Parse {
                    line,
                    msg: format!("candidate {slot} is partially empty"),
                });
            }
            let rsrp: f64 = parse_field(triple[1], &format!("c{slot}_rsrp"), line)?;
            if !rsrp.is_finite() {
                return Err(Error::Parse { line, msg: format!("c{slot}_rsrp is not finite") });
            }
            *cand = CandidateMeasurement {
                cell_id: parse_field(triple[0], &format!("c{slot}_id"), line)?,
                rsrp,
                rsrq: parse_field(triple[2], &format!("c{slot}_rsrq"), line)?,
            };
            finite_seen = true;
        }
        if !finite_seen {
            return Err(Error::Parse { line, msg: "row has no finite candidate".into() });
        }
        if let Some(&prev) = last_t.get(&uav_id) {
            if timestamp < prev {
                return Err(Error::Parse {
                    line,
                    msg: format!("timestamp {timestamp} regresses below {prev} for uav {uav_id}"),
                });
            }
        }
        last_t.insert(uav_id, timestamp);
        rows.push(FlightLogRow { timestamp, uav_id, x, y, altitude, serving_cell, candidates });
    }
    Ok(rows)
}

/// Per-UAV replay bookkeeping.
struct UavReplay {
    buffer: BufferState,
    prev_serving: Option<u32>,
}

/// Replay parsed rows into simulator-layout states.
///
/// The buffer is synthesized by re-running the queue dynamics over the
/// logged serving-link quality, mapping the serving RSRQ directly to an
/// SINR estimate in dB. Positions are quantized to the scenario grid; rows
/// outside the grid or whose serving cell is not among the candidates are
/// skipped and counted.
pub fn replay_to_states(
    rows: &[FlightLogRow],
    traffic_params: &TrafficParams,
    grid: &GridSpec,
    seed: u64,
) -> Result<ReplayedTrace> {
    traffic_params.validate()?;
    grid.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_uav: HashMap<u32, UavReplay> = HashMap::new();
    let mut steps = Vec::with_capacity(rows.len());
    let mut skipped = 0usize;
    for row in rows {
        let cell = match grid.cell_index(row.x, row.y) {
            Ok(c) => c,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        // slots sorted by RSRP descending, ties to the lower id; padding
        // floors sort last
        let mut slots = row.candidates;
        slots.sort_by(|a, b| {
            b.rsrp
                .partial_cmp(&a.rsrp)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cell_id.cmp(&b.cell_id))
        });
        let serving_slot = match slots.iter().position(|c| c.cell_id == row.serving_cell as i64) {
            Some(s) => s,
            None => {
                skipped += 1;
                continue;
            }
        };
        let entry = per_uav
            .entry(row.uav_id)
            .or_insert(UavReplay { buffer: BufferState::empty(), prev_serving: None });
        let handover = entry.prev_serving.is_some_and(|p| p != row.serving_cell);
        let rsrp: Vec<f64> = slots.iter().map(|c| c.rsrp).collect();
        let rsrq: Vec<f64> = slots.iter().map(|c| c.rsrq).collect();
        let ids: Vec<u32> = slots
            .iter()
            .map(|c| if c.is_padding() { u32::MAX } else { c.cell_id as u32 })
            .collect();
        let state = StateVector::new(
            cell,
            row.altitude,
            entry.buffer.bits_queued,
            serving_slot,
            &rsrp,
            &rsrq,
            ids,
        );
        state.validate().map_err(|e| Error::Schema(format!("replayed state invalid: {e}")))?;
        steps.push(ReplayedStep {
            timestamp: row.timestamp,
            uav_id: row.uav_id,
            serving_cell: row.serving_cell,
            handover,
            state,
        });
        // advance the synthesized queue: serving RSRQ as the SINR estimate
        let sinr_linear = dbm_to_mw(rsrq[serving_slot]);
        let service = traffic::service_bits(sinr_linear, traffic_params);
        let arrivals = traffic::draw_arrivals(traffic_params, &mut rng);
        entry.buffer = traffic::step_queue(&entry.buffer, arrivals, handover, service, traffic_params).0;
        entry.prev_serving = Some(row.serving_cell);
    }
    Ok(ReplayedTrace { steps, skipped_rows: skipped })
}

/// Generate a schema-conformant synthetic sample log by running the
/// simulator under the CHM baseline.
pub fn generate_sample_log(scenario: &Scenario, episode_seed: u64, rows: usize) -> Result<String> {
    if scenario.num_candidates != LOG_CANDIDATES {
        return Err(Error::config(format!(
            "sample log needs {LOG_CANDIDATES} candidates, scenario has {}",
            scenario.num_candidates
        )));
    }
    let mut run_scenario = scenario.clone();
    run_scenario.episode_steps = rows.max(1);
    let mut policy = ChmPolicy::new(run_scenario.chm);
    let (_, trace) = crate::env::run_episode(&mut policy, &run_scenario, episode_seed)?;
    let mut out = String::from(FLIGHT_LOG_HEADER);
    out.push('\n');
    for step in &trace.steps {
        let s = &step.state;
        let (x, y) = run_scenario.grid.cell_center(s.position_cell());
        out.push_str(&format!(
            "{},0,{},{},{},{}",
            step.t,
            x,
            y,
            s.altitude(),
            s.serving_bs_id()
        ));
        for slot in 0..LOG_CANDIDATES {
            out.push_str(&format!(
                ",{},{},{}",
                s.candidate_bs_ids[slot],
                s.rsrp(slot),
                s.rsrq(slot)
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_scenario() -> Scenario {
        Scenario::desk_default(3)
    }

    #[test]
    fn parse_empty_data_section() {
        let text = format!("{FLIGHT_LOG_HEADER}\n");
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn parse_rejects_bad_header() {
        let text = "t,uav_id,x\n1,0,2\n";
        assert!(matches!(parse_flight_log(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn generated_sample_parses_clean() {
        let scenario = sample_scenario();
        let text = generate_sample_log(&scenario, 1, 200).unwrap();
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 200);
        assert!(rows.iter().all(|r| !r.candidates[0].is_padding()));
        let replay =
            replay_to_states(&rows, &scenario.traffic, &scenario.grid, 7).unwrap();
        assert_eq!(replay.steps.len(), 200);
        assert_eq!(replay.skipped_rows, 0);
    }

    #[test]
    fn short_candidate_rows_are_padded() {
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n0,0,150,150,120,3,3,-70.5,1.5,9,-80,0.5,,,,,,\n"
        );
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].candidates[2].is_padding());
        assert!(rows[0].candidates[3].is_padding());
        assert_eq!(rows[0].candidates[2].rsrp, PAD_RSRP_DBM);
        assert_eq!(rows[0].candidates[2].rsrq, PAD_RSRQ_DB);
    }

    #[test]
    fn partially_empty_candidate_is_an_error() {
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n0,0,150,150,120,3,3,-70.5,1.5,9,,0.5,,,,,,\n"
        );
        let err = parse_flight_log(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n0,0,150,150,120,3,3,-70.5,1.5,9,-80,0.5,,,,,,\n1,0,150,150,120,3,3,notanumber,1.5,9,-80,0.5,,,,,,\n"
        );
        match parse_flight_log(text.as_bytes()).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("c0_rsrp"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn timestamp_regression_is_an_error() {
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n5,0,150,150,120,3,3,-70,1,,,,,,,,,\n4,0,150,150,120,3,3,-70,1,,,,,,,,,\n"
        );
        match parse_flight_log(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn constant_serving_cell_has_no_handovers() {
        let scenario = sample_scenario();
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n0,0,150,150,120,3,3,-70,1,4,-75,0,,,,,,\n1,0,250,150,120,3,3,-71,1,4,-74,0,,,,,,\n2,0,350,150,120,3,3,-72,1,4,-73,0,,,,,,\n"
        );
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        let replay = replay_to_states(&rows, &scenario.traffic, &scenario.grid, 1).unwrap();
        assert!(replay.steps.iter().all(|s| !s.handover));
    }

    #[test]
    fn serving_change_marks_one_handover_and_charges_control_packet() {
        let scenario = sample_scenario();
        let mut traffic_params = scenario.traffic.clone();
        // no arrivals, no service: only the control packet moves the buffer
        traffic_params.lambda = 1e-12;
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n0,0,150,150,120,3,3,-70,-300,4,-75,-300,,,,,,\n1,0,150,150,120,4,3,-70,-300,4,-75,-300,,,,,,\n2,0,150,150,120,4,3,-70,-300,4,-75,-300,,,,,,\n"
        );
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        let replay = replay_to_states(&rows, &traffic_params, &scenario.grid, 1).unwrap();
        let handovers: Vec<bool> = replay.steps.iter().map(|s| s.handover).collect();
        assert_eq!(handovers, vec![false, true, false]);
        // the control packet lands in the buffer observed at the NEXT row
        assert_eq!(replay.steps[1].state.buffer_bits(), 0.0);
        assert!(
            (replay.steps[2].state.buffer_bits() - traffic_params.control_packet_bits).abs() < 1.0
        );
    }

    #[test]
    fn out_of_grid_rows_are_skipped_with_count() {
        let scenario = sample_scenario();
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n0,0,150,150,120,3,3,-70,1,,,,,,,,,\n1,0,-50,150,120,3,3,-70,1,,,,,,,,,\n2,0,250,150,120,3,3,-70,1,,,,,,,,,\n"
        );
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        let replay = replay_to_states(&rows, &scenario.traffic, &scenario.grid, 1).unwrap();
        assert_eq!(replay.steps.len(), 2);
        assert_eq!(replay.skipped_rows, 1);
    }

    #[test]
    fn replay_is_deterministic_per_seed() {
        let scenario = sample_scenario();
        let text = generate_sample_log(&scenario, 5, 64).unwrap();
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        let a = replay_to_states(&rows, &scenario.traffic, &scenario.grid, 9).unwrap();
        let b = replay_to_states(&rows, &scenario.traffic, &scenario.grid, 9).unwrap();
        assert_eq!(a, b);
        let c = replay_to_states(&rows, &scenario.traffic, &scenario.grid, 10).unwrap();
        assert_ne!(a, c, "different seeds draw different arrival streams");
    }

    #[test]
    fn replayed_states_validate_and_pad_to_floor() {
        let scenario = sample_scenario();
        let text = format!(
            "{FLIGHT_LOG_HEADER}\n0,0,150,150,120,3,3,-70,1,9,-80,0,,,,,,\n"
        );
        let rows = parse_flight_log(text.as_bytes()).unwrap();
        let replay = replay_to_states(&rows, &scenario.traffic, &scenario.grid, 1).unwrap();
        let s = &replay.steps[0].state;
        s.validate().unwrap();
        assert_eq!(s.rsrp(2), PAD_RSRP_DBM);
        assert_eq!(s.rsrq(3), PAD_RSRQ_DB);
        assert!(s.features.iter().all(|f| f.is_finite()));
    }
}
