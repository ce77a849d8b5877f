//! UAV buffer-queue dynamics: Poisson data arrivals, handover control
//! packets, Shannon-rate service, and overflow accounting.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Traffic and service parameters for one UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams {
    /// Mean packet arrivals per step (Poisson rate).
    pub lambda: f64,
    /// Data packet size in bits.
    pub data_packet_bits: f64,
    /// Control packet size in bits, enqueued on each handover.
    pub control_packet_bits: f64,
    /// Buffer capacity in bits.
    pub q_max: f64,
    /// Bandwidth per resource block, Hz.
    pub rrb_bandwidth_hz: f64,
    /// Resource blocks allocated to the UAV.
    pub rrbs_per_uav: u32,
    /// Step duration in seconds (the Shannon rate integrates over this).
    pub step_duration_s: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            lambda: 2.0,
            data_packet_bits: 5e5,
            control_packet_bits: 2e5,
            q_max: 2e7,
            rrb_bandwidth_hz: 180e3,
            rrbs_per_uav: 5,
            step_duration_s: 1.0,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config("traffic: lambda must be > 0"));
        }
        if !(self.data_packet_bits > 0.0) {
            return Err(Error::config("traffic: data_packet_bits must be > 0"));
        }
        if self.control_packet_bits < 0.0 {
            return Err(Error::config("traffic: control_packet_bits must be >= 0"));
        }
        if !(self.q_max > self.data_packet_bits) {
            return Err(Error::config("traffic: q_max must exceed data_packet_bits"));
        }
        if !(self.rrb_bandwidth_hz > 0.0) || self.rrbs_per_uav == 0 {
            return Err(Error::config("traffic: bandwidth and rrbs_per_uav must be > 0"));
        }
        if !(self.step_duration_s > 0.0) {
            return Err(Error::config("traffic: step_duration_s must be > 0"));
        }
        Ok(())
    }
}

/// Buffer occupancy of one UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferState {
    /// Bits currently queued, in [0, q_max].
    pub bits_queued: f64,
    /// Cumulative bits dropped to the capacity clamp.
    pub dropped_bits_cum: f64,
    /// Packet arrivals during the most recent step.
    pub arrivals_last_step: u64,
}

impl BufferState {
    pub fn empty() -> Self {
        BufferState { bits_queued: 0.0, dropped_bits_cum: 0.0, arrivals_last_step: 0 }
    }
}

/// What one queue step did, beyond the new state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueDelta {
    /// Bits actually transmitted (never more than were available).
    pub served_bits: f64,
    /// Bits dropped this step by the capacity clamp.
    pub dropped_bits: f64,
}

/// Draw the number of packet arrivals for one step.
pub fn draw_arrivals(params: &TrafficParams, rng: &mut impl Rng) -> u64 {
    let poisson = Poisson::new(params.lambda).expect("lambda > 0 validated");
    poisson.sample(rng) as u64
}

/// Shannon-rate service volume for one step, scalar-generic kernel.
pub fn shannon_bits<F: Real>(sinr_linear: F, bandwidth_hz: F, rrbs: F, step_s: F) -> F {
    bandwidth_hz * rrbs * (F::one() + sinr_linear).log2() * step_s
}

/// Bits the serving link can move in one step at the given uplink SINR.
pub fn service_bits(sinr_linear: f64, params: &TrafficParams) -> f64 {
    debug_assert!(sinr_linear >= 0.0);
    shannon_bits(
        sinr_linear,
        params.rrb_bandwidth_hz,
        params.rrbs_per_uav as f64,
        params.step_duration_s,
    )
}

/// Advance the buffer by one step.
///
/// Arrivals and the handover control packet are enqueued simultaneously,
/// service drains up to the available bits, and anything above `q_max` is
/// dropped and accounted. Conservation holds exactly:
/// `q' + served + dropped == q + arrivals_bits + control_bits`.
pub fn step_queue(
    buf: &BufferState,
    arrivals: u64,
    handover: bool,
    served_capacity_bits: f64,
    params: &TrafficParams,
) -> (BufferState, QueueDelta) {
    let in_bits =
        arrivals as f64 * params.data_packet_bits + if handover { params.control_packet_bits } else { 0.0 };
    let available = buf.bits_queued + in_bits;
    let served = served_capacity_bits.min(available).max(0.0);
    let after_service = available - served;
    let (next_q, dropped) = if after_service > params.q_max {
        (params.q_max, after_service - params.q_max)
    } else {
        (after_service, 0.0)
    };
    (
        BufferState {
            bits_queued: next_q,
            dropped_bits_cum: buf.dropped_bits_cum + dropped,
            arrivals_last_step: arrivals,
        },
        QueueDelta { served_bits: served, dropped_bits: dropped },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arrivals_match_poisson_moments() {
        let params = TrafficParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_arrivals(&params, &mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - params.lambda).abs() / params.lambda < 0.02, "mean {mean}");
        assert!((var - params.lambda).abs() / params.lambda < 0.05, "var {var}");
    }

    #[test]
    fn arrivals_deterministic_per_rng_state() {
        let params = TrafficParams::default();
        let a = draw_arrivals(&params, &mut ChaCha8Rng::seed_from_u64(9));
        let b = draw_arrivals(&params, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn service_bits_golden() {
        let params = TrafficParams::default(); // 180 kHz, 5 RRBs, 1 s
        assert!((service_bits(15.0, &params) - 3.6e6).abs() < 1e-6);
        assert_eq!(service_bits(0.0, &params), 0.0);
        let one_rrb = TrafficParams { rrbs_per_uav: 1, ..params };
        assert!((service_bits(1.0, &one_rrb) - 180_000.0).abs() < 1e-9);
    }

    #[test]
    fn step_queue_clamps_at_zero() {
        let params = TrafficParams::default();
        let (next, delta) = step_queue(&BufferState::empty(), 0, false, 1e6, &params);
        assert_eq!(next.bits_queued, 0.0);
        assert_eq!(delta.served_bits, 0.0);
        assert_eq!(delta.dropped_bits, 0.0);
    }

    #[test]
    fn step_queue_direct_arithmetic() {
        let params = TrafficParams {
            data_packet_bits: 1e6,
            control_packet_bits: 0.5e6,
            ..TrafficParams::default()
        };
        let buf = BufferState { bits_queued: 10e6, ..BufferState::empty() };
        let (next, delta) = step_queue(&buf, 2, true, 3e6, &params);
        assert!((next.bits_queued - 9.5e6).abs() < 1e-9);
        assert_eq!(delta.served_bits, 3e6);
    }

    #[test]
    fn step_queue_saturates_and_accounts_drops() {
        let params = TrafficParams::default();
        let buf = BufferState { bits_queued: params.q_max, ..BufferState::empty() };
        let arrivals = 10;
        let (next, delta) = step_queue(&buf, arrivals, false, 0.0, &params);
        assert_eq!(next.bits_queued, params.q_max);
        let excess = arrivals as f64 * params.data_packet_bits;
        assert!((delta.dropped_bits - excess).abs() < 1e-9);
        assert!((next.dropped_bits_cum - excess).abs() < 1e-9);
    }

    #[test]
    fn unserved_queue_grows_at_arrival_rate() {
        let params = TrafficParams { q_max: 1e12, ..TrafficParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let steps = 20_000u64;
        let mut buf = BufferState::empty();
        for _ in 0..steps {
            let m = draw_arrivals(&params, &mut rng);
            buf = step_queue(&buf, m, false, 0.0, &params).0;
        }
        let expected = steps as f64 * params.lambda * params.data_packet_bits;
        assert!(
            (buf.bits_queued - expected).abs() / expected < 0.03,
            "grew to {} vs {expected}",
            buf.bits_queued
        );
    }

    proptest! {
        #[test]
        fn queue_conserves_bits(
            q0 in 0.0f64..2e7,
            arrivals in 0u64..40,
            handover in proptest::bool::ANY,
            served_cap in 0.0f64..1e7,
        ) {
            let params = TrafficParams::default();
            let buf = BufferState { bits_queued: q0.min(params.q_max), ..BufferState::empty() };
            let (next, delta) = step_queue(&buf, arrivals, handover, served_cap, &params);
            let in_bits = arrivals as f64 * params.data_packet_bits
                + if handover { params.control_packet_bits } else { 0.0 };
            let lhs = next.bits_queued + delta.served_bits + delta.dropped_bits;
            let rhs = buf.bits_queued + in_bits;
            prop_assert!((lhs - rhs).abs() < 1e-6);
            prop_assert!(next.bits_queued >= 0.0);
            prop_assert!(next.bits_queued <= params.q_max);
            prop_assert!(delta.served_bits <= served_cap + 1e-9);
        }
    }
}
