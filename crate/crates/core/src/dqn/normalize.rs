use serde::{Deserialize, Serialize};

use crate::env::{feature_names, Scenario};

/// RSRP normalization range in dBm.
pub const RSRP_RANGE: (f64, f64) = (-140.0, -40.0);
/// RSRQ normalization range in dB.
pub const RSRQ_RANGE: (f64, f64) = (-30.0, 30.0);
/// Altitude normalization range in metres.
pub const ALTITUDE_RANGE: (f64, f64) = (0.0, 300.0);

/// Fixed invertible affine map taking raw state features to roughly [0, 1].
///
/// Derived once from the scenario and stored with every checkpoint so the
/// trainer, the explainer, and log replay all use the identical map. No
/// clamping: out-of-range raw values map outside [0, 1] and remain exactly
/// invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_names: Vec<String>,
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Normalizer {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let l = scenario.num_candidates;
        let mut offsets = Vec::with_capacity(4 + 2 * l);
        let mut scales = Vec::with_capacity(4 + 2 * l);
        let mut push = |lo: f64, hi: f64| {
            offsets.push(lo);
            scales.push((hi - lo).max(1e-12));
        };
        push(0.0, (scenario.grid.num_cells() as f64 - 1.0).max(1.0));
        push(ALTITUDE_RANGE.0, ALTITUDE_RANGE.1);
        push(0.0, scenario.traffic.q_max);
        push(0.0, (l as f64 - 1.0).max(1.0));
        for _ in 0..l {
            push(RSRP_RANGE.0, RSRP_RANGE.1);
        }
        for _ in 0..l {
            push(RSRQ_RANGE.0, RSRQ_RANGE.1);
        }
        Normalizer { feature_names: feature_names(l), offsets, scales }
    }

    pub fn dim(&self) -> usize {
        self.offsets.len()
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        debug_assert_eq!(raw.len(), self.dim());
        raw.iter().zip(self.offsets.iter().zip(&self.scales)).map(|(x, (o, s))| (x - o) / s).collect()
    }

    pub fn denormalize(&self, norm: &[f64]) -> Vec<f64> {
        debug_assert_eq!(norm.len(), self.dim());
        norm.iter().zip(self.offsets.iter().zip(&self.scales)).map(|(x, (o, s))| x * s + o).collect()
    }
}
