use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Indices of the scalar features that precede the per-candidate blocks.
pub const FEAT_POSITION: usize = 0;
pub const FEAT_ALTITUDE: usize = 1;
pub const FEAT_BUFFER: usize = 2;
pub const FEAT_SERVING: usize = 3;
/// First per-candidate feature slot (RSRP block, then RSRQ block).
pub const FEAT_CANDIDATE_BASE: usize = 4;

/// The observation shared by the environment, the DQN, and the explainer.
///
/// Layout (for L candidates, 12 features at the default L = 4):
/// `[position_cell, altitude, buffer_queue_size, serving_bs,
///   rsrp_0..rsrp_{L-1}, rsrq_0..rsrq_{L-1}]`,
/// with candidate slots sorted by RSRP descending (ties by lower BS id) and
/// the serving BS always present among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub features: Vec<f64>,
    /// BS ids behind the candidate slots, in slot order.
    pub candidate_bs_ids: Vec<u32>,
}

/// Feature names in layout order; these are the labels used by every report.
pub fn feature_names(num_candidates: usize) -> Vec<String> {
    let mut names = vec![
        "position".to_string(),
        "altitude".to_string(),
        "buffer_queue_size".to_string(),
        "serving_bs".to_string(),
    ];
    for i in 0..num_candidates {
        names.push(format!("rsrp_{i}"));
    }
    for i in 0..num_candidates {
        names.push(format!("rsrq_{i}"));
    }
    names
}

impl StateVector {
    pub fn new(
        position_cell: usize,
        altitude: f64,
        buffer_bits: f64,
        serving_slot: usize,
        rsrp: &[f64],
        rsrq: &[f64],
        candidate_bs_ids: Vec<u32>,
    ) -> Self {
        let l = candidate_bs_ids.len();
        debug_assert_eq!(rsrp.len(), l);
        debug_assert_eq!(rsrq.len(), l);
        let mut features = Vec::with_capacity(4 + 2 * l);
        features.push(position_cell as f64);
        features.push(altitude);
        features.push(buffer_bits);
        features.push(serving_slot as f64);
        features.extend_from_slice(rsrp);
        features.extend_from_slice(rsrq);
        StateVector { features, candidate_bs_ids }
    }

    pub fn num_candidates(&self) -> usize {
        self.candidate_bs_ids.len()
    }

    pub fn position_cell(&self) -> usize {
        self.features[FEAT_POSITION] as usize
    }

    pub fn altitude(&self) -> f64 {
        self.features[FEAT_ALTITUDE]
    }

    pub fn buffer_bits(&self) -> f64 {
        self.features[FEAT_BUFFER]
    }

    pub fn serving_slot(&self) -> usize {
        self.features[FEAT_SERVING] as usize
    }

    pub fn serving_bs_id(&self) -> u32 {
        self.candidate_bs_ids[self.serving_slot()]
    }

    pub fn rsrp(&self, slot: usize) -> f64 {
        self.features[FEAT_CANDIDATE_BASE + slot]
    }

    pub fn rsrq(&self, slot: usize) -> f64 {
        self.features[FEAT_CANDIDATE_BASE + self.num_candidates() + slot]
    }

    /// Check the layout invariants: slot count, serving index range, and
    /// RSRP-descending slot order.
    pub fn validate(&self) -> Result<()> {
        let l = self.num_candidates();
        if self.features.len() != 4 + 2 * l {
            return Err(Error::Schema(format!(
                "state: {} features for {} candidates",
                self.features.len(),
                l
            )));
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Schema("state: non-finite feature".into()));
        }
        let slot = self.features[FEAT_SERVING];
        if slot.fract() != 0.0 || slot < 0.0 || slot >= l as f64 {
            return Err(Error::Schema(format!("state: serving slot {slot} out of range")));
        }
        for i in 1..l {
            if self.rsrp(i) > self.rsrp(i - 1) {
                return Err(Error::Schema(format!(
                    "state: slots not sorted by RSRP descending at {i}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_accessors_match_positions() {
        let s = StateVector::new(
            43,
            120.0,
            5e6,
            1,
            &[-60.0, -65.0, -70.0, -80.0],
            &[3.0, 1.0, -2.0, -8.0],
            vec![4, 2, 0, 6],
        );
        assert_eq!(s.features.len(), 12);
        assert_eq!(s.position_cell(), 43);
        assert_eq!(s.altitude(), 120.0);
        assert_eq!(s.buffer_bits(), 5e6);
        assert_eq!(s.serving_slot(), 1);
        assert_eq!(s.serving_bs_id(), 2);
        assert_eq!(s.rsrp(0), -60.0);
        assert_eq!(s.rsrq(3), -8.0);
        s.validate().unwrap();
    }

    #[test]
    fn feature_names_match_layout() {
        let names = feature_names(4);
        assert_eq!(names.len(), 12);
        assert_eq!(names[0], "position");
        assert_eq!(names[2], "buffer_queue_size");
        assert_eq!(names[4], "rsrp_0");
        assert_eq!(names[11], "rsrq_3");
    }

    #[test]
    fn validate_rejects_unsorted_slots() {
        let s = StateVector::new(
            0,
            120.0,
            0.0,
            0,
            &[-70.0, -60.0, -80.0, -90.0],
            &[0.0; 4],
            vec![0, 1, 2, 3],
        );
        assert!(s.validate().is_err());
    }
}
