//! Time-tagged synthetic experiments and the log analytics that turn
//! detection logs into count tables.
//!
//! Times are integer nanoseconds. Each log is sorted with strictly
//! increasing times; the cycle is 100 ns split into 1 ns bins.

mod analytics;
mod config;
mod matching;
mod simulate;

pub use analytics::{
    bin_histogram, coincidence_bin_matrix, drift_offset, drift_offset_scan, estimate_offset, joint_detection_ratio,
    reconcile_zero_times, tabulate_counts, BinHistogram, BinMatrix, JointBinDistribution, Reconciliation,
    RECONCILE_STEP,
};
pub use config::{DelayModel, DetectionProfile, SimConfig, SwitchMode, DEFAULT_CYCLE_NS, DEFAULT_SWITCH_NS};
pub use matching::match_coincidences;
pub use simulate::{background_log, simulate_experiment, Audit, GroundTruth, PairRecord, SimOutput};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time_ns: i64,
    pub setting: u8,
    pub result: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Times strictly increasing, labels in `{0, 1}`.
    pub fn validate(&self) -> Result<()> {
        for (n, e) in self.events.iter().enumerate() {
            if e.setting > 1 || e.result > 1 {
                return Err(Error::invalid(format!("event {n} has setting {} result {}", e.setting, e.result)));
            }
            if n > 0 && e.time_ns <= self.events[n - 1].time_ns {
                return Err(Error::invalid(format!("log not strictly increasing at event {n} (t = {} ns)", e.time_ns)));
            }
        }
        Ok(())
    }
}

/// Matched `(alice_index, bob_index)` pairs, sorted, each index used once.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceSet {
    pub pairs: Vec<(usize, usize)>,
}

impl CoincidenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// True when no detection index appears twice.
    pub fn is_injective(&self) -> bool {
        let mut a: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        let mut b: Vec<usize> = self.pairs.iter().map(|p| p.1).collect();
        a.sort_unstable();
        b.sort_unstable();
        a.windows(2).all(|w| w[0] != w[1]) && b.windows(2).all(|w| w[0] != w[1])
    }
}
