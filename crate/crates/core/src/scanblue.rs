//! The 41-experiment scan and the fitted values published for it.
//!
//! These values serve as fixtures and as realistic magnitudes for
//! synthetic data; the original detection logs are not available.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::quantum::ComplexMatrix4;

/// Alice's bias angle for each experiment, in units of π.
pub const SCAN_THETA_OVER_PI: [(&str, f64); 41] = [
    ("scanblue110", -1.00),
    ("scanblue111", -0.95),
    ("scanblue112", -0.90),
    ("scanblue113", -0.85),
    ("scanblue114", -0.80),
    ("scanblue115", -0.75),
    ("scanblue116", -0.70),
    ("scanblue117", -0.65),
    ("scanblue118", -0.60),
    ("scanblue119", -0.55),
    ("scanblue120", -0.50),
    ("scanblue121", -0.45),
    ("scanblue122", -0.40),
    ("scanblue123", -0.35),
    ("scanblue124", -0.30),
    ("scanblue125", -0.25),
    ("scanblue126", -0.20),
    ("scanblue127", -0.15),
    ("scanblue128", -0.10),
    ("scanblue129", -0.05),
    ("scanblue130", 0.00),
    ("scanblue131", 0.05),
    ("scanblue132", 0.10),
    ("scanblue133", 0.15),
    ("scanblue134", 0.20),
    ("scanblue135", 0.25),
    ("scanblue136", 0.30),
    ("scanblue137", 0.35),
    // scanblue138 duplicated scanblue137 and is not part of the series.
    ("scanblue139", 0.35),
    ("scanblue140", 0.40),
    ("scanblue141", 0.45),
    ("scanblue142", 0.50),
    ("scanblue143", 0.55),
    ("scanblue144", 0.60),
    ("scanblue145", 0.65),
    ("scanblue146", 0.70),
    ("scanblue147", 0.75),
    ("scanblue148", 0.80),
    ("scanblue149", 0.85),
    ("scanblue150", 0.90),
    ("scanblue151", 0.95),
];

/// Experiment duration, ns.
pub const EXPERIMENT_DURATION_NS: f64 = 5e9;
/// Counts per experiment: 4 + 4 + 16.
pub const COUNTS_PER_EXPERIMENT: usize = 24;
/// Total counts in the full series.
pub const SERIES_COUNTS: usize = 41 * COUNTS_PER_EXPERIMENT;
/// Coincidence window width used for the published Model #3 fit, ns.
pub const DEFAULT_WINDOW_NS: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDescriptor {
    pub id: String,
    pub theta_over_pi: f64,
}

impl ExperimentDescriptor {
    pub fn theta(&self) -> f64 {
        self.theta_over_pi * PI
    }
}

/// The full scan in experiment order.
pub fn scan_series() -> Vec<ExperimentDescriptor> {
    SCAN_THETA_OVER_PI
        .iter()
        .map(|&(id, t)| ExperimentDescriptor { id: id.to_string(), theta_over_pi: t })
        .collect()
}

/// Bias angle (units of π) for a known experiment id.
pub fn theta_over_pi_for(id: &str) -> Option<f64> {
    SCAN_THETA_OVER_PI.iter().find(|(name, _)| *name == id).map(|&(_, t)| t)
}

fn matrix(entries: [[(f64, f64); 4]; 4]) -> ComplexMatrix4 {
    ComplexMatrix4::from_fn(|r, c| Complex64::new(entries[r][c].0, entries[r][c].1))
}

/// Fitted Model #1 state as quoted (trace 0.9994 because of rounding).
pub fn model1_density_raw() -> ComplexMatrix4 {
    matrix([
        [(0.0153, 0.0), (-0.0418, 0.0003), (0.0317, 0.0), (-0.0026, 0.0)],
        [(-0.0418, -0.0003), (0.4798, 0.0), (-0.4341, 0.0), (-0.0388, 0.0)],
        [(0.0317, 0.0), (-0.4341, 0.0), (0.4867, 0.0), (0.0395, -0.0003)],
        [(-0.0026, 0.0), (-0.0388, 0.0), (0.0395, 0.0003), (0.0176, 0.0)],
    ])
}

/// Fitted Model #2 state as quoted.
pub fn model2_density_raw() -> ComplexMatrix4 {
    matrix([
        [(0.0180, 0.0), (-0.0371, 0.0), (0.0312, 0.0), (-0.0028, -0.0002)],
        [(-0.0371, 0.0), (0.4782, 0.0), (-0.4358, 0.0), (-0.0384, 0.0)],
        [(0.0312, 0.0), (-0.4358, 0.0), (0.4879, 0.0), (0.0469, 0.0)],
        [(-0.0028, 0.0002), (-0.0384, 0.0), (0.0469, 0.0), (0.0159, 0.0)],
    ])
}

/// Fitted Model #3 state as quoted.
pub fn model3_density_raw() -> ComplexMatrix4 {
    matrix([
        [(0.0117, 0.0), (-0.0384, -0.0074), (0.0324, -0.0055), (0.0032, -0.0010)],
        [(-0.0384, 0.0074), (0.4851, 0.0), (-0.4525, 0.0823), (-0.0399, 0.0176)],
        [(0.0324, 0.0055), (-0.4525, -0.0823), (0.4926, 0.0), (0.0486, -0.0121)],
        [(0.0032, 0.0010), (-0.0399, -0.0176), (0.0486, 0.0121), (0.0106, 0.0)],
    ])
}

/// Model #1: pairs per quadrant and per-setting detection probabilities.
pub const MODEL1_PAIRS: f64 = 963_382.0;
pub const MODEL1_ALICE: [f64; 2] = [0.05110, 0.05393];
pub const MODEL1_BOB: [f64; 2] = [0.03657, 0.03566];

/// Model #2: pairs per quadrant and per-(setting, result) probabilities.
pub const MODEL2_PAIRS: f64 = 964_212.0;
pub const MODEL2_ALICE: [f64; 4] = [0.04855, 0.05344, 0.05126, 0.05638];
pub const MODEL2_BOB: [f64; 4] = [0.03627, 0.03681, 0.03655, 0.03473];

/// Model #3: products `N·pa_ij`, `N·pb_kl` and `N·pc_ijkl` (lexicographic ijkl).
pub const MODEL3_ALICE_RATE: [f64; 4] = [46_812.68, 51_521.92, 49_416.17, 54_362.87];
pub const MODEL3_BOB_RATE: [f64; 4] = [35_078.74, 35_369.69, 35_272.19, 33_454.38];
pub const MODEL3_COINC_RATE: [f64; 16] = [
    1448.14, 1701.85, 1540.10, 1759.54, // (0,0) × Bob (0,0) (0,1) (1,0) (1,1)
    1730.72, 2005.93, 1867.75, 2071.06, // (0,1)
    1621.77, 1840.52, 1704.22, 1960.79, // (1,0)
    1622.16, 1858.88, 1721.61, 1957.92, // (1,1)
];

/// Reported chi-square values for Models #1–#3.
pub const REPORTED_X: [f64; 3] = [22_054.07, 3035.37, 1689.95];
/// Reported Z-scores for Models #1–#3.
pub const REPORTED_Z: [f64; 3] = [480.31, 47.36, 17.14];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_has_41_entries_without_138() {
        let s = scan_series();
        assert_eq!(s.len(), 41);
        assert!(s.iter().all(|e| e.id != "scanblue138"));
        assert_eq!(s[0].id, "scanblue110");
        assert_eq!(s[40].id, "scanblue151");
        assert_eq!(theta_over_pi_for("scanblue110"), Some(-1.0));
        assert_eq!(theta_over_pi_for("scanblue138"), None);
    }

    #[test]
    fn thetas_step_by_five_hundredths() {
        let s = scan_series();
        for w in s.windows(2) {
            let step = w[1].theta_over_pi - w[0].theta_over_pi;
            // the only repeat is 137/139
            if w[1].id == "scanblue139" {
                assert!(step.abs() < 1e-12);
            } else {
                assert!((step - 0.05).abs() < 1e-9, "{} -> {}", w[0].id, w[1].id);
            }
        }
    }
}
