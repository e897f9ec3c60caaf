use serde::{Deserialize, Serialize};

use crate::quantum::DensityMatrix;
use crate::scanblue::{DEFAULT_WINDOW_NS, EXPERIMENT_DURATION_NS};
use crate::{Error, Result};

/// Length of the setting cycle, ns.
pub const DEFAULT_CYCLE_NS: u32 = 100;
/// Time to switch settings, ns.
pub const DEFAULT_SWITCH_NS: u32 = 14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    /// A fresh random setting at the start of every cycle.
    #[default]
    Periodic,
    /// Fresh random settings at Poisson times with mean dwell one cycle.
    Poisson,
}

/// Detection probability per 1 ns bin of the cycle, one profile for each
/// `(setting, result)` in [`crate::single_index`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionProfile {
    pub channels: [Vec<f64>; 4],
}

impl DetectionProfile {
    pub fn flat(p: [f64; 4], bins: usize) -> Self {
        Self { channels: p.map(|v| vec![v; bins]) }
    }

    /// `mean · (1 + amplitude · cos(2π α / period))` in every channel.
    pub fn periodic(mean: [f64; 4], amplitude: f64, period_ns: f64, bins: usize) -> Self {
        let shape: Vec<f64> = (0..bins)
            .map(|a| 1.0 + amplitude * (2.0 * std::f64::consts::PI * a as f64 / period_ns).cos())
            .collect();
        Self { channels: mean.map(|m| shape.iter().map(|s| (m * s).clamp(0.0, 1.0)).collect()) }
    }

    pub fn bins(&self) -> usize {
        self.channels[0].len()
    }

    /// Mean over bins, per channel.
    pub fn means(&self) -> [f64; 4] {
        std::array::from_fn(|n| {
            let c = &self.channels[n];
            c.iter().sum::<f64>() / c.len().max(1) as f64
        })
    }

    fn validate(&self, who: &str, bins: usize) -> Result<()> {
        for (n, c) in self.channels.iter().enumerate() {
            if c.len() != bins {
                return Err(Error::Config(format!(
                    "{who} profile channel {n} has {} bins, the cycle has {bins}",
                    c.len()
                )));
            }
            if let Some(p) = c.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Config(format!("{who} profile value {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Delay between arrival and detection: zero with probability
/// `1 − tail_fraction`, otherwise exponential with mean `scale_ns`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub tail_fraction: f64,
    pub scale_ns: f64,
}

impl DelayModel {
    pub fn none() -> Self {
        Self::default()
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tail_fraction) || !(self.scale_ns >= 0.0 && self.scale_ns.is_finite()) {
            return Err(Error::Config(format!("invalid delay model {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration_ns: f64,
    /// Expected pairs per quadrant `N`.
    pub pair_rate: f64,
    pub cycle_ns: u32,
    pub switch_ns: u32,
    pub switching: SwitchMode,
    pub alice_profile: DetectionProfile,
    pub bob_profile: DetectionProfile,
    pub alice_delay: [DelayModel; 4],
    pub bob_delay: [DelayModel; 4],
    /// Uncorrelated detections per second at each observer.
    pub alice_background_per_s: f64,
    pub bob_background_per_s: f64,
    /// Rate of Alice's clock relative to Bob's, ns per second. Positive
    /// values shrink the offset over time.
    pub clock_drift_ns_per_s: f64,
    /// Typical `t_b − t_a` of true pairs, ns.
    pub offset_ns: f64,
    /// Coincidence window used when the logs are tabulated, ns.
    pub window_ns: f64,
    /// Where each observer's cycle starts relative to their clock's zero.
    pub alice_phase_ns: u32,
    pub bob_phase_ns: u32,
    pub rho: DensityMatrix,
    pub theta: f64,
    pub seed: u64,
    /// Keep one record per generated pair (memory heavy at full scale).
    pub record_pairs: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let bins = DEFAULT_CYCLE_NS as usize;
        Self {
            duration_ns: EXPERIMENT_DURATION_NS,
            pair_rate: crate::scanblue::MODEL2_PAIRS,
            cycle_ns: DEFAULT_CYCLE_NS,
            switch_ns: DEFAULT_SWITCH_NS,
            switching: SwitchMode::Periodic,
            alice_profile: DetectionProfile::flat(crate::scanblue::MODEL2_ALICE, bins),
            bob_profile: DetectionProfile::flat(crate::scanblue::MODEL2_BOB, bins),
            alice_delay: [DelayModel::none(); 4],
            bob_delay: [DelayModel::none(); 4],
            alice_background_per_s: 0.0,
            bob_background_per_s: 0.0,
            clock_drift_ns_per_s: 0.0,
            offset_ns: 15.0,
            window_ns: DEFAULT_WINDOW_NS,
            alice_phase_ns: 0,
            bob_phase_ns: 0,
            rho: DensityMatrix::werner(0.95).expect("valid visibility"),
            theta: 0.0,
            seed: 0,
            record_pairs: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_ns > 0.0 && self.duration_ns.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration_ns)));
        }
        if !(self.pair_rate >= 0.0 && self.pair_rate.is_finite()) {
            return Err(Error::Config(format!("pair rate must be >= 0, got {}", self.pair_rate)));
        }
        if !(0 < self.switch_ns && self.switch_ns < self.cycle_ns) {
            return Err(Error::Config(format!(
                "need 0 < switch_ns < cycle_ns, got {} and {}",
                self.switch_ns, self.cycle_ns
            )));
        }
        let bins = self.cycle_ns as usize;
        self.alice_profile.validate("alice", bins)?;
        self.bob_profile.validate("bob", bins)?;
        for d in self.alice_delay.iter().chain(&self.bob_delay) {
            d.validate()?;
        }
        for (name, v) in [
            ("alice background", self.alice_background_per_s),
            ("bob background", self.bob_background_per_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} rate must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("clock drift", self.clock_drift_ns_per_s), ("offset", self.offset_ns), ("theta", self.theta)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.window_ns >= 0.0 && self.window_ns.is_finite()) {
            return Err(Error::Config(format!("window must be >= 0, got {}", self.window_ns)));
        }
        Ok(())
    }
}
