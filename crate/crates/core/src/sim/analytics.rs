//! Cycle-bin analytics on detection logs.

use serde::{Deserialize, Serialize};

use super::{CoincidenceSet, EventLog};
use crate::counts::CountTable;
use crate::{coinc_index, single_index, Error, Result};

/// Shifts tried when reconciling zero times, in multiples of this step.
pub const RECONCILE_STEP: usize = 20;

/// Detections per 1 ns bin of the cycle for each `(setting, result)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinHistogram {
    pub counts: [Vec<u64>; 4],
}

impl BinHistogram {
    pub fn bins(&self) -> usize {
        self.counts[0].len()
    }

    /// Summed over the four channels.
    pub fn totals(&self) -> Vec<u64> {
        (0..self.bins()).map(|n| self.counts.iter().map(|c| c[n]).sum()).collect()
    }
}

pub fn bin_histogram(log: &EventLog, cycle: u32) -> BinHistogram {
    let cycle = cycle.max(1) as i64;
    let mut counts: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; cycle as usize]);
    for e in &log.events {
        counts[single_index(e.setting as usize, e.result as usize)][e.time_ns.rem_euclid(cycle) as usize] += 1;
    }
    BinHistogram { counts }
}

/// Coincidences by Alice's bin `α` and Bob's bin `β`, one
/// `cycle × cycle` matrix per quadrant `(i, k)` at index `2i + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMatrix {
    pub cycle: usize,
    /// Row-major `α · cycle + β`.
    pub counts: [Vec<u64>; 4],
}

impl BinMatrix {
    pub fn get(&self, quadrant: usize, alpha: usize, beta: usize) -> u64 {
        self.counts[quadrant][alpha * self.cycle + beta]
    }

    /// Fraction of all coincidences with `(β − α) mod cycle` within
    /// `half_width` of `offset` (circular distance).
    pub fn diagonal_fraction(&self, offset: i64, half_width: i64) -> f64 {
        let n = self.cycle as i64;
        let (mut near, mut total) = (0u64, 0u64);
        for q in &self.counts {
            for (idx, &c) in q.iter().enumerate() {
                let (a, b) = ((idx / self.cycle) as i64, (idx % self.cycle) as i64);
                let d = (b - a - offset).rem_euclid(n);
                if d.min(n - d) <= half_width {
                    near += c;
                }
                total += c;
            }
        }
        if total == 0 {
            0.0
        } else {
            near as f64 / total as f64
        }
    }

    /// Coincidences strictly below the diagonal band (Bob's bin earlier
    /// than expected) and strictly above it.
    pub fn off_diagonal(&self, offset: i64, half_width: i64) -> (u64, u64) {
        let n = self.cycle as i64;
        let (mut below, mut above) = (0, 0);
        for q in &self.counts {
            for (idx, &c) in q.iter().enumerate() {
                let (a, b) = ((idx / self.cycle) as i64, (idx % self.cycle) as i64);
                // signed circular distance in (−n/2, n/2]
                let mut d = (b - a - offset).rem_euclid(n);
                if d > n / 2 {
                    d -= n;
                }
                if d < -half_width {
                    below += c;
                } else if d > half_width {
                    above += c;
                }
            }
        }
        (below, above)
    }
}

pub fn coincidence_bin_matrix(set: &CoincidenceSet, alice: &EventLog, bob: &EventLog, cycle: u32) -> Result<BinMatrix> {
    let n = cycle.max(1) as usize;
    let mut counts: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; n * n]);
    for &(ia, ib) in &set.pairs {
        let (Some(a), Some(b)) = (alice.events.get(ia), bob.events.get(ib)) else {
            return Err(Error::invalid(format!("coincidence ({ia}, {ib}) points outside the logs")));
        };
        let alpha = a.time_ns.rem_euclid(n as i64) as usize;
        let beta = b.time_ns.rem_euclid(n as i64) as usize;
        counts[2 * a.setting as usize + b.setting as usize][alpha * n + beta] += 1;
    }
    Ok(BinMatrix { cycle: n, counts })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    /// Shift, ns, such that `b[(n + shift) mod len]` lines up with `a[n]`.
    pub shift: usize,
    pub correlation: f64,
}

/// The circular shift of `b`, a multiple of 20 bins, that best correlates
/// it with `a`. The earliest shift wins ties.
pub fn reconcile_zero_times(a: &[f64], b: &[f64]) -> Result<Reconciliation> {
    let n = a.len();
    if n == 0 || b.len() != n {
        return Err(Error::invalid(format!("histograms must be non-empty and equal length, got {} and {}", n, b.len())));
    }
    let mut best: Option<Reconciliation> = None;
    for shift in (0..n).step_by(RECONCILE_STEP) {
        let rolled: Vec<f64> = (0..n).map(|k| b[(k + shift) % n]).collect();
        let r = pearson(a, &rolled).ok_or_else(|| Error::degenerate("constant histogram has no correlation"))?;
        if best.is_none_or(|bst| r > bst.correlation) {
            best = Some(Reconciliation { shift, correlation: r });
        }
    }
    Ok(best.expect("at least one shift"))
}

/// Distribution `λ(α, β)` of a pair's arrival bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointBinDistribution {
    pub bins: usize,
    /// Row-major `α · bins + β`.
    pub mass: Vec<f64>,
}

impl JointBinDistribution {
    pub fn uniform(bins: usize) -> Self {
        let m = 1.0 / (bins * bins) as f64;
        Self { bins, mass: vec![m; bins * bins] }
    }

    /// `λ = 1/bins` where `β − α ≡ offset (mod bins)`, zero elsewhere.
    pub fn diagonal(bins: usize, offset: i64) -> Self {
        let mut mass = vec![0.0; bins * bins];
        for a in 0..bins {
            let b = (a as i64 + offset).rem_euclid(bins as i64) as usize;
            mass[a * bins + b] = 1.0 / bins as f64;
        }
        Self { bins, mass }
    }

    /// Normalized counts.
    pub fn from_counts(bins: usize, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if counts.len() != bins * bins || total == 0 {
            return Err(Error::degenerate("need bins² counts with a positive total"));
        }
        Ok(Self { bins, mass: counts.iter().map(|&c| c as f64 / total as f64).collect() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mass.len() != self.bins * self.bins {
            return Err(Error::invalid("λ must have bins² entries"));
        }
        if self.mass.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("λ must be non-negative"));
        }
        let total: f64 = self.mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("λ must sum to 1, got {total}")));
        }
        Ok(())
    }
}

/// `Σ pa(α) pb(β) λ(α, β)` divided by the product of the profile means:
/// the probability that both photons of a pair are detected relative to
/// independent detection.
pub fn joint_detection_ratio(pa: &[f64], pb: &[f64], lambda: &JointBinDistribution) -> Result<f64> {
    lambda.validate()?;
    let n = lambda.bins;
    if pa.len() != n || pb.len() != n {
        return Err(Error::invalid(format!("profiles must have {n} bins, got {} and {}", pa.len(), pb.len())));
    }
    if pa.iter().chain(pb).any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("profile values must lie in [0, 1]"));
    }
    let (ma, mb) = (pa.iter().sum::<f64>() / n as f64, pb.iter().sum::<f64>() / n as f64);
    if ma <= 0.0 || mb <= 0.0 {
        return Err(Error::degenerate("profile with zero mean"));
    }
    let mut joint = 0.0;
    for a in 0..n {
        for b in 0..n {
            joint += pa[a] * pb[b] * lambda.mass[a * n + b];
        }
    }
    Ok(joint / (ma * mb))
}

/// Offset after `elapsed_s` seconds of drift, wrapped into
/// `(−cycle/2, cycle/2]`.
pub fn drift_offset(delta0: f64, drift_ns_per_s: f64, elapsed_s: f64, cycle: f64) -> f64 {
    let raw = delta0 - drift_ns_per_s * elapsed_s;
    let mut w = raw.rem_euclid(cycle);
    if w > cycle / 2.0 {
        w -= cycle;
    }
    w
}

/// Offsets predicted for experiments started `gap_s` apart.
pub fn drift_offset_scan(delta0: f64, drift_ns_per_s: f64, gap_s: f64, experiments: usize, cycle: f64) -> Vec<f64> {
    (0..experiments).map(|m| drift_offset(delta0, drift_ns_per_s, m as f64 * gap_s, cycle)).collect()
}

/// Most common `t_b − t_a` within `±max_lag` ns; the earliest lag wins ties.
/// `None` when no pair of events is that close.
pub fn estimate_offset(alice: &EventLog, bob: &EventLog, max_lag: i64) -> Result<Option<i64>> {
    alice.validate()?;
    bob.validate()?;
    let width = (2 * max_lag + 1).max(1) as usize;
    let mut hist = vec![0u64; width];
    let b = &bob.events;
    let mut lo = 0;
    for ea in &alice.events {
        while lo < b.len() && b[lo].time_ns < ea.time_ns - max_lag {
            lo += 1;
        }
        let mut k = lo;
        while k < b.len() && b[k].time_ns <= ea.time_ns + max_lag {
            hist[(b[k].time_ns - ea.time_ns + max_lag) as usize] += 1;
            k += 1;
        }
    }
    let top = hist.iter().copied().max().unwrap_or(0);
    if top == 0 {
        return Ok(None);
    }
    Ok(hist.iter().position(|&h| h == top).map(|p| p as i64 - max_lag))
}

/// Singles by `(setting, result)` for each log and coincidences by the
/// matched pairs' joint labels.
pub fn tabulate_counts(alice: &EventLog, bob: &EventLog, set: &CoincidenceSet) -> Result<CountTable> {
    let mut t = CountTable { a: [0.0; 4], b: [0.0; 4], c: [0.0; 16] };
    for e in &alice.events {
        t.a[single_index(e.setting as usize, e.result as usize)] += 1.0;
    }
    for e in &bob.events {
        t.b[single_index(e.setting as usize, e.result as usize)] += 1.0;
    }
    for &(ia, ib) in &set.pairs {
        let (Some(a), Some(b)) = (alice.events.get(ia), bob.events.get(ib)) else {
            return Err(Error::invalid(format!("coincidence ({ia}, {ib}) points outside the logs")));
        };
        t.c[coinc_index(a.setting as usize, a.result as usize, b.setting as usize, b.result as usize)] += 1.0;
    }
    t.validate()?;
    Ok(t)
}
