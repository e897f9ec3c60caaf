//! Event-level generator for one experiment.
//!
//! Pairs arrive as a Poisson process in Alice's clock. Each observer's
//! setting at the arrival time comes from their own switching schedule,
//! the joint result from `qc_ijkl` for those settings. A photon is
//! detected with the probability of its arrival bin unless it arrives
//! during a switch, then delayed by its channel's delay. Bob's clock reads
//! `t + δ − drift · t`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::config::{DelayModel, SimConfig, SwitchMode};
use super::{CoincidenceSet, Event, EventLog};
use crate::quantum::{geometry_for_experiment, quantum_probs};
use crate::{coinc_index, single_index, Result};

const STREAM_PAIRS: u64 = 0;
const STREAM_ALICE_BACKGROUND: u64 = 1;
const STREAM_BOB_BACKGROUND: u64 = 2;
const STREAM_ALICE_SWITCHING: u64 = 3;
const STREAM_BOB_SWITCHING: u64 = 4;
const STREAM_KEYS: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One observer's setting schedule, queried at non-decreasing times.
struct SettingClock {
    mode: SwitchMode,
    cycle: i64,
    switch: i64,
    phase: i64,
    key: u64,
    rng: ChaCha8Rng,
    seg_start: i64,
    seg_end: f64,
    setting: u8,
    switched: bool,
}

impl SettingClock {
    fn new(cfg: &SimConfig, key: u64, phase: u32, stream: u64) -> Self {
        let mut rng = rng_for(cfg.seed, stream);
        let setting = (rng.next_u32() & 1) as u8;
        let start = phase as i64 - cfg.cycle_ns as i64;
        Self {
            mode: cfg.switching,
            cycle: cfg.cycle_ns as i64,
            switch: cfg.switch_ns as i64,
            phase: phase as i64,
            key,
            rng,
            seg_start: start,
            seg_end: start as f64,
            setting,
            switched: false,
        }
    }

    fn periodic_bit(&self, c: i64) -> u8 {
        (splitmix64(self.key.wrapping_add(c as u64)) & 1) as u8
    }

    /// Setting in force at `t` and whether detections at `t` are suppressed.
    fn at(&mut self, t: i64) -> (u8, bool) {
        match self.mode {
            SwitchMode::Periodic => {
                let rel = t - self.phase;
                let c = rel.div_euclid(self.cycle);
                let s = self.periodic_bit(c);
                let switching = s != self.periodic_bit(c - 1) && rel.rem_euclid(self.cycle) < self.switch;
                (s, switching)
            }
            SwitchMode::Poisson => {
                while (t as f64) >= self.seg_end {
                    let dwell: f64 = Exp1.sample(&mut self.rng);
                    let next = (self.rng.next_u32() & 1) as u8;
                    self.seg_start = self.seg_end.ceil() as i64;
                    self.seg_end += dwell * self.cycle as f64;
                    self.switched = next != self.setting;
                    self.setting = next;
                }
                (self.setting, self.switched && t - self.seg_start < self.switch)
            }
        }
    }
}

fn draw_delay<R: Rng>(model: &DelayModel, rng: &mut R) -> i64 {
    // both draws always happen so the stream layout does not depend on the model
    let u: f64 = rng.random();
    let e: f64 = Exp1.sample(rng);
    if u < model.tail_fraction {
        (e * model.scale_ns).round() as i64
    } else {
        0
    }
}

/// What generated an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Pair(usize),
    Background,
}

/// One generated pair, kept when `record_pairs` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    /// Arrival time in Alice's clock, ns.
    pub time_ns: i64,
    pub alice_bin: u32,
    pub bob_bin: u32,
    pub alice_setting: u8,
    pub bob_setting: u8,
    pub alice_result: u8,
    pub bob_result: u8,
    pub alice_event: Option<usize>,
    pub bob_event: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub true_positives: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
}

/// What actually happened, for auditing the matcher.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pairs_generated: u64,
    /// Generated pairs per quadrant `(i, k)`, index `2i + k`.
    pub quadrant_pairs: [u64; 4],
    pub alice_pair_detections: u64,
    pub bob_pair_detections: u64,
    pub alice_suppressed: u64,
    pub bob_suppressed: u64,
    pub alice_background: u64,
    pub bob_background: u64,
    /// Events dropped because an earlier event had the same timestamp.
    pub alice_dropped: u64,
    pub bob_dropped: u64,
    /// `(alice_index, bob_index)` of pairs detected by both observers.
    pub true_pairs: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pairs: Option<Vec<PairRecord>>,
}

impl GroundTruth {
    /// Compare a matching with the true pairs. `true_positives +
    /// false_negatives` always equals `true_pairs.len()`.
    pub fn audit(&self, set: &CoincidenceSet) -> Audit {
        let truth: std::collections::HashSet<(usize, usize)> = self.true_pairs.iter().copied().collect();
        let tp = set.pairs.iter().filter(|p| truth.contains(p)).count();
        Audit { true_positives: tp, false_negatives: self.true_pairs.len() - tp, false_positives: set.pairs.len() - tp }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub alice: EventLog,
    pub bob: EventLog,
    pub truth: GroundTruth,
}

struct Pending {
    time: i64,
    setting: u8,
    result: u8,
    source: Source,
}

/// Sort by time (generation order breaks ties), drop repeated timestamps,
/// and report where each surviving event ended up.
fn finish(mut pending: Vec<Pending>) -> (EventLog, Vec<(usize, usize)>, u64) {
    // stable sort keeps generation order among equal times
    pending.sort_by_key(|p| p.time);
    let mut events = Vec::with_capacity(pending.len());
    let mut origin = Vec::new();
    let mut dropped = 0;
    for p in pending {
        if events.last().is_some_and(|e: &Event| e.time_ns == p.time) {
            dropped += 1;
            continue;
        }
        if let Source::Pair(n) = p.source {
            origin.push((n, events.len()));
        }
        events.push(Event { time_ns: p.time, setting: p.setting, result: p.result });
    }
    (EventLog { events }, origin, dropped)
}

fn background(cfg: &SimConfig, rate_per_s: f64, clock: &mut SettingClock, stream: u64, out: &mut Vec<Pending>) -> u64 {
    if rate_per_s <= 0.0 {
        return 0;
    }
    let mut rng = rng_for(cfg.seed, stream);
    let per_ns = rate_per_s * 1e-9;
    let mut t = 0.0;
    let mut n = 0;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap / per_ns;
        if t >= cfg.duration_ns {
            break;
        }
        let result = (rng.next_u32() & 1) as u8;
        let ti = t.round() as i64;
        let (setting, suppressed) = clock.at(ti);
        if !suppressed {
            out.push(Pending { time: ti, setting, result, source: Source::Background });
            n += 1;
        }
    }
    n
}

/// Simulate one experiment. Deterministic given `config.seed`.
pub fn simulate_experiment(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let cfg = config;
    let qc = quantum_probs(&cfg.rho, &geometry_for_experiment(cfg.theta)).qc;
    // cumulative outcome probabilities per quadrant, jl order
    let cumulative: [[f64; 4]; 4] = std::array::from_fn(|ik| {
        let (i, k) = (ik / 2, ik % 2);
        let p: [f64; 4] = std::array::from_fn(|jl| qc[coinc_index(i, jl / 2, k, jl % 2)].max(0.0));
        let total: f64 = p.iter().sum();
        let mut acc = 0.0;
        p.map(|v| {
            acc += v / total;
            acc
        })
    });

    let mut keys = rng_for(cfg.seed, STREAM_KEYS);
    let (key_a, key_b) = (keys.next_u64(), keys.next_u64());
    let mut clock_a = SettingClock::new(cfg, key_a, cfg.alice_phase_ns, STREAM_ALICE_SWITCHING);
    let mut clock_b = SettingClock::new(cfg, key_b, cfg.bob_phase_ns, STREAM_BOB_SWITCHING);
    let cycle = cfg.cycle_ns as i64;

    let mut truth = GroundTruth::default();
    let mut records = Vec::new();
    let mut pend_a = Vec::new();
    let mut pend_b = Vec::new();
    let mut rng = rng_for(cfg.seed, STREAM_PAIRS);
    let rate = 4.0 * cfg.pair_rate / cfg.duration_ns;
    let mut t = 0.0;
    let mut n = 0usize;
    while rate > 0.0 {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap / rate;
        if t >= cfg.duration_ns {
            break;
        }
        let ta = t.round() as i64;
        let tb = (t + cfg.offset_ns - cfg.clock_drift_ns_per_s * t * 1e-9).round() as i64;
        let (i, sup_a) = clock_a.at(ta);
        let (k, sup_b) = clock_b.at(tb);
        let quadrant = 2 * i as usize + k as usize;
        let u: f64 = rng.random();
        let jl = cumulative[quadrant].iter().position(|&c| u < c).unwrap_or(3);
        let (j, l) = ((jl / 2) as u8, (jl % 2) as u8);
        let (alpha, beta) = (ta.rem_euclid(cycle) as usize, tb.rem_euclid(cycle) as usize);
        let (ua, ub): (f64, f64) = (rng.random(), rng.random());
        let ca = single_index(i as usize, j as usize);
        let cb = single_index(k as usize, l as usize);
        let da = draw_delay(&cfg.alice_delay[ca], &mut rng);
        let db = draw_delay(&cfg.bob_delay[cb], &mut rng);
        let det_a = !sup_a && ua < cfg.alice_profile.channels[ca][alpha];
        let det_b = !sup_b && ub < cfg.bob_profile.channels[cb][beta];
        truth.quadrant_pairs[quadrant] += 1;
        truth.alice_suppressed += sup_a as u64;
        truth.bob_suppressed += sup_b as u64;
        if det_a {
            pend_a.push(Pending { time: ta + da, setting: i, result: j, source: Source::Pair(n) });
        }
        if det_b {
            pend_b.push(Pending { time: tb + db, setting: k, result: l, source: Source::Pair(n) });
        }
        if cfg.record_pairs {
            records.push(PairRecord {
                time_ns: ta,
                alice_bin: alpha as u32,
                bob_bin: beta as u32,
                alice_setting: i,
                bob_setting: k,
                alice_result: j,
                bob_result: l,
                alice_event: None,
                bob_event: None,
            });
        }
        n += 1;
    }
    truth.pairs_generated = n as u64;

    // background replays the schedules from the start
    let mut clock_a = SettingClock::new(cfg, key_a, cfg.alice_phase_ns, STREAM_ALICE_SWITCHING);
    let mut clock_b = SettingClock::new(cfg, key_b, cfg.bob_phase_ns, STREAM_BOB_SWITCHING);
    truth.alice_background = background(cfg, cfg.alice_background_per_s, &mut clock_a, STREAM_ALICE_BACKGROUND, &mut pend_a);
    truth.bob_background = background(cfg, cfg.bob_background_per_s, &mut clock_b, STREAM_BOB_BACKGROUND, &mut pend_b);

    let (alice, origin_a, dropped_a) = finish(pend_a);
    let (bob, origin_b, dropped_b) = finish(pend_b);
    truth.alice_dropped = dropped_a;
    truth.bob_dropped = dropped_b;
    truth.alice_pair_detections = origin_a.len() as u64;
    truth.bob_pair_detections = origin_b.len() as u64;

    let mut alice_of = vec![None; n];
    for &(p, e) in &origin_a {
        alice_of[p] = Some(e);
    }
    for &(p, e) in &origin_b {
        if let Some(a) = alice_of[p] {
            truth.true_pairs.push((a, e));
        }
    }
    truth.true_pairs.sort_unstable();
    if cfg.record_pairs {
        for &(p, e) in &origin_a {
            records[p].alice_event = Some(e);
        }
        for &(p, e) in &origin_b {
            records[p].bob_event = Some(e);
        }
        truth.pairs = Some(records);
    }
    Ok(SimOutput { alice, bob, truth })
}

/// Uncorrelated detections at `rate_per_s` over `[0, duration_ns)` with
/// uniformly random settings and results.
pub fn background_log(rate_per_s: f64, duration_ns: f64, seed: u64) -> EventLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_ns = rate_per_s * 1e-9;
    let mut events: Vec<Event> = Vec::new();
    let mut t = 0.0;
    while per_ns > 0.0 {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap / per_ns;
        if t >= duration_ns {
            break;
        }
        let bits = rng.next_u32();
        let ti = t.round() as i64;
        if events.last().is_some_and(|e| e.time_ns == ti) {
            continue;
        }
        events.push(Event { time_ns: ti, setting: (bits & 1) as u8, result: ((bits >> 1) & 1) as u8 });
    }
    EventLog { events }
}
