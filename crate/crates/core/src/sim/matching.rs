//! Coincidence window matching.

use super::{CoincidenceSet, EventLog};
use crate::{Error, Result};

/// Pair Alice's and Bob's detections whose time difference lies within
/// half a window of the offset: `|t_b − t_a − δ| ≤ w / 2`.
///
/// All acceptable candidates are collected with a two-pointer scan and
/// then accepted nearest-first, ties broken by `t_a + t_b`, so each
/// detection is used at most once. Swapping the logs and negating `δ`
/// gives the same pairs.
pub fn match_coincidences(alice: &EventLog, bob: &EventLog, delta: f64, w: f64) -> Result<CoincidenceSet> {
    alice.validate()?;
    bob.validate()?;
    if !(w >= 0.0 && w.is_finite()) || !delta.is_finite() {
        return Err(Error::invalid(format!("window must be >= 0 and offset finite, got w = {w}, delta = {delta}")));
    }
    let half = w / 2.0;
    let (a, b) = (&alice.events, &bob.events);

    // (|deviation|, t_a + t_b, alice index, bob index)
    let mut candidates: Vec<(f64, i64, usize, usize)> = Vec::new();
    let mut lo = 0;
    for (ia, ea) in a.iter().enumerate() {
        let deviation = |ib: usize| (b[ib].time_ns - ea.time_ns) as f64 - delta;
        while lo < b.len() && deviation(lo) < -half {
            lo += 1;
        }
        let mut ib = lo;
        while ib < b.len() {
            let d = deviation(ib);
            if d > half {
                break;
            }
            candidates.push((d.abs(), ea.time_ns + b[ib].time_ns, ia, ib));
            ib += 1;
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, _, ia, ib) in candidates {
        if !used_a[ia] && !used_b[ib] {
            used_a[ia] = true;
            used_b[ib] = true;
            pairs.push((ia, ib));
        }
    }
    pairs.sort_unstable();
    Ok(CoincidenceSet { pairs })
}
