//! Aggregate behaviour of the event simulator checked against the count
//! models and the timing mechanisms it implements.

use eprb_core::counts::{CountTable, ModelId};
use eprb_core::fit::{fit, FitProblem};
use eprb_core::quantum::{geometry_for_experiment, quantum_probs, DensityMatrix};
use eprb_core::scanblue;
use eprb_core::sim::*;
use eprb_core::single_index;
use rayon::prelude::*;

fn flat(p: f64) -> DetectionProfile {
    DetectionProfile::flat([p; 4], 100)
}

#[test]
fn switching_bins_see_half_the_rate() {
    let cfg = SimConfig { duration_ns: 1e8, pair_rate: 1e5, alice_profile: flat(0.5), bob_profile: flat(0.5), ..SimConfig::default() };
    let out = simulate_experiment(&cfg).unwrap();
    assert!(out.alice.len() >= 100_000);
    let totals = bin_histogram(&out.alice, 100).totals();
    let inside = totals[..14].iter().sum::<u64>() as f64 / 14.0;
    let outside = totals[14..].iter().sum::<u64>() as f64 / 86.0;
    let ratio = inside / outside;
    assert!((ratio - 0.5).abs() <= 0.05, "ratio {ratio}");
}

#[test]
fn alice_singles_follow_the_count_model() {
    // a_ij = 2N · p̄a · qa_ij, with p̄a including the switching loss
    let p = [0.04, 0.06, 0.05, 0.07];
    let cfg = SimConfig {
        duration_ns: 2e8,
        pair_rate: 2e5,
        alice_profile: DetectionProfile::flat(p, 100),
        theta: 0.3,
        rho: DensityMatrix::normalized(scanblue::model2_density_raw()).unwrap(),
        ..SimConfig::default()
    };
    let out = simulate_experiment(&cfg).unwrap();
    let qa = quantum_probs(&cfg.rho, &geometry_for_experiment(cfg.theta)).qa;
    let keep = 1.0 - 0.5 * 14.0 / 100.0;
    let mut observed = [0.0; 4];
    for e in &out.alice.events {
        observed[single_index(e.setting as usize, e.result as usize)] += 1.0;
    }
    for ch in 0..4 {
        let expected = 2.0 * cfg.pair_rate * p[ch] * keep * qa[ch];
        assert!((observed[ch] - expected).abs() <= 3.0 * expected.sqrt(), "channel {ch}: {} vs {expected}", observed[ch]);
    }
}

#[test]
fn zero_delay_coincidences_sit_on_the_offset_diagonal() {
    for delta in [15.0, 0.0] {
        let cfg = SimConfig {
            duration_ns: 5e7,
            pair_rate: 1e4,
            offset_ns: delta,
            alice_profile: flat(0.3),
            bob_profile: flat(0.3),
            ..SimConfig::default()
        };
        let out = simulate_experiment(&cfg).unwrap();
        let set = match_coincidences(&out.alice, &out.bob, delta, 30.0).unwrap();
        let m = coincidence_bin_matrix(&set, &out.alice, &out.bob, 100).unwrap();
        let near = m.diagonal_fraction(delta as i64, 1);
        assert!(near >= 0.95, "delta {delta}: {near}");
        if delta == 0.0 {
            assert!(m.diagonal_fraction(0, 0) >= 0.95);
        }
    }
}

#[test]
fn alice_delays_push_mass_to_one_side() {
    let slow = DelayModel { tail_fraction: 0.5, scale_ns: 5.0 };
    let cfg = SimConfig {
        duration_ns: 5e7,
        pair_rate: 5e4,
        alice_profile: flat(0.3),
        bob_profile: flat(0.3),
        alice_delay: [slow; 4],
        ..SimConfig::default()
    };
    let out = simulate_experiment(&cfg).unwrap();
    // Alice late means β − α smaller than the offset. True pairs the window
    // accepts sit on one side; a delay beyond half a cycle would wrap.
    let set = match_coincidences(&out.alice, &out.bob, 15.0, 30.0).unwrap();
    let truth: std::collections::HashSet<_> = out.truth.true_pairs.iter().copied().collect();
    let accepted = CoincidenceSet { pairs: set.pairs.iter().copied().filter(|p| truth.contains(p)).collect() };
    let m = coincidence_bin_matrix(&accepted, &out.alice, &out.bob, 100).unwrap();
    let (below, above) = m.off_diagonal(15, 0);
    assert!(below > 100, "{below}");
    assert_eq!(above, 0);
    // accidental pairs land on both sides
    let m = coincidence_bin_matrix(&set, &out.alice, &out.bob, 100).unwrap();
    let (below, above) = m.off_diagonal(15, 0);
    assert!(above * 10 < below, "{below} {above}");
}

#[test]
fn twenty_ns_profile_shows_in_the_histogram() {
    let profile = DetectionProfile::periodic([0.4; 4], 0.6, 20.0, 100);
    let cfg = SimConfig { duration_ns: 1e8, pair_rate: 1e5, alice_profile: profile, ..SimConfig::default() };
    let out = simulate_experiment(&cfg).unwrap();
    let h: Vec<f64> = bin_histogram(&out.alice, 100).totals().iter().map(|&c| c as f64).collect();
    let mean = h.iter().sum::<f64>() / 100.0;
    let autocorr = |lag: usize| (0..100).map(|n| (h[n] - mean) * (h[(n + lag) % 100] - mean)).sum::<f64>();
    let best = (5..=50).max_by(|&a, &b| autocorr(a).total_cmp(&autocorr(b))).unwrap();
    assert_eq!(best, 20);
}

#[test]
fn reconciled_start_phases_correlate() {
    let profile = DetectionProfile::periodic([0.4; 4], 0.6, 20.0, 100);
    let run = |phase: u32, seed: u64| {
        let cfg = SimConfig {
            duration_ns: 1e8,
            pair_rate: 1e5,
            alice_profile: profile.clone(),
            alice_phase_ns: phase,
            seed,
            ..SimConfig::default()
        };
        let out = simulate_experiment(&cfg).unwrap();
        bin_histogram(&out.alice, 100).totals().iter().map(|&c| c as f64).collect::<Vec<f64>>()
    };
    let (a, b) = (run(0, 1), run(40, 2));
    let r = reconcile_zero_times(&a, &b).unwrap();
    assert_eq!(r.shift, 40);
    assert!(r.correlation > 0.95, "{}", r.correlation);
}

#[test]
fn accidentals_match_the_false_positive_term() {
    // independent background logs: E[c] = â · b̂ · w / T. With integer
    // timestamps a half-integer offset makes the window hold exactly w lags.
    let (duration, w) = (1e9, 30.0);
    let runs: Vec<(f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let alice = background_log(2e5, duration, 2 * seed);
            let bob = background_log(1.5e5, duration, 2 * seed + 1);
            let set = match_coincidences(&alice, &bob, 15.5, w).unwrap();
            let expected = alice.len() as f64 * bob.len() as f64 * w / duration;
            (set.len() as f64, expected)
        })
        .collect();
    let observed: f64 = runs.iter().map(|r| r.0).sum();
    let expected: f64 = runs.iter().map(|r| r.1).sum();
    assert!((observed - expected).abs() <= 3.0 * expected.sqrt(), "{observed} vs {expected}");
}

#[test]
fn empirical_joint_ratio_converges() {
    let pa = DetectionProfile::periodic([0.5; 4], 0.8, 20.0, 100);
    let pb = DetectionProfile::periodic([0.5; 4], 0.8, 20.0, 100);
    for delta in [0.0, 10.0, 5.0] {
        let cfg = SimConfig {
            duration_ns: 1e8,
            pair_rate: 2.6e5,
            offset_ns: delta,
            alice_profile: pa.clone(),
            bob_profile: pb.clone(),
            record_pairs: true,
            ..SimConfig::default()
        };
        let out = simulate_experiment(&cfg).unwrap();
        let pairs = out.truth.pairs.as_ref().unwrap();
        assert!(pairs.len() >= 1_000_000);
        let n = pairs.len() as f64;
        let both = pairs.iter().filter(|p| p.alice_event.is_some() && p.bob_event.is_some()).count() as f64;
        let a = pairs.iter().filter(|p| p.alice_event.is_some()).count() as f64;
        let b = pairs.iter().filter(|p| p.bob_event.is_some()).count() as f64;
        let empirical = (both / n) / ((a / n) * (b / n));
        // the switching loss acts like a further profile, the same for both
        let keep = |bin: usize| if bin < 14 { 0.5 } else { 1.0 };
        let fa: Vec<f64> = (0..100).map(|x| pa.channels[0][x] * keep(x)).collect();
        let fb: Vec<f64> = (0..100).map(|x| pb.channels[0][x] * keep(x)).collect();
        let lambda = JointBinDistribution::diagonal(100, delta as i64);
        let predicted = joint_detection_ratio(&fa, &fb, &lambda).unwrap();
        assert!((empirical / predicted - 1.0).abs() < 0.05, "delta {delta}: {empirical} vs {predicted}");
    }
}

#[test]
fn footnote_window_width_loses_pairs() {
    let slow = DelayModel { tail_fraction: 0.3, scale_ns: 6.0 };
    let cfg = SimConfig {
        duration_ns: 5e7,
        pair_rate: 5e4,
        alice_profile: flat(0.3),
        bob_profile: flat(0.3),
        alice_delay: [slow; 4],
        bob_delay: [slow; 4],
        ..SimConfig::default()
    };
    let out = simulate_experiment(&cfg).unwrap();
    let wide = match_coincidences(&out.alice, &out.bob, 15.0, 30.0).unwrap();
    let narrow = match_coincidences(&out.alice, &out.bob, 15.0, 6.0).unwrap();
    assert!(narrow.len() < wide.len());
    assert!(out.truth.audit(&narrow).false_negatives > out.truth.audit(&wide).false_negatives);
}

/// Unequal per-result efficiencies plus uncorrelated background, tabulated
/// with a 30 ns window: the Model #3 mechanisms.
fn model3_series(seed: u64) -> (Vec<CountTable>, Vec<f64>) {
    let series = scanblue::scan_series();
    let rho = DensityMatrix::normalized(scanblue::model3_density_raw()).unwrap();
    let tables = series
        .par_iter()
        .enumerate()
        .map(|(m, e)| {
            let cfg = SimConfig {
                duration_ns: 1e9,
                pair_rate: 2e5,
                alice_profile: DetectionProfile::flat(scanblue::MODEL2_ALICE, 100),
                bob_profile: DetectionProfile::flat(scanblue::MODEL2_BOB, 100),
                alice_background_per_s: 2e5,
                bob_background_per_s: 2e5,
                rho: rho.clone(),
                theta: e.theta(),
                seed: seed * 1000 + m as u64,
                ..SimConfig::default()
            };
            let out = simulate_experiment(&cfg).unwrap();
            let set = match_coincidences(&out.alice, &out.bob, cfg.offset_ns, 30.0).unwrap();
            tabulate_counts(&out.alice, &out.bob, &set).unwrap()
        })
        .collect();
    (tables, series.iter().map(|e| e.theta()).collect())
}

#[test]
fn model3_fits_simulated_model3_mechanisms() {
    let mut zs = Vec::new();
    for seed in 0..20 {
        let (tables, thetas) = model3_series(seed);
        let problem = FitProblem::new(ModelId::Three, tables, &thetas).unwrap().with_duration(1e9);
        let res = fit(&problem).unwrap();
        zs.push(res.statistics.z);
    }
    assert!(zs.iter().all(|&z| z < 5.0), "{zs:?}");
}
