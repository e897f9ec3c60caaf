use super::*;
use crate::scanblue;
use std::f64::consts::PI;

fn thetas(n: usize) -> Vec<f64> {
    (0..n).map(|m| (-1.0 + 2.0 * m as f64 / n as f64) * PI).collect()
}

fn noise_free(params: &FilterParams, rho: &DensityMatrix, thetas: &[f64], window: f64) -> Vec<CountTable> {
    predictions_for(params, rho, thetas, &vec![window; thetas.len()])
        .unwrap()
        .iter()
        .map(|p| CountTable { a: p.a, b: p.b, c: p.c })
        .collect()
}

fn model1_truth() -> FilterParams {
    FilterParams::Model1(Model1Params {
        pairs: scanblue::MODEL1_PAIRS,
        alice: scanblue::MODEL1_ALICE,
        bob: scanblue::MODEL1_BOB,
    })
}

fn model2_truth() -> FilterParams {
    FilterParams::Model2(Model2Params {
        pairs: scanblue::MODEL2_PAIRS,
        alice: scanblue::MODEL2_ALICE,
        bob: scanblue::MODEL2_BOB,
    })
}

fn model3_truth() -> FilterParams {
    FilterParams::Model3(Model3Params {
        alice_rate: scanblue::MODEL3_ALICE_RATE,
        bob_rate: scanblue::MODEL3_BOB_RATE,
        coinc_rate: scanblue::MODEL3_COINC_RATE,
        window_ns: 30.0,
        duration_ns: 5e9,
    })
}

fn quick(restarts: usize) -> OptimizerConfig {
    OptimizerConfig { restarts, ..OptimizerConfig::default() }
}

fn random_vector(layout: &ParameterLayout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..DENSITY_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
    // keep paired counts below singles so no channel sits at the floor
    for s in &layout.filter {
        v.push(match s.transform {
            Transform::Logit => rng.random_range(-4.0..-2.0),
            Transform::Log if s.name.starts_with("npc") => rng.random_range(6.0..7.0),
            Transform::Log if s.name == "pairs" => rng.random_range(12.0..14.0),
            Transform::Log => rng.random_range(10.0..11.0),
        });
    }
    v
}

#[test]
fn noise_free_model1_reaches_zero() {
    let rho = DensityMatrix::werner(0.93).unwrap();
    let th = thetas(8);
    let obs = noise_free(&model1_truth(), &rho, &th, 0.0);
    let problem = FitProblem::new(ModelId::One, obs.clone(), &th).unwrap().with_options(quick(2));
    let res = fit(&problem).unwrap();
    assert!(res.statistics.x < 1e-4, "X = {}", res.statistics.x);
    assert!(res.converged);
    // fitted probabilities agree with the generator
    for &t in &th {
        let g = geometry_for_experiment(t);
        let (q1, q2) = (quantum_probs(&rho, &g), quantum_probs(&res.density, &g));
        for (a, b) in q1.qc.iter().zip(&q2.qc) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn noise_free_model2_round_trip() {
    let rho = DensityMatrix::normalized(scanblue::model2_density_raw()).unwrap();
    let th = thetas(12);
    let obs = noise_free(&model2_truth(), &rho, &th, 0.0);
    let problem = FitProblem::new(ModelId::Two, obs, &th).unwrap().with_options(quick(2));
    let res = fit(&problem).unwrap();
    assert!(res.statistics.x < 1e-4, "X = {}", res.statistics.x);
    for &t in &th {
        let g = geometry_for_experiment(t);
        let (q1, q2) = (quantum_probs(&rho, &g), quantum_probs(&res.density, &g));
        for (a, b) in q1.as_array().iter().zip(q2.as_array().iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn published_state_and_filter_give_zero_objective() {
    let rho = DensityMatrix::normalized(scanblue::model1_density_raw()).unwrap();
    let th: Vec<f64> = scanblue::scan_series().iter().map(|e| e.theta()).collect();
    let obs = noise_free(&model1_truth(), &rho, &th, 0.0);
    let problem = FitProblem::new(ModelId::One, obs, &th).unwrap();
    let layout = pack_parameters(ModelId::One);
    let v = layout.pack(&rho, &model1_truth()).unwrap();
    assert!(objective(&problem, &v).unwrap() < 1e-6);
}

#[test]
fn perturbing_a_probability_increases_x() {
    let rho = DensityMatrix::werner(0.9).unwrap();
    let th = thetas(6);
    let obs = noise_free(&model2_truth(), &rho, &th, 0.0);
    let problem = FitProblem::new(ModelId::Two, obs, &th).unwrap();
    let layout = pack_parameters(ModelId::Two);
    let dp = rho.clone();
    let x0 = objective(&problem, &layout.pack(&dp, &model2_truth()).unwrap()).unwrap();
    for n in 0..4 {
        let FilterParams::Model2(mut p) = model2_truth() else { unreachable!() };
        p.alice[n] *= 1.1;
        let x1 = objective(&problem, &layout.pack(&dp, &FilterParams::Model2(p)).unwrap()).unwrap();
        assert!(x1 > x0 + 1.0, "x0 = {x0}, x1 = {x1}");
    }
}

#[test]
fn objective_is_gauge_invariant() {
    let th = thetas(5);
    let obs = noise_free(&model3_truth(), &DensityMatrix::werner(0.8).unwrap(), &th, 30.0);
    let problem = FitProblem::new(ModelId::Three, obs, &th).unwrap();
    let layout = pack_parameters(ModelId::Three);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let v = random_vector(&layout, &mut rng);
        let x0 = objective(&problem, &v).unwrap();
        for shift in [-3.0, 0.01, 7.5] {
            let mut w = v.clone();
            w[..4].iter_mut().for_each(|x| *x += shift);
            let x1 = objective(&problem, &w).unwrap();
            assert!((x1 - x0).abs() <= 1e-10 * x0.abs().max(1.0), "{x0} vs {x1}");
        }
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let th = thetas(3);
    let rho = DensityMatrix::werner(0.85).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cv = CvParams::uniform(0.02, 0.03, 0.05);
    let cases = [
        (ModelId::One, noise_free(&model1_truth(), &rho, &th, 0.0)),
        (ModelId::Two, noise_free(&model2_truth(), &rho, &th, 0.0)),
        (ModelId::Three, noise_free(&model3_truth(), &rho, &th, 30.0)),
        (ModelId::Four, noise_free(&model3_truth(), &rho, &th, 30.0)),
    ];
    let mut points = 0;
    for (model, obs) in cases {
        let problem = FitProblem::new(model, obs, &th).unwrap().with_cv(cv);
        let layout = pack_parameters(model);
        for _ in 0..25 {
            let v = random_vector(&layout, &mut rng);
            let g = gradient(&problem, &v).unwrap();
            let gmax = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for s in 0..v.len() {
                let h = 1e-5 * v[s].abs().max(1.0);
                let mut up = v.clone();
                up[s] += h;
                let mut dn = v.clone();
                dn[s] -= h;
                let fd = (objective(&problem, &up).unwrap() - objective(&problem, &dn).unwrap()) / (2.0 * h);
                let err = (fd - g[s]).abs();
                assert!(
                    err <= 1e-4 * g[s].abs().max(1e-3 * gmax),
                    "{model} slot {s}: analytic {} vs fd {fd}",
                    g[s]
                );
            }
            points += 1;
        }
    }
    assert_eq!(points, 100);
}

#[test]
fn trace_is_monotone_and_result_recomputes() {
    let rho = DensityMatrix::werner(0.9).unwrap();
    let th = thetas(10);
    let mut obs = noise_free(&model3_truth(), &rho, &th, 30.0);
    // deterministic jitter so the optimum is not exact
    for (m, t) in obs.iter_mut().enumerate() {
        for (n, c) in t.c.iter_mut().enumerate() {
            let bump = ((m * 16 + n) % 7) as f64 - 3.0;
            *c += 5.0 * bump;
            t.a[n / 4] += 5.0 * bump;
            t.b[single_index(coinc_labels(n).2, coinc_labels(n).3)] += 5.0 * bump;
        }
    }
    let problem = FitProblem::new(ModelId::Three, obs.clone(), &th).unwrap().with_options(quick(3));
    let res = fit(&problem).unwrap();
    for w in res.trace.windows(2) {
        assert!(w[1].x < w[0].x);
    }
    assert!(res.statistics.x <= res.trace[0].x);
    let again = res.recompute(&obs).unwrap();
    assert!((again.x - res.statistics.x).abs() <= 1e-6 * res.statistics.x);
    assert_eq!(res.statistics.df, 10 * 24 - 39);
    let best = res.restart_objectives.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    assert_eq!(res.restart_objectives[res.best_restart], Some(best));
    assert_eq!(res.channels.len(), 240);
}

#[test]
fn fit_is_deterministic() {
    let rho = DensityMatrix::werner(0.9).unwrap();
    let th = thetas(4);
    let obs = noise_free(&model2_truth(), &rho, &th, 0.0);
    let problem = FitProblem::new(ModelId::Two, obs, &th).unwrap().with_options(quick(3));
    let a = serde_json::to_string(&fit(&problem).unwrap()).unwrap();
    let b = serde_json::to_string(&fit(&problem).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn nelder_mead_descends() {
    let rho = DensityMatrix::werner(0.9).unwrap();
    let th = thetas(4);
    let obs = noise_free(&model1_truth(), &rho, &th, 0.0);
    let options = OptimizerConfig { method: Method::NelderMead, restarts: 1, max_iter: 3000, ..OptimizerConfig::default() };
    let problem = FitProblem::new(ModelId::One, obs, &th).unwrap().with_options(options);
    let res = fit(&problem).unwrap();
    assert!(res.trace.len() > 2);
    for w in res.trace.windows(2) {
        assert!(w[1].x < w[0].x);
    }
    assert!(res.statistics.x < res.trace[0].x / 10.0);
}

#[test]
fn model4_reuse_and_reoptimize() {
    let rho = DensityMatrix::werner(0.9).unwrap();
    let th = thetas(6);
    let mut obs = noise_free(&model3_truth(), &rho, &th, 30.0);
    for (m, t) in obs.iter_mut().enumerate() {
        let s = 1.0 + 0.02 * ((m % 3) as f64 - 1.0);
        t.a = t.a.map(|v| v * s);
    }
    let cv = CvParams::uniform(0.02, 0.02, 0.02);
    let base = FitProblem::new(ModelId::Four, obs.clone(), &th).unwrap().with_cv(cv).with_options(quick(2));
    let reuse = fit(&base).unwrap();
    let mut re = base.clone();
    re.reoptimize_cv = true;
    let reopt = fit(&re).unwrap();
    assert!(matches!(reuse.params, FilterParams::Model4(_)));
    assert!(reopt.statistics.x <= reuse.statistics.x + 1e-9);
    let m3 = fit(&FitProblem { model: ModelId::Three, cv: None, ..base.clone() }).unwrap();
    // inflated variances can only lower the statistic at the same means
    assert!(reuse.statistics.x < m3.statistics.x);
    assert_eq!(reuse.statistics.df, m3.statistics.df);
    let c = &reuse.channels[8];
    let FilterParams::Model4(p4) = reuse.params else { unreachable!() };
    let expected = (c.predicted + (c.predicted * p4.cv.coinc[0]).powi(2)).sqrt();
    assert!((c.std_error - expected).abs() < 1e-9);
}

#[test]
fn invalid_problems_are_rejected() {
    let th = thetas(2);
    let obs = noise_free(&model1_truth(), &DensityMatrix::werner(0.9).unwrap(), &th, 0.0);
    assert!(FitProblem::new(ModelId::One, obs.clone(), &th[..1]).is_err());
    assert!(fit(&FitProblem::new(ModelId::Four, obs.clone(), &th).unwrap()).is_err());
    assert!(fit(&FitProblem::new(ModelId::One, vec![], &[]).unwrap()).is_err());
    let mut bad = FitProblem::new(ModelId::One, obs, &th).unwrap();
    bad.options.restarts = 0;
    let err = fit(&bad);
    assert!(matches!(err, Err(Error::InvalidInput(_))), "{err:?}");
    let layout = pack_parameters(ModelId::One);
    assert!(objective(&bad, &vec![0.0; layout.raw_len() + 1]).is_err());
}

#[test]
fn initial_filter_recovers_model1_scale() {
    let th = thetas(8);
    let obs = noise_free(&model1_truth(), &DensityMatrix::singlet(), &th, 0.0);
    let problem = FitProblem::new(ModelId::One, obs, &th).unwrap();
    let FilterParams::Model1(p) = initial_filter(&problem) else { panic!() };
    assert!((p.pairs / scanblue::MODEL1_PAIRS - 1.0).abs() < 1e-9, "{}", p.pairs);
    assert!((p.alice[0] - scanblue::MODEL1_ALICE[0]).abs() < 1e-9);
}

