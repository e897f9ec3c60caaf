//! The `eprb` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eprb_cli::files::{read_counts, write_events};
use eprb_cli::manifest::{ExperimentRecord, RunManifest};
use eprb_cli::PipelineConfig;
use eprb_core::sim::{EventLog, GroundTruth};

fn eprb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eprb")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\nstdout {}\nstderr {}", out.status, String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, json).unwrap();
    p
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Files of a directory, sorted, with their bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

const SMALL: &str = r#"{"seed": 5, "simulate": {"experiments": 3, "experiment": {"duration_ns": 2e7, "pair_rate": 2e4}}}"#;

#[test]
fn default_config_is_the_full_scan() {
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.simulate.experiments, 41);
    assert_eq!(cfg.simulate.experiment.duration_ns, 5e9);
    assert_eq!(cfg.tabulate.window_ns, 30.0);
}

#[test]
fn simulate_writes_logs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    ok(&eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "ev", "--experiments", "2"]));
    let m = manifest(&dir.path().join("ev/manifest.json"));
    assert_eq!(m.experiments.len(), 2);
    assert_eq!(m.seeds.len(), 2);
    assert_eq!(m.experiments[0].id, "scanblue110");
    m.verify(&dir.path().join("ev")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("ev/scanblue110_alice.csv")).unwrap();
    assert!(text.starts_with("time_ns,setting,result\n"));
    let truth: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ev/scanblue110_truth.json")).unwrap()).unwrap();
    assert!(truth.pairs_generated > 0);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    ok(&eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "a"]));
    ok(&eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "b"]));
    ok(&eprb(dir.path(), &["--config", "cfg.json", "--seed", "6", "simulate", "--out", "c"]));
    let (a, b, c) = (snapshot(&dir.path().join("a")), snapshot(&dir.path().join("b")), snapshot(&dir.path().join("c")));
    assert_eq!(a.len(), 3 * 3 + 2);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn empty_logs_give_flagged_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("ev");
    std::fs::create_dir(&ev).unwrap();
    let mut m = RunManifest::new("simulate", "fixture".into(), 0);
    for id in ["e0", "e1"] {
        let rec = ExperimentRecord {
            id: id.into(),
            theta: 0.0,
            duration_ns: 1e6,
            alice: format!("{id}_alice.csv"),
            bob: format!("{id}_bob.csv"),
            truth: String::new(),
        };
        write_events(&ev.join(&rec.alice), &EventLog::default()).unwrap();
        write_events(&ev.join(&rec.bob), &EventLog::default()).unwrap();
        m.experiments.push(rec);
    }
    std::fs::write(ev.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    ok(&eprb(dir.path(), &["tabulate", "ev", "--out", "counts.csv"]));
    let text = std::fs::read_to_string(dir.path().join("counts.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[5], "true");
        assert!(cols[6..].iter().all(|c| *c == "0"));
    }
}

#[test]
fn zero_window_on_exact_offsets_counts_the_true_pairs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"seed": 1, "simulate": {"experiments": 2, "experiment": {"duration_ns": 1e8, "pair_rate": 2e4}}}"#,
    );
    ok(&eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "ev"]));
    ok(&eprb(dir.path(), &["--config", "cfg.json", "tabulate", "ev", "--out", "counts.csv", "--window", "0", "--delta", "15"]));
    let rows = read_counts(&dir.path().join("counts.csv")).unwrap();
    for row in rows {
        let truth: GroundTruth = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("ev/{}_truth.json", row.experiment))).unwrap(),
        )
        .unwrap();
        assert!(!truth.true_pairs.is_empty());
        assert_eq!(row.table.c.iter().sum::<f64>(), truth.true_pairs.len() as f64);
        assert_eq!(row.window_ns, 0.0);
    }
}

#[test]
fn narrow_window_loses_coincidences() {
    let dir = tempfile::tempdir().unwrap();
    let slow = r#"{"tail_fraction": 0.3, "scale_ns": 6.0}"#;
    write_config(
        dir.path(),
        &format!(
            r#"{{"simulate": {{"experiments": 2, "experiment": {{"duration_ns": 1e8, "pair_rate": 5e4,
                "alice_delay": [{slow}, {slow}, {slow}, {slow}], "bob_delay": [{slow}, {slow}, {slow}, {slow}]}}}}}}"#
        ),
    );
    ok(&eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "ev"]));
    ok(&eprb(dir.path(), &["--config", "cfg.json", "tabulate", "ev", "--out", "wide.csv"]));
    ok(&eprb(dir.path(), &["--config", "cfg.json", "tabulate", "ev", "--out", "narrow.csv", "--window", "6"]));
    let wide = read_counts(&dir.path().join("wide.csv")).unwrap();
    let narrow = read_counts(&dir.path().join("narrow.csv")).unwrap();
    for (w, n) in wide.iter().zip(&narrow) {
        assert!(n.table.c.iter().sum::<f64>() < w.table.c.iter().sum::<f64>());
        assert_eq!(n.table.a, w.table.a);
    }
    let m = manifest(&dir.path().join("narrow.manifest.json"));
    m.verify(dir.path()).unwrap();
}

#[test]
fn per_experiment_window_file() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    ok(&eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "ev", "--experiments", "2"]));
    std::fs::write(dir.path().join("w.csv"), "experiment,window_ns\nscanblue111,12\n").unwrap();
    ok(&eprb(dir.path(), &["--config", "cfg.json", "tabulate", "ev", "--out", "c.csv", "--windows-file", "w.csv"]));
    let rows = read_counts(&dir.path().join("c.csv")).unwrap();
    assert_eq!(rows[0].window_ns, 30.0);
    assert_eq!(rows[1].window_ns, 12.0);
}

/// Ten experiments with the given simulator settings, tabulated.
fn counts_fixture(dir: &Path, experiment: &str) {
    write_config(
        dir,
        &format!(r#"{{"seed": 3, "simulate": {{"experiments": 10, "experiment": {experiment}}}, "fit": {{"restarts": 2}}}}"#),
    );
    ok(&eprb(dir, &["--config", "cfg.json", "simulate", "--out", "ev"]));
    ok(&eprb(dir, &["--config", "cfg.json", "tabulate", "ev", "--out", "counts.csv"]));
}

fn fit_z(dir: &Path, model: &str, out: &str) -> f64 {
    ok(&eprb(dir, &["--config", "cfg.json", "fit", "counts.csv", "--model", model, "--out", out]));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(out)).unwrap()).unwrap();
    v["statistics"]["Z"].as_f64().unwrap()
}

#[test]
fn model1_accepts_model1_data() {
    let dir = tempfile::tempdir().unwrap();
    counts_fixture(
        dir.path(),
        r#"{"duration_ns": 2e8, "pair_rate": 2e5,
            "alice_profile": {"channels": [[0.05], [0.05], [0.055], [0.055]]},
            "bob_profile": {"channels": [[0.036], [0.036], [0.035], [0.035]]}}"#
            .replace("[0.05]", &format!("{:?}", vec![0.05; 100]))
            .replace("[0.055]", &format!("{:?}", vec![0.055; 100]))
            .replace("[0.036]", &format!("{:?}", vec![0.036; 100]))
            .replace("[0.035]", &format!("{:?}", vec![0.035; 100]))
            .as_str(),
    );
    let z = fit_z(dir.path(), "1", "fit1.json");
    assert!(z.abs() < 5.0, "Z = {z}");
    let m = manifest(&dir.path().join("fit1.manifest.json"));
    m.verify(dir.path()).unwrap();
    assert_eq!(m.fits.len(), 1);
    let residuals = std::fs::read_to_string(dir.path().join("fit1_residuals.csv")).unwrap();
    assert_eq!(residuals.lines().count(), 1 + 10 * 24);
    assert!(residuals.starts_with("experiment,channel,observed,predicted,std_error\n"));
}

#[test]
fn model_ladder_on_model3_mechanisms() {
    let dir = tempfile::tempdir().unwrap();
    counts_fixture(
        dir.path(),
        r#"{"duration_ns": 5e8, "pair_rate": 6e5, "alice_background_per_s": 2e5, "bob_background_per_s": 2e5}"#,
    );
    let z1 = fit_z(dir.path(), "1", "fit1.json");
    fit_z(dir.path(), "2", "fit2.json");
    let z3 = fit_z(dir.path(), "3", "fit3.json");
    assert!(z1 >= 5.0, "Z1 = {z1}");
    assert!(z3 < 5.0, "Z3 = {z3}");
    let x = |f: &str| {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(f)).unwrap()).unwrap();
        v["statistics"]["X"].as_f64().unwrap()
    };
    assert!(x("fit1.json") >= x("fit2.json") && x("fit2.json") >= x("fit3.json"));

    // report: three rows ordered by Z, std_error = √predicted without variances
    ok(&eprb(dir.path(), &["report", "fit1.json", "fit2.json", "fit3.json", "--out", "rep"]));
    let summary = std::fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "model,X,DF,Z,accepted,converged,source");
    assert_eq!(lines.len(), 4);
    let zs: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(zs.windows(2).all(|w| w[0] <= w[1]));
    let channels = std::fs::read_to_string(dir.path().join("rep/fit1_channels.csv")).unwrap();
    for line in channels.lines().skip(1).take(30) {
        let cols: Vec<f64> = line.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
        assert!((cols[2] - cols[1].sqrt()).abs() < 1e-9 * cols[1].sqrt().max(1.0));
    }

    // Model #4 with uniform coefficients of variation reports Xrev
    std::fs::write(
        dir.path().join("cv.json"),
        serde_json::to_string(&eprb_core::counts::CvParams::uniform(0.01, 0.01, 0.02)).unwrap(),
    )
    .unwrap();
    ok(&eprb(dir.path(), &["--config", "cfg.json", "fit", "counts.csv", "--model", "4", "--cv-file", "cv.json", "--out", "fit4.json"]));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit4.json")).unwrap()).unwrap();
    assert_eq!(v["params"]["model"], "model4");
    assert!(v["statistics"]["X"].as_f64().unwrap() < x("fit3.json"));
    assert_eq!(v["statistics"]["DF"], 10 * 24 - 39);
}

#[test]
fn report_with_no_inputs_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eprb(dir.path(), &["report", "--out", "rep"]));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap(),
        "model,X,DF,Z,accepted,converged,source\n"
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |out: Output| out.status.code().unwrap();

    // usage and config errors
    assert_eq!(code(eprb(dir.path(), &["frobnicate"])), 1);
    write_config(dir.path(), r#"{"simulate": {"experimentz": 3}}"#);
    assert_eq!(code(eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "ev"])), 1);
    assert_eq!(code(eprb(dir.path(), &["fit", "counts.csv", "--model", "7", "--out", "f.json"])), 1);

    // data errors
    std::fs::write(dir.path().join("bad.csv"), "experiment,theta\nx,1\n").unwrap();
    assert_eq!(code(eprb(dir.path(), &["fit", "bad.csv", "--out", "f.json"])), 3);
    assert_eq!(code(eprb(dir.path(), &["fit", "missing.csv", "--out", "f.json"])), 3);
    assert_eq!(code(eprb(dir.path(), &["tabulate", "nowhere", "--out", "c.csv"])), 3);

    // a run stopped by the iteration limit still writes its outputs
    write_config(dir.path(), SMALL);
    assert_eq!(code(eprb(dir.path(), &["--config", "cfg.json", "simulate", "--out", "ev"])), 0);
    assert_eq!(code(eprb(dir.path(), &["--config", "cfg.json", "tabulate", "ev", "--out", "counts.csv"])), 0);
    assert_eq!(code(eprb(dir.path(), &["--config", "cfg.json", "fit", "counts.csv", "--model", "4", "--out", "f.json"])), 1);
    write_config(dir.path(), r#"{"fit": {"max_iter": 1, "restarts": 1}}"#);
    assert_eq!(code(eprb(dir.path(), &["--config", "cfg.json", "fit", "counts.csv", "--out", "f.json"])), 2);
    assert!(dir.path().join("f.json").exists());
    assert!(dir.path().join("f_residuals.csv").exists());
}
