//! The four pipeline commands.

use std::path::{Path, PathBuf};

use eprb_core::counts::{CvParams, ModelId};
use eprb_core::fit::{fit, FitProblem, FitResult};
use eprb_core::scanblue::scan_series;
use eprb_core::sim::{match_coincidences, simulate_experiment, tabulate_counts};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::files::{self, CountRow};
use crate::manifest::{ExperimentRecord, FitSummary, RunManifest, SeedRecord};
use crate::seeds::{derive_seed, FIT, SIMULATE};
use crate::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.json";

fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `dir/stem<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dir_of(path).join(format!("{stem}{suffix}"))
}

/// Simulate the first `cfg.simulate.experiments` scan experiments into
/// `out`: per experiment an Alice and a Bob event log plus a ground-truth
/// sidecar, then the config copy and `manifest.json`.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let series: Vec<_> = scan_series().into_iter().take(cfg.simulate.experiments).collect();
    let records: Vec<(ExperimentRecord, SeedRecord)> = series
        .par_iter()
        .enumerate()
        .map(|(m, e)| {
            let seed = derive_seed(cfg.seed, SIMULATE, m as u64);
            let sim = eprb_core::sim::SimConfig { theta: e.theta(), seed, ..cfg.simulate.experiment.clone() };
            let run = simulate_experiment(&sim)?;
            let rec = ExperimentRecord {
                id: e.id.to_string(),
                theta: e.theta(),
                duration_ns: sim.duration_ns,
                alice: format!("{}_alice.csv", e.id),
                bob: format!("{}_bob.csv", e.id),
                truth: format!("{}_truth.json", e.id),
            };
            files::write_events(&out.join(&rec.alice), &run.alice)?;
            files::write_events(&out.join(&rec.bob), &run.bob)?;
            files::write_json(&out.join(&rec.truth), &run.truth)?;
            log::info!("{}: {} Alice and {} Bob detections", e.id, run.alice.len(), run.bob.len());
            Ok((rec, SeedRecord { tag: SIMULATE.into(), index: m as u64, seed }))
        })
        .collect::<Result<_>>()?;

    files::write_json(&out.join(CONFIG_COPY), cfg)?;
    let mut manifest = RunManifest::new("simulate", cfg.hash(), cfg.seed);
    for (rec, seed) in records {
        for f in [&rec.alice, &rec.bob, &rec.truth] {
            manifest.outputs.push(RunManifest::file_ref(out, &out.join(f))?);
        }
        manifest.experiments.push(rec);
        manifest.seeds.push(seed);
    }
    manifest.outputs.push(RunManifest::file_ref(out, &out.join(CONFIG_COPY))?);
    files::write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub struct TabulateArgs {
    /// Directory written by `simulate`.
    pub events: PathBuf,
    /// Count table CSV to write.
    pub out: PathBuf,
    /// Optional per-experiment windows, CSV `experiment,window_ns`.
    pub windows: Option<PathBuf>,
}

/// Match the logs of every experiment in the event directory's manifest
/// and write one count row per experiment.
pub fn cmd_tabulate(cfg: &PipelineConfig, args: &TabulateArgs) -> Result<(Vec<CountRow>, RunManifest)> {
    cfg.validate()?;
    let events_manifest_path = args.events.join(MANIFEST);
    if !events_manifest_path.exists() {
        return Err(CliError::Data(format!("no {MANIFEST} in {}", args.events.display())));
    }
    let events: RunManifest = files::read_json(&events_manifest_path)?;
    events.verify(&args.events)?;
    let overrides = match &args.windows {
        Some(p) => files::read_windows(p)?,
        None => Vec::new(),
    };
    let delta = cfg.tabulate.delta_ns;
    let rows: Vec<CountRow> = events
        .experiments
        .par_iter()
        .map(|e| {
            let w = overrides.iter().find(|(id, _)| *id == e.id).map_or(cfg.tabulate.window_ns, |o| o.1);
            let alice = files::read_events(&args.events.join(&e.alice))?;
            let bob = files::read_events(&args.events.join(&e.bob))?;
            let set = match_coincidences(&alice, &bob, delta, w)?;
            let table = tabulate_counts(&alice, &bob, &set)?;
            if table.is_empty() {
                log::warn!("{}: empty logs, all counts zero", e.id);
            }
            Ok(CountRow {
                experiment: e.id.clone(),
                theta: e.theta,
                window_ns: w,
                delta_ns: delta,
                duration_ns: e.duration_ns,
                table,
            })
        })
        .collect::<Result<_>>()?;
    files::write_counts(&args.out, &rows)?;

    let base = dir_of(&args.out);
    let mut manifest = RunManifest::new("tabulate", cfg.hash(), cfg.seed);
    manifest.inputs.push(RunManifest::file_ref(&base, &events_manifest_path)?);
    for e in &events.experiments {
        for f in [&e.alice, &e.bob] {
            manifest.inputs.push(RunManifest::file_ref(&base, &args.events.join(f))?);
        }
    }
    if let Some(p) = &args.windows {
        manifest.inputs.push(RunManifest::file_ref(&base, p)?);
    }
    manifest.outputs.push(RunManifest::file_ref(&base, &args.out)?);
    files::write_json(&sibling(&args.out, ".manifest.json"), &manifest)?;
    Ok((rows, manifest))
}

pub struct FitArgs {
    pub counts: PathBuf,
    /// FitResult JSON to write; the residual CSV and manifest go beside it.
    pub out: PathBuf,
    /// Model #4 coefficients of variation, JSON.
    pub cv: Option<PathBuf>,
}

pub fn residuals_path(out: &Path) -> PathBuf {
    sibling(out, "_residuals.csv")
}

/// Build the fit problem from a count table CSV.
pub fn fit_problem(cfg: &PipelineConfig, rows: &[CountRow], cv: Option<CvParams>) -> Result<FitProblem> {
    let model = cfg.fit.model_id()?;
    let Some(first) = rows.first() else {
        return Err(CliError::Data("count table has no experiment rows".into()));
    };
    if rows.iter().any(|r| r.duration_ns != first.duration_ns) {
        return Err(CliError::Data("experiments have different durations".into()));
    }
    let thetas: Vec<f64> = rows.iter().map(|r| r.theta).collect();
    let mut problem = FitProblem::new(model, rows.iter().map(|r| r.table).collect(), &thetas)?
        .with_ids(rows.iter().map(|r| r.experiment.clone()).collect())
        .with_windows(rows.iter().map(|r| r.window_ns).collect())
        .with_duration(first.duration_ns)
        .with_options(cfg.fit.optimizer(derive_seed(cfg.seed, FIT, 0)));
    problem.completion = cfg.fit.completion;
    problem.reoptimize_cv = cfg.fit.reoptimize_cv;
    match (model, cv) {
        (ModelId::Four, Some(cv)) => problem = problem.with_cv(cv),
        (ModelId::Four, None) => return Err(CliError::Usage("model 4 needs --cv-file".into())),
        (_, Some(_)) => log::warn!("--cv-file is only used by model 4"),
        _ => {}
    }
    Ok(problem)
}

/// Fit the configured model. The outputs are written even when the
/// optimizer stopped without converging; the caller decides the exit code.
pub fn cmd_fit(cfg: &PipelineConfig, args: &FitArgs) -> Result<(FitResult, RunManifest)> {
    cfg.validate()?;
    let rows = files::read_counts(&args.counts)?;
    let cv: Option<CvParams> = match &args.cv {
        Some(p) => Some(files::read_json(p)?),
        None => None,
    };
    let problem = fit_problem(cfg, &rows, cv)?;
    let result = fit(&problem)?;
    files::write_json(&args.out, &result)?;
    let residuals = residuals_path(&args.out);
    files::write_residuals(&residuals, &result.channels)?;

    let base = dir_of(&args.out);
    let mut manifest = RunManifest::new("fit", cfg.hash(), cfg.seed);
    manifest.seeds.push(SeedRecord { tag: FIT.into(), index: 0, seed: problem.options.seed });
    manifest.inputs.push(RunManifest::file_ref(&base, &args.counts)?);
    if let Some(p) = &args.cv {
        manifest.inputs.push(RunManifest::file_ref(&base, p)?);
    }
    manifest.outputs.push(RunManifest::file_ref(&base, &args.out)?);
    manifest.outputs.push(RunManifest::file_ref(&base, &residuals)?);
    manifest.fits.push(summary(&result));
    files::write_json(&sibling(&args.out, ".manifest.json"), &manifest)?;
    Ok((result, manifest))
}

fn summary(r: &FitResult) -> FitSummary {
    let s = &r.statistics;
    FitSummary { model: r.model, x: s.x, df: s.df, z: s.z, accepted: s.accepted, converged: r.converged }
}

/// Per-fit channel tables (`<stem>_channels.csv`) and `summary.csv`
/// ordered by Z.
pub fn cmd_report(results: &[PathBuf], out: &Path) -> Result<Vec<FitSummary>> {
    let mut rows = Vec::new();
    let mut manifest = RunManifest::new("report", String::new(), 0);
    for path in results {
        let r: FitResult = files::read_json(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "fit".into());
        let table = out.join(format!("{stem}_channels.csv"));
        files::write_residuals(&table, &r.channels)?;
        manifest.inputs.push(RunManifest::file_ref(out, path)?);
        manifest.outputs.push(RunManifest::file_ref(out, &table)?);
        rows.push((summary(&r), stem));
    }
    rows.sort_by(|a, b| a.0.z.total_cmp(&b.0.z));

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["model", "X", "DF", "Z", "accepted", "converged", "source"]).map_err(csv_err)?;
    for (s, stem) in &rows {
        w.write_record([
            s.model.number().to_string(),
            s.x.to_string(),
            s.df.to_string(),
            s.z.to_string(),
            s.accepted.to_string(),
            s.converged.to_string(),
            stem.clone(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    let summary_path = out.join("summary.csv");
    files::write_atomic(&summary_path, &bytes)?;
    manifest.outputs.push(RunManifest::file_ref(out, &summary_path)?);
    let summaries: Vec<FitSummary> = rows.into_iter().map(|(s, _)| s).collect();
    manifest.fits = summaries.clone();
    files::write_json(&out.join("report.manifest.json"), &manifest)?;
    Ok(summaries)
}
