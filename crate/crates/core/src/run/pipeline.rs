use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::config::{RunConfig, SceneMode};
use super::dir::*;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::metrics::{asr_chart_svg, compute_report, table_rows, tables_csv, ChartSeries, MetricsReport, TableRow};
use crate::nes::{CheckpointSink, Nes, OptResult, OptState, OptStatus};
use crate::objective::{PatchObjective, SceneFrame};
use crate::oracle::{DrivingOracle, TextEmbedder};
use crate::patch::{new_random_patch, Patch};
use crate::scenario::{
    build_distance_schedule, load_frames, optimization_scene, optimization_scene_from_frames, render_frame,
    run_trial, run_trial_on_frames, ExternalFrame, ScenarioConfig, TrialRecord,
};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub mean_loss: f64,
    pub best_loss: f64,
    pub candidate_evals: u64,
    pub oracle_queries: u64,
}

/// Contents of `optimization.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub status: OptStatus,
    pub iterations_completed: usize,
    pub best_iteration: Option<usize>,
    pub best_loss: Option<f64>,
    /// `2 · population_n` per completed iteration.
    pub candidate_evals: u64,
    /// `k_eot` oracle queries per candidate evaluation.
    pub oracle_queries: u64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub summary: OptimizationSummary,
    pub best_patch: Patch,
}

fn loss_csv(rows: &[LossRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

fn generation(state: &OptState<Patch>, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "iteration": state.iteration,
        "seed": seed,
        "best_loss": state.best_loss.is_finite().then_some(state.best_loss),
        "best_iteration": state.best_iteration,
        "candidate_evals": state.candidate_evals,
        "oracle_queries": state.oracle_queries,
    })
}

struct RunSink<'a> {
    dir: &'a RunDirectory,
    rows: Vec<LossRow>,
    interrupt: &'a AtomicBool,
    seed: u64,
}

impl CheckpointSink<Patch> for RunSink<'_> {
    fn on_iteration(&mut self, s: &OptState<Patch>) -> Result<()> {
        self.rows.push(LossRow {
            iteration: s.iteration,
            mean_loss: *s.loss_history.last().expect("iteration completed"),
            best_loss: s.best_loss,
            candidate_evals: s.candidate_evals,
            oracle_queries: s.oracle_queries,
        });
        Ok(())
    }

    fn checkpoint(&mut self, s: &OptState<Patch>) -> Result<()> {
        let png = self.dir.join(&format!("{CHECKPOINT_DIR}/patch_iter_{:04}.png", s.iteration));
        s.theta.export(&png, generation(s, self.seed))?;
        self.dir.write_bytes(LOSS_HISTORY_FILE, &loss_csv(&self.rows)?)
    }

    fn interrupted(&self) -> bool {
        self.interrupt.load(Ordering::SeqCst)
    }
}

fn external_frames(cfg: &RunConfig) -> Result<Option<Vec<ExternalFrame>>> {
    cfg.frames_manifest.as_deref().map(load_frames).transpose()
}

/// Benign frames the optimizer attacks.
pub fn optimization_scenes(cfg: &RunConfig) -> Result<Vec<SceneFrame>> {
    let scn = cfg.scenario();
    match (external_frames(cfg)?, cfg.scene_mode) {
        (Some(frames), SceneMode::Critical) => Ok(vec![optimization_scene_from_frames(scn, &frames)?]),
        (Some(frames), SceneMode::Schedule) => frames
            .iter()
            .map(|f| optimization_scene_from_frames(&ScenarioConfig { critical_distance: f.distance, ..scn.clone() }, &frames))
            .collect(),
        (None, SceneMode::Critical) => Ok(vec![optimization_scene(scn)?]),
        (None, SceneMode::Schedule) => {
            let mut scenes = Vec::new();
            for d in build_distance_schedule(scn)? {
                let f = render_frame(scn, d, None)?;
                if f.context.patch_roi.is_some() {
                    scenes.push(f.into_scene(&scn.prompt));
                }
            }
            if scenes.is_empty() {
                return Err(Error::config("scene_mode", "the mount is off-frame at every schedule distance"));
            }
            Ok(scenes)
        }
    }
}

/// Runs the attack and writes config, checkpoints, loss history, the best
/// patch and the run index. Oracle failures and interrupts end the run
/// early with the matching status; the best patch so far is still written.
pub fn optimize_run(
    cfg: &RunConfig,
    oracle: &dyn DrivingOracle,
    embedder: &dyn TextEmbedder,
    dir: &RunDirectory,
    interrupt: &AtomicBool,
) -> Result<OptimizeOutcome> {
    dir.write_json(CONFIG_FILE, cfg)?;
    let scn = cfg.scenario();
    let scenes = optimization_scenes(cfg)?;
    let [pw, ph] = scn.patch_pixels;
    let initial = new_random_patch(cfg.nes.seed, pw, ph, scn.patch_physical[0], scn.patch_physical[1])?;
    let nes = Nes::new(cfg.nes.clone())?;
    let mut sink = RunSink { dir, rows: Vec::new(), interrupt, seed: cfg.nes.seed };
    let result = match PatchObjective::new(scenes, cfg.objective_config()?, oracle, embedder, cfg.nes.seed) {
        Ok(objective) => {
            info!(scenario = %scn.name, iterations = cfg.nes.iterations, population = cfg.nes.population_n, "optimizing");
            nes.optimize(initial, &objective, &mut sink)?
        }
        // the target embedding is the first oracle call
        Err(e @ Error::Oracle(_)) => {
            warn!(error = %e, "oracle failed before the first iteration");
            let state = OptState::new(initial);
            sink.checkpoint(&state)?;
            OptResult { state, status: OptStatus::Aborted { error: e.to_string() } }
        }
        Err(e) => return Err(e),
    };
    let state = &result.state;
    let best = if state.best_iteration.is_some() { state.best_theta.clone() } else { state.theta.clone() };
    best.export(&dir.join(BEST_PATCH_FILE), generation(state, cfg.nes.seed))?;
    dir.write_bytes(LOSS_HISTORY_FILE, &loss_csv(&sink.rows)?)?;
    let summary = OptimizationSummary {
        schema_version: SCHEMA_VERSION,
        scenario: scn.name.clone(),
        status: result.status.clone(),
        iterations_completed: state.iteration,
        best_iteration: state.best_iteration,
        best_loss: state.best_loss.is_finite().then_some(state.best_loss),
        candidate_evals: state.candidate_evals,
        oracle_queries: state.oracle_queries,
    };
    dir.write_json(OPTIMIZATION_FILE, &summary)?;
    dir.write_index()?;
    Ok(OptimizeOutcome { summary, best_patch: best })
}

/// Loads a patch PNG for `scenario`, rejecting a size mismatch.
pub fn load_patch(path: &Path, scenario: &ScenarioConfig) -> Result<Patch> {
    let img = ImageBuffer::load_png(path)?;
    let [w, h] = scenario.patch_pixels;
    if (img.width(), img.height()) != (w, h) {
        return Err(Error::config(
            "patch",
            format!("{} is {}x{}, scenario `{}` expects {w}x{h}", path.display(), img.width(), img.height(), scenario.name),
        ));
    }
    Patch::from_image(&img, scenario.patch_physical[0], scenario.patch_physical[1])
}

/// Contents of `trials.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsFile {
    pub schema_version: u32,
    pub scenario: String,
    pub adversarial: Vec<TrialRecord>,
    pub benign: Vec<TrialRecord>,
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub report: MetricsReport,
    pub trials: TrialsFile,
}

fn run_arm(
    cfg: &RunConfig,
    frames: Option<&[ExternalFrame]>,
    patch: Option<&Patch>,
    oracle: &dyn DrivingOracle,
    pool: &rayon::ThreadPool,
) -> Result<Vec<TrialRecord>> {
    let scn = cfg.scenario();
    pool.install(|| {
        (0..cfg.evaluation.trials)
            .into_par_iter()
            .map(|id| match frames {
                Some(f) => run_trial_on_frames(scn, f, patch, oracle, id),
                None => run_trial(scn, patch, oracle, id),
            })
            .collect()
    })
}

/// Runs `evaluation.trials` trials per condition (adversarial only when a
/// patch is given, benign always) and writes trials, metrics, tables and
/// the distance chart.
pub fn evaluate_run(
    cfg: &RunConfig,
    patch: Option<&Patch>,
    oracle: &dyn DrivingOracle,
    embedder: &dyn TextEmbedder,
    dir: &RunDirectory,
) -> Result<EvaluateOutcome> {
    let scn = cfg.scenario();
    if let Some(p) = patch {
        if [p.width(), p.height()] != scn.patch_pixels {
            return Err(Error::config(
                "patch",
                format!("patch is {}x{}, scenario expects {}x{}", p.width(), p.height(), scn.patch_pixels[0], scn.patch_pixels[1]),
            ));
        }
    }
    dir.write_json(CONFIG_FILE, cfg)?;
    let frames = external_frames(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.nes.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build trial pool: {e}")))?;
    info!(scenario = %scn.name, trials = cfg.evaluation.trials, adversarial = patch.is_some(), "evaluating");
    let adversarial = match patch {
        Some(p) => run_arm(cfg, frames.as_deref(), Some(p), oracle, &pool)?,
        None => Vec::new(),
    };
    let benign = run_arm(cfg, frames.as_deref(), None, oracle, &pool)?;
    let report = compute_report(scn, &adversarial, &benign, embedder, &cfg.report_settings())?;
    let trials = TrialsFile { schema_version: SCHEMA_VERSION, scenario: scn.name.clone(), adversarial, benign };
    dir.write_json(TRIALS_FILE, &trials)?;
    dir.write_json(METRICS_FILE, &report)?;
    let run_name = run_name(dir.path());
    dir.write_bytes(TABLES_FILE, tables_csv(&table_rows(&run_name, &report))?.as_bytes())?;
    dir.write_bytes(CHART_FILE, asr_chart_svg(&[chart_series(&run_name, &report)]).as_bytes())?;
    dir.write_index()?;
    Ok(EvaluateOutcome { report, trials })
}

fn run_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn chart_series(name: &str, r: &MetricsReport) -> ChartSeries {
    let bins = if r.asr_by_bin.is_empty() { r.baseline_by_bin.clone() } else { r.asr_by_bin.clone() };
    ChartSeries { name: name.to_owned(), bins }
}

/// Merges the metrics of several runs into `out/tables.csv` and
/// `out/asr_by_distance.svg` (one series per run).
pub fn merge_runs(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<TableRow>> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidArgument("no run directories given".into()));
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for d in run_dirs {
        let report: MetricsReport = RunDirectory::open(d)?.read_json(METRICS_FILE)?;
        let name = run_name(d);
        rows.extend(table_rows(&name, &report));
        series.push(chart_series(&name, &report));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let tables = out.join(TABLES_FILE);
    std::fs::write(&tables, tables_csv(&rows)?).map_err(|e| Error::io(&tables, e))?;
    let chart = out.join(CHART_FILE);
    std::fs::write(&chart, asr_chart_svg(&series)).map_err(|e| Error::io(&chart, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{HashEmbedder, MockOracle};

    fn small_cfg(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::builtin("crosswalk");
        cfg.resolution = Some([240, 135]);
        cfg.nes.iterations = 2;
        cfg.nes.population_n = 2;
        cfg.nes.checkpoint_every = 1;
        cfg.evaluation.trials = 3;
        cfg.evaluation.resamples = 200;
        let mut cfg = cfg.resolve(dir).unwrap();
        let scn = cfg.scenario_config.as_mut().unwrap();
        scn.patch_pixels = [16, 16];
        cfg
    }

    #[test]
    fn optimize_writes_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_cfg(tmp.path());
        let dir = RunDirectory::create(tmp.path().join("run")).unwrap();
        let out = optimize_run(&cfg, &MockOracle, &HashEmbedder::default(), &dir, &AtomicBool::new(false)).unwrap();
        assert_eq!(out.summary.status, OptStatus::Completed);
        assert_eq!(out.summary.candidate_evals, 8);
        assert_eq!(out.summary.oracle_queries, 40);
        for f in [CONFIG_FILE, BEST_PATCH_FILE, "best_patch.json", LOSS_HISTORY_FILE, OPTIMIZATION_FILE, INDEX_FILE] {
            assert!(dir.join(f).exists(), "{f}");
        }
        assert!(dir.join("checkpoints/patch_iter_0002.png").exists());
        let csv = std::fs::read_to_string(dir.join(LOSS_HISTORY_FILE)).unwrap();
        assert!(csv.starts_with("iteration,mean_loss,best_loss,candidate_evals,oracle_queries\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(verify_run(dir.path()).unwrap().is_ok());
    }

    #[test]
    fn interrupt_checkpoints_immediately() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_cfg(tmp.path());
        let dir = RunDirectory::create(tmp.path().join("run")).unwrap();
        let out = optimize_run(&cfg, &MockOracle, &HashEmbedder::default(), &dir, &AtomicBool::new(true)).unwrap();
        assert_eq!(out.summary.status, OptStatus::Interrupted);
        assert!(dir.join("checkpoints/patch_iter_0000.png").exists());
        assert!(dir.join(BEST_PATCH_FILE).exists());
    }

    #[test]
    fn evaluate_and_merge() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_cfg(tmp.path());
        let red = Patch::filled(16, 16, [255.0, 0.0, 0.0], 1.0, 1.0).unwrap();
        let a = RunDirectory::create(tmp.path().join("a")).unwrap();
        let out = evaluate_run(&cfg, Some(&red), &MockOracle, &HashEmbedder::default(), &a).unwrap();
        assert_eq!(out.trials.adversarial.len(), 3);
        assert!(out.report.p_value.is_some());
        let b = RunDirectory::create(tmp.path().join("b")).unwrap();
        let benign = evaluate_run(&cfg, None, &MockOracle, &HashEmbedder::default(), &b).unwrap();
        assert!(benign.report.asr_overall.is_none());
        assert_eq!(benign.report.baseline_rate, Some(0.0));

        let rows = merge_runs(&[a.path().to_owned(), b.path().to_owned()], &tmp.path().join("report")).unwrap();
        assert_eq!(rows.len(), 3);
        let svg = std::fs::read_to_string(tmp.path().join("report").join(CHART_FILE)).unwrap();
        assert!(svg.contains(">a<") && svg.contains(">b<"));
    }

    #[test]
    fn evaluate_rejects_wrong_patch_size() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_cfg(tmp.path());
        let p = Patch::filled(8, 8, [0.0; 3], 1.0, 1.0).unwrap();
        let d = RunDirectory::create(tmp.path().join("x")).unwrap();
        assert!(matches!(
            evaluate_run(&cfg, Some(&p), &MockOracle, &HashEmbedder::default(), &d),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn merge_rejects_other_schema() {
        let tmp = tempfile::tempdir().unwrap();
        let d = RunDirectory::create(tmp.path().join("old")).unwrap();
        d.write_bytes(METRICS_FILE, br#"{"schema_version": 7}"#).unwrap();
        let err = merge_runs(&[d.path().to_owned()], tmp.path()).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { expected: 1, found: 7 }));
        assert!(merge_runs(&[], tmp.path()).is_err());
    }
}
