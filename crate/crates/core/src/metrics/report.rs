use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::*;
use crate::scenario::{Condition, ScenarioConfig};

pub const SIGNIFICANCE_METHOD: &str = "trial-level cluster bootstrap (substitute for GEE)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub bin_edges: Vec<f64>,
    pub key_distances: Vec<f64>,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            key_distances: KEY_DISTANCES.to_vec(),
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub trials_adversarial: usize,
    pub trials_benign: usize,
    pub frames_total: usize,
    pub frames_valid: usize,
    /// Excluded from every denominator.
    pub failed_queries: usize,
}

/// Everything computed for one scenario. Adversarial fields are absent for
/// benign-only runs and vice versa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr_overall: Option<f64>,
    /// Sample std-dev of per-trial ASR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr_trial_std: Option<f64>,
    /// Percentile bootstrap over trials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr_ci95: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub asr_by_bin: Vec<BinRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_trial_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_ci95: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline_by_bin: Vec<BinRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence_per_trial: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_rate_benign: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_rate_adv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_degradation_pp: Option<f64>,
    /// Keyed by key distance in meters.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bleu4_by_distance: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub semsim_by_distance: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance_method: Option<String>,
    pub bootstrap_resamples: usize,
    pub counters: Counters,
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some(var.sqrt())
}

fn has_valid(trials: &[TrialRecord]) -> bool {
    trials.iter().any(|t| t.valid_frames().next().is_some())
}

struct ArmStats {
    rate: Option<f64>,
    std: Option<f64>,
    ci: Option<[f64; 2]>,
    bins: Vec<BinRate>,
    detection: Option<f64>,
}

fn arm_stats(trials: &[TrialRecord], cfg: &ScenarioConfig, s: &ReportSettings) -> Result<ArmStats> {
    if !has_valid(trials) {
        return Ok(ArmStats { rate: None, std: None, ci: None, bins: Vec::new(), detection: None });
    }
    let ci = match bootstrap_ci(trials, s.resamples, s.seed) {
        Ok(ci) => Some(ci),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ArmStats {
        rate: Some(asr(trials)?),
        std: sample_std(&per_trial_asr(trials)),
        ci,
        bins: asr_by_distance(trials, &s.bin_edges)?,
        detection: Some(detection_rate(trials, &cfg.keywords)?),
    })
}

fn distance_key(d: f64) -> String {
    format!("{d}")
}

/// Builds the report for one scenario from its adversarial and benign trials.
pub fn compute_report(
    cfg: &ScenarioConfig,
    adversarial: &[TrialRecord],
    benign: &[TrialRecord],
    embedder: &dyn TextEmbedder,
    settings: &ReportSettings,
) -> Result<MetricsReport> {
    if adversarial.is_empty() && benign.is_empty() {
        return Err(Error::InvalidArgument("no trials to report".into()));
    }
    if adversarial.iter().any(|t| t.condition != Condition::Adversarial)
        || benign.iter().any(|t| t.condition != Condition::Benign)
    {
        return Err(Error::InvalidArgument("trial condition does not match its arm".into()));
    }
    let adv = arm_stats(adversarial, cfg, settings)?;
    let ben = arm_stats(benign, cfg, settings)?;
    let persistence = if has_valid(adversarial) { Some(persistence(adversarial)?) } else { None };
    let degradation = match (ben.detection, adv.detection) {
        (Some(b), Some(a)) => Some(100.0 * (b - a)),
        _ => None,
    };
    let quality = if has_valid(adversarial) && has_valid(benign) {
        description_quality(adversarial, benign, &settings.key_distances, embedder)?
    } else {
        Vec::new()
    };
    let significance = match cluster_bootstrap_p(adversarial, benign, settings.resamples, settings.seed) {
        Ok(t) => Some(t),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let all = || adversarial.iter().chain(benign);
    let counters = Counters {
        trials_adversarial: adversarial.len(),
        trials_benign: benign.len(),
        frames_total: all().map(|t| t.frames.len()).sum(),
        frames_valid: all().map(|t| t.valid_frames().count()).sum(),
        failed_queries: all().map(|t| t.failed_queries()).sum(),
    };
    Ok(MetricsReport {
        schema_version: crate::SCHEMA_VERSION,
        scenario: cfg.name.clone(),
        asr_overall: adv.rate,
        asr_trial_std: adv.std,
        asr_ci95: adv.ci,
        asr_by_bin: adv.bins,
        baseline_rate: ben.rate,
        baseline_trial_std: ben.std,
        baseline_ci95: ben.ci,
        baseline_by_bin: ben.bins,
        persistence_mean: persistence.as_ref().map(|p| p.0),
        persistence_per_trial: persistence.map(|p| p.1),
        detection_rate_benign: ben.detection,
        detection_rate_adv: adv.detection,
        detection_degradation_pp: degradation,
        bleu4_by_distance: quality.iter().map(|q| (distance_key(q.distance_m), q.bleu4)).collect(),
        semsim_by_distance: quality.iter().map(|q| (distance_key(q.distance_m), q.semantic_similarity)).collect(),
        p_value: significance.map(|t| t.p_value),
        significance_method: significance.map(|_| SIGNIFICANCE_METHOD.to_owned()),
        bootstrap_resamples: settings.resamples,
        counters,
    })
}

/// One row of tables.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub run: String,
    pub scenario: String,
    pub condition: String,
    pub trials: usize,
    pub asr: Option<f64>,
    pub asr_trial_std: Option<f64>,
    pub asr_ci95_lo: Option<f64>,
    pub asr_ci95_hi: Option<f64>,
    pub persistence_mean: Option<f64>,
    pub detection_rate: Option<f64>,
    pub detection_degradation_pp: Option<f64>,
    pub p_value: Option<f64>,
}

/// One row per condition present in the report.
pub fn table_rows(run: &str, r: &MetricsReport) -> Vec<TableRow> {
    let mut rows = Vec::new();
    if r.counters.trials_adversarial > 0 {
        rows.push(TableRow {
            run: run.to_owned(),
            scenario: r.scenario.clone(),
            condition: Condition::Adversarial.as_str().into(),
            trials: r.counters.trials_adversarial,
            asr: r.asr_overall,
            asr_trial_std: r.asr_trial_std,
            asr_ci95_lo: r.asr_ci95.map(|c| c[0]),
            asr_ci95_hi: r.asr_ci95.map(|c| c[1]),
            persistence_mean: r.persistence_mean,
            detection_rate: r.detection_rate_adv,
            detection_degradation_pp: r.detection_degradation_pp,
            p_value: r.p_value,
        });
    }
    if r.counters.trials_benign > 0 {
        rows.push(TableRow {
            run: run.to_owned(),
            scenario: r.scenario.clone(),
            condition: Condition::Benign.as_str().into(),
            trials: r.counters.trials_benign,
            asr: r.baseline_rate,
            asr_trial_std: r.baseline_trial_std,
            asr_ci95_lo: r.baseline_ci95.map(|c| c[0]),
            asr_ci95_hi: r.baseline_ci95.map(|c| c[1]),
            persistence_mean: None,
            detection_rate: r.detection_rate_benign,
            detection_degradation_pp: None,
            p_value: None,
        });
    }
    rows
}

pub fn tables_csv(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_tables(path: &Path, rows: &[TableRow]) -> Result<()> {
    std::fs::write(path, tables_csv(rows)?).map_err(|e| Error::io(path, e))
}

/// One line on the distance chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub name: String,
    pub bins: Vec<BinRate>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn bin_center(b: &BinRate) -> f64 {
    match b.hi {
        Some(hi) => (b.lo + hi) / 2.0,
        None => b.lo + 5.0,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static SVG line chart of ASR against distance, one series per run.
pub fn asr_chart_svg(series: &[ChartSeries]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 160.0, 30.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x_max = series
        .iter()
        .flat_map(|s| s.bins.iter().map(|b| b.hi.unwrap_or(b.lo + 10.0)))
        .fold(40.0f64, f64::max);
    let sx = |d: f64| left + pw * d / x_max;
    let sy = |r: f64| top + ph * (1.0 - r);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    // critical decision range shading
    let _ = writeln!(svg, r##"<rect x="{:.1}" y="{top}" width="{:.1}" height="{ph}" fill="#eeeeee"/>"##, sx(10.0), sx(25.0) - sx(10.0));
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=5 {
        let r = i as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.0}%</text>"#, left - 6.0, sy(r) + 4.0, r * 100.0);
    }
    let mut d = 0.0;
    while d <= x_max + 1e-9 {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{d}</text>"#, sx(d), top + ph + 16.0);
        d += 10.0;
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">Distance to patch (m)</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(svg, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">Attack success rate</text>"#, top + ph / 2.0, top + ph / 2.0);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.bins.iter().map(|b| format!("{:.1},{:.1}", sx(bin_center(b)), sy(b.rate))).collect();
        if pts.len() > 1 {
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        }
        for b in &s.bins {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(bin_center(b)), sy(b.rate));
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, left + pw + 12.0, left + pw + 32.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" class="legend">{}</text>"#, left + pw + 38.0, ly + 4.0, escape(&s.name));
    }
    svg.push_str("</svg>\n");
    svg
}
