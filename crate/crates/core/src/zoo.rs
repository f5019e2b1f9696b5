//! Directory scans, ranking metrics and latency accounting.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::detector::{self, Calibration, CalibrationError, DetectError, DetectorConfig, Mode, Verdict};
use crate::headspec::{HeadSpec, HeadSpecError};
use crate::json as cjson;
use crate::rng;
use crate::synth::{ManifestEntry, TruthLabel};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ZooError {
    #[error("no positive labels")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        source: HeadSpecError,
    },
}

/// Ground truth for one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truth {
    pub backdoor: bool,
    pub target: Option<usize>,
}

impl From<&ManifestEntry> for Truth {
    fn from(e: &ManifestEntry) -> Self {
        Truth {
            backdoor: e.label == TruthLabel::Backdoor,
            target: e.target,
        }
    }
}

/// Rates are `None` when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub tpr: Option<f64>,
    pub tpr_target_match: Option<f64>,
    pub fpr: Option<f64>,
    pub mtpr: Option<f64>,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(verdicts: &[Verdict], truth: &[Truth]) -> Result<Metrics, ZooError> {
    if verdicts.len() != truth.len() {
        return Err(ZooError::LengthMismatch(verdicts.len(), truth.len()));
    }
    let (mut pos, mut neg, mut tp, mut tp_match, mut fp, mut hit) = (0, 0, 0, 0, 0, 0);
    for (v, t) in verdicts.iter().zip(truth) {
        let flagged = v.is_backdoored();
        if t.backdoor {
            pos += 1;
            let target_ok = t.target.is_some() && v.target == t.target;
            tp += usize::from(flagged);
            tp_match += usize::from(flagged && target_ok);
            hit += usize::from(t.target == Some(v.indicator.peak().0));
        } else {
            neg += 1;
            fp += usize::from(flagged);
        }
    }
    Ok(Metrics {
        tpr: rate(tp, pos),
        tpr_target_match: rate(tp_match, pos),
        fpr: rate(fp, neg),
        mtpr: rate(hit, pos),
    })
}

/// Non-interpolated average precision over the score-descending ranking.
/// Tied scores enter the ranking together as one group.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, ZooError> {
    if scores.len() != labels.len() {
        return Err(ZooError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(ZooError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            tp += usize::from(labels[order[j]]);
            j += 1;
        }
        seen += j - i;
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// ROC AUC as the Mann-Whitney statistic, ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, ZooError> {
    if scores.len() != labels.len() {
        return Err(ZooError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ZooError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks of positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Head-spec files in `dir` sorted by name; `manifest.json` is skipped.
pub fn list_models(dir: &Path) -> Result<Vec<PathBuf>, ZooError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n != MANIFEST_FILE)
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_models(dir: &Path) -> Result<Vec<HeadSpec>, ZooError> {
    list_models(dir)?
        .into_iter()
        .map(|path| HeadSpec::from_path(&path).map_err(|source| ZooError::Model { path, source }))
        .collect()
}

/// Suspicion score: larger means more likely backdoored.
pub fn oriented_score(v: &Verdict, cfg: &DetectorConfig) -> f64 {
    match cfg.mode {
        Mode::Targeted => v.score,
        Mode::Sim => cfg.sim_direction.orient(v.score),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model_id: String,
    pub file: String,
    pub result: Result<Verdict, String>,
    pub truth: Option<Truth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooReport {
    /// Sorted by `(model_id, file)`.
    pub per_model: Vec<ModelRecord>,
    /// Model ids by descending suspicion, ties by id.
    pub ranking: Vec<String>,
    pub metrics: Metrics,
    pub average_precision: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub p95_latency_ms: Option<f64>,
    pub scan_seed: u64,
}

fn p95(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (0.95 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.max(1) - 1])
}

fn scan_one(path: &Path, cfg: &DetectorConfig, scan_seed: u64) -> (String, Result<Verdict, String>) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let head = match HeadSpec::from_path(path) {
        Ok(h) => h,
        Err(e) => return (stem, Err(e.to_string())),
    };
    let id = head.model_id().to_string();
    let model_cfg = cfg.with_seed(rng::model_seed(scan_seed, &id));
    (id, detector::run(&head, &model_cfg).map_err(|e| e.to_string()))
}

/// Detects every model in `dir`. Per-file failures are recorded, not raised.
/// Each model is probed with seed `scan_seed ^ fnv1a(model_id)`, so results do
/// not depend on visit order or `workers`.
pub fn scan(
    dir: &Path,
    cfg: &DetectorConfig,
    manifest: Option<&[ManifestEntry]>,
    workers: usize,
    scan_seed: u64,
) -> Result<ZooReport, ZooError> {
    cfg.validate()?;
    let files = list_models(dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ZooError::Pool(e.to_string()))?;
    let results: Vec<(String, Result<Verdict, String>)> = pool.install(|| {
        use rayon::prelude::*;
        files.par_iter().map(|p| scan_one(p, cfg, scan_seed)).collect()
    });
    let truth_by_file: HashMap<&str, Truth> = manifest
        .unwrap_or_default()
        .iter()
        .map(|e| (e.file.as_str(), Truth::from(e)))
        .collect();
    let mut per_model: Vec<ModelRecord> = files
        .iter()
        .zip(results)
        .map(|(path, (model_id, result))| {
            let file = path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let truth = truth_by_file.get(file.as_str()).copied();
            ModelRecord {
                model_id,
                file,
                result,
                truth,
            }
        })
        .collect();
    per_model.sort_by(|a, b| (&a.model_id, &a.file).cmp(&(&b.model_id, &b.file)));

    let mut scored: Vec<(&str, f64)> = per_model
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|v| (r.model_id.as_str(), oriented_score(v, cfg))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let ranking = scored.into_iter().map(|(id, _)| id.to_string()).collect();

    let labelled: Vec<(&Verdict, Truth)> = per_model
        .iter()
        .filter_map(|r| Some((r.result.as_ref().ok()?, r.truth?)))
        .collect();
    let verdicts: Vec<Verdict> = labelled.iter().map(|(v, _)| (*v).clone()).collect();
    let truths: Vec<Truth> = labelled.iter().map(|(_, t)| *t).collect();
    let metrics = metrics(&verdicts, &truths)?;
    let scores: Vec<f64> = verdicts.iter().map(|v| oriented_score(v, cfg)).collect();
    let labels: Vec<bool> = truths.iter().map(|t| t.backdoor).collect();
    let average_precision = average_precision(&scores, &labels).ok();

    let mut latencies: Vec<f64> = per_model
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(Verdict::elapsed_ms))
        .collect();
    latencies.sort_by(f64::total_cmp);
    let mean_latency_ms =
        (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64);
    Ok(ZooReport {
        per_model,
        ranking,
        metrics,
        average_precision,
        mean_latency_ms,
        p95_latency_ms: p95(&latencies),
        scan_seed,
    })
}

impl ZooReport {
    pub fn errors(&self) -> usize {
        self.per_model.iter().filter(|r| r.result.is_err()).count()
    }

    /// Report document. Timing lives only in `latency` and per-model
    /// `elapsed_ms`; everything else is reproducible.
    pub fn to_json_value(&self) -> Value {
        let models: Vec<Value> = self
            .per_model
            .iter()
            .map(|r| {
                let mut m = match &r.result {
                    Ok(v) => v.to_json_value(),
                    Err(e) => json!({"model_id": r.model_id, "decision": "error", "error": e}),
                };
                m["file"] = json!(r.file);
                m["truth_label"] = json!(r.truth.map(|t| if t.backdoor { "backdoor" } else { "clean" }));
                m["truth_target"] = json!(r.truth.and_then(|t| t.target));
                m
            })
            .collect();
        json!({
            "scan_seed": self.scan_seed,
            "models": models,
            "ranking": self.ranking,
            "metrics": {
                "tpr": self.metrics.tpr,
                "tpr_target_match": self.metrics.tpr_target_match,
                "fpr": self.metrics.fpr,
                "mtpr": self.metrics.mtpr,
                "average_precision": self.average_precision,
            },
            "latency": {
                "mean_ms": self.mean_latency_ms,
                "p95_ms": self.p95_latency_ms,
            },
            "counts": {
                "models": self.per_model.len(),
                "errors": self.errors(),
            },
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = cjson::to_canonical_string(&self.to_json_value()).expect("report is serializable");
        s.push('\n');
        s
    }

    /// One row per model: model_id, decision, target, score, truth_label, truth_target, elapsed_ms.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ZooError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model_id", "decision", "target", "score", "truth_label", "truth_target", "elapsed_ms"])?;
        let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.per_model {
            let (decision, target, score, elapsed) = match &r.result {
                Ok(v) => (
                    if v.is_backdoored() { "backdoored" } else { "clean" },
                    opt(v.target),
                    v.score.to_string(),
                    v.elapsed_ms().to_string(),
                ),
                Err(_) => ("error", String::new(), String::new(), String::new()),
            };
            let truth_label = match r.truth {
                Some(t) if t.backdoor => "backdoor",
                Some(_) => "clean",
                None => "",
            };
            w.write_record([
                r.model_id.as_str(),
                decision,
                &target,
                &score,
                truth_label,
                &opt(r.truth.and_then(|t| t.target)),
                &elapsed,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Detects each head with its per-model seed, in parallel on the current pool.
pub fn detect_all(heads: &[HeadSpec], cfg: &DetectorConfig, scan_seed: u64) -> Result<Vec<Verdict>, DetectError> {
    use rayon::prelude::*;
    heads
        .par_iter()
        .map(|h| detector::run(h, &cfg.with_seed(rng::model_seed(scan_seed, h.model_id()))))
        .collect()
}

/// Fits the threshold of `base` on clean and backdoored configuration heads.
///
/// In targeted mode the score is the peak indicator value. In sim mode the
/// clean profile is the mean clean indicator and the threshold is fitted on
/// cosine scores oriented by `base.sim_direction`.
pub fn calibrate_config(
    clean: &[HeadSpec],
    backdoor: &[HeadSpec],
    base: &DetectorConfig,
    scan_seed: u64,
) -> Result<(DetectorConfig, Calibration), ZooError> {
    if clean.is_empty() || backdoor.is_empty() {
        return Err(CalibrationError::EmptyConfigSet.into());
    }
    let mut cfg = base.clone();
    let probe_only = |h: &HeadSpec| {
        detector::probe_indicator(h, &cfg.with_seed(rng::model_seed(scan_seed, h.model_id())))
    };
    let indicators = |hs: &[HeadSpec]| -> Result<Vec<_>, DetectError> {
        use rayon::prelude::*;
        hs.par_iter().map(probe_only).collect()
    };
    let clean_ind = indicators(clean)?;
    let bd_ind = indicators(backdoor)?;
    let peak = |v: &crate::indicators::IndicatorVector| v.peak().1;
    let cal = match base.mode {
        Mode::Targeted => {
            let c: Vec<f64> = clean_ind.iter().map(peak).collect();
            let b: Vec<f64> = bd_ind.iter().map(peak).collect();
            let cal = detector::calibrate(&c, &b, base.fpr_cap)?;
            cfg.tau = Some(cal.tau);
            cal
        }
        Mode::Sim => {
            let mean = detector::mean_clean_profile(&clean_ind)?;
            let oriented = |vs: &[crate::indicators::IndicatorVector]| -> Result<Vec<f64>, DetectError> {
                vs.iter()
                    .map(|v| Ok(base.sim_direction.orient(detector::cosine(&v.values, &mean)?)))
                    .collect()
            };
            let cal = detector::calibrate(&oriented(&clean_ind)?, &oriented(&bd_ind)?, base.fpr_cap)?;
            cfg.tau_sim = Some(base.sim_direction.orient(cal.tau));
            cfg.clean_mean = Some(mean);
            cal
        }
    };
    if cfg.indicator.is_none() {
        cfg.indicator = clean.first().map(|h| base.indicator_for(h));
    }
    Ok((cfg, cal))
}

/// Counts `(flagged, total)` in a verdict list.
pub fn flagged(verdicts: &[Verdict]) -> (usize, usize) {
    (verdicts.iter().filter(|v| v.is_backdoored()).count(), verdicts.len())
}
