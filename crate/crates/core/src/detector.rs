//! Targeted detection, cosine-similarity detection and threshold calibration.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::eval::{self, EvalError};
use crate::headspec::HeadSpec;
use crate::indicators::{self, default_indicator, IndicatorKind, IndicatorVector};
use crate::json;
use crate::probe::{self, Distribution, ProbeConfig, ProbeError, DEFAULT_PROBE_COUNT};

/// Default cap on the calibration-set false-positive rate.
pub const DEFAULT_FPR_CAP: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("invalid detector configuration: {0}")]
    ConfigInvalid(String),
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CalibrationError {
    #[error("configuration set is empty")]
    EmptyConfigSet,
    #[error("indicator vectors differ in kind or class count")]
    KindMismatch,
    #[error("calibration scores must be finite")]
    NonFiniteScore,
    #[error("fpr cap must lie in [0, 1), got {0}")]
    InvalidCap(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Targeted,
    Sim,
}

/// Which side of `tau_sim` flags a backdoor in similarity mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SimDirection {
    /// `cosine > tau_sim` flags.
    #[default]
    #[serde(rename = "above")]
    FlagAbove,
    /// `cosine < tau_sim` flags.
    #[serde(rename = "below")]
    FlagBelow,
}

impl SimDirection {
    /// Maps a cosine score onto an axis where larger means more suspicious.
    pub fn orient(&self, cosine: f64) -> f64 {
        match self {
            SimDirection::FlagAbove => cosine,
            SimDirection::FlagBelow => -cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeDist {
    /// Resolved per head from its latent range.
    #[default]
    Auto,
    Uniform01,
    Gaussian,
}

/// Probe section of a detector configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    #[serde(default)]
    pub dist: ProbeDist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    DEFAULT_PROBE_COUNT
}

fn default_fpr_cap() -> f64 {
    DEFAULT_FPR_CAP
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            dist: ProbeDist::Auto,
            sigma: None,
            count: DEFAULT_PROBE_COUNT,
            seed: 0,
        }
    }
}

impl ProbeSettings {
    /// Concrete probe configuration for `h`.
    pub fn resolve(&self, h: &HeadSpec) -> Result<ProbeConfig, DetectError> {
        let dist = match self.dist {
            ProbeDist::Auto => probe::choose_distribution(h.latent_range(), h.head_kind()),
            ProbeDist::Uniform01 => Distribution::Uniform01,
            ProbeDist::Gaussian => Distribution::Gaussian {
                sigma: self.sigma.ok_or_else(|| {
                    DetectError::ConfigInvalid("gaussian probes need `sigma`".into())
                })?,
            },
        };
        Ok(ProbeConfig::new(dist, self.count, self.seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// `None` selects the per-architecture default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator: Option<IndicatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_sim: Option<f64>,
    #[serde(default)]
    pub sim_direction: SimDirection,
    #[serde(default = "default_fpr_cap")]
    pub fpr_cap: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            indicator: Some(IndicatorKind::Mean),
            tau: None,
            probe: ProbeSettings::default(),
            mode: Mode::Targeted,
            clean_mean: None,
            tau_sim: None,
            sim_direction: SimDirection::FlagAbove,
            fpr_cap: DEFAULT_FPR_CAP,
        }
    }
}

impl DetectorConfig {
    pub fn targeted(indicator: IndicatorKind, tau: f64, probe: ProbeSettings) -> Self {
        Self {
            indicator: Some(indicator),
            tau: Some(tau),
            probe,
            ..Self::default()
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, DetectError> {
        let cfg: Self = serde_json::from_slice(bytes)
            .map_err(|e| DetectError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = json::to_canonical_string(self).expect("config is serializable");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: &str| Err(DetectError::ConfigInvalid(m.to_string()));
        if !(self.fpr_cap > 0.0 && self.fpr_cap < 1.0) {
            return bad("fpr_cap must lie in (0, 1)");
        }
        if self.probe.count == 0 {
            return bad("probe count must be at least 1");
        }
        match self.mode {
            Mode::Targeted => match self.tau {
                Some(t) if t.is_finite() => {}
                Some(_) => return bad("tau must be finite"),
                None => return bad("targeted mode requires `tau`"),
            },
            Mode::Sim => {
                match &self.clean_mean {
                    Some(m) if !m.is_empty() && m.iter().all(|v| v.is_finite()) => {}
                    Some(_) => return bad("clean_mean must be a non-empty finite vector"),
                    None => return bad("sim mode requires `clean_mean`"),
                }
                match self.tau_sim {
                    Some(t) if t.is_finite() => {}
                    _ => return bad("sim mode requires a finite `tau_sim`"),
                }
            }
        }
        Ok(())
    }

    pub fn indicator_for(&self, h: &HeadSpec) -> IndicatorKind {
        self.indicator
            .unwrap_or_else(|| default_indicator(h.arch_tag()))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.probe.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Clean,
    Backdoored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub model_id: String,
    pub decision: Decision,
    /// Inferred target class (targeted mode only).
    pub target: Option<usize>,
    /// Peak indicator value in targeted mode, cosine similarity in sim mode.
    pub score: f64,
    pub indicator: IndicatorVector,
    pub elapsed: Duration,
}

#[derive(Serialize)]
struct IndicatorDoc<'a> {
    kind: IndicatorKind,
    values: &'a [f64],
}

#[derive(Serialize)]
struct VerdictDoc<'a> {
    model_id: &'a str,
    decision: Decision,
    target: Option<usize>,
    score: f64,
    indicator: IndicatorDoc<'a>,
    elapsed_ms: f64,
}

impl Verdict {
    pub fn is_backdoored(&self) -> bool {
        self.decision == Decision::Backdoored
    }

    pub fn elapsed_ms(&self) -> f64 {
        self.elapsed.as_secs_f64() * 1e3
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(VerdictDoc {
            model_id: &self.model_id,
            decision: self.decision,
            target: self.target,
            score: self.score,
            indicator: IndicatorDoc {
                kind: self.indicator.kind,
                values: &self.indicator.values,
            },
            elapsed_ms: self.elapsed_ms(),
        })
        .expect("verdict is serializable")
    }

    pub fn to_json(&self) -> String {
        let mut s = json::to_canonical_string(&self.to_json_value()).expect("verdict is serializable");
        s.push('\n');
        s
    }
}

/// Probes `h` with the configured distribution and computes the indicator.
pub fn probe_indicator(h: &HeadSpec, cfg: &DetectorConfig) -> Result<IndicatorVector, DetectError> {
    let probe_cfg = cfg.probe.resolve(h)?;
    let batch = probe::generate_probes(&probe_cfg, h.input_shape());
    let resp = eval::forward(h, &batch)?;
    Ok(indicators::compute(cfg.indicator_for(h), &resp))
}

/// Targeted detection: flags `h` when the peak indicator value exceeds `tau`
/// and names the peak class as the backdoor target.
pub fn detect(h: &HeadSpec, cfg: &DetectorConfig) -> Result<Verdict, DetectError> {
    if cfg.mode != Mode::Targeted {
        return Err(DetectError::ConfigInvalid("detect requires targeted mode".into()));
    }
    cfg.validate()?;
    let tau = cfg.tau.expect("validated");
    let start = Instant::now();
    let indicator = probe_indicator(h, cfg)?;
    let (target, score) = indicator.peak();
    let decision = if score > tau {
        Decision::Backdoored
    } else {
        Decision::Clean
    };
    let elapsed = start.elapsed();
    Ok(Verdict {
        model_id: h.model_id().to_string(),
        decision,
        target: Some(target),
        score,
        indicator,
        elapsed,
    })
}

/// Similarity detection against the mean clean indicator profile.
pub fn sim_detect(h: &HeadSpec, cfg: &DetectorConfig) -> Result<Verdict, DetectError> {
    if cfg.mode != Mode::Sim {
        return Err(DetectError::ConfigInvalid("sim_detect requires sim mode".into()));
    }
    cfg.validate()?;
    let clean_mean = cfg.clean_mean.as_deref().expect("validated");
    let tau_sim = cfg.tau_sim.expect("validated");
    if clean_mean.len() != h.num_classes() {
        return Err(DetectError::ConfigInvalid(format!(
            "clean_mean has {} entries, head has {} classes",
            clean_mean.len(),
            h.num_classes()
        )));
    }
    let start = Instant::now();
    let indicator = probe_indicator(h, cfg)?;
    let score = cosine(&indicator.values, clean_mean)?;
    let flagged = match cfg.sim_direction {
        SimDirection::FlagAbove => score > tau_sim,
        SimDirection::FlagBelow => score < tau_sim,
    };
    let elapsed = start.elapsed();
    Ok(Verdict {
        model_id: h.model_id().to_string(),
        decision: if flagged {
            Decision::Backdoored
        } else {
            Decision::Clean
        },
        target: None,
        score,
        indicator,
        elapsed,
    })
}

/// Dispatches on `cfg.mode`.
pub fn run(h: &HeadSpec, cfg: &DetectorConfig) -> Result<Verdict, DetectError> {
    match cfg.mode {
        Mode::Targeted => detect(h, cfg),
        Mode::Sim => sim_detect(h, cfg),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<a, b> / (|a| |b|)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, DetectError> {
    if a.len() != b.len() {
        return Err(DetectError::ConfigInvalid(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == 0.0 || nb == 0.0 {
        return Err(DetectError::ZeroVector);
    }
    let prod = na * nb;
    let denom = if prod.is_finite() && prod > 0.0 {
        prod.sqrt()
    } else {
        na.sqrt() * nb.sqrt()
    };
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Elementwise mean of clean-model indicator vectors.
pub fn mean_clean_profile(vectors: &[IndicatorVector]) -> Result<Vec<f64>, CalibrationError> {
    let first = vectors.first().ok_or(CalibrationError::EmptyConfigSet)?;
    if vectors
        .iter()
        .any(|v| v.kind != first.kind || v.values.len() != first.values.len())
    {
        return Err(CalibrationError::KindMismatch);
    }
    let n = vectors.len() as f64;
    Ok((0..first.values.len())
        .map(|i| vectors.iter().map(|v| v.values[i]).sum::<f64>() / n)
        .collect())
}

/// Threshold chosen by [`calibrate`] and its operating point on the calibration set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub tau: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// Width of the empty score gap containing `tau`; infinite at the sentinels.
    pub margin: f64,
}

fn count_above(sorted: &[f64], tau: f64) -> usize {
    sorted.len() - sorted.partition_point(|&x| x <= tau)
}

fn sentinel_gap(x: f64) -> f64 {
    x.abs().max(1.0)
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m.is_finite() {
        m
    } else {
        a / 2.0 + b / 2.0
    }
}

/// Picks `tau` maximizing TPR subject to `FPR <= fpr_cap`.
///
/// Candidates are the midpoints between adjacent distinct pooled scores plus
/// one sentinel below the minimum and one above the maximum. TPR ties go to
/// the widest margin, remaining ties to the largest threshold. A score flags
/// when it is strictly greater than `tau`.
///
/// The margin of a candidate is the gap between the nearest pooled scores on
/// either side of it. With separated classes this is `min(backdoor) -
/// max(clean)`. Measuring only backdoor scores above and clean scores below
/// would, at a fixed TPR, always prefer the lowest threshold the FPR cap
/// allows.
pub fn calibrate(
    scores_clean: &[f64],
    scores_backdoor: &[f64],
    fpr_cap: f64,
) -> Result<Calibration, CalibrationError> {
    if scores_clean.is_empty() || scores_backdoor.is_empty() {
        return Err(CalibrationError::EmptyConfigSet);
    }
    if !(0.0..1.0).contains(&fpr_cap) {
        return Err(CalibrationError::InvalidCap(fpr_cap));
    }
    if scores_clean
        .iter()
        .chain(scores_backdoor)
        .any(|s| !s.is_finite())
    {
        return Err(CalibrationError::NonFiniteScore);
    }
    let mut clean = scores_clean.to_vec();
    let mut bd = scores_backdoor.to_vec();
    clean.sort_by(f64::total_cmp);
    bd.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = clean.iter().chain(&bd).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup_by(|a, b| a == b);

    let lo = pooled[0];
    let hi = pooled[pooled.len() - 1];
    let mut candidates = Vec::with_capacity(pooled.len() + 1);
    candidates.push(lo - sentinel_gap(lo));
    candidates.extend(pooled.windows(2).map(|w| midpoint(w[0], w[1])));
    candidates.push(hi + sentinel_gap(hi));

    let nc = clean.len() as f64;
    let nb = bd.len() as f64;
    let mut best: Option<(usize, Calibration)> = None;
    for tau in candidates {
        let fp = count_above(&clean, tau);
        let fpr = fp as f64 / nc;
        if fpr > fpr_cap {
            continue;
        }
        let tp = count_above(&bd, tau);
        let split = pooled.partition_point(|&x| x <= tau);
        let upper = pooled.get(split).copied().unwrap_or(f64::INFINITY);
        let lower = if split > 0 {
            pooled[split - 1]
        } else {
            f64::NEG_INFINITY
        };
        let cand = Calibration {
            tau,
            tpr: tp as f64 / nb,
            fpr,
            margin: upper - lower,
        };
        let better = match &best {
            None => true,
            Some((best_tp, b)) => match tp.cmp(best_tp) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => match cand.margin.partial_cmp(&b.margin) {
                    Some(Ordering::Greater) => true,
                    Some(Ordering::Less) => false,
                    _ => cand.tau > b.tau,
                },
            },
        };
        if better {
            best = Some((tp, cand));
        }
    }
    // the upper sentinel always has FPR 0
    Ok(best.expect("upper sentinel is always feasible").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::headspec::{Activation, AffineLayer, InputShape, LatentRangeInfo};
    use ndarray::{Array1, Array2};

    #[test]
    fn separated_scores_pick_midpoint() {
        let c = calibrate(&[0.2, 0.3], &[0.6, 0.7], 0.05).unwrap();
        assert!((c.tau - 0.45).abs() < 1e-15);
        assert_eq!((c.tpr, c.fpr), (1.0, 0.0));
    }

    #[test]
    fn identical_singletons_go_above() {
        let c = calibrate(&[0.5], &[0.5], 0.05).unwrap();
        assert!(c.tau > 0.5);
        assert_eq!((c.tpr, c.fpr), (0.0, 0.0));
    }

    #[test]
    fn overlapping_scores_with_zero_cap() {
        let clean = [0.1, 0.4, 0.5, 0.9];
        let bd = [0.2, 0.45, 0.95, 1.2];
        let c = calibrate(&clean, &bd, 0.0).unwrap();
        assert!(c.tau > 0.9);
        assert_eq!(c.fpr, 0.0);
        assert_eq!(c.tpr, 0.5);
        assert!((c.tau - 0.925).abs() < 1e-15);
    }

    #[test]
    fn tpr_ties_prefer_the_separating_gap() {
        let clean: Vec<f64> = (0..20).map(|i| 0.1 + 0.001 * i as f64).collect();
        let c = calibrate(&clean, &[0.5, 0.6], 0.05).unwrap();
        assert_eq!((c.tpr, c.fpr), (1.0, 0.0));
        assert!((c.tau - (0.119 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_errors() {
        assert_eq!(calibrate(&[], &[1.0], 0.05), Err(CalibrationError::EmptyConfigSet));
        assert_eq!(calibrate(&[1.0], &[], 0.05), Err(CalibrationError::EmptyConfigSet));
        assert_eq!(
            calibrate(&[f64::NAN], &[1.0], 0.05),
            Err(CalibrationError::NonFiniteScore)
        );
    }

    #[test]
    fn cosine_cases() {
        let r = [0.3, 0.1, 0.6];
        assert_eq!(cosine(&r, &r).unwrap(), 1.0);
        let mut e = vec![0.0; 10];
        e[4] = 1.0;
        let uniform = vec![0.1; 10];
        assert!((cosine(&e, &uniform).unwrap() - 1.0 / 10f64.sqrt()).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(DetectError::ZeroVector)));
    }

    #[test]
    fn clean_profile() {
        let v = |values: Vec<f64>| IndicatorVector {
            kind: IndicatorKind::Mean,
            values,
            probe_count: 1,
        };
        assert_eq!(mean_clean_profile(&[v(vec![0.2, 0.8])]).unwrap(), vec![0.2, 0.8]);
        assert_eq!(
            mean_clean_profile(&[v(vec![1.0, 0.0, 0.0]), v(vec![0.0, 1.0, 0.0])]).unwrap(),
            vec![0.5, 0.5, 0.0]
        );
        assert_eq!(mean_clean_profile(&[]), Err(CalibrationError::EmptyConfigSet));
        let mut other = v(vec![0.5, 0.5]);
        other.kind = IndicatorKind::L2;
        assert_eq!(
            mean_clean_profile(&[v(vec![0.5, 0.5]), other]),
            Err(CalibrationError::KindMismatch)
        );
    }

    fn zero_head(k: usize, d: usize) -> HeadSpec {
        HeadSpec::new(
            "zero",
            InputShape::Flat { d },
            k,
            vec![AffineLayer::new(Array2::zeros((k, d)), Array1::zeros(k), Activation::Identity)],
            LatentRangeInfo::new(0.0, 1.0, 32).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_head_is_clean() {
        let h = zero_head(10, 6);
        let cfg = DetectorConfig::targeted(IndicatorKind::Mean, 0.1 + 1e-9, ProbeSettings::default());
        let v = detect(&h, &cfg).unwrap();
        assert_eq!(v.decision, Decision::Clean);
        assert!(v.indicator.values.iter().all(|&x| (x - 0.1).abs() < 1e-12));
        assert_eq!(v.target, Some(0));
    }

    #[test]
    fn boundary_equality_is_clean() {
        let h = zero_head(4, 3);
        let probe = ProbeSettings {
            count: 8,
            ..ProbeSettings::default()
        };
        let cfg = DetectorConfig::targeted(IndicatorKind::Ratio, 1.0, probe);
        // all labels tie to class 0, so ratio peak is exactly 1.0
        let v = detect(&h, &cfg).unwrap();
        assert_eq!(v.score, 1.0);
        assert_eq!(v.decision, Decision::Clean);
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::from_json(br#"{"indicator":"mean"}"#).is_err());
        let cfg = DetectorConfig::from_json(br#"{"indicator":"l2","tau":0.3}"#).unwrap();
        assert_eq!(cfg.probe.count, DEFAULT_PROBE_COUNT);
        assert_eq!(cfg.fpr_cap, 0.05);
        assert!(DetectorConfig::from_json(br#"{"mode":"sim","tau_sim":0.9}"#).is_err());
        assert!(DetectorConfig::from_json(br#"{"tau":0.3,"fpr_cap":1.5}"#).is_err());
        let sim = DetectorConfig::from_json(
            br#"{"mode":"sim","clean_mean":[0.5,0.5],"tau_sim":0.9,"sim_direction":"below"}"#,
        )
        .unwrap();
        assert_eq!(sim.sim_direction, SimDirection::FlagBelow);
        let back = DetectorConfig::from_json(sim.to_json().as_bytes()).unwrap();
        assert_eq!(back, sim);
    }

    #[test]
    fn gaussian_needs_sigma() {
        let h = zero_head(3, 2);
        let mut cfg = DetectorConfig::targeted(IndicatorKind::Mean, 0.5, ProbeSettings::default());
        cfg.probe.dist = ProbeDist::Gaussian;
        assert!(matches!(detect(&h, &cfg), Err(DetectError::ConfigInvalid(_))));
        cfg.probe.sigma = Some(1.0);
        assert!(detect(&h, &cfg).is_ok());
    }

    #[test]
    fn sim_mode_checks() {
        let h = zero_head(4, 3);
        let cfg = DetectorConfig {
            mode: Mode::Sim,
            clean_mean: Some(vec![0.25; 4]),
            tau_sim: Some(0.99),
            ..DetectorConfig::default()
        };
        let v = sim_detect(&h, &cfg).unwrap();
        assert!((v.score - 1.0).abs() < 1e-12);
        assert_eq!(v.target, None);
        assert_eq!(v.decision, Decision::Backdoored);
        let below = DetectorConfig {
            sim_direction: SimDirection::FlagBelow,
            ..cfg.clone()
        };
        assert_eq!(sim_detect(&h, &below).unwrap().decision, Decision::Clean);
        let wrong_len = DetectorConfig {
            clean_mean: Some(vec![0.5; 2]),
            ..cfg.clone()
        };
        assert!(sim_detect(&h, &wrong_len).is_err());
        assert!(detect(&h, &cfg).is_err());
    }

    #[test]
    fn verdict_json_shape() {
        let v = Verdict {
            model_id: "m1".into(),
            decision: Decision::Backdoored,
            target: Some(4),
            score: 0.62,
            indicator: IndicatorVector {
                kind: IndicatorKind::Mean,
                values: vec![0.1, 0.9],
                probe_count: 2,
            },
            elapsed: Duration::from_micros(3100),
        };
        let value: serde_json::Value = serde_json::from_str(&v.to_json()).unwrap();
        assert_eq!(value["decision"], "backdoored");
        assert_eq!(value["target"], 4);
        assert_eq!(value["indicator"]["kind"], "mean");
        assert_eq!(value["score"].as_f64(), Some(0.62));
        assert!((value["elapsed_ms"].as_f64().unwrap() - 3.1).abs() < 1e-9);
    }
}
