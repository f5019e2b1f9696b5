//! Synthetic clean and backdoored heads with known ground truth.
//!
//! Clean heads are single affine layers `w_i = s * mu_i`, `b = 0` over unit,
//! zero-sum, near-orthogonal class prototypes `mu_i`. Backdoored heads edit
//! the target row so that every poisoned latent `h + delta` is classified as
//! the target with logit margin at least `margin`, and ship a certificate
//! computed by running the edited head on its own fixtures.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{self, EvalError};
use crate::headspec::{
    estimate_latent_range, Activation, AffineLayer, HeadSpec, HeadSpecError, InputShape,
};
use crate::json;
use crate::rng::{self, ProbeRng};

/// Largest allowed `|<mu_i, mu_j>|` between distinct prototypes.
pub const PROTOTYPE_COHERENCE: f64 = 0.2;
const MAX_ATTEMPTS: u64 = 64;
const MIN_FIXTURE_ACCURACY: f64 = 0.99;
const MIN_BACKDOOR_CLEAN_ACCURACY: f64 = 0.98;
/// Multiplier applied to solved magnitudes so the margin holds with room to spare.
const SOLVE_SLACK: f64 = 1.05;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("cannot place {classes} near-orthogonal prototypes in dimension {dim}")]
    DimensionTooSmall { dim: usize, classes: usize },
    #[error("no valid clean head after {0} attempts")]
    RetriesExhausted(u64),
    #[error("margin unsatisfiable: {0}")]
    MarginUnsatisfiable(String),
    #[error("clean accuracy {0} fell below the required minimum")]
    BenignAccuracyLoss(f64),
    #[error("invalid synth parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    HeadSpec(#[from] HeadSpecError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanParams {
    pub dim: usize,
    pub classes: usize,
    pub prototype_scale: f64,
    pub noise_scale: f64,
    pub fixtures_per_class: usize,
    pub seed: u64,
}

impl CleanParams {
    pub fn new(dim: usize, classes: usize, seed: u64) -> Self {
        Self {
            dim,
            classes,
            prototype_scale: 4.0,
            noise_scale: 0.1,
            fixtures_per_class: 20,
            seed,
        }
    }
}

/// A clean head together with the latents it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanHead {
    pub head: HeadSpec,
    /// `K x D`, one unit prototype per row.
    pub prototypes: Array2<f64>,
    /// `K*M x D` noisy copies of the prototypes, class-major.
    pub fixtures: Array2<f64>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

fn normal_vec(rng: &mut ProbeRng, n: usize, scale: f64) -> Array1<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn sample_prototypes(rng: &mut ProbeRng, dim: usize, classes: usize) -> Option<Array2<f64>> {
    let mut p = Array2::zeros((classes, dim));
    for mut row in p.outer_iter_mut() {
        let mut v = normal_vec(rng, dim, 1.0);
        // zero-sum rows respond identically to any constant input
        if classes < dim {
            let mean = v.mean().unwrap_or(0.0);
            v -= mean;
        }
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            return None;
        }
        row.assign(&(v / norm));
    }
    for i in 0..classes {
        for j in 0..i {
            if p.row(i).dot(&p.row(j)).abs() > PROTOTYPE_COHERENCE {
                return None;
            }
        }
    }
    Some(p)
}

pub fn accuracy(head: &HeadSpec, latents: &Array2<f64>, labels: &[usize]) -> Result<f64, SynthError> {
    let r = eval::forward_latents(head, latents.view())?;
    let hits = r.labels.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn gen_clean_head(p: &CleanParams) -> Result<CleanHead, SynthError> {
    if p.classes == 0 || p.dim == 0 {
        return Err(SynthError::InvalidParams("dim and classes must be positive".into()));
    }
    if p.classes > p.dim {
        return Err(SynthError::DimensionTooSmall {
            dim: p.dim,
            classes: p.classes,
        });
    }
    if p.fixtures_per_class == 0 || !(p.prototype_scale > 0.0) || !(p.noise_scale >= 0.0) {
        return Err(SynthError::InvalidParams(
            "need fixtures_per_class >= 1, prototype_scale > 0, noise_scale >= 0".into(),
        ));
    }
    let (k, d, m) = (p.classes, p.dim, p.fixtures_per_class);
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::seeded(rng::sub_seed(p.seed, attempt));
        let Some(protos) = sample_prototypes(&mut rng, d, k) else {
            continue;
        };
        let mut fixtures = Array2::zeros((k * m, d));
        let mut labels = Vec::with_capacity(k * m);
        for (i, mut row) in fixtures.outer_iter_mut().enumerate() {
            let class = i / m;
            row.assign(&(&protos.row(class) + &normal_vec(&mut rng, d, p.noise_scale)));
            labels.push(class);
        }
        let layer = AffineLayer::new(
            &protos * p.prototype_scale,
            Array1::zeros(k),
            Activation::Identity,
        );
        let range = estimate_latent_range(fixtures.view())?;
        let head = HeadSpec::new(
            format!("clean-{:016x}", p.seed),
            InputShape::Flat { d },
            k,
            vec![layer],
            range,
        )?;
        if accuracy(&head, &fixtures, &labels)? >= MIN_FIXTURE_ACCURACY {
            return Ok(CleanHead {
                head,
                prototypes: protos,
                fixtures,
                labels,
                seed: p.seed,
            });
        }
    }
    Err(SynthError::RetriesExhausted(MAX_ATTEMPTS))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "inflate")]
    WeightInflation,
    #[serde(rename = "align")]
    DeltaAlignment,
    #[serde(rename = "bias")]
    BiasShift,
    #[serde(rename = "mixed")]
    Mixed,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::WeightInflation,
        Mechanism::DeltaAlignment,
        Mechanism::BiasShift,
        Mechanism::Mixed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::WeightInflation => "inflate",
            Mechanism::DeltaAlignment => "align",
            Mechanism::BiasShift => "bias",
            Mechanism::Mixed => "mixed",
        }
    }

    fn uses_inflation(&self) -> bool {
        matches!(self, Mechanism::WeightInflation | Mechanism::Mixed)
    }

    fn uses_bias(&self) -> bool {
        matches!(self, Mechanism::BiasShift | Mechanism::Mixed)
    }

    fn uses_alignment(&self) -> bool {
        matches!(self, Mechanism::DeltaAlignment | Mechanism::Mixed)
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mechanism `{s}` (inflate, align, bias, mixed)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub target: usize,
    pub mechanism: Mechanism,
    /// `None` solves for the smallest norm meeting the margin (inflation and
    /// bias mechanisms) or uses 1.0 (alignment mechanisms).
    pub delta_norm: Option<f64>,
    pub delta_orthogonal: bool,
    pub inflate_w: f64,
    pub bias_shift: f64,
    pub margin: f64,
    pub seed: u64,
}

impl SynthParams {
    /// Defaults for `mechanism`. Alignment mechanisms use a trigger orthogonal
    /// to every prototype; inflation and bias need a trigger with a target
    /// component, since `w_t` scaled or shifted alone cannot move `(w_t - w_j) . delta`.
    pub fn new(mechanism: Mechanism, target: usize, seed: u64) -> Self {
        Self {
            target,
            mechanism,
            delta_norm: None,
            delta_orthogonal: mechanism.uses_alignment(),
            inflate_w: if mechanism.uses_inflation() { 2.0 } else { 1.0 },
            bias_shift: match mechanism {
                Mechanism::BiasShift => 2.0,
                Mechanism::Mixed => 0.5,
                _ => 0.0,
            },
            margin: 1.0,
            seed,
        }
    }

    fn validate(&self, classes: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.target >= classes {
            return bad(format!("target {} out of range for {classes} classes", self.target));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive".into());
        }
        if !(self.inflate_w > 0.0 && self.inflate_w.is_finite()) {
            return bad("inflate_w must be positive".into());
        }
        if !self.bias_shift.is_finite() {
            return bad("bias_shift must be finite".into());
        }
        if let Some(n) = self.delta_norm {
            if !(n > 0.0 && n.is_finite()) {
                return bad("delta_norm must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthCertificate {
    pub clean_accuracy: f64,
    pub attack_success: f64,
    pub min_poison_margin: f64,
}

/// A head edit applied to the final layer; the identity edit is
/// `inflate_w = 1`, `bias_shift = 0`, `align = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEdit {
    pub target: usize,
    pub inflate_w: f64,
    pub bias_shift: f64,
    pub align: f64,
    pub direction: Array1<f64>,
}

/// Applies `w_t <- inflate_w * w_t + align * direction`, `b_t <- b_t + bias_shift`.
pub fn apply_mechanism(head: &HeadSpec, edit: &HeadEdit) -> Result<HeadSpec, SynthError> {
    let mut layers = head.layers().to_vec();
    let last = layers.last_mut().expect("validated heads have a layer");
    if edit.target >= last.out_width() || edit.direction.len() != last.in_width() {
        return Err(SynthError::InvalidParams("edit does not fit the head".into()));
    }
    {
        let mut row = last.weight.row_mut(edit.target);
        if edit.inflate_w != 1.0 {
            row *= edit.inflate_w;
        }
        if edit.align != 0.0 {
            row.scaled_add(edit.align, &edit.direction);
        }
    }
    last.bias[edit.target] += edit.bias_shift;
    Ok(head.with_layers(layers)?)
}

fn orthonormal_basis(protos: &Array2<f64>) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(protos.nrows());
    for row in protos.outer_iter() {
        let mut v = row.to_owned();
        project_out(&mut v, &basis);
        project_out(&mut v, &basis);
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            basis.push(v / n);
        }
    }
    basis
}

fn project_out(v: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for q in basis {
        let c = q.dot(v);
        v.scaled_add(-c, q);
    }
}

/// Unit trigger direction. The orthogonal component is a sparse non-negative
/// pattern with the prototype span removed; because prototypes are zero-sum,
/// the removal keeps its coordinate sum positive.
pub fn trigger_direction(
    protos: &Array2<f64>,
    target: usize,
    orthogonal: bool,
    seed: u64,
) -> Result<Array1<f64>, SynthError> {
    let dim = protos.ncols();
    let basis = orthonormal_basis(protos);
    let mut rng = rng::seeded(seed);
    for _ in 0..MAX_ATTEMPTS {
        let support = (dim / 8).max(1);
        let mut v = Array1::zeros(dim);
        for i in index::sample(&mut rng, dim, support) {
            v[i] = rng.sample::<f64, _>(StandardNormal).abs();
        }
        project_out(&mut v, &basis);
        project_out(&mut v, &basis);
        let n = v.dot(&v).sqrt();
        if n <= 1e-8 {
            continue;
        }
        v /= n;
        if orthogonal {
            return Ok(v);
        }
        let mut d = &protos.row(target) + &v;
        let n = d.dot(&d).sqrt();
        d /= n;
        return Ok(d);
    }
    Err(SynthError::DimensionTooSmall {
        dim,
        classes: protos.nrows(),
    })
}

fn target_margins(logits: &Array2<f64>, target: usize) -> Vec<f64> {
    logits
        .outer_iter()
        .map(|row| {
            let rival = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != target)
                .map(|(_, &z)| z)
                .fold(f64::NEG_INFINITY, f64::max);
            row[target] - rival
        })
        .collect()
}

fn poison(fixtures: &Array2<f64>, delta: ArrayView1<'_, f64>) -> Array2<f64> {
    fixtures + &delta.insert_axis(Axis(0))
}

/// Runs `head` on the clean fixtures and on `fixtures + delta`.
pub fn certify(
    head: &HeadSpec,
    clean: &CleanHead,
    delta: ArrayView1<'_, f64>,
    target: usize,
) -> Result<SynthCertificate, SynthError> {
    let clean_accuracy = accuracy(head, &clean.fixtures, &clean.labels)?;
    let poisoned = poison(&clean.fixtures, delta);
    let r = eval::forward_latents(head, poisoned.view())?;
    let hits = r.labels.iter().filter(|&&l| l == target).count();
    let margins = target_margins(&r.logits, target);
    Ok(SynthCertificate {
        clean_accuracy,
        attack_success: hits as f64 / r.labels.len() as f64,
        min_poison_margin: margins.into_iter().fold(f64::INFINITY, f64::min),
    })
}

/// Smallest `n` with `A + n*B >= margin` for every poisoned latent and rival
/// class, where `A` is the logit gap at `h` and `B = (w_t - w_j) . d` on a
/// single-layer head.
fn solve_delta_norm(head: &HeadSpec, clean: &CleanHead, d: &Array1<f64>, t: usize, margin: f64) -> Result<f64, SynthError> {
    let layer = &head.layers()[0];
    let z = eval::forward_latents(head, clean.fixtures.view())?.logits;
    let wd = layer.weight.dot(d);
    let mut need: f64 = 0.0;
    for row in z.outer_iter() {
        for j in (0..row.len()).filter(|&j| j != t) {
            let a = row[t] - row[j];
            let b = wd[t] - wd[j];
            if a >= margin {
                continue;
            }
            if b <= 0.0 {
                return Err(SynthError::MarginUnsatisfiable(format!(
                    "trigger does not favour target {t} over class {j}"
                )));
            }
            need = need.max((margin - a) / b);
        }
    }
    Ok(need.max(1e-3) * SOLVE_SLACK)
}

/// Smallest `c >= 0` so that adding `c * d` to `w_t` gives every poisoned
/// latent a margin of at least `margin`.
fn solve_alignment(head: &HeadSpec, poisoned: &Array2<f64>, d: &Array1<f64>, t: usize, margin: f64) -> Result<f64, SynthError> {
    let z = eval::forward_latents(head, poisoned.view())?.logits;
    let gain = poisoned.dot(d);
    let mut need: f64 = 0.0;
    for (row, &b) in z.outer_iter().zip(gain.iter()) {
        let worst = target_margins(&row.to_owned().insert_axis(Axis(0)), t)[0];
        if worst >= margin {
            continue;
        }
        if b <= 0.0 {
            return Err(SynthError::MarginUnsatisfiable(
                "poisoned latent has no positive projection on the trigger".into(),
            ));
        }
        need = need.max((margin - worst) / b);
    }
    Ok(need * SOLVE_SLACK)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackdooredHead {
    pub head: HeadSpec,
    pub certificate: SynthCertificate,
    /// The trigger `delta` itself (norm = delta_norm).
    pub delta: Array1<f64>,
    pub edit: HeadEdit,
}

pub fn gen_backdoored_head(clean: &CleanHead, p: &SynthParams) -> Result<BackdooredHead, SynthError> {
    p.validate(clean.head.num_classes())?;
    if clean.head.layers().len() != 1 {
        return Err(SynthError::InvalidParams("expected a single-layer clean head".into()));
    }
    let t = p.target;
    let d = trigger_direction(&clean.prototypes, t, p.delta_orthogonal, rng::sub_seed(p.seed, 0xde17a))?;
    let mut edit = HeadEdit {
        target: t,
        inflate_w: if p.mechanism.uses_inflation() { p.inflate_w } else { 1.0 },
        bias_shift: if p.mechanism.uses_bias() { p.bias_shift } else { 0.0 },
        align: 0.0,
        direction: d.clone(),
    };
    let staged = apply_mechanism(&clean.head, &edit)?;
    let norm = if p.mechanism.uses_alignment() {
        p.delta_norm.unwrap_or(1.0)
    } else {
        match p.delta_norm {
            Some(n) => n,
            None => solve_delta_norm(&staged, clean, &d, t, p.margin)?,
        }
    };
    let delta = &d * norm;
    if p.mechanism.uses_alignment() {
        let poisoned = poison(&clean.fixtures, delta.view());
        edit.align = solve_alignment(&staged, &poisoned, &d, t, p.margin)?;
    }
    let head = apply_mechanism(&clean.head, &edit)?;
    let certificate = certify(&head, clean, delta.view(), t)?;
    if certificate.attack_success < 1.0 || certificate.min_poison_margin < p.margin {
        return Err(SynthError::MarginUnsatisfiable(format!(
            "attack success {}, min margin {} < {}",
            certificate.attack_success, certificate.min_poison_margin, p.margin
        )));
    }
    if certificate.clean_accuracy < MIN_BACKDOOR_CLEAN_ACCURACY {
        return Err(SynthError::BenignAccuracyLoss(certificate.clean_accuracy));
    }
    Ok(BackdooredHead {
        head,
        certificate,
        delta,
        edit,
    })
}

/// Pulls every final-layer row toward the row mean: `w_i <- (1-beta) w_i + beta w_bar`,
/// `b_i <- (1-gamma) b_i + gamma b_bar`.
pub fn gen_adaptive_head(head: &HeadSpec, beta: f64, gamma: f64) -> Result<HeadSpec, SynthError> {
    if !(0.0..=1.0).contains(&beta) || !(0.0..=1.0).contains(&gamma) {
        return Err(SynthError::InvalidParams("beta and gamma must lie in [0, 1]".into()));
    }
    let mut layers = head.layers().to_vec();
    let last = layers.last_mut().expect("validated heads have a layer");
    let w_bar = last.weight.mean_axis(Axis(0)).expect("at least one class");
    let b_bar = last.bias.mean().expect("at least one class");
    for mut row in last.weight.outer_iter_mut() {
        row.zip_mut_with(&w_bar, |w, &m| *w = (1.0 - beta) * *w + beta * m);
    }
    last.bias.mapv_inplace(|b| (1.0 - gamma) * b + gamma * b_bar);
    Ok(head.with_layers(layers)?)
}

/// A head whose biases follow `b_i += amplitude * cos(2 pi i / K + phase)` with a
/// random phase: responses are skewed over many classes rather than
/// concentrated on one target.
pub fn gen_all_to_all_head(clean: &CleanHead, amplitude: f64, seed: u64) -> Result<HeadSpec, SynthError> {
    if !amplitude.is_finite() {
        return Err(SynthError::InvalidParams("amplitude must be finite".into()));
    }
    let mut rng = rng::seeded(seed);
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let mut layers = clean.head.layers().to_vec();
    let last = layers.last_mut().expect("validated heads have a layer");
    let k = last.out_width() as f64;
    for (i, b) in last.bias.iter_mut().enumerate() {
        *b += amplitude * (std::f64::consts::TAU * i as f64 / k + phase).cos();
    }
    Ok(clean.head.with_layers(layers)?)
}

/// Rewrites a single-layer head `W x + b` as `[W, -W] relu([I; -I] x) + b`,
/// the same function computed by two layers.
pub fn to_two_layer(head: &HeadSpec) -> Result<HeadSpec, SynthError> {
    let [layer] = head.layers() else {
        return Err(SynthError::InvalidParams("expected a single-layer head".into()));
    };
    let d = layer.in_width();
    let k = layer.out_width();
    let mut w1 = Array2::zeros((2 * d, d));
    for i in 0..d {
        w1[[i, i]] = 1.0;
        w1[[d + i, i]] = -1.0;
    }
    let mut w2 = Array2::zeros((k, 2 * d));
    w2.slice_mut(s![.., ..d]).assign(&layer.weight);
    w2.slice_mut(s![.., d..]).assign(&layer.weight.mapv(|v| -v));
    Ok(head.with_layers(vec![
        AffineLayer::new(w1, Array1::zeros(2 * d), Activation::Relu),
        AffineLayer::new(w2, layer.bias.clone(), Activation::Identity),
    ])?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkParams {
    pub clean: usize,
    pub backdoor: usize,
    pub dim: usize,
    pub classes: usize,
    /// Cycled over the backdoored models.
    pub mechanisms: Vec<Mechanism>,
    pub inflate: (f64, f64),
    pub bias_shift: (f64, f64),
    pub margin: f64,
    /// Every n-th model is rewritten in two-layer form.
    pub two_layer_every: Option<usize>,
    pub seed: u64,
}

impl BenchmarkParams {
    pub fn new(clean: usize, backdoor: usize, seed: u64) -> Self {
        Self {
            clean,
            backdoor,
            dim: 512,
            classes: 10,
            mechanisms: Mechanism::ALL.to_vec(),
            inflate: (1.8, 3.0),
            bias_shift: (2.0, 2.5),
            margin: 1.0,
            two_layer_every: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthLabel {
    Clean,
    Backdoor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: TruthLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<Mechanism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflate_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
}

impl ManifestEntry {
    pub fn model_id(&self) -> &str {
        self.file.strip_suffix(".json").unwrap_or(&self.file)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, SynthError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| SynthError::InvalidParams(format!("manifest: {e}")))
}

pub fn manifest_json(entries: &[ManifestEntry]) -> String {
    let mut s = json::to_canonical_string(&entries).expect("manifest is serializable");
    s.push('\n');
    s
}

fn lerp((lo, hi): (f64, f64), u: f64) -> f64 {
    lo + (hi - lo) * u
}

/// Builds one benchmark model; `slot` is its position in the shuffled file list.
fn bench_model(p: &BenchmarkParams, slot: usize, backdoor_rank: Option<usize>) -> Result<(HeadSpec, ManifestEntry), SynthError> {
    let mut last_err = None;
    // a draw whose edit costs too much clean accuracy is redrawn
    for attempt in 0..MAX_ATTEMPTS {
        let model_seed = rng::sub_seed(rng::sub_seed(p.seed, slot as u64), attempt);
        match bench_model_once(p, slot, backdoor_rank, model_seed) {
            Err(e @ (SynthError::BenignAccuracyLoss(_) | SynthError::MarginUnsatisfiable(_))) => {
                last_err = Some(e)
            }
            other => return other,
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn bench_model_once(
    p: &BenchmarkParams,
    slot: usize,
    backdoor_rank: Option<usize>,
    model_seed: u64,
) -> Result<(HeadSpec, ManifestEntry), SynthError> {
    let id = format!("m{:04}", slot + 1);
    let clean = gen_clean_head(&CleanParams::new(p.dim, p.classes, model_seed))?;
    let mut entry = ManifestEntry {
        file: format!("{id}.json"),
        label: TruthLabel::Clean,
        target: None,
        mechanism: None,
        inflate_w: None,
        bias_shift: None,
        delta_norm: None,
        layers: None,
    };
    let mut head = match backdoor_rank {
        None => clean.head.clone(),
        Some(rank) => {
            let mechanism = p.mechanisms[rank % p.mechanisms.len()];
            let target = rank % p.classes;
            let mut rng = rng::seeded(rng::sub_seed(model_seed, 0xbd));
            let mut sp = SynthParams::new(mechanism, target, model_seed);
            sp.margin = p.margin;
            let u: f64 = rng.random();
            if mechanism.uses_inflation() {
                sp.inflate_w = lerp(p.inflate, u);
            }
            if mechanism == Mechanism::BiasShift {
                sp.bias_shift = lerp(p.bias_shift, u);
            }
            let bd = gen_backdoored_head(&clean, &sp)?;
            entry.label = TruthLabel::Backdoor;
            entry.target = Some(target);
            entry.mechanism = Some(mechanism);
            entry.inflate_w = mechanism.uses_inflation().then_some(sp.inflate_w);
            entry.bias_shift = mechanism.uses_bias().then_some(sp.bias_shift);
            entry.delta_norm = Some(bd.delta.dot(&bd.delta).sqrt());
            bd.head
        }
    };
    if p.two_layer_every.is_some_and(|n| n > 0 && slot.is_multiple_of(n)) {
        head = to_two_layer(&head)?;
        entry.layers = Some(2);
    }
    Ok((head.with_model_id(id), entry))
}

/// Generates the benchmark in memory. Clean and backdoored models are
/// interleaved by a seeded shuffle so file names carry no label.
pub fn gen_benchmark_heads(p: &BenchmarkParams) -> Result<Vec<(HeadSpec, ManifestEntry)>, SynthError> {
    if p.clean + p.backdoor == 0 {
        return Err(SynthError::InvalidParams("benchmark needs at least one model".into()));
    }
    if p.backdoor > 0 && p.mechanisms.is_empty() {
        return Err(SynthError::InvalidParams("no mechanisms given".into()));
    }
    if !(p.inflate.0 <= p.inflate.1 && p.bias_shift.0 <= p.bias_shift.1) {
        return Err(SynthError::InvalidParams("empty parameter range".into()));
    }
    let total = p.clean + p.backdoor;
    let mut order: Vec<Option<usize>> = (0..p.backdoor).map(Some).chain((0..p.clean).map(|_| None)).collect();
    let mut rng = rng::seeded(rng::sub_seed(p.seed, u64::MAX));
    for i in (1..total).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
        .par_iter()
        .enumerate()
        .map(|(slot, rank)| bench_model(p, slot, *rank))
        .collect()
}

/// Writes `mNNNN.json` head files and `manifest.json` to `out`.
pub fn gen_benchmark(p: &BenchmarkParams, out: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, SynthError> {
    let out = out.as_ref();
    let models = gen_benchmark_heads(p)?;
    fs::create_dir_all(out)?;
    models
        .par_iter()
        .try_for_each(|(head, entry)| head.write_to(out.join(&entry.file)))?;
    let entries: Vec<ManifestEntry> = models.into_iter().map(|(_, e)| e).collect();
    fs::write(out.join("manifest.json"), manifest_json(&entries))?;
    Ok(entries)
}
