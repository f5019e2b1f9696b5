//! Class-wise response statistics over a probe batch.
//!
//! `Mean`, `L2` and `Ratio` are computed from softmax probabilities or
//! labels; `Max` is computed from raw logits. Column sums are taken over
//! the sorted column so every statistic depends only on the multiset of
//! probe responses, not on probe order.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::eval::ResponseSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    Mean,
    L2,
    Ratio,
    Max,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 4] = [
        IndicatorKind::Mean,
        IndicatorKind::L2,
        IndicatorKind::Ratio,
        IndicatorKind::Max,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            IndicatorKind::Mean => "mean",
            IndicatorKind::L2 => "l2",
            IndicatorKind::Ratio => "ratio",
            IndicatorKind::Max => "max",
        }
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndicatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(IndicatorKind::Mean),
            "l2" => Ok(IndicatorKind::L2),
            "ratio" => Ok(IndicatorKind::Ratio),
            "max" => Ok(IndicatorKind::Max),
            other => Err(format!("unknown indicator `{other}` (mean, l2, ratio, max)")),
        }
    }
}

/// Default indicator for an architecture tag: `L2` for PreAct-ResNet18,
/// `Mean` otherwise.
pub fn default_indicator(arch_tag: Option<&str>) -> IndicatorKind {
    match arch_tag.map(str::to_ascii_lowercase).as_deref() {
        Some("preactresnet18") | Some("preact-resnet18") | Some("preact_resnet18") => IndicatorKind::L2,
        _ => IndicatorKind::Mean,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorVector {
    pub kind: IndicatorKind,
    pub values: Vec<f64>,
    #[serde(default)]
    pub probe_count: usize,
}

impl IndicatorVector {
    /// `(argmax, max)`, lowest class index on ties.
    pub fn peak(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > self.values[best] {
                best = i;
            }
        }
        (best, self.values[best])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

fn column_sums(m: ArrayView2<'_, f64>, f: impl Fn(f64) -> f64) -> Vec<f64> {
    m.columns()
        .into_iter()
        .map(|col: ArrayView1<'_, f64>| sorted_sum(col.iter().map(|&v| f(v)).collect()))
        .collect()
}

/// Mean probability per class.
pub fn r_mean(resp: &ResponseSet) -> IndicatorVector {
    let n = resp.num_probes();
    let values = column_sums(resp.probabilities.view(), |p| p)
        .into_iter()
        .map(|s| s / n as f64)
        .collect();
    IndicatorVector {
        kind: IndicatorKind::Mean,
        values,
        probe_count: n,
    }
}

/// L2 norm of each probability column.
pub fn r_l2(resp: &ResponseSet) -> IndicatorVector {
    let values = column_sums(resp.probabilities.view(), |p| p * p)
        .into_iter()
        .map(f64::sqrt)
        .collect();
    IndicatorVector {
        kind: IndicatorKind::L2,
        values,
        probe_count: resp.num_probes(),
    }
}

/// Fraction of probes predicted as each class.
pub fn r_ratio(resp: &ResponseSet) -> IndicatorVector {
    let n = resp.num_probes();
    let mut counts = vec![0usize; resp.num_classes()];
    for &l in &resp.labels {
        counts[l] += 1;
    }
    IndicatorVector {
        kind: IndicatorKind::Ratio,
        values: counts.into_iter().map(|c| c as f64 / n as f64).collect(),
        probe_count: n,
    }
}

/// Largest logit per class.
pub fn r_max(resp: &ResponseSet) -> IndicatorVector {
    let values = resp
        .logits
        .columns()
        .into_iter()
        .map(|col| col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    IndicatorVector {
        kind: IndicatorKind::Max,
        values,
        probe_count: resp.num_probes(),
    }
}

pub fn compute(kind: IndicatorKind, resp: &ResponseSet) -> IndicatorVector {
    match kind {
        IndicatorKind::Mean => r_mean(resp),
        IndicatorKind::L2 => r_l2(resp),
        IndicatorKind::Ratio => r_ratio(resp),
        IndicatorKind::Max => r_max(resp),
    }
}
