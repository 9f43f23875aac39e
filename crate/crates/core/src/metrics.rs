//! Spearman rank correlation between explanation maps, and aggregation of
//! per-image correlations into per-stage mean and population std.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::randomize::Mode;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Preprocessing {
    /// Rank `|value|`.
    Absolute,
    /// Rank raw values.
    Signed,
}

impl Preprocessing {
    pub fn name(&self) -> &'static str {
        match self {
            Preprocessing::Absolute => "absolute",
            Preprocessing::Signed => "signed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Rho(f64),
    /// One of the inputs has all-equal ranks; the correlation is undefined.
    Degenerate,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Rho(r) => Some(r),
            Correlation::Degenerate => None,
        }
    }
}

/// Average ranks (1-based); ties share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &Tensor, b: &Tensor, pre: Preprocessing) -> Result<Correlation> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    if a.len() < 2 {
        return Err(Error::config("rank correlation needs at least 2 elements"));
    }
    let prep = |t: &Tensor| -> Vec<f64> {
        match pre {
            Preprocessing::Absolute => t.data().iter().map(|v| libm::fabs(*v)).collect(),
            Preprocessing::Signed => t.data().to_vec(),
        }
    };
    let ra = average_ranks(&prep(a));
    let rb = average_ranks(&prep(b));
    Ok(pearson(&ra, &rb))
}

/// Pearson correlation; degenerate when either side has zero spread.
fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Degenerate;
    }
    Correlation::Rho((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrelationRecord {
    pub method: String,
    pub mode: Mode,
    /// `-1` is the unrandomized self-check stage.
    pub stage_index: i64,
    pub stage_label: String,
    pub image_id: usize,
    pub preprocessing: Preprocessing,
    /// `None` for a degenerate (constant-map) comparison.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSummary {
    pub method: String,
    pub mode: Mode,
    pub stage_index: i64,
    pub stage_label: String,
    pub preprocessing: Preprocessing,
    pub mean_rho: f64,
    /// Population standard deviation.
    pub std_rho: f64,
    pub n_images: usize,
    pub n_degenerate: usize,
}

/// Groups by `(method, mode, stage, preprocessing)`. Degenerate records are
/// counted but excluded; groups with no usable record are dropped and
/// returned separately. Output order is sorted by group key.
pub fn summarize(records: &[CorrelationRecord]) -> (Vec<StageSummary>, Vec<StageSummary>) {
    type Key<'a> = (&'a str, Mode, i64, Preprocessing);
    let mut groups: BTreeMap<Key<'_>, (&str, Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let e = groups
            .entry((r.method.as_str(), r.mode, r.stage_index, r.preprocessing))
            .or_insert((r.stage_label.as_str(), Vec::new(), 0));
        match r.rho {
            Some(v) => e.1.push(v),
            None => e.2 += 1,
        }
    }
    let mut kept = Vec::new();
    let mut empty = Vec::new();
    for ((method, mode, stage_index, preprocessing), (label, values, degenerate)) in groups {
        let n = values.len();
        let (mean, std) = if n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            (mean, libm::sqrt(var))
        };
        let s = StageSummary {
            method: method.into(),
            mode,
            stage_index,
            stage_label: label.into(),
            preprocessing,
            mean_rho: mean,
            std_rho: std,
            n_images: n,
            n_degenerate: degenerate,
        };
        if n == 0 {
            empty.push(s);
        } else {
            kept.push(s);
        }
    }
    (kept, empty)
}
