//! Boundary F1 at a time tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};
use crate::segment::Primitive;

/// Boundaries closer than this are the same boundary.
pub const BOUNDARY_EPS_S: f64 = 1e-6;

/// Sorted start and end times of all primitives, with near-duplicates merged.
pub fn extract_boundaries(primitives: &[Primitive]) -> Vec<f64> {
    let mut b: Vec<f64> = primitives
        .iter()
        .flat_map(|p| [p.start_s, p.end_s])
        .collect();
    b.sort_by(f64::total_cmp);
    b.dedup_by(|later, kept| (*later - *kept).abs() <= BOUNDARY_EPS_S);
    b
}

/// Predicted boundaries to score. Unless `include_endpoints` is set, drops
/// `t = 0` and the end of a segment cut short by the end of the stream, except
/// where the ground truth itself has a boundary there.
pub fn predicted_boundaries(
    primitives: &[Primitive],
    gt: &[f64],
    include_endpoints: bool,
) -> Vec<f64> {
    let mut b = extract_boundaries(primitives);
    if include_endpoints {
        return b;
    }
    let mut endpoints = vec![0.0];
    endpoints.extend(primitives.iter().filter(|p| p.truncated).map(|p| p.end_s));
    let near = |x: f64, set: &[f64]| set.iter().any(|y| (x - y).abs() <= BOUNDARY_EPS_S);
    b.retain(|&t| !near(t, &endpoints) || near(t, gt));
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub tolerance_s: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Result {
    pub fn from_counts(tolerance_s: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        F1Result {
            tolerance_s,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Sums counts with another result at the same tolerance.
    pub fn pooled(&self, other: &F1Result) -> F1Result {
        F1Result::from_counts(
            self.tolerance_s,
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn_ + other.fn_,
        )
    }
}

fn check_sorted(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(LapsError::NonFinite(what));
    }
    if xs.windows(2).any(|w| w[0] > w[1]) {
        return Err(LapsError::Unsorted(what));
    }
    Ok(())
}

/// Maximum one-to-one matching with `|pred - gt| <= tol`.
///
/// On sorted lists the two-pointer sweep is optimal: the leftmost unmatched
/// items are either matched to each other or the smaller one has no partner
/// left.
pub fn boundary_f1(pred: &[f64], gt: &[f64], tol: f64) -> Result<F1Result> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(LapsError::invalid(
            "tolerance",
            format!("must be positive, got {tol}"),
        ));
    }
    check_sorted(pred, "predicted boundaries")?;
    check_sorted(gt, "ground-truth boundaries")?;
    let (mut i, mut j, mut tp) = (0, 0, 0);
    while i < pred.len() && j < gt.len() {
        if (pred[i] - gt[j]).abs() <= tol {
            tp += 1;
            i += 1;
            j += 1;
        } else if pred[i] < gt[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(F1Result::from_counts(
        tol,
        tp,
        pred.len() - tp,
        gt.len() - tp,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEval {
    pub source_id: String,
    pub results: Vec<F1Result>,
}

/// Per-stream scores plus counts pooled over all streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tolerances_s: Vec<f64>,
    pub include_endpoints: bool,
    pub streams: Vec<StreamEval>,
    pub pooled: Vec<F1Result>,
}

impl EvalReport {
    pub fn new(tolerances_s: &[f64], include_endpoints: bool) -> Self {
        EvalReport {
            tolerances_s: tolerances_s.to_vec(),
            include_endpoints,
            streams: Vec::new(),
            pooled: tolerances_s
                .iter()
                .map(|&t| F1Result::from_counts(t, 0, 0, 0))
                .collect(),
        }
    }

    /// Scores one stream and folds it into the pooled counts.
    pub fn add(
        &mut self,
        source_id: &str,
        primitives: &[Primitive],
        gt: &[f64],
    ) -> Result<&StreamEval> {
        let pred = predicted_boundaries(primitives, gt, self.include_endpoints);
        let results = self
            .tolerances_s
            .iter()
            .map(|&t| boundary_f1(&pred, gt, t))
            .collect::<Result<Vec<_>>>()?;
        for (p, r) in self.pooled.iter_mut().zip(&results) {
            *p = p.pooled(r);
        }
        self.streams.push(StreamEval {
            source_id: source_id.to_string(),
            results,
        });
        Ok(self.streams.last().expect("just pushed"))
    }
}
