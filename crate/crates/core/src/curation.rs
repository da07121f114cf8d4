//! Database curation: weighted alignment scores, weight regression against
//! human preference and F1-optimal acceptance thresholds.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Artifact defaults. These are not calibrated values.
pub const DEFAULT_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];
pub const DEFAULT_THRESHOLD: f64 = 0.7;
pub const PARAMS_VERSION: u32 = 1;

/// Minimum gap kept between consecutive weights so that the ordering
/// `w1 > w2 > w3` stays strict after projection.
pub const ORDER_MARGIN: f64 = 1e-6;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("score {name} = {value} outside [0, 1]")]
    ScoreRange { name: &'static str, value: f64 },
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// Per-dimension judge scores: subject consistency, interaction logic and
/// detail fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimScores {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl DimScores {
    pub fn new(s1: f64, s2: f64, s3: f64) -> Result<Self, CurationError> {
        for (name, value) in [("s1", s1), ("s2", s2), ("s3", s3)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CurationError::ScoreRange { name, value });
            }
        }
        Ok(Self { s1, s2, s3 })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    w1: f64,
    w2: f64,
    w3: f64,
}

impl Weights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self, CurationError> {
        if !(w1 > w2 && w2 > w3 && w3 >= 0.0) {
            return Err(CurationError::Weights(format!(
                "expected w1 > w2 > w3 >= 0, got ({w1}, {w2}, {w3})"
            )));
        }
        let sum = w1 + w2 + w3;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(CurationError::Weights(format!(
                "weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { w1, w2, w3 })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w1, self.w2, self.w3]
    }
}

impl Default for Weights {
    fn default() -> Self {
        let [w1, w2, w3] = DEFAULT_WEIGHTS;
        Self { w1, w2, w3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(theta: f64) -> Result<Self, CurationError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(CurationError::Threshold(theta));
        }
        Ok(Self(theta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(DEFAULT_THRESHOLD)
    }
}

/// Calibration target attached to a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Preference(f64),
    Accept(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationSample {
    pub id: String,
    pub scores: DimScores,
    pub target: Target,
}

pub fn aggregate_score(scores: &DimScores, weights: &Weights) -> f64 {
    weights.w1 * scores.s1 + weights.w2 * scores.s2 + weights.w3 * scores.s3
}

/// Least squares restricted to non-negative coefficients.
///
/// With three unknowns every active set can be tried; the feasible subset
/// solution with the smallest residual is the NNLS optimum.
fn nnls3(design: &DMatrix<f64>, target: &DVector<f64>) -> [f64; 3] {
    let mut best = ([0.0; 3], target.norm_squared());
    for mask in 1u8..8 {
        let cols: Vec<usize> = (0..3).filter(|c| mask & (1 << c) != 0).collect();
        let sub = design.select_columns(&cols);
        let Ok(coef) = sub.clone().svd(true, true).solve(target, 1e-12) else {
            continue;
        };
        if coef.iter().any(|&c| c < 0.0) {
            continue;
        }
        let resid = (&sub * &coef - target).norm_squared();
        if resid < best.1 {
            let mut w = [0.0; 3];
            for (c, v) in cols.iter().zip(coef.iter()) {
                w[*c] = *v;
            }
            best = (w, resid);
        }
    }
    best.0
}

/// Pool-adjacent-violators projection onto non-increasing sequences.
fn isotonic_non_increasing(values: &[f64]) -> Vec<f64> {
    // (sum, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (s1, n1) = blocks[blocks.len() - 2];
            let (s2, n2) = blocks[blocks.len() - 1];
            if s1 / n1 as f64 >= s2 / n2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

/// Projects raw weights onto `w1 >= w2 + m`, `w2 >= w3 + m`, `w3 >= 0`.
fn project_ordered(raw: [f64; 3], margin: f64) -> [f64; 3] {
    let shifted = [raw[0] - 2.0 * margin, raw[1] - margin, raw[2]];
    let iso = isotonic_non_increasing(&shifted);
    [
        iso[0].max(0.0) + 2.0 * margin,
        iso[1].max(0.0) + margin,
        iso[2].max(0.0),
    ]
}

/// Fits `pref ~ w1*s1 + w2*s2 + w3*s3` with non-negative weights, enforces
/// the strict ordering and normalizes to unit sum.
pub fn calibrate_weights(samples: &[CurationSample]) -> Result<Weights, CurationError> {
    let rows: Vec<([f64; 3], f64)> = samples
        .iter()
        .filter_map(|s| match s.target {
            Target::Preference(p) => Some((s.scores.as_array(), p)),
            Target::Accept(_) => None,
        })
        .collect();
    if rows.len() < 3 {
        return Err(CurationError::Calibration(format!(
            "need at least 3 preference samples, got {}",
            rows.len()
        )));
    }
    let design = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r].0[c]);
    let target = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));

    let sv = design.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smax == 0.0 || smin / smax < 1e-10 {
        return Err(CurationError::Calibration(
            "score vectors are collinear; the design is degenerate".into(),
        ));
    }

    let raw = nnls3(&design, &target);
    let ordered = if raw[0] > raw[1] + ORDER_MARGIN && raw[1] > raw[2] + ORDER_MARGIN {
        raw
    } else {
        project_ordered(raw, ORDER_MARGIN)
    };
    let sum: f64 = ordered.iter().sum();
    if !(sum > 0.0) {
        return Err(CurationError::Calibration(
            "fitted weights are all zero".into(),
        ));
    }
    Weights::new(ordered[0] / sum, ordered[1] / sum, ordered[2] / sum)
}

fn f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Candidate thresholds: midpoints between consecutive distinct scores,
/// plus 0 and 1, ascending.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = vec![0.0];
    out.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Picks the F1-maximizing threshold for the rule `accept iff S >= theta`.
/// Ties resolve to the smallest threshold.
pub fn calibrate_threshold(scored: &[(f64, bool)]) -> Result<Threshold, CurationError> {
    let positives = scored.iter().filter(|(_, l)| *l).count();
    if positives == 0 {
        return Err(CurationError::Calibration(
            "threshold calibration needs at least one positive label".into(),
        ));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let candidates = threshold_candidates(&sorted.iter().map(|s| s.0).collect::<Vec<_>>());

    // Sweep ascending thresholds; `below` counts samples with S < theta.
    let mut below = 0;
    let mut pos_below = 0;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for theta in candidates {
        while below < sorted.len() && sorted[below].0 < theta {
            if sorted[below].1 {
                pos_below += 1;
            }
            below += 1;
        }
        let tp = positives - pos_below;
        let fp = (sorted.len() - below) - tp;
        let score = f1(tp, fp, pos_below);
        if score > best.0 {
            best = (score, theta);
        }
    }
    Threshold::new(best.1)
}

/// Splits items into accepted and rejected ids, preserving input order.
pub fn curate_batch<I: Clone>(
    items: &[(I, DimScores)],
    weights: &Weights,
    theta: Threshold,
) -> (Vec<I>, Vec<I>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (id, scores) in items {
        if aggregate_score(scores, weights) >= theta.value() {
            accepted.push(id.clone());
        } else {
            rejected.push(id.clone());
        }
    }
    (accepted, rejected)
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationParams {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub theta: f64,
    pub version: u32,
}

impl CurationParams {
    pub fn new(weights: Weights, theta: Threshold) -> Self {
        let [w1, w2, w3] = weights.as_array();
        Self {
            w1,
            w2,
            w3,
            theta: theta.value(),
            version: PARAMS_VERSION,
        }
    }

    pub fn weights(&self) -> Result<Weights, CurationError> {
        Weights::new(self.w1, self.w2, self.w3)
    }

    pub fn threshold(&self) -> Result<Threshold, CurationError> {
        Threshold::new(self.theta)
    }
}

impl Default for CurationParams {
    fn default() -> Self {
        Self::new(Weights::default(), Threshold::default())
    }
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    s1: f64,
    s2: f64,
    s3: f64,
    target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Preference,
    Label,
}

fn parse_label(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "accept" => Some(true),
        "0" | "false" | "no" | "reject" => Some(false),
        _ => None,
    }
}

/// Reads `id,s1,s2,s3,target` rows.
pub fn read_samples_csv(
    path: impl AsRef<Path>,
    kind: TargetKind,
) -> Result<Vec<CurationSample>, CurationError> {
    let path = path.as_ref();
    let io_err = |reason: String| CurationError::Io {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(e.to_string()))?;
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| io_err(e.to_string()))?;
        let scores = DimScores::new(row.s1, row.s2, row.s3)
            .map_err(|e| io_err(format!("row {}: {e}", line + 1)))?;
        let target = match kind {
            TargetKind::Preference => {
                let p: f64 = row
                    .target
                    .trim()
                    .parse()
                    .map_err(|_| io_err(format!("row {}: bad preference", line + 1)))?;
                Target::Preference(p)
            }
            TargetKind::Label => Target::Accept(
                parse_label(&row.target)
                    .ok_or_else(|| io_err(format!("row {}: bad accept label", line + 1)))?,
            ),
        };
        out.push(CurationSample {
            id: row.id,
            scores,
            target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pref(scores: [f64; 3], p: f64) -> CurationSample {
        CurationSample {
            id: String::new(),
            scores: DimScores::new(scores[0], scores[1], scores[2]).unwrap(),
            target: Target::Preference(p),
        }
    }

    #[test]
    fn aggregate_examples() {
        let w = Weights::new(0.5, 0.3, 0.2).unwrap();
        let s = DimScores::new(0.8, 0.6, 0.4).unwrap();
        approx::assert_abs_diff_eq!(aggregate_score(&s, &w), 0.66, epsilon = 1e-12);
        let ones = DimScores::new(1.0, 1.0, 1.0).unwrap();
        approx::assert_abs_diff_eq!(aggregate_score(&ones, &w), 1.0, epsilon = 1e-12);
        let zeros = DimScores::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(aggregate_score(&zeros, &w), 0.0);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(DimScores::new(1.1, 0.0, 0.0).is_err());
        assert!(Weights::new(0.3, 0.5, 0.2).is_err());
        assert!(Weights::new(0.5, 0.3, 0.3).is_err());
        assert!(Threshold::new(1.0 + 1e-9).is_err());
    }

    #[test]
    fn underdetermined_calibration() {
        let samples = vec![pref([0.1, 0.2, 0.3], 0.5), pref([0.3, 0.2, 0.9], 0.1)];
        assert!(matches!(
            calibrate_weights(&samples),
            Err(CurationError::Calibration(_))
        ));
    }

    #[test]
    fn collinear_design() {
        let samples: Vec<_> = (1..6)
            .map(|i| {
                let t = i as f64 / 10.0;
                pref([t, t, t], t)
            })
            .collect();
        assert!(calibrate_weights(&samples).is_err());
    }

    #[test]
    fn pava_pools_violators() {
        assert_eq!(
            isotonic_non_increasing(&[1.0, 2.0, 0.0]),
            vec![1.5, 1.5, 0.0]
        );
        assert_eq!(
            isotonic_non_increasing(&[3.0, 2.0, 1.0]),
            vec![3.0, 2.0, 1.0]
        );
        assert_eq!(
            isotonic_non_increasing(&[0.0, 0.0, 3.0]),
            vec![1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn threshold_all_positive() {
        let scored: Vec<_> = [0.2, 0.4, 0.9].iter().map(|&s| (s, true)).collect();
        assert_eq!(calibrate_threshold(&scored).unwrap().value(), 0.0);
    }

    #[test]
    fn threshold_needs_positive() {
        assert!(calibrate_threshold(&[(0.3, false)]).is_err());
    }

    #[test]
    fn threshold_separable() {
        let scored = vec![
            (0.8, true),
            (0.95, true),
            (0.9, true),
            (0.5, false),
            (0.1, false),
            (0.3, false),
        ];
        approx::assert_abs_diff_eq!(
            calibrate_threshold(&scored).unwrap().value(),
            0.65,
            epsilon = 1e-12
        );
    }

    #[test]
    fn curate_boundaries() {
        let w = Weights::default();
        let items = vec![
            ("a", DimScores::new(1.0, 1.0, 1.0).unwrap()),
            ("b", DimScores::new(0.9, 1.0, 1.0).unwrap()),
            ("c", DimScores::new(0.0, 0.0, 0.0).unwrap()),
        ];
        let (acc, rej) = curate_batch(&items, &w, Threshold::new(0.0).unwrap());
        assert_eq!((acc.len(), rej.len()), (3, 0));
        // 0.5 + 0.3 + 0.2 is exactly 1.0 in binary floating point.
        let (acc, rej) = curate_batch(&items, &w, Threshold::new(1.0).unwrap());
        assert_eq!(acc, vec!["a"]);
        assert_eq!(rej, vec!["b", "c"]);
    }

    #[test]
    fn params_roundtrip_json() {
        let params = CurationParams::default();
        let text = serde_json::to_string(&params).unwrap();
        assert!(text.contains("\"theta\":0.7"));
        let back: CurationParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, params);
        assert_eq!(back.weights().unwrap(), Weights::default());
    }
}
