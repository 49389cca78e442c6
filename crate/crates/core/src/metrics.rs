//! Offline metric suite (boundary P/R/F1, intent at oracle and predicted
//! boundaries, token-level intent P/R/F1) and the real-time replay suite
//! (Acc, Acc@RT, Acc@RP, MTD, MPD, turn-difference histogram).

use crate::error::{Error, Result};
use crate::stream::DecisionRecord;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

/// Precision / recall / F1 triple. F1 is the harmonic mean of the reported
/// precision and recall (0 when both are 0), for macro averages included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRF {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PRF {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PRF { precision, recall, f1 }
    }

    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        PRF::new(precision, recall)
    }
}

/// Multi-class averaging mode. Macro averages per-class precision and recall
/// over all C classes (absent classes contribute 0); micro pools counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Average {
    Macro,
    Micro,
}

/// Boundary detection quality: a prediction is correct only at the exact
/// (sequence, token) position.
pub fn ib_prf(predicted: &[(usize, usize)], truth: &[(usize, usize)]) -> PRF {
    let pred_set: HashSet<_> = predicted.iter().collect();
    let truth_set: HashSet<_> = truth.iter().collect();
    let tp = pred_set.intersection(&truth_set).count();
    PRF::from_counts(tp, pred_set.len() - tp, truth_set.len() - tp)
}

fn multiclass_prf(tp: &[usize], fp: &[usize], fn_: &[usize], avg: Average) -> PRF {
    let c = tp.len();
    match avg {
        Average::Micro => {
            let t: usize = tp.iter().sum();
            PRF::from_counts(t, fp.iter().sum(), fn_.iter().sum())
        }
        Average::Macro => {
            let mut p_sum = 0.0;
            let mut r_sum = 0.0;
            for k in 0..c {
                if tp[k] + fp[k] > 0 {
                    p_sum += tp[k] as f64 / (tp[k] + fp[k]) as f64;
                }
                if tp[k] + fn_[k] > 0 {
                    r_sum += tp[k] as f64 / (tp[k] + fn_[k]) as f64;
                }
            }
            PRF::new(p_sum / c as f64, r_sum / c as f64)
        }
    }
}

/// Intent quality measured at the ground-truth boundary: one (prediction,
/// truth) class pair per annotated sequence, averaged over the C classes.
pub fn intent_at_oracle_boundary(
    predicted: &[usize],
    truth: &[usize],
    num_classes: usize,
    avg: Average,
) -> PRF {
    debug_assert_eq!(predicted.len(), truth.len());
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in predicted.iter().zip(truth.iter()) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    multiclass_prf(&tp, &fp, &fn_, avg)
}

/// Intent quality at model-predicted boundaries: a true positive needs the
/// right class AND a boundary position within `window` tokens of the truth
/// (0 = exact). Right class at the wrong position counts as a false positive
/// for that class and leaves the truth unmatched.
pub fn intent_at_predicted_boundary(
    predictions: &[(usize, usize, usize)],
    truths: &[(usize, usize, usize)],
    num_classes: usize,
    avg: Average,
    window: usize,
) -> PRF {
    let matched = |pred: &(usize, usize, usize), truth: &(usize, usize, usize)| {
        pred.0 == truth.0 && pred.2 == truth.2 && pred.1.abs_diff(truth.1) <= window
    };
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for t in truths {
        if predictions.iter().any(|p| matched(p, t)) {
            tp[t.2] += 1;
        } else {
            fn_[t.2] += 1;
        }
    }
    for p in predictions {
        if !truths.iter().any(|t| matched(p, t)) {
            fp[p.2] += 1;
        }
    }
    multiclass_prf(&tp, &fp, &fn_, avg)
}

/// Token-level intent tagging quality for the no-boundary variant: per-token
/// (prediction, truth) pairs where `num_classes` is the no-intent index;
/// the no-intent tag is excluded from averaging.
pub fn intent_prf_unmasked(
    pairs: &[(usize, usize)],
    num_classes: usize,
    avg: Average,
) -> PRF {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for &(p, t) in pairs {
        if p == t {
            if t < num_classes {
                tp[t] += 1;
            }
        } else {
            if p < num_classes {
                fp[p] += 1;
            }
            if t < num_classes {
                fn_[t] += 1;
            }
        }
    }
    multiclass_prf(&tp, &fp, &fn_, avg)
}

/// Replay evaluation report. The accuracy criteria are nested:
/// `acc >= acc_rt >= acc_rp`. MTD/MPD use predicted - actual, so negative
/// means the model fired earlier than the ground truth. Missed conversations
/// score zero in all accuracies and are excluded from MTD/MPD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTimeReport {
    pub acc: f64,
    pub acc_rt: f64,
    pub acc_rp: f64,
    pub mtd: f64,
    pub mpd: f64,
    pub turn_diff_histogram: BTreeMap<i64, u64>,
    pub n_missed: usize,
    pub n_records: usize,
}

/// Computes the five replay metrics from one decision record per transcript.
pub fn realtime_metrics(records: &[DecisionRecord]) -> Result<RealTimeReport> {
    if records.is_empty() {
        return Err(Error::Validation("cannot compute replay metrics over zero records".into()));
    }
    let n = records.len() as f64;
    let mut acc = 0usize;
    let mut acc_rt = 0usize;
    let mut acc_rp = 0usize;
    let mut n_missed = 0usize;
    let mut turn_diffs: Vec<i64> = Vec::new();
    let mut pos_diffs: Vec<i64> = Vec::new();
    let mut histogram: BTreeMap<i64, u64> = BTreeMap::new();
    for r in records {
        if !r.fired {
            n_missed += 1;
            continue;
        }
        let class = r.class.as_deref().ok_or_else(|| {
            Error::Validation(format!("record {}: fired without a class", r.id))
        })?;
        let (turn, token, pos) = match (r.turn, r.token, r.pos) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Validation(format!(
                    "record {}: fired without positions",
                    r.id
                )))
            }
        };
        let class_ok = class == r.true_class;
        let turn_ok = turn == r.true_turn;
        let token_ok = token == r.true_token;
        if class_ok {
            acc += 1;
            if turn_ok {
                acc_rt += 1;
                if token_ok {
                    acc_rp += 1;
                }
            }
        }
        let turn_diff = turn as i64 - r.true_turn as i64;
        turn_diffs.push(turn_diff);
        pos_diffs.push(pos as i64 - r.true_pos as i64);
        *histogram.entry(turn_diff).or_insert(0) += 1;
    }
    let mean = |v: &[i64]| if v.is_empty() { 0.0 } else { v.iter().sum::<i64>() as f64 / v.len() as f64 };
    Ok(RealTimeReport {
        acc: acc as f64 / n,
        acc_rt: acc_rt as f64 / n,
        acc_rp: acc_rp as f64 / n,
        mtd: mean(&turn_diffs),
        mpd: mean(&pos_diffs),
        turn_diff_histogram: histogram,
        n_missed,
        n_records: records.len(),
    })
}

/// Writes the turn-difference histogram as `turn_diff,count` CSV, ascending.
pub fn export_histogram(report: &RealTimeReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "turn_diff,count").map_err(|e| Error::io(path, e))?;
    for (&diff, &count) in &report.turn_diff_histogram {
        writeln!(f, "{diff},{count}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parses a histogram CSV back into a map (round-trip of [`export_histogram`]).
pub fn parse_histogram_csv(content: &str) -> Result<BTreeMap<i64, u64>> {
    let mut out = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            if line != "turn_diff,count" {
                return Err(Error::Parse { line: 1, msg: format!("unexpected header '{line}'") });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected two columns".into() })?;
        let diff: i64 =
            a.parse().map_err(|e| Error::Parse { line: i + 1, msg: format!("bad turn_diff: {e}") })?;
        let count: u64 =
            b.parse().map_err(|e| Error::Parse { line: i + 1, msg: format!("bad count: {e}") })?;
        out.insert(diff, count);
    }
    Ok(out)
}
