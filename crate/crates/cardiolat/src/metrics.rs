//! Classification metrics: confusion matrices, per-class precision/recall/
//! F1, one-vs-rest ROC curves with trapezoidal AUC, and report emission.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beat::BeatClass;
use crate::error::{Error, Result};
use crate::gbdt::GbdtModel;

/// Row = true class, column = predicted class.
pub fn confusion_matrix(
    truth: &[BeatClass],
    pred: &[BeatClass],
) -> [[usize; BeatClass::COUNT]; BeatClass::COUNT] {
    let mut m = [[0usize; BeatClass::COUNT]; BeatClass::COUNT];
    for (t, p) in truth.iter().zip(pred.iter()) {
        m[t.index()][p.index()] += 1;
    }
    m
}

/// Each row rescaled to sum to 1 (rows with no samples stay zero).
pub fn normalize_rows(
    m: &[[usize; BeatClass::COUNT]; BeatClass::COUNT],
) -> [[f64; BeatClass::COUNT]; BeatClass::COUNT] {
    let mut out = [[0.0; BeatClass::COUNT]; BeatClass::COUNT];
    for (i, row) in m.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total > 0 {
            for (j, &v) in row.iter().enumerate() {
                out[i][j] = v as f64 / total as f64;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: BeatClass,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Recall expressed in percent; the headline per-class figure.
    pub accuracy_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// Correct predictions over all samples (not the per-class figure).
    pub overall_accuracy: f64,
    pub macro_auc: f64,
    pub per_class_auc: Vec<f64>,
    pub confusion: [[usize; BeatClass::COUNT]; BeatClass::COUNT],
    pub n_samples: usize,
}

/// Per-class precision, recall, and F1 from a confusion matrix. Classes
/// without support get zero across the board rather than NaN.
pub fn per_class_metrics(
    m: &[[usize; BeatClass::COUNT]; BeatClass::COUNT],
) -> Vec<ClassMetrics> {
    let mut out = Vec::with_capacity(BeatClass::COUNT);
    for class in BeatClass::ALL {
        let c = class.index();
        let tp = m[c][c];
        let support: usize = m[c].iter().sum();
        let pred_pos: usize = (0..BeatClass::COUNT).map(|r| m[r][c]).sum();
        let precision = if pred_pos > 0 { tp as f64 / pred_pos as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out.push(ClassMetrics {
            class,
            support,
            precision,
            recall,
            f1,
            accuracy_pct: recall * 100.0,
        });
    }
    out
}

pub fn macro_f1(per_class: &[ClassMetrics]) -> f64 {
    // Classes absent from the data are excluded from the average.
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().map(|c| c.f1).sum::<f64>() / present.len() as f64
}

pub fn overall_accuracy(m: &[[usize; BeatClass::COUNT]; BeatClass::COUNT]) -> f64 {
    let correct: usize = (0..BeatClass::COUNT).map(|i| m[i][i]).sum();
    let total: usize = m.iter().flatten().sum();
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Macro F1 of a GBDT model on (xs, ys). Used for early stopping.
pub fn macro_f1_of(model: &GbdtModel, xs: &[Vec<f64>], ys: &[BeatClass]) -> f64 {
    let pred: Vec<BeatClass> = xs.iter().map(|x| model.predict(x)).collect();
    let m = confusion_matrix(ys, &pred);
    macro_f1(&per_class_metrics(&m))
}

/// One-vs-rest ROC: sweep every distinct score as a threshold, collect
/// (FPR, TPR) from (0,0) to (1,1), integrate with the trapezoid rule.
/// `scores[i]` is the positive-class score of sample i. Returns NaN when
/// either the positive or negative set is empty.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auc = 0.0;
    let mut prev_tpr = 0.0;
    let mut prev_fpr = 0.0;
    let mut i = 0;
    while i < order.len() {
        // Samples sharing a score move together: one ROC vertex per
        // distinct threshold.
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    auc
}

/// Per-class one-vs-rest AUCs plus their mean over classes with both
/// positive and negative samples. `probs[i]` is the per-class probability
/// vector of sample i.
pub fn roc_auc_ovr(probs: &[Vec<f64>], truth: &[BeatClass]) -> (Vec<f64>, f64) {
    let mut per_class = Vec::with_capacity(BeatClass::COUNT);
    for class in BeatClass::ALL {
        let c = class.index();
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positives: Vec<bool> = truth.iter().map(|t| *t == class).collect();
        per_class.push(roc_auc(&scores, &positives));
    }
    let defined: Vec<f64> = per_class.iter().cloned().filter(|a| a.is_finite()).collect();
    let macro_auc = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    (per_class, macro_auc)
}

pub fn summarize(probs: &[Vec<f64>], pred: &[BeatClass], truth: &[BeatClass]) -> EvalSummary {
    let confusion = confusion_matrix(truth, pred);
    let per_class = per_class_metrics(&confusion);
    let (per_class_auc, macro_auc) = roc_auc_ovr(probs, truth);
    EvalSummary {
        macro_f1: macro_f1(&per_class),
        overall_accuracy: overall_accuracy(&confusion),
        per_class,
        macro_auc,
        per_class_auc,
        confusion,
        n_samples: truth.len(),
    }
}

/// Writes `<stem>.json` (full summary) and `<stem>_confusion.csv`,
/// `<stem>_per_class.csv` next to it. Output is deterministic.
pub fn emit_report(dir: &Path, stem: &str, summary: &EvalSummary) -> Result<()> {
    let json_path = dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;

    let conf_path = dir.join(format!("{stem}_confusion.csv"));
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&conf_path).map_err(|e| Error::io(conf_path.display().to_string(), e))?,
    );
    let io_err = |e| Error::io(conf_path.display().to_string(), e);
    write!(w, "true\\pred").map_err(io_err)?;
    for c in BeatClass::ALL {
        write!(w, ",{}", c.as_str()).map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    let norm = normalize_rows(&summary.confusion);
    for (i, c) in BeatClass::ALL.iter().enumerate() {
        write!(w, "{}", c.as_str()).map_err(io_err)?;
        for j in 0..BeatClass::COUNT {
            write!(w, ",{:.6}", norm[i][j]).map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    drop(w);

    let pc_path = dir.join(format!("{stem}_per_class.csv"));
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&pc_path).map_err(|e| Error::io(pc_path.display().to_string(), e))?,
    );
    let io_err = |e| Error::io(pc_path.display().to_string(), e);
    writeln!(w, "class,support,precision,recall,f1,accuracy_pct,auc").map_err(io_err)?;
    for (cm, auc) in summary.per_class.iter().zip(summary.per_class_auc.iter()) {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.4},{:.6}",
            cm.class.as_str(),
            cm.support,
            cm.precision,
            cm.recall,
            cm.f1,
            cm.accuracy_pct,
            auc
        )
        .map_err(io_err)?;
    }
    Ok(())
}
