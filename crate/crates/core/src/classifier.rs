//! Ellipse-zone quality labels and the KNN router that predicts them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Real};

/// Ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLabel {
    Excellent,
    Ordinary,
    Bad,
    Discard,
}

/// Number of classes that reach an equalizer.
pub const N_CLASSES: usize = 3;

impl QualityLabel {
    pub const KEPT: [QualityLabel; N_CLASSES] = [QualityLabel::Excellent, QualityLabel::Ordinary, QualityLabel::Bad];

    /// Index among the kept classes, `None` for `Discard`.
    pub fn index(self) -> Option<usize> {
        match self {
            QualityLabel::Excellent => Some(0),
            QualityLabel::Ordinary => Some(1),
            QualityLabel::Bad => Some(2),
            QualityLabel::Discard => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLabel::Excellent => "excellent",
            QualityLabel::Ordinary => "ordinary",
            QualityLabel::Bad => "bad",
            QualityLabel::Discard => "discard",
        }
    }
}

impl std::str::FromStr for QualityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excellent" => Ok(QualityLabel::Excellent),
            "ordinary" => Ok(QualityLabel::Ordinary),
            "bad" => Ok(QualityLabel::Bad),
            "discard" => Ok(QualityLabel::Discard),
            other => Err(Error::config(format!("unknown quality label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds<T> {
    pub k1: T,
    pub k2: T,
    pub k3: T,
}

impl<T: Real> Default for ZoneThresholds<T> {
    fn default() -> Self {
        Self { k1: T::lit(1.5), k2: T::lit(2.5), k3: T::lit(3.5) }
    }
}

impl<T: Real> ZoneThresholds<T> {
    pub fn validate(&self) -> Result<()> {
        if T::zero() < self.k1 && self.k1 < self.k2 && self.k2 < self.k3 {
            Ok(())
        } else {
            Err(Error::config("zone thresholds must satisfy 0 < k1 < k2 < k3"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseZones<T> {
    pub mean: [T; 2],
    pub cov: [[T; 2]; 2],
    pub k1: T,
    pub k2: T,
    pub k3: T,
}

pub const MIN_ELLIPSE_POINTS: usize = 10;

/// Sample mean/covariance of `(x, y)` pairs with Mahalanobis shells at the thresholds.
pub fn fit_ellipse_zones<T: Real>(pairs: &[(T, T)], thresholds: &ZoneThresholds<T>) -> Result<EllipseZones<T>> {
    thresholds.validate()?;
    if pairs.len() < MIN_ELLIPSE_POINTS {
        return Err(Error::Precision(format!("ellipse fit needs at least {MIN_ELLIPSE_POINTS} points")));
    }
    let n = T::of_usize(pairs.len());
    let mx = ordered_sum(pairs.iter().map(|p| p.0)) / n;
    let my = ordered_sum(pairs.iter().map(|p| p.1)) / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let d = n - T::one();
    let cov = [[sxx / d, sxy / d], [sxy / d, syy / d]];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let scale = cov[0][0] * cov[1][1];
    if !(det > T::lit(1e-12) * scale) || !(scale > T::zero()) {
        return Err(Error::degenerate("scatter is singular; ellipse zones undefined"));
    }
    Ok(EllipseZones { mean: [mx, my], cov, k1: thresholds.k1, k2: thresholds.k2, k3: thresholds.k3 })
}

impl<T: Real> EllipseZones<T> {
    pub fn mahalanobis(&self, pair: (T, T)) -> T {
        let (dx, dy) = (pair.0 - self.mean[0], pair.1 - self.mean[1]);
        let [[a, b], [_, c]] = self.cov;
        let det = a * c - b * b;
        let q = (c * dx * dx - T::lit(2.0) * b * dx * dy + a * dy * dy) / det;
        q.max(T::zero()).sqrt()
    }

    pub fn label_distance(&self, d: T) -> QualityLabel {
        if d <= self.k1 {
            QualityLabel::Excellent
        } else if d <= self.k2 {
            QualityLabel::Ordinary
        } else if d <= self.k3 {
            QualityLabel::Bad
        } else {
            QualityLabel::Discard
        }
    }
}

/// Zone of a received pair; boundary points take the better class.
pub fn label_point<T: Real>(zones: &EllipseZones<T>, pair: (T, T)) -> QualityLabel {
    zones.label_distance(zones.mahalanobis(pair))
}

/// Writes `x,y,mahalanobis_d,label` rows.
pub fn write_label_csv<T: Real, W: Write>(zones: &EllipseZones<T>, pairs: &[(T, T)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["x", "y", "mahalanobis_d", "label"]).map_err(io)?;
    for &(x, y) in pairs {
        let d = zones.mahalanobis((x, y));
        w.write_record([
            format!("{:e}", x.to_f64_lossy()),
            format!("{:e}", y.to_f64_lossy()),
            format!("{:e}", d.to_f64_lossy()),
            zones.label_distance(d).as_str().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Lazy k-nearest-neighbour classifier on standardized 2-D features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel<T> {
    pub features: Vec<[T; 2]>,
    pub labels: Vec<QualityLabel>,
    pub k: usize,
    /// Per-axis mean and standard deviation of the training features.
    pub center: [T; 2],
    pub spread: [T; 2],
}

pub const DEFAULT_K: usize = 5;

/// Stores the training set and its standardization.
///
/// `Discard` is not a KNN class: those points are removed by the ellipse
/// rule before classification, so they are rejected here.
pub fn knn_fit<T: Real>(features: Vec<[T; 2]>, labels: Vec<QualityLabel>, k: usize) -> Result<KnnModel<T>> {
    if k.is_multiple_of(2) {
        return Err(Error::config(format!("k must be odd, got {k}")));
    }
    if features.len() != labels.len() {
        return Err(Error::contract("features and labels differ in length"));
    }
    if k > features.len() {
        return Err(Error::config(format!("k = {k} exceeds the {} training points", features.len())));
    }
    if labels.contains(&QualityLabel::Discard) {
        return Err(Error::config("discarded points cannot train the classifier"));
    }
    let n = T::of_usize(features.len());
    let mut center = [T::zero(); 2];
    let mut spread = [T::one(); 2];
    for axis in 0..2 {
        let m = ordered_sum(features.iter().map(|f| f[axis])) / n;
        let var = ordered_sum(features.iter().map(|f| (f[axis] - m) * (f[axis] - m))) / n;
        center[axis] = m;
        if var > T::zero() {
            spread[axis] = var.sqrt();
        }
    }
    Ok(KnnModel { features, labels, k, center, spread })
}

impl<T: Real> KnnModel<T> {
    fn standardized(&self, f: [T; 2]) -> [T; 2] {
        [(f[0] - self.center[0]) / self.spread[0], (f[1] - self.center[1]) / self.spread[1]]
    }

    /// Vote counts among the `k` nearest neighbours (distance ties → lower index).
    pub fn votes(&self, feature: [T; 2]) -> [usize; N_CLASSES] {
        let q = self.standardized(feature);
        // Insertion-sorted list of the k best (distance², index).
        let mut best: Vec<(T, usize)> = Vec::with_capacity(self.k + 1);
        for (i, f) in self.features.iter().enumerate() {
            let s = self.standardized(*f);
            let d = (s[0] - q[0]) * (s[0] - q[0]) + (s[1] - q[1]) * (s[1] - q[1]);
            if best.len() == self.k && d >= best[self.k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(self.k);
        }
        let mut votes = [0usize; N_CLASSES];
        for (_, i) in best {
            if let Some(c) = self.labels[i].index() {
                votes[c] += 1;
            }
        }
        votes
    }

    /// Per-class vote fractions, usable as one-vs-rest scores.
    pub fn scores(&self, feature: [T; 2]) -> [T; N_CLASSES] {
        let kf = T::of_usize(self.k);
        self.votes(feature).map(|v| T::of_usize(v) / kf)
    }
}

fn winner(votes: &[usize; N_CLASSES]) -> QualityLabel {
    // Strictly greater keeps the earlier (better) class on ties.
    let mut best = 0;
    for c in 1..N_CLASSES {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    QualityLabel::KEPT[best]
}

/// Majority vote of the `k` nearest neighbours; vote ties go to the better class.
pub fn knn_predict<T: Real>(model: &KnnModel<T>, feature: [T; 2]) -> QualityLabel {
    winner(&model.votes(feature))
}

/// Prediction together with vote-fraction scores.
pub fn knn_predict_scored<T: Real>(model: &KnnModel<T>, feature: [T; 2]) -> (QualityLabel, [T; N_CLASSES]) {
    let votes = model.votes(feature);
    let kf = T::of_usize(model.k);
    (winner(&votes), votes.map(|v| T::of_usize(v) / kf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport<T> {
    /// Rows: truth, columns: prediction.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
    pub support: [usize; N_CLASSES],
    /// Zero when a class has no support (FNR is then one).
    pub per_class_tpr: [T; N_CLASSES],
    pub per_class_fnr: [T; N_CLASSES],
    /// 0.5 when a class has no positives or no negatives.
    pub per_class_auc: [T; N_CLASSES],
    pub accuracy: T,
}

/// Confusion matrix, TPR/FNR and one-vs-rest trapezoidal AUC.
pub fn classification_report<T: Real>(
    predicted: &[QualityLabel],
    truth: &[QualityLabel],
    scores: &[[T; N_CLASSES]],
) -> Result<ClassReport<T>> {
    if predicted.len() != truth.len() || scores.len() != truth.len() {
        return Err(Error::contract("predictions, truth and scores must have equal length"));
    }
    if truth.is_empty() {
        return Err(Error::Empty("no samples to report on".into()));
    }
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (&p, &t) in predicted.iter().zip(truth) {
        match (t.index(), p.index()) {
            (Some(ti), Some(pi)) => confusion[ti][pi] += 1,
            _ => return Err(Error::contract("discarded samples must be removed before reporting")),
        }
    }
    let support = confusion.map(|row| row.iter().sum::<usize>());
    let mut per_class_tpr = [T::zero(); N_CLASSES];
    let mut per_class_fnr = [T::one(); N_CLASSES];
    let mut per_class_auc = [T::lit(0.5); N_CLASSES];
    for c in 0..N_CLASSES {
        if support[c] > 0 {
            per_class_tpr[c] = T::of_usize(confusion[c][c]) / T::of_usize(support[c]);
            per_class_fnr[c] = T::one() - per_class_tpr[c];
        }
        let positives: Vec<bool> = truth.iter().map(|t| t.index() == Some(c)).collect();
        let class_scores: Vec<T> = scores.iter().map(|s| s[c]).collect();
        if let Some(auc) = roc_auc(&class_scores, &positives) {
            per_class_auc[c] = auc;
        }
    }
    let correct: usize = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(ClassReport {
        confusion,
        support,
        per_class_tpr,
        per_class_fnr,
        per_class_auc,
        accuracy: T::of_usize(correct) / T::of_usize(truth.len()),
    })
}

/// Area under the ROC curve by the trapezoid rule; tied scores form one ROC step.
pub fn roc_auc<T: Real>(scores: &[T], positive: &[bool]) -> Option<T> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (T::zero(), T::zero());
    let mut area = T::zero();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = T::of_usize(tp) / T::of_usize(n_pos);
        let fpr = T::of_usize(fp) / T::of_usize(n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / T::lit(2.0);
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}
