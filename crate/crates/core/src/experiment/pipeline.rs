//! Equalization pipelines: staged adaptive correction and classified correction.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClassifierConfig, EqualizerConfig, Scenario};
use super::simulate::{Observation, SimulatedLink};
use crate::classifier::{
    classification_report, fit_ellipse_zones, knn_fit, knn_predict_scored, label_point, ClassReport, EllipseZones,
    KnnModel, QualityLabel, N_CLASSES,
};
use crate::equalizer::{
    correlation, forward, init_model, residual_check, train, EqualizerModel, RetrainDecision, RetrainPolicy,
    TrainReport, MIN_TRAIN_PILOTS,
};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scalar::{mean, ordered_sum, Real};
use crate::signal::{optimum_sample, pulse_profile, DetectorModel};

/// Corrected signal values with the noise floor the correction implies.
///
/// The network reshapes vacuum and electronic noise, so the shot-noise
/// reference for the excess-noise estimate becomes the mean of
/// `(∇f·g)²·N_0` and `‖∇f‖²·ν_el` over the corrected pulses, with `g` the
/// pulse profile.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedSignals<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub n0_ref: T,
    pub nu_ref: T,
}

fn noise_terms<T: Real>(model: &EqualizerModel<T>, obs: &Observation<T>, det: &DetectorModel<T>) -> (T, T) {
    let grad = model.input_gradient(&obs.0);
    let g = pulse_profile::<T>();
    let along = ordered_sum(grad.iter().zip(&g).map(|(&a, &b)| a * b));
    let norm2 = ordered_sum(grad.iter().map(|&a| a * a));
    (along * along * det.n0, norm2 * det.nu_el)
}

/// Applies `models[i]` to `signals[i]` in parallel and folds the noise reference in order.
fn correct<T: Real>(items: &[(&EqualizerModel<T>, &Observation<T>)], det: &DetectorModel<T>) -> Result<EqualizedSignals<T>> {
    if items.is_empty() {
        return Err(Error::Empty("no signals survived routing".into()));
    }
    let out: Vec<(T, T, T, T)> = items
        .par_iter()
        .map(|(m, obs)| {
            let (a, b) = noise_terms(m, obs, det);
            (obs.1, forward(m, &obs.0), a, b)
        })
        .collect();
    let n0: Vec<T> = out.iter().map(|o| o.2).collect();
    let nu: Vec<T> = out.iter().map(|o| o.3).collect();
    Ok(EqualizedSignals {
        x: out.iter().map(|o| o.0).collect(),
        y: out.iter().map(|o| o.1).collect(),
        n0_ref: mean(&n0),
        nu_ref: mean(&nu),
    })
}

pub fn raw_signals<T: Real>(link: &SimulatedLink<T>) -> (Vec<T>, Vec<T>) {
    link.signals.iter().map(|(p, x)| (*x, optimum_sample(p))).unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct StagedSummary<T> {
    pub stages: usize,
    pub retrains: usize,
    pub first_report: TrainReport<T>,
}

/// Stage-by-stage correction: the first stage trains a model, later stages
/// keep it while the pilot residual stays under the threshold of the last
/// fit and warm-start a retrain otherwise.
pub fn staged_equalization<T: Real>(
    link: &SimulatedLink<T>,
    eq: &EqualizerConfig<T>,
    target: T,
    det: &DetectorModel<T>,
    seed: u64,
) -> Result<(EqualizedSignals<T>, StagedSummary<T>)> {
    let n = link.pilots.len();
    let n_stages = (n / eq.stage_len).max(1);
    let bounds = |s: usize| (s * eq.stage_len, if s + 1 == n_stages { n } else { (s + 1) * eq.stage_len });

    let mut model = init_model(eq.mode, eq.hidden_size, target, &mut stream(seed, "equalizer/init"))?;
    let mut policy: Option<RetrainPolicy<T>> = None;
    let mut first_report = None;
    let mut retrains = 0;
    let mut per_stage = Vec::with_capacity(n_stages);
    for s in 0..n_stages {
        let (lo, hi) = bounds(s);
        let pilots = &link.pilots[lo..hi];
        let must_train = match &policy {
            None => true,
            Some(p) => eq.adaptive && residual_check(&model, pilots, p) == RetrainDecision::Retrain,
        };
        if must_train {
            let mut rng = stream(seed, &format!("equalizer/train/{s}"));
            let (m, report) = train(model, pilots, &eq.hyper, &mut rng)?;
            model = m;
            policy = Some(RetrainPolicy::from_validation(report.final_val_loss, eq.retrain_window)?);
            if first_report.is_none() {
                first_report = Some(report);
            } else {
                retrains += 1;
            }
        }
        per_stage.push(model.clone());
    }
    let items: Vec<_> = (0..n_stages)
        .flat_map(|s| {
            let (lo, hi) = bounds(s);
            link.signals[lo..hi].iter().map(move |o| (s, o))
        })
        .map(|(s, o)| (&per_stage[s], o))
        .collect();
    let signals = correct(&items, det)?;
    let summary =
        StagedSummary { stages: n_stages, retrains, first_report: first_report.expect("first stage always trains") };
    Ok((signals, summary))
}

/// Training mask: a seeded permutation puts the first `fraction·n` indices in training.
pub fn split_mask<T: Real>(n: usize, fraction: T, seed: u64, label: &str) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, label));
    let n_train = (fraction * T::of_usize(n)).floor().to_usize().unwrap_or(0).min(n);
    let mut mask = vec![false; n];
    for &i in &order[..n_train] {
        mask[i] = true;
    }
    mask
}

fn feature<T: Real>(obs: &Observation<T>) -> [T; 2] {
    [obs.1, optimum_sample(&obs.0)]
}

/// Ellipse zones from the pilots selected by `mask` (all pilots when `None`).
pub fn fit_zones<T: Real>(link: &SimulatedLink<T>, mask: Option<&[bool]>, cfg: &ClassifierConfig<T>) -> Result<EllipseZones<T>> {
    let pairs: Vec<(T, T)> = link
        .pilots
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, o)| {
            let f = feature(o);
            (f[0], f[1])
        })
        .collect();
    fit_ellipse_zones(&pairs, &cfg.thresholds)
}

/// Fit quality of one link inside a classified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct MemberFit<T> {
    pub scenario: Scenario,
    /// Validation correlation of each class model on its routed held-out pilots.
    pub per_class_r: [Option<T>; N_CLASSES],
    pub pooled_r: T,
    pub discard_fraction: T,
    pub class_counts: [usize; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedOutcome<T> {
    pub zones: EllipseZones<T>,
    pub knn: KnnModel<T>,
    pub report: ClassReport<T>,
    pub members: Vec<MemberFit<T>>,
    pub per_class_r: [Option<T>; N_CLASSES],
    pub pooled_r: T,
    pub equalized: Vec<EqualizedSignals<T>>,
    pub train_reports: [Option<TrainReport<T>>; N_CLASSES],
}

fn fit_r<T: Real>(pairs: &[(T, T)]) -> Option<T> {
    if pairs.len() < 3 {
        return None;
    }
    let (a, b): (Vec<T>, Vec<T>) = pairs.iter().copied().unzip();
    correlation(&a, &b).ok()
}

/// Classified correction over one or more links.
///
/// Each link is split into training and held-out pairs. Training pilots carry
/// their ellipse label and train the KNN router, one equalizer per class and
/// a pooled baseline on every training pilot. Held-out pilots are routed by
/// the KNN prediction; signals follow the class of their pilot. Pairs whose
/// pilot falls outside the outer ellipse are discarded.
pub fn classified_equalization<T: Real>(
    members: &[(Scenario, &SimulatedLink<T>)],
    zones: EllipseZones<T>,
    cfg: &ClassifierConfig<T>,
    eq: &EqualizerConfig<T>,
    target: T,
    det: &DetectorModel<T>,
    seed: u64,
) -> Result<ClassifiedOutcome<T>> {
    let masks: Vec<Vec<bool>> = members
        .iter()
        .enumerate()
        .map(|(m, (_, link))| split_mask(link.pilots.len(), cfg.train_fraction, seed, &format!("split/{m}")))
        .collect();
    let labels: Vec<Vec<QualityLabel>> = members
        .iter()
        .map(|(_, link)| {
            link.pilots
                .iter()
                .map(|o| {
                    let f = feature(o);
                    label_point(&zones, (f[0], f[1]))
                })
                .collect()
        })
        .collect();

    // Classifier and equalizer training sets.
    let mut knn_x = Vec::new();
    let mut knn_y = Vec::new();
    let mut class_sets: [Vec<Observation<T>>; N_CLASSES] = Default::default();
    let mut pooled_set = Vec::new();
    for (m, (_, link)) in members.iter().enumerate() {
        for (i, obs) in link.pilots.iter().enumerate().filter(|(i, _)| masks[m][*i]) {
            pooled_set.push(*obs);
            if let Some(c) = labels[m][i].index() {
                knn_x.push(feature(obs));
                knn_y.push(labels[m][i]);
                class_sets[c].push(*obs);
            }
        }
    }
    let knn = knn_fit(knn_x, knn_y, cfg.k)?;

    let jobs: Vec<(String, &[Observation<T>])> = (0..N_CLASSES)
        .map(|c| (format!("class/{c}"), class_sets[c].as_slice()))
        .chain(std::iter::once(("pooled".to_string(), pooled_set.as_slice())))
        .collect();
    let trained: Vec<Option<(EqualizerModel<T>, TrainReport<T>)>> = jobs
        .par_iter()
        .map(|(name, set)| -> Result<Option<_>> {
            if set.len() < MIN_TRAIN_PILOTS {
                return Ok(None);
            }
            let init = init_model(eq.mode, eq.hidden_size, target, &mut stream(seed, &format!("equalizer/init/{name}")))?;
            train(init, set, &eq.hyper, &mut stream(seed, &format!("equalizer/train/{name}"))).map(Some)
        })
        .collect::<Result<_>>()?;
    let pooled = trained[N_CLASSES]
        .as_ref()
        .map(|(m, _)| m.clone())
        .ok_or_else(|| Error::Precision("too few pilots for the pooled equalizer".into()))?;
    let class_models: Vec<Option<&EqualizerModel<T>>> = trained[..N_CLASSES].iter().map(|t| t.as_ref().map(|(m, _)| m)).collect();

    // Route held-out pilots.
    let mut held_features = Vec::new();
    let mut held_index = Vec::new();
    for (m, (_, link)) in members.iter().enumerate() {
        for (i, obs) in link.pilots.iter().enumerate() {
            if !masks[m][i] && labels[m][i] != QualityLabel::Discard {
                held_features.push(feature(obs));
                held_index.push((m, i));
            }
        }
    }
    let predicted: Vec<(QualityLabel, [T; N_CLASSES])> =
        held_features.par_iter().map(|f| knn_predict_scored(&knn, *f)).collect();
    let truth: Vec<QualityLabel> = held_index.iter().map(|&(m, i)| labels[m][i]).collect();
    let pred_labels: Vec<QualityLabel> = predicted.iter().map(|p| p.0).collect();
    let scores: Vec<[T; N_CLASSES]> = predicted.iter().map(|p| p.1).collect();
    let report = classification_report(&pred_labels, &truth, &scores)?;

    let mut routes: Vec<Vec<QualityLabel>> = labels.clone();
    for (&(m, i), &(p, _)) in held_index.iter().zip(&predicted) {
        routes[m][i] = p;
    }

    // Validation fits on held-out pilots.
    let mut all_class_pairs: [Vec<(T, T)>; N_CLASSES] = Default::default();
    let mut all_pooled_pairs = Vec::new();
    let mut fits = Vec::with_capacity(members.len());
    for (m, (scenario, link)) in members.iter().enumerate() {
        let mut class_pairs: [Vec<(T, T)>; N_CLASSES] = Default::default();
        let mut pooled_pairs = Vec::new();
        for (i, obs) in link.pilots.iter().enumerate().filter(|(i, _)| !masks[m][*i]) {
            let want = target * obs.1;
            pooled_pairs.push((forward(&pooled, &obs.0), want));
            if let Some(c) = routes[m][i].index() {
                if let Some(model) = class_models[c] {
                    class_pairs[c].push((forward(model, &obs.0), want));
                }
            }
        }
        let mut class_counts = [0usize; N_CLASSES];
        for l in &labels[m] {
            if let Some(c) = l.index() {
                class_counts[c] += 1;
            }
        }
        let discards = labels[m].iter().filter(|l| **l == QualityLabel::Discard).count();
        fits.push(MemberFit {
            scenario: *scenario,
            per_class_r: std::array::from_fn(|c| fit_r(&class_pairs[c])),
            pooled_r: fit_r(&pooled_pairs).unwrap_or_else(T::zero),
            discard_fraction: T::of_usize(discards) / T::of_usize(link.pilots.len().max(1)),
            class_counts,
        });
        for c in 0..N_CLASSES {
            all_class_pairs[c].extend_from_slice(&class_pairs[c]);
        }
        all_pooled_pairs.extend(pooled_pairs);
    }

    let mut equalized = Vec::with_capacity(members.len());
    for (m, (_, link)) in members.iter().enumerate() {
        let items: Vec<_> = link
            .signals
            .iter()
            .enumerate()
            .filter_map(|(i, obs)| routes[m][i].index().and_then(|c| class_models[c]).map(|model| (model, obs)))
            .collect();
        equalized.push(correct(&items, det)?);
    }

    let mut train_reports: [Option<TrainReport<T>>; N_CLASSES] = Default::default();
    for (slot, t) in train_reports.iter_mut().zip(&trained) {
        *slot = t.as_ref().map(|(_, r)| r.clone());
    }
    Ok(ClassifiedOutcome {
        zones,
        knn,
        report,
        members: fits,
        per_class_r: std::array::from_fn(|c| fit_r(&all_class_pairs[c])),
        pooled_r: fit_r(&all_pooled_pairs).unwrap_or_else(T::zero),
        equalized,
        train_reports,
    })
}
