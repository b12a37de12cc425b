//! Classifier and per-class equalizers on a mix of turbulence presets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClassifierConfig, EqualizerConfig, ExperimentConfig, Scenario, SCHEMA_VERSION};
use super::pipeline::{classified_equalization, fit_zones, split_mask, MemberFit};
use super::report::{all_pass, Check};
use super::simulate::{simulate_link, SimulatedLink};
use crate::classifier::{ClassReport, EllipseZones, KnnModel, N_CLASSES};
use crate::error::{Error, Result, StageContext};
use crate::scalar::{mean, Real};

pub const MIN_ACCURACY: f64 = 0.95;
pub const MIN_AUC: f64 = 0.95;
pub const MIN_CLASS_R: f64 = 0.90;
pub const MAX_POOLED_R: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ClassifyConfig<T> {
    pub schema_version: u32,
    pub seed: u64,
    pub members: Vec<ExperimentConfig<T>>,
    /// Member whose training pilots define the ellipse zones.
    pub reference_index: usize,
    pub classifier: ClassifierConfig<T>,
    pub equalizer: EqualizerConfig<T>,
}

impl<T: Real> ClassifyConfig<T> {
    /// Weak, medium and strong presets with the weak preset as zone reference.
    pub fn from_presets() -> Result<Self> {
        let members: Vec<ExperimentConfig<T>> =
            Scenario::TURBULENT.iter().map(|&s| ExperimentConfig::preset(s)).collect::<Result<_>>()?;
        let classifier = members[0].classifier.ok_or_else(|| Error::config("weak preset lacks a classifier"))?;
        Ok(Self { schema_version: SCHEMA_VERSION, seed: 1, equalizer: members[0].equalizer, members, reference_index: 0, classifier })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("unsupported schema_version"));
        }
        if self.reference_index >= self.members.len() {
            return Err(Error::config("reference_index is out of range"));
        }
        let det = self.members[0].detector;
        if self.members.iter().any(|m| m.detector != det) {
            return Err(Error::config("mix members must share one detector"));
        }
        self.classifier.validate()?;
        self.equalizer.validate()?;
        self.members.iter().try_for_each(ExperimentConfig::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ClassifyRecord<T> {
    pub zones: EllipseZones<T>,
    pub report: ClassReport<T>,
    pub members: Vec<MemberFit<T>>,
    pub per_class_r: [Option<T>; N_CLASSES],
    pub mean_per_class_r: T,
    pub pooled_r: T,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub struct ClassifyOutput<T> {
    pub record: ClassifyRecord<T>,
    pub knn: KnnModel<T>,
    /// Reference-member pilots as `(x, y)` pairs, for the label dataset.
    pub reference_pairs: Vec<(T, T)>,
}

fn class_checks<T: Real>(
    report: &ClassReport<T>,
    members: &[MemberFit<T>],
    mean_r: f64,
    pooled_r: f64,
) -> Vec<Check> {
    let mut checks = vec![Check::at_least("knn accuracy", report.accuracy.to_f64_lossy(), MIN_ACCURACY)];
    for (c, auc) in report.per_class_auc.iter().enumerate() {
        checks.push(Check::at_least(&format!("auc class {c}"), auc.to_f64_lossy(), MIN_AUC));
    }
    for m in members {
        for (c, r) in m.per_class_r.iter().enumerate() {
            let v = r.map_or(f64::NAN, |r| r.to_f64_lossy());
            let mut check = Check::at_least(&format!("{} class {c} fit R", m.scenario.tag()), v, MIN_CLASS_R);
            check.pass &= v.is_finite();
            checks.push(check);
        }
        if matches!(m.scenario, Scenario::FreeSpaceMedium | Scenario::FreeSpaceStrong) {
            let rs: Vec<f64> = m.per_class_r.iter().flatten().map(|r| r.to_f64_lossy()).collect();
            let member_mean = rs.iter().sum::<f64>() / rs.len().max(1) as f64;
            let pooled = m.pooled_r.to_f64_lossy();
            checks.push(Check::below(&format!("{} pooled R below per-class mean", m.scenario.tag()), pooled, member_mean));
        }
    }
    checks.push(Check::at_most("pooled fit R", pooled_r, MAX_POOLED_R));
    checks.push(Check::below("pooled R below per-class mean", pooled_r, mean_r));
    checks
}

/// Simulates every member, trains the router and equalizers and scores them.
pub fn classify_report<T: Real>(cfg: &ClassifyConfig<T>) -> Result<ClassifyOutput<T>> {
    cfg.validate()?;
    let links: Vec<SimulatedLink<T>> = cfg
        .members
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut m = m.clone();
            m.seed = cfg.seed;
            simulate_link(&m, &format!("member/{i}/"))
        })
        .collect::<Result<_>>()?;
    let r = cfg.reference_index;
    let mask = split_mask(links[r].pilots.len(), cfg.classifier.train_fraction, cfg.seed, &format!("split/{r}"));
    let zones = fit_zones(&links[r], Some(&mask), &cfg.classifier).stage("classify")?;

    let mean_t = mean(&cfg.members.iter().map(|m| m.theory_transmittance()).collect::<Vec<_>>());
    let det = cfg.members[0].detector;
    let target = (det.eta * mean_t).sqrt();
    let members: Vec<(Scenario, &SimulatedLink<T>)> =
        cfg.members.iter().zip(&links).map(|(m, l)| (m.scenario, l)).collect();
    let out = classified_equalization(&members, zones, &cfg.classifier, &cfg.equalizer, target, &det, cfg.seed)
        .stage("equalize")?;

    let rs: Vec<T> = out.per_class_r.iter().flatten().copied().collect();
    let mean_per_class_r = if rs.is_empty() { T::zero() } else { mean(&rs) };
    let checks = class_checks(&out.report, &out.members, mean_per_class_r.to_f64_lossy(), out.pooled_r.to_f64_lossy());
    let reference_pairs = links[r].pilots.iter().map(|(p, x)| (*x, p.samples[p.osp_index])).collect();
    Ok(ClassifyOutput {
        record: ClassifyRecord {
            zones: out.zones,
            report: out.report,
            members: out.members,
            per_class_r: out.per_class_r,
            mean_per_class_r,
            pooled_r: out.pooled_r,
            pass: all_pass(&checks),
            checks,
        },
        knn: out.knn,
        reference_pairs,
    })
}
