use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario};
use super::pipeline::{classified_equalization, fit_zones, raw_signals, split_mask, staged_equalization, MemberFit, StagedSummary};
use super::simulate::simulate_link;
use crate::classifier::{ClassReport, EllipseZones};
use crate::error::{Error, Result, StageContext};
use crate::estimation::{estimate_subchannel, SubChannelEstimate};
use crate::scalar::Real;
use crate::security::{key_rate_at, KeyRateReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct TheoryPoint<T> {
    pub transmittance: T,
    pub excess_noise: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct KeyRates<T> {
    pub raw: KeyRateReport<T>,
    pub equalized: KeyRateReport<T>,
    pub theory: KeyRateReport<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ClassificationSummary<T> {
    pub zones: EllipseZones<T>,
    pub report: ClassReport<T>,
    pub fit: MemberFit<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct RunDiagnostics<T> {
    pub clamp_events: usize,
    pub equalized_signals: usize,
    pub n0_reference: T,
    pub nu_el_reference: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub staged: Option<StagedSummary<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct RunRecord<T> {
    pub config: ExperimentConfig<T>,
    pub raw: SubChannelEstimate<T>,
    pub equalized: SubChannelEstimate<T>,
    pub theory: TheoryPoint<T>,
    /// `(ε_raw − ε_eq)/ε_raw`; zero when the raw estimate is already noise-free.
    pub suppression_ratio: T,
    pub classification: Option<ClassificationSummary<T>>,
    pub key_rates: KeyRates<T>,
    pub diagnostics: RunDiagnostics<T>,
}

pub fn suppression_ratio<T: Real>(eps_raw: T, eps_eq: T) -> T {
    if eps_raw > T::zero() {
        (eps_raw - eps_eq) / eps_raw
    } else {
        T::zero()
    }
}

/// Pilots for the zone reference when it differs from the run's own scenario.
fn reference_config<T: Real>(cfg: &ExperimentConfig<T>, reference: Scenario) -> Result<ExperimentConfig<T>> {
    let mut r = ExperimentConfig::preset(reference)?;
    r.seed = cfg.seed;
    r.n_pulses = cfg.n_pulses;
    r.protocol = cfg.protocol;
    r.detector = cfg.detector;
    Ok(r)
}

/// Modulate, transmit, detect, equalize, estimate and rate one configuration.
pub fn run_experiment<T: Real>(cfg: &ExperimentConfig<T>) -> Result<RunRecord<T>> {
    cfg.validate()?;
    let est = cfg.estimation_config()?;
    let link = simulate_link(cfg, "")?;
    let (x, y) = raw_signals(&link);
    let raw = estimate_subchannel(&x, &y, &est).stage("estimate_raw")?;
    let target = cfg.target_slope();

    let (signals, classification, staged) = match &cfg.classifier {
        Some(ccfg) => {
            let zones = if ccfg.reference == cfg.scenario {
                let mask = split_mask(cfg.n_pulses, ccfg.train_fraction, cfg.seed, "split/0");
                fit_zones(&link, Some(&mask), ccfg)
            } else {
                let rcfg = reference_config(cfg, ccfg.reference)?;
                fit_zones(&simulate_link(&rcfg, "reference/")?, None, ccfg)
            }
            .stage("classify")?;
            let mut out = classified_equalization(
                &[(cfg.scenario, &link)],
                zones,
                ccfg,
                &cfg.equalizer,
                target,
                &cfg.detector,
                cfg.seed,
            )
            .stage("equalize")?;
            let summary = ClassificationSummary { zones: out.zones, report: out.report, fit: out.members.remove(0) };
            (out.equalized.remove(0), Some(summary), None)
        }
        None => {
            let (s, summary) =
                staged_equalization(&link, &cfg.equalizer, target, &cfg.detector, cfg.seed).stage("equalize")?;
            (s, None, Some(summary))
        }
    };

    let eq_est = est.with_noise_reference(signals.n0_ref, signals.nu_ref);
    let equalized = estimate_subchannel(&signals.x, &signals.y, &eq_est).stage("estimate_equalized")?;
    let theory = TheoryPoint { transmittance: cfg.theory_transmittance(), excess_noise: cfg.channel.excess_noise };

    let rate = |t: T, e: T| {
        key_rate_at(cfg.protocol.v_a, t, e, cfg.detector.eta, cfg.detector.nu_el, &cfg.security).stage("key_rate")
    };
    let key_rates = KeyRates {
        raw: rate(raw.transmittance_hat, raw.eps_hat)?,
        equalized: rate(equalized.transmittance_hat, equalized.eps_hat)?,
        theory: rate(theory.transmittance, theory.excess_noise)?,
    };
    if !key_rates.raw.k_rate.is_finite() || !key_rates.equalized.k_rate.is_finite() {
        return Err(Error::Stage { stage: "key_rate", source: Box::new(Error::domain("non-finite key rate")) });
    }
    Ok(RunRecord {
        config: cfg.clone(),
        suppression_ratio: suppression_ratio(raw.eps_hat, equalized.eps_hat),
        raw,
        equalized,
        theory,
        classification,
        key_rates,
        diagnostics: RunDiagnostics {
            clamp_events: link.clamp_events,
            equalized_signals: signals.x.len(),
            n0_reference: signals.n0_ref,
            nu_el_reference: signals.nu_ref,
            staged,
        },
    })
}
