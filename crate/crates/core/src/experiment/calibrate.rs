//! Derivation of the fiber preset's fading constants from the raw targets.
//!
//! The pooled raw estimator on a link with stage fading `I` and per-pulse
//! phase jitter of variance `s_f` converges to `T_raw = T_th·m1²` and
//! `ε_raw = V_A(u − 1) + ε_ch·u`, where `m1 = E[√I cos Δφ]` and
//! `u = E[I]/m1²`. For log-normal `I` with mean `μ` and log-variance `s`,
//! `u = exp(s/4 + s_f)` and `m1² = μ/u`, so both constants follow in closed
//! form. A Monte Carlo pass over the same laws confirms the inversion.
//!
//! The equalized transmittance sits below theory because a least-squares fit
//! on noisy pilots of amplitude `A` shrinks the gain by
//! `1/(1 + σ²/(η·T_th·I·A²))`. To first order in that shrinkage,
//! `T_eq = T_th·E[cos Δφ]²·(1 − σ²·E[1/I]/(η·T_th·A²))²`, which fixes `A`.

use serde::{Deserialize, Serialize};

use super::config::{CalibrationRecord, ExperimentConfig, Scenario, SCHEMA_VERSION};
use super::report::{all_pass, Check};
use crate::channel::{fluctuation_moments, Fading, LogNormalParams, PhaseNoiseConfig};
use crate::error::{Error, Result};
use crate::estimation::fluctuation_estimators;
use crate::rng::stream;
use crate::scalar::Real;

/// Relative tolerance for the Monte Carlo confirmation.
pub const CALIBRATION_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct CalibrationTargets<T> {
    pub schema_version: u32,
    pub seed: u64,
    pub target_transmittance: T,
    pub target_excess_noise: T,
    pub target_equalized_transmittance: T,
    pub pulse_phase_variance: T,
    pub moment_samples: usize,
}

impl<T: Real> Default for CalibrationTargets<T> {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            target_transmittance: T::lit(0.5412),
            target_excess_noise: T::lit(0.0429),
            target_equalized_transmittance: T::lit(0.6261),
            pulse_phase_variance: T::lit(3e-4),
            moment_samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct CalibrationResult<T> {
    pub mean_intensity: T,
    pub log_variance: T,
    /// `E[I]/E[√I cos Δφ]²`
    pub noise_inflation: T,
    pub pilot_amplitude: T,
    pub predicted_transmittance: T,
    pub predicted_excess_noise: T,
    pub matches_shipped_preset: bool,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub preset: ExperimentConfig<T>,
}

/// Calibrates `base` (normally the fiber preset) to the raw targets and the
/// equalized transmittance.
pub fn calibrate<T: Real>(targets: &CalibrationTargets<T>, base: &ExperimentConfig<T>) -> Result<CalibrationResult<T>> {
    if targets.schema_version != SCHEMA_VERSION {
        return Err(Error::config("unsupported schema_version"));
    }
    let v_a = base.protocol.v_a;
    let eps_ch = base.channel.excess_noise;
    let t_th = base.theory_transmittance();
    let sf = targets.pulse_phase_variance;
    let u = (targets.target_excess_noise + v_a) / (v_a + eps_ch);
    let log_variance = T::lit(4.0) * (u.ln() - sf);
    if !(log_variance >= T::zero()) {
        return Err(Error::domain("phase jitter alone exceeds the raw excess-noise target"));
    }
    let mean_intensity = targets.target_transmittance / t_th * u;
    let ln = LogNormalParams { mean_intensity, scint_index: log_variance };
    ln.validate().map_err(|_| Error::domain("calibrated mean intensity leaves (0, 1]"))?;

    let det = base.detector;
    let sigma2 = det.n0 + det.nu_el + det.eta * t_th * eps_ch;
    let inv_mean = log_variance.exp() / mean_intensity;
    let shrink = T::one() - (targets.target_equalized_transmittance / t_th).sqrt() * (sf / T::lit(2.0)).exp();
    if !(shrink > T::zero()) {
        return Err(Error::domain("the equalized target must lie below the phase-limited theory value"));
    }
    let pilot_amplitude = (sigma2 * inv_mean / (det.eta * t_th * shrink)).sqrt();

    let mut preset = base.clone();
    preset.protocol.pilot_amplitude = pilot_amplitude;
    preset.channel.fading = Fading::LogNormal(ln);
    preset.channel.pulse_phase = PhaseNoiseConfig::from_variance(sf)?;
    preset.channel.residual_phase = sf;
    let method = base.calibration.as_ref().map(|c| c.method.clone()).unwrap_or_default();
    preset.calibration = Some(CalibrationRecord {
        target_transmittance: targets.target_transmittance,
        target_excess_noise: targets.target_excess_noise,
        target_equalized_transmittance: targets.target_equalized_transmittance,
        pulse_phase_variance: sf,
        method,
    });
    preset.validate()?;

    let est = preset.estimation_config()?;
    let mut rng = stream(targets.seed, "calibrate/moments");
    let moments = fluctuation_moments(&preset.channel.fading, &preset.channel.pulse_phase, targets.moment_samples, &mut rng)?;
    let (t_hat, floor) = fluctuation_estimators(&moments, &est)?;
    let predicted_transmittance = t_th * t_hat * t_hat / preset.detector.eta;
    let inflation = moments.e_a2 / (moments.e_a_cos * moments.e_a_cos);
    let predicted_excess_noise = eps_ch * inflation + floor;

    let shipped = ExperimentConfig::<T>::preset(Scenario::Fiber10km)?;
    let close = |a: T, b: T| (a - b).abs() <= T::lit(1e-12) * b.abs().max(T::one());
    let matches_shipped_preset = close(shipped.protocol.pilot_amplitude, pilot_amplitude)
        && match shipped.channel.fading {
            Fading::LogNormal(p) => close(p.mean_intensity, mean_intensity) && close(p.scint_index, log_variance),
            _ => false,
        };
    let rel = |a: T, b: T| ((a - b) / b).to_f64_lossy();
    let checks = vec![
        Check::within("predicted raw transmittance (relative)", rel(predicted_transmittance, targets.target_transmittance), 0.0, CALIBRATION_TOL),
        Check::within("predicted raw excess noise (relative)", rel(predicted_excess_noise, targets.target_excess_noise), 0.0, CALIBRATION_TOL),
    ];
    Ok(CalibrationResult {
        mean_intensity,
        log_variance,
        noise_inflation: u,
        pilot_amplitude,
        predicted_transmittance,
        predicted_excess_noise,
        matches_shipped_preset,
        pass: all_pass(&checks),
        checks,
        preset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_the_shipped_preset() {
        let base = ExperimentConfig::<f64>::preset(Scenario::Fiber10km).unwrap();
        let targets = CalibrationTargets { moment_samples: 200_000, ..CalibrationTargets::default() };
        let out = calibrate(&targets, &base).unwrap();
        assert!(out.matches_shipped_preset);
        assert!(out.pass, "{:?}", out.checks);
        assert_eq!(out.preset.channel.pulse_phase, base.channel.pulse_phase);
    }

    #[test]
    fn impossible_targets_are_rejected() {
        let base = ExperimentConfig::<f64>::preset(Scenario::Fiber10km).unwrap();
        let targets = CalibrationTargets { pulse_phase_variance: 0.05, moment_samples: 20_000, ..CalibrationTargets::default() };
        assert!(matches!(calibrate(&targets, &base), Err(Error::Domain(_))));
    }
}
