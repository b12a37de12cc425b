//! Maximum-likelihood estimation of the linear OSP law `y = t·x + z`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::FluctuationMoments;
use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Real};
use crate::signal::DetectorModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig<T> {
    pub eps_pe: T,
    pub z_score: T,
    pub eta: T,
    pub nu_el: T,
    pub n0: T,
    pub v_a: T,
}

impl<T: Real> EstimationConfig<T> {
    pub fn new(eps_pe: T, det: &DetectorModel<T>, v_a: T) -> Result<Self> {
        let cfg = Self { eps_pe, z_score: z_for(eps_pe)?, eta: det.eta, nu_el: det.nu_el, n0: det.n0, v_a };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = z_for(self.eps_pe)?;
        if (self.z_score - expected).abs() > T::lit(1e-6) * expected {
            return Err(Error::config("z_score must equal the inverse normal at 1 − ε_PE/2"));
        }
        if !(self.eta > T::zero() && self.n0 > T::zero() && self.nu_el >= T::zero() && self.v_a > T::zero()) {
            return Err(Error::config("estimation constants out of range"));
        }
        Ok(())
    }

    /// Same constants with a different noise reference (used after equalization,
    /// where the effective vacuum and electronic noise are reshaped by the network).
    pub fn with_noise_reference(&self, n0: T, nu_el: T) -> Self {
        Self { n0, nu_el, ..*self }
    }
}

/// Two-sided normal quantile `z_{ε/2}`.
pub fn z_for<T: Real>(eps_pe: T) -> Result<T> {
    if !(eps_pe > T::zero() && eps_pe < T::one()) {
        return Err(Error::config("ε_PE must lie in (0, 1)"));
    }
    let normal = Normal::standard();
    Ok(T::lit(normal.inverse_cdf(1.0 - eps_pe.to_f64_lossy() / 2.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubChannelEstimate<T> {
    pub m: usize,
    pub t_hat: T,
    #[serde(rename = "dt")]
    pub t_half_width: T,
    pub sigma2_hat: T,
    #[serde(rename = "dsigma")]
    pub sigma_half_width: T,
    #[serde(rename = "T_hat")]
    pub transmittance_hat: T,
    pub eps_hat: T,
    /// Set when a negative excess-noise estimate was clamped to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEstimate<T> {
    #[serde(rename = "T_mean")]
    pub transmittance_mean: T,
    pub eps_mean: T,
    pub weights: Vec<T>,
    pub per_channel: Vec<SubChannelEstimate<T>>,
}

/// `t̂ = Σxy/Σx²`, `σ̂² = mean (y − t̂x)²`.
pub fn mle_estimate<T: Real>(x: &[T], y: &[T]) -> Result<(T, T)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::contract(format!(
            "need equal-length samples with m ≥ 2 (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let sxx = ordered_sum(x.iter().map(|&v| v * v));
    if !(sxx > T::zero()) {
        return Err(Error::degenerate("regressor is identically zero"));
    }
    let sxy = ordered_sum(x.iter().zip(y).map(|(&a, &b)| a * b));
    let t_hat = sxy / sxx;
    let sigma2 = ordered_sum(x.iter().zip(y).map(|(&a, &b)| {
        let r = b - t_hat * a;
        r * r
    })) / T::of_usize(x.len());
    Ok((t_hat, sigma2))
}

/// Half-widths `(Δt, Δσ̂²)` at confidence `1 − ε_PE`.
pub fn confidence_interval<T: Real>(sigma2_hat: T, m: usize, cfg: &EstimationConfig<T>) -> (T, T) {
    let mt = T::of_usize(m);
    let dt = cfg.z_score * (sigma2_hat / (mt * cfg.v_a)).sqrt();
    let dsigma = cfg.z_score * sigma2_hat * T::SQRT_2() / mt.sqrt();
    (dt, dsigma)
}

/// Inverts `t = √(ηT)` and `σ² = N_0 + ηTε + ν_el`. Returns `(T̂, ε̂, clamped)`.
pub fn derive_params<T: Real>(t_hat: T, sigma2_hat: T, cfg: &EstimationConfig<T>) -> Result<(T, T, bool)> {
    if !(cfg.eta > T::zero()) {
        return Err(Error::domain("detector efficiency must be positive"));
    }
    let transmittance = t_hat * t_hat / cfg.eta;
    if !(transmittance > T::zero()) {
        return Err(Error::domain("excess noise undefined at zero estimated transmittance"));
    }
    let eps = (sigma2_hat - (cfg.n0 + cfg.nu_el)) / (cfg.eta * transmittance);
    Ok(if eps < T::zero() { (transmittance, T::zero(), true) } else { (transmittance, eps, false) })
}

/// Full per-sub-channel estimate from paired (sent, measured) values.
pub fn estimate_subchannel<T: Real>(x: &[T], y: &[T], cfg: &EstimationConfig<T>) -> Result<SubChannelEstimate<T>> {
    let (t_hat, sigma2_hat) = mle_estimate(x, y)?;
    let (t_half_width, sigma_half_width) = confidence_interval(sigma2_hat, x.len(), cfg);
    let (transmittance_hat, eps_hat, clamped) = derive_params(t_hat, sigma2_hat, cfg)?;
    Ok(SubChannelEstimate {
        m: x.len(),
        t_hat,
        t_half_width,
        sigma2_hat,
        sigma_half_width,
        transmittance_hat,
        eps_hat,
        clamped,
    })
}

/// Correlation between `x` and Bob's variable implied by `(T̂, ε̂)` over the
/// detector's own noise floor in `cfg`. Unlike the sample correlation it does
/// not charge the equalizer for amplifying vacuum noise in deep fades.
pub fn implied_correlation<T: Real>(est: &SubChannelEstimate<T>, cfg: &EstimationConfig<T>) -> T {
    let signal = cfg.eta * est.transmittance_hat * cfg.v_a;
    let noise = cfg.n0 + cfg.nu_el + cfg.eta * est.transmittance_hat * est.eps_hat;
    (signal / (signal + noise)).sqrt()
}

pub fn aggregate_subchannels<T: Real>(estimates: &[SubChannelEstimate<T>], weights: &[T]) -> Result<AggregateEstimate<T>> {
    if estimates.is_empty() || estimates.len() != weights.len() {
        return Err(Error::contract("one weight per sub-channel estimate is required"));
    }
    if weights.iter().any(|&w| !(w >= T::zero())) {
        return Err(Error::contract("weights must be nonnegative"));
    }
    let total = ordered_sum(weights.iter().copied());
    if (total - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(8.0)) * T::of_usize(weights.len()) {
        return Err(Error::contract(format!("weights sum to {total}, not 1")));
    }
    let transmittance_mean = ordered_sum(estimates.iter().zip(weights).map(|(e, &w)| w * e.transmittance_hat));
    let eps_mean = ordered_sum(estimates.iter().zip(weights).map(|(e, &w)| w * e.eps_hat));
    Ok(AggregateEstimate {
        transmittance_mean,
        eps_mean,
        weights: weights.to_vec(),
        per_channel: estimates.to_vec(),
    })
}

/// Equal weights `1/M`.
pub fn uniform_weights<T: Real>(m: usize) -> Vec<T> {
    vec![T::one() / T::of_usize(m); m]
}

/// Fluctuation-aware predictions: amplitude slope `√η·E[A cos Δφ]` and the
/// excess-noise floor `V_A·((E[A²cos²] + E[A²sin²])/E[A cos]² − 1)` that
/// fading and phase jitter add on top of the channel noise.
pub fn fluctuation_estimators<T: Real>(moments: &FluctuationMoments<T>, cfg: &EstimationConfig<T>) -> Result<(T, T)> {
    let c = moments.e_a_cos;
    if c == T::zero() {
        return Err(Error::degenerate("E[A cos Δφ] vanishes; slope is unidentifiable"));
    }
    let t_hat = cfg.eta.sqrt() * c;
    let floor = cfg.v_a * ((moments.e_a2_cos2 + moments.e_a2_sin2) / (c * c) - T::one());
    Ok((t_hat, floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::FluctuationMoments;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> EstimationConfig<f64> {
        EstimationConfig::new(0.05, &DetectorModel::default(), 4.0).unwrap()
    }

    fn synthetic(t: f64, sigma2: f64, m: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..m).map(|_| 2.0 * f64::sample_std_normal(&mut r)).collect();
        let y = x.iter().map(|&v| t * v + sigma2.sqrt() * f64::sample_std_normal(&mut r)).collect();
        (x, y)
    }

    #[test]
    fn z_score_matches_table() {
        assert!((cfg().z_score - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(EstimationConfig::new(0.0, &DetectorModel::default(), 4.0f64).is_err());
    }

    #[test]
    fn noiseless_regression() {
        let x: Vec<f64> = (1..=50).map(|i| i as f64 * 0.3 - 7.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v).collect();
        let (t, s2) = mle_estimate(&x, &y).unwrap();
        assert_relative_eq!(t, 0.7, max_relative = 1e-14);
        assert!(s2 < 1e-28);
        assert!(matches!(mle_estimate(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(matches!(mle_estimate(&[1.0], &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn interval_arithmetic() {
        let c = EstimationConfig { z_score: 1.96, ..cfg() };
        let (dt, _) = confidence_interval(1.0, 10_000, &c);
        assert_relative_eq!(dt, 0.0098, max_relative = 1e-12);
        let (dt4, ds4) = confidence_interval(1.0, 40_000, &c);
        let (_, ds) = confidence_interval(1.0, 10_000, &c);
        assert_relative_eq!(dt4 * 2.0, dt, max_relative = 1e-12);
        assert_relative_eq!(ds4 * 2.0, ds, max_relative = 1e-12);
        assert_eq!(confidence_interval(0.0, 100, &c), (0.0, 0.0));
    }

    #[test]
    fn inversion_round_trips() {
        let c = cfg();
        let (t_cap, eps, clamped) = derive_params((0.6f64 * 0.5).sqrt(), 1.01 + 0.6 * 0.5 * 0.04, &c).unwrap();
        assert_relative_eq!(t_cap, 0.5, max_relative = 1e-14);
        assert_relative_eq!(eps, 0.04, max_relative = 1e-12);
        assert!(!clamped);
        let (_, eps0, _) = derive_params(0.5, c.n0 + c.nu_el, &c).unwrap();
        assert_eq!(eps0, 0.0);
        let (_, eps_neg, flag) = derive_params(0.5, 0.9, &c).unwrap();
        assert_eq!((eps_neg, flag), (0.0, true));
        assert!(matches!(derive_params(0.0, 1.0, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn consistency_error_halves_when_m_quadruples() {
        let err = |m: usize| {
            (0..200)
                .map(|s| {
                    let (x, y) = synthetic(0.6, 0.1, m, 1000 + s);
                    (mle_estimate(&x, &y).unwrap().0 - 0.6).abs()
                })
                .sum::<f64>()
                / 200.0
        };
        let ratio = err(2000) / err(8000);
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn coverage_is_near_nominal() {
        let c = cfg();
        let trials = 400;
        let hits = (0..trials)
            .filter(|&s| {
                let (x, y) = synthetic(0.6, 0.1, 10_000, s);
                let e = estimate_subchannel(&x, &y, &c).unwrap();
                (e.t_hat - 0.6).abs() <= e.t_half_width
            })
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((0.92..=0.98).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn aggregation() {
        let (x, y) = synthetic(0.6, 0.1, 1000, 1);
        let e = estimate_subchannel(&x, &y, &cfg()).unwrap();
        let single = aggregate_subchannels(&[e], &[1.0]).unwrap();
        assert_eq!(single.transmittance_mean, e.transmittance_hat);
        assert_eq!(single.eps_mean, e.eps_hat);

        let mut a = e;
        let mut b = e;
        a.transmittance_hat = 0.4;
        b.transmittance_hat = 0.6;
        let agg = aggregate_subchannels(&[a, b], &uniform_weights(2)).unwrap();
        assert_relative_eq!(agg.transmittance_mean, 0.5, max_relative = 1e-15);
        assert!(matches!(aggregate_subchannels(&[a, b], &[0.5, 0.6]), Err(Error::Contract(_))));
        assert!(aggregate_subchannels(&[a, b], &[1.0]).is_err());
    }

    #[test]
    fn fluctuation_floor() {
        let c = cfg();
        let (t, floor) = fluctuation_estimators(&FluctuationMoments::no_fluctuation(), &c).unwrap();
        assert_relative_eq!(t, 0.6f64.sqrt());
        assert_eq!(floor, 0.0);

        let m = FluctuationMoments::from_intensity_moments(1.0, 1.0, 0.1);
        let (_, floor) = fluctuation_estimators(&m, &c).unwrap();
        assert_relative_eq!(floor, 4.0 * (0.1f64.exp() - 1.0), max_relative = 1e-12);

        let mut last = -1.0;
        for s2 in [0.0, 0.05, 0.1, 0.2] {
            let (_, f) = fluctuation_estimators(&FluctuationMoments::from_intensity_moments(0.97, 1.0, s2), &c).unwrap();
            assert!(f >= last);
            last = f;
        }
        let zero = FluctuationMoments { e_a_cos: 0.0, ..m };
        assert!(matches!(fluctuation_estimators(&zero, &c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn floor_matches_regression_on_phase_noisy_channel() {
        // y = √η (x cos φ − p sin φ) + vacuum/electronic noise, no channel excess noise.
        let c = cfg();
        let sigma2: f64 = 0.1;
        let mut r = ChaCha8Rng::seed_from_u64(77);
        let m = 400_000;
        let (mut xs, mut ys) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for _ in 0..m {
            let x = 2.0 * f64::sample_std_normal(&mut r);
            let p = 2.0 * f64::sample_std_normal(&mut r);
            let (s, co) = (sigma2.sqrt() * f64::sample_std_normal(&mut r)).sin_cos();
            let noise = (c.n0 + c.nu_el).sqrt() * f64::sample_std_normal(&mut r);
            xs.push(x);
            ys.push(c.eta.sqrt() * (x * co - p * s) + noise);
        }
        let est = estimate_subchannel(&xs, &ys, &c).unwrap();
        let moments = FluctuationMoments::from_intensity_moments(1.0, 1.0, sigma2);
        let (t_theory, floor) = fluctuation_estimators(&moments, &c).unwrap();
        assert!((est.t_hat - t_theory).abs() < 3.0 * est.t_half_width);
        // SE of ε̂ ≈ σ̂²√(2/m)/(ηT̂) plus the fading-induced excess.
        assert!((est.eps_hat - floor).abs() < 0.02, "{} vs {floor}", est.eps_hat);
    }

    #[test]
    fn implied_correlation_matches_sample_correlation_at_constant_gain() {
        let c = cfg();
        let (x, y) = synthetic(0.55, 1.2, 200_000, 9);
        let est = estimate_subchannel(&x, &y, &c).unwrap();
        let sample = crate::equalizer::correlation(&x, &y).unwrap();
        assert!((implied_correlation(&est, &c) - sample).abs() < 2e-3);
        let ideal = EstimationConfig::new(0.05, &DetectorModel { eta: 1.0, nu_el: 0.0, n0: 1.0 }, 3.0).unwrap();
        let perfect = SubChannelEstimate { transmittance_hat: 1.0, eps_hat: 0.0, ..est };
        assert_relative_eq!(implied_correlation(&perfect, &ideal), 0.75f64.sqrt(), max_relative = 1e-15);
    }
}
