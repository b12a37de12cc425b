//! Attenuation laws, turbulence fading and phase-noise models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::DetectorModel;

/// Standard-fiber loss budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberConfig<T> {
    /// dB/km
    pub alpha_f: T,
    pub length_km: T,
}

impl<T: Real> FiberConfig<T> {
    pub fn new(alpha_f: T, length_km: T) -> Result<Self> {
        let cfg = Self { alpha_f, length_km };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_f >= T::zero() && self.length_km >= T::zero()) {
            return Err(Error::config("fiber attenuation and length must be nonnegative"));
        }
        Ok(())
    }
}

/// Free-space link. `alpha_lambda` is in dB/km; when `visibility_km` is set
/// it can be recomputed with [`attenuation_from_visibility`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeSpaceConfig<T> {
    pub alpha_lambda: T,
    pub length_km: T,
    #[serde(default)]
    pub visibility_km: Option<T>,
    pub wavelength_um: T,
    pub q_exponent: T,
}

impl<T: Real> FreeSpaceConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let nonneg = self.alpha_lambda >= T::zero()
            && self.length_km >= T::zero()
            && self.q_exponent >= T::zero()
            && self.visibility_km.is_none_or(|v| v >= T::zero());
        if !nonneg {
            return Err(Error::config("free-space parameters must be nonnegative"));
        }
        if !(self.wavelength_um > T::zero()) {
            return Err(Error::config("wavelength must be positive"));
        }
        Ok(())
    }

    /// Link whose length realizes a given transmittance at `alpha_lambda`.
    pub fn with_target_transmittance(alpha_lambda: T, target: T) -> Result<Self> {
        if !(target > T::zero() && target <= T::one()) || !(alpha_lambda > T::zero()) {
            return Err(Error::config("target transmittance must lie in (0, 1] with positive attenuation"));
        }
        Ok(Self {
            alpha_lambda,
            length_km: -target.ln() / db_to_nepers(alpha_lambda),
            visibility_km: None,
            wavelength_um: T::lit(1.55),
            q_exponent: T::lit(1.3),
        })
    }
}

fn db_to_nepers<T: Real>(alpha_db: T) -> T {
    alpha_db * T::LN_10() / T::lit(10.0)
}

pub fn fiber_transmittance<T: Real>(cfg: &FiberConfig<T>) -> T {
    T::lit(10.0).powf(-cfg.alpha_f * cfg.length_km / T::lit(10.0))
}

/// Lambert law with the dB/km coefficient converted to nepers.
pub fn free_space_transmittance<T: Real>(cfg: &FreeSpaceConfig<T>) -> T {
    (-db_to_nepers(cfg.alpha_lambda) * cfg.length_km).exp()
}

/// Kim-style visibility model: `(3.91 / V) (λ / 0.55 µm)^-q`, in dB/km.
pub fn attenuation_from_visibility<T: Real>(cfg: &FreeSpaceConfig<T>) -> Result<T> {
    match cfg.visibility_km {
        Some(v) if v > T::zero() => {
            Ok(T::lit(3.91) / v * (cfg.wavelength_um / T::lit(0.55)).powf(-cfg.q_exponent))
        }
        _ => Err(Error::domain("visibility must be positive")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaGammaParams<T> {
    pub alpha_eff: T,
    pub beta_eff: T,
    pub sigma2_lnx: T,
    pub sigma2_lny: T,
}

impl<T: Real> GammaGammaParams<T> {
    /// Builds the parameters directly from effective turbulence-cell numbers.
    pub fn from_effective(alpha_eff: T, beta_eff: T) -> Result<Self> {
        if !(alpha_eff > T::zero() && beta_eff > T::zero()) || !alpha_eff.is_finite() || !beta_eff.is_finite() {
            return Err(Error::domain("effective numbers must be positive and finite"));
        }
        Ok(Self {
            alpha_eff,
            beta_eff,
            sigma2_lnx: (T::one() / alpha_eff).ln_1p(),
            sigma2_lny: (T::one() / beta_eff).ln_1p(),
        })
    }

    pub fn scintillation_index(&self) -> T {
        let (a, b) = (self.alpha_eff, self.beta_eff);
        a.recip() + b.recip() + (a * b).recip()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_eff > T::zero() && self.beta_eff > T::zero() {
            Ok(())
        } else {
            Err(Error::config("gamma-gamma effective numbers must be positive"))
        }
    }
}

pub fn gg_params_from_log_variances<T: Real>(sigma2_lnx: T, sigma2_lny: T) -> Result<GammaGammaParams<T>> {
    if !(sigma2_lnx > T::zero() && sigma2_lny > T::zero()) {
        return Err(Error::domain("log-irradiance variances must be strictly positive"));
    }
    Ok(GammaGammaParams {
        alpha_eff: sigma2_lnx.exp_m1().recip(),
        beta_eff: sigma2_lny.exp_m1().recip(),
        sigma2_lnx,
        sigma2_lny,
    })
}

/// Weak-turbulence intensity law. `scint_index` is the variance of `ln I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams<T> {
    pub mean_intensity: T,
    pub scint_index: T,
}

impl<T: Real> LogNormalParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.mean_intensity > T::zero() && self.mean_intensity <= T::one() && self.scint_index >= T::zero() {
            Ok(())
        } else {
            Err(Error::config("log-normal mean must lie in (0, 1] and variance be nonnegative"))
        }
    }
}

/// Intensity fading law applied on top of the deterministic transmittance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fading<T> {
    None,
    LogNormal(LogNormalParams<T>),
    GammaGamma(GammaGammaParams<T>),
}

impl<T: Real> Fading<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Fading::None => Ok(()),
            Fading::LogNormal(p) => p.validate(),
            Fading::GammaGamma(p) => p.validate(),
        }
    }

    /// Analytic E[I].
    pub fn mean(&self) -> T {
        match self {
            Fading::None | Fading::GammaGamma(_) => T::one(),
            Fading::LogNormal(p) => p.mean_intensity,
        }
    }
}

pub fn sample_intensity<T: Real, R: Rng + ?Sized>(dist: &Fading<T>, rng: &mut R) -> T {
    match dist {
        Fading::None => T::one(),
        Fading::LogNormal(p) => {
            let s = p.scint_index;
            let mu = p.mean_intensity.ln() - s / T::lit(2.0);
            (mu + s.sqrt() * T::sample_std_normal(rng)).exp()
        }
        Fading::GammaGamma(p) => {
            let ix = T::sample_gamma(p.alpha_eff, p.alpha_eff.recip(), rng);
            let iy = T::sample_gamma(p.beta_eff, p.beta_eff.recip(), rng);
            ix * iy
        }
    }
}

/// Turbulent phase-noise model. `sigma2_phase` is authoritative at sampling
/// time; use [`PhaseNoiseConfig::from_zernike`] to derive it from optics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseConfig<T> {
    pub c_j: T,
    pub aperture_radius_m: T,
    pub coherence_diameter_m: T,
    pub sigma2_phase: T,
}

impl<T: Real> PhaseNoiseConfig<T> {
    pub fn from_zernike(c_j: T, aperture_radius_m: T, coherence_diameter_m: T) -> Result<Self> {
        let mut cfg = Self {
            c_j,
            aperture_radius_m,
            coherence_diameter_m,
            sigma2_phase: T::zero(),
        };
        cfg.sigma2_phase = phase_variance_zernike(&cfg)?;
        Ok(cfg)
    }

    /// Phase noise specified only by its variance (optics left at unity).
    pub fn from_variance(sigma2_phase: T) -> Result<Self> {
        if !(sigma2_phase >= T::zero()) {
            return Err(Error::domain("phase variance must be nonnegative"));
        }
        Ok(Self {
            c_j: sigma2_phase,
            aperture_radius_m: T::lit(0.5),
            coherence_diameter_m: T::one(),
            sigma2_phase,
        })
    }

    pub fn none() -> Self {
        Self {
            c_j: T::zero(),
            aperture_radius_m: T::lit(0.5),
            coherence_diameter_m: T::one(),
            sigma2_phase: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma2_phase >= T::zero() && self.sigma2_phase.is_finite() {
            Ok(())
        } else {
            Err(Error::config("phase variance must be finite and nonnegative"))
        }
    }
}

pub fn phase_variance_zernike<T: Real>(cfg: &PhaseNoiseConfig<T>) -> Result<T> {
    if !(cfg.coherence_diameter_m > T::zero()) {
        return Err(Error::domain("coherence diameter must be positive"));
    }
    let ratio = T::lit(2.0) * cfg.aperture_radius_m / cfg.coherence_diameter_m;
    Ok(cfg.c_j * ratio * ratio)
}

pub fn sample_phase_drift<T: Real, R: Rng + ?Sized>(cfg: &PhaseNoiseConfig<T>, rng: &mut R) -> T {
    if cfg.sigma2_phase == T::zero() {
        return T::zero();
    }
    cfg.sigma2_phase.sqrt() * T::sample_std_normal(rng)
}

/// Characteristic function of a zero-mean Gaussian phase, `E[cos(ω Δφ)]`.
pub fn char_function<T: Real>(omega: T, sigma2: T) -> T {
    (-omega * omega * sigma2 / T::lit(2.0)).exp()
}

/// Expectations of amplitude/phase products that enter the fluctuation-aware estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationMoments<T> {
    /// E[A cos Δφ]
    pub e_a_cos: T,
    /// E[A sin Δφ]; zero for a symmetric phase law.
    pub e_a_sin: T,
    /// E[A² cos² Δφ]
    pub e_a2_cos2: T,
    /// E[A² sin² Δφ]
    pub e_a2_sin2: T,
    /// E[A²] = E[I]
    pub e_a2: T,
}

impl<T: Real> FluctuationMoments<T> {
    /// Closed form given intensity moments `E[√I]`, `E[I]` and phase variance.
    pub fn from_intensity_moments(e_sqrt_i: T, e_i: T, sigma2: T) -> Self {
        let two = T::lit(2.0);
        let c2 = char_function(two, sigma2);
        Self {
            e_a_cos: char_function(T::one(), sigma2) * e_sqrt_i,
            e_a_sin: T::zero(),
            e_a2_cos2: (T::one() + c2) / two * e_i,
            e_a2_sin2: (T::one() - c2) / two * e_i,
            e_a2: e_i,
        }
    }

    pub fn no_fluctuation() -> Self {
        Self::from_intensity_moments(T::one(), T::one(), T::zero())
    }
}

/// Smallest Monte Carlo budget accepted by [`fluctuation_moments`].
pub const MIN_MOMENT_SAMPLES: usize = 10_000;

/// Monte Carlo estimate of the fluctuation moments from joint draws of `(I, Δφ)`.
///
/// `e_a_sin` is pinned to zero because the phase law is even.
pub fn fluctuation_moments<T: Real, R: Rng + ?Sized>(
    dist: &Fading<T>,
    phase: &PhaseNoiseConfig<T>,
    n_samples: usize,
    rng: &mut R,
) -> Result<FluctuationMoments<T>> {
    if n_samples < MIN_MOMENT_SAMPLES {
        return Err(Error::Precision(format!(
            "{n_samples} samples is below the {MIN_MOMENT_SAMPLES} needed for stable moments"
        )));
    }
    let (mut s_acos, mut s_cos2, mut s_sin2) = (T::zero(), T::zero(), T::zero());
    for _ in 0..n_samples {
        let i = sample_intensity(dist, rng);
        let phi = sample_phase_drift(phase, rng);
        let (sin, cos) = phi.sin_cos();
        s_acos += i.sqrt() * cos;
        s_cos2 += i * cos * cos;
        s_sin2 += i * sin * sin;
    }
    let n = T::of_usize(n_samples);
    let (e_a2_cos2, e_a2_sin2) = (s_cos2 / n, s_sin2 / n);
    Ok(FluctuationMoments {
        e_a_cos: s_acos / n,
        e_a_sin: T::zero(),
        e_a2_cos2,
        e_a2_sin2,
        e_a2: e_a2_cos2 + e_a2_sin2,
    })
}

/// Semi-analytic moments: Monte Carlo over intensity only, exact phase factors.
pub fn fluctuation_moments_semi_analytic<T: Real, R: Rng + ?Sized>(
    dist: &Fading<T>,
    sigma2_phase: T,
    n_samples: usize,
    rng: &mut R,
) -> Result<FluctuationMoments<T>> {
    if matches!(dist, Fading::None) {
        return Ok(FluctuationMoments::from_intensity_moments(T::one(), T::one(), sigma2_phase));
    }
    if n_samples < MIN_MOMENT_SAMPLES {
        return Err(Error::Precision(format!(
            "{n_samples} samples is below the {MIN_MOMENT_SAMPLES} needed for stable moments"
        )));
    }
    let (mut s_sqrt, mut s_i) = (T::zero(), T::zero());
    for _ in 0..n_samples {
        let i = sample_intensity(dist, rng);
        s_sqrt += i.sqrt();
        s_i += i;
    }
    let n = T::of_usize(n_samples);
    Ok(FluctuationMoments::from_intensity_moments(s_sqrt / n, s_i / n, sigma2_phase))
}

/// A deterministic link with multiplicative intensity fading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel<T> {
    /// Transmittance without fading.
    pub transmittance: T,
    /// Channel excess noise referred to the channel input (SNU).
    pub excess_noise: T,
    pub fading: Fading<T>,
}

impl<T: Real> LinkModel<T> {
    pub fn fiber(cfg: &FiberConfig<T>, excess_noise: T) -> Self {
        Self { transmittance: fiber_transmittance(cfg), excess_noise, fading: Fading::None }
    }

    pub fn free_space(cfg: &FreeSpaceConfig<T>, excess_noise: T, fading: Fading<T>) -> Self {
        Self { transmittance: free_space_transmittance(cfg), excess_noise, fading }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.transmittance > T::zero() && self.transmittance <= T::one()) {
            return Err(Error::config("link transmittance must lie in (0, 1]"));
        }
        if !(self.excess_noise >= T::zero()) {
            return Err(Error::config("excess noise must be nonnegative"));
        }
        self.fading.validate()
    }

    /// Analytic mean transmittance (ignoring the rare clamp at 1).
    pub fn mean_transmittance(&self) -> T {
        self.transmittance * self.fading.mean()
    }
}

/// One quasi-static sub-channel draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<T> {
    /// A_α = √(T / T_det)
    pub amp_attenuation: T,
    pub phase_drift: T,
    pub transmittance: T,
    pub excess_noise: T,
    /// N_0 + ηTε + ν_el
    pub noise_var: T,
}

impl<T: Real> ChannelRealization<T> {
    /// Fixed realization with no fading and no phase drift.
    pub fn fixed(transmittance: T, excess_noise: T, det: &DetectorModel<T>) -> Self {
        Self {
            amp_attenuation: T::one(),
            phase_drift: T::zero(),
            transmittance,
            excess_noise,
            noise_var: det.noise_variance(transmittance, excess_noise),
        }
    }

    /// Amplitude slope of the OSP law, √(ηT).
    pub fn slope(&self, det: &DetectorModel<T>) -> T {
        (det.eta * self.transmittance).sqrt()
    }
}

/// Draws one sub-channel. The flag reports whether `I·T_det` had to be clamped at 1.
pub fn realize_subchannel<T: Real, R: Rng + ?Sized>(
    link: &LinkModel<T>,
    phase: &PhaseNoiseConfig<T>,
    det: &DetectorModel<T>,
    rng: &mut R,
) -> (ChannelRealization<T>, bool) {
    let intensity = sample_intensity(&link.fading, rng);
    let phase_drift = sample_phase_drift(phase, rng);
    let raw = intensity * link.transmittance;
    let clamped = raw > T::one();
    let transmittance = if clamped { T::one() } else { raw };
    let amp_attenuation = (transmittance / link.transmittance).sqrt();
    let realization = ChannelRealization {
        amp_attenuation,
        phase_drift,
        transmittance,
        excess_noise: link.excess_noise,
        noise_var: det.noise_variance(transmittance, link.excess_noise),
    };
    (realization, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn fiber_law() {
        let t = fiber_transmittance(&FiberConfig::new(0.2, 10.0).unwrap());
        assert!((t - 0.6310f64).abs() < 5e-5);
        assert_eq!(fiber_transmittance(&FiberConfig::new(0.7, 0.0).unwrap()), 1.0);
        assert_relative_eq!(fiber_transmittance(&FiberConfig::new(1.0, 10.0).unwrap()), 0.1, max_relative = 1e-14);
        assert!(FiberConfig::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn lambert_law() {
        let mut cfg = FreeSpaceConfig {
            alpha_lambda: 10.0 / std::f64::consts::LN_10,
            length_km: 1.0,
            visibility_km: None,
            wavelength_um: 1.55,
            q_exponent: 1.3,
        };
        assert_relative_eq!(free_space_transmittance(&cfg), (-1.0f64).exp(), max_relative = 1e-14);
        cfg.length_km = 0.0;
        assert_eq!(free_space_transmittance(&cfg), 1.0);
    }

    #[test]
    fn table2_presets_hit_their_targets() {
        for (alpha, target) in [(2.0, 0.9703), (15.0, 0.5003), (30.0, 0.2352)] {
            let cfg = FreeSpaceConfig::with_target_transmittance(alpha, target).unwrap();
            assert_relative_eq!(free_space_transmittance(&cfg), target, max_relative = 1e-12);
        }
    }

    #[test]
    fn visibility_formula() {
        let mut cfg = FreeSpaceConfig {
            alpha_lambda: 0.0,
            length_km: 1.0,
            visibility_km: Some(3.91),
            wavelength_um: 0.55,
            q_exponent: 0.7,
        };
        assert_relative_eq!(attenuation_from_visibility(&cfg).unwrap(), 1.0, max_relative = 1e-15);
        cfg.visibility_km = Some(1.955);
        cfg.q_exponent = 1.3;
        assert_relative_eq!(attenuation_from_visibility(&cfg).unwrap(), 2.0, max_relative = 1e-15);

        cfg.visibility_km = Some(23.0);
        cfg.wavelength_um = 1.55;
        // Log-domain evaluation as an independent path.
        let oracle = ((3.91f64 / 23.0).ln() - 1.3 * (1.55f64 / 0.55).ln()).exp();
        assert_relative_eq!(attenuation_from_visibility(&cfg).unwrap(), oracle, max_relative = 1e-13);

        cfg.visibility_km = Some(0.0);
        assert!(matches!(attenuation_from_visibility(&cfg), Err(Error::Domain(_))));
        cfg.visibility_km = None;
        assert!(attenuation_from_visibility(&cfg).is_err());
    }

    #[test]
    fn gamma_gamma_from_log_variances() {
        let p = gg_params_from_log_variances(2f64.ln(), 1.25f64.ln()).unwrap();
        assert_relative_eq!(p.alpha_eff, 1.0, max_relative = 1e-12);
        assert_relative_eq!(p.beta_eff, 1.0 / (1.25 - 1.0), max_relative = 1e-12);
        assert!(gg_params_from_log_variances(0.0, 0.1).is_err());
        assert!(gg_params_from_log_variances(0.1, -1.0).is_err());

        let q = GammaGammaParams::from_effective(4.0, 2.0).unwrap();
        let back = gg_params_from_log_variances(q.sigma2_lnx, q.sigma2_lny).unwrap();
        assert_relative_eq!(back.alpha_eff, 4.0, max_relative = 1e-12);
        assert_relative_eq!(q.scintillation_index(), 0.875, max_relative = 1e-15);
    }

    #[test]
    fn zernike_variance() {
        let cfg = PhaseNoiseConfig::from_zernike(1.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(cfg.sigma2_phase, 1.0);
        let cfg = PhaseNoiseConfig::from_zernike(0.5, 1.0, 1.0).unwrap();
        assert_relative_eq!(cfg.sigma2_phase, 2.0);
        let cfg = PhaseNoiseConfig::from_zernike(1.0299, 0.05, 0.2).unwrap();
        assert_relative_eq!(cfg.sigma2_phase, 1.0299 * 0.25, max_relative = 1e-14);
        assert!(PhaseNoiseConfig::from_zernike(1.0, 0.05, 0.0).is_err());
    }

    #[test]
    fn gamma_gamma_sampler_moments() {
        let mut r = rng(11);
        let p = Fading::GammaGamma(GammaGammaParams::from_effective(4.0, 2.0).unwrap());
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_intensity(&p, &mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let si = var / (mean * mean);
        assert!((si / 0.875 - 1.0).abs() < 0.02, "SI {si}");
    }

    #[test]
    fn gamma_gamma_deterministic_limit() {
        let mut r = rng(2);
        let p = Fading::GammaGamma(GammaGammaParams::from_effective(1e7, 1e7).unwrap());
        for _ in 0..100 {
            let i: f64 = sample_intensity(&p, &mut r);
            assert!((i - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn log_normal_mean() {
        let mut r = rng(5);
        let p = Fading::LogNormal(LogNormalParams { mean_intensity: 0.6310, scint_index: 0.05 });
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_intensity(&p, &mut r)).sum::<f64>() / n as f64;
        assert!((mean / 0.6310 - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn phase_drift_statistics() {
        let mut r = rng(9);
        let zero = PhaseNoiseConfig::from_variance(0.0).unwrap();
        assert!((0..100).all(|_| sample_phase_drift(&zero, &mut r) == 0.0f64));

        let cfg = PhaseNoiseConfig::from_variance(0.04).unwrap();
        let n = 1_000_000;
        let d: Vec<f64> = (0..n).map(|_| sample_phase_drift(&cfg, &mut r)).collect();
        let var = d.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((0.039..=0.041).contains(&var), "var {var}");
        let ecos = d.iter().map(|x| x.cos()).sum::<f64>() / n as f64;
        assert!((ecos / char_function(1.0, 0.04) - 1.0).abs() < 0.005);
    }

    #[test]
    fn characteristic_function_values() {
        assert_eq!(char_function(0.0, 3.0), 1.0);
        assert_relative_eq!(char_function(1.0, 2.0), (-1.0f64).exp());
        assert_relative_eq!(char_function(2.0, 0.5), (-1.0f64).exp());
    }

    #[test]
    fn moments_without_fluctuation() {
        let mut r = rng(1);
        let m = fluctuation_moments(&Fading::None, &PhaseNoiseConfig::none(), 10_000, &mut r).unwrap();
        assert_eq!((m.e_a_cos, m.e_a_sin, m.e_a2_cos2, m.e_a2_sin2, m.e_a2), (1.0, 0.0, 1.0, 0.0, 1.0));
        assert!(matches!(
            fluctuation_moments(&Fading::<f64>::None, &PhaseNoiseConfig::none(), 100, &mut r),
            Err(Error::Precision(_))
        ));
    }

    #[test]
    fn moments_with_phase_noise() {
        let mut r = rng(4);
        let phase = PhaseNoiseConfig::from_variance(0.1).unwrap();
        let m = fluctuation_moments(&Fading::None, &phase, 200_000, &mut r).unwrap();
        assert!((m.e_a_cos / (-0.05f64).exp() - 1.0).abs() < 0.005);
        assert!((m.e_a2_cos2 + m.e_a2_sin2 - m.e_a2).abs() < 1e-12);

        let exact = FluctuationMoments::from_intensity_moments(1.0, 1.0, 0.1);
        assert_relative_eq!(exact.e_a_cos, (-0.05f64).exp(), max_relative = 1e-15);
        assert_eq!(exact.e_a2_cos2 + exact.e_a2_sin2, exact.e_a2);
    }

    #[test]
    fn realization_without_fading() {
        let mut r = rng(3);
        let det = DetectorModel::default();
        let link = LinkModel::fiber(&FiberConfig::new(0.2, 10.0).unwrap(), 0.01);
        let (re, clamped) = realize_subchannel(&link, &PhaseNoiseConfig::none(), &det, &mut r);
        assert!(!clamped);
        assert_eq!(re.transmittance, link.transmittance);
        assert_eq!(re.phase_drift, 0.0);
        assert_eq!(re.amp_attenuation, 1.0);
        assert_relative_eq!(re.noise_var, 1.0 + 0.6 * link.transmittance * 0.01 + 0.01, max_relative = 1e-15);
    }

    #[test]
    fn weak_turbulence_mean_transmittance() {
        let mut r = rng(8);
        let det = DetectorModel::default();
        let cfg = FreeSpaceConfig::with_target_transmittance(2.0, 0.9703).unwrap();
        let fading = Fading::LogNormal(LogNormalParams { mean_intensity: 1.0, scint_index: 0.002 });
        let link = LinkModel::free_space(&cfg, 0.01, fading);
        let phase = PhaseNoiseConfig::from_variance(0.005).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += realize_subchannel(&link, &phase, &det, &mut r).0.transmittance;
        }
        assert!((sum / n as f64 / 0.9703 - 1.0).abs() < 0.02);
    }

    #[test]
    fn no_clamps_for_tight_fading() {
        let mut r = rng(6);
        let det = DetectorModel::default();
        let fading = Fading::LogNormal(LogNormalParams { mean_intensity: 1.0, scint_index: 5e-4 });
        let link = LinkModel { transmittance: 0.6310, excess_noise: 0.01, fading };
        let clamps = (0..100_000)
            .filter(|_| realize_subchannel(&link, &PhaseNoiseConfig::none(), &det, &mut r).1)
            .count();
        assert_eq!(clamps, 0);
    }
}
