//! GMCS modulation, pilot/signal framing, pulse shaping and homodyne detection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Samples per detected pulse.
pub const PULSE_LEN: usize = 8;
/// Index of the optimum sampling point inside a pulse.
pub const OSP_INDEX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams<T> {
    pub v_a: T,
    pub v_total: T,
    /// Pilot scale: the constant pilot value, or the standard deviation of a
    /// public pseudo-random pilot sequence.
    pub pilot_amplitude: T,
}

impl<T: Real> ProtocolParams<T> {
    pub fn new(v_a: T, pilot_amplitude: T) -> Result<Self> {
        let p = Self { v_a, v_total: v_a + T::one(), pilot_amplitude };
        p.validate()?;
        Ok(p)
    }

    /// Pilot amplitude defaults to ten times the signal standard deviation.
    pub fn with_default_pilot(v_a: T) -> Result<Self> {
        Self::new(v_a, T::lit(10.0) * v_a.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_a > T::zero()) || !self.v_a.is_finite() {
            return Err(Error::config("modulation variance must be positive"));
        }
        if (self.v_total - self.v_a - T::one()).abs() > T::epsilon() * T::lit(16.0) * self.v_total {
            return Err(Error::config("v_total must equal v_a + 1"));
        }
        if !(self.pilot_amplitude > T::zero()) {
            return Err(Error::config("pilot amplitude must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel<T> {
    pub eta: T,
    pub nu_el: T,
    pub n0: T,
}

impl<T: Real> Default for DetectorModel<T> {
    fn default() -> Self {
        Self { eta: T::lit(0.6), nu_el: T::lit(0.01), n0: T::one() }
    }
}

impl<T: Real> DetectorModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return Err(Error::config("detector efficiency must lie in (0, 1]"));
        }
        if !(self.nu_el >= T::zero() && self.n0 > T::zero()) {
            return Err(Error::config("electronic noise must be nonnegative and shot noise positive"));
        }
        Ok(())
    }

    /// Total OSP noise variance N_0 + ηTε + ν_el.
    pub fn noise_variance(&self, transmittance: T, excess_noise: T) -> T {
        self.n0 + self.eta * transmittance * excess_noise + self.nu_el
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSamples<T> {
    pub samples: [T; PULSE_LEN],
    pub sample_interval: T,
    pub osp_index: usize,
}

impl<T: Real> PulseSamples<T> {
    pub fn new(samples: [T; PULSE_LEN]) -> Self {
        Self { samples, sample_interval: T::one(), osp_index: OSP_INDEX }
    }

    pub fn zeros() -> Self {
        Self::new([T::zero(); PULSE_LEN])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Pilot,
    Signal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSlot<T> {
    pub kind: SlotKind,
    pub modulated_value: T,
    pub pulse: PulseSamples<T>,
}

pub fn modulate_gmcs<T: Real, R: Rng + ?Sized>(params: &ProtocolParams<T>, n: usize, rng: &mut R) -> Result<Vec<(T, T)>> {
    if n == 0 {
        return Err(Error::Empty("at least one symbol must be requested".into()));
    }
    let sd = params.v_a.sqrt();
    Ok((0..n)
        .map(|_| (sd * T::sample_std_normal(rng), sd * T::sample_std_normal(rng)))
        .collect())
}

/// Public pseudo-random pilot values, N(0, pilot_amplitude²).
///
/// A constant pilot leaves the equalizer's regression unidentifiable (slope
/// and bias collapse onto one direction), so the pipeline uses a varying
/// sequence that both sides can regenerate from the shared seed.
pub fn pilot_sequence<T: Real, R: Rng + ?Sized>(params: &ProtocolParams<T>, n: usize, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| params.pilot_amplitude * T::sample_std_normal(rng)).collect()
}

/// Interleaves constant pilots with the given symbols.
pub fn build_frame<T: Real>(symbols: &[T], params: &ProtocolParams<T>) -> Vec<FrameSlot<T>> {
    let pilots = vec![params.pilot_amplitude; symbols.len()];
    interleave(symbols, &pilots)
}

/// Interleaves an explicit pilot sequence with the given symbols.
pub fn build_frame_with_pilots<T: Real>(symbols: &[T], pilots: &[T]) -> Result<Vec<FrameSlot<T>>> {
    if symbols.len() != pilots.len() {
        return Err(Error::contract(format!(
            "{} symbols but {} pilots",
            symbols.len(),
            pilots.len()
        )));
    }
    Ok(interleave(symbols, pilots))
}

fn interleave<T: Real>(symbols: &[T], pilots: &[T]) -> Vec<FrameSlot<T>> {
    let mut frame = Vec::with_capacity(2 * symbols.len());
    for (&p, &s) in pilots.iter().zip(symbols) {
        frame.push(FrameSlot { kind: SlotKind::Pilot, modulated_value: p, pulse: shape_pulse(p) });
        frame.push(FrameSlot { kind: SlotKind::Signal, modulated_value: s, pulse: shape_pulse(s) });
    }
    frame
}

/// Splits a frame back into `(pilot values, signal values)`.
pub fn deinterleave<T: Real>(frame: &[FrameSlot<T>]) -> (Vec<T>, Vec<T>) {
    let mut pilots = Vec::with_capacity(frame.len() / 2);
    let mut signals = Vec::with_capacity(frame.len() / 2);
    for slot in frame {
        match slot.kind {
            SlotKind::Pilot => pilots.push(slot.modulated_value),
            SlotKind::Signal => signals.push(slot.modulated_value),
        }
    }
    (pilots, signals)
}

/// Raised-cosine profile with unit peak at the OSP.
pub fn pulse_profile<T: Real>() -> [T; PULSE_LEN] {
    let mut g = [T::zero(); PULSE_LEN];
    for (k, gk) in g.iter_mut().enumerate() {
        let offset = T::of_usize(k) - T::of_usize(OSP_INDEX);
        *gk = if k == OSP_INDEX {
            T::one()
        } else {
            (T::one() + (T::PI() * offset / T::lit(5.0)).cos()) / T::lit(2.0)
        };
    }
    g
}

pub fn shape_pulse<T: Real>(value: T) -> PulseSamples<T> {
    let g = pulse_profile::<T>();
    PulseSamples::new(g.map(|gk| value * gk))
}

pub fn optimum_sample<T: Real>(pulse: &PulseSamples<T>) -> T {
    pulse.samples[pulse.osp_index]
}

/// Homodyne detection of one quadrature.
///
/// Equivalent to [`detect_homodyne_with_conjugate`] with a zero conjugate quadrature.
pub fn detect_homodyne<T: Real, R: Rng + ?Sized>(
    pulse: &PulseSamples<T>,
    realization: &ChannelRealization<T>,
    det: &DetectorModel<T>,
    rng: &mut R,
) -> PulseSamples<T> {
    detect_homodyne_with_conjugate(pulse, T::zero(), realization, det, rng)
}

/// Homodyne detection of the in-phase quadrature of a coherent pulse whose
/// conjugate quadrature has OSP value `conjugate`.
///
/// A phase drift rotates part of the conjugate quadrature into the measured
/// one. Shot and excess noise share the optical mode and therefore follow
/// the pulse profile; electronic noise is white across samples. The OSP
/// value obeys `y = √(ηT)(x cos Δφ − p sin Δφ) + z` with `Var z = σ²`.
pub fn detect_homodyne_with_conjugate<T: Real, R: Rng + ?Sized>(
    pulse: &PulseSamples<T>,
    conjugate: T,
    realization: &ChannelRealization<T>,
    det: &DetectorModel<T>,
    rng: &mut R,
) -> PulseSamples<T> {
    let gain = (det.eta * realization.transmittance).sqrt();
    let (sin, cos) = realization.phase_drift.sin_cos();
    let profile = pulse_profile::<T>();
    let mode_var = (realization.noise_var - det.nu_el).max(T::zero());
    let z_mode = if mode_var > T::zero() { mode_var.sqrt() * T::sample_std_normal(rng) } else { T::zero() };
    let el_sd = det.nu_el.sqrt();
    let mut out = *pulse;
    for (k, s) in out.samples.iter_mut().enumerate() {
        let electronic = if el_sd > T::zero() { el_sd * T::sample_std_normal(rng) } else { T::zero() };
        *s = gain * (*s * cos - conjugate * profile[k] * sin) + profile[k] * z_mode + electronic;
    }
    out
}
