use serde::{Deserialize, Serialize};

use crate::channel::{
    fiber_transmittance, free_space_transmittance, Fading, FiberConfig, FreeSpaceConfig, LinkModel, PhaseNoiseConfig,
};
use crate::classifier::ZoneThresholds;
use crate::equalizer::{EqualizerMode, TrainHyper, MIN_TRAIN_PILOTS};
use crate::error::{Error, Result};
use crate::estimation::EstimationConfig;
use crate::scalar::Real;
use crate::security::SecurityConfig;
use crate::signal::{DetectorModel, ProtocolParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_PULSES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    Fiber10km,
    FreeSpaceWeak,
    FreeSpaceMedium,
    FreeSpaceStrong,
    Custom,
}

impl Scenario {
    pub const PRESETS: [Scenario; 4] =
        [Scenario::Fiber10km, Scenario::FreeSpaceWeak, Scenario::FreeSpaceMedium, Scenario::FreeSpaceStrong];
    pub const TURBULENT: [Scenario; 3] = [Scenario::FreeSpaceWeak, Scenario::FreeSpaceMedium, Scenario::FreeSpaceStrong];

    /// Short tag used in file names and CSV columns.
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Fiber10km => "fiber10km",
            Scenario::FreeSpaceWeak => "free_space_weak",
            Scenario::FreeSpaceMedium => "free_space_medium",
            Scenario::FreeSpaceStrong => "free_space_strong",
            Scenario::Custom => "custom",
        }
    }

    fn preset_json(self) -> Option<&'static str> {
        match self {
            Scenario::Fiber10km => Some(include_str!("../../presets/fiber10km.json")),
            Scenario::FreeSpaceWeak => Some(include_str!("../../presets/free_space_weak.json")),
            Scenario::FreeSpaceMedium => Some(include_str!("../../presets/free_space_medium.json")),
            Scenario::FreeSpaceStrong => Some(include_str!("../../presets/free_space_strong.json")),
            Scenario::Custom => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkConfig<T> {
    Fiber(FiberConfig<T>),
    FreeSpace(FreeSpaceConfig<T>),
}

impl<T: Real> LinkConfig<T> {
    pub fn transmittance(&self) -> T {
        match self {
            LinkConfig::Fiber(c) => fiber_transmittance(c),
            LinkConfig::FreeSpace(c) => free_space_transmittance(c),
        }
    }

    /// Same link stretched to `length_km`.
    pub fn at_length(&self, length_km: T) -> Self {
        match *self {
            LinkConfig::Fiber(c) => LinkConfig::Fiber(FiberConfig { length_km, ..c }),
            LinkConfig::FreeSpace(c) => LinkConfig::FreeSpace(FreeSpaceConfig { length_km, ..c }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LinkConfig::Fiber(c) => c.validate(),
            LinkConfig::FreeSpace(c) => c.validate(),
        }
    }
}

/// Physical channel: attenuation, fading and phase noise.
///
/// Fading and `block_phase` are redrawn every `block_len` pulse pairs;
/// `pulse_phase` is fresh jitter on each pair. `residual_phase` is the phase
/// variance left after equalization, used by the semi-analytic key-rate sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ChannelSpec<T> {
    pub link: LinkConfig<T>,
    pub excess_noise: T,
    pub fading: Fading<T>,
    pub block_len: usize,
    pub block_phase: PhaseNoiseConfig<T>,
    pub pulse_phase: PhaseNoiseConfig<T>,
    pub residual_phase: T,
}

impl<T: Real> ChannelSpec<T> {
    pub fn link_model(&self) -> LinkModel<T> {
        LinkModel { transmittance: self.link.transmittance(), excess_noise: self.excess_noise, fading: self.fading }
    }

    /// Total phase variance seen by one pulse.
    pub fn total_phase_variance(&self) -> T {
        self.block_phase.sigma2_phase + self.pulse_phase.sigma2_phase
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.link_model().validate()?;
        self.block_phase.validate()?;
        self.pulse_phase.validate()?;
        if self.block_len == 0 {
            return Err(Error::config("block_len must be at least one pulse pair"));
        }
        if !(self.residual_phase >= T::zero()) {
            return Err(Error::config("residual phase variance must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct EqualizerConfig<T> {
    pub mode: EqualizerMode,
    pub hidden_size: usize,
    pub hyper: TrainHyper<T>,
    /// Pulse pairs per equalization stage in the unclassified pipeline.
    pub stage_len: usize,
    /// Retrain when the pilot residual drifts; otherwise the first model is kept.
    pub adaptive: bool,
    pub retrain_window: usize,
}

impl<T: Real> EqualizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.mode == EqualizerMode::OneHidden && self.hidden_size == 0 {
            return Err(Error::config("one-hidden-layer equalizer needs hidden units"));
        }
        if self.stage_len < MIN_TRAIN_PILOTS {
            return Err(Error::config(format!("stage_len must be at least {MIN_TRAIN_PILOTS}")));
        }
        if self.retrain_window == 0 {
            return Err(Error::config("retrain_window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ClassifierConfig<T> {
    pub thresholds: ZoneThresholds<T>,
    pub k: usize,
    /// Share of pulse pairs used to train the classifier and equalizers.
    pub train_fraction: T,
    /// Preset whose pilots define the ellipse zones.
    pub reference: Scenario,
}

impl<T: Real> ClassifierConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.k.is_multiple_of(2) {
            return Err(Error::config("k must be odd"));
        }
        if !(self.train_fraction > T::zero() && self.train_fraction < T::one()) {
            return Err(Error::config("train_fraction must lie in (0, 1)"));
        }
        if self.reference == Scenario::Custom {
            return Err(Error::config("the zone reference must be a preset"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct EstimationSettings<T> {
    pub eps_pe: T,
}

/// How a preset's fading and pilot constants were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct CalibrationRecord<T> {
    pub target_transmittance: T,
    pub target_excess_noise: T,
    pub target_equalized_transmittance: T,
    pub pulse_phase_variance: T,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ExperimentConfig<T> {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub n_pulses: usize,
    pub seed: u64,
    pub protocol: ProtocolParams<T>,
    pub detector: DetectorModel<T>,
    pub channel: ChannelSpec<T>,
    pub equalizer: EqualizerConfig<T>,
    pub classifier: Option<ClassifierConfig<T>>,
    pub estimation: EstimationSettings<T>,
    pub security: SecurityConfig<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationRecord<T>>,
}

impl<T: Real> ExperimentConfig<T> {
    pub fn preset(scenario: Scenario) -> Result<Self> {
        let text = scenario
            .preset_json()
            .ok_or_else(|| Error::config("the custom scenario has no preset; supply a config file"))?;
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n_pulses < MIN_PULSES {
            return Err(Error::config(format!("n_pulses must be at least {MIN_PULSES}")));
        }
        self.protocol.validate()?;
        self.detector.validate()?;
        self.channel.validate()?;
        self.equalizer.validate()?;
        if let Some(c) = &self.classifier {
            c.validate()?;
        } else if self.n_pulses < self.equalizer.stage_len {
            return Err(Error::config("n_pulses must cover at least one equalization stage"));
        }
        self.estimation_config()?;
        self.security.validate()?;
        let fiber = matches!(self.channel.link, LinkConfig::Fiber(_));
        match self.scenario {
            Scenario::Fiber10km if !fiber => Err(Error::config("Fiber10km needs a fiber link")),
            Scenario::FreeSpaceWeak | Scenario::FreeSpaceMedium | Scenario::FreeSpaceStrong if fiber => {
                Err(Error::config("free-space scenarios need a free-space link"))
            }
            _ => Ok(()),
        }
    }

    pub fn estimation_config(&self) -> Result<EstimationConfig<T>> {
        EstimationConfig::new(self.estimation.eps_pe, &self.detector, self.protocol.v_a)
    }

    /// Transmittance without fading, `T^th`.
    pub fn theory_transmittance(&self) -> T {
        self.channel.link.transmittance()
    }

    /// Pilot-to-target slope the equalizer aims for, `√(η·T^th)`.
    pub fn target_slope(&self) -> T {
        (self.detector.eta * self.theory_transmittance()).sqrt()
    }
}
