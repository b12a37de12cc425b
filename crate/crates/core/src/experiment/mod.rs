//! End-to-end experiments: presets, simulation, equalization pipelines and reports.
//!
//! Every random draw comes from [`crate::rng::stream`] keyed by the config
//! seed and a stage label, so a record is a pure function of its config.

pub mod calibrate;
pub mod classify;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod simulate;
pub mod sweep;
pub mod table1;

pub use calibrate::{calibrate, CalibrationResult, CalibrationTargets};
pub use classify::{classify_report, ClassifyConfig, ClassifyOutput, ClassifyRecord};
pub use config::{
    ChannelSpec, ClassifierConfig, EqualizerConfig, EstimationSettings, ExperimentConfig, LinkConfig, Scenario,
    SCHEMA_VERSION,
};
pub use report::Check;
pub use run::{run_experiment, RunRecord};
pub use simulate::{load_dataset, save_dataset, simulate_link, DatasetRow, SimulatedLink};
pub use sweep::{sweep_keyrate, SweepConfig, SweepResult, SweepRow};
pub use table1::{reproduce_table1, Table1Report};
