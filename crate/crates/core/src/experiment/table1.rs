use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario};
use super::report::{all_pass, Check};
use super::run::{run_experiment, RunRecord};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Published values of the 10 km fiber comparison: raw, equalized, theory.
pub const REFERENCE_TRANSMITTANCE: [f64; 3] = [0.5412, 0.6261, 0.6310];
pub const REFERENCE_EXCESS_NOISE: [f64; 3] = [0.0429, 0.0128, 0.01];

pub const RAW_T_TOL: f64 = 0.02;
pub const RAW_EPS_TOL: f64 = 0.005;
pub const MIN_EQ_T: f64 = 0.62;
pub const MAX_EQ_EPS: f64 = 0.015;
pub const MIN_SUPPRESSION: f64 = 0.70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub quantity: String,
    pub raw: f64,
    pub equalized: f64,
    pub theory: f64,
    pub reference_raw: f64,
    pub reference_equalized: f64,
    pub reference_theory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Table1Report<T> {
    pub rows: Vec<Table1Row>,
    pub suppression_ratio: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub record: RunRecord<T>,
}

pub fn table1_checks<T: Real>(record: &RunRecord<T>) -> Vec<Check> {
    let f = |v: T| v.to_f64_lossy();
    vec![
        Check::within("raw transmittance", f(record.raw.transmittance_hat), REFERENCE_TRANSMITTANCE[0], RAW_T_TOL),
        Check::within("raw excess noise", f(record.raw.eps_hat), REFERENCE_EXCESS_NOISE[0], RAW_EPS_TOL),
        Check::at_least("equalized transmittance", f(record.equalized.transmittance_hat), MIN_EQ_T),
        Check::at_most("equalized excess noise", f(record.equalized.eps_hat), MAX_EQ_EPS),
        Check::at_least("suppression ratio", f(record.suppression_ratio), MIN_SUPPRESSION),
        Check::within("theory transmittance", f(record.theory.transmittance), REFERENCE_TRANSMITTANCE[2], 5e-5),
        Check::within("theory excess noise", f(record.theory.excess_noise), REFERENCE_EXCESS_NOISE[2], 1e-12),
    ]
}

/// Raw, equalized and theory columns for the calibrated fiber link.
pub fn reproduce_table1<T: Real>(cfg: &ExperimentConfig<T>) -> Result<Table1Report<T>> {
    if cfg.scenario != Scenario::Fiber10km {
        return Err(Error::config("the table reproduction needs the Fiber10km scenario"));
    }
    let record = run_experiment(cfg)?;
    let f = |v: T| v.to_f64_lossy();
    let rows = vec![
        Table1Row {
            quantity: "transmittance".into(),
            raw: f(record.raw.transmittance_hat),
            equalized: f(record.equalized.transmittance_hat),
            theory: f(record.theory.transmittance),
            reference_raw: REFERENCE_TRANSMITTANCE[0],
            reference_equalized: REFERENCE_TRANSMITTANCE[1],
            reference_theory: REFERENCE_TRANSMITTANCE[2],
        },
        Table1Row {
            quantity: "excess_noise".into(),
            raw: f(record.raw.eps_hat),
            equalized: f(record.equalized.eps_hat),
            theory: f(record.theory.excess_noise),
            reference_raw: REFERENCE_EXCESS_NOISE[0],
            reference_equalized: REFERENCE_EXCESS_NOISE[1],
            reference_theory: REFERENCE_EXCESS_NOISE[2],
        },
    ];
    let checks = table1_checks(&record);
    Ok(Table1Report { rows, suppression_ratio: f(record.suppression_ratio), pass: all_pass(&checks), checks, record })
}
