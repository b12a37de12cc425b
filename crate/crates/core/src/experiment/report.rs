use serde::{Deserialize, Serialize};

/// One pass/fail line of an acceptance-style report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub pass: bool,
}

impl Check {
    pub fn within(name: &str, value: f64, center: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            requirement: format!("{center} ± {tol}"),
            pass: (value - center).abs() <= tol,
        }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, requirement: format!(">= {bound}"), pass: value >= bound }
    }

    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, requirement: format!("<= {bound}"), pass: value <= bound }
    }

    pub fn below(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, requirement: format!("< {bound}"), pass: value < bound }
    }

    pub fn flag(name: &str, pass: bool, requirement: &str) -> Self {
        Self { name: name.into(), value: f64::from(u8::from(pass)), requirement: requirement.into(), pass }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}
