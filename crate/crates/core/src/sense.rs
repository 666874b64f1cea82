//! The integration sense: where in `[t, t + dt]` the noise coefficient is
//! evaluated. `0` is Itô, `1/2` Stratonovich, `1` the Hänggi/isothermal rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SenseParameter(f64);

impl SenseParameter {
    pub const ITO: SenseParameter = SenseParameter(0.0);
    pub const STRATONOVICH: SenseParameter = SenseParameter(0.5);
    pub const HANGGI: SenseParameter = SenseParameter(1.0);

    /// The grid every claim sweeps over.
    pub const GRID: [SenseParameter; 5] = [
        SenseParameter(0.0),
        SenseParameter(0.25),
        SenseParameter(0.5),
        SenseParameter(0.75),
        SenseParameter(1.0),
    ];

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && (0.0..=1.0).contains(&alpha) {
            Ok(SenseParameter(alpha))
        } else {
            Err(Error::config("alpha", "alpha must lie in [0,1]"))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for SenseParameter {
    fn default() -> Self {
        SenseParameter::STRATONOVICH
    }
}

impl TryFrom<f64> for SenseParameter {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        SenseParameter::new(alpha)
    }
}

impl From<SenseParameter> for f64 {
    fn from(s: SenseParameter) -> f64 {
        s.0
    }
}

impl fmt::Display for SenseParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_constants() {
        assert_eq!(SenseParameter::ITO.value(), 0.0);
        assert_eq!(SenseParameter::STRATONOVICH.value(), 0.5);
        assert_eq!(SenseParameter::HANGGI.value(), 1.0);
    }

    #[test]
    fn rejects_out_of_range() {
        let err = SenseParameter::new(1.5).unwrap_err();
        assert!(err.to_string().contains("alpha must lie in [0,1]"));
        assert!(SenseParameter::new(-0.1).is_err());
        assert!(SenseParameter::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<SenseParameter>("2.0").is_err());
    }
}
