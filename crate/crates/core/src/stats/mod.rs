//! Numerical primitives: normal CDF/quantile, sample moments, deterministic
//! random streams, and the variate generators used by the simulation engine.

pub mod moments;
pub mod normal;
pub mod rng;
pub mod sample;

pub use moments::{sample_cov, sample_mean_var, SampleMoments};
pub use normal::{normal_cdf, normal_pdf, normal_quantile};
pub use rng::RngStream;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// A probability strictly inside (0, 1).
///
/// Used for quantities that feed a normal quantile (type I error rate,
/// power, baseline rates), where the endpoints are meaningless.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Probability::new(value).map_err(serde::de::Error::custom)
    }
}

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!(
                "probability must lie strictly in (0,1), got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}
