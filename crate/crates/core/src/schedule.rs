//! Step-size sequences for the three coupled recursions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power-law step size `n -> scale * n^(-exponent)`.
///
/// [`PowerLaw::at`] takes the number of updates already applied to a
/// component, so with unit scale the first update of every component uses
/// step 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub exponent: f64,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl PowerLaw {
    pub fn new(exponent: f64) -> Self {
        Self { exponent, scale: 1.0 }
    }

    pub fn scaled(exponent: f64, scale: f64) -> Self {
        Self { exponent, scale }
    }

    pub fn at(&self, count: u64) -> f64 {
        self.scale * ((count + 1) as f64).powf(-self.exponent)
    }
}

/// Fast (`gamma`), middle (`alpha`) and slow (`beta`) step sizes.
///
/// Square-summable but not summable requires every exponent in `(0.5, 1]`;
/// timescale separation requires `fast < middle < slow`. The default slow
/// step carries a scale of 20 so the multipliers settle within a few hundred
/// thousand iterations; the ratio `beta / alpha` still vanishes, but only
/// drops below one after roughly `4.5e7` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedules {
    pub fast: PowerLaw,
    pub middle: PowerLaw,
    pub slow: PowerLaw,
}

impl Default for StepSchedules {
    fn default() -> Self {
        Self {
            fast: PowerLaw::new(0.51),
            middle: PowerLaw::new(0.68),
            slow: PowerLaw::scaled(0.85, 20.0),
        }
    }
}

impl StepSchedules {
    pub fn new(fast: f64, middle: f64, slow: f64) -> Result<Self> {
        let s = Self {
            fast: PowerLaw::new(fast),
            middle: PowerLaw::new(middle),
            slow: PowerLaw::new(slow),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.fast, self.middle, self.slow] {
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return Err(Error::InvalidArgument(format!("step scale {} must be positive", p.scale)));
            }
        }
        for (name, p) in [("fast", self.fast), ("middle", self.middle), ("slow", self.slow)] {
            if !(p.exponent > 0.5 && p.exponent <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} exponent {} must lie in (0.5, 1]",
                    p.exponent
                )));
            }
        }
        if !(self.fast.exponent < self.middle.exponent && self.middle.exponent < self.slow.exponent) {
            return Err(Error::InvalidArgument(
                "exponents must satisfy fast < middle < slow".into(),
            ));
        }
        Ok(())
    }

    pub fn gamma(&self, count: u64) -> f64 {
        self.fast.at(count)
    }

    pub fn alpha(&self, count: u64) -> f64 {
        self.middle.at(count)
    }

    pub fn beta(&self, count: u64) -> f64 {
        self.slow.at(count)
    }
}
