use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dyadic scale δ = 2^-level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dyadic {
    level: u32,
}

impl Dyadic {
    pub const fn from_level(level: u32) -> Self {
        Dyadic { level }
    }

    /// Accepts exactly the powers of two in (0, 1].
    pub fn from_delta(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) || !delta.is_finite() {
            return Err(Error::Domain(format!("scale {delta} is not in (0, 1]")));
        }
        let level = -delta.log2();
        let rounded = level.round();
        if (rounded - level).abs() > 1e-12 || (-rounded).exp2() != delta {
            return Err(Error::Domain(format!("scale {delta} is not dyadic")));
        }
        Ok(Dyadic { level: rounded as u32 })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn delta(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// δ⁻¹ as a float.
    pub fn inverse(&self) -> f64 {
        (self.level as f64).exp2()
    }

    /// log₂ δ⁻¹; every "log δ⁻¹" in the library is base 2.
    pub fn log2_inv(&self) -> f64 {
        self.level as f64
    }

    /// The heaviness fraction (log₂ δ⁻¹)⁻² used for hypotheses of the form
    /// "≳ (log δ⁻¹)⁻² · N". Scales coarser than 1/2 are treated as log = 1.
    pub fn log_loss(&self) -> f64 {
        let l = self.log2_inv().max(1.0);
        1.0 / (l * l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_powers_of_two() {
        assert_eq!(Dyadic::from_delta(1.0).unwrap().level(), 0);
        assert_eq!(Dyadic::from_delta(0.0009765625).unwrap().level(), 10);
        assert_eq!(Dyadic::from_level(64).delta(), 2f64.powi(-64));
    }

    #[test]
    fn rejects_non_dyadic() {
        assert!(Dyadic::from_delta(0.3).is_err());
        assert!(Dyadic::from_delta(0.0).is_err());
        assert!(Dyadic::from_delta(2.0).is_err());
        assert!(Dyadic::from_delta(f64::NAN).is_err());
    }

    #[test]
    fn log_loss_at_32() {
        assert_eq!(Dyadic::from_level(5).log_loss(), 1.0 / 25.0);
    }
}
