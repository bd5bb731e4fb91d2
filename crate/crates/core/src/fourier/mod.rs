//! Frequency-side laboratory on periodic M³ grids: cone geometry over a
//! direction curve, tube functions, high/low splitting, cap restriction and
//! the l⁴ decoupling and wave envelope measurements.
//!
//! Frequencies live in (Z/M)³ ∩ [-1/2, 1/2)³. The cone {r γ(θ)} is scaled by
//! [`FREQ_SCALE`] so that it fits inside that box, and its δ-neighborhood has
//! radius one lattice step δ = 1/M.

mod geometry;
mod grid;
mod ops;

use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};

pub use geometry::{Cap, ConeGeometry, GeometryDump, Plank, RadialFloor, TauFamily, NO_CAP};
pub use grid::{fft3, frequency, l4_norm, position, GridFunction, GRID_SIDES};
pub use ops::{
    cap_restrict, cap_support_function, decoupling_ratio, high_low_split, low_part_envelope,
    random_cap_function, synth_tube_function, tspacing_subsample, wave_envelope_rhs, CapSelection,
    DecouplingReport, EnvelopeReport, EnvelopeTerm, LowPartReport, SPACING_CONSTANT,
};

/// Factor mapping the unit cone into the frequency box.
pub const FREQ_SCALE: f64 = 0.5;

/// Result of [`choose_k`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KChoice {
    pub k: u64,
    /// (log₂ δ⁻¹)^{2/(1-s)} before rounding
    pub raw: f64,
    pub clamped: bool,
}

/// Power of two nearest (on a log scale) to (log₂ δ⁻¹)^{2/(1-s)}, clamped to
/// [2, 2^⌊k/2⌋] for δ = 2^-k.
pub fn choose_k(delta: Dyadic, s: f64) -> Result<KChoice> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s = {s} outside (0, 1)")));
    }
    let exponent = 2.0 / (1.0 - s);
    let raw = delta.log2_inv().powf(exponent);
    let log_raw = exponent * delta.log2_inv().log2();
    let nearest = if log_raw.is_finite() { log_raw.round().max(0.0) } else { 0.0 };
    let hi = (delta.level() / 2) as f64;
    let lo = 1.0f64.min(hi);
    let e = nearest.clamp(lo, hi);
    Ok(KChoice {
        k: 1u64 << e as u32,
        raw,
        clamped: e != nearest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_examples() {
        let a = choose_k(Dyadic::from_level(10), 0.5).unwrap();
        assert!((a.raw - 1e4).abs() < 1e-6);
        assert_eq!(a.k, 32);
        assert!(a.clamped);

        let b = choose_k(Dyadic::from_level(4), 0.5).unwrap();
        assert!((b.raw - 256.0).abs() < 1e-9);
        assert_eq!(b.k, 4);
        assert!(b.clamped);

        // 64⁴ = 2^24 sits well inside [2, 2^32]
        let c = choose_k(Dyadic::from_level(64), 0.5).unwrap();
        assert!((c.raw - 16_777_216.0).abs() < 1e-3);
        assert_eq!(c.k, 1 << 24);
        assert!(!c.clamped);
    }

    #[test]
    fn k_rejects_s_at_least_one() {
        assert!(matches!(choose_k(Dyadic::from_level(8), 1.0), Err(Error::Domain(_))));
        assert!(matches!(choose_k(Dyadic::from_level(8), 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn k_small_scales_clamp_up() {
        let c = choose_k(Dyadic::from_level(2), 0.1).unwrap();
        assert_eq!(c.k, 2);
    }
}
