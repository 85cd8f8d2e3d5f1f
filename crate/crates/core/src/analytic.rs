//! Closed-form reference predictions.
//!
//! Three fringe laws are provided: the normalized intensity correlation of
//! beam-split thermal light behind two unbalanced interferometers (the
//! difference-phase 3+cos fringe with visibility 1/3), the corresponding
//! fluctuation correlation (full visibility), and a contrast model for the
//! entangled-pair configuration whose fringes follow the phase sum and
//! collapse beyond the pump coherence length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optical path differences of the two interferometers plus the carrier
/// wavelength; all lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TandemPhaseConfig {
    /// Path difference Δ₁ including piezo offset, m.
    pub delta1: f64,
    /// Path difference Δ₂ including piezo offset, m.
    pub delta2: f64,
    /// Carrier wavelength, m.
    pub wavelength: f64,
}

impl TandemPhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.wavelength.is_finite() && self.wavelength > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "wavelength must be positive (got {})",
                self.wavelength
            )))
        }
    }

    fn difference_phase(&self) -> f64 {
        2.0 * std::f64::consts::PI * (self.delta1 - self.delta2) / self.wavelength
    }
}

/// Parameters of the entangled-pair reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FransonConfig {
    pub delta1: f64,
    pub delta2: f64,
    /// Single-photon coherence length (post-selection envelope), m.
    pub photon_coherence_length: f64,
    /// Pump coherence length (sum-phase envelope), m.
    pub pump_coherence_length: f64,
    pub pump_wavelength: f64,
}

impl FransonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.photon_coherence_length > 0.0
            && self.pump_coherence_length > 0.0
            && self.pump_wavelength > 0.0
            && self.photon_coherence_length.is_finite()
            && self.pump_coherence_length.is_finite()
            && self.pump_wavelength.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "Franson model requires positive coherence lengths and pump wavelength".into(),
            ))
        }
    }
}

/// Normalized second-order correlation of the thermal tandem configuration:
/// `(3 + cos(2π(Δ₁−Δ₂)/λ)) / 2`.
///
/// The normalization pins the uncorrelated-detector baseline at 1 and the
/// Δ₁=Δ₂ peak at the thermal-bunching value 2, so the cosine visibility is
/// exactly 1/3. Holds for any Δ magnitude: the fringe does not know about
/// the coherence length.
pub fn thermal_tandem_g2(cfg: &TandemPhaseConfig) -> f64 {
    (3.0 + cfg.difference_phase().cos()) / 2.0
}

/// Normalized correlation of intensity fluctuations:
/// `(1 + cos(2π(Δ₁−Δ₂)/λ)) / 2`, peak 1, visibility 1.
pub fn fluctuation_correlation_analytic(cfg: &TandemPhaseConfig) -> f64 {
    (1.0 + cfg.difference_phase().cos()) / 2.0
}

/// Coincidence model of the entangled-pair interferometer:
/// `1 + V·cos(2π(Δ₁+Δ₂)/λ_signal)` with `λ_signal = 2·pump_wavelength`
/// (degenerate pairs).
///
/// The visibility envelope is Gaussian with the coherence lengths as 1/e
/// half-widths: `V = exp(−(Δ̄/L_pump)²)·exp(−((Δ₁−Δ₂)/L_photon)²)` where
/// `Δ̄ = (Δ₁+Δ₂)/2`. Fringes follow the phase sum and vanish once the mean
/// imbalance exceeds the pump coherence length — the mirror image of the
/// thermal tandem law.
pub fn franson_coincidence(cfg: &FransonConfig) -> f64 {
    let signal_wavelength = 2.0 * cfg.pump_wavelength;
    let sum_phase = 2.0 * std::f64::consts::PI * (cfg.delta1 + cfg.delta2) / signal_wavelength;
    1.0 + franson_visibility(cfg) * sum_phase.cos()
}

/// Visibility envelope of [`franson_coincidence`].
pub fn franson_visibility(cfg: &FransonConfig) -> f64 {
    let mean_imbalance = 0.5 * (cfg.delta1 + cfg.delta2);
    let mismatch = (cfg.delta1 - cfg.delta2).abs();
    let pump = (-(mean_imbalance / cfg.pump_coherence_length).powi(2)).exp();
    let photon = (-(mismatch / cfg.photon_coherence_length).powi(2)).exp();
    pump * photon
}
