//! Chaotic-light field synthesis and elementary optical-field operations.
//!
//! Fields are represented as complex analytic-signal envelopes sampled on a
//! uniform grid; the optical carrier is never sampled. Delays therefore act
//! twice: as a nearest-sample shift of the envelope and as an exact carrier
//! phase `ω₀·T`. Sub-wavelength path changes (piezo scale) act only through
//! the carrier phase. Samples shifted in from outside a trace are marked
//! invalid and excluded from every downstream estimator.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

/// Default stationarity guard: a synthesized trace must span at least this
/// many coherence times.
pub const DEFAULT_MIN_SPAN_COHERENCE_TIMES: f64 = 20.0;

/// Source lineshape. Gaussian is the conventional model for a
/// rotating-ground-glass pseudothermal source; Lorentzian is provided for
/// sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lineshape {
    Gaussian,
    Lorentzian,
}

/// Spectral description of the source.
///
/// `coherence_time` follows the g² convention: it is the FWHM of
/// `g²(τ) − 1 = |g¹(τ)|²`, so `g²(±coherence_time/2) = 1.5` exactly.
/// The decay constants below are fixed by that convention:
/// Gaussian `g¹(τ) = exp(−2 ln2 (τ/τ_c)²)`, Lorentzian
/// `g¹(τ) = exp(−ln2 |τ|/τ_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub lineshape: Lineshape,
    /// Center wavelength, m.
    pub center_wavelength: f64,
    /// FWHM of g²(τ) − 1, s.
    pub coherence_time: f64,
    /// Mean intensity in detection-rate units (clicks/s at unit efficiency).
    pub mean_intensity: f64,
}

impl SpectralProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.center_wavelength.is_finite()
            && self.center_wavelength > 0.0
            && self.coherence_time.is_finite()
            && self.coherence_time > 0.0
            && self.mean_intensity.is_finite()
            && self.mean_intensity > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "spectral profile requires positive finite wavelength, coherence time \
                 and mean intensity (got λ={}, τ_c={}, I={})",
                self.center_wavelength, self.coherence_time, self.mean_intensity
            )))
        }
    }

    /// Carrier angular frequency ω₀ = 2πc/λ, rad/s.
    pub fn carrier_angular_frequency(&self) -> f64 {
        2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / self.center_wavelength
    }
}

/// Normalized first-order coherence g¹(τ) of the envelope (carrier factor
/// excluded). Real-valued for the symmetric lineshapes supported here, but
/// returned as complex since downstream algebra is complex.
pub fn g1_analytic(profile: &SpectralProfile, tau: f64) -> Complex64 {
    let x = tau / profile.coherence_time;
    let ln2 = std::f64::consts::LN_2;
    let mag = match profile.lineshape {
        Lineshape::Gaussian => (-2.0 * ln2 * x * x).exp(),
        Lineshape::Lorentzian => (-ln2 * x.abs()).exp(),
    };
    Complex64::new(mag, 0.0)
}

/// g²(τ) = 1 + |g¹(τ)|² for chaotic light.
pub fn g2_analytic(profile: &SpectralProfile, tau: f64) -> f64 {
    1.0 + g1_analytic(profile, tau).norm_sqr()
}

/// Uniformly sampled complex envelope with carrier bookkeeping.
///
/// `valid_start` is the index of the first sample that carries physical
/// data; indices below it were shifted in by a delay and hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    pub samples: Vec<Complex64>,
    /// Sample spacing, s.
    pub dt: f64,
    /// Time of sample 0, s.
    pub t0: f64,
    /// Carrier angular frequency ω₀, rad/s.
    pub carrier_angular_frequency: f64,
    /// First valid sample index.
    pub valid_start: usize,
}

impl FieldTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total span n·dt, s.
    pub fn span(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn valid_samples(&self) -> &[Complex64] {
        &self.samples[self.valid_start.min(self.samples.len())..]
    }

    /// Zero trace on the same grid (a vacuum port).
    pub fn vacuum_like(other: &FieldTrace) -> FieldTrace {
        FieldTrace {
            samples: vec![Complex64::new(0.0, 0.0); other.samples.len()],
            dt: other.dt,
            t0: other.t0,
            carrier_angular_frequency: other.carrier_angular_frequency,
            valid_start: other.valid_start,
        }
    }

    /// Constant-amplitude trace (a coherent, intensity-stabilized source).
    pub fn constant(profile: &SpectralProfile, dt: f64, n_samples: usize) -> Result<FieldTrace> {
        profile.validate()?;
        if !(dt.is_finite() && dt > 0.0) || n_samples < 2 {
            return Err(Error::InvalidConfig(format!(
                "constant trace requires dt > 0 and n_samples >= 2 (got dt={dt}, n={n_samples})"
            )));
        }
        let amp = profile.mean_intensity.sqrt();
        Ok(FieldTrace {
            samples: vec![Complex64::new(amp, 0.0); n_samples],
            dt,
            t0: 0.0,
            carrier_angular_frequency: profile.carrier_angular_frequency(),
            valid_start: 0,
        })
    }

    fn same_grid(&self, other: &FieldTrace) -> bool {
        self.samples.len() == other.samples.len()
            && self.dt == other.dt
            && self.t0 == other.t0
            && self.carrier_angular_frequency == other.carrier_angular_frequency
    }
}

/// One optical path: a group delay, an extra carrier phase (piezo-scale
/// tuning), and an amplitude transmission (fiber loss).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalPath {
    /// Group delay, s. Decomposed into a nearest-sample envelope shift plus
    /// the exact carrier phase ω₀·group_delay.
    pub group_delay: f64,
    /// Additional carrier phase, rad.
    pub extra_carrier_phase: f64,
    /// Amplitude transmission in [0, 1].
    pub amplitude_transmission: f64,
}

impl OpticalPath {
    pub fn new(group_delay: f64, extra_carrier_phase: f64, amplitude_transmission: f64) -> Self {
        OpticalPath {
            group_delay,
            extra_carrier_phase,
            amplitude_transmission,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.group_delay.is_finite()
            && self.group_delay >= 0.0
            && self.extra_carrier_phase.is_finite()
            && (0.0..=1.0).contains(&self.amplitude_transmission);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "optical path requires group_delay >= 0 and transmission in [0,1] \
                 (got delay={}, transmission={})",
                self.group_delay, self.amplitude_transmission
            )))
        }
    }
}

/// Group delay of `length_m` of fiber with the given group index, s.
pub fn fiber_delay(length_m: f64, group_index: f64) -> f64 {
    length_m * group_index / SPEED_OF_LIGHT
}

/// Real-valued series (intensities) on the same grid as a field trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSeries {
    pub values: Vec<f64>,
    pub dt: f64,
    pub t0: f64,
    pub valid_start: usize,
}

impl RealSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_values(&self) -> &[f64] {
        &self.values[self.valid_start.min(self.values.len())..]
    }

    /// Time of the first valid sample, s.
    pub fn valid_t0(&self) -> f64 {
        self.t0 + self.valid_start as f64 * self.dt
    }

    /// Duration of the valid region, s.
    pub fn valid_span(&self) -> f64 {
        self.valid_values().len() as f64 * self.dt
    }

    pub fn mean_valid(&self) -> f64 {
        let v = self.valid_values();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// Synthesize a stationary circular complex Gaussian trace whose envelope
/// autocorrelation matches the profile's g¹ (default stationarity guard).
///
/// Spectral synthesis: the sampled g¹ is transformed to a power spectrum,
/// each frequency bin is weighted by its square root and multiplied by an
/// independent unit circular Gaussian, and the inverse transform is scaled
/// so the ensemble mean of |E|² equals `mean_intensity`. A given
/// (parameters, seed) pair always produces the identical trace.
pub fn synthesize_thermal(
    profile: &SpectralProfile,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<FieldTrace> {
    synthesize_thermal_with_span_guard(profile, dt, n_samples, seed, DEFAULT_MIN_SPAN_COHERENCE_TIMES)
}

/// Like [`synthesize_thermal`] with an explicit stationarity guard
/// (minimum trace span in units of the coherence time).
pub fn synthesize_thermal_with_span_guard(
    profile: &SpectralProfile,
    dt: f64,
    n_samples: usize,
    seed: u64,
    min_span_coherence_times: f64,
) -> Result<FieldTrace> {
    profile.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive and finite (got {dt})")));
    }
    if n_samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "n_samples must be at least 2 (got {n_samples})"
        )));
    }
    let tau_c = profile.coherence_time;
    if dt > tau_c / 10.0 {
        return Err(Error::InvalidConfig(format!(
            "resolution guard: dt/coherence_time = {:.4} exceeds 1/10",
            dt / tau_c
        )));
    }
    let span = dt * n_samples as f64;
    if span < min_span_coherence_times * tau_c {
        return Err(Error::InvalidConfig(format!(
            "stationarity guard: span/coherence_time = {:.2} is below the required {:.2}",
            span / tau_c,
            min_span_coherence_times
        )));
    }

    let n = n_samples;
    let mut planner = FftPlanner::<f64>::new();

    // Power spectrum = DFT of the circularly sampled g¹.
    let mut spectrum: Vec<Complex64> = (0..n)
        .map(|j| {
            let j_signed = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
            g1_analytic(profile, j_signed as f64 * dt)
        })
        .collect();
    planner.plan_fft_forward(n).process(&mut spectrum);

    // Independent circular Gaussians weighted by sqrt of the spectrum.
    // Amplitudes are chosen so that <|E|²> = mean_intensity exactly in the
    // ensemble; the sample mean then fluctuates as a real field's would.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let scale = profile.mean_intensity / n as f64;
    let mut modes: Vec<Complex64> = spectrum
        .iter()
        .map(|p| {
            let power = p.re.max(0.0) * scale;
            let amp = (power / 2.0).sqrt();
            let re: f64 = normal.sample(&mut rng);
            let im: f64 = normal.sample(&mut rng);
            Complex64::new(amp * re, amp * im)
        })
        .collect();
    planner.plan_fft_inverse(n).process(&mut modes);

    Ok(FieldTrace {
        samples: modes,
        dt,
        t0: 0.0,
        carrier_angular_frequency: profile.carrier_angular_frequency(),
        valid_start: 0,
    })
}

/// Propagate a trace through an optical path.
///
/// The envelope is shifted by the nearest integer number of samples; the
/// carrier phase ω₀·group_delay + extra_carrier_phase is applied exactly as
/// a unit-modulus factor. The shifted-in region is marked invalid.
pub fn apply_path(trace: &FieldTrace, path: &OpticalPath) -> Result<FieldTrace> {
    path.validate()?;
    let shift = (path.group_delay / trace.dt).round() as usize;
    if shift >= trace.len() {
        return Err(Error::DelayExceedsTrace {
            delay_s: path.group_delay,
            span_s: trace.span(),
        });
    }
    let phase = trace.carrier_angular_frequency * path.group_delay + path.extra_carrier_phase;
    let factor = Complex64::from_polar(path.amplitude_transmission, -phase);

    let n = trace.len();
    let mut samples = vec![Complex64::new(0.0, 0.0); n];
    for j in shift..n {
        samples[j] = factor * trace.samples[j - shift];
    }
    Ok(FieldTrace {
        samples,
        dt: trace.dt,
        t0: trace.t0,
        carrier_angular_frequency: trace.carrier_angular_frequency,
        valid_start: (trace.valid_start + shift).min(n),
    })
}

/// 50:50 beam splitter: out₁ = (a + i·b)/√2, out₂ = (i·a + b)/√2.
///
/// Conserves |a|² + |b|² sample-wise. Pass [`FieldTrace::vacuum_like`] for
/// an unused port. Validity masks intersect.
pub fn beamsplit_5050(in_a: &FieldTrace, in_b: &FieldTrace) -> Result<(FieldTrace, FieldTrace)> {
    if !in_a.same_grid(in_b) {
        return Err(Error::GridMismatch(
            "beam splitter inputs must share length, dt, t0 and carrier".into(),
        ));
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let i = Complex64::new(0.0, 1.0);
    let n = in_a.len();
    let mut out1 = Vec::with_capacity(n);
    let mut out2 = Vec::with_capacity(n);
    for (a, b) in in_a.samples.iter().zip(&in_b.samples) {
        out1.push((a + i * b) * inv_sqrt2);
        out2.push((i * a + b) * inv_sqrt2);
    }
    let valid_start = in_a.valid_start.max(in_b.valid_start);
    let mk = |samples| FieldTrace {
        samples,
        dt: in_a.dt,
        t0: in_a.t0,
        carrier_angular_frequency: in_a.carrier_angular_frequency,
        valid_start,
    };
    Ok((mk(out1), mk(out2)))
}

/// Pointwise |E|² with the same grid and validity mask.
pub fn intensity(trace: &FieldTrace) -> RealSeries {
    RealSeries {
        values: trace.samples.iter().map(|e| e.norm_sqr()).collect(),
        dt: trace.dt,
        t0: trace.t0,
        valid_start: trace.valid_start,
    }
}
