//! The tandem interferometer network: one thermal source split into two
//! beams, each sent through an unbalanced Mach-Zehnder interferometer with
//! a short path (piezo-tunable carrier phase) and a long path (fiber spool
//! with loss and optional phase noise), recombined onto a detector port.
//!
//! All beam splitters use the field-engine convention
//! `(a + ib)/√2, (ia + b)/√2`. Overall constant phases per branch are not
//! observable; swapping the two interferometer configurations swaps the
//! output intensities bit for bit (the fields swap up to the constant
//! splitter factor i).

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{apply_path, beamsplit_5050, FieldTrace, OpticalPath, SpectralProfile};
use crate::seed;

/// One unbalanced Mach-Zehnder interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UmziConfig {
    /// Short-path group delay, s.
    pub short_delay: f64,
    /// Long-path group delay, s. Equal delays (a balanced interferometer)
    /// are accepted for diagnostics; the condition report flags them.
    pub long_delay: f64,
    /// Piezo displacement, m (nm scale). Adds carrier phase 2π·offset/λ on
    /// the short path.
    pub piezo_offset: f64,
    /// Amplitude transmission of the long path (fiber loss).
    pub long_path_amplitude_transmission: f64,
}

impl UmziConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.short_delay.is_finite()
            && self.short_delay >= 0.0
            && self.long_delay.is_finite()
            && self.long_delay >= self.short_delay
            && self.piezo_offset.is_finite()
            && (0.0..=1.0).contains(&self.long_path_amplitude_transmission);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "UMZI requires 0 <= short_delay <= long_delay and transmission in [0,1] \
                 (got short={}, long={}, transmission={})",
                self.short_delay, self.long_delay, self.long_path_amplitude_transmission
            )))
        }
    }

    /// Group-delay imbalance ΔT = long − short, s.
    pub fn imbalance(&self) -> f64 {
        self.long_delay - self.short_delay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpoolNoiseMode {
    /// One common random phase on both long paths (the two interferometers
    /// physically share the fiber spool).
    Shared,
    /// Two uncorrelated phase processes.
    Independent,
    Off,
}

/// Ornstein-Uhlenbeck phase noise on the long paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoolNoiseModel {
    pub mode: SpoolNoiseMode,
    /// Stationary rms of the phase, rad.
    pub rms_phase: f64,
    /// Correlation time of the phase process, s.
    pub correlation_time: f64,
}

impl SpoolNoiseModel {
    pub fn off() -> Self {
        SpoolNoiseModel {
            mode: SpoolNoiseMode::Off,
            rms_phase: 0.0,
            correlation_time: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rms_phase >= 0.0
            && self.rms_phase.is_finite()
            && (self.mode == SpoolNoiseMode::Off
                || (self.correlation_time > 0.0 && self.correlation_time.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "spool noise requires rms_phase >= 0 and correlation_time > 0 when active".into(),
            ))
        }
    }
}

/// The full source → splitter → two-UMZI topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TandemNetwork {
    pub profile: SpectralProfile,
    pub umzi1: UmziConfig,
    pub umzi2: UmziConfig,
    pub spool_noise: SpoolNoiseModel,
}

impl TandemNetwork {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.umzi1.validate()?;
        self.umzi2.validate()?;
        self.spool_noise.validate()
    }
}

/// Thresholds for the operating-condition diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionThresholds {
    /// Minimum ΔT/τ_c for the no-first-order-interference regime.
    pub min_imbalance_ratio: f64,
    /// Maximum |T_a − T_b|/τ_c for the two interferometers to count as
    /// matched.
    pub max_mismatch_ratio: f64,
}

impl Default for ConditionThresholds {
    fn default() -> Self {
        ConditionThresholds {
            min_imbalance_ratio: 3.0,
            max_mismatch_ratio: 0.1,
        }
    }
}

/// The four dimensionless operating ratios with pass/warn flags.
/// Violations are warnings, not errors: the simulator may explore regimes
/// the measurement scheme excludes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// ΔT₁/τ_c (equivalently Δ₁/cτ_c as lengths).
    pub imbalance_ratio_1: f64,
    pub imbalance_ratio_2: f64,
    /// |T_L1 − T_L2|/τ_c.
    pub long_mismatch_ratio: f64,
    /// |T_S1 − T_S2|/τ_c.
    pub short_mismatch_ratio: f64,
    pub imbalance_1_pass: bool,
    pub imbalance_2_pass: bool,
    pub long_mismatch_pass: bool,
    pub short_mismatch_pass: bool,
    pub warnings: Vec<String>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.imbalance_1_pass
            && self.imbalance_2_pass
            && self.long_mismatch_pass
            && self.short_mismatch_pass
    }
}

/// Compute the operating-condition diagnostics with default thresholds.
pub fn condition_report(network: &TandemNetwork) -> ConditionReport {
    condition_report_with(network, &ConditionThresholds::default())
}

pub fn condition_report_with(
    network: &TandemNetwork,
    thresholds: &ConditionThresholds,
) -> ConditionReport {
    let tau_c = network.profile.coherence_time;
    let r1 = network.umzi1.imbalance() / tau_c;
    let r2 = network.umzi2.imbalance() / tau_c;
    let long_mismatch = (network.umzi1.long_delay - network.umzi2.long_delay).abs() / tau_c;
    let short_mismatch = (network.umzi1.short_delay - network.umzi2.short_delay).abs() / tau_c;

    let imbalance_1_pass = r1 > thresholds.min_imbalance_ratio;
    let imbalance_2_pass = r2 > thresholds.min_imbalance_ratio;
    let long_mismatch_pass = long_mismatch < thresholds.max_mismatch_ratio;
    let short_mismatch_pass = short_mismatch < thresholds.max_mismatch_ratio;

    let mut warnings = Vec::new();
    for (pass, ratio, which) in [
        (imbalance_1_pass, r1, "UMZI 1"),
        (imbalance_2_pass, r2, "UMZI 2"),
    ] {
        if !pass {
            warnings.push(format!(
                "{which} imbalance is only {ratio:.2} coherence times; \
                 first-order interference expected at the detector"
            ));
        }
    }
    if !long_mismatch_pass {
        warnings.push(format!(
            "long paths differ by {long_mismatch:.2} coherence times; \
             the interferometers are not matched"
        ));
    }
    if !short_mismatch_pass {
        warnings.push(format!(
            "short paths differ by {short_mismatch:.2} coherence times; \
             the interferometers are not matched"
        ));
    }

    ConditionReport {
        imbalance_ratio_1: r1,
        imbalance_ratio_2: r2,
        long_mismatch_ratio: long_mismatch,
        short_mismatch_ratio: short_mismatch,
        imbalance_1_pass,
        imbalance_2_pass,
        long_mismatch_pass,
        short_mismatch_pass,
        warnings,
    }
}

/// Detector ports plus the discarded recombiner ports (kept for energy
/// audits).
#[derive(Debug, Clone)]
pub struct PropagateOutput {
    pub detector_ports: [FieldTrace; 2],
    pub monitor_ports: [FieldTrace; 2],
}

/// Propagate an input trace to the two detector ports.
pub fn propagate(
    network: &TandemNetwork,
    input: &FieldTrace,
    noise_seed: u64,
) -> Result<(FieldTrace, FieldTrace)> {
    let out = propagate_full(network, input, noise_seed)?;
    let [d1, d2] = out.detector_ports;
    Ok((d1, d2))
}

/// Propagate and keep the discarded ports as well.
pub fn propagate_full(
    network: &TandemNetwork,
    input: &FieldTrace,
    noise_seed: u64,
) -> Result<PropagateOutput> {
    network.validate()?;

    let n = input.len();
    let noise = match network.spool_noise.mode {
        SpoolNoiseMode::Off => [None, None],
        SpoolNoiseMode::Shared => {
            let phi = ou_phase(
                n,
                input.dt,
                network.spool_noise.rms_phase,
                network.spool_noise.correlation_time,
                seed::subseed(noise_seed, &[1]),
            );
            [Some(phi.clone()), Some(phi)]
        }
        SpoolNoiseMode::Independent => [
            Some(ou_phase(
                n,
                input.dt,
                network.spool_noise.rms_phase,
                network.spool_noise.correlation_time,
                seed::subseed(noise_seed, &[1]),
            )),
            Some(ou_phase(
                n,
                input.dt,
                network.spool_noise.rms_phase,
                network.spool_noise.correlation_time,
                seed::subseed(noise_seed, &[2]),
            )),
        ],
    };

    let vacuum = FieldTrace::vacuum_like(input);
    let (branch1, branch2) = beamsplit_5050(input, &vacuum)?;

    let wavelength = network.profile.center_wavelength;
    let (det1, mon1) = run_umzi(&branch1, &network.umzi1, wavelength, noise[0].as_deref())?;
    let (det2, mon2) = run_umzi(&branch2, &network.umzi2, wavelength, noise[1].as_deref())?;

    Ok(PropagateOutput {
        detector_ports: [det1, det2],
        monitor_ports: [mon1, mon2],
    })
}

fn run_umzi(
    branch: &FieldTrace,
    umzi: &UmziConfig,
    wavelength: f64,
    noise_phase: Option<&[f64]>,
) -> Result<(FieldTrace, FieldTrace)> {
    let vacuum = FieldTrace::vacuum_like(branch);
    let (short_in, long_in) = beamsplit_5050(branch, &vacuum)?;

    let piezo_phase = 2.0 * std::f64::consts::PI * umzi.piezo_offset / wavelength;
    let short_out = apply_path(
        &short_in,
        &OpticalPath::new(umzi.short_delay, piezo_phase, 1.0),
    )?;
    let mut long_out = apply_path(
        &long_in,
        &OpticalPath::new(
            umzi.long_delay,
            0.0,
            umzi.long_path_amplitude_transmission,
        ),
    )?;
    if let Some(phi) = noise_phase {
        for (s, &p) in long_out.samples.iter_mut().zip(phi) {
            *s *= Complex64::from_polar(1.0, -p);
        }
    }
    beamsplit_5050(&short_out, &long_out)
}

/// Stationary Ornstein-Uhlenbeck phase samples: mean 0, rms `rms`,
/// exponential autocorrelation with the given correlation time.
fn ou_phase(n: usize, dt: f64, rms: f64, correlation_time: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    if rms == 0.0 {
        return vec![0.0; n];
    }
    let alpha = (-dt / correlation_time).exp();
    let q = rms * (1.0 - alpha * alpha).sqrt();
    let mut phi = Vec::with_capacity(n);
    let first: f64 = normal.sample(&mut rng);
    phi.push(rms * first);
    for k in 1..n {
        let xi: f64 = normal.sample(&mut rng);
        phi.push(alpha * phi[k - 1] + q * xi);
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{intensity, synthesize_thermal, Lineshape};
    use approx::assert_relative_eq;

    fn profile() -> SpectralProfile {
        SpectralProfile {
            lineshape: Lineshape::Gaussian,
            center_wavelength: 780e-9,
            coherence_time: 572e-9,
            mean_intensity: 1.0,
        }
    }

    fn umzi(long_delay: f64, piezo: f64, trans: f64) -> UmziConfig {
        UmziConfig {
            short_delay: 0.0,
            long_delay,
            piezo_offset: piezo,
            long_path_amplitude_transmission: trans,
        }
    }

    fn network(u1: UmziConfig, u2: UmziConfig) -> TandemNetwork {
        TandemNetwork {
            profile: profile(),
            umzi1: u1,
            umzi2: u2,
            spool_noise: SpoolNoiseModel::off(),
        }
    }

    /// Moment-based normalized correlation <I₁I₂>/(<I₁><I₂>) on the common
    /// valid region.
    fn normalized_correlation(e1: &FieldTrace, e2: &FieldTrace) -> f64 {
        let start = e1.valid_start.max(e2.valid_start);
        let n = (e1.len() - start) as f64;
        let (mut m1, mut m2, mut m12) = (0.0, 0.0, 0.0);
        for j in start..e1.len() {
            let i1 = e1.samples[j].norm_sqr();
            let i2 = e2.samples[j].norm_sqr();
            m1 += i1;
            m2 += i2;
            m12 += i1 * i2;
        }
        m12 / n / (m1 / n * (m2 / n))
    }

    fn cross_correlation(e1: &FieldTrace, e2: &FieldTrace) -> Complex64 {
        let start = e1.valid_start.max(e2.valid_start);
        let mut acc = Complex64::new(0.0, 0.0);
        for j in start..e1.len() {
            acc += e1.samples[j].conj() * e2.samples[j];
        }
        acc / (e1.len() - start) as f64
    }

    #[test]
    fn balanced_interferometer_shows_full_first_order_fringe() {
        // Degenerate-delay limit: singles visibility ≈ 1 across a piezo scan.
        let src = synthesize_thermal(&profile(), 10e-9, 1 << 16, 31).unwrap();
        let lambda = 780e-9;
        let mut means = Vec::new();
        for k in 0..8 {
            let piezo = k as f64 * lambda / 8.0;
            let net = network(umzi(0.0, piezo, 1.0), umzi(0.0, 0.0, 1.0));
            let (d1, _) = propagate(&net, &src, 1).unwrap();
            means.push(intensity(&d1).mean_valid());
        }
        let max = means.iter().cloned().fold(f64::MIN, f64::max);
        let min = means.iter().cloned().fold(f64::MAX, f64::min);
        let visibility = (max - min) / (max + min);
        assert!(visibility > 0.95, "singles visibility = {visibility}");
    }

    #[test]
    fn large_imbalance_suppresses_first_order_fringe() {
        // ΔT = 5 τ_c: time-averaged singles flat to < 2% across a piezo scan.
        let src = synthesize_thermal(&profile(), 10e-9, 1 << 18, 32).unwrap();
        let tau_c = 572e-9;
        let lambda = 780e-9;
        let mut means = Vec::new();
        for k in 0..8 {
            let piezo = k as f64 * lambda / 8.0;
            let net = network(umzi(5.0 * tau_c, piezo, 1.0), umzi(5.0 * tau_c, 0.0, 1.0));
            let (d1, _) = propagate(&net, &src, 1).unwrap();
            means.push(intensity(&d1).mean_valid());
        }
        let max = means.iter().cloned().fold(f64::MIN, f64::max);
        let min = means.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            (max - min) / (max + min) < 0.02,
            "singles visibility = {}",
            (max - min) / (max + min)
        );
    }

    #[test]
    fn energy_is_conserved_across_all_four_ports() {
        let src = synthesize_thermal(&profile(), 10e-9, 1 << 17, 33).unwrap();
        let tau_c = 572e-9;
        let net = network(umzi(2.0 * tau_c, 0.0, 1.0), umzi(2.0 * tau_c, 0.2e-9, 1.0));
        let out = propagate_full(&net, &src, 1).unwrap();
        let total: f64 = out
            .detector_ports
            .iter()
            .chain(out.monitor_ports.iter())
            .map(|t| intensity(t).mean_valid())
            .sum();
        let src_mean = intensity(&src).mean_valid();
        assert_relative_eq!(total, src_mean, max_relative = 0.02);
        // In the no-interference regime each detector port carries ~1/4.
        for port in &out.detector_ports {
            assert_relative_eq!(
                intensity(port).mean_valid(),
                src_mean / 4.0,
                max_relative = 0.05
            );
        }
    }

    #[test]
    fn swapping_interferometers_swaps_outputs() {
        let src = synthesize_thermal(&profile(), 10e-9, 1 << 16, 34).unwrap();
        let tau_c = 572e-9;
        let u1 = umzi(2.0 * tau_c, 13e-9, 0.95);
        let u2 = umzi(3.0 * tau_c, -7e-9, 0.90);
        let (a1, a2) = propagate(&network(u1, u2), &src, 5).unwrap();
        let (b1, b2) = propagate(&network(u2, u1), &src, 5).unwrap();
        // Intensities swap exactly; fields swap up to the constant splitter
        // phase i between the two source branches.
        assert_eq!(intensity(&a1).values, intensity(&b2).values);
        assert_eq!(intensity(&a2).values, intensity(&b1).values);
        let i = Complex64::new(0.0, 1.0);
        for j in 0..src.len() {
            assert!((b2.samples[j] - i * a1.samples[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn tandem_correlation_follows_difference_phase_fringe() {
        // Coarse scan of the difference phase reproduces the (3+cos)/2 law.
        let tau_c = 572e-9;
        let lambda = 780e-9;
        let src1 = synthesize_thermal(&profile(), 10e-9, 1 << 17, 40).unwrap();
        let src2 = synthesize_thermal(&profile(), 10e-9, 1 << 17, 41).unwrap();
        for (piezo, expected) in [(0.0, 2.0), (lambda / 4.0, 1.5), (lambda / 2.0, 1.0)] {
            let mut acc = 0.0;
            for src in [&src1, &src2] {
                let net = network(umzi(2.0 * tau_c, piezo, 1.0), umzi(2.0 * tau_c, 0.0, 1.0));
                let (d1, d2) = propagate(&net, src, 1).unwrap();
                acc += normalized_correlation(&d1, &d2);
            }
            let got = acc / 2.0;
            assert!(
                (got - expected).abs() < 0.08,
                "piezo {piezo:.2e}: normalized correlation {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn shared_noise_preserves_fringe_independent_noise_destroys_it() {
        let tau_c = 572e-9;
        let noise_on = |mode| SpoolNoiseModel {
            mode,
            rms_phase: std::f64::consts::PI,
            correlation_time: 10e-6,
        };
        let src = synthesize_thermal(&profile(), 10e-9, 1 << 18, 50).unwrap();
        let run = |mode| {
            let mut net = network(umzi(2.0 * tau_c, 0.0, 1.0), umzi(2.0 * tau_c, 0.0, 1.0));
            net.spool_noise = noise_on(mode);
            let (d1, d2) = propagate(&net, &src, 77).unwrap();
            cross_correlation(&d1, &d2).norm()
        };
        let shared = run(SpoolNoiseMode::Shared);
        let independent = run(SpoolNoiseMode::Independent);
        // Shared noise cancels in the cross term (both arm pairs survive);
        // independent noise kills the long-long contribution.
        assert!(
            independent < 0.75 * shared,
            "shared {shared}, independent {independent}"
        );
    }

    #[test]
    fn shared_noise_leaves_cross_phase_stable_across_noise_seeds() {
        let tau_c = 572e-9;
        let mut net = network(umzi(2.0 * tau_c, 37e-9, 1.0), umzi(2.0 * tau_c, 0.0, 1.0));
        net.spool_noise = SpoolNoiseModel {
            mode: SpoolNoiseMode::Shared,
            rms_phase: std::f64::consts::PI,
            correlation_time: 10e-6,
        };
        let src = synthesize_thermal(&profile(), 10e-9, 1 << 17, 51).unwrap();
        let arg = |noise_seed| {
            let (d1, d2) = propagate(&net, &src, noise_seed).unwrap();
            cross_correlation(&d1, &d2).arg()
        };
        let (p1, p2) = (arg(1), arg(2));
        let mut diff = (p1 - p2).abs();
        if diff > std::f64::consts::PI {
            diff = 2.0 * std::f64::consts::PI - diff;
        }
        assert!(diff < 0.05, "cross phase moved by {diff} rad between noise seeds");
    }

    #[test]
    fn condition_report_for_spool_configuration() {
        // 200 m spool at group index 1.43: imbalance ratio ≈ 1.67, below the
        // default threshold of 3 → warn; matched paths pass.
        let d = crate::field::fiber_delay(200.0, 1.43);
        let net = network(umzi(d, 0.0, 1.0), umzi(d, 0.0, 1.0));
        let report = condition_report(&net);
        assert_relative_eq!(report.imbalance_ratio_1, 954.0 / 572.0, epsilon = 0.01);
        assert!(!report.imbalance_1_pass);
        assert!(report.long_mismatch_pass && report.short_mismatch_pass);
        assert_eq!(report.long_mismatch_ratio, 0.0);
        assert_eq!(report.short_mismatch_ratio, 0.0);
        assert!(!report.warnings.is_empty());
    }

    #[test]
    fn condition_report_balanced_warns() {
        let net = network(umzi(0.0, 0.0, 1.0), umzi(0.0, 0.0, 1.0));
        let report = condition_report(&net);
        assert_eq!(report.imbalance_ratio_1, 0.0);
        assert!(!report.imbalance_1_pass);
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("first-order interference expected")));
    }

    #[test]
    fn propagate_rejects_oversized_delay() {
        let src = synthesize_thermal(&profile(), 10e-9, 1 << 14, 1).unwrap();
        let net = network(umzi(1.0, 0.0, 1.0), umzi(0.0, 0.0, 1.0));
        assert!(matches!(
            propagate(&net, &src, 0),
            Err(Error::DelayExceedsTrace { .. })
        ));
    }
}
