//! Experiment orchestration: scan schedules, master seeding, the full
//! synthesis → propagation → detection → correlation chain per dwell point,
//! and CSV/JSON emission.
//!
//! A scan advances the piezo path offsets (Δ₁, Δ₂) on a deterministic
//! per-point schedule. Each dwell point accumulates counts over
//! `realizations_per_point` independent field realizations; the simulated
//! duration per point is `realizations · samples · dt`, an explicit
//! statistical target that stands in for the wall-clock dwell of a real
//! run. Points and realizations are seeded individually, so results do not
//! depend on evaluation order and points can run in parallel.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    franson_coincidence, franson_visibility, thermal_tandem_g2, FransonConfig, TandemPhaseConfig,
};
use crate::correlator::{
    count_coincidences_total, fit_fringe, fit_sinusoid, fit_sinusoid_at_period, CoincidenceConfig,
    FitMode, FringeFit, FringePoint, FringeSeries, G2Accumulator, LagHistogram, MomentAccumulator,
    MomentRecord,
};
use crate::detection::{
    detect_timetags_on_channel, write_tag_dump, DetectorModel, TimeTagSeries,
};
use crate::error::{Error, Result};
use crate::field::{
    beamsplit_5050, fiber_delay, intensity, synthesize_thermal, FieldTrace, SpectralProfile,
};
use crate::network::{
    condition_report, propagate, ConditionReport, SpoolNoiseModel, TandemNetwork, UmziConfig,
};
use crate::seed::{self, stream};

/// How the two piezo offsets move during a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Δ₁ advances, Δ₂ fixed.
    ScanD1,
    /// Δ₂ advances, Δ₁ fixed.
    ScanD2,
    /// Δ₁ up, Δ₂ down at the same rate (difference phase scanned).
    Opposite,
    /// Both up at the same rate (difference phase constant).
    Same,
    Static,
}

impl ScanMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanMode::ScanD1 => "scan_d1",
            ScanMode::ScanD2 => "scan_d2",
            ScanMode::Opposite => "opposite",
            ScanMode::Same => "same",
            ScanMode::Static => "static",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scan_d1" => Ok(ScanMode::ScanD1),
            "scan_d2" => Ok(ScanMode::ScanD2),
            "opposite" => Ok(ScanMode::Opposite),
            "same" => Ok(ScanMode::Same),
            "static" => Ok(ScanMode::Static),
            other => Err(Error::InvalidConfig(format!(
                "unknown scan mode {other:?} (expected scan_d1, scan_d2, opposite, same, static)"
            ))),
        }
    }
}

/// Deterministic per-point (Δ₁, Δ₂) schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub mode: ScanMode,
    /// Piezo scan rate, m/s.
    pub rate: f64,
    /// Wall-clock dwell per point, s.
    pub dwell: f64,
    pub n_points: usize,
    /// Starting (Δ₁, Δ₂), m.
    pub start_offsets: (f64, f64),
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rate >= 0.0
            && self.rate.is_finite()
            && self.dwell > 0.0
            && self.dwell.is_finite()
            && self.n_points >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "scan plan requires rate >= 0, dwell > 0, n_points >= 1 (got {self:?})"
            )))
        }
    }

    /// Piezo travel at the center of dwell `k`, m.
    pub fn travel_at(&self, k: usize) -> f64 {
        self.rate * self.dwell * (k as f64 + 0.5)
    }

    pub fn wall_time_at(&self, k: usize) -> f64 {
        self.dwell * (k as f64 + 0.5)
    }

    /// (Δ₁, Δ₂) at the center of dwell `k`.
    pub fn deltas_at(&self, k: usize) -> (f64, f64) {
        let s = self.travel_at(k);
        let (d1, d2) = self.start_offsets;
        match self.mode {
            ScanMode::ScanD1 => (d1 + s, d2),
            ScanMode::ScanD2 => (d1, d2 + s),
            ScanMode::Opposite => (d1 + s, d2 - s),
            ScanMode::Same => (d1 + s, d2 + s),
            ScanMode::Static => (d1, d2),
        }
    }

    /// Fit coordinate per point: piezo travel, or wall time when static.
    pub fn scan_position_at(&self, k: usize) -> f64 {
        match self.mode {
            ScanMode::Static => self.wall_time_at(k),
            _ => self.travel_at(k),
        }
    }

    pub fn scan_label(&self) -> &'static str {
        match self.mode {
            ScanMode::Static => "wall_time_s",
            _ => "piezo_travel_m",
        }
    }

    /// Expected fringe period in the scan coordinate. The difference phase
    /// moves twice as fast when the two piezos run in opposition.
    pub fn period_hint(&self, wavelength: f64) -> f64 {
        match self.mode {
            ScanMode::Opposite => wavelength / 2.0,
            _ => wavelength,
        }
    }
}

/// Per-interferometer geometry on top of the shared spool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UmziGeometry {
    /// Short-path group delay, s.
    pub short_delay: f64,
    /// Extra long-path delay beyond the shared spool (connectors, leads), s.
    pub long_extra_delay: f64,
}

/// Physical description of the network; the working [`TandemNetwork`] is
/// derived from it for each scan point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub profile: SpectralProfile,
    /// Length of the fiber spool shared by both long paths, m.
    pub spool_length_m: f64,
    pub group_index: f64,
    pub umzi1: UmziGeometry,
    pub umzi2: UmziGeometry,
    pub loss_on: bool,
    /// Amplitude transmission of 200 m of fiber; scaled by length.
    pub loss_amplitude_per_200m: f64,
    pub spool_noise: SpoolNoiseModel,
}

impl NetworkGeometry {
    pub fn long_transmission(&self) -> f64 {
        if self.loss_on {
            self.loss_amplitude_per_200m
                .powf(self.spool_length_m / 200.0)
        } else {
            1.0
        }
    }

    pub fn spool_delay(&self) -> f64 {
        fiber_delay(self.spool_length_m, self.group_index)
    }

    pub fn network_with_piezo(&self, piezo1: f64, piezo2: f64) -> TandemNetwork {
        let transmission = self.long_transmission();
        let umzi = |g: &UmziGeometry, piezo| UmziConfig {
            short_delay: g.short_delay,
            long_delay: self.spool_delay() + g.long_extra_delay,
            piezo_offset: piezo,
            long_path_amplitude_transmission: transmission,
        };
        TandemNetwork {
            profile: self.profile,
            umzi1: umzi(&self.umzi1, piezo1),
            umzi2: umzi(&self.umzi2, piezo2),
            spool_noise: self.spool_noise,
        }
    }

    pub fn network(&self) -> TandemNetwork {
        self.network_with_piezo(0.0, 0.0)
    }

    pub fn with_spool_length(mut self, length_m: f64) -> Self {
        self.spool_length_m = length_m;
        self
    }
}

/// Grid for the closed-form tandem fringe curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    pub wavelength: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub n_points: usize,
}

/// Grid for the entangled-pair reference curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FransonParams {
    pub pump_wavelength: f64,
    pub pump_coherence_length: f64,
    pub photon_coherence_length: f64,
    pub fringe_points: usize,
    /// Envelope scan reach in units of the pump coherence length.
    pub envelope_max_ratio: f64,
    pub envelope_points: usize,
}

/// The full declarative experiment description.
///
/// Built through [`config`] (file, flat map, or [`config::ConfigBuilder`]);
/// the canonical flat key/value form is kept alongside the typed values so
/// the JSON echo reparses to the identical configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: NetworkGeometry,
    /// Replace the thermal source by a constant-intensity one.
    pub source_coherent: bool,
    /// Sample spacing of synthesized traces, s.
    pub trace_dt: f64,
    pub samples_per_realization: usize,
    pub detectors: (DetectorModel, DetectorModel),
    pub coincidence: CoincidenceConfig,
    pub plan: ScanPlan,
    pub master_seed: u64,
    pub realizations_per_point: usize,
    pub output_dir: PathBuf,
    pub dump_tags: bool,
    pub sweep_spool_lengths_m: Vec<f64>,
    pub analytic: AnalyticParams,
    pub franson: FransonParams,
    /// Canonical flat form (every key present).
    pub flat: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// The working network at zero piezo offsets.
    pub fn network(&self) -> TandemNetwork {
        self.geometry.network()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.profile.validate()?;
        self.network().validate()?;
        self.detectors.0.validate()?;
        self.detectors.1.validate()?;
        self.coincidence.validate()?;
        self.plan.validate()?;
        if !(self.trace_dt > 0.0 && self.trace_dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "trace dt must be positive (got {})",
                self.trace_dt
            )));
        }
        if self.samples_per_realization < 2 {
            return Err(Error::InvalidConfig(
                "samples_per_realization must be at least 2".into(),
            ));
        }
        if self.realizations_per_point < 1 {
            return Err(Error::InvalidConfig(
                "realizations_per_point must be at least 1".into(),
            ));
        }
        if self.trace_dt > self.geometry.profile.coherence_time / 10.0 {
            return Err(Error::InvalidConfig(format!(
                "resolution guard: dt/coherence_time = {:.4} exceeds 1/10",
                self.trace_dt / self.geometry.profile.coherence_time
            )));
        }
        Ok(())
    }
}

fn make_source(cfg: &ExperimentConfig, seed_path: &[u64]) -> Result<FieldTrace> {
    if cfg.source_coherent {
        FieldTrace::constant(
            &cfg.geometry.profile,
            cfg.trace_dt,
            cfg.samples_per_realization,
        )
    } else {
        synthesize_thermal(
            &cfg.geometry.profile,
            cfg.trace_dt,
            cfg.samples_per_realization,
            seed::subseed(cfg.master_seed, seed_path),
        )
    }
}

fn seed_path(salt: &[u64], tag: u64, point: usize, realization: usize) -> Vec<u64> {
    let mut p = salt.to_vec();
    p.extend([tag, point as u64, realization as u64]);
    p
}

// ---------------------------------------------------------------------------
// Source characterization
// ---------------------------------------------------------------------------

/// Result of the bare-source intensity-correlation run.
#[derive(Debug, Clone, Serialize)]
pub struct SourceCharacterization {
    pub histogram: LagHistogram,
    /// g² of the zero-lag bin.
    pub g2_zero: f64,
    /// FWHM of the bunching peak, s.
    pub fwhm: Option<f64>,
    pub total_tags: [u64; 2],
    pub realizations: usize,
}

fn source_split_tags(
    cfg: &ExperimentConfig,
    realization: usize,
) -> Result<(TimeTagSeries, TimeTagSeries)> {
    let src = make_source(cfg, &seed_path(&[], stream::FIELD, 0, realization))?;
    let vacuum = FieldTrace::vacuum_like(&src);
    let (b1, b2) = beamsplit_5050(&src, &vacuum)?;
    let t1 = detect_timetags_on_channel(
        &intensity(&b1),
        &cfg.detectors.0,
        seed::subseed(
            cfg.master_seed,
            &seed_path(&[], stream::DETECTOR_1, 0, realization),
        ),
        "D1",
    )?;
    let t2 = detect_timetags_on_channel(
        &intensity(&b2),
        &cfg.detectors.1,
        seed::subseed(
            cfg.master_seed,
            &seed_path(&[], stream::DETECTOR_2, 0, realization),
        ),
        "D2",
    )?;
    Ok((t1, t2))
}

/// Split the bare source on one beam splitter, detect both ports, and
/// histogram the tag-pair lags.
pub fn run_source_characterization(cfg: &ExperimentConfig) -> Result<SourceCharacterization> {
    cfg.validate()?;
    let per: Vec<(G2Accumulator, u64, u64)> = (0..cfg.realizations_per_point)
        .into_par_iter()
        .map(|r| -> Result<(G2Accumulator, u64, u64)> {
            let (t1, t2) = source_split_tags(cfg, r)?;
            let mut acc = G2Accumulator::new(&cfg.coincidence)?;
            acc.add(&t1, &t2)?;
            Ok((acc, t1.len() as u64, t2.len() as u64))
        })
        .collect::<Result<_>>()?;

    let mut total = G2Accumulator::new(&cfg.coincidence)?;
    let mut tags = [0u64; 2];
    for (acc, n1, n2) in &per {
        total.merge(acc);
        tags[0] += n1;
        tags[1] += n2;
    }
    let histogram = total.finalize();
    Ok(SourceCharacterization {
        g2_zero: histogram.zero_lag_value(),
        fwhm: histogram.fwhm(),
        histogram,
        total_tags: tags,
        realizations: cfg.realizations_per_point,
    })
}

// ---------------------------------------------------------------------------
// Fringe scans
// ---------------------------------------------------------------------------

/// Everything measured in one scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub series: FringeSeries,
    /// Intensity moments per point (same order as the series).
    pub moments: Vec<MomentRecord>,
    /// Free-visibility fit of the normalized coincidence.
    pub fit_free: FringeFit,
    /// Fit with the visibility pinned at 1/3.
    pub fit_fixed: FringeFit,
    /// Free fit of the per-point fluctuation correlation ⟨ΔI₁ΔI₂⟩.
    pub fluctuation_fit: FringeFit,
    /// Fitted fringe visibility of each singles series at the carrier
    /// period (None for static runs).
    pub singles_visibility: Option<[f64; 2]>,
    /// std/mean of each singles series.
    pub singles_flatness: [f64; 2],
    pub condition_report: ConditionReport,
}

/// Run the scan described by `cfg.plan`.
pub fn run_scan(cfg: &ExperimentConfig) -> Result<ScanResult> {
    run_scan_salted(cfg, &[])
}

fn run_scan_salted(cfg: &ExperimentConfig, salt: &[u64]) -> Result<ScanResult> {
    cfg.validate()?;
    let plan = cfg.plan;

    let per_point: Vec<(FringePoint, MomentRecord)> = (0..plan.n_points)
        .into_par_iter()
        .map(|k| -> Result<(FringePoint, MomentRecord)> {
            let (d1, d2) = plan.deltas_at(k);
            let net = cfg.geometry.network_with_piezo(d1, d2);
            let (mut n1, mut n2, mut nc) = (0u64, 0u64, 0u64);
            let mut moments = MomentAccumulator::new();
            for r in 0..cfg.realizations_per_point {
                let src = make_source(cfg, &seed_path(salt, stream::FIELD, k, r))?;
                let (e1, e2) = propagate(
                    &net,
                    &src,
                    seed::subseed(cfg.master_seed, &seed_path(salt, stream::SPOOL_NOISE, k, r)),
                )?;
                let t1 = detect_timetags_on_channel(
                    &intensity(&e1),
                    &cfg.detectors.0,
                    seed::subseed(cfg.master_seed, &seed_path(salt, stream::DETECTOR_1, k, r)),
                    "D1",
                )?;
                let t2 = detect_timetags_on_channel(
                    &intensity(&e2),
                    &cfg.detectors.1,
                    seed::subseed(cfg.master_seed, &seed_path(salt, stream::DETECTOR_2, k, r)),
                    "D2",
                )?;
                n1 += t1.len() as u64;
                n2 += t2.len() as u64;
                nc += count_coincidences_total(&t1, &t2, &cfg.coincidence);
                moments.add_fields(&e1, &e2)?;
            }
            Ok((
                FringePoint::new(plan.wall_time_at(k), d1, d2, n1, n2, nc),
                moments.finalize()?,
            ))
        })
        .collect::<Result<_>>()?;

    let scan_positions: Vec<f64> = (0..plan.n_points).map(|k| plan.scan_position_at(k)).collect();
    let points: Vec<FringePoint> = per_point.iter().map(|(p, _)| *p).collect();
    let moments: Vec<MomentRecord> = per_point.iter().map(|(_, m)| *m).collect();
    let series = FringeSeries {
        points,
        scan_positions: scan_positions.clone(),
        scan_label: plan.scan_label().to_string(),
    };

    let wavelength = cfg.geometry.profile.center_wavelength;
    let hint = plan.period_hint(wavelength);
    let fit_free = fit_fringe(&series, FitMode::Free, hint);
    let fit_fixed = fit_fringe(&series, FitMode::FixedVisibility, hint);

    let fluctuation: Vec<f64> = moments.iter().map(|m| m.fluctuation_covariance).collect();
    let fluctuation_fit = fit_sinusoid(&scan_positions, &fluctuation, FitMode::Free, hint);

    let singles1: Vec<f64> = series.points.iter().map(|p| p.n1 as f64).collect();
    let singles2: Vec<f64> = series.points.iter().map(|p| p.n2 as f64).collect();
    let singles_visibility = if plan.mode == ScanMode::Static {
        None
    } else {
        // Singles can only modulate at the carrier period per unit piezo
        // travel; fit at that pinned period.
        Some([
            fit_sinusoid_at_period(&scan_positions, &singles1, wavelength).visibility,
            fit_sinusoid_at_period(&scan_positions, &singles2, wavelength).visibility,
        ])
    };
    let flatness = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        if mean == 0.0 {
            return 0.0;
        }
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        var.sqrt() / mean
    };

    Ok(ScanResult {
        moments,
        fit_free,
        fit_fixed,
        fluctuation_fit,
        singles_visibility,
        singles_flatness: [flatness(&singles1), flatness(&singles2)],
        condition_report: condition_report(&cfg.network()),
        series,
    })
}

// ---------------------------------------------------------------------------
// Delay-length sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub spool_length_m: f64,
    pub scan: ScanResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Repeat the configured scan for each spool length. The long-path delay
/// and loss follow the length; each length runs on its own seed branch.
pub fn run_delay_sweep(cfg: &ExperimentConfig, spool_lengths_m: &[f64]) -> Result<SweepResult> {
    if spool_lengths_m.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one spool length".into()));
    }
    let rows = spool_lengths_m
        .iter()
        .enumerate()
        .map(|(ix, &length)| -> Result<SweepRow> {
            let mut c = cfg.clone();
            c.geometry = cfg.geometry.clone().with_spool_length(length);
            let scan = run_scan_salted(&c, &[stream::SWEEP_LENGTH, ix as u64])?;
            Ok(SweepRow {
                spool_length_m: length,
                scan,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult { rows })
}

// ---------------------------------------------------------------------------
// Closed-form curve grids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnalyticRow {
    /// Δ₁ − Δ₂, m.
    pub delta_diff: f64,
    pub thermal_g2: f64,
    pub fluctuation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticCurves {
    pub rows: Vec<AnalyticRow>,
}

pub fn analytic_curves(p: &AnalyticParams) -> Result<AnalyticCurves> {
    if p.n_points < 2 || !(p.delta_max > p.delta_min) {
        return Err(Error::InvalidConfig(
            "analytic grid needs n_points >= 2 and delta_max > delta_min".into(),
        ));
    }
    let rows = (0..p.n_points)
        .map(|k| {
            let delta =
                p.delta_min + (p.delta_max - p.delta_min) * k as f64 / (p.n_points - 1) as f64;
            let cfg = TandemPhaseConfig {
                delta1: delta,
                delta2: 0.0,
                wavelength: p.wavelength,
            };
            cfg.validate()?;
            Ok(AnalyticRow {
                delta_diff: delta,
                thermal_g2: thermal_tandem_g2(&cfg),
                fluctuation: crate::analytic::fluctuation_correlation_analytic(&cfg),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AnalyticCurves { rows })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FransonFringeRow {
    /// Δ₁ + Δ₂, m.
    pub delta_sum: f64,
    pub coincidence: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FransonEnvelopeRow {
    /// Mean imbalance Δ̄ = (Δ₁+Δ₂)/2, m.
    pub mean_imbalance: f64,
    /// Δ̄ in units of the pump coherence length.
    pub imbalance_ratio: f64,
    pub franson_visibility: f64,
    /// The thermal tandem fringe visibility at the same imbalance: 1/3,
    /// independent of Δ̄.
    pub thermal_visibility: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FransonCurves {
    pub fringe: Vec<FransonFringeRow>,
    pub envelope: Vec<FransonEnvelopeRow>,
}

pub fn franson_curves(p: &FransonParams, thermal_wavelength: f64) -> Result<FransonCurves> {
    if p.fringe_points < 2 || p.envelope_points < 2 {
        return Err(Error::InvalidConfig(
            "franson grids need at least 2 points".into(),
        ));
    }
    let signal_wavelength = 2.0 * p.pump_wavelength;
    let fringe = (0..p.fringe_points)
        .map(|k| {
            let sum = 3.0 * signal_wavelength * k as f64 / (p.fringe_points - 1) as f64;
            let cfg = FransonConfig {
                delta1: sum / 2.0,
                delta2: sum / 2.0,
                photon_coherence_length: p.photon_coherence_length,
                pump_coherence_length: p.pump_coherence_length,
                pump_wavelength: p.pump_wavelength,
            };
            cfg.validate()?;
            Ok(FransonFringeRow {
                delta_sum: sum,
                coincidence: franson_coincidence(&cfg),
            })
        })
        .collect::<Result<_>>()?;

    let envelope = (0..p.envelope_points)
        .map(|k| {
            let ratio = p.envelope_max_ratio * k as f64 / (p.envelope_points - 1) as f64;
            let imbalance = ratio * p.pump_coherence_length;
            let cfg = FransonConfig {
                delta1: imbalance,
                delta2: imbalance,
                photon_coherence_length: p.photon_coherence_length,
                pump_coherence_length: p.pump_coherence_length,
                pump_wavelength: p.pump_wavelength,
            };
            cfg.validate()?;
            // The thermal fringe visibility at the same base imbalance,
            // from its exact extrema.
            let max = thermal_tandem_g2(&TandemPhaseConfig {
                delta1: imbalance,
                delta2: imbalance,
                wavelength: thermal_wavelength,
            });
            let min = thermal_tandem_g2(&TandemPhaseConfig {
                delta1: imbalance + thermal_wavelength / 2.0,
                delta2: imbalance,
                wavelength: thermal_wavelength,
            });
            Ok(FransonEnvelopeRow {
                mean_imbalance: imbalance,
                imbalance_ratio: ratio,
                franson_visibility: franson_visibility(&cfg),
                thermal_visibility: (max - min) / (max + min),
            })
        })
        .collect::<Result<_>>()?;

    Ok(FransonCurves { fringe, envelope })
}

// ---------------------------------------------------------------------------
// Output emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    fn csv(&self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
    fn json(&self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Debug, Clone)]
pub struct EmitOptions {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

#[derive(Debug, Clone)]
pub enum RunOutput {
    Source(SourceCharacterization),
    Scan(ScanResult),
    Sweep(SweepResult),
    Analytic(AnalyticCurves),
    Franson(FransonCurves),
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    master_seed: u64,
    #[serde(flatten)]
    body: T,
    config: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct SourceBody<'a> {
    g2_zero: f64,
    fwhm_ns: Option<f64>,
    total_tags: [u64; 2],
    realizations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    tag_dumps: Option<[&'a str; 2]>,
}

#[derive(Serialize)]
struct ScanBody<'a> {
    condition_report: &'a ConditionReport,
    fit_free: &'a FringeFit,
    fit_fixed: &'a FringeFit,
    fluctuation_fit: &'a FringeFit,
    singles_visibility: &'a Option<[f64; 2]>,
    singles_flatness: [f64; 2],
}

#[derive(Serialize)]
struct SweepBodyRow<'a> {
    spool_length_m: f64,
    fit_free: &'a FringeFit,
    fit_fixed: &'a FringeFit,
    fluctuation_fit: &'a FringeFit,
    singles_visibility: &'a Option<[f64; 2]>,
}

#[derive(Serialize)]
struct SweepBody<'a> {
    rows: Vec<SweepBodyRow<'a>>,
}

#[derive(Serialize)]
struct EmptyBody {}

/// Write the run's CSV and JSON products. Identical runs produce
/// byte-identical files.
pub fn emit_outputs(
    output: &RunOutput,
    cfg: &ExperimentConfig,
    opts: &EmitOptions,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&opts.dir)?;
    let mut written = Vec::new();
    match output {
        RunOutput::Source(src) => {
            if opts.format.csv() {
                written.push(write_histogram_csv(&src.histogram, &opts.dir.join("g2_histogram.csv"))?);
            }
            let mut dumps = None;
            if cfg.dump_tags {
                let (t1, t2) = source_split_tags(cfg, 0)?;
                for (tags, name) in [(&t1, "tags_d1.txt"), (&t2, "tags_d2.txt")] {
                    let path = opts.dir.join(name);
                    let mut f = fs::File::create(&path)?;
                    write_tag_dump(tags, &mut f)?;
                    written.push(path);
                }
                dumps = Some(["tags_d1.txt", "tags_d2.txt"]);
            }
            if opts.format.json() {
                let body = SourceBody {
                    g2_zero: src.g2_zero,
                    fwhm_ns: src.fwhm.map(|v| v * 1e9),
                    total_tags: src.total_tags,
                    realizations: src.realizations,
                    tag_dumps: dumps,
                };
                written.push(write_summary(cfg, "source-g2", body, &opts.dir)?);
            }
        }
        RunOutput::Scan(scan) => {
            if opts.format.csv() {
                written.push(write_fringe_csv(&scan.series, &opts.dir.join("fringe.csv"))?);
            }
            if cfg.dump_tags {
                written.extend(dump_first_point_tags(cfg, &opts.dir)?);
            }
            if opts.format.json() {
                let body = ScanBody {
                    condition_report: &scan.condition_report,
                    fit_free: &scan.fit_free,
                    fit_fixed: &scan.fit_fixed,
                    fluctuation_fit: &scan.fluctuation_fit,
                    singles_visibility: &scan.singles_visibility,
                    singles_flatness: scan.singles_flatness,
                };
                written.push(write_summary(cfg, "fringe", body, &opts.dir)?);
            }
        }
        RunOutput::Sweep(sweep) => {
            if opts.format.csv() {
                written.push(write_sweep_csv(sweep, &opts.dir.join("sweep.csv"))?);
                for row in &sweep.rows {
                    let name = format!("fringe_{:.0}m.csv", row.spool_length_m);
                    written.push(write_fringe_csv(&row.scan.series, &opts.dir.join(name))?);
                }
            }
            if opts.format.json() {
                let body = SweepBody {
                    rows: sweep
                        .rows
                        .iter()
                        .map(|r| SweepBodyRow {
                            spool_length_m: r.spool_length_m,
                            fit_free: &r.scan.fit_free,
                            fit_fixed: &r.scan.fit_fixed,
                            fluctuation_fit: &r.scan.fluctuation_fit,
                            singles_visibility: &r.scan.singles_visibility,
                        })
                        .collect(),
                };
                written.push(write_summary(cfg, "sweep", body, &opts.dir)?);
            }
        }
        RunOutput::Analytic(curves) => {
            if opts.format.csv() {
                written.push(write_analytic_csv(curves, &opts.dir.join("analytic.csv"))?);
            }
            if opts.format.json() {
                written.push(write_summary(cfg, "analytic", EmptyBody {}, &opts.dir)?);
            }
        }
        RunOutput::Franson(curves) => {
            if opts.format.csv() {
                let (a, b) = write_franson_csvs(curves, &opts.dir)?;
                written.push(a);
                written.push(b);
            }
            if opts.format.json() {
                written.push(write_summary(cfg, "franson", EmptyBody {}, &opts.dir)?);
            }
        }
    }
    Ok(written)
}

fn dump_first_point_tags(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let (d1, d2) = cfg.plan.deltas_at(0);
    let net = cfg.geometry.network_with_piezo(d1, d2);
    let src = make_source(cfg, &seed_path(&[], stream::FIELD, 0, 0))?;
    let (e1, e2) = propagate(
        &net,
        &src,
        seed::subseed(cfg.master_seed, &seed_path(&[], stream::SPOOL_NOISE, 0, 0)),
    )?;
    let mut written = Vec::new();
    for (field, det, tag, name) in [
        (&e1, &cfg.detectors.0, stream::DETECTOR_1, "tags_d1.txt"),
        (&e2, &cfg.detectors.1, stream::DETECTOR_2, "tags_d2.txt"),
    ] {
        let tags = detect_timetags_on_channel(
            &intensity(field),
            det,
            seed::subseed(cfg.master_seed, &seed_path(&[], tag, 0, 0)),
            if tag == stream::DETECTOR_1 { "D1" } else { "D2" },
        )?;
        let path = dir.join(name);
        let mut f = fs::File::create(&path)?;
        write_tag_dump(&tags, &mut f)?;
        written.push(path);
    }
    Ok(written)
}

fn write_summary<T: Serialize>(
    cfg: &ExperimentConfig,
    command: &str,
    body: T,
    dir: &Path,
) -> Result<PathBuf> {
    let summary = Summary {
        command,
        master_seed: cfg.master_seed,
        body,
        config: &cfg.flat,
    };
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidConfig(format!("summary serialization failed: {e}")))?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Exact column contract: `wall_time_s,delta1_nm,delta2_nm,N1,N2,Nc,norm_coinc`.
pub fn write_fringe_csv(series: &FringeSeries, path: &Path) -> Result<PathBuf> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "wall_time_s,delta1_nm,delta2_nm,N1,N2,Nc,norm_coinc")?;
    for p in &series.points {
        writeln!(
            f,
            "{:.6},{:.6},{:.6},{},{},{},{:.9}",
            p.wall_time,
            p.delta1 * 1e9,
            p.delta2 * 1e9,
            p.n1,
            p.n2,
            p.nc,
            p.normalized
        )?;
    }
    Ok(path.to_path_buf())
}

pub fn write_histogram_csv(histogram: &LagHistogram, path: &Path) -> Result<PathBuf> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "lag_ns,g2")?;
    for (lag, g2) in histogram.lags.iter().zip(&histogram.g2) {
        writeln!(f, "{:.3},{:.6}", lag * 1e9, g2)?;
    }
    Ok(path.to_path_buf())
}

fn write_sweep_csv(sweep: &SweepResult, path: &Path) -> Result<PathBuf> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "spool_length_m,visibility,visibility_stderr,baseline,baseline_stderr,period_nm,residual_rms"
    )?;
    for row in &sweep.rows {
        let fit = &row.scan.fit_free;
        writeln!(
            f,
            "{:.1},{:.6},{:.6},{:.9},{:.9},{:.3},{:.9}",
            row.spool_length_m,
            fit.visibility,
            fit.visibility_stderr,
            fit.baseline,
            fit.baseline_stderr,
            fit.period * 1e9,
            fit.residual_rms
        )?;
    }
    Ok(path.to_path_buf())
}

fn write_analytic_csv(curves: &AnalyticCurves, path: &Path) -> Result<PathBuf> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "delta_diff_nm,thermal_g2,fluctuation")?;
    for row in &curves.rows {
        writeln!(
            f,
            "{:.3},{:.9},{:.9}",
            row.delta_diff * 1e9,
            row.thermal_g2,
            row.fluctuation
        )?;
    }
    Ok(path.to_path_buf())
}

fn write_franson_csvs(curves: &FransonCurves, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let fringe_path = dir.join("franson_fringe.csv");
    let mut f = fs::File::create(&fringe_path)?;
    writeln!(f, "delta_sum_nm,coincidence")?;
    for row in &curves.fringe {
        writeln!(f, "{:.3},{:.9}", row.delta_sum * 1e9, row.coincidence)?;
    }
    let envelope_path = dir.join("franson_envelope.csv");
    let mut f = fs::File::create(&envelope_path)?;
    writeln!(
        f,
        "mean_imbalance_m,imbalance_over_pump_lc,franson_visibility,thermal_visibility"
    )?;
    for row in &curves.envelope {
        writeln!(
            f,
            "{:.9e},{:.4},{:.9e},{:.9}",
            row.mean_imbalance, row.imbalance_ratio, row.franson_visibility, row.thermal_visibility
        )?;
    }
    Ok((fringe_path, envelope_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigBuilder;

    fn small_cfg() -> ExperimentConfig {
        ConfigBuilder::new()
            .set("trace.samples_per_realization", 1 << 15)
            .set("run.realizations_per_point", 2)
            .set("scan.n_points", 5)
            .set("source.mean_intensity_cps", 1.0e7)
            .build()
            .unwrap()
    }

    #[test]
    fn schedule_modes() {
        let mut plan = ScanPlan {
            mode: ScanMode::ScanD2,
            rate: 63e-9,
            dwell: 1.0,
            n_points: 10,
            start_offsets: (1e-9, 2e-9),
        };
        let (d1, d2) = plan.deltas_at(0);
        assert_eq!(d1, 1e-9);
        assert!((d2 - (2e-9 + 31.5e-9)).abs() < 1e-18);

        plan.mode = ScanMode::Opposite;
        let (d1, d2) = plan.deltas_at(1);
        assert!((d1 - (1e-9 + 94.5e-9)).abs() < 1e-18);
        assert!((d2 - (2e-9 - 94.5e-9)).abs() < 1e-18);

        plan.mode = ScanMode::Same;
        let (d1, d2) = plan.deltas_at(1);
        assert!(((d1 - 1e-9) - (d2 - 2e-9)).abs() < 1e-20);

        plan.mode = ScanMode::Static;
        assert_eq!(plan.deltas_at(7), (1e-9, 2e-9));
    }

    #[test]
    fn period_hint_halves_for_opposite() {
        let mut plan = ScanPlan {
            mode: ScanMode::ScanD1,
            rate: 63e-9,
            dwell: 1.0,
            n_points: 10,
            start_offsets: (0.0, 0.0),
        };
        assert_eq!(plan.period_hint(780e-9), 780e-9);
        plan.mode = ScanMode::Opposite;
        assert_eq!(plan.period_hint(780e-9), 390e-9);
    }

    #[test]
    fn geometry_loss_scales_with_length() {
        let cfg = small_cfg();
        let g = cfg.geometry.clone();
        assert!((g.long_transmission() - 0.95).abs() < 1e-12);
        let g800 = g.clone().with_spool_length(800.0);
        assert!((g800.long_transmission() - 0.95f64.powi(4)).abs() < 1e-12);
        let mut off = g800;
        off.loss_on = false;
        assert_eq!(off.long_transmission(), 1.0);
    }

    #[test]
    fn scan_runs_are_reproducible() {
        let cfg = small_cfg();
        let a = run_scan(&cfg).unwrap();
        let b = run_scan(&cfg).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.fit_free, b.fit_free);
    }

    #[test]
    fn emitted_files_are_byte_identical_across_runs() {
        let cfg = small_cfg();
        let tmp = tempfile::tempdir().unwrap();
        let run = |dir: PathBuf| -> Vec<u8> {
            let scan = run_scan(&cfg).unwrap();
            let opts = EmitOptions {
                dir,
                format: OutputFormat::Both,
            };
            let files = emit_outputs(&RunOutput::Scan(scan), &cfg, &opts).unwrap();
            files
                .iter()
                .flat_map(|p| fs::read(p).unwrap())
                .collect()
        };
        let a = run(tmp.path().join("a"));
        let b = run(tmp.path().join("b"));
        assert_eq!(a, b);
    }

    #[test]
    fn summary_config_echo_reparses_to_same_config() {
        let cfg = small_cfg();
        let reparsed = crate::config::from_flat_map(&cfg.flat).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn empty_series_writes_header_only_csv() {
        let series = FringeSeries {
            points: vec![],
            scan_positions: vec![],
            scan_label: "piezo_travel_m".into(),
        };
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("empty.csv");
        write_fringe_csv(&series, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "wall_time_s,delta1_nm,delta2_nm,N1,N2,Nc,norm_coinc\n");
    }

    #[test]
    fn analytic_curves_have_exact_extremes() {
        let curves = analytic_curves(&AnalyticParams {
            wavelength: 780e-9,
            delta_min: -780e-9,
            delta_max: 780e-9,
            n_points: 5,
        })
        .unwrap();
        assert_eq!(curves.rows.len(), 5);
        assert!((curves.rows[2].thermal_g2 - 2.0).abs() < 1e-12);
        assert!((curves.rows[2].fluctuation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn franson_envelope_reaches_floor_thermal_stays_flat() {
        let cfg = small_cfg();
        let curves = franson_curves(&cfg.franson, 780e-9).unwrap();
        let last = curves.envelope.last().unwrap();
        assert!(last.franson_visibility < 1e-3);
        for row in &curves.envelope {
            assert!((row.thermal_visibility - 1.0 / 3.0).abs() < 1e-9);
        }
        // Fringe advances with the sum phase.
        let max = curves.fringe.iter().map(|r| r.coincidence).fold(f64::MIN, f64::max);
        let min = curves.fringe.iter().map(|r| r.coincidence).fold(f64::MAX, f64::min);
        assert!(max > 1.9 && min < 0.1);
    }
}
