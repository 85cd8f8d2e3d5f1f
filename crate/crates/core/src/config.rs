//! The flat experiment config format.
//!
//! One `key = value` pair per line, `#` comments, dotted section names
//! mirroring the module types. Every physical quantity carries its unit in
//! the key name (`coherence_time_ns`, `rate_nm_per_s`), so a value can
//! never be mistaken for another unit. Unknown keys are errors.
//!
//! Every key has a default; an empty file is a valid Fig.-2-style run.
//! A parsed [`ExperimentConfig`] keeps its canonical flat form, which is
//! echoed into JSON summaries and reparses to the identical configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use crate::correlator::CoincidenceConfig;
use crate::detection::DetectorModel;
use crate::error::{Error, Result};
use crate::experiment::{
    AnalyticParams, ExperimentConfig, FransonParams, NetworkGeometry, ScanMode, ScanPlan,
    UmziGeometry,
};
use crate::field::{Lineshape, SpectralProfile};
use crate::network::{SpoolNoiseMode, SpoolNoiseModel};

const NM: f64 = 1e-9;
const NS: f64 = 1e-9;
const US: f64 = 1e-6;

/// Every config key with its default (in file units).
pub const DEFAULTS: &[(&str, &str)] = &[
    ("source.lineshape", "gaussian"),
    ("source.center_wavelength_nm", "780"),
    ("source.coherence_time_ns", "572"),
    ("source.mean_intensity_cps", "2.45e7"),
    ("source.coherent", "false"),
    ("trace.dt_ns", "10"),
    ("trace.samples_per_realization", "262144"),
    ("network.spool_length_m", "200"),
    ("network.group_index", "1.43"),
    ("network.loss_on", "true"),
    ("network.loss_amplitude_per_200m", "0.95"),
    ("umzi1.short_delay_ns", "2"),
    ("umzi1.long_extra_delay_ns", "47"),
    ("umzi2.short_delay_ns", "2"),
    ("umzi2.long_extra_delay_ns", "47"),
    ("spool_noise.mode", "off"),
    ("spool_noise.rms_phase_rad", "3.141592653589793"),
    ("spool_noise.correlation_time_us", "10"),
    ("detector1.efficiency", "0.6"),
    ("detector1.jitter_sigma_ns", "0"),
    ("detector1.dead_time_ns", "0"),
    ("detector1.dark_rate_cps", "0"),
    ("detector2.efficiency", "0.6"),
    ("detector2.jitter_sigma_ns", "0"),
    ("detector2.dead_time_ns", "0"),
    ("detector2.dark_rate_cps", "0"),
    ("coincidence.window_ns", "15"),
    ("coincidence.histogram_bin_ns", "20"),
    ("coincidence.histogram_max_lag_ns", "2000"),
    ("scan.mode", "scan_d2"),
    ("scan.rate_nm_per_s", "63"),
    ("scan.dwell_s", "1"),
    ("scan.n_points", "37"),
    ("scan.start_delta1_nm", "0"),
    ("scan.start_delta2_nm", "0"),
    ("run.master_seed", "1"),
    ("run.realizations_per_point", "12"),
    ("output.dir", "out"),
    ("output.dump_tags", "false"),
    ("sweep.spool_lengths_m", "200,400,600,800"),
    ("analytic.wavelength_nm", "780"),
    ("analytic.delta_min_nm", "-1560"),
    ("analytic.delta_max_nm", "1560"),
    ("analytic.n_points", "401"),
    ("franson.pump_wavelength_nm", "390"),
    ("franson.pump_coherence_length_m", "0.05"),
    ("franson.photon_coherence_length_m", "0.0001"),
    ("franson.fringe_points", "241"),
    ("franson.envelope_max_ratio", "12"),
    ("franson.envelope_points", "121"),
];

/// Parse the text form into a key/value map.
pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
            line: ix + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let key = key.trim().to_string();
        // Allow trailing comments after the value.
        let value = match value.split_once('#') {
            Some((v, _)) => v.trim(),
            None => value.trim(),
        };
        if key.is_empty() || value.is_empty() {
            return Err(Error::ConfigParse {
                line: ix + 1,
                msg: format!("empty key or value in {line:?}"),
            });
        }
        map.insert(key, value.to_string());
    }
    Ok(map)
}

/// Load and resolve a config file.
pub fn load_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    from_flat_map(&parse_text(&text)?)
}

struct Reader {
    canonical: BTreeMap<String, String>,
}

impl Reader {
    fn new(given: &BTreeMap<String, String>) -> Result<Self> {
        let known: BTreeMap<&str, &str> = DEFAULTS.iter().copied().collect();
        for key in given.keys() {
            if !known.contains_key(key.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
        }
        let canonical = DEFAULTS
            .iter()
            .map(|(k, d)| {
                let v = given.get(*k).map(String::as_str).unwrap_or(d);
                (k.to_string(), v.to_string())
            })
            .collect();
        Ok(Reader { canonical })
    }

    fn raw(&self, key: &str) -> &str {
        self.canonical
            .get(key)
            .unwrap_or_else(|| panic!("key {key:?} missing from defaults table"))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .parse::<f64>()
            .map_err(|e| Error::InvalidConfig(format!("{key}: bad number {:?}: {e}", self.raw(key))))
    }

    fn scaled(&self, key: &str, unit: f64) -> Result<f64> {
        Ok(self.f64(key)? * unit)
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key)
            .parse::<usize>()
            .map_err(|e| Error::InvalidConfig(format!("{key}: bad integer {:?}: {e}", self.raw(key))))
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)
            .parse::<u64>()
            .map_err(|e| Error::InvalidConfig(format!("{key}: bad integer {:?}: {e}", self.raw(key))))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(Error::InvalidConfig(format!(
                "{key}: expected true/false, got {other:?}"
            ))),
        }
    }

    fn f64_list(&self, key: &str, unit: f64) -> Result<Vec<f64>> {
        self.raw(key)
            .split(',')
            .map(|part| {
                part.trim().parse::<f64>().map(|v| v * unit).map_err(|e| {
                    Error::InvalidConfig(format!("{key}: bad number {part:?}: {e}"))
                })
            })
            .collect()
    }
}

/// Resolve a key/value map (defaults filled in, unknown keys rejected).
pub fn from_flat_map(map: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
    let r = Reader::new(map)?;

    let lineshape = match r.raw("source.lineshape") {
        "gaussian" => Lineshape::Gaussian,
        "lorentzian" => Lineshape::Lorentzian,
        other => {
            return Err(Error::InvalidConfig(format!(
                "source.lineshape: expected gaussian or lorentzian, got {other:?}"
            )))
        }
    };
    let profile = SpectralProfile {
        lineshape,
        center_wavelength: r.scaled("source.center_wavelength_nm", NM)?,
        coherence_time: r.scaled("source.coherence_time_ns", NS)?,
        mean_intensity: r.f64("source.mean_intensity_cps")?,
    };

    let spool_noise = SpoolNoiseModel {
        mode: match r.raw("spool_noise.mode") {
            "off" => SpoolNoiseMode::Off,
            "shared" => SpoolNoiseMode::Shared,
            "independent" => SpoolNoiseMode::Independent,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "spool_noise.mode: expected off/shared/independent, got {other:?}"
                )))
            }
        },
        rms_phase: r.f64("spool_noise.rms_phase_rad")?,
        correlation_time: r.scaled("spool_noise.correlation_time_us", US)?,
    };

    let geometry = NetworkGeometry {
        profile,
        spool_length_m: r.f64("network.spool_length_m")?,
        group_index: r.f64("network.group_index")?,
        umzi1: UmziGeometry {
            short_delay: r.scaled("umzi1.short_delay_ns", NS)?,
            long_extra_delay: r.scaled("umzi1.long_extra_delay_ns", NS)?,
        },
        umzi2: UmziGeometry {
            short_delay: r.scaled("umzi2.short_delay_ns", NS)?,
            long_extra_delay: r.scaled("umzi2.long_extra_delay_ns", NS)?,
        },
        loss_on: r.bool("network.loss_on")?,
        loss_amplitude_per_200m: r.f64("network.loss_amplitude_per_200m")?,
        spool_noise,
    };

    let detector = |n: &str| -> Result<DetectorModel> {
        Ok(DetectorModel {
            efficiency: r.f64(&format!("{n}.efficiency"))?,
            jitter_sigma: r.scaled(&format!("{n}.jitter_sigma_ns"), NS)?,
            dead_time: r.scaled(&format!("{n}.dead_time_ns"), NS)?,
            dark_rate: r.f64(&format!("{n}.dark_rate_cps"))?,
        })
    };

    let cfg = ExperimentConfig {
        geometry,
        source_coherent: r.bool("source.coherent")?,
        trace_dt: r.scaled("trace.dt_ns", NS)?,
        samples_per_realization: r.usize("trace.samples_per_realization")?,
        detectors: (detector("detector1")?, detector("detector2")?),
        coincidence: CoincidenceConfig {
            window: r.scaled("coincidence.window_ns", NS)?,
            histogram_bin: r.scaled("coincidence.histogram_bin_ns", NS)?,
            histogram_max_lag: r.scaled("coincidence.histogram_max_lag_ns", NS)?,
        },
        plan: ScanPlan {
            mode: ScanMode::parse(r.raw("scan.mode"))?,
            rate: r.scaled("scan.rate_nm_per_s", NM)?,
            dwell: r.f64("scan.dwell_s")?,
            n_points: r.usize("scan.n_points")?,
            start_offsets: (
                r.scaled("scan.start_delta1_nm", NM)?,
                r.scaled("scan.start_delta2_nm", NM)?,
            ),
        },
        master_seed: r.u64("run.master_seed")?,
        realizations_per_point: r.usize("run.realizations_per_point")?,
        output_dir: PathBuf::from(r.raw("output.dir")),
        dump_tags: r.bool("output.dump_tags")?,
        sweep_spool_lengths_m: r.f64_list("sweep.spool_lengths_m", 1.0)?,
        analytic: AnalyticParams {
            wavelength: r.scaled("analytic.wavelength_nm", NM)?,
            delta_min: r.scaled("analytic.delta_min_nm", NM)?,
            delta_max: r.scaled("analytic.delta_max_nm", NM)?,
            n_points: r.usize("analytic.n_points")?,
        },
        franson: FransonParams {
            pump_wavelength: r.scaled("franson.pump_wavelength_nm", NM)?,
            pump_coherence_length: r.f64("franson.pump_coherence_length_m")?,
            photon_coherence_length: r.f64("franson.photon_coherence_length_m")?,
            fringe_points: r.usize("franson.fringe_points")?,
            envelope_max_ratio: r.f64("franson.envelope_max_ratio")?,
            envelope_points: r.usize("franson.envelope_points")?,
        },
        flat: r.canonical,
    };
    Ok(cfg)
}

/// The canonical flat form of a config.
pub fn to_flat_map(cfg: &ExperimentConfig) -> &BTreeMap<String, String> {
    &cfg.flat
}

/// Assemble a config from key/value overrides on top of the defaults.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    map: BTreeMap<String, String>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: impl Display) -> Self {
        self.map.insert(key.to_string(), value.to_string());
        self
    }

    pub fn build(self) -> Result<ExperimentConfig> {
        from_flat_map(&self.map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_a_valid_config() {
        let cfg = ConfigBuilder::new().build().unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.master_seed, 1);
        assert_eq!(cfg.plan.n_points, 37);
        assert!((cfg.geometry.profile.coherence_time - 572e-9).abs() < 1e-15);
        assert!((cfg.plan.rate - 63e-9).abs() < 1e-18);
    }

    #[test]
    fn text_parsing_and_overrides() {
        let text = "\
# comment line
scan.mode = opposite
scan.rate_nm_per_s = 32   # halved for dual scans
run.master_seed = 99
";
        let map = parse_text(text).unwrap();
        let cfg = from_flat_map(&map).unwrap();
        assert_eq!(cfg.plan.mode, ScanMode::Opposite);
        assert!((cfg.plan.rate - 32e-9).abs() < 1e-18);
        assert_eq!(cfg.master_seed, 99);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut map = BTreeMap::new();
        map.insert("scan.speed_nm_per_s".to_string(), "63".to_string());
        let err = from_flat_map(&map).unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_text("scan.mode opposite\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 1, .. }));
    }

    #[test]
    fn bad_number_names_the_key() {
        let map: BTreeMap<_, _> =
            [("trace.dt_ns".to_string(), "ten".to_string())].into_iter().collect();
        let err = from_flat_map(&map).unwrap_err();
        assert!(err.to_string().contains("trace.dt_ns"), "{err}");
    }

    #[test]
    fn flat_round_trip_is_exact() {
        let cfg = ConfigBuilder::new()
            .set("source.coherence_time_ns", "57.2")
            .set("scan.mode", "same")
            .set("run.realizations_per_point", 3)
            .build()
            .unwrap();
        let echo = to_flat_map(&cfg).clone();
        let again = from_flat_map(&echo).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn sweep_lengths_parse_as_list() {
        let cfg = ConfigBuilder::new()
            .set("sweep.spool_lengths_m", "100, 250,800")
            .build()
            .unwrap();
        assert_eq!(cfg.sweep_spool_lengths_m, vec![100.0, 250.0, 800.0]);
    }
}
