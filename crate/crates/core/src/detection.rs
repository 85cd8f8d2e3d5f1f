//! Semiclassical photodetection: intensity traces to click time tags.
//!
//! Clicks are an inhomogeneous Poisson process with rate
//! `efficiency·I(t) + dark_rate`, sampled exactly for the piecewise-constant
//! intensity by time rescaling (one unit-exponential draw per event). Each
//! tag then receives Gaussian timing jitter, the stream is re-sorted, and
//! dead time is enforced earliest-tag-wins.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RealSeries;

/// Maximum allowed mean click probability per sample.
pub const RATE_GUARD_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Quantum efficiency in (0, 1].
    pub efficiency: f64,
    /// Gaussian timing jitter (one sigma), s.
    pub jitter_sigma: f64,
    /// Dead time after an accepted click, s.
    pub dead_time: f64,
    /// Dark count rate, 1/s.
    pub dark_rate: f64,
}

impl DetectorModel {
    /// Ideal detector with the given efficiency.
    pub fn ideal(efficiency: f64) -> Self {
        DetectorModel {
            efficiency,
            jitter_sigma: 0.0,
            dead_time: 0.0,
            dark_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.efficiency > 0.0
            && self.efficiency <= 1.0
            && self.jitter_sigma >= 0.0
            && self.dead_time >= 0.0
            && self.dark_rate >= 0.0
            && [self.efficiency, self.jitter_sigma, self.dead_time, self.dark_rate]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "detector requires efficiency in (0,1] and nonnegative jitter, dead time, \
                 dark rate (got {self:?})"
            )))
        }
    }
}

/// Sorted detector click timestamps for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTagSeries {
    /// Strictly increasing timestamps, s.
    pub tags: Vec<f64>,
    /// Start of the observation span, s.
    pub t0: f64,
    /// Observation span, s.
    pub duration: f64,
    pub channel_id: String,
}

impl TimeTagSeries {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.duration
    }
}

/// Detect clicks on an intensity trace. Deterministic per
/// (intensity, model, seed).
pub fn detect_timetags(
    intensity: &RealSeries,
    det: &DetectorModel,
    seed: u64,
) -> Result<TimeTagSeries> {
    detect_timetags_on_channel(intensity, det, seed, "D")
}

/// [`detect_timetags`] with an explicit channel label.
pub fn detect_timetags_on_channel(
    intensity: &RealSeries,
    det: &DetectorModel,
    seed: u64,
    channel_id: &str,
) -> Result<TimeTagSeries> {
    det.validate()?;
    let values = intensity.valid_values();
    let dt = intensity.dt;
    let t_start = intensity.valid_t0();
    let duration = intensity.valid_span();

    let mut mean_rate = 0.0;
    for &v in values {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidConfig(
                "intensity must be finite and nonnegative on the valid region".into(),
            ));
        }
        mean_rate += det.efficiency * v + det.dark_rate;
    }
    if !values.is_empty() {
        mean_rate /= values.len() as f64;
    }
    if mean_rate * dt >= RATE_GUARD_LIMIT {
        return Err(Error::RateGuard(format!(
            "mean click probability per sample is {:.3} (limit {}); \
             rescale the source intensity or use a finer dt",
            mean_rate * dt,
            RATE_GUARD_LIMIT
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // Time rescaling over the piecewise-constant rate: an event fires each
    // time the integrated rate crosses a unit-exponential increment.
    let mut tags: Vec<f64> = Vec::new();
    let mut need: f64 = Exp1.sample(&mut rng);
    for (j, &v) in values.iter().enumerate() {
        let lam = det.efficiency * v + det.dark_rate;
        if lam <= 0.0 {
            continue;
        }
        let mut avail = lam * dt;
        let mut consumed = 0.0;
        while avail >= need {
            consumed += need;
            avail -= need;
            tags.push(t_start + j as f64 * dt + consumed / lam);
            need = Exp1.sample(&mut rng);
        }
        need -= avail;
    }

    if det.jitter_sigma > 0.0 {
        for t in &mut tags {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *t += det.jitter_sigma * xi;
        }
        tags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        tags.retain(|&t| t >= t_start && t <= t_start + duration);
    }
    tags.dedup();

    if det.dead_time > 0.0 {
        apply_dead_time(&mut tags, det.dead_time);
    }

    Ok(TimeTagSeries {
        tags,
        t0: t_start,
        duration,
        channel_id: channel_id.to_string(),
    })
}

/// Earliest-tag-wins dead-time pruning on a sorted stream.
pub(crate) fn apply_dead_time(tags: &mut Vec<f64>, dead_time: f64) {
    let mut last_kept = f64::NEG_INFINITY;
    tags.retain(|&t| {
        if t - last_kept >= dead_time {
            last_kept = t;
            true
        } else {
            false
        }
    });
}

/// Write the textual tag dump: a small header followed by one timestamp per
/// line in fixed-point nanoseconds.
pub fn write_tag_dump<W: Write>(series: &TimeTagSeries, mut w: W) -> Result<()> {
    writeln!(w, "# timetags v1")?;
    writeln!(w, "# channel: {}", series.channel_id)?;
    writeln!(w, "# t0_ns: {:.6}", series.t0 * 1e9)?;
    writeln!(w, "# duration_ns: {:.6}", series.duration * 1e9)?;
    for &t in &series.tags {
        writeln!(w, "{:.6}", t * 1e9)?;
    }
    Ok(())
}

/// Read a tag dump produced by [`write_tag_dump`].
pub fn read_tag_dump<R: BufRead>(r: R) -> Result<TimeTagSeries> {
    let mut channel_id = String::from("D");
    let mut t0 = 0.0;
    let mut duration = 0.0;
    let mut tags = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("channel:") {
                channel_id = v.trim().to_string();
            } else if let Some(v) = rest.strip_prefix("t0_ns:") {
                t0 = parse_ns(v, lineno)?;
            } else if let Some(v) = rest.strip_prefix("duration_ns:") {
                duration = parse_ns(v, lineno)?;
            }
            continue;
        }
        tags.push(parse_ns(line, lineno)?);
    }
    if !tags.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig(
            "tag dump timestamps must be strictly increasing".into(),
        ));
    }
    Ok(TimeTagSeries {
        tags,
        t0,
        duration,
        channel_id,
    })
}

fn parse_ns(s: &str, lineno: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map(|ns| ns * 1e-9)
        .map_err(|e| Error::ConfigParse {
            line: lineno + 1,
            msg: format!("bad timestamp {s:?}: {e}"),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_series(value: f64, dt: f64, n: usize) -> RealSeries {
        RealSeries {
            values: vec![value; n],
            dt,
            t0: 0.0,
            valid_start: 0,
        }
    }

    #[test]
    fn zero_intensity_zero_dark_gives_no_tags() {
        let s = flat_series(0.0, 1e-9, 1000);
        let tags = detect_timetags(&s, &DetectorModel::ideal(0.5), 1).unwrap();
        assert!(tags.is_empty());
        assert_eq!(tags.duration, 1e-6);
    }

    #[test]
    fn constant_rate_count_matches_poisson_mean() {
        // η·I·T = 0.5 · 2e6 · 1e-2 = 1e4 expected tags.
        let s = flat_series(2e6, 10e-9, 1_000_000);
        let tags = detect_timetags(&s, &DetectorModel::ideal(0.5), 7).unwrap();
        let expected = 1e4f64;
        let sigma = expected.sqrt();
        assert!(
            (tags.len() as f64 - expected).abs() < 5.0 * sigma,
            "count {} vs mean {expected}",
            tags.len()
        );
        assert!(tags.tags.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empirical_rate_tracks_intensity() {
        // Step intensity: second half has 3x the rate of the first half.
        let mut values = vec![1e6; 500_000];
        values.extend(vec![3e6; 500_000]);
        let s = RealSeries {
            values,
            dt: 10e-9,
            t0: 0.0,
            valid_start: 0,
        };
        let tags = detect_timetags(&s, &DetectorModel::ideal(0.5), 3).unwrap();
        let mid = s.t0 + 0.005;
        let low = tags.tags.iter().filter(|&&t| t < mid).count() as f64;
        let high = tags.tags.iter().filter(|&&t| t >= mid).count() as f64;
        assert!((high / low - 3.0).abs() < 0.15, "ratio {}", high / low);
    }

    #[test]
    fn dark_counts_fire_without_light() {
        let s = flat_series(0.0, 10e-9, 1_000_000);
        let det = DetectorModel {
            dark_rate: 1e5,
            ..DetectorModel::ideal(0.5)
        };
        let tags = detect_timetags(&s, &det, 9).unwrap();
        // 1e5/s over 10 ms → 1000 expected.
        assert!((tags.len() as f64 - 1000.0).abs() < 5.0 * 1000f64.sqrt());
    }

    #[test]
    fn dead_time_prunes_earliest_wins() {
        let mut tags = vec![100e-9, 101e-9, 170e-9, 400e-9];
        apply_dead_time(&mut tags, 50e-9);
        // 101 ns dies to 100 ns; 170 ns then survives (70 ns after 100 ns).
        assert_eq!(tags, vec![100e-9, 170e-9, 400e-9]);
    }

    #[test]
    fn dead_time_in_detection_enforces_spacing() {
        let s = flat_series(5e6, 10e-9, 1 << 19);
        let det = DetectorModel {
            dead_time: 200e-9,
            ..DetectorModel::ideal(0.8)
        };
        let tags = detect_timetags(&s, &det, 11).unwrap();
        assert!(tags
            .tags
            .windows(2)
            .all(|w| w[1] - w[0] >= det.dead_time - 1e-15));
    }

    #[test]
    fn jitter_keeps_stream_sorted_and_in_range() {
        let s = flat_series(2e6, 10e-9, 1 << 18);
        let det = DetectorModel {
            jitter_sigma: 30e-9,
            ..DetectorModel::ideal(0.5)
        };
        let tags = detect_timetags(&s, &det, 13).unwrap();
        assert!(tags.tags.windows(2).all(|w| w[0] < w[1]));
        assert!(tags
            .tags
            .iter()
            .all(|&t| t >= tags.t0 && t <= tags.t0 + tags.duration));
    }

    #[test]
    fn detection_is_deterministic() {
        let s = flat_series(2e6, 10e-9, 1 << 16);
        let det = DetectorModel {
            jitter_sigma: 10e-9,
            dead_time: 40e-9,
            ..DetectorModel::ideal(0.7)
        };
        let a = detect_timetags(&s, &det, 21).unwrap();
        let b = detect_timetags(&s, &det, 21).unwrap();
        assert_eq!(a, b);
        let c = detect_timetags(&s, &det, 22).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rate_guard_rejects_hot_input() {
        let s = flat_series(2e8, 10e-9, 4096);
        let err = detect_timetags(&s, &DetectorModel::ideal(1.0), 1).unwrap_err();
        assert!(matches!(err, Error::RateGuard(_)));
        assert!(err.to_string().contains("finer dt"), "{err}");
    }

    #[test]
    fn tag_dump_round_trips() {
        let s = flat_series(2e6, 10e-9, 1 << 16);
        let tags = detect_timetags_on_channel(&s, &DetectorModel::ideal(0.5), 5, "D1").unwrap();
        let mut buf = Vec::new();
        write_tag_dump(&tags, &mut buf).unwrap();
        let back = read_tag_dump(buf.as_slice()).unwrap();
        assert_eq!(back.channel_id, "D1");
        assert_eq!(back.len(), tags.len());
        assert!((back.duration - tags.duration).abs() < 1e-12);
        for (a, b) in tags.tags.iter().zip(&back.tags) {
            assert!((a - b).abs() < 1e-15 + 1e-15 * a.abs().max(1.0));
        }
    }
}
