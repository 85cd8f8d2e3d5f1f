//! Estimators for everything the experiment measures: singles rates,
//! windowed coincidences, normalized coincidence, g²(τ) lag histograms,
//! direct intensity moments, fluctuation correlations, and sinusoidal
//! fringe fits.
//!
//! Coincidence pairing is greedy and single-use: tags are processed in
//! merged time order and an incoming tag pairs with the oldest still-unpaired
//! tag of the other channel inside the window, which is how a hardware
//! gate behaves at low rates. An O(N²) re-implementation of the same rule
//! serves as the validation oracle in the test suite.

use std::collections::VecDeque;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detection::TimeTagSeries;
use crate::error::{Error, Result};
use crate::field::{FieldTrace, RealSeries};

/// Coincidence window and lag-histogram geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceConfig {
    /// Full window width, s: tags coincide when |t₂−t₁| ≤ window/2.
    pub window: f64,
    /// Lag histogram bin width, s.
    pub histogram_bin: f64,
    /// Maximum |lag| covered by the histogram, s.
    pub histogram_max_lag: f64,
}

impl CoincidenceConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.window > 0.0
            && self.histogram_bin > 0.0
            && self.histogram_max_lag >= self.histogram_bin
            && [self.window, self.histogram_bin, self.histogram_max_lag]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "coincidence config requires window > 0, histogram_bin > 0 and \
                 histogram_max_lag >= histogram_bin (got {self:?})"
            )))
        }
    }
}

/// Number of tags inside the interval.
pub fn count_singles(tags: &TimeTagSeries, interval: Range<f64>) -> u64 {
    tags.tags
        .iter()
        .filter(|&&t| interval.contains(&t))
        .count() as u64
}

/// Greedy single-use coincidence count over the interval.
///
/// Pairing runs over the full series in one linear pass; a pair is
/// attributed to the interval containing its earlier tag.
pub fn count_coincidences(
    tags1: &TimeTagSeries,
    tags2: &TimeTagSeries,
    cfg: &CoincidenceConfig,
    interval: Range<f64>,
) -> u64 {
    let mut count = 0u64;
    pair_greedy(&tags1.tags, &tags2.tags, cfg.window / 2.0, |early, _late| {
        if interval.contains(&early) {
            count += 1;
        }
    });
    count
}

/// [`count_coincidences`] over the union of both spans.
pub fn count_coincidences_total(
    tags1: &TimeTagSeries,
    tags2: &TimeTagSeries,
    cfg: &CoincidenceConfig,
) -> u64 {
    let start = tags1.t0.min(tags2.t0) - 1.0;
    let end = tags1.end().max(tags2.end()) + 1.0;
    count_coincidences(tags1, tags2, cfg, start..end)
}

/// Merged-stream greedy pairing. Calls `on_pair(earlier, later)` once per
/// accepted pair. Ties between channels resolve channel 1 first.
fn pair_greedy<F: FnMut(f64, f64)>(tags1: &[f64], tags2: &[f64], half_window: f64, mut on_pair: F) {
    let mut pending1: VecDeque<f64> = VecDeque::new();
    let mut pending2: VecDeque<f64> = VecDeque::new();
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let take_first = match (tags1.get(i), tags2.get(j)) {
            (Some(&a), Some(&b)) => a <= b,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        let (t, own, other) = if take_first {
            let t = tags1[i];
            i += 1;
            (t, &mut pending1, &mut pending2)
        } else {
            let t = tags2[j];
            j += 1;
            (t, &mut pending2, &mut pending1)
        };
        while let Some(&front) = other.front() {
            if t - front > half_window {
                other.pop_front();
            } else {
                break;
            }
        }
        if let Some(partner) = other.pop_front() {
            on_pair(partner.min(t), partner.max(t));
        } else {
            own.push_back(t);
        }
    }
}

/// N_c/√(N₁N₂); zero when either singles count is zero.
pub fn normalized_coincidence(nc: u64, n1: u64, n2: u64) -> f64 {
    if n1 == 0 || n2 == 0 {
        0.0
    } else {
        nc as f64 / ((n1 as f64) * (n2 as f64)).sqrt()
    }
}

/// Pair-lag histogram normalized by the accidental baseline so that
/// uncorrelated streams sit at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagHistogram {
    /// Bin centers, s.
    pub lags: Vec<f64>,
    pub g2: Vec<f64>,
    pub counts: Vec<u64>,
    /// Accidental baseline per bin (rate₁·rate₂·bin·overlap, edge-corrected).
    pub expected: Vec<f64>,
}

impl LagHistogram {
    /// g² of the bin centered at zero lag.
    pub fn zero_lag_value(&self) -> f64 {
        self.g2[self.g2.len() / 2]
    }

    /// Full width at half maximum of the bunching peak above the baseline 1,
    /// from linear interpolation on each flank. None when there is no peak.
    pub fn fwhm(&self) -> Option<f64> {
        let center = self.g2.len() / 2;
        let peak = self.g2[center];
        if peak <= 1.0 {
            return None;
        }
        let half = 1.0 + (peak - 1.0) / 2.0;
        let crossing = |mut idx: usize, step: isize| -> Option<f64> {
            loop {
                let next = idx as isize + step;
                if next < 0 || next as usize >= self.g2.len() {
                    return None;
                }
                let next = next as usize;
                if self.g2[next] <= half {
                    let frac = (self.g2[idx] - half) / (self.g2[idx] - self.g2[next]);
                    return Some(self.lags[idx] + frac * (self.lags[next] - self.lags[idx]));
                }
                idx = next;
            }
        };
        let right = crossing(center, 1)?;
        let left = crossing(center, -1)?;
        Some(right - left)
    }
}

/// Accumulates lag-histogram counts and accidental baselines across
/// independent realizations; merging is commutative and associative.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Accumulator {
    bin: f64,
    half_bins: usize,
    counts: Vec<u64>,
    expected: Vec<f64>,
}

impl G2Accumulator {
    pub fn new(cfg: &CoincidenceConfig) -> Result<Self> {
        cfg.validate()?;
        let half_bins = (cfg.histogram_max_lag / cfg.histogram_bin).floor() as usize;
        let n_bins = 2 * half_bins + 1;
        Ok(G2Accumulator {
            bin: cfg.histogram_bin,
            half_bins,
            counts: vec![0; n_bins],
            expected: vec![0.0; n_bins],
        })
    }

    /// Add all pairs of one realization. Both series must span at least ten
    /// times the histogram reach.
    pub fn add(&mut self, tags1: &TimeTagSeries, tags2: &TimeTagSeries) -> Result<()> {
        let reach = (self.half_bins as f64 + 0.5) * self.bin;
        let span = tags1.duration.min(tags2.duration);
        if reach > span / 10.0 {
            return Err(Error::StatisticsGuard(format!(
                "histogram max lag {:.3e} s exceeds a tenth of the series span {:.3e} s",
                reach, span
            )));
        }

        let t1 = &tags1.tags;
        let t2 = &tags2.tags;
        let mut start = 0usize;
        for &a in t1 {
            while start < t2.len() && t2[start] < a - reach {
                start += 1;
            }
            for &b in &t2[start..] {
                if b > a + reach {
                    break;
                }
                let idx = ((b - a) / self.bin).round() as isize + self.half_bins as isize;
                if (0..self.counts.len() as isize).contains(&idx) {
                    self.counts[idx as usize] += 1;
                }
            }
        }

        // Accidental baseline with the triangular overlap correction.
        let overlap = tags1.end().min(tags2.end()) - tags1.t0.max(tags2.t0);
        if overlap > 0.0 {
            let rate1 = t1.len() as f64 / tags1.duration;
            let rate2 = t2.len() as f64 / tags2.duration;
            for k in 0..self.expected.len() {
                let lag = (k as isize - self.half_bins as isize) as f64 * self.bin;
                let effective = (overlap - lag.abs()).max(0.0);
                self.expected[k] += rate1 * rate2 * self.bin * effective;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &G2Accumulator) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.expected.iter_mut().zip(&other.expected) {
            *a += b;
        }
    }

    pub fn finalize(&self) -> LagHistogram {
        let lags: Vec<f64> = (0..self.counts.len())
            .map(|k| (k as isize - self.half_bins as isize) as f64 * self.bin)
            .collect();
        let g2 = self
            .counts
            .iter()
            .zip(&self.expected)
            .map(|(&c, &e)| if e > 0.0 { c as f64 / e } else { 0.0 })
            .collect();
        LagHistogram {
            lags,
            g2,
            counts: self.counts.clone(),
            expected: self.expected.clone(),
        }
    }
}

/// One-shot lag histogram of a single tag-series pair.
pub fn g2_histogram(
    tags1: &TimeTagSeries,
    tags2: &TimeTagSeries,
    cfg: &CoincidenceConfig,
) -> Result<LagHistogram> {
    let mut acc = G2Accumulator::new(cfg)?;
    acc.add(tags1, tags2)?;
    Ok(acc.finalize())
}

/// First and second moments of a pair of intensity series, with the
/// complex field cross-correlation when fields are supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub mean_i1_i2: f64,
    /// ⟨ΔI₁ΔI₂⟩ = ⟨I₁I₂⟩ − ⟨I₁⟩⟨I₂⟩.
    pub fluctuation_covariance: f64,
    /// ⟨E₁*E₂⟩ when computed from field traces.
    pub cross_field: Option<Complex64>,
    pub n_samples: u64,
}

/// Running sums behind [`MomentRecord`]; value type with commutative merge.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentAccumulator {
    sum_i1: f64,
    sum_i2: f64,
    sum_i1_i2: f64,
    sum_cross: Complex64,
    has_fields: bool,
    n: u64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_intensities(&mut self, i1: &RealSeries, i2: &RealSeries) -> Result<()> {
        let start = i1.valid_start.max(i2.valid_start);
        let end = i1.len().min(i2.len());
        if start >= end {
            return Err(Error::EmptyOverlap);
        }
        for j in start..end {
            let a = i1.values[j];
            let b = i2.values[j];
            self.sum_i1 += a;
            self.sum_i2 += b;
            self.sum_i1_i2 += a * b;
        }
        self.n += (end - start) as u64;
        Ok(())
    }

    pub fn add_fields(&mut self, e1: &FieldTrace, e2: &FieldTrace) -> Result<()> {
        let start = e1.valid_start.max(e2.valid_start);
        let end = e1.len().min(e2.len());
        if start >= end {
            return Err(Error::EmptyOverlap);
        }
        for j in start..end {
            let a = e1.samples[j];
            let b = e2.samples[j];
            let (ia, ib) = (a.norm_sqr(), b.norm_sqr());
            self.sum_i1 += ia;
            self.sum_i2 += ib;
            self.sum_i1_i2 += ia * ib;
            self.sum_cross += a.conj() * b;
        }
        self.has_fields = true;
        self.n += (end - start) as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.sum_i1 += other.sum_i1;
        self.sum_i2 += other.sum_i2;
        self.sum_i1_i2 += other.sum_i1_i2;
        self.sum_cross += other.sum_cross;
        self.has_fields |= other.has_fields;
        self.n += other.n;
    }

    pub fn finalize(&self) -> Result<MomentRecord> {
        if self.n == 0 {
            return Err(Error::EmptyOverlap);
        }
        let n = self.n as f64;
        let mean_i1 = self.sum_i1 / n;
        let mean_i2 = self.sum_i2 / n;
        let mean_i1_i2 = self.sum_i1_i2 / n;
        Ok(MomentRecord {
            mean_i1,
            mean_i2,
            mean_i1_i2,
            fluctuation_covariance: mean_i1_i2 - mean_i1 * mean_i2,
            cross_field: self.has_fields.then(|| self.sum_cross / n),
            n_samples: self.n,
        })
    }
}

/// Moments of two intensity series over their common valid region.
pub fn intensity_moments(i1: &RealSeries, i2: &RealSeries) -> Result<MomentRecord> {
    let mut acc = MomentAccumulator::new();
    acc.add_intensities(i1, i2)?;
    acc.finalize()
}

/// Moments computed from field traces, including ⟨E₁*E₂⟩.
pub fn intensity_moments_with_fields(e1: &FieldTrace, e2: &FieldTrace) -> Result<MomentRecord> {
    let mut acc = MomentAccumulator::new();
    acc.add_fields(e1, e2)?;
    acc.finalize()
}

/// One dwell point of a fringe scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    /// Scan wall time, s.
    pub wall_time: f64,
    /// Piezo-controlled path difference of interferometer 1, m.
    pub delta1: f64,
    pub delta2: f64,
    pub n1: u64,
    pub n2: u64,
    pub nc: u64,
    /// N_c/√(N₁N₂).
    pub normalized: f64,
}

impl FringePoint {
    pub fn new(wall_time: f64, delta1: f64, delta2: f64, n1: u64, n2: u64, nc: u64) -> Self {
        FringePoint {
            wall_time,
            delta1,
            delta2,
            n1,
            n2,
            nc,
            normalized: normalized_coincidence(nc, n1, n2),
        }
    }
}

/// A fringe scan: per-dwell records plus the coordinate the fit runs over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeSeries {
    pub points: Vec<FringePoint>,
    /// Scan coordinate per point (piezo travel in m, or wall time in s for
    /// static runs).
    pub scan_positions: Vec<f64>,
    pub scan_label: String,
}

impl FringeSeries {
    pub fn normalized_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.normalized).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Visibility pinned at the thermal tandem maximum 1/3.
    FixedVisibility,
    /// Visibility fit freely in [0, 1].
    Free,
}

/// The theoretical ceiling of the thermal tandem fringe visibility.
pub const THERMAL_TANDEM_VISIBILITY: f64 = 1.0 / 3.0;

/// Result of a sinusoidal fringe fit `baseline·(1 + V·cos(2πx/period + φ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub mode: FitMode,
    pub visibility: f64,
    pub visibility_stderr: f64,
    /// Fringe period in scan-coordinate units.
    pub period: f64,
    pub phase: f64,
    pub baseline: f64,
    pub baseline_stderr: f64,
    pub residual_rms: f64,
    pub note: Option<String>,
}

/// Fit the normalized coincidence of a fringe series.
pub fn fit_fringe(series: &FringeSeries, mode: FitMode, period_hint: f64) -> FringeFit {
    fit_sinusoid(&series.scan_positions, &series.normalized_values(), mode, period_hint)
}

/// Sinusoid fit on arbitrary (x, y) data. Deterministic: linear least
/// squares in the quadratures nested inside a bracketed period search
/// (and a phase search for the fixed-visibility mode).
pub fn fit_sinusoid(x: &[f64], y: &[f64], mode: FitMode, period_hint: f64) -> FringeFit {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let mean_y = if n > 0 { y.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let spread = y.iter().fold(0.0f64, |m, &v| m.max((v - mean_y).abs()));
    let degenerate = n < 4 || spread <= 1e-300 || !(period_hint > 0.0 && period_hint.is_finite());
    if degenerate {
        let visibility = if mode == FitMode::FixedVisibility {
            THERMAL_TANDEM_VISIBILITY
        } else {
            0.0
        };
        return FringeFit {
            mode,
            visibility,
            visibility_stderr: f64::INFINITY,
            period: period_hint.max(f64::MIN_POSITIVE),
            phase: 0.0,
            baseline: mean_y,
            baseline_stderr: f64::INFINITY,
            residual_rms: 0.0,
            note: Some(
                "degenerate data: too few points or no variation; parameters poorly constrained"
                    .into(),
            ),
        };
    }

    match mode {
        FitMode::Free => fit_free(x, y, period_hint),
        FitMode::FixedVisibility => fit_fixed(x, y, period_hint),
    }
}

/// Free-visibility fit at a pinned period (quadrature linear least
/// squares); used when the expected fringe period is known a priori.
pub fn fit_sinusoid_at_period(x: &[f64], y: &[f64], period: f64) -> FringeFit {
    let n = x.len();
    if n < 4 || !(period > 0.0 && period.is_finite()) {
        return fit_sinusoid(x, y, FitMode::Free, period);
    }
    let (beta, rss) = quadrature_fit(x, y, period);
    let (baseline, c, s) = (beta[0], beta[1], beta[2]);
    let amplitude = c.hypot(s);
    let visibility = if baseline.abs() > 0.0 {
        (amplitude / baseline.abs()).min(1.0)
    } else {
        0.0
    };
    FringeFit {
        mode: FitMode::Free,
        visibility,
        visibility_stderr: f64::NAN,
        period,
        phase: wrap_phase((-s).atan2(c)),
        baseline,
        baseline_stderr: f64::NAN,
        residual_rms: (rss / n as f64).sqrt(),
        note: Some("period pinned; visibility from quadrature amplitudes".into()),
    }
}

/// Linear least squares of y = B + C·cosθ + S·sinθ at fixed period.
/// Returns ((B, C, S), rss).
fn quadrature_fit(x: &[f64], y: &[f64], period: f64) -> ([f64; 3], f64) {
    let omega = 2.0 * std::f64::consts::PI / period;
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    let mut yy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let (s, c) = (omega * xi).sin_cos();
        let row = [1.0, c, s];
        for p in 0..3 {
            for q in 0..3 {
                a[p][q] += row[p] * row[q];
            }
            b[p] += row[p] * yi;
        }
        yy += yi * yi;
    }
    match solve3(a, b) {
        Some(beta) => {
            let rss = (yy - beta[0] * b[0] - beta[1] * b[1] - beta[2] * b[2]).max(0.0);
            (beta, rss)
        }
        None => ([y.iter().sum::<f64>() / x.len() as f64, 0.0, 0.0], f64::INFINITY),
    }
}

/// Explicit residual sum at the final parameters (the fast normal-equation
/// form suffers cancellation near perfect fits).
fn residual_sum_quadrature(x: &[f64], y: &[f64], period: f64, beta: &[f64; 3]) -> f64 {
    let omega = 2.0 * std::f64::consts::PI / period;
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let (s, c) = (omega * xi).sin_cos();
            let r = yi - beta[0] - beta[1] * c - beta[2] * s;
            r * r
        })
        .sum()
}

fn fit_free(x: &[f64], y: &[f64], period_hint: f64) -> FringeFit {
    let rss_of = |p: f64| quadrature_fit(x, y, p).1;
    let period = search_period(rss_of, period_hint);
    let (beta, _) = quadrature_fit(x, y, period);
    let rss = residual_sum_quadrature(x, y, period, &beta);
    let (baseline, c, s) = (beta[0], beta[1], beta[2]);
    let amplitude = c.hypot(s);
    let phase = wrap_phase((-s).atan2(c));

    let n = x.len() as f64;
    let dof = (n - 4.0).max(1.0);
    let sigma2 = rss / dof;
    // Covariance of (B, C, S) from the normal equations at the best period.
    let omega = 2.0 * std::f64::consts::PI / period;
    let mut a = [[0.0f64; 3]; 3];
    for &xi in x {
        let (sn, cs) = (omega * xi).sin_cos();
        let row = [1.0, cs, sn];
        for p in 0..3 {
            for q in 0..3 {
                a[p][q] += row[p] * row[q];
            }
        }
    }
    let cov = invert3(a).map(|inv| {
        [
            [inv[0][0] * sigma2, inv[0][1] * sigma2, inv[0][2] * sigma2],
            [inv[1][0] * sigma2, inv[1][1] * sigma2, inv[1][2] * sigma2],
            [inv[2][0] * sigma2, inv[2][1] * sigma2, inv[2][2] * sigma2],
        ]
    });
    let (baseline_stderr, visibility_stderr) = match cov {
        Some(cv) if amplitude > 0.0 && baseline.abs() > 0.0 => {
            let da = [0.0, c / amplitude, s / amplitude];
            let var_a = da[1] * da[1] * cv[1][1]
                + da[2] * da[2] * cv[2][2]
                + 2.0 * da[1] * da[2] * cv[1][2];
            let cov_ab = da[1] * cv[0][1] + da[2] * cv[0][2];
            let v = amplitude / baseline;
            let var_v = (var_a / (baseline * baseline)
                + v * v * cv[0][0] / (baseline * baseline)
                - 2.0 * v * cov_ab / (baseline * baseline))
                .max(0.0);
            (cv[0][0].max(0.0).sqrt(), var_v.sqrt())
        }
        _ => (f64::INFINITY, f64::INFINITY),
    };

    let mut visibility = if baseline.abs() > 0.0 {
        amplitude / baseline.abs()
    } else {
        0.0
    };
    let mut note = None;
    if visibility > 1.0 {
        visibility = 1.0;
        note = Some("amplitude exceeded baseline; visibility clamped to 1".to_string());
    }
    let span = x.iter().cloned().fold(f64::MIN, f64::max)
        - x.iter().cloned().fold(f64::MAX, f64::min);
    if span < 2.0 * period && note.is_none() {
        note = Some("fewer than two fringe periods of data; fit is weakly constrained".into());
    }

    FringeFit {
        mode: FitMode::Free,
        visibility,
        visibility_stderr,
        period,
        phase,
        baseline,
        baseline_stderr,
        residual_rms: (rss / n).sqrt(),
        note,
    }
}

fn fit_fixed(x: &[f64], y: &[f64], period_hint: f64) -> FringeFit {
    let v = THERMAL_TANDEM_VISIBILITY;
    // For a candidate (period, phase) the optimal baseline is the linear
    // projection onto the pinned-shape model.
    let fit_at = |period: f64, phase: f64| -> (f64, f64) {
        let omega = 2.0 * std::f64::consts::PI / period;
        let (mut mm, mut my, mut yy) = (0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let m = 1.0 + v * (omega * xi + phase).cos();
            mm += m * m;
            my += m * yi;
            yy += yi * yi;
        }
        let baseline = if mm > 0.0 { my / mm } else { 0.0 };
        (baseline, (yy - baseline * my).max(0.0))
    };
    let rss_at_period = |period: f64| -> (f64, f64) {
        // Coarse phase scan plus golden refinement.
        let mut best = (0.0, f64::INFINITY);
        let coarse = 32;
        for k in 0..coarse {
            let phase = 2.0 * std::f64::consts::PI * k as f64 / coarse as f64;
            let (_, rss) = fit_at(period, phase);
            if rss < best.1 {
                best = (phase, rss);
            }
        }
        let width = 2.0 * std::f64::consts::PI / coarse as f64;
        let phase = golden_min(
            |p| fit_at(period, p).1,
            best.0 - width,
            best.0 + width,
            1e-10,
        );
        (phase, fit_at(period, phase).1)
    };

    let period = search_period(|p| rss_at_period(p).1, period_hint);
    let (phase, _) = rss_at_period(period);
    let (baseline, rss) = fit_at(period, phase);

    let n = x.len() as f64;
    let dof = (n - 3.0).max(1.0);
    let sigma2 = rss / dof;
    // Var(B) for the one-parameter linear projection.
    let omega = 2.0 * std::f64::consts::PI / period;
    let mm: f64 = x
        .iter()
        .map(|&xi| {
            let m = 1.0 + v * (omega * xi + phase).cos();
            m * m
        })
        .sum();
    let baseline_stderr = if mm > 0.0 { (sigma2 / mm).sqrt() } else { f64::INFINITY };

    FringeFit {
        mode: FitMode::FixedVisibility,
        visibility: v,
        visibility_stderr: 0.0,
        period,
        phase: wrap_phase(phase),
        baseline,
        baseline_stderr,
        residual_rms: (rss / n).sqrt(),
        note: None,
    }
}

/// Coarse log-spaced scan over [hint/2, 2·hint] followed by golden-section
/// refinement of the best bracket.
fn search_period<F: Fn(f64) -> f64>(rss_of: F, hint: f64) -> f64 {
    let lo = hint * 0.5;
    let hi = hint * 2.0;
    let steps = 256;
    let ratio = (hi / lo).powf(1.0 / steps as f64);
    let mut best_k = 0;
    let mut best = f64::INFINITY;
    let mut p = lo;
    let mut grid = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        grid.push(p);
        let r = rss_of(p);
        if r < best {
            best = r;
            best_k = k;
        }
        p *= ratio;
    }
    let a = grid[best_k.saturating_sub(1)];
    let b = grid[(best_k + 1).min(steps)];
    golden_min(rss_of, a, b, 1e-12)
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, rel_tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= rel_tol * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn wrap_phase(p: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = p % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let inv = invert3(a)?;
    let mut out = [0.0; 3];
    for p in 0..3 {
        for q in 0..3 {
            out[p] += inv[p][q] * b[q];
        }
    }
    Some(out)
}

fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{detect_timetags, DetectorModel};
    use crate::field::RealSeries;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn series(tags: Vec<f64>, duration: f64) -> TimeTagSeries {
        TimeTagSeries {
            tags,
            t0: 0.0,
            duration,
            channel_id: "T".into(),
        }
    }

    fn cfg(window: f64) -> CoincidenceConfig {
        CoincidenceConfig {
            window,
            histogram_bin: window,
            histogram_max_lag: 10.0 * window,
        }
    }

    /// O(N²) re-implementation of the greedy pairing rule: walk the merged
    /// stream and scan the full opposite list for the earliest unused
    /// partner within the window.
    fn brute_force_coincidences(t1: &[f64], t2: &[f64], half_window: f64) -> u64 {
        #[derive(Clone, Copy)]
        struct Tag {
            t: f64,
            ch: u8,
            idx: usize,
        }
        let mut merged: Vec<Tag> = t1
            .iter()
            .enumerate()
            .map(|(idx, &t)| Tag { t, ch: 1, idx })
            .chain(t2.iter().enumerate().map(|(idx, &t)| Tag { t, ch: 2, idx }))
            .collect();
        merged.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap().then(a.ch.cmp(&b.ch)));
        let mut used1 = vec![false; t1.len()];
        let mut used2 = vec![false; t2.len()];
        let mut count = 0;
        for tag in &merged {
            let (own_used, other_used, other_tags): (&mut Vec<bool>, &mut Vec<bool>, &[f64]) =
                if tag.ch == 1 {
                    (&mut used1, &mut used2, t2)
                } else {
                    (&mut used2, &mut used1, t1)
                };
            if own_used[tag.idx] {
                continue;
            }
            let mut partner = None;
            for (k, &ot) in other_tags.iter().enumerate() {
                if other_used[k] || ot > tag.t {
                    continue;
                }
                if tag.t - ot <= half_window {
                    partner = Some(k);
                    break;
                }
            }
            if let Some(k) = partner {
                other_used[k] = true;
                own_used[tag.idx] = true;
                count += 1;
            }
        }
        count
    }

    fn greedy_count(t1: &[f64], t2: &[f64], half_window: f64) -> u64 {
        let mut c = 0;
        pair_greedy(t1, t2, half_window, |_, _| c += 1);
        c
    }

    #[test]
    fn singles_counting() {
        let s = series(vec![], 1.0);
        assert_eq!(count_singles(&s, 0.0..1.0), 0);
        let s = series(vec![0.1, 0.2, 0.5, 0.9], 1.0);
        assert_eq!(count_singles(&s, 0.0..1.0), 4);
        assert_eq!(count_singles(&s, 0.15..0.6), 2);
    }

    #[test]
    fn singles_count_matches_poisson_rate() {
        let s = RealSeries {
            values: vec![4e6; 1 << 19],
            dt: 10e-9,
            t0: 0.0,
            valid_start: 0,
        };
        let tags = detect_timetags(&s, &DetectorModel::ideal(0.5), 17).unwrap();
        let total = count_singles(&tags, tags.t0..tags.end() + 1.0);
        let expected = 0.5 * 4e6 * tags.duration;
        assert!((total as f64 - expected).abs() < 5.0 * expected.sqrt());
    }

    #[test]
    fn identical_series_self_pair() {
        let tags = series(vec![0.1, 0.2, 0.35, 0.7], 1.0);
        let n = count_coincidences_total(&tags, &tags.clone(), &cfg(1e-3));
        assert_eq!(n, 4);
    }

    #[test]
    fn interval_partition_is_additive() {
        let t1 = series(vec![0.10, 0.20, 0.35, 0.70, 0.71], 1.0);
        let t2 = series(vec![0.11, 0.21, 0.36, 0.72, 0.90], 1.0);
        let c = cfg(0.05);
        let total = count_coincidences(&t1, &t2, &c, 0.0..1.0);
        for split in [0.15, 0.205, 0.5, 0.705] {
            let a = count_coincidences(&t1, &t2, &c, 0.0..split);
            let b = count_coincidences(&t1, &t2, &c, split..1.0);
            assert_eq!(a + b, total, "split at {split}");
        }
    }

    #[test]
    fn greedy_matches_brute_force_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n1 = rng.gen_range(0..60);
            let n2 = rng.gen_range(0..60);
            let mut t1: Vec<f64> = (0..n1).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut t2: Vec<f64> = (0..n2).map(|_| rng.gen_range(0.0..1.0)).collect();
            t1.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let half_window = rng.gen_range(1e-4..0.1);
            assert_eq!(
                greedy_count(&t1, &t2, half_window),
                brute_force_coincidences(&t1, &t2, half_window),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn accidental_rate_for_independent_streams() {
        let flat = RealSeries {
            values: vec![3e6; 1 << 19],
            dt: 10e-9,
            t0: 0.0,
            valid_start: 0,
        };
        let a = detect_timetags(&flat, &DetectorModel::ideal(0.6), 1).unwrap();
        let b = detect_timetags(&flat, &DetectorModel::ideal(0.6), 2).unwrap();
        let window = 20e-9;
        let nc = count_coincidences_total(&a, &b, &cfg(window));
        let t = flat.valid_span();
        let expected = (a.len() as f64 / t) * (b.len() as f64 / t) * window * t;
        assert!(
            (nc as f64 - expected).abs() < 6.0 * expected.sqrt(),
            "Nc {nc}, accidental estimate {expected}"
        );
    }

    #[test]
    fn normalized_coincidence_cases() {
        assert_eq!(normalized_coincidence(0, 10, 20), 0.0);
        assert_eq!(normalized_coincidence(5, 0, 20), 0.0);
        assert_eq!(normalized_coincidence(7, 7, 7), 1.0);
        assert_relative_eq!(normalized_coincidence(10, 100, 400), 0.05);
    }

    #[test]
    fn histogram_flat_for_independent_streams() {
        let flat = RealSeries {
            values: vec![3e6; 1 << 19],
            dt: 10e-9,
            t0: 0.0,
            valid_start: 0,
        };
        let a = detect_timetags(&flat, &DetectorModel::ideal(0.6), 3).unwrap();
        let b = detect_timetags(&flat, &DetectorModel::ideal(0.6), 4).unwrap();
        let c = CoincidenceConfig {
            window: 15e-9,
            histogram_bin: 40e-9,
            histogram_max_lag: 400e-9,
        };
        let h = g2_histogram(&a, &b, &c).unwrap();
        for (k, v) in h.g2.iter().enumerate() {
            assert!((v - 1.0).abs() < 0.15, "bin {k}: g2 = {v}");
        }
    }

    #[test]
    fn histogram_guard_rejects_long_lags() {
        let a = series((0..100).map(|k| k as f64 * 1e-3).collect(), 0.1);
        let c = CoincidenceConfig {
            window: 1e-3,
            histogram_bin: 1e-3,
            histogram_max_lag: 0.05,
        };
        assert!(matches!(
            g2_histogram(&a, &a.clone(), &c),
            Err(Error::StatisticsGuard(_))
        ));
    }

    #[test]
    fn moments_of_identical_thermal_series() {
        let p = crate::field::SpectralProfile {
            lineshape: crate::field::Lineshape::Gaussian,
            center_wavelength: 780e-9,
            coherence_time: 572e-9,
            mean_intensity: 1.0,
        };
        let t = crate::field::synthesize_thermal(&p, 10e-9, 1 << 18, 61).unwrap();
        let i = crate::field::intensity(&t);
        let m = intensity_moments(&i, &i).unwrap();
        assert_relative_eq!(m.mean_i1_i2 / (m.mean_i1 * m.mean_i2), 2.0, max_relative = 0.05);

        let t2 = crate::field::synthesize_thermal(&p, 10e-9, 1 << 18, 62).unwrap();
        let m = intensity_moments(&i, &crate::field::intensity(&t2)).unwrap();
        assert!(
            m.fluctuation_covariance.abs() < 0.05 * m.mean_i1 * m.mean_i2,
            "independent traces should not covary: {}",
            m.fluctuation_covariance
        );
    }

    #[test]
    fn moments_reject_empty_overlap() {
        let a = RealSeries {
            values: vec![1.0; 8],
            dt: 1.0,
            t0: 0.0,
            valid_start: 8,
        };
        assert!(matches!(
            intensity_moments(&a, &a.clone()),
            Err(Error::EmptyOverlap)
        ));
    }

    #[test]
    fn moment_accumulator_merge_is_partition_invariant() {
        let mk = |seed| {
            let p = crate::field::SpectralProfile {
                lineshape: crate::field::Lineshape::Gaussian,
                center_wavelength: 780e-9,
                coherence_time: 572e-9,
                mean_intensity: 1.0,
            };
            crate::field::synthesize_thermal(&p, 10e-9, 1 << 14, seed).unwrap()
        };
        let traces: Vec<_> = (0..4).map(|k| (mk(100 + k), mk(200 + k))).collect();

        let mut all = MomentAccumulator::new();
        for (a, b) in &traces {
            all.add_fields(a, b).unwrap();
        }
        let mut left = MomentAccumulator::new();
        let mut right = MomentAccumulator::new();
        for (a, b) in &traces[..2] {
            left.add_fields(a, b).unwrap();
        }
        for (a, b) in &traces[2..] {
            right.add_fields(a, b).unwrap();
        }
        left.merge(&right);
        assert_eq!(all.finalize().unwrap(), left.finalize().unwrap());
    }

    #[test]
    fn free_fit_recovers_exact_raised_cosine() {
        let period = 780e-9;
        let n = 40;
        let x: Vec<f64> = (0..n).map(|k| k as f64 * 63e-9).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| {
                1.3 * (1.0
                    + (1.0 / 3.0) * (2.0 * std::f64::consts::PI * xi / period + 0.7).cos())
            })
            .collect();
        let fit = fit_sinusoid(&x, &y, FitMode::Free, 700e-9);
        assert_relative_eq!(fit.period, period, max_relative = 1e-6);
        assert_relative_eq!(fit.visibility, 1.0 / 3.0, max_relative = 1e-6);
        assert_relative_eq!(fit.baseline, 1.3, max_relative = 1e-6);
        assert_relative_eq!(fit.phase, 0.7, epsilon = 1e-5);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn fixed_fit_recovers_period_and_baseline() {
        let period = 390e-9;
        let n = 50;
        let x: Vec<f64> = (0..n).map(|k| k as f64 * 32e-9).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| {
                0.08 * (1.0
                    + (1.0 / 3.0) * (2.0 * std::f64::consts::PI * xi / period - 1.1).cos())
            })
            .collect();
        let fit = fit_sinusoid(&x, &y, FitMode::FixedVisibility, 400e-9);
        assert_eq!(fit.visibility, 1.0 / 3.0);
        assert_relative_eq!(fit.period, period, max_relative = 1e-5);
        assert_relative_eq!(fit.baseline, 0.08, max_relative = 1e-5);
    }

    #[test]
    fn free_fit_on_flat_noise_reports_tiny_visibility() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..40).map(|k| k as f64 * 63e-9).collect();
        let y: Vec<f64> = (0..40).map(|_| 1.0 + 0.01 * rng.gen_range(-1.0..1.0)).collect();
        let fit = fit_sinusoid(&x, &y, FitMode::Free, 780e-9);
        assert!(fit.visibility < 0.02, "visibility = {}", fit.visibility);
    }

    #[test]
    fn degenerate_fit_does_not_crash() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![2.0; 5];
        let fit = fit_sinusoid(&x, &y, FitMode::Free, 1.0);
        assert_eq!(fit.visibility, 0.0);
        assert!(fit.note.is_some());
        assert_eq!(fit.baseline, 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn window_monotonicity(
            seed in 0u64..1000,
            w1 in 1e-4f64..0.05,
            factor in 1.0f64..5.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut t1: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut t2: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
            t1.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let narrow = greedy_count(&t1, &t2, w1 / 2.0);
            let wide = greedy_count(&t1, &t2, w1 * factor / 2.0);
            prop_assert!(wide >= narrow);
        }

        #[test]
        fn greedy_equals_brute_force(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let n1 = rng.gen_range(0..50);
            let n2 = rng.gen_range(0..50);
            let mut t1: Vec<f64> = (0..n1).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut t2: Vec<f64> = (0..n2).map(|_| rng.gen_range(0.0..1.0)).collect();
            t1.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let hw = rng.gen_range(1e-4..0.2);
            prop_assert_eq!(
                greedy_count(&t1, &t2, hw),
                brute_force_coincidences(&t1, &t2, hw)
            );
        }
    }
}
