//! Time-tag processing: coincidence matching and fixed-window binning.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_positive, Error, Result};
use crate::rotsim::{Bin, BinnedSeries, SeriesMeta};

/// Time-tagger tick length, stored as an integer number of femtoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TickResolution(u64);

impl TickResolution {
    pub fn from_femtoseconds(fs: u64) -> Result<Self> {
        if fs == 0 {
            return Err(Error::invalid("timestamp_resolution", "must be at least 1 fs"));
        }
        Ok(Self(fs))
    }

    /// Rejects resolutions that are not a whole number of femtoseconds.
    pub fn from_seconds(seconds: f64) -> Result<Self> {
        check_positive("timestamp_resolution", seconds)?;
        let fs = seconds * 1e15;
        let rounded = fs.round();
        if rounded < 1.0 || (fs - rounded).abs() > 1e-6 * rounded {
            return Err(Error::invalid(
                "timestamp_resolution",
                format!("{seconds} s is not a whole number of femtoseconds"),
            ));
        }
        Self::from_femtoseconds(rounded as u64)
    }

    pub fn femtoseconds(self) -> u64 {
        self.0
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 * 1e-15
    }

    pub fn ticks_to_seconds(self, ticks: u64) -> f64 {
        ticks as f64 * self.seconds()
    }

    /// Whole ticks in `seconds` (floored, tolerant of round-off just below
    /// an integer).
    pub fn whole_ticks(self, seconds: f64) -> u64 {
        let t = seconds / self.seconds();
        (t * (1.0 + 1e-12)).floor().max(0.0) as u64
    }

    /// Coincidence window in ticks; the window must be positive.
    pub fn window_ticks(self, window: f64) -> Result<u64> {
        check_positive("coincidence window", window)?;
        Ok(self.whole_ticks(window))
    }
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// Ticks since the start of acquisition.
    pub timestamp: u64,
    /// Detector channel, 1 or 2.
    pub channel: u8,
}

/// A matched click pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoincidenceEvent {
    /// Tick of the earlier click.
    pub timestamp: u64,
    /// `t(channel 2) − t(channel 1)` in ticks.
    pub delta: i64,
}

fn check_sorted(stream: &[u64], channel: u8) -> Result<()> {
    match stream.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::Unsorted { channel, index: i + 1 }),
        None => Ok(()),
    }
}

/// Greedy one-to-one matching of two sorted click streams.
///
/// Clicks are visited in time order (channel 1 first on equal timestamps).
/// An unmatched click pairs with the earliest unmatched click on the other
/// channel that lies within `window` ticks. Because every earlier click has
/// already been resolved, that partner is always the head of the other
/// stream, which makes the pass linear.
pub fn count_coincidences(stream1: &[u64], stream2: &[u64], window: u64) -> Result<Vec<CoincidenceEvent>> {
    check_sorted(stream1, 1)?;
    check_sorted(stream2, 2)?;
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < stream1.len() && j < stream2.len() {
        let (a, b) = (stream1[i], stream2[j]);
        if a <= b {
            if b - a <= window {
                out.push(CoincidenceEvent {
                    timestamp: a,
                    delta: (b - a) as i64,
                });
                j += 1;
            }
            i += 1;
        } else {
            if a - b <= window {
                out.push(CoincidenceEvent {
                    timestamp: b,
                    delta: -((a - b) as i64),
                });
                i += 1;
            }
            j += 1;
        }
    }
    Ok(out)
}

/// Coincidences with the window given in seconds.
pub fn count_coincidences_in_window(
    stream1: &[u64],
    stream2: &[u64],
    window: f64,
    resolution: TickResolution,
) -> Result<Vec<CoincidenceEvent>> {
    count_coincidences(stream1, stream2, resolution.window_ticks(window)?)
}

/// Output of [`bin_events`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedEvents {
    pub series: BinnedSeries,
    /// Events outside `[t0, t1)`.
    pub dropped: usize,
}

/// Number of bins of length `bin_duration` in `[t0, t1)`; the span must be a
/// positive whole multiple.
pub fn bin_count(bin_duration: f64, t0: f64, t1: f64) -> Result<usize> {
    check_positive("bin_duration", bin_duration)?;
    check_finite("t0", t0)?;
    check_finite("t1", t1)?;
    let ratio = (t1 - t0) / bin_duration;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::invalid(
            "span",
            format!("[{t0}, {t1}) is not a positive multiple of {bin_duration} s"),
        ));
    }
    Ok(k as usize)
}

/// Counts events per window. Bin `k` covers `[t0 + k·τ, t0 + (k+1)·τ)`;
/// `omega_lookup(t)` returns `(reference, target)` Ω at each bin centre.
pub fn bin_events<I, F>(times: I, bin_duration: f64, t0: f64, t1: f64, omega_lookup: F) -> Result<BinnedEvents>
where
    I: IntoIterator<Item = f64>,
    F: Fn(f64) -> (f64, f64),
{
    let n = bin_count(bin_duration, t0, t1)?;
    let mut counts = vec![0u64; n];
    let mut dropped = 0usize;
    let edge = |k: usize| t0 + k as f64 * bin_duration;
    for t in times {
        if !(t >= t0 && t < edge(n)) {
            dropped += 1;
            continue;
        }
        let mut k = (((t - t0) / bin_duration).floor() as usize).min(n - 1);
        if edge(k) > t {
            k -= 1;
        } else if k + 1 < n && edge(k + 1) <= t {
            k += 1;
        }
        counts[k] += 1;
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let mid_time = BinnedSeries::grid_mid_time(t0, bin_duration, k);
            let (reference_omega, target_omega) = omega_lookup(mid_time);
            Bin {
                mid_time,
                count: c as f64,
                reference_omega,
                target_omega,
            }
        })
        .collect();
    Ok(BinnedEvents {
        series: BinnedSeries::new(bin_duration, t0, bins, SeriesMeta::default())?,
        dropped,
    })
}

/// [`bin_events`] over tick timestamps.
pub fn bin_ticks<F>(ticks: &[u64], resolution: TickResolution, bin_duration: f64, t0: f64, t1: f64, omega_lookup: F) -> Result<BinnedEvents>
where
    F: Fn(f64) -> (f64, f64),
{
    bin_events(
        ticks.iter().map(|&t| resolution.ticks_to_seconds(t)),
        bin_duration,
        t0,
        t1,
        omega_lookup,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_conversions() {
        let r = TickResolution::from_seconds(156.25e-12).unwrap();
        assert_eq!(r.femtoseconds(), 156_250);
        assert_eq!(r.whole_ticks(5e-3), 32_000_000);
        assert_eq!(r.window_ticks(1e-9).unwrap(), 6);
        assert!(r.window_ticks(0.0).is_err());
        assert!(TickResolution::from_seconds(0.3e-15).is_err());
        assert!(TickResolution::from_femtoseconds(0).is_err());
    }

    #[test]
    fn empty_stream_gives_no_coincidences() {
        assert!(count_coincidences(&[], &[1, 2, 3], 10).unwrap().is_empty());
        assert!(count_coincidences(&[1, 2, 3], &[], 10).unwrap().is_empty());
    }

    #[test]
    fn single_pair_in_window() {
        let ps = TickResolution::from_seconds(1e-12).unwrap();
        let c = count_coincidences_in_window(&[0], &[500], 1e-9, ps).unwrap();
        assert_eq!(c, vec![CoincidenceEvent { timestamp: 0, delta: 500 }]);
        let swapped = count_coincidences_in_window(&[500], &[0], 1e-9, ps).unwrap();
        assert_eq!(swapped[0].delta, -500);
        assert_eq!(swapped[0].timestamp, 0);
    }

    #[test]
    fn each_click_used_once() {
        // two channel-1 clicks compete for one channel-2 click
        let c = count_coincidences(&[0, 2], &[3], 5).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].timestamp, 0);
    }

    #[test]
    fn equal_timestamps_match_with_zero_delta() {
        let c = count_coincidences(&[7, 7], &[7], 0).unwrap();
        assert_eq!(c, vec![CoincidenceEvent { timestamp: 7, delta: 0 }]);
    }

    #[test]
    fn unsorted_input_is_an_error() {
        let e = count_coincidences(&[3, 1], &[2], 5).unwrap_err();
        assert!(matches!(e, Error::Unsorted { channel: 1, index: 1 }));
        let e = count_coincidences(&[1], &[5, 4], 5).unwrap_err();
        assert!(matches!(e, Error::Unsorted { channel: 2, index: 1 }));
    }

    #[test]
    fn empty_binning_has_expected_length() {
        let b = bin_events(std::iter::empty(), 0.005, 0.0, 19.0, |_| (0.0, 0.0)).unwrap();
        assert_eq!(b.series.len(), 3800);
        assert_eq!(b.series.total_count(), 0.0);
        let b = bin_events(std::iter::empty(), 0.020, 0.0, 19.0, |_| (0.0, 0.0)).unwrap();
        assert_eq!(b.series.len(), 950);
    }

    #[test]
    fn binning_rejects_partial_span() {
        assert!(bin_events(std::iter::empty(), 0.3, 0.0, 1.0, |_| (0.0, 0.0)).is_err());
        assert!(bin_events(std::iter::empty(), 0.5, 1.0, 1.0, |_| (0.0, 0.0)).is_err());
    }

    #[test]
    fn binning_edges_and_drops() {
        let times = [0.0, 0.0999, 0.1, 0.25, 0.3999, 0.4, -0.01];
        let b = bin_events(times, 0.1, 0.0, 0.4, |t| (2.0 * t, 1.0)).unwrap();
        assert_eq!(b.series.counts(), vec![2.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.dropped, 2);
        assert!((b.series.bins()[1].reference_omega - 0.3).abs() < 1e-12);
        assert_eq!(b.series.bins()[3].target_omega, 1.0);
    }

    #[test]
    fn binning_conserves_counts() {
        let times: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.618_034).fract() * 2.0).collect();
        let b = bin_events(times.iter().copied(), 0.02, 0.0, 2.0, |_| (0.0, 0.0)).unwrap();
        assert_eq!(b.series.total_count() as usize + b.dropped, times.len());
        assert_eq!(b.dropped, 0);
    }
}
