//! Rotation profiles and synthetic detector data.
//!
//! Two fidelity levels are provided:
//!
//! * [`simulate_binned_counts`] draws one Poisson count per integration window
//!   directly from the fringe model (rate level).
//! * [`simulate_time_tags`] produces raw per-detector click timestamps from a
//!   photon source (event level), which [`crate::tagproc`] turns back into
//!   singles and coincidence series.
//!
//! Both are pure functions of their inputs and the master seed. Work is split
//! into fixed chunks that each own a generator derived from the seed, so the
//! output does not depend on thread count or scheduling.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_nonnegative, check_positive, Error, Result};
use crate::par;
use crate::physics::{detection_probability, RateModelParams};
use crate::seed::{rng_for, SimRng};
use crate::tagproc::TickResolution;

/// Seed components. Distinct values keep the streams independent.
const COMPONENT_BINNED: u64 = 1;
const COMPONENT_PAIRS: u64 = 2;
const COMPONENT_BACKGROUND: u64 = 3;

/// Bins per independently seeded chunk in [`simulate_binned_counts`].
const BIN_CHUNK: usize = 4096;

/// Segment length over which Ω is held constant in [`simulate_time_tags`], s.
pub const TAG_SEGMENT: f64 = 1e-3;

/// Angular-velocity increment between settings of the reference sweep, rad/s.
pub const SWEEP_STEP: f64 = 0.35;
/// Number of velocity settings in the reference sweep (0 to 5.6 rad/s).
pub const SWEEP_SETTINGS: usize = 17;
/// Dwell per velocity setting, s.
pub const SWEEP_DWELL: f64 = 19.0;
/// Default relative wobble amplitude of the turntable.
pub const DEFAULT_WOBBLE: f64 = 0.05;

/// Number of whole bins of length `tau` in `span`.
pub(crate) fn whole_bins(span: f64, tau: f64) -> usize {
    let ratio = span / tau;
    (ratio * (1.0 + 1e-12)).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationStep {
    /// Target angular velocity, rad/s.
    pub omega: f64,
    /// Dwell time, s.
    pub duration: f64,
}

/// Piecewise-constant angular velocity with an optional wobble locked to the
/// rotation angle.
///
/// Inside step `k` the velocity is `Ω_k·(1 + a·sin(θ(t) + ψ))`, where `θ(t)` is
/// the accumulated rotation angle of the step targets. The wobble is a
/// phenomenological model of an unbalanced bearing: one oscillation per turn,
/// and it vanishes at rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct RotationProfile {
    steps: Vec<RotationStep>,
    wobble_relative_amplitude: f64,
    wobble_phase: f64,
    starts: Vec<f64>,
    angles: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    /// `[omega, duration]` pairs.
    steps: Vec<[f64; 2]>,
    #[serde(default)]
    wobble_relative_amplitude: f64,
    #[serde(default)]
    wobble_phase: f64,
}

impl TryFrom<RawProfile> for RotationProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        let steps = raw
            .steps
            .iter()
            .map(|&[omega, duration]| RotationStep { omega, duration })
            .collect();
        RotationProfile::new(steps, raw.wobble_relative_amplitude, raw.wobble_phase)
    }
}

impl From<RotationProfile> for RawProfile {
    fn from(p: RotationProfile) -> Self {
        Self {
            steps: p.steps.iter().map(|s| [s.omega, s.duration]).collect(),
            wobble_relative_amplitude: p.wobble_relative_amplitude,
            wobble_phase: p.wobble_phase,
        }
    }
}

impl RotationProfile {
    pub fn new(steps: Vec<RotationStep>, wobble_relative_amplitude: f64, wobble_phase: f64) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("profile", "needs at least one step"));
        }
        for s in &steps {
            check_finite("step omega", s.omega)?;
            check_positive("step duration", s.duration)?;
        }
        check_nonnegative("wobble_relative_amplitude", wobble_relative_amplitude)?;
        if wobble_relative_amplitude >= 1.0 {
            return Err(Error::invalid(
                "wobble_relative_amplitude",
                format!("must be < 1, got {wobble_relative_amplitude}"),
            ));
        }
        check_finite("wobble_phase", wobble_phase)?;

        let mut starts = Vec::with_capacity(steps.len());
        let mut angles = Vec::with_capacity(steps.len());
        let (mut t, mut theta) = (0.0, 0.0);
        for s in &steps {
            starts.push(t);
            angles.push(theta);
            t += s.duration;
            theta += s.omega * s.duration;
        }
        Ok(Self {
            steps,
            wobble_relative_amplitude,
            wobble_phase,
            starts,
            angles,
        })
    }

    /// A single constant-velocity step without wobble.
    pub fn constant(omega: f64, duration: f64) -> Result<Self> {
        Self::new(vec![RotationStep { omega, duration }], 0.0, 0.0)
    }

    /// Wobble-free staircase from `(omega, duration)` pairs.
    pub fn staircase(steps: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            steps.iter().map(|&(omega, duration)| RotationStep { omega, duration }).collect(),
            0.0,
            0.0,
        )
    }

    /// The reference sweep: 17 settings from 0 to 5.6 rad/s, 19 s each, with
    /// 5% wobble.
    ///
    /// The last setting is held a little longer so that a run binned at 5 ms
    /// (N=1) yields 64,688 points and one binned at 20 ms (N=2) yields 16,204.
    pub fn reference_sweep(photon_number: u32) -> Result<Self> {
        let final_dwell = match photon_number {
            1 => 19.44,
            2 => 20.08,
            n => return Err(Error::invalid("photon_number", format!("no reference sweep for N={n}"))),
        };
        Self::sweep(SWEEP_SETTINGS, SWEEP_STEP, SWEEP_DWELL, final_dwell, DEFAULT_WOBBLE)
    }

    /// `settings` equally spaced velocities `0, step, 2·step, …`, each held for
    /// `dwell` except the last, held for `final_dwell`.
    pub fn sweep(settings: usize, step: f64, dwell: f64, final_dwell: f64, wobble: f64) -> Result<Self> {
        let steps = (0..settings)
            .map(|k| RotationStep {
                omega: step * k as f64,
                duration: if k + 1 == settings { final_dwell } else { dwell },
            })
            .collect();
        Self::new(steps, wobble, 0.0)
    }

    pub fn with_wobble(self, amplitude: f64, phase: f64) -> Result<Self> {
        Self::new(self.steps, amplitude, phase)
    }

    pub fn steps(&self) -> &[RotationStep] {
        &self.steps
    }

    pub fn wobble_relative_amplitude(&self) -> f64 {
        self.wobble_relative_amplitude
    }

    pub fn wobble_phase(&self) -> f64 {
        self.wobble_phase
    }

    pub fn total_duration(&self) -> f64 {
        let last = self.steps.len() - 1;
        self.starts[last] + self.steps[last].duration
    }

    /// Index of the step active at `t`.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        let span = self.total_duration();
        if !(0.0..span).contains(&t) {
            return Err(Error::OutOfRange { t, span });
        }
        Ok(self.starts.partition_point(|&s| s <= t) - 1)
    }

    /// Step target Ω at `t`.
    pub fn target_velocity(&self, t: f64) -> Result<f64> {
        Ok(self.steps[self.step_index(t)?].omega)
    }

    /// Instantaneous Ω(t) including wobble.
    pub fn profile_velocity(&self, t: f64) -> Result<f64> {
        let k = self.step_index(t)?;
        let omega = self.steps[k].omega;
        if self.wobble_relative_amplitude == 0.0 {
            return Ok(omega);
        }
        let theta = self.angles[k] + omega * (t - self.starts[k]);
        Ok(omega * (1.0 + self.wobble_relative_amplitude * (theta + self.wobble_phase).sin()))
    }

    /// `(instantaneous, target)` velocity at `t`.
    pub fn sample(&self, t: f64) -> Result<(f64, f64)> {
        Ok((self.profile_velocity(t)?, self.target_velocity(t)?))
    }

    /// Truncates the profile to its first `span` seconds.
    pub fn truncated(&self, span: f64) -> Result<Self> {
        check_positive("span", span)?;
        let mut steps = Vec::new();
        for (s, &start) in self.steps.iter().zip(&self.starts) {
            if start >= span {
                break;
            }
            steps.push(RotationStep {
                omega: s.omega,
                duration: s.duration.min(span - start),
            });
        }
        Self::new(steps, self.wobble_relative_amplitude, self.wobble_phase)
    }
}

/// Photon source and detector chain for event-level simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceModel {
    /// Emitted N-photon states per second arriving at the detectors, before
    /// detection efficiency. For N=1 this is the single-photon rate.
    pub pair_rate: f64,
    /// Uncorrelated background clicks per second on each channel.
    pub singles_background_rate: f64,
    /// Per-photon detection probability.
    pub detector_efficiency: f64,
    /// Non-paralyzable dead time, s.
    pub dead_time: f64,
    /// Time-tagger granularity, s.
    pub timestamp_resolution: f64,
}

impl Default for SourceModel {
    /// 191,000 pairs/s, 64% detection efficiency, 12.6 kHz background per
    /// channel (63 counts per 5 ms), ideal detectors, 156.25 ps ticks.
    fn default() -> Self {
        Self {
            pair_rate: 191_000.0,
            singles_background_rate: 12_600.0,
            detector_efficiency: 0.64,
            dead_time: 0.0,
            timestamp_resolution: 156.25e-12,
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        check_nonnegative("pair_rate", self.pair_rate)?;
        check_nonnegative("singles_background_rate", self.singles_background_rate)?;
        check_nonnegative("detector_efficiency", self.detector_efficiency)?;
        if self.detector_efficiency > 1.0 {
            return Err(Error::invalid("detector_efficiency", "must be <= 1"));
        }
        check_nonnegative("dead_time", self.dead_time)?;
        check_positive("timestamp_resolution", self.timestamp_resolution)?;
        TickResolution::from_seconds(self.timestamp_resolution)?;
        Ok(())
    }

    pub fn resolution(&self) -> Result<TickResolution> {
        TickResolution::from_seconds(self.timestamp_resolution)
    }
}

/// One integration window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub mid_time: f64,
    /// Events in the window. Integral for measured or simulated data; the
    /// noiseless model series carries the real-valued expectation.
    pub count: f64,
    /// Ground-truth instantaneous Ω at the window centre.
    pub reference_omega: f64,
    /// Step target Ω at the window centre; identifies the measurement block.
    pub target_omega: f64,
}

/// Provenance carried in the series file header.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub photon_number: Option<u32>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    /// Free-form description such as `coincidences` or `singles-ch2`.
    pub kind: Option<String>,
}

/// Counts on a uniform grid of integration windows.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSeries {
    bin_duration: f64,
    start_time: f64,
    bins: Vec<Bin>,
    pub meta: SeriesMeta,
}

impl BinnedSeries {
    pub fn new(bin_duration: f64, start_time: f64, bins: Vec<Bin>, meta: SeriesMeta) -> Result<Self> {
        check_positive("bin_duration", bin_duration)?;
        check_finite("start_time", start_time)?;
        for (k, b) in bins.iter().enumerate() {
            let expected = start_time + (k as f64 + 0.5) * bin_duration;
            let tol = 1e-9 * (bin_duration + expected.abs());
            if (b.mid_time - expected).abs() > tol {
                return Err(Error::invalid(
                    "bins",
                    format!("bin {k} mid_time {} off the uniform grid ({expected})", b.mid_time),
                ));
            }
            if !(b.count.is_finite() && b.count >= 0.0) {
                return Err(Error::invalid("bins", format!("bin {k} count {} is not >= 0", b.count)));
            }
            check_finite("reference_omega", b.reference_omega)?;
            check_finite("target_omega", b.target_omega)?;
        }
        Ok(Self {
            bin_duration,
            start_time,
            bins,
            meta,
        })
    }

    /// Mid-time of bin `k` for a series starting at `start_time`.
    pub fn grid_mid_time(start_time: f64, bin_duration: f64, k: usize) -> f64 {
        start_time + (k as f64 + 0.5) * bin_duration
    }

    pub fn bin_duration(&self) -> f64 {
        self.bin_duration
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.bins.len() as f64 * self.bin_duration
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.count).collect()
    }

    pub fn reference_omegas(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.reference_omega).collect()
    }

    pub fn total_count(&self) -> f64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn with_meta(mut self, meta: SeriesMeta) -> Self {
        self.meta = meta;
        self
    }
}

fn profile_grid(params: &RateModelParams, profile: &RotationProfile) -> Result<usize> {
    let n = whole_bins(profile.total_duration(), params.bin_duration());
    if n == 0 {
        return Err(Error::invalid(
            "profile",
            format!(
                "duration {} s is shorter than one bin of {} s",
                profile.total_duration(),
                params.bin_duration()
            ),
        ));
    }
    Ok(n)
}

fn poisson_draw(rng: &mut SimRng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng)
}

/// Poisson counts per bin with mean `params.expected_rate(Ω(t_mid))`.
///
/// One bin per `bin_duration` over the profile; a trailing partial bin is
/// dropped.
pub fn simulate_binned_counts(params: &RateModelParams, profile: &RotationProfile, seed: u64) -> Result<BinnedSeries> {
    let n = profile_grid(params, profile)?;
    let tau = params.bin_duration();
    let chunks = n.div_ceil(BIN_CHUNK);
    let parts = par::map_indexed(chunks, |c| -> Result<Vec<Bin>> {
        let mut rng = rng_for(seed, COMPONENT_BINNED, c as u64);
        let lo = c * BIN_CHUNK;
        let hi = (lo + BIN_CHUNK).min(n);
        (lo..hi)
            .map(|k| {
                let mid_time = BinnedSeries::grid_mid_time(0.0, tau, k);
                let (reference_omega, target_omega) = profile.sample(mid_time)?;
                let count = poisson_draw(&mut rng, params.expected_rate(reference_omega));
                Ok(Bin {
                    mid_time,
                    count,
                    reference_omega,
                    target_omega,
                })
            })
            .collect()
    });
    let mut bins = Vec::with_capacity(n);
    for part in parts {
        bins.extend(part?);
    }
    let meta = SeriesMeta {
        photon_number: Some(params.photon_number()),
        seed: Some(seed),
        config_hash: None,
        kind: Some("rate-model".into()),
    };
    BinnedSeries::new(tau, 0.0, bins, meta)
}

/// Series whose counts equal the model expectation exactly.
pub fn noiseless_series(params: &RateModelParams, profile: &RotationProfile) -> Result<BinnedSeries> {
    let n = profile_grid(params, profile)?;
    let tau = params.bin_duration();
    let bins = (0..n)
        .map(|k| {
            let mid_time = BinnedSeries::grid_mid_time(0.0, tau, k);
            let (reference_omega, target_omega) = profile.sample(mid_time)?;
            Ok(Bin {
                mid_time,
                count: params.expected_rate(reference_omega),
                reference_omega,
                target_omega,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = SeriesMeta {
        photon_number: Some(params.photon_number()),
        seed: None,
        config_hash: None,
        kind: Some("noiseless".into()),
    };
    BinnedSeries::new(tau, 0.0, bins, meta)
}

/// Per-channel click timestamps in ticks, each channel sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStreams {
    pub resolution: TickResolution,
    pub channel1: Vec<u64>,
    pub channel2: Vec<u64>,
}

impl TagStreams {
    pub fn channel(&self, channel: u8) -> &[u64] {
        match channel {
            1 => &self.channel1,
            _ => &self.channel2,
        }
    }

    pub fn len(&self) -> usize {
        self.channel1.len() + self.channel2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn uniform_times(rng: &mut SimRng, count: u64, start: f64, dt: f64) -> impl Iterator<Item = f64> + '_ {
    (0..count).map(move |_| start + rng.random::<f64>() * dt)
}

/// Raw detector clicks for an N=1 or N=2 run.
///
/// Within each [`TAG_SEGMENT`] the rotation rate is held at its mid-segment
/// value and state emissions form a homogeneous Poisson process at
/// `pair_rate`. Each emission is projected onto the detection basis:
///
/// * N=2: with probability `cos²(S·Ω+φ0)` the photons split, one per
///   detector; otherwise both go to one detector (chosen evenly), which
///   clicks once if either photon is detected.
/// * N=1: the photon reaches channel 2 with probability `cos²((S·Ω+φ0)/2)`,
///   channel 1 otherwise.
///
/// Every photon survives detection with `detector_efficiency`; the photons of
/// a pair arrive simultaneously. Background clicks are independent Poisson
/// streams per channel. Timestamps are floored to the tick grid and clicks
/// within `dead_time` of the previous recorded click on that channel are lost.
///
/// Only `scale_factor`, `phase_offset` and `photon_number` of `params` are
/// used; rates come from `source`.
pub fn simulate_time_tags(source: &SourceModel, params: &RateModelParams, profile: &RotationProfile, seed: u64) -> Result<TagStreams> {
    source.validate()?;
    let n = params.photon_number();
    if n > 2 {
        return Err(Error::invalid(
            "photon_number",
            format!("event-level simulation supports N=1 or N=2, got {n}"),
        ));
    }
    let resolution = source.resolution()?;
    let span = profile.total_duration();
    let segments = (span / TAG_SEGMENT).ceil() as usize;
    let eta = source.detector_efficiency;
    let res = source.timestamp_resolution;
    let to_tick = |t: f64| (t / res).floor() as u64;

    let parts = par::map_indexed(segments, |s| -> Result<[Vec<u64>; 2]> {
        let start = s as f64 * TAG_SEGMENT;
        let dt = TAG_SEGMENT.min(span - start);
        let omega = profile.profile_velocity(start + 0.5 * dt)?;
        let phase = params.total_phase(omega);
        let p_route = detection_probability(n, phase);
        let mut out: [Vec<u64>; 2] = [Vec::new(), Vec::new()];

        let mut rng = rng_for(seed, COMPONENT_PAIRS, s as u64);
        let emitted = poisson_draw(&mut rng, source.pair_rate * dt) as u64;
        for _ in 0..emitted {
            let t = start + rng.random::<f64>() * dt;
            let tick = to_tick(t);
            let routed: bool = rng.random::<f64>() < p_route;
            if n == 1 {
                if rng.random::<f64>() < eta {
                    out[if routed { 1 } else { 0 }].push(tick);
                }
            } else if routed {
                for ch in &mut out {
                    if rng.random::<f64>() < eta {
                        ch.push(tick);
                    }
                }
            } else {
                let ch = usize::from(rng.random::<bool>());
                let first = rng.random::<f64>() < eta;
                let second = rng.random::<f64>() < eta;
                if first || second {
                    out[ch].push(tick);
                }
            }
        }

        for (c, ch) in out.iter_mut().enumerate() {
            let mut rng = rng_for(seed, COMPONENT_BACKGROUND + c as u64 * 1000, s as u64);
            let k = poisson_draw(&mut rng, source.singles_background_rate * dt) as u64;
            ch.extend(uniform_times(&mut rng, k, start, dt).map(to_tick));
            ch.sort_unstable();
        }
        Ok(out)
    });

    let mut channels: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    for part in parts {
        let [a, b] = part?;
        channels[0].extend(a);
        channels[1].extend(b);
    }
    if source.dead_time > 0.0 {
        for ch in &mut channels {
            apply_dead_time(ch, source.dead_time, res);
        }
    }
    let [channel1, channel2] = channels;
    Ok(TagStreams {
        resolution,
        channel1,
        channel2,
    })
}

/// Drops clicks closer than `dead_time` to the previous kept click.
fn apply_dead_time(ticks: &mut Vec<u64>, dead_time: f64, resolution: f64) {
    let mut last: Option<u64> = None;
    ticks.retain(|&t| match last {
        Some(prev) if ((t - prev) as f64) * resolution < dead_time => false,
        _ => {
            last = Some(t);
            true
        }
    });
}

/// Accidental coincidence rate `2·r1·r2·w` for uncorrelated streams.
pub fn accidental_rate(rate1: f64, rate2: f64, window: f64) -> Result<f64> {
    check_nonnegative("rate1", rate1)?;
    check_nonnegative("rate2", rate2)?;
    check_nonnegative("window", window)?;
    Ok(2.0 * rate1 * rate2 * window)
}

/// Mean number of coincidences per second expected from `source` at phase
/// `total_phase` for a two-photon run, excluding accidentals.
pub fn expected_pair_coincidence_rate(source: &SourceModel, total_phase: f64) -> f64 {
    source.pair_rate * source.detector_efficiency.powi(2) * detection_probability(2, total_phase)
}
