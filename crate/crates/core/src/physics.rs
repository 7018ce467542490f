//! Closed-form model of the Sagnac fiber gyroscope driven by N-photon states.
//!
//! A rotation rate `Ω` shifts the relative phase of the clockwise and
//! counter-clockwise modes by `S·Ω`. An N-photon path-entangled state picks up
//! `N` times that phase, so the detected event rate per integration window is
//!
//! ```text
//! R_N(Ω) = M/N · cos²(N/2 · (S·Ω + φ0)) + B
//! ```
//!
//! with `M` detected photons per window, `B` background events per window,
//! scale factor `S` (seconds) and coil offset phase `φ0`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_nonnegative, check_positive, Error, Result};

/// Default vacuum speed of light used by [`InterferometerGeometry`], m/s.
pub const DEFAULT_LIGHT_SPEED: f64 = 2.998e8;

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_to_pi(phase: f64) -> f64 {
    normalize_phase(phase + PI) - PI
}

/// Fiber coil geometry that fixes the nominal Sagnac scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferometerGeometry {
    /// Fiber length L, m.
    pub fiber_length: f64,
    /// Coil radius r, m.
    pub coil_radius: f64,
    /// Photon wavelength λ, m.
    pub wavelength: f64,
    /// Speed of light c, m/s.
    #[serde(default = "default_light_speed")]
    pub light_speed: f64,
}

fn default_light_speed() -> f64 {
    DEFAULT_LIGHT_SPEED
}

impl Default for InterferometerGeometry {
    /// The 270.5 m coil of radius 7.8 cm at 810 nm.
    fn default() -> Self {
        Self {
            fiber_length: 270.5,
            coil_radius: 0.078,
            wavelength: 810e-9,
            light_speed: DEFAULT_LIGHT_SPEED,
        }
    }
}

impl InterferometerGeometry {
    pub fn new(fiber_length: f64, coil_radius: f64, wavelength: f64) -> Result<Self> {
        let geom = Self {
            fiber_length,
            coil_radius,
            wavelength,
            light_speed: DEFAULT_LIGHT_SPEED,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn with_light_speed(mut self, light_speed: f64) -> Result<Self> {
        self.light_speed = light_speed;
        self.validate()?;
        Ok(self)
    }

    /// Length and radius may be zero (a loop enclosing no area); wavelength and
    /// light speed must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        check_nonnegative("fiber_length", self.fiber_length)?;
        check_nonnegative("coil_radius", self.coil_radius)?;
        check_positive("wavelength", self.wavelength)?;
        check_positive("light_speed", self.light_speed)?;
        Ok(())
    }

    /// `S_T = 4πLr/(λc)`, seconds.
    pub fn sagnac_scale_factor(&self) -> f64 {
        4.0 * PI * self.fiber_length * self.coil_radius / (self.wavelength * self.light_speed)
    }

    /// Sagnac phase `S_T·Ω`; odd in `omega`.
    pub fn sagnac_phase(&self, omega: f64) -> f64 {
        self.sagnac_scale_factor() * omega
    }

    /// Transit-time difference `Δt = 2LrΩ/c²` between the counter-propagating
    /// modes, so that `φ = (2πc/λ)·Δt`.
    pub fn sagnac_time_delay(&self, omega: f64) -> f64 {
        2.0 * self.fiber_length * self.coil_radius * omega / (self.light_speed * self.light_speed)
    }
}

/// Probability that an N-photon state exits in the interfering projection:
/// `cos²(N·φ/2)`. Period `2π/N` in `total_phase`.
pub fn detection_probability(photon_number: u32, total_phase: f64) -> f64 {
    let half = 0.5 * f64::from(photon_number) * total_phase;
    let c = half.cos();
    c * c
}

/// Fringe model parameters for one measurement run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRateModelParams", into = "RawRateModelParams")]
pub struct RateModelParams {
    photon_number: u32,
    photons_per_bin: f64,
    background_per_bin: f64,
    scale_factor: f64,
    phase_offset: f64,
    bin_duration: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRateModelParams {
    photon_number: u32,
    photons_per_bin: f64,
    background_per_bin: f64,
    scale_factor: f64,
    phase_offset: f64,
    bin_duration: f64,
}

impl TryFrom<RawRateModelParams> for RateModelParams {
    type Error = Error;

    fn try_from(raw: RawRateModelParams) -> Result<Self> {
        RateModelParams::new(
            raw.photon_number,
            raw.photons_per_bin,
            raw.background_per_bin,
            raw.scale_factor,
            raw.phase_offset,
            raw.bin_duration,
        )
    }
}

impl From<RateModelParams> for RawRateModelParams {
    fn from(p: RateModelParams) -> Self {
        Self {
            photon_number: p.photon_number,
            photons_per_bin: p.photons_per_bin,
            background_per_bin: p.background_per_bin,
            scale_factor: p.scale_factor,
            phase_offset: p.phase_offset,
            bin_duration: p.bin_duration,
        }
    }
}

impl RateModelParams {
    /// `phase_offset` may be any finite angle; it is stored wrapped into `[0, 2π)`.
    pub fn new(
        photon_number: u32,
        photons_per_bin: f64,
        background_per_bin: f64,
        scale_factor: f64,
        phase_offset: f64,
        bin_duration: f64,
    ) -> Result<Self> {
        if photon_number == 0 {
            return Err(Error::invalid("photon_number", "must be >= 1"));
        }
        check_nonnegative("photons_per_bin", photons_per_bin)?;
        check_nonnegative("background_per_bin", background_per_bin)?;
        check_finite("scale_factor", scale_factor)?;
        check_finite("phase_offset", phase_offset)?;
        check_positive("bin_duration", bin_duration)?;
        Ok(Self {
            photon_number,
            photons_per_bin,
            background_per_bin,
            scale_factor,
            phase_offset: normalize_phase(phase_offset),
            bin_duration,
        })
    }

    /// Fitted one-photon run: M=1955, B=63, S=1.0918 s, φ0=1.6767, τ=5 ms.
    pub fn one_photon_reference() -> Self {
        Self::new(1, 1955.0, 63.0, 1.0918, 1.6767, 0.005).expect("valid constants")
    }

    /// Fitted two-photon run: M=1956, B=49, S=1.0890 s, φ0=1.6629, τ=20 ms.
    pub fn two_photon_reference() -> Self {
        Self::new(2, 1956.0, 49.0, 1.0890, 1.6629, 0.020).expect("valid constants")
    }

    /// Reference parameters for `photon_number` 1 or 2.
    pub fn reference(photon_number: u32) -> Result<Self> {
        match photon_number {
            1 => Ok(Self::one_photon_reference()),
            2 => Ok(Self::two_photon_reference()),
            n => Err(Error::invalid("photon_number", format!("no reference parameters for N={n}"))),
        }
    }

    pub fn photon_number(&self) -> u32 {
        self.photon_number
    }

    pub fn photons_per_bin(&self) -> f64 {
        self.photons_per_bin
    }

    pub fn background_per_bin(&self) -> f64 {
        self.background_per_bin
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn phase_offset(&self) -> f64 {
        self.phase_offset
    }

    pub fn bin_duration(&self) -> f64 {
        self.bin_duration
    }

    pub fn with_photons_per_bin(self, m: f64) -> Result<Self> {
        Self::new(
            self.photon_number,
            m,
            self.background_per_bin,
            self.scale_factor,
            self.phase_offset,
            self.bin_duration,
        )
    }

    pub fn with_background_per_bin(self, b: f64) -> Result<Self> {
        Self::new(
            self.photon_number,
            self.photons_per_bin,
            b,
            self.scale_factor,
            self.phase_offset,
            self.bin_duration,
        )
    }

    pub fn with_scale_factor(self, s: f64) -> Result<Self> {
        Self::new(
            self.photon_number,
            self.photons_per_bin,
            self.background_per_bin,
            s,
            self.phase_offset,
            self.bin_duration,
        )
    }

    pub fn with_phase_offset(self, phi0: f64) -> Result<Self> {
        Self::new(
            self.photon_number,
            self.photons_per_bin,
            self.background_per_bin,
            self.scale_factor,
            phi0,
            self.bin_duration,
        )
    }

    pub fn with_bin_duration(self, tau: f64) -> Result<Self> {
        Self::new(
            self.photon_number,
            self.photons_per_bin,
            self.background_per_bin,
            self.scale_factor,
            self.phase_offset,
            tau,
        )
    }

    /// Fringe amplitude `M/N`, events per bin.
    pub fn fringe_amplitude(&self) -> f64 {
        self.photons_per_bin / f64::from(self.photon_number)
    }

    /// Fringe oscillation frequency `ω_N = S·N/2`.
    pub fn fringe_frequency(&self) -> f64 {
        0.5 * self.scale_factor * f64::from(self.photon_number)
    }

    /// Period of the rate in Ω: `2π/(N·S)`.
    pub fn fringe_period(&self) -> f64 {
        TAU / (f64::from(self.photon_number) * self.scale_factor.abs())
    }

    /// Interferometric phase `S·Ω + φ0` (single-photon units).
    pub fn total_phase(&self, omega: f64) -> f64 {
        self.scale_factor * omega + self.phase_offset
    }

    /// Argument of the fringe cosine, `N·(S·Ω + φ0)`; the rate is
    /// `M/(2N)·(1 + cos u) + B` in terms of it.
    pub fn fringe_argument(&self, omega: f64) -> f64 {
        f64::from(self.photon_number) * self.total_phase(omega)
    }

    /// Expected events per bin, `M/N·cos²(N/2·(S·Ω+φ0)) + B`.
    pub fn expected_rate(&self, omega: f64) -> f64 {
        self.fringe_amplitude() * detection_probability(self.photon_number, self.total_phase(omega)) + self.background_per_bin
    }

    /// `∂R/∂Ω = −(M·S/2)·sin(N·(S·Ω+φ0))`.
    pub fn rate_derivative(&self, omega: f64) -> f64 {
        -0.5 * self.photons_per_bin * self.scale_factor * self.fringe_argument(omega).sin()
    }
}

/// Phase uncertainty bounds for `M` detected photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseLimits {
    /// `1/√M`
    pub sql: f64,
    /// `1/√(N·M)`
    pub noon: f64,
    /// `1/M`
    pub heisenberg: f64,
}

pub fn phase_sensitivity_limits(photons: f64, photon_number: u32) -> Result<PhaseLimits> {
    check_positive("photons", photons)?;
    if photon_number == 0 {
        return Err(Error::invalid("photon_number", "must be >= 1"));
    }
    Ok(PhaseLimits {
        sql: 1.0 / photons.sqrt(),
        noon: 1.0 / (f64::from(photon_number) * photons).sqrt(),
        heisenberg: 1.0 / photons,
    })
}
