//! Fitting the fringe model to binned counts and estimating parameter spread.
//!
//! The fit minimises `Σ w_i (y_i − R(Ω_i))²` over `(M, B, S, φ0)` with a
//! Levenberg–Marquardt iteration. With Poisson weighting `w_i = 1/max(R_i, 1)`
//! is re-evaluated at every accepted iterate and held fixed while a step is
//! tried, so the fixed point solves the Poisson score equations. `M` and `B`
//! are kept non-negative by projection; `φ0` is optimised unconstrained and
//! wrapped on output.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{Matrix2, Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{Error, Result};
use crate::par;
use crate::physics::{normalize_phase, wrap_to_pi, RateModelParams};
use crate::rotsim::{simulate_binned_counts, BinnedSeries, RotationProfile};
use crate::seed::{derive_seed, rng_for};
use crate::stats::sample_std;

const COMPONENT_BOOTSTRAP: u64 = 11;
const COMPONENT_MONTE_CARLO: u64 = 12;

/// Cells of the uniform Ω grid used for the initial frequency estimate.
const GUESS_GRID: usize = 512;
/// Frequency oversampling of the periodogram relative to 1/span.
const GUESS_OVERSAMPLE: usize = 8;
/// Phase offsets tried by the initial guess.
const GUESS_PHASES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `1/max(R, 1)`: model-predicted Poisson variance.
    #[default]
    Poisson,
    /// Unit weights; covariance is scaled by the reduced χ².
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub initial_damping: f64,
    /// Relative gradient tolerance, see [`FitResult::gradient_norm`].
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Poisson,
            initial_damping: 1e-3,
            gradient_tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitParam {
    #[serde(rename = "M")]
    PhotonsPerBin,
    #[serde(rename = "B")]
    BackgroundPerBin,
    #[serde(rename = "S")]
    ScaleFactor,
    #[serde(rename = "phi0")]
    PhaseOffset,
}

impl FitParam {
    pub const ALL: [FitParam; 4] = [
        FitParam::PhotonsPerBin,
        FitParam::BackgroundPerBin,
        FitParam::ScaleFactor,
        FitParam::PhaseOffset,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            FitParam::PhotonsPerBin => "M",
            FitParam::BackgroundPerBin => "B",
            FitParam::ScaleFactor => "S",
            FitParam::PhaseOffset => "phi0",
        }
    }
}

impl fmt::Display for FitParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// One value per fitted parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamValues {
    #[serde(rename = "M")]
    pub photons_per_bin: f64,
    #[serde(rename = "B")]
    pub background_per_bin: f64,
    #[serde(rename = "S")]
    pub scale_factor: f64,
    #[serde(rename = "phi0")]
    pub phase_offset: f64,
}

impl ParamValues {
    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            photons_per_bin: v[0],
            background_per_bin: v[1],
            scale_factor: v[2],
            phase_offset: v[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.photons_per_bin, self.background_per_bin, self.scale_factor, self.phase_offset]
    }

    pub fn get(&self, p: FitParam) -> f64 {
        self.to_array()[p as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: RateModelParams,
    /// Covariance-derived standard errors. Infinite for directions listed in
    /// `degenerate`.
    pub standard_errors: ParamValues,
    /// Weighted residual sum of squares at the solution.
    pub residual_sum: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative gradient component at exit.
    pub gradient_norm: f64,
    /// Parameters the data carry no information on (e.g. `S`, `φ0` when the
    /// fitted fringe amplitude is zero).
    pub degenerate: Vec<FitParam>,
    pub bins: usize,
}

/// Parameter spread from resampling or repeated simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpread {
    pub std: ParamValues,
    pub mean: ParamValues,
    pub successes: usize,
    pub failures: usize,
}

fn check_photon_number(n: u32) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("photon_number", "must be >= 1"));
    }
    Ok(())
}

/// Starting point for [`fit_rate_model`].
///
/// `B₀` is the smallest count and `M₀ = N·(max − min)`. `S₀` comes from the
/// dominant fringe frequency: counts are averaged onto a uniform Ω grid, a
/// floating-mean sinusoid periodogram is scanned, and the peak is refined by
/// parabolic interpolation. `φ0` is the best of 64 evenly spaced offsets.
pub fn initial_guess(series: &BinnedSeries, photon_number: u32) -> Result<RateModelParams> {
    initial_guess_samples(&series.reference_omegas(), &series.counts(), photon_number, series.bin_duration())
}

pub fn initial_guess_samples(omega: &[f64], count: &[f64], photon_number: u32, bin_duration: f64) -> Result<RateModelParams> {
    check_photon_number(photon_number)?;
    if omega.len() < 8 {
        return Err(Error::NotIdentifiable(format!("{} bins; at least 8 are needed", omega.len())));
    }
    let lo = omega.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
        return Err(Error::NotIdentifiable("reference angular velocity is constant".into()));
    }

    let cmin = count.iter().cloned().fold(f64::INFINITY, f64::min);
    let cmax = count.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = f64::from(photon_number);
    let m0 = n * (cmax - cmin);
    let b0 = cmin;

    let (grid_x, grid_y) = uniform_resample(omega, count, lo, span);
    let w = dominant_frequency(&grid_x, &grid_y, span);
    let s0 = w / n;

    let trial = |phi: f64| -> f64 {
        let p = RateModelParams::new(photon_number, m0, b0, s0, phi, bin_duration).expect("finite");
        omega
            .iter()
            .zip(count)
            .map(|(&o, &y)| {
                let r = p.expected_rate(o);
                (y - r).powi(2) / r.max(1.0)
            })
            .sum()
    };
    let phi0 = (0..GUESS_PHASES)
        .map(|j| TAU * j as f64 / GUESS_PHASES as f64)
        .map(|phi| (phi, trial(phi)))
        .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0;
    RateModelParams::new(photon_number, m0, b0, s0, phi0, bin_duration)
}

/// Cell averages on a uniform grid; empty cells are linearly interpolated.
fn uniform_resample(omega: &[f64], count: &[f64], lo: f64, span: f64) -> (Vec<f64>, Vec<f64>) {
    let k = GUESS_GRID;
    let mut sum = vec![0.0; k];
    let mut num = vec![0usize; k];
    for (&o, &y) in omega.iter().zip(count) {
        let j = (((o - lo) / span * k as f64) as usize).min(k - 1);
        sum[j] += y;
        num[j] += 1;
    }
    let filled: Vec<usize> = (0..k).filter(|&j| num[j] > 0).collect();
    let value = |j: usize| sum[j] / num[j] as f64;
    let mut y = vec![0.0; k];
    for j in 0..k {
        let after = filled.partition_point(|&f| f < j);
        y[j] = if num[j] > 0 {
            value(j)
        } else if after == 0 {
            value(filled[0])
        } else if after == filled.len() {
            value(filled[filled.len() - 1])
        } else {
            let (a, b) = (filled[after - 1], filled[after]);
            let f = (j - a) as f64 / (b - a) as f64;
            value(a) + f * (value(b) - value(a))
        };
    }
    let x = (0..k).map(|j| lo + (j as f64 + 0.5) * span / k as f64).collect();
    (x, y)
}

/// Variance explained by the best `c + a·cos(ωx) + b·sin(ωx)`.
fn sinusoid_power(x: &[f64], y: &[f64], w: f64) -> f64 {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let (s, c) = (w * xi).sin_cos();
        let row = Vector3::new(1.0, c, s);
        ata += row * row.transpose();
        aty += row * yi;
    }
    match ata.cholesky() {
        Some(ch) => {
            let coef = ch.solve(&aty);
            // explained sum of squares of the centred data
            coef.dot(&aty) - aty[0] * aty[0] / x.len() as f64
        }
        None => 0.0,
    }
}

/// Angular frequency (per rad/s of Ω) of the strongest sinusoid in `y(x)`.
fn dominant_frequency(x: &[f64], y: &[f64], span: f64) -> f64 {
    let dw = TAU / (span * GUESS_OVERSAMPLE as f64);
    // from half a cycle across the span up to the grid's Nyquist frequency
    let first = GUESS_OVERSAMPLE / 2;
    let last = GUESS_OVERSAMPLE * GUESS_GRID / 2;
    let powers = par::map_indexed(last - first + 1, |i| sinusoid_power(x, y, dw * (first + i) as f64));
    let (best, _) = powers
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    let mut offset = 0.0;
    if best > 0 && best + 1 < powers.len() {
        let (a, b, c) = (powers[best - 1], powers[best], powers[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    dw * ((first + best) as f64 + offset)
}

struct Model<'a> {
    omega: &'a [f64],
    count: &'a [f64],
    n: f64,
    weighting: Weighting,
}

struct Normal {
    a: Matrix4<f64>,
    g: Vector4<f64>,
    gscale: Vector4<f64>,
    chi2: f64,
}

impl Model<'_> {
    fn rate_and_jacobian(&self, p: &[f64; 4], omega: f64) -> (f64, Vector4<f64>) {
        let [m, b, s, phi] = *p;
        let x = 0.5 * self.n * (s * omega + phi);
        let (sx, cx) = x.sin_cos();
        let c2 = cx * cx;
        let sin2x = 2.0 * sx * cx;
        let r = m / self.n * c2 + b;
        let dphi = -0.5 * m * sin2x;
        (r, Vector4::new(c2 / self.n, 1.0, dphi * omega, dphi))
    }

    fn rate(&self, p: &[f64; 4], omega: f64) -> f64 {
        let [m, b, s, phi] = *p;
        let c = (0.5 * self.n * (s * omega + phi)).cos();
        m / self.n * c * c + b
    }

    fn weight(&self, rate: f64) -> f64 {
        match self.weighting {
            Weighting::Poisson => 1.0 / rate.max(1.0),
            Weighting::Uniform => 1.0,
        }
    }

    fn weights(&self, p: &[f64; 4]) -> Vec<f64> {
        self.omega.iter().map(|&o| self.weight(self.rate(p, o))).collect()
    }

    fn chi2(&self, p: &[f64; 4], weights: &[f64]) -> f64 {
        self.omega
            .iter()
            .zip(self.count)
            .zip(weights)
            .map(|((&o, &y), &w)| w * (y - self.rate(p, o)).powi(2))
            .sum()
    }

    fn normal(&self, p: &[f64; 4], weights: &[f64]) -> Normal {
        let mut a = Matrix4::zeros();
        let mut g = Vector4::zeros();
        let mut gscale = Vector4::zeros();
        let mut chi2 = 0.0;
        for ((&o, &y), &w) in self.omega.iter().zip(self.count).zip(weights) {
            let (r, j) = self.rate_and_jacobian(p, o);
            let res = y - r;
            a += (w * j) * j.transpose();
            g += (w * res) * j;
            gscale += (w * (y.abs() + r.abs())) * j.abs();
            chi2 += w * res * res;
        }
        Normal { a, g, gscale, chi2 }
    }
}

fn project(p: &mut [f64; 4]) {
    p[0] = p[0].max(0.0);
    p[1] = p[1].max(0.0);
}

/// Largest gradient component relative to its round-off scale, with bound
/// constraints on `M`, `B` honoured.
fn relative_gradient(ne: &Normal, p: &[f64; 4]) -> f64 {
    (0..4)
        .map(|j| {
            let g = ne.g[j];
            // at a lower bound with descent pointing outward: KKT satisfied
            if j < 2 && p[j] <= 0.0 && g <= 0.0 {
                0.0
            } else {
                g.abs() / (ne.gscale[j] + f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max)
}

/// Wraps `φ0` into `[0, 2π/N)`: the model is periodic in `φ0` with period
/// `2π/N`, so that interval is the identifiable range.
fn canonical_phase(phi: f64, n: f64) -> f64 {
    let period = TAU / n;
    let v = phi.rem_euclid(period);
    if v >= period {
        0.0
    } else {
        v
    }
}

fn direction_label(v: &Vector4<f64>) -> String {
    let mut terms: Vec<String> = FitParam::ALL
        .iter()
        .zip(v.iter())
        .filter(|(_, c)| c.abs() >= 0.2)
        .map(|(p, c)| format!("{c:+.2}·{p}"))
        .collect();
    if terms.is_empty() {
        terms.push("all parameters".into());
    }
    terms.join(" ")
}

/// Standard errors from the normal matrix, or the unidentifiable direction.
fn covariance_errors(a: &Matrix4<f64>, scale: f64, no_signal: bool) -> Result<(ParamValues, Vec<FitParam>)> {
    if no_signal {
        // S and φ0 columns vanish; M and B remain estimable
        let sub = Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
        let inv = sub.try_inverse().ok_or_else(|| Error::RankDeficient {
            direction: "M and B".into(),
        })?;
        let errors = ParamValues {
            photons_per_bin: (inv[(0, 0)] * scale).sqrt(),
            background_per_bin: (inv[(1, 1)] * scale).sqrt(),
            scale_factor: f64::INFINITY,
            phase_offset: f64::INFINITY,
        };
        return Ok((errors, vec![FitParam::ScaleFactor, FitParam::PhaseOffset]));
    }
    let d = a.diagonal();
    if let Some(j) = (0..4).find(|&j| d[j].is_nan() || d[j] <= 0.0) {
        return Err(Error::RankDeficient {
            direction: FitParam::ALL[j].to_string(),
        });
    }
    let dinv = d.map(|x| 1.0 / x.sqrt());
    let normed = Matrix4::from_fn(|i, j| a[(i, j)] * dinv[i] * dinv[j]);
    let eig = SymmetricEigen::new(normed);
    let (imin, &emin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("four eigenvalues");
    if emin < 1e-12 {
        let v: Vector4<f64> = eig.eigenvectors.column(imin).into();
        return Err(Error::RankDeficient {
            direction: direction_label(&v),
        });
    }
    let inv = normed.try_inverse().ok_or_else(|| Error::RankDeficient {
        direction: "all parameters".into(),
    })?;
    let var = |j: usize| inv[(j, j)] * dinv[j] * dinv[j] * scale;
    Ok((
        ParamValues::from_array([var(0).sqrt(), var(1).sqrt(), var(2).sqrt(), var(3).sqrt()]),
        Vec::new(),
    ))
}

/// Weighted least-squares fit of the fringe model to a binned series.
///
/// Starts from `init` when given, otherwise from [`initial_guess`]. A run
/// that exhausts the iteration cap returns `converged = false`; a singular
/// normal matrix with non-zero fringe amplitude is an error naming the
/// unidentifiable combination.
pub fn fit_rate_model(
    series: &BinnedSeries,
    photon_number: u32,
    init: Option<&RateModelParams>,
    options: &FitOptions,
) -> Result<FitResult> {
    check_photon_number(photon_number)?;
    if series.is_empty() {
        return Err(Error::invalid("series", "no bins to fit"));
    }
    let omega = series.reference_omegas();
    let count = series.counts();
    let start = match init {
        Some(p) => *p,
        None => initial_guess_samples(&omega, &count, photon_number, series.bin_duration())?,
    };
    fit_samples(&omega, &count, photon_number, &start, options)
}

/// [`fit_rate_model`] on bare `(Ω, count)` samples.
pub fn fit_samples(omega: &[f64], count: &[f64], photon_number: u32, init: &RateModelParams, options: &FitOptions) -> Result<FitResult> {
    check_photon_number(photon_number)?;
    if omega.len() != count.len() || omega.is_empty() {
        return Err(Error::invalid("samples", "omega and count must be non-empty and equal length"));
    }
    let model = Model {
        omega,
        count,
        n: f64::from(photon_number),
        weighting: options.weighting,
    };
    let mut p = [
        init.photons_per_bin(),
        init.background_per_bin(),
        init.scale_factor(),
        init.phase_offset(),
    ];
    let mut lambda = options.initial_damping;
    let mut weights = model.weights(&p);
    let mut ne = model.normal(&p, &weights);
    let mut iterations = 0;
    let mut converged = false;
    let mut gradient_norm = relative_gradient(&ne, &p);

    loop {
        if gradient_norm <= options.gradient_tolerance {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        iterations += 1;

        let dmax = ne.a.diagonal().max();
        let damp = Matrix4::from_diagonal(&ne.a.diagonal().map(|d| d.max(1e-12 * dmax).max(f64::MIN_POSITIVE)));
        let step = (ne.a + lambda * damp).cholesky().map(|ch| ch.solve(&ne.g));
        let Some(step) = step else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p;
        for j in 0..4 {
            trial[j] += step[j];
        }
        project(&mut trial);
        let chi_trial = model.chi2(&trial, &weights);
        if chi_trial.is_finite() && chi_trial < ne.chi2 {
            p = trial;
            lambda = (lambda / 10.0).max(1e-15);
            weights = model.weights(&p);
            ne = model.normal(&p, &weights);
            gradient_norm = relative_gradient(&ne, &p);
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
    }

    // cos² is even: a negative scale factor is the same model with φ0 negated
    if p[2] < 0.0 {
        p[2] = -p[2];
        p[3] = -p[3];
    }
    p[3] = canonical_phase(p[3], model.n);
    let params = RateModelParams::new(photon_number, p[0], p[1], p[2], p[3], init.bin_duration())?;

    let weights = model.weights(&p);
    let ne = model.normal(&p, &weights);
    let dof = omega.len().saturating_sub(4).max(1) as f64;
    let scale = match options.weighting {
        Weighting::Poisson => 1.0,
        Weighting::Uniform => ne.chi2 / dof,
    };
    let no_signal = p[0] <= 0.0;
    let (standard_errors, degenerate) = covariance_errors(&ne.a, scale, no_signal)?;

    Ok(FitResult {
        params,
        standard_errors,
        residual_sum: ne.chi2,
        iterations,
        converged,
        gradient_norm,
        degenerate,
        bins: omega.len(),
    })
}

fn spread(samples: &[[f64; 4]], phase_reference: f64, n: f64) -> (ParamValues, ParamValues) {
    let column = |j: usize| -> Vec<f64> {
        samples
            .iter()
            .map(|s| {
                if j == 3 {
                    // unwrap onto the reference fringe; the period in φ0 is 2π/N
                    phase_reference + wrap_to_pi((s[3] - phase_reference) * n) / n
                } else {
                    s[j]
                }
            })
            .collect()
    };
    let cols: Vec<Vec<f64>> = (0..4).map(column).collect();
    let std = ParamValues::from_array([0, 1, 2, 3].map(|j| sample_std(&cols[j])));
    let mean = ParamValues::from_array([0, 1, 2, 3].map(|j| crate::stats::mean(&cols[j])));
    (std, mean)
}

fn collect_spread(outcomes: Vec<Option<[f64; 4]>>, phase_reference: f64, n: f64) -> Result<ParameterSpread> {
    let total = outcomes.len();
    let samples: Vec<[f64; 4]> = outcomes.into_iter().flatten().collect();
    let failures = total - samples.len();
    if failures * 20 > total {
        return Err(Error::TooManyFailures { failed: failures, total });
    }
    let (std, mut mean) = spread(&samples, phase_reference, n);
    mean.phase_offset = normalize_phase(mean.phase_offset);
    Ok(ParameterSpread {
        std,
        mean,
        successes: samples.len(),
        failures,
    })
}

fn converged_params(fit: Result<FitResult>) -> Option<[f64; 4]> {
    match fit {
        Ok(f) if f.converged => Some([
            f.params.photons_per_bin(),
            f.params.background_per_bin(),
            f.params.scale_factor(),
            f.params.phase_offset(),
        ]),
        _ => None,
    }
}

/// Nonparametric bootstrap: bins are resampled with replacement and each
/// resample is refitted starting from the full-data estimate.
///
/// Returns the per-parameter standard deviation across resamples. More than
/// 5% failed refits is an error.
pub fn bootstrap_errors(
    series: &BinnedSeries,
    photon_number: u32,
    resamples: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<ParameterSpread> {
    if resamples < 100 {
        return Err(Error::invalid("resamples", format!("need at least 100, got {resamples}")));
    }
    let full = fit_rate_model(series, photon_number, None, options)?;
    if !full.converged {
        return Err(Error::NotConverged("full-data fit for bootstrap".into()));
    }
    bootstrap_from_fit(series, &full, resamples, seed, options)
}

/// Bootstrap around an existing full-data fit.
pub fn bootstrap_from_fit(
    series: &BinnedSeries,
    full: &FitResult,
    resamples: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<ParameterSpread> {
    use rand::Rng;

    if resamples < 100 {
        return Err(Error::invalid("resamples", format!("need at least 100, got {resamples}")));
    }
    let omega = series.reference_omegas();
    let count = series.counts();
    let n = omega.len();
    let photon_number = full.params.photon_number();
    let outcomes = par::map_indexed(resamples, |r| {
        let mut rng = rng_for(seed, COMPONENT_BOOTSTRAP, r as u64);
        let (mut o, mut c) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let i = rng.random_range(0..n);
            o.push(omega[i]);
            c.push(count[i]);
        }
        converged_params(fit_samples(&o, &c, photon_number, &full.params, options))
    });
    collect_spread(outcomes, full.params.phase_offset(), f64::from(photon_number))
}

/// Spread of fitted parameters over independent simulated runs.
///
/// Trial `i` simulates with seed `derive_seed(derive_seed(seed, 12), i)` and
/// fits starting from `truth`.
pub fn monte_carlo_errors(
    truth: &RateModelParams,
    profile: &RotationProfile,
    trials: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<ParameterSpread> {
    if trials < 100 {
        return Err(Error::invalid("trials", format!("need at least 100, got {trials}")));
    }
    let base = derive_seed(seed, COMPONENT_MONTE_CARLO);
    let photon_number = truth.photon_number();
    let outcomes = par::map_indexed(trials, |t| {
        let series = simulate_binned_counts(truth, profile, derive_seed(base, t as u64)).ok()?;
        let omega = series.reference_omegas();
        let count = series.counts();
        converged_params(fit_samples(&omega, &count, photon_number, truth, options))
    });
    collect_spread(outcomes, truth.phase_offset(), f64::from(photon_number))
}

/// Central `level` Poisson prediction interval `[lo, hi]` for mean `rate`.
pub fn prediction_band(rate: f64, level: f64) -> (f64, f64) {
    if rate <= 0.0 {
        return (0.0, 0.0);
    }
    let tail = 0.5 * (1.0 - level);
    let dist = Poisson::new(rate).expect("positive rate");
    (dist.inverse_cdf(tail) as f64, dist.inverse_cdf(1.0 - tail) as f64)
}

/// Fraction of bins whose count lies inside the `level` prediction band of
/// `params` at the bin's reference Ω.
pub fn band_coverage(series: &BinnedSeries, params: &RateModelParams, level: f64) -> f64 {
    let inside = series
        .bins()
        .iter()
        .filter(|b| {
            let (lo, hi) = prediction_band(params.expected_rate(b.reference_omega), level);
            b.count >= lo && b.count <= hi
        })
        .count();
    inside as f64 / series.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotsim::{noiseless_series, Bin, SeriesMeta};
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn sweep(n: u32) -> RotationProfile {
        RotationProfile::reference_sweep(n).unwrap()
    }

    #[test]
    fn guess_on_noiseless_one_photon_sweep() {
        let p = RateModelParams::one_photon_reference();
        let s = noiseless_series(&p, &sweep(1)).unwrap();
        let g = initial_guess(&s, 1).unwrap();
        assert!(rel(g.scale_factor(), 1.0918) < 0.10, "S0 = {}", g.scale_factor());
    }

    #[test]
    fn guess_on_noiseless_two_photon_sweep() {
        let p = RateModelParams::two_photon_reference();
        let s = noiseless_series(&p, &sweep(2)).unwrap();
        let g = initial_guess(&s, 2).unwrap();
        assert!(rel(g.scale_factor(), 1.0890) < 0.10, "S0 = {}", g.scale_factor());
    }

    #[test]
    fn guess_rejects_constant_omega_and_short_series() {
        let p = RateModelParams::one_photon_reference();
        let s = noiseless_series(&p, &RotationProfile::constant(1.0, 1.0).unwrap()).unwrap();
        assert!(matches!(initial_guess(&s, 1), Err(Error::NotIdentifiable(_))));
        let short = noiseless_series(&p, &RotationProfile::staircase(&[(0.0, 0.02), (1.0, 0.015)]).unwrap()).unwrap();
        assert_eq!(short.len(), 7);
        assert!(matches!(initial_guess(&short, 1), Err(Error::NotIdentifiable(_))));
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        for truth in [RateModelParams::one_photon_reference(), RateModelParams::two_photon_reference()] {
            let n = truth.photon_number();
            let s = noiseless_series(&truth, &sweep(n)).unwrap();
            let f = fit_rate_model(&s, n, None, &FitOptions::default()).unwrap();
            assert!(f.converged, "N={n} did not converge: {f:?}");
            let got = [
                f.params.photons_per_bin(),
                f.params.background_per_bin(),
                f.params.scale_factor(),
                f.params.phase_offset(),
            ];
            let want = [
                truth.photons_per_bin(),
                truth.background_per_bin(),
                truth.scale_factor(),
                truth.phase_offset(),
            ];
            for (g, w) in got.iter().zip(want) {
                assert!(rel(*g, w) < 1e-6, "N={n}: {got:?} vs {want:?}");
            }
            assert!(f.residual_sum < 1e-8 * s.len() as f64);
        }
    }

    #[test]
    fn zero_counts_flag_degenerate_phase() {
        let p = RateModelParams::new(1, 0.0, 0.0, 1.0, 0.0, 0.01).unwrap();
        let s = simulate_binned_counts(&p, &RotationProfile::staircase(&[(0.0, 1.0), (2.0, 1.0)]).unwrap(), 1).unwrap();
        let f = fit_rate_model(&s, 1, None, &FitOptions::default()).unwrap();
        assert!(f.converged);
        assert!(f.params.photons_per_bin() < 1e-9);
        assert_eq!(f.degenerate, vec![FitParam::ScaleFactor, FitParam::PhaseOffset]);
        assert!(f.standard_errors.scale_factor.is_infinite());
        assert!(f.standard_errors.photons_per_bin.is_finite());
    }

    #[test]
    fn constant_omega_with_init_is_rank_deficient() {
        let p = RateModelParams::one_photon_reference();
        let s = simulate_binned_counts(&p, &RotationProfile::constant(1.0, 2.0).unwrap(), 3).unwrap();
        let e = fit_rate_model(&s, 1, Some(&p), &FitOptions::default()).unwrap_err();
        match e {
            Error::RankDeficient { direction } => {
                assert!(direction.contains('S') && direction.contains("phi0"), "{direction}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let truth = RateModelParams::one_photon_reference();
        let s = simulate_binned_counts(&truth, &sweep(1).truncated(60.0).unwrap(), 2).unwrap();
        let start = truth.with_photons_per_bin(500.0).unwrap();
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        let f = fit_rate_model(&s, 1, Some(&start), &opts).unwrap();
        assert!(!f.converged);
        assert_eq!(f.iterations, 1);
    }

    #[test]
    fn poisson_fit_covers_truth() {
        let truth = RateModelParams::two_photon_reference();
        let s = simulate_binned_counts(&truth, &sweep(2), 21).unwrap();
        let f = fit_rate_model(&s, 2, None, &FitOptions::default()).unwrap();
        assert!(f.converged);
        let z = (f.params.scale_factor() - 1.0890).abs() / f.standard_errors.scale_factor;
        assert!(z < 3.0, "S = {} ± {}", f.params.scale_factor(), f.standard_errors.scale_factor);
        assert!(f.params.phase_offset() < PI);
    }

    #[test]
    fn uniform_weighting_also_recovers() {
        let truth = RateModelParams::one_photon_reference();
        let s = simulate_binned_counts(&truth, &sweep(1), 4).unwrap();
        let opts = FitOptions {
            weighting: Weighting::Uniform,
            ..FitOptions::default()
        };
        let f = fit_rate_model(&s, 1, None, &opts).unwrap();
        assert!(f.converged, "{f:?}");
        assert!((f.params.scale_factor() - 1.0918).abs() < 4.0 * f.standard_errors.scale_factor);
    }

    #[test]
    fn resample_counts_are_validated() {
        let truth = RateModelParams::one_photon_reference();
        let s = noiseless_series(&truth, &sweep(1).truncated(40.0).unwrap()).unwrap();
        assert!(bootstrap_errors(&s, 1, 99, 0, &FitOptions::default()).is_err());
        assert!(monte_carlo_errors(&truth, &sweep(1), 50, 0, &FitOptions::default()).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_tiny_on_noiseless_data() {
        let truth = RateModelParams::one_photon_reference();
        let s = noiseless_series(&truth, &sweep(1).truncated(100.0).unwrap()).unwrap();
        let a = bootstrap_errors(&s, 1, 100, 9, &FitOptions::default()).unwrap();
        let b = bootstrap_errors(&s, 1, 100, 9, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.std.scale_factor < 1e-3 * 1.0918, "{:?}", a.std);
        assert_eq!(a.failures, 0);
    }

    #[test]
    fn too_many_failures_is_an_error() {
        let outcomes: Vec<Option<[f64; 4]>> = (0..100).map(|i| if i < 6 { None } else { Some([1.0; 4]) }).collect();
        assert!(matches!(
            collect_spread(outcomes, 1.0, 1.0),
            Err(Error::TooManyFailures { failed: 6, total: 100 })
        ));
        let outcomes: Vec<Option<[f64; 4]>> = (0..100).map(|i| if i < 5 { None } else { Some([1.0; 4]) }).collect();
        assert!(collect_spread(outcomes, 1.0, 1.0).is_ok());
    }

    #[test]
    fn phase_spread_unwraps_across_zero() {
        let samples = [[0.0, 0.0, 0.0, 0.01], [0.0, 0.0, 0.0, TAU - 0.01]];
        let (std, _) = spread(&samples, 0.0, 1.0);
        assert!((std.phase_offset - 0.02f64 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn band_contains_typical_counts() {
        let (lo, hi) = prediction_band(100.0, 0.99);
        assert!(lo < 100.0 && hi > 100.0);
        assert!((lo - 75.0).abs() <= 2.0 && (hi - 126.0).abs() <= 2.0, "{lo} {hi}");
        assert_eq!(prediction_band(0.0, 0.99), (0.0, 0.0));
    }

    #[test]
    fn fit_rejects_empty_series() {
        let s = BinnedSeries::new(0.01, 0.0, Vec::<Bin>::new(), SeriesMeta::default()).unwrap();
        assert!(fit_rate_model(&s, 1, None, &FitOptions::default()).is_err());
    }
}
