//! Rotation-rate precision: inverse-fringe estimation, propagated and
//! empirical uncertainty, bias point, and quantum-limit comparisons.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::par;
use crate::physics::RateModelParams;
use crate::rotsim::{Bin, BinnedSeries};
use crate::stats::{mean, sample_std, std_error_of_std};

/// Grid points per fringe period scanned by [`bias_point`].
pub const BIAS_GRID: usize = 1024;
/// Ω tolerance of the golden-section refinement, rad/s.
pub const BIAS_TOLERANCE: f64 = 1e-6;
/// Blocks shorter than this are skipped by [`block_precision`].
pub const MIN_BLOCK_BINS: usize = 3;

/// Result of [`invert_rate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub omega: f64,
    /// The count was outside `[B, M/N + B]` and was clamped to the range.
    pub clamped: bool,
}

fn require_signal(params: &RateModelParams) -> Result<()> {
    if params.photons_per_bin() <= 0.0 {
        return Err(Error::NoSignal);
    }
    if params.scale_factor() == 0.0 {
        return Err(Error::invalid("scale_factor", "must be non-zero to invert the fringe"));
    }
    Ok(())
}

/// Ω on the monotonic fringe branch through `branch_center` whose expected
/// rate equals `count`.
///
/// Branches are the intervals `kπ ≤ N(SΩ+φ0) ≤ (k+1)π`. A `branch_center`
/// exactly on a boundary (a fringe extremum) does not pick a branch.
pub fn invert_rate(params: &RateModelParams, count: f64, branch_center: f64) -> Result<Inversion> {
    require_signal(params)?;
    let a = 0.5 * params.fringe_amplitude();
    let b = params.background_per_bin();
    let clamped_count = count.clamp(b, 2.0 * a + b);
    let clamped = clamped_count != count;

    let u_center = params.fringe_argument(branch_center);
    let k = (u_center / PI).floor();
    if u_center == k * PI {
        return Err(Error::AmbiguousBranch { omega: branch_center });
    }
    let c = ((clamped_count - b) / a - 1.0).clamp(-1.0, 1.0);
    let theta = c.acos();
    // cos u falls on even branches and rises on odd ones
    let u = if k.rem_euclid(2.0) == 0.0 {
        k * PI + theta
    } else {
        (k + 1.0) * PI - theta
    };
    let n = f64::from(params.photon_number());
    let omega = (u / n - params.phase_offset()) / params.scale_factor();
    Ok(Inversion { omega, clamped })
}

/// `√R / |∂R/∂Ω|` at `omega`; `+∞` where the slope vanishes.
pub fn propagated_uncertainty(params: &RateModelParams, omega: f64) -> f64 {
    let slope = params.rate_derivative(omega).abs();
    if slope == 0.0 {
        return f64::INFINITY;
    }
    params.expected_rate(omega).max(0.0).sqrt() / slope
}

/// Ω of best propagated precision in the first fringe period at `Ω ≥ 0`,
/// and the precision there.
pub fn bias_point(params: &RateModelParams) -> Result<(f64, f64)> {
    require_signal(params)?;
    let period = params.fringe_period();
    let step = period / BIAS_GRID as f64;
    let f = |omega: f64| propagated_uncertainty(params, omega);

    let (best, _) = (0..BIAS_GRID)
        .map(|j| (j, f(j as f64 * step)))
        .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    let centre = best as f64 * step;
    let omega = golden_section(f, centre - step, centre + step, BIAS_TOLERANCE);
    // the refinement never returns anything worse than the grid point
    let (omega, precision) = if f(omega) <= f(centre) {
        (omega, f(omega))
    } else {
        (centre, f(centre))
    };
    Ok((omega.rem_euclid(period), precision))
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

fn check_limit_inputs(params: &RateModelParams) -> Result<(f64, f64)> {
    let (m, s) = (params.photons_per_bin(), params.scale_factor());
    if m.is_nan() || m <= 0.0 {
        return Err(Error::invalid("photons_per_bin", "must be positive for a quantum limit"));
    }
    if s.is_nan() || s <= 0.0 {
        return Err(Error::invalid("scale_factor", "must be positive for a quantum limit"));
    }
    Ok((m, s))
}

/// Standard quantum limit `1/(S√M)`.
pub fn sql_limit(params: &RateModelParams) -> Result<f64> {
    let (m, s) = check_limit_inputs(params)?;
    Ok(1.0 / (s * m.sqrt()))
}

/// Heisenberg limit `1/(S·M)`.
pub fn heisenberg_limit(params: &RateModelParams) -> Result<f64> {
    let (m, s) = check_limit_inputs(params)?;
    Ok(1.0 / (s * m))
}

/// What each bin's estimate is compared against in [`block_precision`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaReference {
    /// The bin's own ground-truth Ω.
    #[default]
    Instantaneous,
    /// The mean ground-truth Ω of the block.
    BlockAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStat {
    /// Step-target Ω of the block.
    pub omega_center: f64,
    pub sample_std: f64,
    pub std_error_of_std: f64,
    pub count: usize,
    /// Bins whose count had to be clamped into the invertible range.
    pub clamped: usize,
}

/// Splits bins into runs of equal step target.
fn blocks(bins: &[Bin]) -> Vec<&[Bin]> {
    bins.chunk_by(|a, b| a.target_omega == b.target_omega).collect()
}

fn block_stat(bins: &[Bin], params: &RateModelParams, reference: OmegaReference) -> Result<BlockStat> {
    let centre = bins[0].target_omega;
    let average = mean(&bins.iter().map(|b| b.reference_omega).collect::<Vec<_>>());
    let mut clamped = 0;
    let mut deviations = Vec::with_capacity(bins.len());
    for bin in bins {
        let inv = invert_rate(params, bin.count, centre)?;
        clamped += usize::from(inv.clamped);
        let truth = match reference {
            OmegaReference::Instantaneous => bin.reference_omega,
            OmegaReference::BlockAverage => average,
        };
        deviations.push(inv.omega - truth);
    }
    let std = sample_std(&deviations);
    Ok(BlockStat {
        omega_center: centre,
        sample_std: std,
        std_error_of_std: std_error_of_std(std, bins.len()),
        count: bins.len(),
        clamped,
    })
}

/// Per-block sample standard deviation of the inverse-fringe estimate.
///
/// Blocks are contiguous runs of equal step-target Ω, and each bin is
/// inverted on the fringe branch containing its block's target. Blocks with
/// fewer than [`MIN_BLOCK_BINS`] bins, or whose target sits exactly on a
/// fringe extremum, are skipped with a warning.
pub fn block_precision(series: &BinnedSeries, params: &RateModelParams, reference: OmegaReference) -> Result<Vec<BlockStat>> {
    require_signal(params)?;
    let groups = blocks(series.bins());
    let stats = par::map_slice(&groups, |bins| {
        if bins.len() < MIN_BLOCK_BINS {
            warn!(
                "skipping block at Ω = {} rad/s: {} bins (< {MIN_BLOCK_BINS})",
                bins[0].target_omega,
                bins.len()
            );
            return None;
        }
        match block_stat(bins, params, reference) {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("skipping block at Ω = {} rad/s: {e}", bins[0].target_omega);
                None
            }
        }
    });
    Ok(stats.into_iter().flatten().collect())
}

/// Block with the smallest sample standard deviation.
pub fn min_block(blocks: &[BlockStat]) -> Option<BlockStat> {
    blocks.iter().copied().min_by(|a, b| a.sample_std.total_cmp(&b.sample_std))
}

/// `2·S₂/S₁` with first-order error from independent fits.
pub fn super_resolution_ratio(fit1: &FitResult, fit2: &FitResult) -> Result<(f64, f64)> {
    for (fit, n) in [(fit1, 1), (fit2, 2)] {
        if !fit.converged {
            return Err(Error::NotConverged(format!("N={n} fit")));
        }
        if fit.params.photon_number() != n {
            return Err(Error::invalid(
                "fit",
                format!("expected an N={n} fit, got N={}", fit.params.photon_number()),
            ));
        }
    }
    let (s1, s2) = (fit1.params.scale_factor(), fit2.params.scale_factor());
    let (e1, e2) = (fit1.standard_errors.scale_factor, fit2.standard_errors.scale_factor);
    let ratio = 2.0 * s2 / s1;
    let std_error = ratio * ((e1 / s1).powi(2) + (e2 / s2).powi(2)).sqrt();
    Ok((ratio, std_error))
}

/// Precision figures for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPrecision {
    pub photon_number: u32,
    pub params: RateModelParams,
    pub sql: f64,
    pub heisenberg: f64,
    pub bias_omega: f64,
    pub bias_precision: f64,
    pub block_table: Vec<BlockStat>,
    /// Minimum block standard deviation; `None` when no block qualified.
    pub min_block_precision: Option<f64>,
    pub min_block_omega: Option<f64>,
    pub min_block_std_error: Option<f64>,
}

impl RunPrecision {
    pub fn analyse(fit: &FitResult, series: &BinnedSeries, reference: OmegaReference) -> Result<Self> {
        if !fit.converged {
            return Err(Error::NotConverged(format!("N={} fit", fit.params.photon_number())));
        }
        let params = fit.params;
        let (bias_omega, bias_precision) = bias_point(&params)?;
        let block_table = block_precision(series, &params, reference)?;
        let best = min_block(&block_table);
        Ok(Self {
            photon_number: params.photon_number(),
            params,
            sql: sql_limit(&params)?,
            heisenberg: heisenberg_limit(&params)?,
            bias_omega,
            bias_precision,
            block_table,
            min_block_precision: best.map(|b| b.sample_std),
            min_block_omega: best.map(|b| b.omega_center),
            min_block_std_error: best.map(|b| b.std_error_of_std),
        })
    }
}

/// The orderings reported alongside the figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingChecks {
    /// `HL < bias(N=2) < SQL < bias(N=1)`
    pub bias_chain: bool,
    /// `ideal NOON limit < bias(N=2)`
    pub ideal_below_two_photon_bias: bool,
    /// `HL ≤ ideal NOON limit ≤ SQL`
    pub limits_nested: bool,
    /// `min block(N=2) < SQL < min block(N=1)`; `None` without blocks.
    pub block_super_sensitivity: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    /// Limits of the one-photon run, the reference for the comparison.
    pub sql: f64,
    pub heisenberg: f64,
    /// `sql/√2`
    pub ideal_noon_limit: f64,
    pub super_resolution_ratio: f64,
    pub super_resolution_std_error: f64,
    pub one_photon: RunPrecision,
    pub two_photon: RunPrecision,
    pub checks: OrderingChecks,
}

/// Assembles the one-photon/two-photon comparison.
pub fn build_report(
    fit1: &FitResult,
    fit2: &FitResult,
    series1: &BinnedSeries,
    series2: &BinnedSeries,
    reference: OmegaReference,
) -> Result<PrecisionReport> {
    if series1.is_empty() && series2.is_empty() {
        return Err(Error::invalid("series", "both series are empty"));
    }
    let (ratio, ratio_err) = super_resolution_ratio(fit1, fit2)?;
    let one = RunPrecision::analyse(fit1, series1, reference)?;
    let two = RunPrecision::analyse(fit2, series2, reference)?;
    let sql = one.sql;
    let heisenberg = one.heisenberg;
    let ideal = sql / 2f64.sqrt();
    let block_super_sensitivity = match (one.min_block_precision, two.min_block_precision) {
        (Some(b1), Some(b2)) => Some(b2 < sql && sql < b1),
        _ => None,
    };
    let checks = OrderingChecks {
        bias_chain: heisenberg < two.bias_precision && two.bias_precision < sql && sql < one.bias_precision,
        ideal_below_two_photon_bias: ideal < two.bias_precision,
        limits_nested: heisenberg <= ideal && ideal <= sql,
        block_super_sensitivity,
    };
    Ok(PrecisionReport {
        sql,
        heisenberg,
        ideal_noon_limit: ideal,
        super_resolution_ratio: ratio,
        super_resolution_std_error: ratio_err,
        one_photon: one,
        two_photon: two,
        checks,
    })
}

/// Ω grid of one fringe period starting at zero, `points` samples.
pub fn period_grid(params: &RateModelParams, points: usize) -> Vec<f64> {
    let period = params.fringe_period();
    (0..points).map(|j| j as f64 * period / points as f64).collect()
}
