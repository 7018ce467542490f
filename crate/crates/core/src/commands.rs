//! The pipeline stages behind the `noon-gyro` subcommands.
//!
//! Each stage reads and writes files in the formats of [`crate::formats`]
//! and returns a [`Manifest`] describing what it produced.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimator::{bootstrap_from_fit, fit_rate_model, prediction_band, FitOptions, Weighting};
use crate::formats::{self, FitDocument};
use crate::physics::RateModelParams;
use crate::precision::{build_report, invert_rate, propagated_uncertainty, OmegaReference, PrecisionReport};
use crate::rotsim::{simulate_binned_counts, simulate_time_tags, BinnedSeries, RotationProfile, SeriesMeta};
use crate::seed::derive_seed;
use crate::tagproc::{bin_ticks, count_coincidences};

/// Environment variable that replaces the configured output directory.
pub const OUT_DIR_ENV: &str = "NOONGYRO_OUT_DIR";

/// Confidence level of the prediction band in the count-rate plot data.
pub const PLOT_BAND_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationMode {
    /// Poisson counts per bin straight from the rate model.
    Rate,
    /// Raw detector clicks.
    Tags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub photon_number: Option<u32>,
    /// Bins for series, events for event files, rows for tables.
    pub records: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub outputs: Vec<OutputRecord>,
}

impl Manifest {
    fn new(command: &str, seed: Option<u64>, config_hash: Option<String>) -> Self {
        Self {
            command: command.into(),
            seed,
            config_hash,
            outputs: Vec::new(),
        }
    }

    fn push(&mut self, path: &Path, photon_number: Option<u32>, records: usize, description: impl Into<String>) {
        self.outputs.push(OutputRecord {
            path: path.to_path_buf(),
            photon_number,
            records,
            description: description.into(),
        });
    }
}

/// Output directory: the environment override if set, else the configured one.
pub fn output_directory(config: &RunConfig) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.output.directory.clone(),
    }
}

/// Seed used for the run with `photon_number` under master `seed`.
pub fn run_seed(seed: u64, photon_number: u32) -> u64 {
    derive_seed(seed, u64::from(photon_number))
}

fn profile_for(config: &RunConfig, photon_number: u32, duration: Option<f64>) -> Result<RotationProfile> {
    let profile = config.profiles.get(photon_number)?.clone();
    match duration {
        Some(d) => profile.truncated(d),
        None => Ok(profile),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub mode: SimulationMode,
    pub photon_numbers: Vec<u32>,
    /// Simulate only the first `duration` seconds of each profile.
    pub duration: Option<f64>,
    pub out_dir: PathBuf,
}

pub fn series_file_name(photon_number: u32) -> String {
    format!("series_n{photon_number}.txt")
}

pub fn events_file_name(photon_number: u32) -> String {
    format!("events_n{photon_number}.ntag")
}

/// Simulates the configured runs and writes one file per run.
pub fn simulate(config: &RunConfig, opts: &SimulateOptions) -> Result<Manifest> {
    config.validate()?;
    let hash = config.hash();
    let mut manifest = Manifest::new("simulate", Some(config.seed), Some(hash.clone()));
    for &n in &opts.photon_numbers {
        let model = config.models.get(n)?;
        let profile = profile_for(config, n, opts.duration)?;
        let seed = run_seed(config.seed, n);
        match opts.mode {
            SimulationMode::Rate => {
                let mut series = simulate_binned_counts(model, &profile, seed)?;
                series.meta.config_hash = Some(hash.clone());
                let path = opts.out_dir.join(series_file_name(n));
                formats::write_series(&path, &series)?;
                info!("N={n}: {} bins, {} counts", series.len(), series.total_count());
                manifest.push(
                    &path,
                    Some(n),
                    series.len(),
                    format!("binned counts, {} s, {} total", profile.total_duration(), series.total_count()),
                );
            }
            SimulationMode::Tags => {
                let streams = simulate_time_tags(&config.source, model, &profile, seed)?;
                let path = opts.out_dir.join(events_file_name(n));
                formats::write_events(&path, &streams)?;
                info!("N={n}: {} + {} clicks", streams.channel1.len(), streams.channel2.len());
                manifest.push(
                    &path,
                    Some(n),
                    streams.len(),
                    format!(
                        "detector clicks, {} s, {} on channel 1, {} on channel 2",
                        profile.total_duration(),
                        streams.channel1.len(),
                        streams.channel2.len()
                    ),
                );
            }
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincideOptions {
    pub photon_number: u32,
    /// Coincidence window, s; the configured window when `None`.
    pub window: Option<f64>,
    /// Bin duration, s; the configured model's when `None`.
    pub tau: Option<f64>,
    /// `[t0, t1)`; defaults to the profile span rounded down to whole bins.
    pub span: Option<(f64, f64)>,
    pub out_dir: PathBuf,
}

/// Series produced by [`coincide`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoincideOutput {
    pub singles1: BinnedSeries,
    pub singles2: BinnedSeries,
    pub coincidences: BinnedSeries,
    pub dropped: usize,
}

impl CoincideOutput {
    /// The count series the fringe model describes: two-photon coincidences
    /// for N=2, channel-2 singles for N=1.
    pub fn signal(&self, photon_number: u32) -> &BinnedSeries {
        if photon_number >= 2 {
            &self.coincidences
        } else {
            &self.singles2
        }
    }
}

/// Bins singles and coincidences of an event file.
///
/// Reference Ω per bin comes from the configured profile of the run, which is
/// the profile the events were simulated (or recorded) under.
pub fn coincide_streams(config: &RunConfig, streams: &crate::rotsim::TagStreams, opts: &CoincideOptions) -> Result<CoincideOutput> {
    let model = config.models.get(opts.photon_number)?;
    let profile = config.profiles.get(opts.photon_number)?;
    let tau = opts.tau.unwrap_or(model.bin_duration());
    let window = opts.window.unwrap_or(config.windows.coincidence);
    let window_ticks = streams.resolution.window_ticks(window)?;
    let (t0, t1) = match opts.span {
        Some(s) => s,
        None => {
            let bins = crate::rotsim::whole_bins(profile.total_duration(), tau);
            (0.0, bins as f64 * tau)
        }
    };
    let lookup = |t: f64| profile.sample(t).unwrap_or((f64::NAN, f64::NAN));
    let coincidences = count_coincidences(&streams.channel1, &streams.channel2, window_ticks)?;
    let stamps: Vec<u64> = coincidences.iter().map(|c| c.timestamp).collect();

    let hash = Some(config.hash());
    let label = |series: BinnedSeries, kind: &str| -> Result<BinnedSeries> {
        if series.bins().iter().any(|b| !b.reference_omega.is_finite()) {
            return Err(Error::invalid("span", format!("[{t0}, {t1}) extends beyond the rotation profile")));
        }
        Ok(series.with_meta(SeriesMeta {
            photon_number: Some(opts.photon_number),
            seed: None,
            config_hash: hash.clone(),
            kind: Some(kind.into()),
        }))
    };
    let s1 = bin_ticks(&streams.channel1, streams.resolution, tau, t0, t1, lookup)?;
    let s2 = bin_ticks(&streams.channel2, streams.resolution, tau, t0, t1, lookup)?;
    let cc = bin_ticks(&stamps, streams.resolution, tau, t0, t1, lookup)?;
    Ok(CoincideOutput {
        singles1: label(s1.series, "singles-ch1")?,
        singles2: label(s2.series, "singles-ch2")?,
        coincidences: label(cc.series, "coincidences")?,
        dropped: cc.dropped,
    })
}

pub fn coincide(config: &RunConfig, events: &Path, opts: &CoincideOptions) -> Result<Manifest> {
    config.validate()?;
    let streams = formats::read_events(events)?;
    let out = coincide_streams(config, &streams, opts)?;
    let n = opts.photon_number;
    let mut manifest = Manifest::new("coincide", None, Some(config.hash()));
    for (series, name, what) in [
        (&out.singles1, format!("singles1_n{n}.txt"), "channel-1 singles"),
        (&out.singles2, format!("singles2_n{n}.txt"), "channel-2 singles"),
        (&out.coincidences, format!("coincidences_n{n}.txt"), "coincidences"),
    ] {
        let path = opts.out_dir.join(name);
        formats::write_series(&path, series)?;
        manifest.push(&path, Some(n), series.len(), format!("{what}, {} total", series.total_count()));
    }
    let signal = out.signal(n);
    let path = opts.out_dir.join(series_file_name(n));
    formats::write_series(&path, signal)?;
    manifest.push(&path, Some(n), signal.len(), "fit input");
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitCommandOptions {
    pub photon_number: u32,
    pub fit: FitOptions,
    /// Bootstrap resamples; none when `None`.
    pub bootstrap: Option<usize>,
    pub seed: u64,
    pub output: PathBuf,
}

fn check_label(series: &BinnedSeries, photon_number: u32, path: &Path) -> Result<()> {
    match series.meta.photon_number {
        Some(n) if n != photon_number => Err(Error::Mismatch(format!(
            "{} holds an N={n} series, but N={photon_number} was requested",
            path.display()
        ))),
        _ => Ok(()),
    }
}

pub fn fit_series(series: &BinnedSeries, opts: &FitCommandOptions) -> Result<FitDocument> {
    let fit = fit_rate_model(series, opts.photon_number, None, &opts.fit)?;
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "{} iterations, relative gradient {:.3e}",
            fit.iterations, fit.gradient_norm
        )));
    }
    let bootstrap = match opts.bootstrap {
        Some(r) => Some(bootstrap_from_fit(series, &fit, r, opts.seed, &opts.fit)?),
        None => None,
    };
    Ok(FitDocument {
        photon_number: opts.photon_number,
        series: None,
        config_hash: series.meta.config_hash.clone(),
        fit,
        bootstrap,
    })
}

pub fn fit(series_path: &Path, opts: &FitCommandOptions) -> Result<(Manifest, FitDocument)> {
    let series = formats::read_series(series_path)?;
    check_label(&series, opts.photon_number, series_path)?;
    let mut doc = fit_series(&series, opts)?;
    doc.series = Some(series_path.to_path_buf());
    formats::write_json(&opts.output, &doc)?;
    let mut manifest = Manifest::new("fit", opts.bootstrap.map(|_| opts.seed), doc.config_hash.clone());
    let p = &doc.fit.params;
    manifest.push(
        &opts.output,
        Some(opts.photon_number),
        series.len(),
        format!(
            "M={:.2} B={:.2} S={:.5} phi0={:.4} after {} iterations",
            p.photons_per_bin(),
            p.background_per_bin(),
            p.scale_factor(),
            p.phase_offset(),
            doc.fit.iterations
        ),
    );
    Ok((manifest, doc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub reference: OmegaReference,
    pub out_dir: PathBuf,
}

/// Count-rate plot: per bin Ω, count, model, and the 99% Poisson band.
pub fn rate_plot_rows(series: &BinnedSeries, params: &RateModelParams) -> Vec<Vec<f64>> {
    series
        .bins()
        .iter()
        .map(|b| {
            let r = params.expected_rate(b.reference_omega);
            let (lo, hi) = prediction_band(r, PLOT_BAND_LEVEL);
            vec![b.reference_omega, b.count, r, lo, hi]
        })
        .collect()
}

/// Time-trace plot: per bin t, Ω and count.
pub fn trace_plot_rows(series: &BinnedSeries) -> Vec<Vec<f64>> {
    series.bins().iter().map(|b| vec![b.mid_time, b.reference_omega, b.count]).collect()
}

/// Deviation plot: per bin Ω, |Ω^E − Ω|, the σ of the bin's block, the SQL
/// and the propagated uncertainty at Ω. Bins in skipped blocks are omitted.
pub fn deviation_plot_rows(series: &BinnedSeries, params: &RateModelParams, run: &crate::precision::RunPrecision) -> Vec<Vec<f64>> {
    series
        .bins()
        .iter()
        .filter_map(|b| {
            let block = run.block_table.iter().find(|s| s.omega_center == b.target_omega)?;
            let est = invert_rate(params, b.count, b.target_omega).ok()?;
            Some(vec![
                b.reference_omega,
                (est.omega - b.reference_omega).abs(),
                block.sample_std,
                run.sql,
                propagated_uncertainty(params, b.reference_omega),
            ])
        })
        .collect()
}

pub fn report_from(
    fits: (&FitDocument, &FitDocument),
    series: (&BinnedSeries, &BinnedSeries),
    opts: &ReportOptions,
) -> Result<(Manifest, PrecisionReport)> {
    let (f1, f2) = fits;
    if f1.photon_number != 1 || f2.photon_number != 2 {
        return Err(Error::Mismatch(format!(
            "expected fits for N=1 and N=2, got N={} and N={}",
            f1.photon_number, f2.photon_number
        )));
    }
    for (s, n) in [(series.0, 1), (series.1, 2)] {
        if let Some(m) = s.meta.photon_number {
            if m != n {
                return Err(Error::Mismatch(format!("series for N={n} is labelled N={m}")));
            }
        }
    }
    let report = build_report(&f1.fit, &f2.fit, series.0, series.1, opts.reference)?;
    let mut manifest = Manifest::new("report", None, f1.config_hash.clone());

    let path = opts.out_dir.join("report.json");
    formats::write_json(&path, &report)?;
    manifest.push(
        &path,
        None,
        1,
        format!(
            "SQL {:.4}, bias {:.4}/{:.4}, ratio {:.4}",
            report.sql, report.one_photon.bias_precision, report.two_photon.bias_precision, report.super_resolution_ratio
        ),
    );

    let runs = [
        (&report.one_photon, series.0, &f1.fit.params),
        (&report.two_photon, series.1, &f2.fit.params),
    ];
    for (run, s, params) in runs {
        let n = run.photon_number;
        let rows = rate_plot_rows(s, params);
        let path = opts.out_dir.join(format!("rate_vs_omega_n{n}.csv"));
        formats::write_table(
            &path,
            &[format!(
                "N={n} counts per bin against rotation rate, with fitted model and {}% Poisson band",
                PLOT_BAND_LEVEL * 100.0
            )],
            &["omega", "count", "model", "band_low", "band_high"],
            &rows,
        )?;
        manifest.push(&path, Some(n), rows.len(), "count-rate plot data");

        let rows = deviation_plot_rows(s, params, run);
        let path = opts.out_dir.join(format!("deviation_n{n}.csv"));
        formats::write_table(
            &path,
            &[format!(
                "N={n} inverse-fringe deviations, block sigma, SQL and propagated uncertainty"
            )],
            &["omega", "abs_deviation", "block_sigma", "sql", "propagated"],
            &rows,
        )?;
        manifest.push(&path, Some(n), rows.len(), "deviation plot data");
    }

    let rows = trace_plot_rows(series.1);
    let path = opts.out_dir.join("trace_n2.csv");
    formats::write_table(
        &path,
        &["N=2 rotation rate and counts against time".to_string()],
        &["time", "omega", "count"],
        &rows,
    )?;
    manifest.push(&path, Some(2), rows.len(), "time-trace plot data");
    Ok((manifest, report))
}

pub fn report(fit_paths: (&Path, &Path), series_paths: (&Path, &Path), opts: &ReportOptions) -> Result<(Manifest, PrecisionReport)> {
    let f1: FitDocument = formats::read_json(fit_paths.0)?;
    let f2: FitDocument = formats::read_json(fit_paths.1)?;
    let s1 = formats::read_series(series_paths.0)?;
    let s2 = formats::read_series(series_paths.1)?;
    report_from((&f1, &f2), (&s1, &s2), opts)
}

/// Default fit options with the given weighting.
pub fn fit_options(weighting: Weighting) -> FitOptions {
    FitOptions {
        weighting,
        ..FitOptions::default()
    }
}
