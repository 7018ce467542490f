use std::path::Path;
use std::process::Command;

use noon_gyro::commands::{self, run_seed, series_file_name, SimulateOptions, SimulationMode};
use noon_gyro::config::RunConfig;
use noon_gyro::formats;
use noon_gyro::physics::RateModelParams;
use noon_gyro::rotsim::{accidental_rate, simulate_binned_counts, simulate_time_tags, RotationProfile, SourceModel};
use noon_gyro::tagproc::count_coincidences;

fn within_sigmas(observed: f64, expected: f64, k: f64) -> bool {
    (observed - expected).abs() <= k * expected.sqrt()
}

#[test]
fn two_photon_clicks_match_rate_expectations() {
    let source = SourceModel::default();
    let params = RateModelParams::two_photon_reference();
    let omega = 0.35;
    let profile = RotationProfile::constant(omega, 1.0).unwrap();
    let tags = simulate_time_tags(&source, &params, &profile, 77).unwrap();

    let p = params.total_phase(omega).cos().powi(2);
    let eta = source.detector_efficiency;
    let r = source.pair_rate;
    let single = r * (p * eta + 0.5 * (1.0 - p) * (1.0 - (1.0 - eta).powi(2))) + source.singles_background_rate;
    assert!(within_sigmas(tags.channel1.len() as f64, single, 4.0));
    assert!(within_sigmas(tags.channel2.len() as f64, single, 4.0));

    let window = 1e-9;
    let ticks = tags.resolution.window_ticks(window).unwrap();
    let effective = ticks as f64 * tags.resolution.seconds();
    let expected = r * eta * eta * p + accidental_rate(single, single, effective).unwrap();
    let observed = count_coincidences(&tags.channel1, &tags.channel2, ticks).unwrap().len() as f64;
    assert!(within_sigmas(observed, expected, 4.0), "{observed} vs {expected}");
}

#[test]
fn one_photon_clicks_follow_half_phase_fringe() {
    let source = SourceModel::default();
    let params = RateModelParams::one_photon_reference();
    for (omega, seed) in [(0.0, 1), (1.4, 2), (4.2, 3)] {
        let profile = RotationProfile::constant(omega, 1.0).unwrap();
        let tags = simulate_time_tags(&source, &params, &profile, seed).unwrap();
        let p = (0.5 * params.total_phase(omega)).cos().powi(2);
        let base = source.pair_rate * source.detector_efficiency;
        let bg = source.singles_background_rate;
        assert!(within_sigmas(tags.channel2.len() as f64, base * p + bg, 4.0));
        assert!(within_sigmas(tags.channel1.len() as f64, base * (1.0 - p) + bg, 4.0));
    }
}

#[test]
fn simulated_files_parse_back_to_the_same_series() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        seed: 99,
        ..RunConfig::default()
    };
    let opts = SimulateOptions {
        mode: SimulationMode::Rate,
        photon_numbers: vec![1, 2],
        duration: Some(30.0),
        out_dir: dir.path().to_path_buf(),
    };
    commands::simulate(&config, &opts).unwrap();
    for n in [1, 2] {
        let model = config.models.get(n).unwrap();
        let profile = config.profiles.get(n).unwrap().truncated(30.0).unwrap();
        let mut direct = simulate_binned_counts(model, &profile, run_seed(99, n)).unwrap();
        direct.meta.config_hash = Some(config.hash());
        let read = formats::read_series(&dir.path().join(series_file_name(n))).unwrap();
        assert_eq!(read, direct);
    }
}

fn cli(out: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noon-gyro"));
    c.env("NOONGYRO_OUT_DIR", out);
    c
}

fn status(c: &mut Command) -> i32 {
    let o = c.output().unwrap();
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().unwrap()
}

#[test]
fn cli_rate_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(status(cli(out).args(["--seed", "5", "simulate", "--mode", "rate"])), 0);
    let s1 = out.join("series_n1.txt");
    let s2 = out.join("series_n2.txt");
    let f1 = out.join("fit_n1.json");
    let f2 = out.join("fit_n2.json");
    assert_eq!(status(cli(out).args(["fit", s1.to_str().unwrap(), "--n", "1"])), 0);
    assert_eq!(status(cli(out).args(["fit", s2.to_str().unwrap(), "--n", "2"])), 0);
    let report = [
        f1.to_str().unwrap(),
        f2.to_str().unwrap(),
        s1.to_str().unwrap(),
        s2.to_str().unwrap(),
    ];
    assert_eq!(status(cli(out).arg("report").args(report)), 0);
    for f in ["report.json", "rate_vs_omega_n1.csv", "deviation_n2.csv", "trace_n2.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let doc1: formats::FitDocument = formats::read_json(&f1).unwrap();
    let doc2: formats::FitDocument = formats::read_json(&f2).unwrap();
    let rep: noon_gyro::PrecisionReport = formats::read_json(&out.join("report.json")).unwrap();
    let ratio = 2.0 * doc2.fit.params.scale_factor() / doc1.fit.params.scale_factor();
    assert!((rep.super_resolution_ratio - ratio).abs() < 1e-12);

    // N labels must line up
    let swapped = [
        f2.to_str().unwrap(),
        f1.to_str().unwrap(),
        s1.to_str().unwrap(),
        s2.to_str().unwrap(),
    ];
    assert_eq!(status(cli(out).arg("report").args(swapped)), 2);
}

#[test]
fn cli_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(status(cli(d).args(["simulate", "--duration", "20"])), 0);
    }
    for n in [1, 2] {
        let name = series_file_name(n);
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn cli_tag_pipeline_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(
        status(cli(out).args(["simulate", "--mode", "tags", "--n", "2", "--duration", "0.5"])),
        0
    );
    let events = out.join("events_n2.ntag");
    assert_eq!(
        status(cli(out).args(["coincide", events.to_str().unwrap(), "--n", "2", "--span", "0,0.5"])),
        0
    );
    let series = formats::read_series(&out.join("coincidences_n2.txt")).unwrap();
    assert_eq!(series.len(), 25);
    assert!(series.total_count() > 0.0);

    // window must be positive
    assert_eq!(
        status(cli(out).args(["coincide", events.to_str().unwrap(), "--n", "2", "--window", "0"])),
        2
    );
    // corrupted input
    let bad = out.join("bad.txt");
    std::fs::write(&bad, "# noon-gyro series v1\n# bin_duration = x\n").unwrap();
    assert_eq!(status(cli(out).args(["fit", bad.to_str().unwrap(), "--n", "1"])), 3);
    // unidentifiable: a single constant rotation rate
    let flat = out.join("flat.txt");
    let s = simulate_binned_counts(
        &RateModelParams::one_photon_reference(),
        &RotationProfile::constant(1.0, 1.0).unwrap(),
        1,
    )
    .unwrap();
    formats::write_series(&flat, &s).unwrap();
    assert_eq!(status(cli(out).args(["fit", flat.to_str().unwrap(), "--n", "1"])), 4);
    // missing file
    assert_eq!(
        status(cli(out).args(["fit", out.join("nope.txt").to_str().unwrap(), "--n", "1"])),
        5
    );
    // unknown config key
    let cfg = out.join("c.toml");
    std::fs::write(&cfg, "sed = 3\n").unwrap();
    assert_eq!(status(cli(out).args(["--config", cfg.to_str().unwrap(), "simulate"])), 3);
}

#[test]
fn shipped_configuration_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml");
    let config = RunConfig::load(&path).unwrap();
    let reference = RunConfig::default();
    assert_eq!(config.models, reference.models);
    assert_eq!(config.source, reference.source);
    for n in [1, 2] {
        let (a, b) = (config.profiles.get(n).unwrap(), reference.profiles.get(n).unwrap());
        assert!((a.total_duration() - b.total_duration()).abs() < 1e-9);
    }
}
