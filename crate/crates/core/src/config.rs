//! Run configuration: one TOML document describing both measurement runs.
//!
//! Every section is optional and falls back to the reference experiment.
//! Unknown keys are rejected so that a misspelt option cannot silently fall
//! back to its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_positive, Error, Result};
use crate::physics::{InterferometerGeometry, RateModelParams};
use crate::rotsim::{RotationProfile, SourceModel};
use crate::tagproc::TickResolution;

pub const DEFAULT_SEED: u64 = 20_190_814;
pub const DEFAULT_COINCIDENCE_WINDOW: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: InterferometerGeometry,
    pub models: PerRun<RateModelParams>,
    pub profiles: PerRun<RotationProfile>,
    pub source: SourceModel,
    pub windows: Windows,
    pub output: OutputPaths,
}

/// A value for the one-photon and the two-photon run.
///
/// Either run may be left out of the TOML; it then keeps its reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de> + ReferenceRun"))]
pub struct PerRun<T> {
    #[serde(default = "T::one_photon")]
    pub one_photon: T,
    #[serde(default = "T::two_photon")]
    pub two_photon: T,
}

/// Reference value of a per-run setting.
pub trait ReferenceRun: Sized {
    fn one_photon() -> Self;
    fn two_photon() -> Self;
}

impl ReferenceRun for RateModelParams {
    fn one_photon() -> Self {
        RateModelParams::one_photon_reference()
    }
    fn two_photon() -> Self {
        RateModelParams::two_photon_reference()
    }
}

impl ReferenceRun for RotationProfile {
    fn one_photon() -> Self {
        RotationProfile::reference_sweep(1).expect("reference sweep")
    }
    fn two_photon() -> Self {
        RotationProfile::reference_sweep(2).expect("reference sweep")
    }
}

impl<T> PerRun<T> {
    pub fn get(&self, photon_number: u32) -> Result<&T> {
        match photon_number {
            1 => Ok(&self.one_photon),
            2 => Ok(&self.two_photon),
            n => Err(Error::invalid("photon_number", format!("runs exist for N=1 and N=2, not {n}"))),
        }
    }
}

impl<T: ReferenceRun> Default for PerRun<T> {
    fn default() -> Self {
        Self {
            one_photon: T::one_photon(),
            two_photon: T::two_photon(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Windows {
    /// Coincidence window, s.
    pub coincidence: f64,
}

impl Default for Windows {
    fn default() -> Self {
        Self {
            coincidence: DEFAULT_COINCIDENCE_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub directory: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            geometry: InterferometerGeometry::default(),
            models: PerRun::default(),
            profiles: PerRun::default(),
            source: SourceModel::default(),
            windows: Windows::default(),
            output: OutputPaths::default(),
        }
    }
}

fn is_tick_multiple(seconds: f64, resolution: TickResolution) -> bool {
    let ticks = seconds / resolution.seconds();
    (ticks - ticks.round()).abs() <= 1e-6 * ticks.max(1.0)
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_column(text, s.start)).unwrap_or((0, 0));
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column {column}: {}", e.message()),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.source.validate()?;
        check_positive("windows.coincidence", self.windows.coincidence)?;
        let resolution = self.source.resolution()?;
        for (n, model) in [(1, &self.models.one_photon), (2, &self.models.two_photon)] {
            if model.photon_number() != n {
                return Err(Error::invalid(
                    "models",
                    format!("the N={n} model has photon_number = {}", model.photon_number()),
                ));
            }
            if !is_tick_multiple(model.bin_duration(), resolution) {
                return Err(Error::invalid(
                    "bin_duration",
                    format!(
                        "N={n}: {} s is not a whole number of {} s ticks",
                        model.bin_duration(),
                        resolution.seconds()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Short digest of the canonical serialisation, recorded in output
    /// headers so files can be traced back to the configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// 1-based line and column of a byte offset.
pub(crate) fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_reference_setup() {
        let c = RunConfig::from_toml_str("", Path::new("x.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert!((c.geometry.sagnac_scale_factor() - 1.09).abs() < 0.005);
    }

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml_string(), Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let e = RunConfig::from_toml_str("seed = 1\n[source]\npair_rat = 5\n", Path::new("x.toml")).unwrap_err();
        match e {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("pair_rat"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply() {
        let text = "seed = 7\n[windows]\ncoincidence = 2e-9\n[profiles.one_photon]\nsteps = [[0.0, 1.0], [1.0, 1.0]]\n";
        let c = RunConfig::from_toml_str(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.windows.coincidence, 2e-9);
        assert_eq!(c.profiles.one_photon.total_duration(), 2.0);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[windows]\ncoincidence = 0.0\n", Path::new("x")).is_err());
        let swapped = "[models.one_photon]\nphoton_number = 2\nphotons_per_bin = 1.0\nbackground_per_bin = 0.0\nscale_factor = 1.0\nphase_offset = 0.0\nbin_duration = 0.005\n";
        assert!(RunConfig::from_toml_str(swapped, Path::new("x")).is_err());
        let odd_tau = "[models.two_photon]\nphoton_number = 2\nphotons_per_bin = 1.0\nbackground_per_bin = 0.0\nscale_factor = 1.0\nphase_offset = 0.0\nbin_duration = 1.0000000000001e-10\n";
        assert!(RunConfig::from_toml_str(odd_tau, Path::new("x")).is_err());
        assert!(RunConfig::from_toml_str("[profiles.two_photon]\nsteps = []\n", Path::new("x")).is_err());
    }

    #[test]
    fn line_column_counts_from_one() {
        assert_eq!(line_column("ab\ncd", 0), (1, 1));
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
    }
}
