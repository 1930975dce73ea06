//! The dataset manifest: one TOML file naming every input file, the time
//! origin, the interval width, and the region/step counts. All relative
//! paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{resolve, AppError, AppResult};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub n_regions: usize,
    pub n_steps: usize,
    pub interval_hours: u32,
    /// ISO-8601 naive timestamp of step 0's start.
    pub time_origin: String,
    pub paths: ManifestPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPaths {
    pub regions: PathBuf,
    pub accidents: PathBuf,
    pub adjacency: PathBuf,
    pub poi: PathBuf,
    pub road: PathBuf,
    pub weather: PathBuf,
    pub holidays: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> AppResult<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::data(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: DatasetManifest = toml::from_str(&text)
            .map_err(|e| AppError::data(format!("manifest parse error in {}: {e}", path.display())))?;
        manifest.validate()?;
        let base = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((manifest, base))
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        let text = toml::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| AppError::io(path, e))
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.n_regions == 0 {
            return Err(AppError::data("manifest: n_regions must be >= 1"));
        }
        if self.n_steps == 0 {
            return Err(AppError::data("manifest: n_steps must be >= 1"));
        }
        if !matches!(self.interval_hours, 12 | 24) {
            return Err(AppError::data("manifest: interval_hours must be 12 or 24"));
        }
        self.origin()?;
        Ok(())
    }

    pub fn origin(&self) -> AppResult<NaiveDateTime> {
        NaiveDateTime::parse_from_str(&self.time_origin, TIMESTAMP_FORMAT).map_err(|e| {
            AppError::data(format!(
                "manifest: time_origin {:?} is not ISO-8601 ({TIMESTAMP_FORMAT}): {e}",
                self.time_origin
            ))
        })
    }

    pub fn resolved(&self, base: &Path) -> ManifestPaths {
        ManifestPaths {
            regions: resolve(base, &self.paths.regions),
            accidents: resolve(base, &self.paths.accidents),
            adjacency: resolve(base, &self.paths.adjacency),
            poi: resolve(base, &self.paths.poi),
            road: resolve(base, &self.paths.road),
            weather: resolve(base, &self.paths.weather),
            holidays: resolve(base, &self.paths.holidays),
        }
    }
}
