//! `manifest.json`: everything needed to re-execute a fit. It is written
//! last, so a run directory without one is incomplete.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::formats::write_text;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub unit_scale: f64,
    pub area_unit: String,
    pub area_unit_size: f64,
}

/// State space in user units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain: usize,
    pub seed: u64,
    pub file: String,
    pub centers_file: Option<String>,
    pub acceptance_centers: f64,
    pub acceptance_sigma: f64,
    pub acceptance_lambda0: f64,
    /// Final proposal scale for centers, in model units.
    pub proposal_sd_s: f64,
    pub proposal_sd_log_sigma: f64,
    pub proposal_sd_log_lambda0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterRecord {
    pub file: String,
    /// Pixel side in user units.
    pub pixel: f64,
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputFile>,
    pub units: Units,
    pub space: Bounds,
    /// State-space area in area units.
    pub area: f64,
    /// Median nearest-neighbour trap distance in user units.
    pub trap_spacing: f64,
    pub traps: usize,
    pub occasions: usize,
    pub marked: usize,
    pub augmentation: usize,
    pub kept_draws: usize,
    /// Sweeps between center snapshots, when centers were stored.
    pub center_stride: Option<usize>,
    pub chains: Vec<ChainRecord>,
    pub summary: String,
    pub raster: Option<RasterRecord>,
    pub wall_time_seconds: f64,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Manifest> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::io(format!("{}: {e} (incomplete or missing run)", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        let tmp = dir.join("manifest.json.partial");
        write_text(&tmp, &text)?;
        let path = dir.join(MANIFEST);
        std::fs::rename(&tmp, &path).map_err(|e| CliError::at(&path, e))
    }

    /// Output files whose bytes are determined by the inputs and config.
    pub fn outputs(&self) -> Vec<String> {
        let mut files = vec!["config.ini".to_string()];
        for c in &self.chains {
            files.push(c.file.clone());
            files.extend(c.centers_file.clone());
        }
        files.push(self.summary.clone());
        files.push("summary.txt".into());
        if let Some(r) = &self.raster {
            files.push(r.file.clone());
            files.extend(r.image.clone());
        }
        files
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::at(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::at(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn input_file(path: &Path) -> CliResult<InputFile> {
    let abs = std::fs::canonicalize(path).map_err(|e| CliError::at(path, e))?;
    Ok(InputFile { path: abs.display().to_string(), sha256: sha256_file(&abs)? })
}
