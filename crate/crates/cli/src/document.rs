//! The JSON report written by `analyze` and `layers`.

use std::collections::BTreeMap;
use std::path::Path;

use macq::baselines::{PermutationImportance, ProfileCurve};
use macq::engine::{AttributionReport, IndividualContributions};
use macq::reference::{RefOptConfig, ReferenceSearchState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

pub const REPORT_SCHEMA: &str = "macq-report/1";

/// Relative tolerance for the curve identities checked on load.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub grid_lo: usize,
    pub grid_hi: usize,
    pub bandwidth: f64,
    pub degree: usize,
    pub threshold: f64,
    pub refopt: Option<RefOptConfig<f64>>,
    pub baselines: bool,
    pub ale_bins: usize,
    pub perm_repetitions: usize,
    pub individual_rows: usize,
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub model_sha256: String,
    pub data_sha256: String,
    pub seed: u64,
    pub config: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub ale: Vec<ProfileCurve<f64>>,
    pub pdp: Vec<ProfileCurve<f64>>,
    pub permutation: Option<PermutationImportance<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub k: usize,
    pub width: usize,
    pub interaction_area: f64,
    pub reference_search: Option<ReferenceSearchState<f64>>,
    pub report: AttributionReport<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub provenance: Provenance,
    pub feature_names: Vec<String>,
    pub n: usize,
    /// Optimized reference point in original feature units.
    pub reference_point_original: Vec<f64>,
    pub report: AttributionReport<f64>,
    pub reference_search: Option<ReferenceSearchState<f64>>,
    pub baselines: Option<Baselines>,
    /// Individual contributions on an evenly strided subset of rows.
    pub individual: Option<IndividualContributions<f64>>,
    pub layers: BTreeMap<usize, LayerReport>,
}

fn identity_tolerance(r: &AttributionReport<f64>) -> f64 {
    let scale = r
        .quantiles
        .iter()
        .chain(&r.c1)
        .chain(std::iter::once(&r.reference_value))
        .fold(1.0f64, |m, v| m.max(v.abs()));
    IDENTITY_TOL * scale
}

impl ReportDocument {
    /// Checks the schema tag and re-validates every attribution report.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != REPORT_SCHEMA {
            return Err(CliError::usage(format!(
                "unsupported report schema `{}` (expected `{REPORT_SCHEMA}`)",
                self.schema_version
            )));
        }
        if self.feature_names.len() != self.report.q() {
            return Err(CliError::usage("feature names do not match the report width"));
        }
        self.report.validate(identity_tolerance(&self.report))?;
        for (k, layer) in &self.layers {
            if layer.k != *k || layer.report.q() != layer.width {
                return Err(CliError::usage(format!("layer entry {k} is inconsistent")));
            }
            layer.report.validate(identity_tolerance(&layer.report))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(macq::Error::from)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let doc: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: not a report document: {e}", path.display())))?;
        doc.validate()?;
        Ok(doc)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Seed of the named sub-stream derived from the master seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
