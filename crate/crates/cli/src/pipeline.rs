//! Library side of the subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use macq::baselines::{ale_profile, pdp_profile, permutation_importance, AleConfig};
use macq::data::{is_bike_layout, load_bike_csv, load_feature_csv, write_feature_csv, Dataset, Standardization};
use macq::engine::{IndividualContributions, MacqSample};
use macq::model::{MlpModel, ModelFile};
use macq::quantile::{QuantileGrid, SmootherConfig};
use macq::reference::{optimize_reference, ObjectivePrecompute, ReferenceSearchState};
use macq::synthetic::{generate, SyntheticModel};
use macq::training::{fit_network, FitConfig, TrainingHistory};
use ndarray::ArrayView2;

use crate::document::{sha256_file, substream, AnalysisConfig, Baselines, LayerReport, Provenance, ReportDocument, REPORT_SCHEMA};
use crate::error::{CliError, CliResult};

pub const RESPONSE_COLUMN: &str = "y";

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} file {} does not exist", path.display())))
    }
}

/// Bike-sharing layout or a plain numeric table with an optional `y` column,
/// in original units.
pub fn load_table(path: &Path) -> CliResult<(Vec<String>, ndarray::Array2<f64>, Vec<f64>)> {
    require_file(path, "data")?;
    if is_bike_layout(path)? {
        let d: Dataset<f64> = load_bike_csv(path)?;
        Ok((d.names, d.raw, d.response))
    } else {
        Ok(load_feature_csv(path, Some(RESPONSE_COLUMN))?)
    }
}

pub fn load_model(path: &Path) -> CliResult<(ModelFile, MlpModel<f64>)> {
    require_file(path, "model")?;
    let file = ModelFile::load(path)?;
    let model = file.to_model()?;
    Ok((file, model))
}

/// Comma separated positive widths, e.g. `20,15,10`.
pub fn parse_arch(s: &str) -> CliResult<Vec<usize>> {
    let widths = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage(format!("invalid architecture `{s}`")))?;
    if widths.iter().any(|&w| w == 0) {
        return Err(CliError::usage(format!("invalid architecture `{s}`: widths must be positive")));
    }
    Ok(widths)
}

/// `lo:hi` in percent.
pub fn parse_grid(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("invalid grid `{s}` (expected lo:hi with 1 <= lo <= hi <= 99)"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || hi > 99 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

pub fn cmd_generate(name: &str, n: usize, seed: u64, out: &Path, model_out: Option<&Path>) -> CliResult<()> {
    let case = generate::<f64>(name, n, seed).map_err(|e| CliError::usage(e.to_string()))?;
    let d = &case.dataset;
    write_feature_csv(out, &d.names, d.raw.view(), &d.response)?;
    if let Some(path) = model_out {
        let net = match &case.model {
            SyntheticModel::Network(m) => m.clone(),
            SyntheticModel::Linear(m) => MlpModel::from_linear(m),
            _ => {
                return Err(CliError::usage(format!(
                    "generator `{name}` has no network form; only linear and network fixtures can be saved"
                )))
            }
        };
        ModelFile::from_model(&net, Standardization::identity(d.q()), seed, d.names.clone()).save(path)?;
    }
    Ok(())
}

pub struct FitSummary {
    pub arch: Vec<usize>,
    pub history: TrainingHistory<f64>,
}

pub fn cmd_fit(data: &Path, out: &Path, config: &FitConfig) -> CliResult<FitSummary> {
    let (names, raw, y) = load_table(data)?;
    if y.is_empty() {
        return Err(CliError::usage(format!(
            "{} has no response column (`{RESPONSE_COLUMN}` or casual/count)",
            data.display()
        )));
    }
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let dataset = Dataset::new(names.clone(), raw, y)?;
    let fit = fit_network(&dataset, config)?;
    let file = ModelFile::from_model(&fit.model, dataset.standardization.clone(), config.seed, names);
    file.save(out)?;
    Ok(FitSummary {
        arch: file.arch,
        history: fit.history,
    })
}

fn smoother(cfg: &AnalysisConfig) -> CliResult<SmootherConfig<f64>> {
    let s = SmootherConfig {
        degree: cfg.degree,
        bandwidth_fraction: cfg.bandwidth,
    };
    s.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(s)
}

/// Reference search (if configured) and the report at the resulting point.
fn analyze_sample(
    model: &MlpModel<f64>,
    x: ArrayView2<'_, f64>,
    grid: &QuantileGrid<f64>,
    cfg: &AnalysisConfig,
) -> CliResult<(MacqSample<f64>, Vec<f64>, Option<ReferenceSearchState<f64>>)> {
    let sample = MacqSample::new(model, x, grid, smoother(cfg)?)?;
    let a0 = vec![0.0; x.ncols()];
    match &cfg.refopt {
        None => Ok((sample, a0, None)),
        Some(rc) => {
            rc.validate().map_err(|e| CliError::usage(e.to_string()))?;
            let pre = ObjectivePrecompute::new(&sample);
            let state = optimize_reference(model, &pre, &a0, rc)?;
            Ok((sample, state.best_point.clone(), Some(state)))
        }
    }
}

fn strided(ind: IndividualContributions<f64>, max_rows: usize) -> IndividualContributions<f64> {
    let n = ind.ranks.len();
    if n <= max_rows {
        return ind;
    }
    let rows: Vec<usize> = (0..max_rows).map(|i| i * n / max_rows).collect();
    let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
    IndividualContributions {
        ranks: pick(&ind.ranks),
        mean_response: pick(&ind.mean_response),
        features: ind
            .features
            .into_iter()
            .map(|mut f| {
                f.values = pick(&f.values);
                f.omega = pick(&f.omega);
                f
            })
            .collect(),
    }
}

pub fn cmd_analyze(model_path: &Path, data_path: &Path, seed: u64, cfg: &AnalysisConfig) -> CliResult<ReportDocument> {
    let (file, model) = load_model(model_path)?;
    let (names, raw, y) = load_table(data_path)?;
    if !file.feature_names.is_empty() && file.feature_names != names {
        return Err(CliError::usage(format!(
            "data columns {names:?} do not match the model's features {:?}",
            file.feature_names
        )));
    }
    let dataset = Dataset::with_standardization(names.clone(), raw, y, file.standardization.clone())?;
    let depth = model.depth();
    if let Some(&bad) = cfg.layers.iter().find(|&&k| k > depth) {
        return Err(CliError::usage(format!("layer {bad} out of range 0..={depth}")));
    }
    let grid = QuantileGrid::percent_range(cfg.grid_lo, cfg.grid_hi).map_err(|e| CliError::usage(e.to_string()))?;
    let x = dataset.features.view();

    let (sample, a, search) = analyze_sample(&model, x, &grid, cfg)?;
    let report = sample.report(&model, &a, cfg.threshold)?;
    let all: Vec<usize> = (0..dataset.q()).collect();
    let individual = strided(sample.individual(&a, &all)?, cfg.individual_rows);
    drop(sample);

    let baselines = if cfg.baselines {
        let ale_cfg = AleConfig {
            bins: cfg.ale_bins,
            ..AleConfig::default()
        };
        let mut ale = Vec::with_capacity(dataset.q());
        let mut pdp = Vec::with_capacity(dataset.q());
        for j in 0..dataset.q() {
            let profile = ale_profile(&model, x, j, &ale_cfg)?;
            pdp.push(pdp_profile(&model, x, j, &profile.points)?);
            ale.push(profile);
        }
        let permutation = if dataset.has_response() {
            Some(permutation_importance(&model, x, &dataset.response, cfg.perm_repetitions, substream(seed, "permutation"))?)
        } else {
            None
        };
        Some(Baselines { ale, pdp, permutation })
    } else {
        None
    };

    let mut layers = BTreeMap::new();
    for &k in &cfg.layers {
        let t = model.truncate_at_layer(k)?;
        let z = t.represent_rows(x);
        let (sample, a, search) = analyze_sample(t.remaining(), z.view(), &grid, cfg)?;
        let report = sample.report(t.remaining(), &a, cfg.threshold)?;
        layers.insert(
            k,
            LayerReport {
                k,
                width: z.ncols(),
                interaction_area: report.interaction_area(),
                reference_search: search,
                report,
            },
        );
    }

    let doc = ReportDocument {
        schema_version: REPORT_SCHEMA.into(),
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            model_sha256: sha256_file(model_path)?,
            data_sha256: sha256_file(data_path)?,
            seed,
            config: cfg.clone(),
        },
        feature_names: names,
        n: dataset.n(),
        reference_point_original: dataset.standardization.inverse_point(&a),
        report,
        reference_search: search,
        baselines,
        individual: Some(individual),
        layers,
    };
    doc.validate()?;
    Ok(doc)
}
