use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use macq::reference::RefOptConfig;
use macq::synthetic::GENERATORS;
use macq::training::FitConfig;

use crate::document::{AnalysisConfig, ReportDocument};
use crate::error::{CliError, CliResult};
use crate::pipeline::{cmd_analyze, cmd_fit, cmd_generate, parse_arch, parse_grid};
use crate::plot::{render, write_figure, Figure, PlotOptions};

#[derive(Debug, Parser)]
#[command(name = "macq", version, about = "Quantile-conditioned marginal attribution for smooth models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (and, where possible, its generating model).
    Generate {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Fit a tanh network with early stopping.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hidden layer widths.
        #[arg(long, default_value = "20,15,10")]
        arch: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 20)]
        patience: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.02)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 0.2)]
        validation_fraction: f64,
    },
    /// Attribution report for a fitted model.
    Analyze {
        #[command(flatten)]
        common: AnalysisArgs,
        /// Also analyze the representations after these hidden layers.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
    },
    /// Attribution reports on the representations of selected hidden layers.
    Layers {
        #[command(flatten)]
        common: AnalysisArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
    /// Figure series (CSV) and a static SVG from a report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        figure: Figure,
        #[arg(long)]
        out_dir: PathBuf,
        /// Use the sub-report of this layer.
        #[arg(long)]
        layer: Option<usize>,
        /// Levels for vertical slices.
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
        levels: Vec<f64>,
        /// Restrict individual plots to one feature (name or index).
        #[arg(long)]
        feature: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Quantile levels in percent, `lo:hi`.
    #[arg(long, default_value = "1:99")]
    pub grid: String,
    #[arg(long, default_value_t = 0.1)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Keep the reference point at the origin.
    #[arg(long)]
    pub no_refopt: bool,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long)]
    pub backtracking: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub no_baselines: bool,
    #[arg(long, default_value_t = 40)]
    pub ale_bins: usize,
    #[arg(long, default_value_t = 5)]
    pub perm_repetitions: usize,
    /// Rows kept for individual contribution plots.
    #[arg(long, default_value_t = 2000)]
    pub individual_rows: usize,
}

impl AnalysisArgs {
    fn config(&self, layers: Vec<usize>) -> CliResult<AnalysisConfig> {
        let (grid_lo, grid_hi) = parse_grid(&self.grid)?;
        if self.threshold < 0.0 || !self.threshold.is_finite() {
            return Err(CliError::usage("screening threshold must be a non-negative number"));
        }
        let refopt = (!self.no_refopt).then(|| RefOptConfig {
            steps: self.steps,
            learning_rate: self.lr,
            backtracking: self.backtracking,
            ..RefOptConfig::default()
        });
        let mut layers = layers;
        layers.sort_unstable();
        layers.dedup();
        Ok(AnalysisConfig {
            grid_lo,
            grid_hi,
            bandwidth: self.bandwidth,
            degree: self.degree,
            threshold: self.threshold,
            refopt,
            baselines: !self.no_baselines,
            ale_bins: self.ale_bins,
            perm_repetitions: self.perm_repetitions,
            individual_rows: self.individual_rows,
            layers,
        })
    }
}

fn analyze(common: &AnalysisArgs, layers: Vec<usize>) -> CliResult<()> {
    let cfg = common.config(layers)?;
    let doc = cmd_analyze(&common.model, &common.data, common.seed, &cfg)?;
    doc.save(&common.out)?;
    let r = &doc.report;
    println!(
        "levels {} | reference value {:.6} | mean residual first order {:.6}, second order {:.6} | {} interaction pair(s)",
        r.n_levels(),
        r.reference_value,
        mean(&r.residuals_first_order),
        mean(&r.residuals_second_order),
        r.interactions.len()
    );
    for (k, l) in &doc.layers {
        println!("layer {k}: width {} | interaction area {:.6}", l.width, l.interaction_area);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate {
            name,
            n,
            seed,
            out,
            model_out,
        } => {
            if !GENERATORS.contains(&name.as_str()) {
                return Err(CliError::usage(format!("unknown generator `{name}` (known: {})", GENERATORS.join(", "))));
            }
            cmd_generate(&name, n, seed, &out, model_out.as_deref())
        }
        Command::Fit {
            data,
            out,
            arch,
            seed,
            epochs,
            patience,
            batch_size,
            learning_rate,
            momentum,
            validation_fraction,
        } => {
            let cfg = FitConfig {
                hidden: parse_arch(&arch)?,
                epochs,
                validation_fraction,
                patience,
                batch_size,
                learning_rate,
                momentum,
                seed,
            };
            let s = cmd_fit(&data, &out, &cfg)?;
            let h = &s.history;
            let arch: Vec<String> = s.arch.iter().map(|w| w.to_string()).collect();
            println!(
                "arch {} | epochs {} (best {}) | train deviance {:.6} | validation deviance {:.6}",
                arch.join(","),
                h.epochs_run,
                h.best_epoch,
                h.train_deviance[h.best_epoch - 1],
                h.best_validation()
            );
            Ok(())
        }
        Command::Analyze { common, layers } => analyze(&common, layers),
        Command::Layers { common, k } => analyze(&common, k),
        Command::Plot {
            report,
            figure,
            out_dir,
            layer,
            levels,
            feature,
        } => {
            let doc = ReportDocument::load(&report)?;
            let feature = match feature {
                None => None,
                Some(f) => Some(
                    doc.feature_names
                        .iter()
                        .position(|n| *n == f)
                        .or_else(|| f.parse().ok())
                        .ok_or_else(|| CliError::usage(format!("unknown feature `{f}`")))?,
                ),
            };
            let opts = PlotOptions {
                layer,
                slice_levels: levels,
                feature,
            };
            let rendered = render(&doc, figure, &opts)?;
            let (csv, svg) = write_figure(&out_dir, figure, &rendered)?;
            println!("{} {}", csv.display(), svg.display());
            Ok(())
        }
    }
}
