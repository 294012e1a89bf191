//! Figure series as CSV and a plain static SVG rendering of each.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use macq::engine::AttributionReport;
use macq::reference::ReferenceSearchState;

use crate::document::ReportDocument;
use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Contributions,
    AttributionHeatmap,
    VerticalSlices,
    IndividualScatter,
    InteractionCurves,
    RefoptTrace,
    PermImportance,
    FeatureVsOmega,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Self::Contributions => "contributions",
            Self::AttributionHeatmap => "attribution-heatmap",
            Self::VerticalSlices => "vertical-slices",
            Self::IndividualScatter => "individual-scatter",
            Self::InteractionCurves => "interaction-curves",
            Self::RefoptTrace => "refopt-trace",
            Self::PermImportance => "perm-importance",
            Self::FeatureVsOmega => "feature-vs-omega",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub layer: Option<usize>,
    pub slice_levels: Vec<f64>,
    pub feature: Option<usize>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            layer: None,
            slice_levels: vec![0.2, 0.4, 0.6, 0.8],
            feature: None,
        }
    }
}

pub struct Rendered {
    pub csv: String,
    pub svg: String,
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Fixed size canvas with a linear data frame.
struct Canvas {
    out: String,
    x: (f64, f64),
    y: (f64, f64),
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn bounds<'a>(vals: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

impl Canvas {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut c = Self::new_bare(title, x, y);
        c.axes(xlabel, ylabel, None, None);
        c
    }

    fn new_bare(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let x = padded(x.0, x.1);
        let y = padded(y.0, y.1);
        let mut out = String::new();
        writeln!(
            out,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>
<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + (W - LEFT - RIGHT) / 2.0,
            esc(title)
        )
        .unwrap();
        Self { out, x, y }
    }

    /// Like `new`, with one axis labelled by category (positions 0, 1, ...).
    fn categorical(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64), xcats: Option<&[String]>, ycats: Option<&[String]>) -> Self {
        let mut c = Self::new_bare(title, x, y);
        c.axes(xlabel, ylabel, xcats, ycats);
        c
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str, xcats: Option<&[String]>, ycats: Option<&[String]>) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        writeln!(self.out, r##"<rect x="{x0}" y="{y0}" width="{:.1}" height="{:.1}" fill="none" stroke="#333"/>"##, x1 - x0, y1 - y0).unwrap();
        let xt: Vec<(f64, String)> = match xcats {
            Some(c) => c.iter().enumerate().map(|(i, n)| (i as f64, n.clone())).collect(),
            None => (0..=4).map(|i| self.x.0 + i as f64 / 4.0 * (self.x.1 - self.x.0)).map(|v| (v, tick(v))).collect(),
        };
        let yt: Vec<(f64, String)> = match ycats {
            Some(c) => c.iter().enumerate().map(|(i, n)| (i as f64, n.clone())).collect(),
            None => (0..=4).map(|i| self.y.0 + i as f64 / 4.0 * (self.y.1 - self.y.0)).map(|v| (v, tick(v))).collect(),
        };
        for (v, label) in xt {
            let px = self.px(v);
            writeln!(
                self.out,
                r##"<line x1="{px:.1}" y1="{y1}" x2="{px:.1}" y2="{:.1}" stroke="#333"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
                y1 + 4.0,
                y1 + 16.0,
                esc(&label)
            )
            .unwrap();
        }
        for (v, label) in yt {
            let py = self.py(v);
            writeln!(
                self.out,
                r##"<line x1="{:.1}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                py + 4.0,
                esc(&label)
            )
            .unwrap();
        }
        writeln!(self.out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(xlabel)).unwrap();
        writeln!(
            self.out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(ylabel)
        )
        .unwrap();
    }

    fn polyline(&mut self, xs: &[f64], ys: &[f64], stroke: &str, dashed: bool) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="5,4""# } else { "" };
        writeln!(self.out, r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5"{dash} points="{}"/>"#, pts.join(" ")).unwrap();
    }

    fn points(&mut self, xs: &[f64], ys: &[f64], fill: &str, r: f64) {
        for (&x, &y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                writeln!(self.out, r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{fill}" fill-opacity="0.6"/>"#, self.px(x), self.py(y)).unwrap();
            }
        }
    }

    fn rect(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, fill: &str) {
        let (a, b) = (self.px(x0), self.px(x1));
        let (c, d) = (self.py(y0), self.py(y1));
        writeln!(
            self.out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            a.min(b),
            c.min(d),
            (b - a).abs(),
            (d - c).abs()
        )
        .unwrap();
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (label, c)) in entries.iter().enumerate() {
            let y = TOP + 10.0 + 16.0 * i as f64;
            let x = W - RIGHT + 12.0;
            writeln!(
                self.out,
                r##"<rect x="{x}" y="{:.1}" width="12" height="10" fill="{c}" stroke="#999"/><text x="{:.1}" y="{:.1}">{}</text>"##,
                y - 9.0,
                x + 18.0,
                y,
                esc(label)
            )
            .unwrap();
        }
    }

    fn note(&mut self, text: &str) {
        writeln!(self.out, r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="#555">{}</text>"##, LEFT + (W - LEFT - RIGHT) / 2.0, H / 2.0, esc(text)).unwrap();
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn csv_row(cells: &[String]) -> String {
    let mut s = cells.join(",");
    s.push('\n');
    s
}

fn csv_name(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Diverging blue-white-red scale for `v / vmax` in `[-1, 1]`.
fn diverging(v: f64, vmax: f64) -> String {
    let t = if vmax > 0.0 { (v / vmax).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn selected<'a>(doc: &'a ReportDocument, opts: &PlotOptions) -> CliResult<(&'a AttributionReport<f64>, Option<&'a ReferenceSearchState<f64>>, Vec<String>)> {
    match opts.layer {
        None => Ok((&doc.report, doc.reference_search.as_ref(), doc.feature_names.clone())),
        Some(k) => {
            let l = doc
                .layers
                .get(&k)
                .ok_or_else(|| CliError::usage(format!("report has no layer {k} (available: {:?})", doc.layers.keys().collect::<Vec<_>>())))?;
            let names = if k == 0 {
                doc.feature_names.clone()
            } else {
                (1..=l.width).map(|i| format!("z{i}")).collect()
            };
            Ok((&l.report, l.reference_search.as_ref(), names))
        }
    }
}

fn contributions(r: &AttributionReport<f64>) -> Rendered {
    let mut csv = csv_row(&["level,quantile,c1,c2,c22".into()]);
    for l in 0..r.n_levels() {
        csv += &csv_row(&[r.levels[l], r.quantiles[l], r.c1[l], r.c2[l], r.c22[l]].map(|v| v.to_string()));
    }
    let (lo, hi) = bounds(r.quantiles.iter().chain(&r.c1).chain(&r.c2).chain(&r.c22).chain([&r.reference_value]));
    let xr = bounds(&r.levels);
    let mut c = Canvas::new("Contributions by quantile level", "quantile level", "canonical value", xr, (lo, hi));
    c.polyline(&[xr.0, xr.1], &[r.reference_value; 2], "#7f7f7f", true);
    c.polyline(&r.levels, &r.c1, color(0), false);
    c.polyline(&r.levels, &r.c2, color(2), false);
    c.polyline(&r.levels, &r.c22, color(1), false);
    c.points(&r.levels, &r.quantiles, "#000000", 2.0);
    c.legend(&[
        ("C1".into(), color(0)),
        ("C2".into(), color(2)),
        ("C22".into(), color(1)),
        ("quantile".into(), "#000000"),
        ("reference".into(), "#7f7f7f"),
    ]);
    Rendered { csv, svg: c.finish() }
}

fn heatmap(r: &AttributionReport<f64>, names: &[String]) -> Rendered {
    let mut csv = csv_row(&["level,feature,first_order".into()]);
    for l in 0..r.n_levels() {
        for (j, n) in names.iter().enumerate() {
            csv += &csv_row(&[r.levels[l].to_string(), csv_name(n), r.first_order[[l, j]].to_string()]);
        }
    }
    let q = names.len();
    let vmax = r.first_order.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lv = &r.levels;
    let half = if lv.len() > 1 { 0.5 * (lv[1] - lv[0]) } else { 0.005 };
    let rows: Vec<String> = names.iter().rev().cloned().collect();
    let mut c = Canvas::categorical("First order attributions", "quantile level", "", (lv[0] - half, lv[lv.len() - 1] + half), (-0.5, q as f64 - 0.5), None, Some(&rows));
    for l in 0..lv.len() {
        for j in 0..q {
            let row = (q - 1 - j) as f64;
            c.rect(lv[l] - half, lv[l] + half, row - 0.5, row + 0.5, &diverging(r.first_order[[l, j]], vmax));
        }
    }
    let legend: Vec<(String, String)> = [1.0, 0.5, 0.0, -0.5, -1.0].iter().map(|&t| (tick(t * vmax), diverging(t * vmax, vmax))).collect();
    let legend: Vec<(String, &str)> = legend.iter().map(|(l, c)| (l.clone(), c.as_str())).collect();
    c.legend(&legend);
    Rendered { csv, svg: c.finish() }
}

fn slices(r: &AttributionReport<f64>, names: &[String], at: &[f64]) -> CliResult<Rendered> {
    let idx = at
        .iter()
        .map(|&a| {
            r.levels
                .iter()
                .position(|&l| (l - a).abs() < 1e-9)
                .ok_or_else(|| CliError::usage(format!("level {a} is not on the report grid")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut csv = csv_row(&["level,feature,first_order".into()]);
    for &l in &idx {
        for (j, n) in names.iter().enumerate() {
            csv += &csv_row(&[r.levels[l].to_string(), csv_name(n), r.first_order[[l, j]].to_string()]);
        }
    }
    let q = names.len();
    let (lo, hi) = bounds(idx.iter().flat_map(|&l| r.first_order.row(l).to_vec()).collect::<Vec<_>>().iter());
    let mut c = Canvas::categorical("First order attributions at selected levels", "", "attribution", (-0.5, q as f64 - 0.5), (lo.min(0.0), hi.max(0.0)), Some(names), None);
    let width = 0.8 / idx.len() as f64;
    for (s, &l) in idx.iter().enumerate() {
        for j in 0..q {
            let x0 = j as f64 - 0.4 + s as f64 * width;
            c.rect(x0, x0 + width, 0.0, r.first_order[[l, j]], color(s));
        }
    }
    let legend: Vec<(String, &str)> = idx.iter().enumerate().map(|(s, &l)| (format!("level {}", r.levels[l]), color(s))).collect();
    c.legend(&legend);
    Ok(Rendered { csv, svg: c.finish() })
}

fn interactions(r: &AttributionReport<f64>, names: &[String]) -> Rendered {
    let mut csv = csv_row(&["level,feature_j,feature_k,second_order".into()]);
    for p in &r.interactions {
        for l in 0..r.n_levels() {
            csv += &csv_row(&[r.levels[l].to_string(), csv_name(&names[p.j]), csv_name(&names[p.k]), r.second_order[[l, p.j, p.k]].to_string()]);
        }
    }
    let vals: Vec<f64> = r.interactions.iter().flat_map(|p| (0..r.n_levels()).map(move |l| r.second_order[[l, p.j, p.k]])).collect();
    let (lo, hi) = bounds(&vals);
    let title = format!("Interaction terms above {}", r.screening_threshold);
    let mut c = Canvas::new(&title, "quantile level", "T_jk", bounds(&r.levels), (lo.min(0.0), hi.max(0.0)));
    if r.interactions.is_empty() {
        c.note("no pair exceeds the screening threshold");
    }
    let mut legend = Vec::new();
    for (i, p) in r.interactions.iter().enumerate() {
        let ys: Vec<f64> = (0..r.n_levels()).map(|l| r.second_order[[l, p.j, p.k]]).collect();
        c.polyline(&r.levels, &ys, color(i), false);
        legend.push((format!("{} x {}", names[p.j], names[p.k]), color(i)));
    }
    c.legend(&legend);
    Rendered { csv, svg: c.finish() }
}

fn refopt(state: &ReferenceSearchState<f64>) -> Rendered {
    let best = state.best_trace();
    let mut csv = csv_row(&["iteration,objective,best_objective,gradient_norm,step".into()]);
    for (e, b) in state.trace.iter().zip(&best) {
        csv += &csv_row(&[e.iteration.to_string(), e.objective.to_string(), b.to_string(), e.gradient_norm.to_string(), e.step.to_string()]);
    }
    let it: Vec<f64> = state.trace.iter().map(|e| e.iteration as f64).collect();
    let obj: Vec<f64> = state.trace.iter().map(|e| e.objective).collect();
    let mut c = Canvas::new("Reference point search", "iteration", "objective G", bounds(&it), bounds(obj.iter().chain(&best)));
    c.polyline(&it, &obj, color(0), false);
    c.polyline(&it, &best, color(1), true);
    c.legend(&[("G".into(), color(0)), ("best seen".into(), color(1))]);
    Rendered { csv, svg: c.finish() }
}

fn importance(doc: &ReportDocument) -> CliResult<Rendered> {
    let p = doc
        .baselines
        .as_ref()
        .and_then(|b| b.permutation.as_ref())
        .ok_or_else(|| CliError::usage("report has no permutation importance (run analyze with baselines on data with a response)"))?;
    let mut order: Vec<usize> = (0..p.importance.len()).collect();
    order.sort_by(|&a, &b| p.importance[b].total_cmp(&p.importance[a]).then(a.cmp(&b)));
    let mut csv = csv_row(&["feature,importance,relative".into()]);
    for &j in &order {
        csv += &csv_row(&[csv_name(&doc.feature_names[j]), p.importance[j].to_string(), (p.importance[j] / p.baseline_deviance).to_string()]);
    }
    let m = order.len();
    let (lo, hi) = bounds(&p.importance);
    let rows: Vec<String> = order.iter().rev().map(|&j| doc.feature_names[j].clone()).collect();
    let mut c = Canvas::categorical("Permutation importance", "deviance increase", "", (lo.min(0.0), hi.max(0.0)), (-0.5, m as f64 - 0.5), None, Some(&rows));
    for (r, &j) in order.iter().enumerate() {
        let y = (m - 1 - r) as f64;
        c.rect(0.0, p.importance[j], y - 0.4, y + 0.4, color(0));
    }
    Ok(Rendered { csv, svg: c.finish() })
}

fn individual(doc: &ReportDocument, opts: &PlotOptions, against_value: bool) -> CliResult<Rendered> {
    let ind = doc.individual.as_ref().ok_or_else(|| CliError::usage("report has no individual contributions"))?;
    let feats: Vec<usize> = match opts.feature {
        Some(j) if j >= ind.features.len() => return Err(CliError::usage(format!("feature {j} out of range"))),
        Some(j) => vec![j],
        None => (0..ind.features.len()).collect(),
    };
    let header = if against_value { "feature,value,omega" } else { "feature,rank,omega" };
    let mut csv = csv_row(&[header.into()]);
    let mut xs_all = Vec::new();
    let mut ys_all = Vec::new();
    for &j in &feats {
        let f = &ind.features[j];
        let xs = if against_value { &f.values } else { &ind.ranks };
        for (x, w) in xs.iter().zip(&f.omega) {
            csv += &csv_row(&[csv_name(&doc.feature_names[f.feature]), x.to_string(), w.to_string()]);
        }
        xs_all.extend_from_slice(xs);
        ys_all.extend_from_slice(&f.omega);
    }
    let (title, xl) = if against_value {
        ("Individual contributions against feature value", "feature value (model scale)")
    } else {
        ("Individual contributions by output rank", "rank of canonical output")
    };
    let mut c = Canvas::new(title, xl, "omega", bounds(&xs_all), bounds(&ys_all));
    let mut legend = Vec::new();
    for (i, &j) in feats.iter().enumerate() {
        let f = &ind.features[j];
        let xs = if against_value { &f.values } else { &ind.ranks };
        c.points(xs, &f.omega, color(i), 1.5);
        if !against_value {
            c.polyline(&doc.report.levels, &f.band_mean, color(i), false);
        }
        legend.push((doc.feature_names[f.feature].clone(), color(i)));
    }
    c.legend(&legend);
    Ok(Rendered { csv, svg: c.finish() })
}

pub fn render(doc: &ReportDocument, figure: Figure, opts: &PlotOptions) -> CliResult<Rendered> {
    let (report, search, names) = selected(doc, opts)?;
    match figure {
        Figure::Contributions => Ok(contributions(report)),
        Figure::AttributionHeatmap => Ok(heatmap(report, &names)),
        Figure::VerticalSlices => slices(report, &names, &opts.slice_levels),
        Figure::InteractionCurves => Ok(interactions(report, &names)),
        Figure::RefoptTrace => search
            .map(refopt)
            .ok_or_else(|| CliError::usage("report has no reference search trace (it was run with --no-refopt)")),
        Figure::PermImportance => importance(doc),
        Figure::IndividualScatter => individual(doc, opts, false),
        Figure::FeatureVsOmega => individual(doc, opts, true),
    }
}

/// Writes `<figure>.csv` and `<figure>.svg` into `dir`.
pub fn write_figure(dir: &Path, figure: Figure, rendered: &Rendered) -> CliResult<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv = dir.join(format!("{}.csv", figure.name()));
    let svg = dir.join(format!("{}.svg", figure.name()));
    std::fs::write(&csv, &rendered.csv).map_err(|e| io_err(&csv, e))?;
    std::fs::write(&svg, &rendered.svg).map_err(|e| io_err(&svg, e))?;
    Ok((csv, svg))
}
