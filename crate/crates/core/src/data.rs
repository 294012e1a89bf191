//! Datasets, z-score standardization and CSV ingestion.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-column affine map between original units and z-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Standardization<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Standardization<T> {
    pub fn identity(q: usize) -> Self {
        Self {
            mean: vec![T::zero(); q],
            std: vec![T::one(); q],
        }
    }

    /// Column means and population (`1/n`) standard deviations of `raw`.
    pub fn fit(raw: ArrayView2<'_, T>, names: &[String]) -> Result<Self> {
        let n = raw.nrows();
        if n == 0 {
            return Err(Error::arg("cannot standardize an empty sample"));
        }
        let nf = T::from_usize_lossy(n);
        let mut mean = Vec::with_capacity(raw.ncols());
        let mut std = Vec::with_capacity(raw.ncols());
        for (j, col) in raw.axis_iter(Axis(1)).enumerate() {
            let m = col.iter().copied().sum::<T>() / nf;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / nf;
            let s = var.sqrt();
            let scale = col.iter().fold(T::zero(), |acc, v| acc.max(v.abs())).max(T::one());
            if !(s > T::epsilon() * scale) {
                let column = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
                return Err(Error::ConstantColumn { column });
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn forward_point(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    /// Original-unit coordinates of a standardized point (e.g. a reference point).
    pub fn inverse_point(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect()
    }

    pub fn forward(&self, raw: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if raw.ncols() != self.dim() {
            return Err(Error::InputShape {
                expected: self.dim(),
                found: raw.ncols(),
            });
        }
        let mut out = raw.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn inverse(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if z.ncols() != self.dim() {
            return Err(Error::InputShape {
                expected: self.dim(),
                found: z.ncols(),
            });
        }
        let mut out = z.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }
}

/// z-scores every column of `raw`; fails on a constant column.
pub fn standardize<T: Scalar>(
    raw: ArrayView2<'_, T>,
    names: &[String],
) -> Result<(Array2<T>, Standardization<T>)> {
    let st = Standardization::fit(raw, names)?;
    let z = st.forward(raw)?;
    Ok((z, st))
}

/// Feature matrix in original units and on the standardized scale, plus a response in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Dataset<T> {
    pub names: Vec<String>,
    pub raw: Array2<T>,
    pub features: Array2<T>,
    pub response: Vec<T>,
    pub standardization: Standardization<T>,
}

impl<T: Scalar> Dataset<T> {
    /// Standardizes `raw` with its own column moments.
    pub fn new(names: Vec<String>, raw: Array2<T>, response: Vec<T>) -> Result<Self> {
        let (features, standardization) = standardize(raw.view(), &names)?;
        Self::assemble(names, raw, features, response, standardization)
    }

    /// Applies a previously fitted standardization (e.g. from a model file).
    pub fn with_standardization(
        names: Vec<String>,
        raw: Array2<T>,
        response: Vec<T>,
        standardization: Standardization<T>,
    ) -> Result<Self> {
        let features = standardization.forward(raw.view())?;
        Self::assemble(names, raw, features, response, standardization)
    }

    /// Uses the raw values directly as model inputs.
    pub fn unscaled(names: Vec<String>, raw: Array2<T>, response: Vec<T>) -> Result<Self> {
        let q = raw.ncols();
        Self::with_standardization(names, raw, response, Standardization::identity(q))
    }

    fn assemble(
        names: Vec<String>,
        raw: Array2<T>,
        features: Array2<T>,
        response: Vec<T>,
        standardization: Standardization<T>,
    ) -> Result<Self> {
        if names.len() != raw.ncols() {
            return Err(Error::InputShape {
                expected: raw.ncols(),
                found: names.len(),
            });
        }
        if !response.is_empty() && response.len() != raw.nrows() {
            return Err(Error::InputShape {
                expected: raw.nrows(),
                found: response.len(),
            });
        }
        if let Some(i) = response
            .iter()
            .position(|&y| !(y >= T::zero() && y <= T::one()))
        {
            return Err(Error::Validation {
                row: i + 1,
                reason: "response outside [0, 1]".into(),
            });
        }
        Ok(Self {
            names,
            raw,
            features,
            response,
            standardization,
        })
    }

    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    pub fn q(&self) -> usize {
        self.raw.ncols()
    }

    pub fn has_response(&self) -> bool {
        !self.response.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Keeps the rows listed in `idx`, preserving the standardization.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            raw: self.raw.select(Axis(0), idx),
            features: self.features.select(Axis(0), idx),
            response: if self.response.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.response[i]).collect()
            },
            standardization: self.standardization.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// CSV

/// The eleven explanatory variables of the hourly bike-sharing table.
pub const BIKE_FEATURES: [&str; 11] = [
    "year",
    "month",
    "hour",
    "weekday",
    "holiday",
    "workingday",
    "weather",
    "temp",
    "temp_feel",
    "humidity",
    "windspeed",
];

/// Alternative header spellings, UCI `hour.csv` layout.
fn bike_aliases(name: &str) -> &'static [&'static str] {
    match name {
        "year" => &["year", "yr"],
        "month" => &["month", "mnth"],
        "hour" => &["hour", "hr"],
        "weekday" => &["weekday"],
        "holiday" => &["holiday"],
        "workingday" => &["workingday"],
        "weather" => &["weather", "weathersit"],
        "temp" => &["temp"],
        "temp_feel" => &["temp_feel", "atemp"],
        "humidity" => &["humidity", "hum"],
        "windspeed" => &["windspeed"],
        "casual" => &["casual"],
        "count" => &["count", "cnt"],
        "date" => &["date", "dteday"],
        _ => &[],
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Parse {
            row: line,
            column: String::new(),
            reason: format!("{other:?}"),
        },
    }
}

fn parse_cell<T: Scalar>(record: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<T> {
    let cell = record.get(col).unwrap_or("").trim();
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(T::lit)
        .ok_or_else(|| Error::Parse {
            row: line,
            column: name.to_string(),
            reason: format!("`{cell}` is not a finite number"),
        })
}

fn check_date(cell: &str) -> bool {
    let parts: Vec<&str> = cell.trim().split(['-', '/']).collect();
    parts.len() == 3 && parts.iter().all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()))
}

fn open_csv(path: &Path) -> Result<(csv::Reader<std::fs::File>, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    Ok((reader, headers))
}

fn locate(headers: &[String], name: &str) -> Option<usize> {
    let aliases = bike_aliases(name);
    headers
        .iter()
        .position(|h| aliases.iter().any(|a| h.eq_ignore_ascii_case(a)))
}

/// True when the header carries the bike-sharing response columns.
pub fn is_bike_layout(path: &Path) -> Result<bool> {
    let (_, headers) = open_csv(path)?;
    Ok(locate(&headers, "casual").is_some() && locate(&headers, "count").is_some())
}

/// Reads the bike-sharing table: eleven features, response `casual / count`.
pub fn load_bike_csv<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let (mut reader, headers) = open_csv(path)?;
    let mut cols = Vec::with_capacity(BIKE_FEATURES.len());
    for name in BIKE_FEATURES {
        let c = locate(&headers, name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}` in {}", path.display())))?;
        cols.push(c);
    }
    let casual = locate(&headers, "casual")
        .ok_or_else(|| Error::Schema(format!("missing column `casual` in {}", path.display())))?;
    let count = locate(&headers, "count")
        .ok_or_else(|| Error::Schema(format!("missing column `count` in {}", path.display())))?;
    let date = locate(&headers, "date");

    let q = BIKE_FEATURES.len();
    let mut values: Vec<T> = Vec::new();
    let mut response = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if let Some(dc) = date {
            let cell = record.get(dc).unwrap_or("");
            if !check_date(cell) {
                return Err(Error::Parse {
                    row: line,
                    column: headers[dc].clone(),
                    reason: format!("`{cell}` is not a date"),
                });
            }
        }
        for (&c, name) in cols.iter().zip(BIKE_FEATURES) {
            values.push(parse_cell(&record, c, name, line)?);
        }
        let cas: T = parse_cell(&record, casual, "casual", line)?;
        let cnt: T = parse_cell(&record, count, "count", line)?;
        if cnt < T::one() {
            return Err(Error::Validation {
                row: line,
                reason: "count must be at least 1".into(),
            });
        }
        if cas < T::zero() || cas > cnt {
            return Err(Error::Validation {
                row: line,
                reason: "casual must lie in [0, count]".into(),
            });
        }
        response.push(cas / cnt);
    }
    let n = response.len();
    if n == 0 {
        return Err(Error::Schema(format!("{} has no data rows", path.display())));
    }
    let raw = Array2::from_shape_vec((n, q), values).expect("row-major shape");
    Dataset::new(BIKE_FEATURES.iter().map(|s| s.to_string()).collect(), raw, response)
}

/// Reads a numeric table whose columns are all features except the optional
/// response column. The returned dataset is not yet standardized.
pub fn load_feature_csv<T: Scalar>(
    path: &Path,
    response_column: Option<&str>,
) -> Result<(Vec<String>, Array2<T>, Vec<T>)> {
    let (mut reader, headers) = open_csv(path)?;
    let resp = match response_column {
        Some(name) => headers.iter().position(|h| h == name),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != resp).collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema(format!("{} has no feature columns", path.display())));
    }
    let mut values = Vec::new();
    let mut response = Vec::new();
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for &c in &feature_cols {
            values.push(parse_cell(&record, c, &headers[c], line)?);
        }
        if let Some(rc) = resp {
            response.push(parse_cell(&record, rc, &headers[rc], line)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Schema(format!("{} has no data rows", path.display())));
    }
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let raw = Array2::from_shape_vec((n, feature_cols.len()), values).expect("row-major shape");
    Ok((names, raw, response))
}

/// Writes a feature table (plus optional response `y`) in the layout
/// `load_feature_csv` reads.
pub fn write_feature_csv<T: Scalar>(
    path: &Path,
    names: &[String],
    raw: ArrayView2<'_, T>,
    response: &[T],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&names.join(","));
    if !response.is_empty() {
        out.push_str(",y");
    }
    out.push('\n');
    for (i, row) in raw.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{}", v.to_f64_lossy())).collect();
        out.push_str(&cells.join(","));
        if !response.is_empty() {
            out.push_str(&format!(",{}", response[i].to_f64_lossy()));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(q: usize) -> Vec<String> {
        (0..q).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn two_point_column_maps_to_unit_scores() {
        let raw = array![[0.0], [2.0]];
        let (z, st) = standardize(raw.view(), &names(1)).unwrap();
        assert_eq!(z, array![[-1.0], [1.0]]);
        assert_eq!(st.mean, vec![1.0]);
        assert_eq!(st.std, vec![1.0]);
    }

    #[test]
    fn round_trip_restores_original_units() {
        let raw: Array2<f64> = array![[1.5, -3.0], [2.25, 10.0], [-7.0, 0.5], [0.0, 4.0]];
        let (z, st) = standardize(raw.view(), &names(2)).unwrap();
        let back = st.inverse(z.view()).unwrap();
        for (a, b) in back.iter().zip(raw.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for col in z.axis_iter(Axis(1)) {
            let m = col.sum() / 4.0;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-8);
        }
        let a = vec![0.3, -0.7];
        let there = st.forward_point(&st.inverse_point(&a));
        assert!(there.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn constant_column_is_named() {
        let raw = array![[1.0, 5.0], [2.0, 5.0]];
        match standardize(raw.view(), &["a".into(), "b".into()]) {
            Err(Error::ConstantColumn { column }) => assert_eq!(column, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn response_range_is_enforced() {
        let raw = array![[0.0], [1.0]];
        assert!(Dataset::unscaled(names(1), raw, vec![0.5, 1.5]).is_err());
    }

    const HEADER: &str = "instant,dteday,season,yr,mnth,hr,holiday,weekday,workingday,weathersit,temp,atemp,hum,windspeed,casual,registered,cnt";

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("hour.csv");
        std::fs::write(&p, format!("{HEADER}\n{body}")).unwrap();
        p
    }

    #[test]
    fn bike_rows_parse_and_response_is_casual_share() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "1,2011-01-01,1,0,1,0,0,6,0,1,0.24,0.2879,0.81,0,3,13,16\n\
             2,2011-06-01,2,0,6,1,1,3,1,2,0.22,0.2727,0.8,0.2,8,32,40\n\
             3,2012-01-02,1,1,1,2,0,1,1,3,0.3,0.3,0.7,0.1,5,27,32\n",
        );
        assert!(is_bike_layout(&p).unwrap());
        let d: Dataset<f64> = load_bike_csv(&p).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.q(), 11);
        assert_eq!(d.response, vec![3.0 / 16.0, 0.2, 5.0 / 32.0]);
        assert_eq!(d.raw[[1, 2]], 1.0);
    }

    #[test]
    fn zero_count_row_is_rejected_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "1,2011-01-01,1,0,1,0,0,6,0,1,0.24,0.2879,0.81,0,3,13,16\n\
             2,2011-01-01,1,0,1,1,0,6,0,1,0.22,0.2727,0.8,0,0,0,0\n",
        );
        match load_bike_csv::<f64>(&p) {
            Err(Error::Validation { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "yr,mnth\n0,1\n").unwrap();
        assert!(matches!(load_bike_csv::<f64>(&p), Err(Error::Schema(_))));

        let p = write(
            dir.path(),
            "1,2011-01-01,1,0,1,0,0,6,0,1,warm,0.2879,0.81,0,3,13,16\n",
        );
        match load_bike_csv::<f64>(&p) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "temp");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feature_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let raw = array![[1.0, 2.0], [3.0, -4.5]];
        write_feature_csv(&p, &names(2), raw.view(), &[0.25, 1.0]).unwrap();
        let (n, back, y): (_, Array2<f64>, _) = load_feature_csv(&p, Some("y")).unwrap();
        assert_eq!(n, names(2));
        assert_eq!(back, raw);
        assert_eq!(y, vec![0.25, 1.0]);
    }
}
