//! Real-data workflow: load a numeric panel, impute missing cells, and run
//! the factor estimators over rolling windows.
//!
//! Panels arrive as time-by-variable CSVs (T rows, N named columns, optional
//! leading date column). The estimators consume the transposed orientation
//! (variables as the p dimension, window length as n), matching a p > n
//! regime where the spectrum has length n.

use crate::error::{EfmError, Result};
use crate::estimators::{estimate_factors, onatski_estimate, NoFlagPolicy};
use crate::magnify::{detect_spurious, MagnificationConfig};
use crate::model::PanelMatrix;
use crate::seeding::child_seed;
use crate::spectral::{gap_ratios, gram_matrix, spectrum};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A loaded panel with missing-value markers (NaN) still in place.
#[derive(Debug, Clone)]
pub struct PanelSource {
    pub path: PathBuf,
    pub variable_names: Vec<String>,
    /// Row labels from a leading non-numeric column, when present.
    pub dates: Option<Vec<String>>,
    /// T x N values, missing cells as NaN.
    pub data: Array2<f64>,
    pub missing_count: usize,
}

impl PanelSource {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }
}

/// Options for [`load_panel`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Cell contents treated as missing (besides empty cells).
    pub missing_sentinels: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            missing_sentinels: vec!["NA".into(), "NaN".into(), "nan".into(), ".".into()],
        }
    }
}

/// Parse a header-led CSV into a panel. The first column becomes row labels
/// when its first data cell is non-numeric; empty cells and configured
/// sentinels become missing markers. Ragged rows, duplicate headers, and
/// unparseable cells are errors with line numbers.
pub fn load_panel(path: &Path, options: &LoadOptions) -> Result<PanelSource> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(EfmError::Parse { line: 1, msg: "empty header row".into() });
    }
    {
        let mut seen = std::collections::HashSet::new();
        for h in &headers {
            if !seen.insert(h) {
                return Err(EfmError::Parse { line: 1, msg: format!("duplicate header `{h}`") });
            }
        }
    }

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| EfmError::Parse { line: idx + 2, msg: e.to_string() })?;
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(EfmError::Dimension("panel has a header but no data rows".into()));
    }

    let is_missing = |cell: &str| -> bool {
        let c = cell.trim();
        c.is_empty() || options.missing_sentinels.iter().any(|s| s == c)
    };
    let first_cell = rows[0].get(0).unwrap_or("").trim();
    let date_column = !first_cell.is_empty() && first_cell.parse::<f64>().is_err()
        && !is_missing(first_cell);

    let var_start = usize::from(date_column);
    let variable_names: Vec<String> = headers[var_start..].to_vec();
    let n_vars = variable_names.len();
    let t_rows = rows.len();
    if n_vars < 3 {
        return Err(EfmError::Dimension(format!("need at least 3 variables, got {n_vars}")));
    }
    if t_rows < 12 {
        return Err(EfmError::Dimension(format!("need at least 12 rows, got {t_rows}")));
    }

    let mut data = Array2::<f64>::zeros((t_rows, n_vars));
    let mut dates = date_column.then(Vec::new);
    let mut missing_count = 0usize;
    for (r, rec) in rows.iter().enumerate() {
        let line = r + 2; // header is line 1
        if let Some(d) = dates.as_mut() {
            d.push(rec.get(0).unwrap_or("").trim().to_string());
        }
        for (c, name) in variable_names.iter().enumerate() {
            let raw = rec.get(var_start + c).unwrap_or("");
            if is_missing(raw) {
                data[[r, c]] = f64::NAN;
                missing_count += 1;
            } else {
                data[[r, c]] = raw.trim().parse::<f64>().map_err(|_| EfmError::Parse {
                    line,
                    msg: format!("non-numeric cell `{raw}` in column `{name}`"),
                })?;
            }
        }
    }
    Ok(PanelSource {
        path: path.to_path_buf(),
        variable_names,
        dates,
        data,
        missing_count,
    })
}

/// Missing-value treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    /// Replace each missing cell by the mean of its column's observed values.
    ColumnMean,
    /// Drop every row containing a missing value.
    Drop,
}

/// Produce a complete T' x N matrix from a panel with missing markers.
pub fn impute_missing(src: &PanelSource, method: ImputeMethod) -> Result<Array2<f64>> {
    match method {
        ImputeMethod::ColumnMean => {
            let mut out = src.data.clone();
            for (c, name) in src.variable_names.iter().enumerate() {
                let col = src.data.column(c);
                let mut sum = 0.0;
                let mut count = 0usize;
                for &v in col.iter() {
                    if v.is_finite() {
                        sum += v;
                        count += 1;
                    }
                }
                if count == 0 {
                    return Err(EfmError::Data(format!(
                        "variable `{name}` has no observed values to impute from"
                    )));
                }
                let mean = sum / count as f64;
                for v in out.column_mut(c).iter_mut() {
                    if !v.is_finite() {
                        *v = mean;
                    }
                }
            }
            Ok(out)
        }
        ImputeMethod::Drop => {
            let keep: Vec<usize> = (0..src.rows())
                .filter(|&r| src.data.row(r).iter().all(|v| v.is_finite()))
                .collect();
            if keep.is_empty() {
                return Err(EfmError::Data("every row contains a missing value".into()));
            }
            let mut out = Array2::zeros((keep.len(), src.cols()));
            for (new_r, &old_r) in keep.iter().enumerate() {
                out.row_mut(new_r).assign(&src.data.row(old_r));
            }
            Ok(out)
        }
    }
}

/// Optional stationarity conveniences applied column-wise before analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnTransform {
    #[default]
    None,
    /// x_t -> x_t - x_{t-1} (drops the first row).
    FirstDifference,
    /// x_t -> log x_t - log x_{t-1}; requires positive values.
    LogDifference,
}

pub fn apply_transform(matrix: &Array2<f64>, transform: ColumnTransform) -> Result<Array2<f64>> {
    match transform {
        ColumnTransform::None => Ok(matrix.clone()),
        ColumnTransform::FirstDifference => {
            let (t, n) = matrix.dim();
            if t < 2 {
                return Err(EfmError::Dimension("differencing needs at least 2 rows".into()));
            }
            let mut out = Array2::zeros((t - 1, n));
            for r in 1..t {
                for c in 0..n {
                    out[[r - 1, c]] = matrix[[r, c]] - matrix[[r - 1, c]];
                }
            }
            Ok(out)
        }
        ColumnTransform::LogDifference => {
            if matrix.iter().any(|&v| !(v > 0.0)) {
                return Err(EfmError::Domain("log-difference needs positive values".into()));
            }
            apply_transform(&matrix.mapv(f64::ln), ColumnTransform::FirstDifference)
        }
    }
}

/// Per-window estimation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRecord {
    /// Row range [start, end) in the input matrix.
    pub start: usize,
    pub end: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Leading gap ratios G_1..G_10 (or fewer on short windows).
    pub gap_ratios: Vec<f64>,
    /// Fluctuation statistics T_1..T_o.
    pub t_stats: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub r_on: usize,
    pub r_ma: usize,
}

/// Rolling-window settings.
#[derive(Debug, Clone)]
pub struct RollingConfig {
    pub window: usize,
    pub step: usize,
    pub magnification: MagnificationConfig,
    /// Baseline threshold; real panels conventionally use 9.
    pub nu: Option<f64>,
    /// Center and unit-scale each variable within each window.
    pub standardize: bool,
    pub master_seed: u64,
}

/// Run the baseline and the two-round pipeline on each window of a complete
/// T x N matrix. Windows tile [0, T) at the given step; each is transposed
/// to variables-by-time before analysis.
pub fn rolling_estimate(
    matrix: &Array2<f64>,
    labels: Option<&[String]>,
    cfg: &RollingConfig,
) -> Result<Vec<WindowRecord>> {
    let (t_rows, n_vars) = matrix.dim();
    if cfg.window > t_rows {
        return Err(EfmError::Dimension(format!(
            "window {} exceeds panel length {t_rows}",
            cfg.window
        )));
    }
    if cfg.step == 0 {
        return Err(EfmError::Dimension("step must be >= 1".into()));
    }
    if cfg.window < 8 {
        return Err(EfmError::Dimension("window must be >= 8 for detection".into()));
    }
    let starts: Vec<usize> = (0..)
        .map(|k| k * cfg.step)
        .take_while(|s| s + cfg.window <= t_rows)
        .collect();
    let records: Result<Vec<WindowRecord>> = starts
        .par_iter()
        .map(|&start| {
            let end = start + cfg.window;
            run_window(matrix, labels, cfg, start, end, n_vars)
        })
        .collect();
    records
}

fn run_window(
    matrix: &Array2<f64>,
    labels: Option<&[String]>,
    cfg: &RollingConfig,
    start: usize,
    end: usize,
    n_vars: usize,
) -> Result<WindowRecord> {
    let n = end - start;
    // transpose to p x n (variables by time) and optionally standardize each
    // variable within the window
    let mut values = Array2::<f64>::zeros((n_vars, n));
    for v in 0..n_vars {
        for (j, t) in (start..end).enumerate() {
            values[[v, j]] = matrix[[t, v]];
        }
    }
    if cfg.standardize {
        for v in 0..n_vars {
            let mut row = values.row_mut(v);
            let mean = row.sum() / n as f64;
            row.mapv_inplace(|x| x - mean);
            let sd = (row.dot(&row) / n as f64).sqrt();
            if sd > 1e-12 {
                row.mapv_inplace(|x| x / sd);
            } else {
                log::warn!("variable {v} is constant in window [{start}, {end}); left centered");
            }
        }
    }
    let panel = PanelMatrix {
        values,
        provenance: crate::model::Provenance::Loaded { source: "window".into() },
    };
    let cache = gram_matrix(&panel)?;
    let spec = spectrum(&cache)?;
    let o_gap = 10.min(spec.len().saturating_sub(2));
    let gaps = gap_ratios(&spec, o_gap)?;
    let mut mag = cfg.magnification;
    mag.seed = child_seed(cfg.master_seed, "window", start as u64);
    // keep o within what the window supports
    mag.leading = mag.leading.min(spec.len().saturating_sub(2));
    let on = onatski_estimate(&spec, mag.leading, n, cfg.nu)?;
    let report = detect_spurious(&cache, &mag)?;
    let ma = estimate_factors(&cache, &mag, cfg.nu, NoFlagPolicy::default())?;
    let label = labels.map(|ls| {
        let last = end.min(ls.len());
        format!("{}..{}", ls.get(start).cloned().unwrap_or_default(), ls.get(last - 1).cloned().unwrap_or_default())
    });
    Ok(WindowRecord {
        start,
        end,
        label,
        gap_ratios: gaps,
        t_stats: report.per_index.iter().map(|r| r.t_stat).collect(),
        thresholds: report.per_index.iter().map(|r| r.threshold).collect(),
        r_on: on.r_hat,
        r_ma: ma.r_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn synthetic_csv(t: usize, n: usize) -> String {
        let mut s = String::from("date");
        for c in 0..n {
            s.push_str(&format!(",v{c}"));
        }
        s.push('\n');
        for r in 0..t {
            s.push_str(&format!("2000-{:02}", r + 1));
            for c in 0..n {
                s.push_str(&format!(",{}", ((r * 31 + c * 17) % 13) as f64 * 0.5 - 3.0));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn load_parses_dates_and_missing() {
        let mut content = synthetic_csv(12, 3);
        // blank one cell
        content = content.replacen(",-3,", ",,", 1);
        let f = write_csv(&content);
        let src = load_panel(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(src.cols(), 3);
        assert_eq!(src.rows(), 12);
        assert!(src.dates.is_some());
        assert_eq!(src.missing_count, 1);
        assert_eq!(src.data.iter().filter(|v| v.is_nan()).count(), 1);
    }

    #[test]
    fn load_rejects_bad_shapes() {
        let f = write_csv("a,b,c\n");
        assert!(load_panel(f.path(), &LoadOptions::default()).is_err());

        let f = write_csv("a,a,b\n1,2,3\n");
        match load_panel(f.path(), &LoadOptions::default()) {
            Err(EfmError::Parse { line: 1, .. }) => {}
            other => panic!("expected duplicate-header parse error, got {other:?}"),
        }

        let mut content = synthetic_csv(12, 3);
        content.push_str("2001-01,1,2\n"); // ragged row
        let f = write_csv(&content);
        assert!(load_panel(f.path(), &LoadOptions::default()).is_err());

        let content = synthetic_csv(12, 3).replacen(",-3,", ",oops,", 1);
        let f = write_csv(&content);
        match load_panel(f.path(), &LoadOptions::default()) {
            Err(EfmError::Parse { line, msg }) => {
                assert!(line >= 2, "line {line}");
                assert!(msg.contains("oops"));
            }
            other => panic!("expected cell parse error, got {other:?}"),
        }
    }

    #[test]
    fn impute_column_mean_and_drop() {
        let content = "v0,v1,v2\n1,4,7\n,5,8\n3,6,\n1,5,8\n2,5,8\n3,5,8\n1,5,8\n2,5,8\n3,5,8\n1,5,8\n2,5,8\n3,5,8\n";
        let f = write_csv(content);
        let src = load_panel(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(src.missing_count, 2);

        let filled = impute_missing(&src, ImputeMethod::ColumnMean).unwrap();
        // column 0 observed: 1,3,1,2,3,1,2,3,1,2,3 -> mean 2
        assert!((filled[[1, 0]] - 2.0).abs() < 1e-12);
        assert!(filled.iter().all(|v| v.is_finite()));

        let dropped = impute_missing(&src, ImputeMethod::Drop).unwrap();
        assert_eq!(dropped.nrows(), 10);

        // imputation is idempotent
        let again = {
            let src2 = PanelSource {
                path: src.path.clone(),
                variable_names: src.variable_names.clone(),
                dates: None,
                data: filled.clone(),
                missing_count: 0,
            };
            impute_missing(&src2, ImputeMethod::ColumnMean).unwrap()
        };
        assert_eq!(filled, again);
    }

    #[test]
    fn impute_all_missing_column_errors() {
        let mut content = String::from("v0,v1,v2\n");
        for _ in 0..12 {
            content.push_str("1,,3\n");
        }
        let f = write_csv(&content);
        let src = load_panel(f.path(), &LoadOptions::default()).unwrap();
        match impute_missing(&src, ImputeMethod::ColumnMean) {
            Err(EfmError::Data(msg)) => assert!(msg.contains("v1")),
            other => panic!("expected data error naming v1, got {other:?}"),
        }
    }

    #[test]
    fn transforms() {
        let m = ndarray::array![[1.0, 10.0], [2.0, 20.0], [4.0, 40.0]];
        let d = apply_transform(&m, ColumnTransform::FirstDifference).unwrap();
        assert_eq!(d.nrows(), 2);
        assert_eq!(d[[0, 0]], 1.0);
        assert_eq!(d[[1, 1]], 20.0);
        let ld = apply_transform(&m, ColumnTransform::LogDifference).unwrap();
        assert!((ld[[1, 0]] - (4.0f64 / 2.0).ln()).abs() < 1e-12);
        let neg = ndarray::array![[1.0, -1.0], [2.0, 3.0]];
        assert!(apply_transform(&neg, ColumnTransform::LogDifference).is_err());
    }

    fn demo_matrix(t: usize, n_vars: usize, seed: u64) -> Array2<f64> {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = Array2::zeros((t, n_vars));
        // two common factors plus noise
        for row in 0..t {
            let f1: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            let f2: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            for v in 0..n_vars {
                let l1 = ((v * 7) % 5) as f64 / 2.0 - 1.0;
                let l2 = ((v * 3) % 4) as f64 / 2.0 - 0.75;
                m[[row, v]] =
                    3.0 * l1 * f1 + 2.0 * l2 * f2 + 0.5 * (rng.gen::<f64>() * 2.0 - 1.0);
            }
        }
        m
    }

    #[test]
    fn window_partition_counts() {
        let m = demo_matrix(96, 20, 1);
        let cfg = RollingConfig {
            window: 24,
            step: 24,
            magnification: MagnificationConfig {
                replications: 12,
                leading: 5,
                ..Default::default()
            },
            nu: Some(9.0),
            standardize: true,
            master_seed: 3,
        };
        let recs = rolling_estimate(&m, None, &cfg).unwrap();
        assert_eq!(recs.len(), 4); // floor(96/24) non-overlapping windows
        for (k, r) in recs.iter().enumerate() {
            assert_eq!(r.start, 24 * k);
            assert_eq!(r.end, 24 * (k + 1));
        }
        // full-cover window
        let cfg_full = RollingConfig { window: 96, step: 7, ..cfg };
        let recs = rolling_estimate(&m, None, &cfg_full).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(rolling_estimate(&m, None, &RollingConfig { window: 97, ..cfg_full }).is_err());
    }

    #[test]
    fn standardized_windows_are_scale_free() {
        let m = demo_matrix(48, 16, 2);
        let scaled = m.mapv(|v| 100.0 * v);
        let cfg = RollingConfig {
            window: 24,
            step: 24,
            magnification: MagnificationConfig {
                replications: 10,
                leading: 4,
                ..Default::default()
            },
            nu: Some(9.0),
            standardize: true,
            master_seed: 9,
        };
        let a = rolling_estimate(&m, None, &cfg).unwrap();
        let b = rolling_estimate(&scaled, None, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (gx, gy) in x.gap_ratios.iter().zip(&y.gap_ratios) {
                if gx.is_finite() {
                    assert!((gx - gy).abs() < 1e-8 * gx.abs().max(1.0));
                }
            }
            assert_eq!(x.r_on, y.r_on);
        }
    }
}
