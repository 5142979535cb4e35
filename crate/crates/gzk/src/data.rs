//! Dataset ingestion, preprocessing, and synthetic instance generators.
//!
//! The on-disk layout follows the in-memory one: a CSV file holds a `d x n`
//! matrix whose rows are coordinates and whose columns are points. An
//! optional label row (selected by index) is split off into `y`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::sample_sphere;
use crate::kernel::ZERO_NORM_EPS;

/// A loaded or generated dataset: points are columns of `x`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Option<Array1<f64>>,
    pub source: String,
    pub preprocessing: Preprocessing,
}

impl Dataset {
    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }
}

/// Input transformation applied right after ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preprocessing {
    None,
    /// Scale every point (column) to unit Euclidean norm.
    UnitNorm,
    /// Per coordinate (row): subtract the mean and divide by the population
    /// standard deviation. Constant coordinates are centered only.
    Standardize,
    /// Multiply every entry by a fixed positive factor; this is how other
    /// kernel bandwidths map onto the unit-bandwidth Gaussian model.
    Scale(f64),
}

impl Preprocessing {
    pub fn apply(&self, x: &mut Array2<f64>) -> Result<()> {
        match *self {
            Preprocessing::None => {}
            Preprocessing::UnitNorm => {
                for (j, mut col) in x.columns_mut().into_iter().enumerate() {
                    let norm = col.dot(&col).sqrt();
                    if norm < ZERO_NORM_EPS {
                        return Err(Error::Domain(format!(
                            "point {j} has zero norm and cannot be unit-normalized"
                        )));
                    }
                    col.mapv_inplace(|v| v / norm);
                }
            }
            Preprocessing::Standardize => {
                let n = x.ncols();
                if n == 0 {
                    return Err(Error::Domain("empty dataset".into()));
                }
                for mut row in x.rows_mut() {
                    let mean = row.sum() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / n as f64;
                    let std = var.sqrt();
                    if std > 0.0 {
                        row.mapv_inplace(|v| (v - mean) / std);
                    } else {
                        row.mapv_inplace(|v| v - mean);
                    }
                }
            }
            Preprocessing::Scale(gamma) => {
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(Error::Config(format!(
                        "scale factor must be positive and finite, got {gamma}"
                    )));
                }
                x.mapv_inplace(|v| v * gamma);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "preprocessing produced a non-finite entry".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preprocessing::None => write!(f, "none"),
            Preprocessing::UnitNorm => write!(f, "unit-norm"),
            Preprocessing::Standardize => write!(f, "standardize"),
            Preprocessing::Scale(g) => write!(f, "scale:{g}"),
        }
    }
}

impl FromStr for Preprocessing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preprocessing::None),
            "unit-norm" => Ok(Preprocessing::UnitNorm),
            "standardize" => Ok(Preprocessing::Standardize),
            other => {
                if let Some(g) = other.strip_prefix("scale:") {
                    let gamma: f64 = g.parse().map_err(|_| {
                        Error::Config(format!("invalid scale factor '{g}'"))
                    })?;
                    Ok(Preprocessing::Scale(gamma))
                } else {
                    Err(Error::Config(format!(
                        "unknown preprocessing '{other}' (expected none, unit-norm, \
                         standardize, or scale:GAMMA)"
                    )))
                }
            }
        }
    }
}

/// Options for [`ingest_csv`].
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Skip the first line (column headers).
    pub has_header: bool,
    /// Zero-based index of the coordinate row holding labels.
    pub label_row: Option<usize>,
    pub preprocessing: Option<Preprocessing>,
}

/// Parse a CSV file whose rows are coordinates and whose columns are points.
/// Ragged rows, non-numeric cells, and non-finite values are reported with
/// the 1-based file line they occur on.
pub fn ingest_csv(path: &Path, options: &IngestOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows.len() + 1);
        let mut parsed = Vec::with_capacity(record.len());
        for cell in record.iter() {
            let value: f64 = cell.parse().map_err(|_| Error::Ingestion {
                line,
                msg: format!("non-numeric cell '{cell}'"),
            })?;
            if !value.is_finite() {
                return Err(Error::Ingestion {
                    line,
                    msg: format!("non-finite value '{cell}'"),
                });
            }
            parsed.push(value);
        }
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Ingestion {
                    line,
                    msg: format!("row has {} fields, expected {w}", parsed.len()),
                });
            }
            _ => {}
        }
        rows.push(parsed);
    }
    let n = width.unwrap_or(0);
    if rows.is_empty() || n == 0 {
        return Err(Error::Ingestion {
            line: 1,
            msg: "empty dataset".into(),
        });
    }

    let y = match options.label_row {
        Some(idx) => {
            if idx >= rows.len() {
                return Err(Error::Config(format!(
                    "label row {idx} out of range: file has {} coordinate rows",
                    rows.len()
                )));
            }
            Some(Array1::from_vec(rows.remove(idx)))
        }
        None => None,
    };
    if rows.is_empty() {
        return Err(Error::Ingestion {
            line: 1,
            msg: "no coordinate rows left after extracting labels".into(),
        });
    }

    let d = rows.len();
    let mut x = Array2::<f64>::zeros((d, n));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let preprocessing = options.preprocessing.unwrap_or(Preprocessing::None);
    preprocessing.apply(&mut x)?;
    Ok(Dataset {
        x,
        y,
        source: path.display().to_string(),
        preprocessing,
    })
}

/// Built-in synthetic instances so experiments need no external files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthetic {
    /// Two tight clusters on the unit sphere with ground-truth labels;
    /// the separation is roughly ten times the in-cluster spread.
    Blobs,
    /// Uniform samples on the unit sphere, no labels.
    SphereUniform,
    /// Points in the unit ball with a smooth noisy regression target.
    SmoothRegression,
}

impl FromStr for Synthetic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Synthetic::Blobs),
            "sphere-uniform" => Ok(Synthetic::SphereUniform),
            "smooth-regression" => Ok(Synthetic::SmoothRegression),
            other => Err(Error::Config(format!(
                "unknown synthetic dataset '{other}' (expected blobs, \
                 sphere-uniform, or smooth-regression)"
            ))),
        }
    }
}

impl fmt::Display for Synthetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Synthetic::Blobs => write!(f, "blobs"),
            Synthetic::SphereUniform => write!(f, "sphere-uniform"),
            Synthetic::SmoothRegression => write!(f, "smooth-regression"),
        }
    }
}

pub fn generate(kind: Synthetic, d: usize, n: usize, seed: u64) -> Result<Dataset> {
    if d < 1 || n < 1 {
        return Err(Error::Config(format!(
            "synthetic dataset needs d >= 1 and n >= 1, got d = {d}, n = {n}"
        )));
    }
    let (x, y) = match kind {
        Synthetic::SphereUniform => {
            let x = sample_sphere(d, n, seed)?.t().to_owned();
            (x, None)
        }
        Synthetic::Blobs => {
            if d < 2 {
                return Err(Error::Config(
                    "blobs needs d >= 2 to place two distinct centers".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = Array2::<f64>::zeros((d, n));
            let mut labels = Array1::<f64>::zeros(n);
            let first = n.div_ceil(2);
            let sigma = 0.1;
            for j in 0..n {
                let blob = usize::from(j >= first);
                let mut v = vec![0.0f64; d];
                if blob == 0 {
                    v[0] = 1.0;
                } else {
                    v[0] = -0.5;
                    v[1] = 3.0f64.sqrt() / 2.0;
                }
                for vi in v.iter_mut() {
                    *vi += sigma * rng.sample::<f64, _>(StandardNormal);
                }
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                for i in 0..d {
                    x[(i, j)] = v[i] / norm;
                }
                labels[j] = blob as f64;
            }
            (x, Some(labels))
        }
        Synthetic::SmoothRegression => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = vec![0.0f64; d];
            loop {
                for ai in a.iter_mut() {
                    *ai = rng.sample(StandardNormal);
                }
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > ZERO_NORM_EPS {
                    for ai in a.iter_mut() {
                        *ai /= norm;
                    }
                    break;
                }
            }
            let mut x = Array2::<f64>::zeros((d, n));
            let mut y = Array1::<f64>::zeros(n);
            for j in 0..n {
                let mut v = vec![0.0f64; d];
                loop {
                    for vi in v.iter_mut() {
                        *vi = rng.sample(StandardNormal);
                    }
                    let norm = v.iter().map(|b| b * b).sum::<f64>().sqrt();
                    if norm > ZERO_NORM_EPS {
                        let radius: f64 =
                            rng.random_range(0.0f64..1.0).powf(1.0 / d as f64);
                        for vi in v.iter_mut() {
                            *vi *= radius / norm;
                        }
                        break;
                    }
                }
                for i in 0..d {
                    x[(i, j)] = v[i];
                }
                let inner: f64 = a.iter().zip(&v).map(|(ai, vi)| ai * vi).sum();
                let cross = 0.3 * v[0] * v[d - 1];
                let noise: f64 = rng.sample(StandardNormal);
                y[j] = (std::f64::consts::PI * inner).sin() + cross + 0.1 * noise;
            }
            (x, Some(y))
        }
    };
    Ok(Dataset {
        x,
        y,
        source: format!("synthetic:{kind}:d={d}:n={n}:seed={seed}"),
        preprocessing: Preprocessing::None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn ingest_with_label_row() {
        let f = write_temp("1,0\n0,1\n0,0\n");
        let options = IngestOptions {
            label_row: Some(2),
            ..Default::default()
        };
        let ds = ingest_csv(f.path(), &options).unwrap();
        assert_eq!(ds.x.dim(), (2, 2));
        assert_eq!(ds.x[(0, 0)], 1.0);
        assert_eq!(ds.x[(1, 1)], 1.0);
        assert_eq!(ds.x[(0, 1)], 0.0);
        let y = ds.y.unwrap();
        assert_eq!(y.len(), 2);
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn ingest_reports_line_numbers() {
        let f = write_temp("1,2,3\n4,5\n");
        let err = ingest_csv(f.path(), &IngestOptions::default()).unwrap_err();
        match err {
            Error::Ingestion { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("2 fields"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }

        let f = write_temp("1,2\n3,oops\n");
        let err = ingest_csv(f.path(), &IngestOptions::default()).unwrap_err();
        match err {
            Error::Ingestion { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("oops"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }

        let f = write_temp("1,2\nNaN,3\n");
        let err = ingest_csv(f.path(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn ingest_skips_header_but_counts_its_line() {
        let f = write_temp("p1,p2\n1,2\nbad,4\n");
        let options = IngestOptions {
            has_header: true,
            ..Default::default()
        };
        let err = ingest_csv(f.path(), &options).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: 3, .. }), "{err:?}");

        let f = write_temp("p1,p2\n1,2\n3,4\n");
        let ds = ingest_csv(f.path(), &options).unwrap();
        assert_eq!(ds.x.dim(), (2, 2));
        assert_eq!(ds.x[(1, 0)], 3.0);
    }

    #[test]
    fn ingest_rejects_empty_and_bad_label_row() {
        let f = write_temp("");
        assert!(ingest_csv(f.path(), &IngestOptions::default()).is_err());

        let f = write_temp("1,2\n");
        let options = IngestOptions {
            label_row: Some(5),
            ..Default::default()
        };
        assert!(ingest_csv(f.path(), &options).is_err());
        // label row is the only row: no coordinates remain
        let options = IngestOptions {
            label_row: Some(0),
            ..Default::default()
        };
        assert!(ingest_csv(f.path(), &options).is_err());
    }

    #[test]
    fn unit_norm_preprocessing() {
        let mut x = ndarray::array![[3.0], [4.0]];
        Preprocessing::UnitNorm.apply(&mut x).unwrap();
        assert!((x[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((x[(1, 0)] - 0.8).abs() < 1e-12);

        let mut zero = ndarray::array![[0.0], [0.0]];
        assert!(Preprocessing::UnitNorm.apply(&mut zero).is_err());
    }

    #[test]
    fn standardize_preprocessing() {
        // coordinate row (1, 3): mean 2, population std 1
        let mut x = ndarray::array![[1.0, 3.0], [5.0, 5.0]];
        Preprocessing::Standardize.apply(&mut x).unwrap();
        assert!((x[(0, 0)] + 1.0).abs() < 1e-12);
        assert!((x[(0, 1)] - 1.0).abs() < 1e-12);
        // constant row is centered only
        assert_eq!(x[(1, 0)], 0.0);
        assert_eq!(x[(1, 1)], 0.0);
    }

    #[test]
    fn scale_preprocessing_and_parsing() {
        let mut x = ndarray::array![[2.0, -4.0]];
        Preprocessing::Scale(0.5).apply(&mut x).unwrap();
        assert_eq!(x[(0, 0)], 1.0);
        assert_eq!(x[(0, 1)], -2.0);
        assert!(Preprocessing::Scale(-1.0).apply(&mut x).is_err());

        assert_eq!(
            "scale:0.25".parse::<Preprocessing>().unwrap(),
            Preprocessing::Scale(0.25)
        );
        assert_eq!("none".parse::<Preprocessing>().unwrap(), Preprocessing::None);
        assert!("sideways".parse::<Preprocessing>().is_err());
        assert!("scale:abc".parse::<Preprocessing>().is_err());
    }

    #[test]
    fn blobs_are_separated_and_labeled() {
        let ds = generate(Synthetic::Blobs, 3, 40, 7).unwrap();
        assert_eq!(ds.x.dim(), (3, 40));
        let y = ds.y.as_ref().unwrap();
        assert_eq!(y.iter().filter(|&&v| v == 0.0).count(), 20);
        assert_eq!(y.iter().filter(|&&v| v == 1.0).count(), 20);
        for j in 0..40 {
            let col = ds.x.column(j);
            assert!((col.dot(&col) - 1.0).abs() < 1e-12);
        }
        // every point is closer to its own center than to the other
        let c0 = [1.0, 0.0, 0.0];
        let c1 = [-0.5, 3.0f64.sqrt() / 2.0, 0.0];
        for j in 0..40 {
            let col = ds.x.column(j);
            let d0: f64 = (0..3).map(|i| (col[i] - c0[i]).powi(2)).sum();
            let d1: f64 = (0..3).map(|i| (col[i] - c1[i]).powi(2)).sum();
            if y[j] == 0.0 {
                assert!(d0 < d1);
            } else {
                assert!(d1 < d0);
            }
        }
    }

    #[test]
    fn sphere_uniform_is_unit_norm() {
        let ds = generate(Synthetic::SphereUniform, 5, 30, 3).unwrap();
        assert!(ds.y.is_none());
        for j in 0..30 {
            let col = ds.x.column(j);
            assert!((col.dot(&col) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_regression_properties() {
        let ds = generate(Synthetic::SmoothRegression, 3, 50, 11).unwrap();
        let y = ds.y.as_ref().unwrap();
        assert_eq!(y.len(), 50);
        assert!(y.iter().all(|v| v.is_finite()));
        for j in 0..50 {
            let col = ds.x.column(j);
            assert!(col.dot(&col).sqrt() <= 1.0 + 1e-12);
        }
        // deterministic
        let again = generate(Synthetic::SmoothRegression, 3, 50, 11).unwrap();
        assert_eq!(ds.x, again.x);
        assert_eq!(*y, again.y.unwrap());
        // different seed, different draw
        let other = generate(Synthetic::SmoothRegression, 3, 50, 12).unwrap();
        assert_ne!(ds.x, other.x);
    }

    #[test]
    fn synthetic_parsing() {
        assert_eq!("blobs".parse::<Synthetic>().unwrap(), Synthetic::Blobs);
        assert_eq!(
            "sphere-uniform".parse::<Synthetic>().unwrap(),
            Synthetic::SphereUniform
        );
        assert_eq!(
            "smooth-regression".parse::<Synthetic>().unwrap(),
            Synthetic::SmoothRegression
        );
        assert!("bananas".parse::<Synthetic>().is_err());
        assert!(generate(Synthetic::Blobs, 1, 10, 0).is_err());
        assert!(generate(Synthetic::SphereUniform, 0, 10, 0).is_err());
    }
}
