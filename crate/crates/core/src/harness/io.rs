//! CSV ingestion of external moments and CSV/JSON emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectral::CovarianceModel;

/// Moments loaded from disk, with `v` rescaled to unit norm.
#[derive(Debug, Clone)]
pub struct ExternalModel {
    pub mu: DVector<f64>,
    pub cov: CovarianceModel,
    pub v: DVector<f64>,
    /// `‖v‖` as read; `None` when v defaulted to the minimum-eigenvalue direction.
    pub trigger_norm: Option<f64>,
}

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Headerless comma-separated numbers, one matrix row per line.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let x: f64 = s
                    .parse()
                    .map_err(|_| parse_err(path, format!("entry ({}, {}) = {s:?} is not a number", i + 1, j + 1)))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::NonFinite(format!("{} entry ({}, {})", path.display(), i + 1, j + 1)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    format!("row {} has {} entries, expected {}", i + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "no data"));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

/// A single row or a single column of numbers.
pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.nrows() == 1 || m.ncols() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(parse_err(path, format!("expected a vector, got a {}x{} matrix", m.nrows(), m.ncols())))
    }
}

/// Reads `(μ, C, v)`, validates shapes and symmetry, adds the `1e-4·tr(C)/p`
/// jitter and normalizes `v`. Without a trigger file, `v` is the
/// minimum-eigenvalue eigenvector of the jittered `C`.
pub fn load_external_model(mean_path: &Path, cov_path: &Path, trigger_path: Option<&Path>) -> Result<ExternalModel> {
    let mu = read_vector_csv(mean_path)?;
    let c = read_matrix_csv(cov_path)?;
    let p = mu.len();
    if c.nrows() != p || c.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: if c.nrows() != p { c.nrows() } else { c.ncols() },
            context: "covariance size vs mean length",
        });
    }
    let cov = CovarianceModel::dense_with_jitter(c)?;
    let (v, trigger_norm) = match trigger_path {
        Some(tp) => {
            let raw = read_vector_csv(tp)?;
            if raw.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: raw.len(),
                    context: "trigger length vs mean length",
                });
            }
            let norm = raw.norm();
            if !(norm > 0.0) {
                return Err(parse_err(tp, "trigger vector is zero"));
            }
            (raw / norm, Some(norm))
        }
        None => (cov.min_eigenvector(), None),
    };
    Ok(ExternalModel { mu, cov, v, trigger_norm })
}

pub const CSV_COLUMNS: [&str; 16] = [
    "alpha",
    "phi",
    "kappa",
    "rep",
    "h_mu_theory",
    "h_v_theory",
    "sigma_sq",
    "zeta",
    "clean_acc_theory",
    "asr_theory",
    "h_mu_emp",
    "h_v_emp",
    "clean_acc_emp",
    "asr_emp",
    "converged",
    "iters",
];

/// Row label in the `rep` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepLabel {
    Index(usize),
    Mean,
    StdErr,
}

/// Theory-side values of one row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TheoryCols {
    pub h_mu: f64,
    pub h_v: f64,
    pub sigma_sq: f64,
    pub zeta: f64,
    pub clean_acc: f64,
    pub asr: f64,
}

/// Empirical values of one row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmpCols {
    pub h_mu: f64,
    pub h_v: f64,
    pub clean_acc: f64,
    pub asr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub alpha: f64,
    pub phi: f64,
    pub kappa: f64,
    pub rep: RepLabel,
    pub theory: Option<TheoryCols>,
    pub emp: Option<EmpCols>,
    pub converged: bool,
    pub iters: usize,
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl Row {
    pub fn fields(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let t = self.theory;
        let e = self.emp;
        vec![
            fmt_f64(self.alpha),
            fmt_f64(self.phi),
            fmt_f64(self.kappa),
            match self.rep {
                RepLabel::Index(i) => i.to_string(),
                RepLabel::Mean => "mean".into(),
                RepLabel::StdErr => "se".into(),
            },
            opt(t.map(|t| t.h_mu)),
            opt(t.map(|t| t.h_v)),
            opt(t.map(|t| t.sigma_sq)),
            opt(t.map(|t| t.zeta)),
            opt(t.map(|t| t.clean_acc)),
            opt(t.map(|t| t.asr)),
            opt(e.map(|e| e.h_mu)),
            opt(e.map(|e| e.h_v)),
            opt(e.map(|e| e.clean_acc)),
            opt(e.map(|e| e.asr)),
            self.converged.to_string(),
            self.iters.to_string(),
        ]
    }
}

pub fn write_rows_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Generic table writer for auxiliary CSVs.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Tracks files written during a run and removes them unless committed.
#[derive(Debug, Default)]
pub struct OutputGuard {
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn track(&mut self, path: PathBuf) -> &Path {
        self.files.push(path);
        self.files.last().map(PathBuf::as_path).unwrap_or(Path::new(""))
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for f in &self.files {
                let _ = std::fs::remove_file(f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn identity_model() {
        let d = tempfile::tempdir().unwrap();
        let m = write(d.path(), "m.csv", "1,0\n");
        let c = write(d.path(), "c.csv", "1,0\n0,1\n");
        let v = write(d.path(), "v.csv", "0\n1\n");
        let ext = load_external_model(&m, &c, Some(&v)).unwrap();
        assert_eq!(ext.mu.as_slice(), &[1.0, 0.0]);
        assert_eq!(ext.v.as_slice(), &[0.0, 1.0]);
        assert_eq!(ext.trigger_norm, Some(1.0));
        let cm = ext.cov.to_dense_matrix();
        assert_relative_eq!(cm[(0, 0)], 1.0 + 1e-4, epsilon = 1e-15);
        assert_eq!(cm[(0, 1)], 0.0);
    }

    #[test]
    fn asymmetric_rejected() {
        let d = tempfile::tempdir().unwrap();
        let m = write(d.path(), "m.csv", "1,0\n");
        let c = write(d.path(), "c.csv", "1,0.5\n0.4,1\n");
        assert!(matches!(load_external_model(&m, &c, None), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn trigger_rescaled_and_default() {
        let d = tempfile::tempdir().unwrap();
        let m = write(d.path(), "m.csv", "1,0,0\n");
        let c = write(d.path(), "c.csv", "2,0,0\n0,3,0\n0,0,0.5\n");
        let v = write(d.path(), "v.csv", "0,2,0\n");
        let ext = load_external_model(&m, &c, Some(&v)).unwrap();
        assert_eq!(ext.trigger_norm, Some(2.0));
        assert_relative_eq!(ext.v.norm(), 1.0, epsilon = 1e-15);
        let ext = load_external_model(&m, &c, None).unwrap();
        assert_eq!(ext.trigger_norm, None);
        assert_relative_eq!(ext.v[2].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn malformed_inputs() {
        let d = tempfile::tempdir().unwrap();
        let m = write(d.path(), "m.csv", "1,0\n");
        let c3 = write(d.path(), "c3.csv", "1,0,0\n0,1,0\n0,0,1\n");
        assert!(matches!(load_external_model(&m, &c3, None), Err(Error::DimensionMismatch { .. })));
        let bad = write(d.path(), "bad.csv", "1,x\n0,1\n");
        assert!(matches!(read_matrix_csv(&bad), Err(Error::Parse { .. })));
        let nan = write(d.path(), "nan.csv", "1,NaN\n0,1\n");
        assert!(matches!(read_matrix_csv(&nan), Err(Error::NonFinite(_))));
        let ragged = write(d.path(), "r.csv", "1,0\n1\n");
        assert!(read_matrix_csv(&ragged).is_err());
    }

    #[test]
    fn row_format() {
        let r = Row {
            alpha: 0.5,
            phi: 0.05,
            kappa: 0.5,
            rep: RepLabel::Mean,
            theory: Some(TheoryCols::default()),
            emp: None,
            converged: true,
            iters: 3,
        };
        let f = r.fields();
        assert_eq!(f.len(), CSV_COLUMNS.len());
        assert_eq!(f[0], "5.0000000000000000e-1");
        assert_eq!(f[3], "mean");
        assert!(f[10].is_empty() && f[13].is_empty());
        assert_eq!(f[14], "true");
    }

    #[test]
    fn guard_removes_uncommitted() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.csv");
        {
            let mut g = OutputGuard::default();
            std::fs::write(g.track(p.clone()), "a").unwrap();
        }
        assert!(!p.exists());
        let mut g = OutputGuard::default();
        std::fs::write(g.track(p.clone()), "a").unwrap();
        g.commit();
        assert!(p.exists());
    }
}
