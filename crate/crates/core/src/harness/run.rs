//! Sweep execution for every mode.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{CovarianceConfig, EvalConfig, Mode, SweepConfig};
use super::io::{
    fmt_f64, load_external_model, write_json, write_rows_csv, write_table_csv, EmpCols, OutputGuard, RepLabel, Row,
    TheoryCols,
};
use crate::erm::{run_erm_rep, ErmRunResult, EvalMode};
use crate::error::{Error, Result};
use crate::fixed_point::{solve_self_consistent, theory_predictions, FixedPointState, SolverConfig};
use crate::loss::LossModel;
use crate::metrics::{attack_success, clean_accuracy, variance_decomposition, VarianceDecomposition};
use crate::population::{minimize_population_eigen, PopulationParams};
use crate::spectral::{CovarianceModel, ProblemSpec};

/// Covariance, mean and trigger shared by every sweep point.
#[derive(Debug, Clone)]
pub struct Model {
    pub cov: Arc<CovarianceModel>,
    pub mu: DVector<f64>,
    pub v: DVector<f64>,
    pub trigger_norm: Option<f64>,
}

impl Model {
    pub fn spec(&self, alpha: f64, phi: f64, lambda: f64, n: usize) -> Result<ProblemSpec> {
        ProblemSpec::new(self.cov.clone(), self.mu.clone(), self.v.clone(), alpha, phi, lambda, n)
    }
}

/// `s_v_sq` replaces the eigen-pair trigger variance when given.
pub fn build_model(cfg: &SweepConfig, s_v_sq: Option<f64>) -> Result<Model> {
    let structured = |cov: CovarianceModel| -> Result<Model> {
        let cov = Arc::new(cov);
        let spec = ProblemSpec::structured(cov.clone(), cfg.norm_mu, 0.0, 0.0, 1.0, 1)?;
        Ok(Model {
            cov,
            mu: spec.mu().clone(),
            v: spec.v().clone(),
            trigger_norm: None,
        })
    };
    let p = cfg.p.unwrap_or(0);
    match &cfg.covariance {
        CovarianceConfig::Isotropic { scale } => structured(CovarianceModel::isotropic(*scale, p)?),
        CovarianceConfig::EigenPair {
            s_mu_sq,
            s_v_sq: sv,
            s_rest_sq,
        } => structured(CovarianceModel::eigen_pair(*s_mu_sq, s_v_sq.unwrap_or(*sv), *s_rest_sq, p)?),
        CovarianceConfig::Spectrum {
            eigenvalues,
            mu_index,
            v_index,
        } => structured(CovarianceModel::spectrum(eigenvalues.clone(), *mu_index, *v_index)?),
        CovarianceConfig::Dense { mean, cov, trigger } => {
            let ext = load_external_model(mean, cov, trigger.as_deref())?;
            Ok(Model {
                cov: Arc::new(ext.cov),
                mu: ext.mu,
                v: ext.v,
                trigger_norm: ext.trigger_norm,
            })
        }
    }
}

/// Full validation: static checks, file loading and one spec per `(φ, n)`.
/// Every failure is reported as a configuration error.
pub fn validate(cfg: &SweepConfig) -> Result<Model> {
    let as_cfg = |e: Error| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    };
    cfg.check_static().map_err(as_cfg)?;
    let model = build_model(cfg, None).map_err(as_cfg)?;
    if let Some(grid) = &cfg.s_v_sq_grid {
        for &s in grid {
            build_model(cfg, Some(s)).map_err(as_cfg)?;
        }
    }
    for phi in cfg.phi.values() {
        for n in cfg.n.values() {
            model.spec(0.0, phi, cfg.lambda.value(), n).map_err(as_cfg)?;
        }
    }
    Ok(model)
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_v_sq: Option<f64>,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub files: Vec<OutputFile>,
    pub manifest: PathBuf,
    /// Sweep points with a non-converged solver or a failed computation.
    pub flagged_points: usize,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    config: &'a SweepConfig,
    threads: usize,
    wall_time_s: f64,
    trigger_norm: Option<f64>,
    files: &'a [OutputFile],
    flagged_points: usize,
    warnings: &'a [String],
}

/// One `(φ, n, α)` sweep point.
#[derive(Debug, Clone, Copy)]
struct Point {
    phi: f64,
    n: usize,
    alpha: f64,
}

fn points(cfg: &SweepConfig) -> Vec<Point> {
    let mut out = Vec::new();
    for phi in cfg.phi.values() {
        for n in cfg.n.values() {
            for alpha in cfg.alpha_grid.values() {
                out.push(Point { phi, n, alpha });
            }
        }
    }
    out
}

/// Rows and warnings of one sweep point, in output order.
struct PointOutput {
    rows: Vec<Row>,
    decomposition: Option<VarianceDecomposition>,
    flagged: bool,
    warnings: Vec<String>,
}

struct TheoryOutcome {
    cols: Option<TheoryCols>,
    state: Option<FixedPointState>,
    converged: bool,
    iters: usize,
}

fn theory_point(spec: &ProblemSpec, loss: LossModel, solver: &SolverConfig, alpha_test: f64, warnings: &mut Vec<String>, tag: &str) -> TheoryOutcome {
    match solve_self_consistent(spec, loss, solver) {
        Ok(state) => {
            let cols = match theory_predictions(&state, spec, alpha_test) {
                Ok(t) => Some(TheoryCols {
                    h_mu: t.h_mu,
                    h_v: t.h_v,
                    sigma_sq: t.sigma_sq,
                    zeta: t.zeta,
                    clean_acc: t.clean_acc,
                    asr: t.asr,
                }),
                Err(e) => {
                    warnings.push(format!("{tag}: {e}"));
                    None
                }
            };
            if state.eta2_clamped {
                warnings.push(format!("{tag}: eta2 clamped by the exponential guard"));
            }
            TheoryOutcome {
                cols,
                state: Some(state),
                converged: state.converged,
                iters: state.iterations,
            }
        }
        Err(e) => {
            warnings.push(format!("{tag}: fixed point failed: {e}"));
            TheoryOutcome {
                cols: None,
                state: None,
                converged: false,
                iters: 0,
            }
        }
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn emp_cols(r: &ErmRunResult) -> EmpCols {
    EmpCols {
        h_mu: r.theta_mu,
        h_v: r.theta_v,
        clean_acc: r.clean_acc,
        asr: r.asr,
    }
}

struct Ctx<'a> {
    cfg: &'a SweepConfig,
    model: &'a Model,
    solver: SolverConfig,
    base_seed: u64,
}

impl Ctx<'_> {
    fn spec(&self, pt: Point) -> Result<ProblemSpec> {
        self.model.spec(pt.alpha, pt.phi, self.cfg.lambda.value(), pt.n)
    }

    fn tag(&self, pt: Point) -> String {
        format!("alpha={} phi={} n={}", pt.alpha, pt.phi, pt.n)
    }

    fn theory(&self, pt: Point, with_decomposition: bool) -> PointOutput {
        let mut warnings = Vec::new();
        let tag = self.tag(pt);
        let spec = match self.spec(pt) {
            Ok(s) => s,
            Err(e) => return failed_point(pt, &tag, e),
        };
        let th = theory_point(&spec, self.cfg.loss, &self.solver, self.cfg.alpha_test, &mut warnings, &tag);
        let decomposition = match (with_decomposition, th.state) {
            (true, Some(state)) => match variance_decomposition(&state, &spec) {
                Ok(d) => Some(d),
                Err(e) => {
                    warnings.push(format!("{tag}: {e}"));
                    None
                }
            },
            _ => None,
        };
        let flagged = !th.converged || th.cols.is_none();
        PointOutput {
            rows: vec![Row {
                alpha: pt.alpha,
                phi: pt.phi,
                kappa: spec.kappa(),
                rep: RepLabel::Index(0),
                theory: th.cols,
                emp: None,
                converged: th.converged,
                iters: th.iters,
            }],
            decomposition,
            flagged,
            warnings,
        }
    }

    fn erm(&self, pt: Point) -> PointOutput {
        let mut warnings = Vec::new();
        let tag = self.tag(pt);
        let spec = match self.spec(pt) {
            Ok(s) => s,
            Err(e) => return failed_point(pt, &tag, e),
        };
        let th = theory_point(&spec, self.cfg.loss, &self.solver, self.cfg.alpha_test, &mut warnings, &tag);
        let eval = match self.cfg.eval {
            EvalConfig::Analytic => EvalMode::Analytic,
            EvalConfig::Empirical { n_test } => EvalMode::Empirical { n_test },
        };
        let reps: Vec<Result<ErmRunResult>> = (0..self.cfg.reps)
            .into_par_iter()
            .map(|rep| run_erm_rep(&spec, self.cfg.loss, self.base_seed, rep as u64, self.cfg.alpha_test, eval))
            .collect();
        let kappa = spec.kappa();
        let mut rows = Vec::with_capacity(self.cfg.reps + 2);
        let mut ok = Vec::new();
        let mut all_converged = th.converged;
        for (rep, r) in reps.into_iter().enumerate() {
            match r {
                Ok(r) => {
                    if !r.converged {
                        warnings.push(format!("{tag} rep={rep}: fit did not converge (grad {:e})", r.grad_norm));
                    }
                    all_converged &= r.converged;
                    rows.push(Row {
                        alpha: pt.alpha,
                        phi: pt.phi,
                        kappa,
                        rep: RepLabel::Index(rep),
                        theory: th.cols,
                        emp: Some(emp_cols(&r)),
                        converged: r.converged,
                        iters: r.solver_iters,
                    });
                    ok.push(r);
                }
                Err(e) => {
                    warnings.push(format!("{tag} rep={rep}: {e}"));
                    all_converged = false;
                    rows.push(Row {
                        alpha: pt.alpha,
                        phi: pt.phi,
                        kappa,
                        rep: RepLabel::Index(rep),
                        theory: th.cols,
                        emp: None,
                        converged: false,
                        iters: 0,
                    });
                }
            }
        }
        let (mean, se) = if ok.is_empty() {
            (None, None)
        } else {
            let col = |f: fn(&ErmRunResult) -> f64| mean_se(&ok.iter().map(f).collect::<Vec<_>>());
            let (hm, hm_se) = col(|r| r.theta_mu);
            let (hv, hv_se) = col(|r| r.theta_v);
            let (ca, ca_se) = col(|r| r.clean_acc);
            let (asr, asr_se) = col(|r| r.asr);
            (
                Some(EmpCols {
                    h_mu: hm,
                    h_v: hv,
                    clean_acc: ca,
                    asr,
                }),
                Some(EmpCols {
                    h_mu: hm_se,
                    h_v: hv_se,
                    clean_acc: ca_se,
                    asr: asr_se,
                }),
            )
        };
        for (label, emp) in [(RepLabel::Mean, mean), (RepLabel::StdErr, se)] {
            rows.push(Row {
                alpha: pt.alpha,
                phi: pt.phi,
                kappa,
                rep: label,
                theory: th.cols,
                emp,
                converged: all_converged,
                iters: th.iters,
            });
        }
        PointOutput {
            rows,
            decomposition: None,
            flagged: !all_converged || th.cols.is_none(),
            warnings,
        }
    }

    fn population(&self, pt: Point) -> PointOutput {
        let tag = format!("alpha={} phi={}", pt.alpha, pt.phi);
        let Some((s_mu_sq, s_v_sq, _)) = self.model.cov.eigen_pair_params() else {
            return failed_point(pt, &tag, Error::Config("population mode needs an eigen_pair covariance".into()));
        };
        let params = PopulationParams {
            norm_mu: self.cfg.norm_mu,
            s_mu_sq,
            s_v_sq,
            lambda: self.cfg.lambda.value(),
            phi: pt.phi,
            alpha: pt.alpha,
            loss: self.cfg.loss,
        };
        let mut warnings = Vec::new();
        let outcome = minimize_population_eigen(&params).and_then(|m| {
            let r2 = params.norm_mu * params.norm_mu;
            let h_mu = m.a * r2;
            let h_v = m.b;
            let var = m.a * m.a * s_mu_sq * r2 + m.b * m.b * s_v_sq;
            let cols = TheoryCols {
                h_mu,
                h_v,
                sigma_sq: var,
                zeta: 0.0,
                clean_acc: clean_accuracy(h_mu, var)?,
                asr: attack_success(h_mu, h_v, self.cfg.alpha_test, var.sqrt())?,
            };
            Ok((m, cols))
        });
        let (cols, converged, iters) = match outcome {
            Ok((m, cols)) => {
                if !m.converged {
                    warnings.push(format!("{tag}: population Newton did not converge (grad {:e})", m.grad_norm));
                }
                (Some(cols), m.converged, m.iterations)
            }
            Err(e) => {
                warnings.push(format!("{tag}: {e}"));
                (None, false, 0)
            }
        };
        PointOutput {
            rows: vec![Row {
                alpha: pt.alpha,
                phi: pt.phi,
                kappa: 0.0,
                rep: RepLabel::Index(0),
                theory: cols,
                emp: None,
                converged,
                iters,
            }],
            decomposition: None,
            flagged: !converged || cols.is_none(),
            warnings,
        }
    }
}

fn failed_point(pt: Point, tag: &str, e: Error) -> PointOutput {
    PointOutput {
        rows: vec![Row {
            alpha: pt.alpha,
            phi: pt.phi,
            kappa: f64::NAN,
            rep: RepLabel::Index(0),
            theory: None,
            emp: None,
            converged: false,
            iters: 0,
        }],
        decomposition: None,
        flagged: true,
        warnings: vec![format!("{tag}: {e}")],
    }
}

const DECOMPOSITION_COLUMNS: [&str; 12] = [
    "alpha",
    "phi",
    "kappa",
    "mean_term",
    "trigger_term",
    "cross_term",
    "zeta",
    "sigma_sq",
    "pct_mean",
    "pct_trigger",
    "pct_cross",
    "pct_zeta",
];

fn decomposition_row(row: &Row, d: &VarianceDecomposition) -> Vec<String> {
    let mut out = vec![fmt_f64(row.alpha), fmt_f64(row.phi), fmt_f64(row.kappa)];
    out.extend(d.terms().iter().map(|&x| fmt_f64(x)));
    out.push(fmt_f64(d.total));
    out.extend(d.percentages.iter().map(|&x| fmt_f64(x)));
    out
}

/// Evaluates every sweep point for one model; rows come back in sweep order.
fn sweep(ctx: &Ctx<'_>) -> Vec<PointOutput> {
    let pts = match ctx.cfg.mode {
        Mode::Population => {
            let mut v = Vec::new();
            for phi in ctx.cfg.phi.values() {
                for alpha in ctx.cfg.alpha_grid.values() {
                    v.push(Point { phi, n: 0, alpha });
                }
            }
            v
        }
        _ => points(ctx.cfg),
    };
    pts.into_par_iter()
        .map(|pt| match ctx.cfg.mode {
            Mode::Theory => ctx.theory(pt, false),
            Mode::Decompose => ctx.theory(pt, true),
            Mode::Erm | Mode::EigenSweep => ctx.erm(pt),
            Mode::Population => ctx.population(pt),
        })
        .collect()
}

/// Validates, runs the configured mode and writes CSVs plus `manifest.json`
/// into the output directory. Non-convergence is flagged per row and listed
/// in the report; only validation and I/O failures return `Err`. Files
/// written before a failure are removed.
pub fn run(cfg: &SweepConfig, opts: &RunOptions) -> Result<RunReport> {
    let mut cfg = cfg.clone();
    if let Some(out) = &opts.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.base_seed = seed;
    }
    if opts.threads == Some(0) {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    let model = validate(&cfg)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = opts.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?
    };
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.output)?;
    let mut guard = OutputGuard::default();
    let mut files = Vec::new();
    let mut flagged_points = 0;
    let mut warnings = Vec::new();
    let solver = cfg.solver_config();

    let models: Vec<(Option<f64>, Model, PathBuf)> = match (&cfg.mode, &cfg.s_v_sq_grid) {
        (Mode::EigenSweep, Some(grid)) => grid
            .iter()
            .enumerate()
            .map(|(i, &s)| Ok((Some(s), build_model(&cfg, Some(s))?, cfg.output.join(format!("results_sv2_{i:02}.csv")))))
            .collect::<Result<_>>()?,
        _ => vec![(None, model.clone(), cfg.output.join("results.csv"))],
    };

    for (s_v_sq, model, path) in &models {
        let ctx = Ctx {
            cfg: &cfg,
            model,
            solver: solver.clone(),
            base_seed: cfg.base_seed,
        };
        let outputs = pool.install(|| sweep(&ctx));
        let mut rows = Vec::new();
        let mut decomp = Vec::new();
        for o in outputs {
            flagged_points += o.flagged as usize;
            match s_v_sq {
                Some(s) => warnings.extend(o.warnings.into_iter().map(|w| format!("s_v_sq={s} {w}"))),
                None => warnings.extend(o.warnings),
            }
            if let (Some(d), Some(r)) = (&o.decomposition, o.rows.first()) {
                decomp.push(decomposition_row(r, d));
            }
            rows.extend(o.rows);
        }
        write_rows_csv(guard.track(path.clone()), &rows)?;
        files.push(OutputFile {
            path: path.clone(),
            s_v_sq: *s_v_sq,
            rows: rows.len(),
        });
        if cfg.mode == Mode::Decompose {
            let dpath = cfg.output.join("decomposition.csv");
            write_table_csv(guard.track(dpath.clone()), &DECOMPOSITION_COLUMNS, &decomp)?;
            files.push(OutputFile {
                path: dpath,
                s_v_sq: None,
                rows: decomp.len(),
            });
        }
    }

    let manifest_path = cfg.output.join("manifest.json");
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        threads: pool.current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        trigger_norm: model.trigger_norm,
        files: &files,
        flagged_points,
        warnings: &warnings,
    };
    write_json(guard.track(manifest_path.clone()), &manifest)?;
    guard.commit();
    Ok(RunReport {
        files,
        manifest: manifest_path,
        flagged_points,
        warnings,
    })
}

/// Result of the standalone decomposition on external moments.
#[derive(Debug, Clone)]
pub struct ExternalDecomposition {
    pub state: FixedPointState,
    pub decomposition: VarianceDecomposition,
    pub trigger_norm: Option<f64>,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DecomposeArgs<'a> {
    pub mean: &'a Path,
    pub cov: &'a Path,
    pub trigger: Option<&'a Path>,
    pub lambda: f64,
    pub phi: f64,
    pub n: usize,
    pub alpha: f64,
    pub loss: LossModel,
}

/// Loads `(μ, C, v)`, solves the fixed point and splits σ².
pub fn decompose_external(args: DecomposeArgs<'_>, solver: &SolverConfig) -> Result<ExternalDecomposition> {
    let ext = load_external_model(args.mean, args.cov, args.trigger).map_err(|e| match e {
        Error::Io(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    let spec = ProblemSpec::new(Arc::new(ext.cov), ext.mu, ext.v, args.alpha, args.phi, args.lambda, args.n)
        .map_err(|e| Error::Config(e.to_string()))?;
    let state = solve_self_consistent(&spec, args.loss, solver)?;
    let decomposition = variance_decomposition(&state, &spec)?;
    Ok(ExternalDecomposition {
        state,
        decomposition,
        trigger_norm: ext.trigger_norm,
        kappa: spec.kappa(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{GridConfig, LambdaConfig, OneOrMany};
    use crate::squared::{alpha_star_exact, solve_tau_spec};

    fn theory_cfg(out: &Path) -> SweepConfig {
        let mut c: SweepConfig = serde_json::from_str(
            r#"{"mode":"theory","loss":"squared","covariance":{"isotropic":{}},"p":100,"n":200,"phi":0.2,"lambda":0.5}"#,
        )
        .unwrap();
        c.alpha_grid = GridConfig::List((0..=100).map(|i| 0.1 * i as f64).collect());
        c.output = out.to_path_buf();
        c
    }

    fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
        let mut r = csv::Reader::from_path(path).unwrap();
        r.records().map(|x| x.unwrap()).collect()
    }

    #[test]
    fn theory_argmax_matches_alpha_star() {
        let d = tempfile::tempdir().unwrap();
        let cfg = theory_cfg(d.path());
        let report = run(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(report.flagged_points, 0);
        let rows = read_rows(&report.files[0].path);
        assert_eq!(rows.len(), 101);
        let (best, _) = rows.iter().fold((0.0, f64::MIN), |acc, r| {
            let hv: f64 = r[5].parse().unwrap();
            if hv > acc.1 {
                (r[0].parse().unwrap(), hv)
            } else {
                acc
            }
        });
        let model = build_model(&cfg, None).unwrap();
        let spec = model.spec(0.0, 0.2, 0.5, 200).unwrap();
        let star = alpha_star_exact(&spec, solve_tau_spec(&spec)).unwrap().exact;
        assert!((best - star).abs() <= 0.1, "grid argmax {best} vs {star}");
        assert!(report.manifest.exists());
        assert!(rows.iter().all(|r| r[10].is_empty()));
    }

    #[test]
    fn erm_rows_and_aggregates() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = theory_cfg(d.path());
        cfg.mode = Mode::Erm;
        cfg.p = Some(20);
        cfg.n = OneOrMany::One(80);
        cfg.reps = 3;
        cfg.alpha_grid = GridConfig::List(vec![0.0, 1.0]);
        let report = run(&cfg, &RunOptions { seed: Some(7), ..Default::default() }).unwrap();
        let rows = read_rows(&report.files[0].path);
        assert_eq!(rows.len(), 2 * (3 + 2));
        let labels: Vec<&str> = rows.iter().map(|r| &r[3]).collect();
        assert_eq!(&labels[..5], &["0", "1", "2", "mean", "se"]);
        let mean: f64 = rows[3][10].parse().unwrap();
        let avg = (0..3).map(|i| rows[i][10].parse::<f64>().unwrap()).sum::<f64>() / 3.0;
        assert!((mean - avg).abs() < 1e-12);
        assert!(!rows[0][4].is_empty());
    }

    #[test]
    fn validation_failure_writes_nothing() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = theory_cfg(&d.path().join("sub"));
        cfg.lambda = LambdaConfig::Value(-1.0);
        assert!(matches!(run(&cfg, &RunOptions::default()), Err(Error::Config(_))));
        assert!(!d.path().join("sub").exists());
    }

    #[test]
    fn population_mode() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = theory_cfg(d.path());
        cfg.mode = Mode::Population;
        cfg.loss = LossModel::Logistic;
        cfg.covariance = CovarianceConfig::EigenPair {
            s_mu_sq: 1.0,
            s_v_sq: 1.0,
            s_rest_sq: 1.0,
        };
        cfg.lambda = LambdaConfig::Value(0.1);
        cfg.alpha_grid = GridConfig::List(vec![0.0, 5.0]);
        let report = run(&cfg, &RunOptions::default()).unwrap();
        let rows = read_rows(&report.files[0].path);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
        let b0: f64 = rows[0][5].parse().unwrap();
        let b5: f64 = rows[1][5].parse().unwrap();
        assert!(b0.abs() < 1e-9 && b5 > 0.0);
    }
}
