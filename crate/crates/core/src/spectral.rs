//! Covariance models and the resolvent functionals built on them.
//!
//! Every theory quantity in this crate touches the covariance `C` only through
//! spectral sums `Σ_i ã_i b̃_i w(s_i)` taken in an eigenbasis of `C`, where
//! `s_i` are the eigenvalues and `w` is a scalar weight such as `1/(λ+τs)`.
//! Structured models are diagonal in the coordinate basis. Dense models are
//! eigendecomposed once, at construction, and keep a Cholesky factor for
//! sampling.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Relative tolerance on `|C_ij - C_ji|` (relative to the largest entry).
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Tolerance on `‖v‖ = 1`.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Shared covariance of both mixture components.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Isotropic {
        scale: f64,
        dim: usize,
    },
    /// Coordinate 0 hosts μ, coordinate 1 hosts v, every other coordinate has `s_rest_sq`.
    EigenPair {
        s_mu_sq: f64,
        s_v_sq: f64,
        s_rest_sq: f64,
        dim: usize,
    },
    Spectrum {
        eigenvalues: Vec<f64>,
        mu_index: usize,
        v_index: usize,
    },
    Dense(Box<DenseParts>),
}

#[derive(Debug, Clone)]
struct DenseParts {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// Columns are orthonormal eigenvectors.
    eigenvectors: DMatrix<f64>,
    /// Lower-triangular `L` with `C = L Lᵀ`.
    factor: DMatrix<f64>,
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {x}")))
    }
}

impl CovarianceModel {
    /// `C = scale · I_dim`.
    pub fn isotropic(scale: f64, dim: usize) -> Result<Self> {
        check_positive("scale", scale)?;
        if dim == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        Ok(Self {
            repr: Repr::Isotropic { scale, dim },
        })
    }

    pub fn eigen_pair(s_mu_sq: f64, s_v_sq: f64, s_rest_sq: f64, dim: usize) -> Result<Self> {
        check_positive("s_mu_sq", s_mu_sq)?;
        check_positive("s_v_sq", s_v_sq)?;
        check_positive("s_rest_sq", s_rest_sq)?;
        if dim < 2 {
            return Err(invalid("dim", "eigen-pair model needs dim >= 2"));
        }
        Ok(Self {
            repr: Repr::EigenPair {
                s_mu_sq,
                s_v_sq,
                s_rest_sq,
                dim,
            },
        })
    }

    pub fn spectrum(eigenvalues: Vec<f64>, mu_index: usize, v_index: usize) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("eigenvalues", "must be non-empty"));
        }
        for &s in &eigenvalues {
            check_positive("eigenvalues", s)?;
        }
        let p = eigenvalues.len();
        if mu_index >= p || v_index >= p {
            return Err(invalid("mu_index/v_index", format!("must be < {p}")));
        }
        if mu_index == v_index {
            return Err(invalid("v_index", "must differ from mu_index"));
        }
        Ok(Self {
            repr: Repr::Spectrum {
                eigenvalues,
                mu_index,
                v_index,
            },
        })
    }

    /// Dense symmetric positive-definite covariance. Asymmetric input is
    /// rejected, not symmetrized.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: matrix.ncols(),
                context: "dense covariance must be square",
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("covariance matrix".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            for j in (i + 1)..p {
                let gap = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let factor = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
            .l();
        let eig = sym.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min:e}"
            )));
        }
        Ok(Self {
            repr: Repr::Dense(Box::new(DenseParts {
                matrix: sym,
                eigenvalues: eig.eigenvalues,
                eigenvectors: eig.eigenvectors,
                factor,
            })),
        })
    }

    /// Dense covariance after adding `ε I` with `ε = 1e-4 · tr(C)/p`, the ridge
    /// applied to externally estimated moments.
    pub fn dense_with_jitter(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: matrix.ncols(),
                context: "dense covariance must be square",
            });
        }
        let eps = 1e-4 * matrix.trace() / p as f64;
        let mut m = matrix;
        for i in 0..p {
            m[(i, i)] += eps;
        }
        Self::dense(m)
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Isotropic { dim, .. } | Repr::EigenPair { dim, .. } => *dim,
            Repr::Spectrum { eigenvalues, .. } => eigenvalues.len(),
            Repr::Dense(d) => d.matrix.nrows(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense(_))
    }

    /// `(s_mu_sq, s_v_sq, s_rest_sq)` for eigen-pair models; isotropic models
    /// report their scale three times.
    pub fn eigen_pair_params(&self) -> Option<(f64, f64, f64)> {
        match &self.repr {
            Repr::Isotropic { scale, .. } => Some((*scale, *scale, *scale)),
            Repr::EigenPair {
                s_mu_sq,
                s_v_sq,
                s_rest_sq,
                ..
            } => Some((*s_mu_sq, *s_v_sq, *s_rest_sq)),
            _ => None,
        }
    }

    /// Coordinates hosting μ and v in structured models.
    pub fn designated_indices(&self) -> Option<(usize, usize)> {
        match &self.repr {
            Repr::Isotropic { dim, .. } if *dim >= 2 => Some((0, 1)),
            Repr::EigenPair { .. } => Some((0, 1)),
            Repr::Spectrum {
                mu_index, v_index, ..
            } => Some((*mu_index, *v_index)),
            _ => None,
        }
    }

    /// All `p` eigenvalues (unsorted for structured models).
    pub fn eigenvalues(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Isotropic { scale, dim } => vec![*scale; *dim],
            Repr::EigenPair {
                s_mu_sq,
                s_v_sq,
                s_rest_sq,
                dim,
            } => {
                let mut out = vec![*s_rest_sq; *dim];
                out[0] = *s_mu_sq;
                out[1] = *s_v_sq;
                out
            }
            Repr::Spectrum { eigenvalues, .. } => eigenvalues.clone(),
            Repr::Dense(d) => d.eigenvalues.iter().copied().collect(),
        }
    }

    /// Unit eigenvector for the smallest eigenvalue.
    pub fn min_eigenvector(&self) -> DVector<f64> {
        let p = self.dim();
        match &self.repr {
            Repr::Dense(d) => {
                let idx = d.eigenvalues.imin();
                d.eigenvectors.column(idx).into_owned()
            }
            _ => {
                let evs = self.eigenvalues();
                let (idx, _) = evs
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
                let mut e = DVector::zeros(p);
                e[idx] = 1.0;
                e
            }
        }
    }

    /// Materialize `C` as a dense matrix.
    pub fn to_dense_matrix(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(d) => d.matrix.clone(),
            _ => DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues())),
        }
    }

    fn check_dim(&self, a: &DVector<f64>, context: &'static str) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: a.len(),
                context,
            });
        }
        Ok(())
    }

    /// `Σ_i ã_i b̃_i w(s_i)`, i.e. `aᵀ w(C) b`.
    pub fn spectral_form<W: Fn(f64) -> f64>(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        w: W,
    ) -> Result<f64> {
        self.check_dim(a, "left vector")?;
        self.check_dim(b, "right vector")?;
        Ok(match &self.repr {
            Repr::Isotropic { scale, .. } => w(*scale) * a.dot(b),
            Repr::EigenPair {
                s_mu_sq,
                s_v_sq,
                s_rest_sq,
                ..
            } => {
                let rest: f64 = a.iter().zip(b.iter()).skip(2).map(|(x, y)| x * y).sum();
                w(*s_mu_sq) * a[0] * b[0] + w(*s_v_sq) * a[1] * b[1] + w(*s_rest_sq) * rest
            }
            Repr::Spectrum { eigenvalues, .. } => eigenvalues
                .iter()
                .zip(a.iter().zip(b.iter()))
                .map(|(&s, (x, y))| w(s) * x * y)
                .sum(),
            Repr::Dense(d) => {
                let at = d.eigenvectors.tr_mul(a);
                let bt = d.eigenvectors.tr_mul(b);
                d.eigenvalues
                    .iter()
                    .zip(at.iter().zip(bt.iter()))
                    .map(|(&s, (x, y))| w(s) * x * y)
                    .sum()
            }
        })
    }

    /// `Σ_i w(s_i)` over the full spectrum.
    pub fn spectral_trace<W: Fn(f64) -> f64>(&self, w: W) -> f64 {
        match &self.repr {
            Repr::Isotropic { scale, dim } => *dim as f64 * w(*scale),
            Repr::EigenPair {
                s_mu_sq,
                s_v_sq,
                s_rest_sq,
                dim,
            } => w(*s_mu_sq) + w(*s_v_sq) + (*dim - 2) as f64 * w(*s_rest_sq),
            Repr::Spectrum { eigenvalues, .. } => eigenvalues.iter().map(|&s| w(s)).sum(),
            Repr::Dense(d) => d.eigenvalues.iter().map(|&s| w(s)).sum(),
        }
    }

    /// `θᵀ C θ`.
    pub fn quad_form(&self, theta: &DVector<f64>) -> Result<f64> {
        match &self.repr {
            Repr::Dense(d) => {
                self.check_dim(theta, "quadratic form")?;
                Ok(theta.dot(&(&d.matrix * theta)))
            }
            _ => self.spectral_form(theta, theta, |s| s),
        }
    }

    /// Fills `out` with a draw from `N(0, C)`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let p = self.dim();
        debug_assert_eq!(out.len(), p);
        match &self.repr {
            Repr::Isotropic { scale, .. } => {
                let sd = scale.sqrt();
                for x in out.iter_mut() {
                    *x = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Repr::Dense(d) => {
                let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &d.factor * z;
                out.copy_from_slice(x.as_slice());
            }
            _ => {
                let evs = self.eigenvalues();
                for (x, s) in out.iter_mut().zip(evs) {
                    *x = s.sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
}

/// `(λ, τ)` defining `R(λ,τ) = (λI + τC)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventParams {
    pub lambda: f64,
    pub tau: f64,
}

impl ResolventParams {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(invalid("tau", format!("must be finite and >= 0, got {tau}")));
        }
        Ok(Self { lambda, tau })
    }

    #[inline]
    pub fn resolvent(&self, s: f64) -> f64 {
        1.0 / (self.lambda + self.tau * s)
    }
}

/// `aᵀ R b`.
pub fn resolvent_quad(
    cov: &CovarianceModel,
    rp: ResolventParams,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    cov.spectral_form(a, b, |s| rp.resolvent(s))
}

/// `aᵀ R C R b`.
pub fn resolvent_weighted_quad(
    cov: &CovarianceModel,
    rp: ResolventParams,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    cov.spectral_form(a, b, |s| s * rp.resolvent(s).powi(2))
}

/// `aᵀ R² b`.
pub fn resolvent_sq_quad(
    cov: &CovarianceModel,
    rp: ResolventParams,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    cov.spectral_form(a, b, |s| rp.resolvent(s).powi(2))
}

fn check_n(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "sample count must be >= 1"));
    }
    Ok(n as f64)
}

/// `(1/n) tr[C R]`.
pub fn resolvent_trace(cov: &CovarianceModel, rp: ResolventParams, n: usize) -> Result<f64> {
    let n = check_n(n)?;
    Ok(cov.spectral_trace(|s| s * rp.resolvent(s)) / n)
}

/// `(1/n) tr[R² C²]`.
pub fn noise_trace(cov: &CovarianceModel, rp: ResolventParams, n: usize) -> Result<f64> {
    let n = check_n(n)?;
    Ok(cov.spectral_trace(|s| (s * rp.resolvent(s)).powi(2)) / n)
}

/// `(1/n) tr[R² C]`.
pub fn resolvent_sq_trace(cov: &CovarianceModel, rp: ResolventParams, n: usize) -> Result<f64> {
    let n = check_n(n)?;
    Ok(cov.spectral_trace(|s| s * rp.resolvent(s).powi(2)) / n)
}

/// Symmetric 2×2 table of the forms `μᵀFμ`, `μᵀFv`, `vᵀFv` for some spectral
/// function `F` of `C`. With `F = R` these are the resolvent Gram entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramEntries {
    pub g_mumu: f64,
    pub g_muv: f64,
    pub g_vv: f64,
}

impl GramEntries {
    pub fn determinant(&self) -> f64 {
        self.g_mumu * self.g_vv - self.g_muv * self.g_muv
    }
}

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    s: f64,
    mumu: f64,
    muv: f64,
    vv: f64,
}

/// The covariance spectrum together with the eigenbasis weights of `μ` and
/// `v`, so pair forms and traces cost `O(#distinct terms)` instead of `O(p²)`.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pairs: Vec<PairTerm>,
    /// `(eigenvalue, multiplicity)`.
    traces: Vec<(f64, f64)>,
}

impl SpectralSummary {
    pub fn new(cov: &CovarianceModel, mu: &DVector<f64>, v: &DVector<f64>) -> Result<Self> {
        cov.check_dim(mu, "mean vector")?;
        cov.check_dim(v, "trigger vector")?;
        let term = |s: f64, a: f64, b: f64| PairTerm {
            s,
            mumu: a * a,
            muv: a * b,
            vv: b * b,
        };
        let (pairs, traces) = match &cov.repr {
            Repr::Isotropic { scale, dim } => (
                vec![PairTerm {
                    s: *scale,
                    mumu: mu.dot(mu),
                    muv: mu.dot(v),
                    vv: v.dot(v),
                }],
                vec![(*scale, *dim as f64)],
            ),
            Repr::EigenPair {
                s_mu_sq,
                s_v_sq,
                s_rest_sq,
                dim,
            } => {
                let rest = |x: &DVector<f64>, y: &DVector<f64>| -> f64 {
                    x.iter().zip(y.iter()).skip(2).map(|(a, b)| a * b).sum()
                };
                (
                    vec![
                        term(*s_mu_sq, mu[0], v[0]),
                        term(*s_v_sq, mu[1], v[1]),
                        PairTerm {
                            s: *s_rest_sq,
                            mumu: rest(mu, mu),
                            muv: rest(mu, v),
                            vv: rest(v, v),
                        },
                    ],
                    vec![(*s_mu_sq, 1.0), (*s_v_sq, 1.0), (*s_rest_sq, (*dim - 2) as f64)],
                )
            }
            Repr::Spectrum { eigenvalues, .. } => (
                eigenvalues
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mu[*i] != 0.0 || v[*i] != 0.0)
                    .map(|(i, &s)| term(s, mu[i], v[i]))
                    .collect(),
                eigenvalues.iter().map(|&s| (s, 1.0)).collect(),
            ),
            Repr::Dense(d) => {
                let mt = d.eigenvectors.tr_mul(mu);
                let vt = d.eigenvectors.tr_mul(v);
                (
                    d.eigenvalues
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| term(s, mt[i], vt[i]))
                        .collect(),
                    d.eigenvalues.iter().map(|&s| (s, 1.0)).collect(),
                )
            }
        };
        Ok(Self { pairs, traces })
    }

    pub fn pair_forms<W: Fn(f64) -> f64>(&self, w: W) -> GramEntries {
        let mut g = GramEntries {
            g_mumu: 0.0,
            g_muv: 0.0,
            g_vv: 0.0,
        };
        for t in &self.pairs {
            let ws = w(t.s);
            g.g_mumu += ws * t.mumu;
            g.g_muv += ws * t.muv;
            g.g_vv += ws * t.vv;
        }
        g
    }

    pub fn trace<W: Fn(f64) -> f64>(&self, w: W) -> f64 {
        self.traces.iter().map(|&(s, m)| m * w(s)).sum()
    }
}

/// A poisoned-mixture instance: `z | K=1 ~ N(μ, C)` with weight `1-φ`,
/// `z | K=2 ~ N(αv - μ, C)` with weight `φ`, ridge strength `λ`, `n` samples.
///
/// `φ = 0` is accepted as the unpoisoned reference case.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    cov: Arc<CovarianceModel>,
    mu: Arc<DVector<f64>>,
    v: Arc<DVector<f64>>,
    summary: Arc<SpectralSummary>,
    alpha: f64,
    phi: f64,
    lambda: f64,
    n: usize,
}

impl ProblemSpec {
    pub fn new(
        cov: Arc<CovarianceModel>,
        mu: DVector<f64>,
        v: DVector<f64>,
        alpha: f64,
        phi: f64,
        lambda: f64,
        n: usize,
    ) -> Result<Self> {
        if mu.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("mean or trigger vector".into()));
        }
        let vn = v.norm();
        if (vn - 1.0).abs() > UNIT_NORM_TOL {
            return Err(invalid("v", format!("must have unit norm, got {vn}")));
        }
        let summary = Arc::new(SpectralSummary::new(&cov, &mu, &v)?);
        let spec = Self {
            cov,
            mu: Arc::new(mu),
            v: Arc::new(v),
            summary,
            alpha: 0.0,
            phi: 0.25,
            lambda: 1.0,
            n: 1,
        };
        spec.with_alpha(alpha)?.with_phi(phi)?.with_lambda(lambda)?.with_n(n)
    }

    /// μ = `norm_mu · e_μ`, v = `e_v` on the designated coordinates of a
    /// structured model.
    pub fn structured(
        cov: Arc<CovarianceModel>,
        norm_mu: f64,
        alpha: f64,
        phi: f64,
        lambda: f64,
        n: usize,
    ) -> Result<Self> {
        let (mi, vi) = cov
            .designated_indices()
            .ok_or_else(|| invalid("covariance", "structured placement needs a structured model with p >= 2"))?;
        let p = cov.dim();
        let mut mu = DVector::zeros(p);
        mu[mi] = norm_mu;
        let mut v = DVector::zeros(p);
        v[vi] = 1.0;
        Self::new(cov, mu, v, alpha, phi, lambda, n)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
        }
        Ok(Self { alpha, ..self.clone() })
    }

    pub fn with_phi(&self, phi: f64) -> Result<Self> {
        if !(phi.is_finite() && (0.0..0.5).contains(&phi)) {
            return Err(invalid("phi", format!("must lie in [0, 0.5), got {phi}")));
        }
        Ok(Self { phi, ..self.clone() })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        Ok(Self { lambda, ..self.clone() })
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(Self { n, ..self.clone() })
    }

    pub fn cov(&self) -> &CovarianceModel {
        &self.cov
    }

    pub fn cov_arc(&self) -> Arc<CovarianceModel> {
        Arc::clone(&self.cov)
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn summary(&self) -> &SpectralSummary {
        &self.summary
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.cov.dim()
    }

    pub fn kappa(&self) -> f64 {
        self.p() as f64 / self.n as f64
    }

    pub fn norm_mu_sq(&self) -> f64 {
        self.mu.norm_squared()
    }

    pub fn resolvent_params(&self, tau: f64) -> Result<ResolventParams> {
        ResolventParams::new(self.lambda, tau)
    }

    /// `μᵀRμ, μᵀRv, vᵀRv` at `R(λ, τ)`.
    pub fn gram(&self, tau: f64) -> GramEntries {
        let lam = self.lambda;
        self.summary.pair_forms(|s| 1.0 / (lam + tau * s))
    }

    /// Pair forms of `A = R C R`.
    pub fn weighted_gram(&self, tau: f64) -> GramEntries {
        let lam = self.lambda;
        self.summary.pair_forms(|s| s / (lam + tau * s).powi(2))
    }

    /// Pair forms of `R²`.
    pub fn sq_gram(&self, tau: f64) -> GramEntries {
        let lam = self.lambda;
        self.summary.pair_forms(|s| 1.0 / (lam + tau * s).powi(2))
    }

    /// `(1/n) tr[C R]`.
    pub fn delta(&self, tau: f64) -> f64 {
        let lam = self.lambda;
        self.summary.trace(|s| s / (lam + tau * s)) / self.n as f64
    }

    /// `(1/n) tr[R² C²]`.
    pub fn noise_trace(&self, tau: f64) -> f64 {
        let lam = self.lambda;
        self.summary.trace(|s| (s / (lam + tau * s)).powi(2)) / self.n as f64
    }

    /// `(1/n) tr[R² C]`.
    pub fn sq_trace(&self, tau: f64) -> f64 {
        let lam = self.lambda;
        self.summary.trace(|s| s / (lam + tau * s).powi(2)) / self.n as f64
    }

    /// Measured `|vᵀRμ|`: the finite-sample proxy for trigger orthogonality.
    pub fn orthogonality_gap(&self, tau: f64) -> f64 {
        self.gram(tau).g_muv.abs()
    }
}

#[cfg(test)]
// 0.70711 is a rounded example input, not an approximation of 1/√2.
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(p: usize, i: usize) -> DVector<f64> {
        let mut e = DVector::zeros(p);
        e[i] = 1.0;
        e
    }

    #[test]
    fn isotropic_resolvent_is_scalar() {
        let cov = CovarianceModel::isotropic(1.0, 4).unwrap();
        let rp = ResolventParams::new(0.5, 0.70711).unwrap();
        let mu = unit(4, 0);
        let q = resolvent_quad(&cov, rp, &mu, &mu).unwrap();
        assert_relative_eq!(q, 1.0 / 1.20711, epsilon = 1e-12);
        assert_relative_eq!(q, 0.82843, epsilon = 1e-5);
        let w = resolvent_weighted_quad(&cov, rp, &mu, &mu).unwrap();
        assert_relative_eq!(w, 1.0 / 1.20711f64.powi(2), epsilon = 1e-12);
        assert_relative_eq!(w, 0.68627, epsilon = 5e-5);
    }

    #[test]
    fn eigen_pair_directions_are_orthogonal() {
        let cov = CovarianceModel::eigen_pair(2.0, 0.5, 1.0, 5).unwrap();
        let rp = ResolventParams::new(0.5, 0.8).unwrap();
        let (a, b) = (unit(5, 0), unit(5, 1));
        assert_eq!(resolvent_quad(&cov, rp, &a, &b).unwrap(), 0.0);
        assert_eq!(resolvent_weighted_quad(&cov, rp, &a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dense_diagonal_solve() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let cov = CovarianceModel::dense(c).unwrap();
        let rp = ResolventParams::new(1.0, 1.0).unwrap();
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        assert_relative_eq!(
            resolvent_quad(&cov, rp, &ones, &ones).unwrap(),
            0.5 + 1.0 / 3.0,
            epsilon = 1e-14
        );
        let e0 = unit(2, 0);
        assert_relative_eq!(
            resolvent_weighted_quad(&cov, rp, &e0, &e0).unwrap(),
            0.25,
            epsilon = 1e-14
        );
    }

    #[test]
    fn traces_match_hand_values() {
        let cov = CovarianceModel::isotropic(1.0, 10).unwrap();
        let rp0 = ResolventParams::new(1.0, 0.0).unwrap();
        assert_relative_eq!(resolvent_trace(&cov, rp0, 10).unwrap(), 1.0, epsilon = 1e-14);

        let rp = ResolventParams::new(0.5, 0.70711).unwrap();
        assert_relative_eq!(resolvent_trace(&cov, rp, 20).unwrap(), 0.41421, epsilon = 1e-5);
        assert_relative_eq!(noise_trace(&cov, rp, 20).unwrap(), 0.34315, epsilon = 1e-5);

        let spec = CovarianceModel::spectrum(vec![1.0, 2.0], 0, 1).unwrap();
        let rp11 = ResolventParams::new(1.0, 1.0).unwrap();
        assert_relative_eq!(
            resolvent_trace(&spec, rp11, 2).unwrap(),
            0.5 * (0.5 + 2.0 / 3.0),
            epsilon = 1e-14
        );
        let spec = CovarianceModel::spectrum(vec![1.0, 4.0], 0, 1).unwrap();
        assert_relative_eq!(noise_trace(&spec, rp11, 1).unwrap(), 0.89, epsilon = 1e-14);
    }

    #[test]
    fn noise_trace_vanishes_for_large_tau() {
        let cov = CovarianceModel::eigen_pair(2.0, 0.3, 1.0, 8).unwrap();
        let mut prev = f64::INFINITY;
        for tau in [1.0, 10.0, 100.0, 1e4, 1e6] {
            let rp = ResolventParams::new(0.5, tau).unwrap();
            let t = noise_trace(&cov, rp, 8).unwrap();
            assert!(t < prev);
            assert!(t <= 8.0 / tau.powi(2) / 8.0 + 1e-300);
            prev = t;
        }
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1 + 1e-6, 1.0]);
        assert!(matches!(
            CovarianceModel::dense(c),
            Err(Error::NotSymmetric { .. })
        ));
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CovarianceModel::dense(c),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cov = CovarianceModel::isotropic(1.0, 3).unwrap();
        let rp = ResolventParams::new(1.0, 1.0).unwrap();
        let a = DVector::zeros(3);
        let b = DVector::zeros(4);
        assert!(matches!(
            resolvent_quad(&cov, rp, &a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn jitter_uses_mean_trace() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let cov = CovarianceModel::dense_with_jitter(c).unwrap();
        let m = cov.to_dense_matrix();
        assert_relative_eq!(m[(0, 0)], 2.0 + 3e-4, epsilon = 1e-15);
        assert_relative_eq!(m[(1, 1)], 4.0 + 3e-4, epsilon = 1e-15);
    }

    #[test]
    fn summary_matches_direct_forms() {
        let cov = Arc::new(CovarianceModel::eigen_pair(2.0, 0.35, 1.0, 6).unwrap());
        let mu = DVector::from_vec(vec![0.8, 0.1, 0.3, 0.0, -0.2, 0.1]);
        let mut v = DVector::from_vec(vec![0.1, 0.9, -0.2, 0.3, 0.0, 0.1]);
        v /= v.norm();
        let spec = ProblemSpec::new(cov.clone(), mu.clone(), v.clone(), 1.0, 0.2, 0.5, 12).unwrap();
        let tau = 0.63;
        let rp = ResolventParams::new(0.5, tau).unwrap();
        let g = spec.gram(tau);
        assert_relative_eq!(g.g_mumu, resolvent_quad(&cov, rp, &mu, &mu).unwrap(), epsilon = 1e-14);
        assert_relative_eq!(g.g_muv, resolvent_quad(&cov, rp, &mu, &v).unwrap(), epsilon = 1e-14);
        assert_relative_eq!(g.g_vv, resolvent_quad(&cov, rp, &v, &v).unwrap(), epsilon = 1e-14);
        assert_relative_eq!(spec.delta(tau), resolvent_trace(&cov, rp, 12).unwrap(), epsilon = 1e-14);
        assert_relative_eq!(spec.noise_trace(tau), noise_trace(&cov, rp, 12).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn problem_spec_validation() {
        let cov = Arc::new(CovarianceModel::isotropic(1.0, 3).unwrap());
        let mu = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 2.0, 0.0]);
        assert!(ProblemSpec::new(cov.clone(), mu.clone(), v, 1.0, 0.1, 0.5, 10).is_err());
        let spec = ProblemSpec::structured(cov, 1.0, 1.0, 0.1, 0.5, 10).unwrap();
        assert!(spec.with_phi(0.5).is_err());
        assert!(spec.with_phi(-0.1).is_err());
        assert!(spec.with_phi(0.0).is_ok());
        assert!(spec.with_alpha(-1.0).is_err());
        assert!(spec.with_lambda(0.0).is_err());
        assert!(spec.with_n(0).is_err());
        assert_relative_eq!(spec.kappa(), 0.3);
    }
}
