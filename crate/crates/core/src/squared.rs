//! Closed forms for the squared loss `L(t) = ½(1-t)²`.
//!
//! With this loss the proximal channel is affine, so `τ = 1/(1+δ)` decouples
//! from the trigger, and the mean of the proxy solves a 2×2 linear system on
//! `span{Rμ, Rv}`.

use crate::error::{invalid, Error, Result};
use crate::spectral::{CovarianceModel, ProblemSpec};

pub use crate::spectral::GramEntries;

/// Relative threshold below which `g_mumu g_vv - g_muv²` counts as zero.
pub const GRAM_DEGENERACY_TOL: f64 = 1e-14;

/// Target residual for `ψ(τ) = τ(1+δ(τ)) - 1`.
pub const TAU_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredLossScalars {
    pub tau: f64,
    pub delta: f64,
}

/// Bisection on the increasing map `ψ(τ) = τ(1+δ(τ)) - 1` over `[1e-12, 1]`.
fn bisect_tau<D: Fn(f64) -> f64>(delta: D) -> SquaredLossScalars {
    let psi = |t: f64| t * (1.0 + delta(t)) - 1.0;
    let (mut lo, mut hi) = (1e-12_f64, 1.0_f64);
    if psi(hi) <= TAU_RESIDUAL_TOL {
        return SquaredLossScalars {
            tau: hi,
            delta: delta(hi),
        };
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = psi(mid);
        if r.abs() <= TAU_RESIDUAL_TOL || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    SquaredLossScalars {
        tau: mid,
        delta: delta(mid),
    }
}

/// The unique `τ ∈ (0,1]` with `τ(1 + δ(τ)) = 1`, `δ(τ) = (1/n) tr[C R(λ,τ)]`.
pub fn solve_tau(cov: &CovarianceModel, lambda: f64, n: usize) -> Result<SquaredLossScalars> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", format!("must be > 0, got {lambda}")));
    }
    if n == 0 {
        return Err(invalid("n", "sample count must be >= 1"));
    }
    let nf = n as f64;
    Ok(bisect_tau(|t| {
        cov.spectral_trace(|s| s / (lambda + t * s)) / nf
    }))
}

/// [`solve_tau`] through the cached spectral summary of `spec`.
pub fn solve_tau_spec(spec: &ProblemSpec) -> SquaredLossScalars {
    bisect_tau(|t| spec.delta(t))
}

/// Exact `(h_mu, h_v)` from the resolvent Gram entries.
///
/// Solves `(I + τGK)h = τGd` with `d = (1-2φ, φα)` and
/// `K = [[1, -φα], [-φα, φα²]]` by Cramer's rule.
pub fn projections_from_gram(g: GramEntries, tau: f64, phi: f64, alpha: f64) -> Result<(f64, f64)> {
    let det = g.determinant();
    if det <= GRAM_DEGENERACY_TOL * g.g_mumu * g.g_vv {
        return Err(Error::DegenerateGram { det });
    }
    let pa = phi * alpha;
    let cross = tau * phi * (1.0 - phi) * alpha * det;
    let denom = projection_denominator(g, tau, phi, alpha);
    let h_mu = tau * ((1.0 - 2.0 * phi) * g.g_mumu + pa * g.g_muv + alpha * cross) / denom;
    let h_v = tau * ((1.0 - 2.0 * phi) * g.g_muv + pa * g.g_vv + 2.0 * cross) / denom;
    Ok((h_mu, h_v))
}

/// `D(α) = det(I + τGK)`.
pub fn projection_denominator(g: GramEntries, tau: f64, phi: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    1.0 + tau * g.g_mumu - 2.0 * tau * phi * alpha * g.g_muv
        + tau * phi * a2 * g.g_vv
        + tau * tau * phi * (1.0 - phi) * a2 * g.determinant()
}

pub fn projections_exact(spec: &ProblemSpec, scalars: SquaredLossScalars) -> Result<(f64, f64)> {
    projections_from_gram(spec.gram(scalars.tau), scalars.tau, spec.phi(), spec.alpha())
}

/// Peak of `h_v` in `α`: the exact positive root and its leading-order value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStar {
    pub exact: f64,
    pub leading_order: f64,
}

impl AlphaStar {
    pub fn gap(&self) -> f64 {
        (self.exact - self.leading_order).abs()
    }
}

/// Positive root of `F(α) = A B - n d - 2 n C α - A C α²`, from writing
/// `h_v = (n + Aα)/(B + dα + Cα²)`.
pub fn alpha_star_from_gram(g: GramEntries, tau: f64, phi: f64) -> Result<AlphaStar> {
    if !(phi > 0.0 && phi < 0.5) {
        return Err(invalid("phi", format!("peak needs phi in (0, 0.5), got {phi}")));
    }
    let det = g.determinant();
    if det <= GRAM_DEGENERACY_TOL * g.g_mumu * g.g_vv {
        return Err(Error::DegenerateGram { det });
    }
    let (m, q, eps) = (g.g_mumu, g.g_vv, g.g_muv);
    let n_e = tau * (1.0 - 2.0 * phi) * eps;
    let b = 1.0 + tau * m;
    let d_e = -2.0 * tau * phi * eps;
    let a_e = tau * phi * (q + 2.0 * tau * (1.0 - phi) * det);
    let c_e = tau * phi * (q + tau * (1.0 - phi) * det);
    let r = n_e / a_e;
    let exact = -r + (r * r + (b - n_e * d_e / a_e) / c_e).sqrt();
    let c0 = tau * phi * q * (1.0 + tau * (1.0 - phi) * m);
    Ok(AlphaStar {
        exact,
        leading_order: (b / c0).sqrt(),
    })
}

pub fn alpha_star_exact(spec: &ProblemSpec, scalars: SquaredLossScalars) -> Result<AlphaStar> {
    alpha_star_from_gram(spec.gram(scalars.tau), scalars.tau, spec.phi())
}

fn check_pos(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {x}")))
    }
}

/// Coefficients of the eigenvector-case rational forms.
#[derive(Debug, Clone, Copy)]
struct EigenCoefs {
    a_mu: f64,
    b_v: f64,
    p_mu: f64,
    q_mu: f64,
}

fn eigen_coefs(norm_mu_sq: f64, s_mu_sq: f64, s_v_sq: f64, lambda: f64, tau: f64, phi: f64) -> EigenCoefs {
    let base = lambda + tau * s_mu_sq;
    EigenCoefs {
        a_mu: base + tau * norm_mu_sq,
        b_v: lambda + tau * s_v_sq,
        p_mu: base + tau * (1.0 - phi) * norm_mu_sq,
        q_mu: base + 2.0 * tau * (1.0 - phi) * norm_mu_sq,
    }
}

/// `(h_mu, h_v)` when μ and v are orthogonal eigenvectors of `C` with
/// eigenvalues `s_mu_sq` and `s_v_sq`.
pub fn projections_eigen(
    norm_mu_sq: f64,
    s_mu_sq: f64,
    s_v_sq: f64,
    lambda: f64,
    tau: f64,
    phi: f64,
    alpha: f64,
) -> Result<(f64, f64)> {
    check_pos("norm_mu_sq", norm_mu_sq)?;
    check_pos("s_mu_sq", s_mu_sq)?;
    check_pos("s_v_sq", s_v_sq)?;
    check_pos("lambda", lambda)?;
    check_pos("tau", tau)?;
    let k = eigen_coefs(norm_mu_sq, s_mu_sq, s_v_sq, lambda, tau, phi);
    let a2 = alpha * alpha;
    let d = k.a_mu * k.b_v + tau * phi * k.p_mu * a2;
    let h_mu = norm_mu_sq * (tau * (1.0 - 2.0 * phi) * k.b_v + tau * tau * phi * (1.0 - phi) * a2) / d;
    let h_v = tau * phi * k.q_mu * alpha / d;
    Ok((h_mu, h_v))
}

/// Peak `α*` of [`projections_eigen`]: `α*² = A_μ B_v / (τ φ P_μ)`.
pub fn alpha_star_eigen(
    norm_mu_sq: f64,
    s_mu_sq: f64,
    s_v_sq: f64,
    lambda: f64,
    tau: f64,
    phi: f64,
) -> Result<f64> {
    check_pos("phi", phi)?;
    let k = eigen_coefs(norm_mu_sq, s_mu_sq, s_v_sq, lambda, tau, phi);
    Ok((k.a_mu * k.b_v / (tau * phi * k.p_mu)).sqrt())
}

/// [`projections_eigen`] with `C = I`.
pub fn projections_isotropic(norm_mu_sq: f64, lambda: f64, tau: f64, phi: f64, alpha: f64) -> Result<(f64, f64)> {
    projections_eigen(norm_mu_sq, 1.0, 1.0, lambda, tau, phi, alpha)
}

/// Leading-order `(∂h_v/∂φ, ∂h_μ/∂φ)` at `g_muv = 0`.
pub fn phi_sensitivity(g_mumu: f64, g_vv: f64, tau: f64, phi: f64, alpha: f64) -> (f64, f64) {
    let (m, q) = (g_mumu, g_vv);
    let a2 = alpha * alpha;
    let d = 1.0 + tau * m + tau * phi * q * (1.0 + tau * (1.0 - phi) * m) * a2;
    let d2 = d * d;
    let dh_v = tau * q * alpha
        * ((1.0 + tau * m) * (1.0 + 2.0 * tau * m * (1.0 - 2.0 * phi)) - phi * phi * tau * tau * m * q * a2)
        / d2;
    let bracket = 2.0
        + 2.0 * tau * m
        + 2.0 * tau * q * a2 * phi
        + 2.0 * tau * tau * m * q * a2 * phi * phi
        + tau * tau * q * q * a2 * a2 * phi * phi;
    let dh_mu = -m * tau * bracket / d2;
    (dh_v, dh_mu)
}
