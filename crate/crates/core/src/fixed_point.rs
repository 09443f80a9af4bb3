//! Self-consistent scalar system of the Gaussian proxy for a general convex
//! margin loss.
//!
//! Unknowns are `(τ, γ, η₁, η₂)`; `δ`, `M₁`, `M₂` and `σ²` are functions of
//! them. Each outer sweep recomputes `δ(τ)`, solves the `η` block exactly by
//! a 2-D Newton iteration at fixed `(τ, γ, δ)`, then takes a damped Picard step
//! in `(τ, γ)`. The `η` block must be solved, not relaxed: for large `α` the
//! Picard map in `η` has slope of order `φτα² g_vv`, well beyond any damping.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::loss::{f_pair, LossModel};
use crate::metrics::{attack_success, clean_accuracy};
use crate::quadrature::GaussHermite;
use crate::spectral::{GramEntries, ProblemSpec};

/// Margin above which the poisoned class is treated as fully fit (`η₂ = 0`).
pub const ETA2_GUARD_MARGIN: f64 = 700.0;

const INNER_MAX_ITER: usize = 100;
const INNER_TOL: f64 = 1e-14;

/// Starting point of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitState {
    pub tau: f64,
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub gh_nodes: usize,
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
    /// `None` selects the zero-classifier start `(1, 1, (1-φ)f₀, φf₀)`.
    pub init: Option<InitState>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gh_nodes: 100,
            tol: 1e-10,
            damping: 0.5,
            max_iter: 10_000,
            init: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gh_nodes < 2 {
            return Err(invalid("gh_nodes", "must be >= 2"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid("tol", "must be finite and > 0"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid("damping", "must lie in (0, 1]"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointState {
    pub tau: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub m1: f64,
    pub m2: f64,
    pub sigma_sq: f64,
    /// Max-norm of the last undamped update.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the `M₂ > 700` guard forced `η₂ = 0`.
    pub eta2_clamped: bool,
}

/// Per-class Gaussian expectations of the proximal channel.
#[derive(Debug, Clone, Copy, Default)]
struct ClassMoments {
    f: f64,
    fp: f64,
    fp_xi: f64,
    f2: f64,
}

fn class_moments(loss: LossModel, delta: f64, mean: f64, sigma: f64, rule: &GaussHermite) -> ClassMoments {
    let mut m = ClassMoments::default();
    for (x, w) in rule.iter() {
        let (f, fp) = f_pair(loss, delta, mean + sigma * x);
        m.f += w * f;
        m.fp += w * fp;
        m.fp_xi += w * fp * x;
        m.f2 += w * f * f;
    }
    m
}

/// Quantities fixed during one `η` solve.
struct Frame<'a> {
    loss: LossModel,
    rule: &'a GaussHermite,
    delta: f64,
    g: GramEntries,
    w: GramEntries,
    zeta: f64,
    alpha: f64,
    pi1: f64,
    pi2: f64,
}

#[derive(Debug, Clone, Copy)]
struct Margins {
    m1: f64,
    m2: f64,
    sigma_sq: f64,
}

impl Frame<'_> {
    fn margins(&self, eta1: f64, eta2: f64) -> Margins {
        let c_mu = eta1 - eta2;
        let c_v = eta2 * self.alpha;
        let h_mu = c_mu * self.g.g_mumu + c_v * self.g.g_muv;
        let h_v = c_mu * self.g.g_muv + c_v * self.g.g_vv;
        let sigma_sq = c_mu * c_mu * self.w.g_mumu
            + 2.0 * c_mu * c_v * self.w.g_muv
            + c_v * c_v * self.w.g_vv
            + self.zeta;
        Margins {
            m1: h_mu,
            m2: self.alpha * h_v - h_mu,
            sigma_sq: sigma_sq.max(0.0),
        }
    }

    /// `(T(η), ∂T/∂η, moments, clamped)` where `T_c = π_c E[f(r_c)]`.
    fn map(&self, eta1: f64, eta2: f64) -> (Margins, [ClassMoments; 2], bool) {
        let mg = self.margins(eta1, eta2);
        let sigma = mg.sigma_sq.sqrt();
        let k1 = class_moments(self.loss, self.delta, mg.m1, sigma, self.rule);
        let clamped = mg.m2 > ETA2_GUARD_MARGIN;
        let k2 = if clamped {
            ClassMoments::default()
        } else {
            class_moments(self.loss, self.delta, mg.m2, sigma, self.rule)
        };
        (mg, [k1, k2], clamped)
    }

    /// Jacobian of `η ↦ (π₁E f(r₁), π₂E f(r₂))`.
    fn jacobian(&self, eta1: f64, eta2: f64, mg: Margins, k: &[ClassMoments; 2]) -> [[f64; 2]; 2] {
        let a = self.alpha;
        let g = &self.g;
        let dm1 = [g.g_mumu, -g.g_mumu + a * g.g_muv];
        let dh_v = [g.g_muv, -g.g_muv + a * g.g_vv];
        let dm2 = [a * dh_v[0] - dm1[0], a * dh_v[1] - dm1[1]];
        let c_mu = eta1 - eta2;
        let c_v = eta2 * a;
        let ds_dcmu = 2.0 * (c_mu * self.w.g_mumu + c_v * self.w.g_muv);
        let ds_dcv = 2.0 * (c_mu * self.w.g_muv + c_v * self.w.g_vv);
        let dsig_sq = [ds_dcmu, -ds_dcmu + a * ds_dcv];
        let sigma = mg.sigma_sq.sqrt();
        let dsig = if sigma > 1e-300 {
            [dsig_sq[0] / (2.0 * sigma), dsig_sq[1] / (2.0 * sigma)]
        } else {
            [0.0, 0.0]
        };
        let mut j = [[0.0; 2]; 2];
        for col in 0..2 {
            j[0][col] = self.pi1 * (k[0].fp * dm1[col] + k[0].fp_xi * dsig[col]);
            j[1][col] = self.pi2 * (k[1].fp * dm2[col] + k[1].fp_xi * dsig[col]);
        }
        j
    }

    /// Solves `η = T(η)` by damped Newton, starting from `eta`.
    fn solve_eta(&self, mut eta: [f64; 2]) -> ([f64; 2], bool) {
        let resid = |e: [f64; 2]| -> ([f64; 2], Margins, [ClassMoments; 2], bool) {
            let (mg, k, cl) = self.map(e[0], e[1]);
            ([e[0] - self.pi1 * k[0].f, e[1] - self.pi2 * k[1].f], mg, k, cl)
        };
        let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
        let (mut r, mut mg, mut k, mut clamped) = resid(eta);
        for _ in 0..INNER_MAX_ITER {
            let scale = 1.0 + eta[0].abs().max(eta[1].abs());
            if norm(r) <= INNER_TOL * scale || !norm(r).is_finite() {
                break;
            }
            let jt = self.jacobian(eta[0], eta[1], mg, &k);
            let a11 = 1.0 - jt[0][0];
            let a12 = -jt[0][1];
            let a21 = -jt[1][0];
            let a22 = 1.0 - jt[1][1];
            let det = a11 * a22 - a12 * a21;
            let step = if det.abs() > 1e-300 && det.is_finite() {
                [-(a22 * r[0] - a12 * r[1]) / det, -(-a21 * r[0] + a11 * r[1]) / det]
            } else {
                [-r[0], -r[1]]
            };
            let r0 = norm(r);
            let mut t = 1.0;
            loop {
                let trial = [eta[0] + t * step[0], eta[1] + t * step[1]];
                let out = resid(trial);
                if norm(out.0) <= (1.0 - 1e-4 * t) * r0 || t < 1e-10 {
                    eta = trial;
                    (r, mg, k, clamped) = out;
                    break;
                }
                t *= 0.5;
            }
        }
        if clamped {
            eta[1] = 0.0;
        }
        (eta, clamped)
    }
}

fn default_init(loss: LossModel, phi: f64) -> InitState {
    let f0 = -loss.d1(0.0);
    InitState {
        tau: 1.0,
        gamma: 1.0,
        eta1: (1.0 - phi) * f0,
        eta2: phi * f0,
    }
}

fn frame<'a>(spec: &ProblemSpec, loss: LossModel, rule: &'a GaussHermite, tau: f64, gamma: f64) -> Frame<'a> {
    Frame {
        loss,
        rule,
        delta: spec.delta(tau),
        g: spec.gram(tau),
        w: spec.weighted_gram(tau),
        zeta: gamma * spec.noise_trace(tau),
        alpha: spec.alpha(),
        pi1: 1.0 - spec.phi(),
        pi2: spec.phi(),
    }
}

/// Solves the system with the process-wide quadrature rule for `cfg.gh_nodes`.
pub fn solve_self_consistent(spec: &ProblemSpec, loss: LossModel, cfg: &SolverConfig) -> Result<FixedPointState> {
    cfg.validate()?;
    let rule: Arc<GaussHermite> = GaussHermite::shared(cfg.gh_nodes)?;
    solve_with_rule(spec, loss, cfg, &rule)
}

/// Non-convergence is reported through `converged = false`, not as an error.
pub fn solve_with_rule(
    spec: &ProblemSpec,
    loss: LossModel,
    cfg: &SolverConfig,
    rule: &GaussHermite,
) -> Result<FixedPointState> {
    cfg.validate()?;
    let init = cfg.init.unwrap_or_else(|| default_init(loss, spec.phi()));
    let (mut tau, mut gamma) = (init.tau, init.gamma);
    let mut eta = [init.eta1, init.eta2];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut clamped = false;

    while iterations < cfg.max_iter {
        iterations += 1;
        let fr = frame(spec, loss, rule, tau, gamma);
        let (eta_new, cl) = fr.solve_eta(eta);
        clamped = cl;
        let (_, k, _) = fr.map(eta_new[0], eta_new[1]);
        let tau_new = -(fr.pi1 * k[0].fp + fr.pi2 * k[1].fp);
        let gamma_new = fr.pi1 * k[0].f2 + fr.pi2 * k[1].f2;
        residual = (tau_new - tau)
            .abs()
            .max((gamma_new - gamma).abs())
            .max((eta_new[0] - eta[0]).abs())
            .max((eta_new[1] - eta[1]).abs());
        if !residual.is_finite() || !(tau_new > 0.0) {
            break;
        }
        eta = eta_new;
        tau += cfg.damping * (tau_new - tau);
        gamma += cfg.damping * (gamma_new - gamma);
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    // Report δ, M, σ² and η consistent with the final (τ, γ).
    let fr = frame(spec, loss, rule, tau, gamma);
    let (eta_fin, cl) = fr.solve_eta(eta);
    let mg = fr.margins(eta_fin[0], eta_fin[1]);
    let state = FixedPointState {
        tau,
        gamma,
        delta: fr.delta,
        eta1: eta_fin[0],
        eta2: eta_fin[1],
        m1: mg.m1,
        m2: mg.m2,
        sigma_sq: mg.sigma_sq,
        residual,
        iterations,
        converged: converged && mg.sigma_sq.is_finite(),
        eta2_clamped: clamped || cl,
    };
    if [state.tau, state.gamma, state.eta1, state.eta2].iter().any(|x| !x.is_finite()) {
        return Ok(FixedPointState {
            converged: false,
            ..state
        });
    }
    Ok(state)
}

/// Residuals of the defining equations `[τ, γ, δ, η₁, η₂]` at `state`.
pub fn equation_residuals(
    state: &FixedPointState,
    spec: &ProblemSpec,
    loss: LossModel,
    rule: &GaussHermite,
) -> [f64; 5] {
    let fr = frame(spec, loss, rule, state.tau, state.gamma);
    let (_, k, _) = fr.map(state.eta1, state.eta2);
    [
        (state.tau + fr.pi1 * k[0].fp + fr.pi2 * k[1].fp).abs(),
        (state.gamma - fr.pi1 * k[0].f2 - fr.pi2 * k[1].f2).abs(),
        (state.delta - fr.delta).abs(),
        (state.eta1 - fr.pi1 * k[0].f).abs(),
        (state.eta2 - fr.pi2 * k[1].f).abs(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryPrediction {
    pub h_mu: f64,
    pub h_v: f64,
    pub sigma_sq: f64,
    pub zeta: f64,
    pub clean_acc: f64,
    pub asr: f64,
    /// `E‖θ̃‖² = ‖R(η₁μ₁+η₂μ₂)‖² + γ/n tr[R²C]`.
    pub norm_sq: f64,
}

/// Alignments and metrics of the proxy described by a converged `state`.
pub fn theory_predictions(state: &FixedPointState, spec: &ProblemSpec, alpha_test: f64) -> Result<TheoryPrediction> {
    if !state.converged {
        return Err(Error::NotConverged {
            residual: state.residual,
            iterations: state.iterations,
        });
    }
    let alpha = spec.alpha();
    let g = spec.gram(state.tau);
    let c_mu = state.eta1 - state.eta2;
    let c_v = state.eta2 * alpha;
    let h_mu = c_mu * g.g_mumu + c_v * g.g_muv;
    let h_v = c_mu * g.g_muv + c_v * g.g_vv;
    if alpha > 0.0 {
        let gap = (h_v - (state.m1 + state.m2) / alpha).abs();
        if gap > 1e-9 * h_v.abs().max(1.0) {
            return Err(Error::NonFinite(format!("alignment identity violated by {gap:e}")));
        }
    }
    let zeta = state.gamma * spec.noise_trace(state.tau);
    let sq = spec.sq_gram(state.tau);
    let norm_sq = c_mu * c_mu * sq.g_mumu + 2.0 * c_mu * c_v * sq.g_muv + c_v * c_v * sq.g_vv
        + state.gamma * spec.sq_trace(state.tau);
    let sigma = state.sigma_sq.sqrt();
    Ok(TheoryPrediction {
        h_mu,
        h_v,
        sigma_sq: state.sigma_sq,
        zeta,
        clean_acc: clean_accuracy(h_mu, state.sigma_sq)?,
        asr: attack_success(h_mu, h_v, alpha_test, sigma)?,
        norm_sq,
    })
}
