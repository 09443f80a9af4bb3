//! Population risk in the eigenvector case.
//!
//! With `θ = aμ + bv` and μ, v orthogonal eigenvectors of `C`, both class
//! margins are Gaussian with a shared variance
//! `V = a² s_μ² ‖μ‖² + b² s_v²`:
//! benign mean `a‖μ‖²`, poisoned mean `-a‖μ‖² + bα`. Gradients and Hessians
//! use `∂E[L(X)]/∂m = E[L']` and `∂E[L(X)]/∂V = ½E[L'']` for `X ~ N(m, V)`,
//! so everything reduces to quadrature of `L', …, L''''`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::loss::LossModel;
use crate::quadrature::GaussHermite;

pub const POP_GRAD_TOL: f64 = 1e-10;
pub const POP_MAX_ITER: usize = 200;
const POP_NODES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationParams {
    pub norm_mu: f64,
    pub s_mu_sq: f64,
    pub s_v_sq: f64,
    pub lambda: f64,
    pub phi: f64,
    pub alpha: f64,
    pub loss: LossModel,
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("norm_mu", self.norm_mu),
            ("s_mu_sq", self.s_mu_sq),
            ("s_v_sq", self.s_v_sq),
            ("lambda", self.lambda),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {x}")));
            }
        }
        if !(self.phi.is_finite() && (0.0..0.5).contains(&self.phi)) {
            return Err(invalid("phi", format!("must lie in [0, 0.5), got {}", self.phi)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..*self }
    }

    fn r2(&self) -> f64 {
        self.norm_mu * self.norm_mu
    }
}

/// `E[L^{(k)}(X)]`, `k = 0..4`, for `X ~ N(m, V)`.
fn loss_moments(loss: LossModel, m: f64, var: f64, rule: &GaussHermite) -> [f64; 5] {
    let sd = var.max(0.0).sqrt();
    let mut e = [0.0; 5];
    for (x, w) in rule.iter() {
        let t = m + sd * x;
        e[0] += w * loss.value(t);
        e[1] += w * loss.d1(t);
        e[2] += w * loss.d2(t);
        e[3] += w * loss.d3(t);
        e[4] += w * loss.d4(t);
    }
    e
}

/// Value, gradient and Hessian of `E[L(X)]` for `X ~ N(m(θ), V(θ))`, `m` linear.
fn class_terms(e: &[f64; 5], dm: [f64; 2], dv: [f64; 2], d2v: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let grad = [e[1] * dm[0] + 0.5 * e[2] * dv[0], e[1] * dm[1] + 0.5 * e[2] * dv[1]];
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            h[i][j] = e[2] * dm[i] * dm[j]
                + 0.5 * e[3] * (dm[i] * dv[j] + dv[i] * dm[j])
                + 0.25 * e[4] * dv[i] * dv[j];
        }
        h[i][i] += 0.5 * e[2] * d2v[i];
    }
    (e[0], grad, h)
}

struct Objective<'a> {
    p: PopulationParams,
    rule: &'a GaussHermite,
}

impl Objective<'_> {
    fn eval(&self, a: f64, b: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let p = &self.p;
        let r2 = p.r2();
        let var = a * a * p.s_mu_sq * r2 + b * b * p.s_v_sq;
        let dv = [2.0 * a * p.s_mu_sq * r2, 2.0 * b * p.s_v_sq];
        let d2v = [2.0 * p.s_mu_sq * r2, 2.0 * p.s_v_sq];

        let ea = loss_moments(p.loss, a * r2, var, self.rule);
        let (fa, ga, ha) = class_terms(&ea, [r2, 0.0], dv, d2v);
        let (fb, gb, hb) = if p.phi > 0.0 {
            let eb = loss_moments(p.loss, -a * r2 + b * p.alpha, var, self.rule);
            class_terms(&eb, [-r2, p.alpha], dv, d2v)
        } else {
            (0.0, [0.0; 2], [[0.0; 2]; 2])
        };

        let (w1, w2) = (1.0 - p.phi, p.phi);
        let value = w1 * fa + w2 * fb + 0.5 * p.lambda * (a * a * r2 + b * b);
        let grad = [
            w1 * ga[0] + w2 * gb[0] + p.lambda * r2 * a,
            w1 * ga[1] + w2 * gb[1] + p.lambda * b,
        ];
        let mut hess = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                hess[i][j] = w1 * ha[i][j] + w2 * hb[i][j];
            }
        }
        hess[0][0] += p.lambda * r2;
        hess[1][1] += p.lambda;
        (value, grad, hess)
    }
}

fn rule() -> Result<Arc<GaussHermite>> {
    GaussHermite::shared(POP_NODES)
}

/// `(1-φ)E[L(A)] + φE[L(B)] + λ(a²‖μ‖² + b²)/2` at `θ = aμ + bv`.
pub fn population_loss_eigen(a: f64, b: f64, params: &PopulationParams) -> Result<f64> {
    params.validate()?;
    let rule = rule()?;
    Ok(Objective { p: *params, rule: &rule }.eval(a, b).0)
}

/// Gradient of [`population_loss_eigen`] in `(a, b)`.
pub fn population_grad_eigen(a: f64, b: f64, params: &PopulationParams) -> Result<[f64; 2]> {
    params.validate()?;
    let rule = rule()?;
    Ok(Objective { p: *params, rule: &rule }.eval(a, b).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationMinimizer {
    pub a: f64,
    pub b: f64,
    /// `∞`-norm of the gradient at `(a, b)`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest Hessian eigenvalue seen over all iterates.
    pub min_hessian_eig: f64,
}

fn min_eig(h: [[f64; 2]; 2]) -> f64 {
    let mid = 0.5 * (h[0][0] + h[1][1]);
    let rad = (0.25 * (h[0][0] - h[1][1]).powi(2) + h[0][1] * h[1][0]).sqrt();
    mid - rad
}

/// Newton with Armijo backtracking on the strongly convex objective.
pub fn minimize_population_eigen(params: &PopulationParams) -> Result<PopulationMinimizer> {
    params.validate()?;
    let rule = rule()?;
    let obj = Objective { p: *params, rule: &rule };
    let (mut a, mut b) = (0.0, 0.0);
    let (mut f, mut g, mut h) = obj.eval(a, b);
    let mut min_hessian_eig = f64::INFINITY;
    let mut iterations = 0;
    let mut grad_norm = g[0].abs().max(g[1].abs());
    while grad_norm > POP_GRAD_TOL && iterations < POP_MAX_ITER {
        iterations += 1;
        min_hessian_eig = min_hessian_eig.min(min_eig(h));
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let step = [
            -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
            -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
        ];
        let slope = g[0] * step[0] + g[1] * step[1];
        let mut t = 1.0;
        loop {
            let (na, nb) = (a + t * step[0], b + t * step[1]);
            let trial = obj.eval(na, nb);
            // Near the optimum f stalls at rounding level; fall back to gradient decrease.
            let gn = trial.1[0].abs().max(trial.1[1].abs());
            if trial.0 <= f + 1e-4 * t * slope || (gn < grad_norm && trial.0 <= f + 1e-14 * f.abs()) || t < 1e-12 {
                a = na;
                b = nb;
                (f, g, h) = trial;
                break;
            }
            t *= 0.5;
        }
        grad_norm = g[0].abs().max(g[1].abs());
    }
    min_hessian_eig = min_hessian_eig.min(min_eig(h));
    Ok(PopulationMinimizer {
        a,
        b,
        grad_norm,
        iterations,
        converged: grad_norm <= POP_GRAD_TOL,
        min_hessian_eig,
    })
}

/// Minimizer of `(1-φ)E[L(A)] + λa²‖μ‖²/2`, `A ~ N(a‖μ‖², a² s_μ² ‖μ‖²)`.
pub fn benign_minimizer_eigen(params: &PopulationParams) -> Result<f64> {
    params.validate()?;
    let rule = rule()?;
    let p = *params;
    let r2 = p.r2();
    let w = 1.0 - p.phi;
    let eval = |a: f64| -> (f64, f64, f64) {
        let var = a * a * p.s_mu_sq * r2;
        let e = loss_moments(p.loss, a * r2, var, &rule);
        let (v, g, h) = class_terms(&e, [r2, 0.0], [2.0 * a * p.s_mu_sq * r2, 0.0], [2.0 * p.s_mu_sq * r2, 0.0]);
        (
            w * v + 0.5 * p.lambda * a * a * r2,
            w * g[0] + p.lambda * r2 * a,
            w * h[0][0] + p.lambda * r2,
        )
    };
    let mut a = 0.0;
    let (mut f, mut g, mut h) = eval(a);
    for _ in 0..POP_MAX_ITER {
        if g.abs() <= POP_GRAD_TOL {
            break;
        }
        let step = -g / h;
        let mut t = 1.0;
        loop {
            let trial = eval(a + t * step);
            if trial.0 <= f + 1e-4 * t * g * step || trial.1.abs() < g.abs() || t < 1e-12 {
                a += t * step;
                (f, g, h) = trial;
                break;
            }
            t *= 0.5;
        }
    }
    if !(a > 0.0) {
        return Err(invalid("params", format!("benign minimizer must be positive, got {a}")));
    }
    Ok(a)
}

/// `μᵀ∇L_pop` at `θ_ben = a_ben μ`.
///
/// The benign part is stationary there, so only the poisoned term remains:
/// `φ(-‖μ‖² E[L'(B)] + a_ben s_μ² ‖μ‖² E[L''(B)])` with
/// `B ~ N(-a_ben‖μ‖², a_ben² s_μ² ‖μ‖²)`, independent of `α`.
pub fn one_step_gradient(params: &PopulationParams) -> Result<f64> {
    let a = benign_minimizer_eigen(params)?;
    let rule = rule()?;
    let r2 = params.r2();
    let e = loss_moments(params.loss, -a * r2, a * a * params.s_mu_sq * r2, &rule);
    Ok(params.phi * (-r2 * e[1] + a * params.s_mu_sq * r2 * e[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn logistic(alpha: f64) -> PopulationParams {
        PopulationParams {
            norm_mu: 1.0,
            s_mu_sq: 1.0,
            s_v_sq: 1.0,
            lambda: 0.1,
            phi: 0.2,
            alpha,
            loss: LossModel::Logistic,
        }
    }

    #[test]
    fn origin_values() {
        let p = logistic(1.0);
        assert_relative_eq!(population_loss_eigen(0.0, 0.0, &p).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        let q = PopulationParams { loss: LossModel::Squared, ..p };
        assert_relative_eq!(population_loss_eigen(0.0, 0.0, &q).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn squared_benign_closed_form() {
        let p = PopulationParams {
            norm_mu: 1.0,
            s_mu_sq: 1.0,
            s_v_sq: 1.0,
            lambda: 0.5,
            phi: 0.0,
            alpha: 0.0,
            loss: LossModel::Squared,
        };
        assert_relative_eq!(benign_minimizer_eigen(&p).unwrap(), 0.4, epsilon = 1e-10);
        let p = PopulationParams { norm_mu: 1.3, s_mu_sq: 0.7, phi: 0.2, ..p };
        let r2: f64 = 1.69;
        let closed = 0.8 / (0.8 * (r2 + 0.7) + 0.5);
        assert_relative_eq!(benign_minimizer_eigen(&p).unwrap(), closed, epsilon = 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = logistic(3.0);
        let h = 1e-6;
        for &(a, b) in &[(0.3, 0.2), (1.0, -0.4), (0.0, 0.0)] {
            let g = population_grad_eigen(a, b, &p).unwrap();
            let fa = (population_loss_eigen(a + h, b, &p).unwrap() - population_loss_eigen(a - h, b, &p).unwrap()) / (2.0 * h);
            let fb = (population_loss_eigen(a, b + h, &p).unwrap() - population_loss_eigen(a, b - h, &p).unwrap()) / (2.0 * h);
            assert!((g[0] - fa).abs() < 1e-8 && (g[1] - fb).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_cases_have_zero_trigger_coefficient() {
        let r = minimize_population_eigen(&logistic(0.0)).unwrap();
        assert!(r.converged && r.b.abs() < 1e-12);
        let p0 = PopulationParams { phi: 0.0, ..logistic(4.0) };
        let r = minimize_population_eigen(&p0).unwrap();
        assert!(r.b.abs() < 1e-12);
        assert_relative_eq!(r.a, benign_minimizer_eigen(&p0).unwrap(), epsilon = 1e-9);
        assert!(r.a > 0.0);
    }

    #[test]
    fn heavy_ridge_shrinks_to_origin() {
        let p = PopulationParams { lambda: 1e6, ..logistic(2.0) };
        let r = minimize_population_eigen(&p).unwrap();
        assert!(r.converged && r.a.abs() < 1e-5 && r.b.abs() < 1e-5);
        assert!(benign_minimizer_eigen(&p).unwrap() < 1e-5);
    }

    #[test]
    fn hessian_stays_strongly_convex() {
        for alpha in [0.0, 1.0, 5.0, 30.0] {
            let p = logistic(alpha);
            let r = minimize_population_eigen(&p).unwrap();
            assert!(r.min_hessian_eig >= p.lambda * p.r2().min(1.0) - 1e-9);
        }
    }

    #[test]
    fn one_step_gradient_against_finite_difference() {
        for alpha in [0.0, 2.0, 10.0] {
            let p = logistic(alpha);
            let a = benign_minimizer_eigen(&p).unwrap();
            let h = 1e-6;
            let fd = (population_loss_eigen(a + h, 0.0, &p).unwrap() - population_loss_eigen(a - h, 0.0, &p).unwrap()) / (2.0 * h);
            let g = one_step_gradient(&p).unwrap();
            assert!((g - fd).abs() < 1e-6, "{g} vs {fd}");
            assert!(g > 0.0);
        }
        let tiny = PopulationParams { phi: 1e-9, ..logistic(1.0) };
        assert!(one_step_gradient(&tiny).unwrap().abs() < 1e-8);
    }
}
