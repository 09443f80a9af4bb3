//! Accuracy and attack metrics, and the split of the margin variance.

use std::fmt;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fixed_point::FixedPointState;
use crate::spectral::ProblemSpec;

/// `Φ(x) = ½ erfc(-x/√2)`, clamped to `{0, 1}` beyond `±38`.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 38.0 {
        return 1.0;
    }
    if x < -38.0 {
        return 0.0;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `Φ(m/√var)`.
pub fn clean_accuracy(m: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(invalid("var", format!("must be > 0, got {var}")));
    }
    Ok(std_normal_cdf(m / var.sqrt()))
}

/// `Φ((α_test h_v - h_μ)/σ)`.
pub fn attack_success(h_mu: f64, h_v: f64, alpha_test: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    Ok(std_normal_cdf((alpha_test * h_v - h_mu) / sigma))
}

/// `σ² = mean + trigger + cross + ζ` with `A = R²C`:
/// mean `(η₁-η₂)² μᵀAμ`, trigger `η₂²α² vᵀAv`, cross `2(η₁-η₂)η₂α μᵀAv`,
/// and `ζ = γ/n tr[AC]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    pub mean_term: f64,
    pub trigger_term: f64,
    pub cross_term: f64,
    pub noise_floor: f64,
    pub total: f64,
    /// Same order as the terms above.
    pub percentages: [f64; 4],
}

pub const DECOMPOSITION_LABELS: [&str; 4] = [
    "(eta1-eta2)^2 mu^T A mu",
    "eta2^2 alpha^2 v^T A v",
    "2(eta1-eta2) eta2 alpha mu^T A v",
    "zeta = gamma/n tr[AC]",
];

impl VarianceDecomposition {
    pub fn terms(&self) -> [f64; 4] {
        [self.mean_term, self.trigger_term, self.cross_term, self.noise_floor]
    }

    /// `total` minus `ζ`: the information-limit variance.
    pub fn without_noise_floor(&self) -> f64 {
        self.mean_term + self.trigger_term + self.cross_term
    }
}

impl fmt::Display for VarianceDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = DECOMPOSITION_LABELS.iter().map(|l| l.len()).max().unwrap_or(0);
        writeln!(f, "{:<width$}  {:>14}  {:>15}", "Component", "Value", "%")?;
        for ((label, value), pct) in DECOMPOSITION_LABELS.iter().zip(self.terms()).zip(self.percentages) {
            writeln!(f, "{label:<width$}  {value:>14.6e}  {pct:>15.10}")?;
        }
        write!(f, "{:<width$}  {:>14.6e}  {:>15.10}", "sigma^2", self.total, 100.0)
    }
}

/// Splits `state.sigma_sq` into the four components above.
pub fn variance_decomposition(state: &FixedPointState, spec: &ProblemSpec) -> Result<VarianceDecomposition> {
    if !state.converged {
        return Err(Error::NotConverged {
            residual: state.residual,
            iterations: state.iterations,
        });
    }
    let a = spec.weighted_gram(state.tau);
    let c_mu = state.eta1 - state.eta2;
    let c_v = state.eta2 * spec.alpha();
    let mean_term = c_mu * c_mu * a.g_mumu;
    let trigger_term = c_v * c_v * a.g_vv;
    let cross_term = 2.0 * c_mu * c_v * a.g_muv;
    let noise_floor = state.gamma * spec.noise_trace(state.tau);
    let total = mean_term + trigger_term + cross_term + noise_floor;
    let pct = |x: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
    Ok(VarianceDecomposition {
        mean_term,
        trigger_term,
        cross_term,
        noise_floor,
        total,
        percentages: [pct(mean_term), pct(trigger_term), pct(cross_term), pct(noise_floor)],
    })
}

/// Clean-accuracy curves with `ζ` and with `ζ` forced to zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCurves {
    pub alpha: Vec<f64>,
    pub with_noise_floor: Vec<f64>,
    pub without_noise_floor: Vec<f64>,
}

/// Evaluates both curves over converged `(spec, state)` pairs, one per `α`.
/// Only `ζ` differs between the curves.
pub fn noise_floor_ablation(points: &[(ProblemSpec, FixedPointState)]) -> Result<AblationCurves> {
    let mut out = AblationCurves {
        alpha: Vec::with_capacity(points.len()),
        with_noise_floor: Vec::with_capacity(points.len()),
        without_noise_floor: Vec::with_capacity(points.len()),
    };
    for (spec, state) in points {
        let d = variance_decomposition(state, spec)?;
        let h_mu = state.m1;
        out.alpha.push(spec.alpha());
        out.with_noise_floor.push(clean_accuracy(h_mu, d.total)?);
        out.without_noise_floor.push(clean_accuracy(h_mu, d.without_noise_floor())?);
    }
    Ok(out)
}
