//! Margin losses and their proximal channel `f(x) = -L'(prox_{δL}(x))`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossModel {
    /// `½(1-t)²`.
    Squared,
    /// `log(1 + e^{-t})`.
    Logistic,
}

/// Logistic sigmoid without overflow on either tail.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Absolute residual target for the proximal optimality condition.
pub const PROX_TOL: f64 = 1e-15;

impl LossModel {
    pub fn name(self) -> &'static str {
        match self {
            LossModel::Squared => "squared",
            LossModel::Logistic => "logistic",
        }
    }

    pub fn value(self, t: f64) -> f64 {
        match self {
            LossModel::Squared => 0.5 * (1.0 - t).powi(2),
            // softplus(-t)
            LossModel::Logistic => {
                if t > 0.0 {
                    (-t).exp().ln_1p()
                } else {
                    -t + t.exp().ln_1p()
                }
            }
        }
    }

    pub fn d1(self, t: f64) -> f64 {
        match self {
            LossModel::Squared => t - 1.0,
            LossModel::Logistic => -sigmoid(-t),
        }
    }

    pub fn d2(self, t: f64) -> f64 {
        match self {
            LossModel::Squared => 1.0,
            LossModel::Logistic => {
                let p = sigmoid(t);
                p * (1.0 - p)
            }
        }
    }

    pub fn d3(self, t: f64) -> f64 {
        match self {
            LossModel::Squared => 0.0,
            LossModel::Logistic => {
                let p = sigmoid(t);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
        }
    }

    pub fn d4(self, t: f64) -> f64 {
        match self {
            LossModel::Squared => 0.0,
            LossModel::Logistic => {
                let p = sigmoid(t);
                p * (1.0 - p) * (1.0 - 6.0 * p + 6.0 * p * p)
            }
        }
    }

    /// `L(0)`, which fixes the norm bound `‖θ‖² ≤ 2L(0)/λ`.
    pub fn at_zero(self) -> f64 {
        self.value(0.0)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta >= 0.0 {
        Ok(())
    } else {
        Err(invalid("delta", format!("must be finite and >= 0, got {delta}")))
    }
}

/// `argmin_u δL(u) + ½(u - x)²`.
pub fn prox(loss: LossModel, delta: f64, x: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(prox_unchecked(loss, delta, x))
}

pub(crate) fn prox_unchecked(loss: LossModel, delta: f64, x: f64) -> f64 {
    match loss {
        LossModel::Squared => (x + delta) / (1.0 + delta),
        LossModel::Logistic => prox_logistic(delta, x),
    }
}

/// Root of `g(u) = u - x - δσ(-u)`, which lies in `[x, x+δ]`.
fn prox_logistic(delta: f64, x: f64) -> f64 {
    if delta == 0.0 {
        return x;
    }
    let (mut lo, mut hi) = (x, x + delta);
    let mut u = x + delta * sigmoid(-x);
    // Newton steps are accepted only while they at least halve the previous
    // step; otherwise bisect. This rules out the two-cycle Newton can enter
    // when δ is large.
    let mut last_step = hi - lo;
    for _ in 0..200 {
        let s = sigmoid(-u);
        let g = u - x - delta * s;
        if g.abs() <= PROX_TOL {
            break;
        }
        if g < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let dg = 1.0 + delta * s * (1.0 - s);
        let newton = u - g / dg;
        let next = if newton > lo && newton < hi && 2.0 * (newton - u).abs() <= last_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last_step = (next - u).abs();
        if next == u {
            break;
        }
        u = next;
    }
    u
}

/// `f(x) = -L'(prox_{δL}(x))`.
pub fn f_value(loss: LossModel, delta: f64, x: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(-loss.d1(prox_unchecked(loss, delta, x)))
}

/// `f'(x) = -L''(u) / (1 + δL''(u))`, `u = prox_{δL}(x)`.
pub fn f_deriv(loss: LossModel, delta: f64, x: f64) -> Result<f64> {
    check_delta(delta)?;
    let l2 = loss.d2(prox_unchecked(loss, delta, x));
    Ok(-l2 / (1.0 + delta * l2))
}

/// `(f, f')` sharing one proximal solve.
pub(crate) fn f_pair(loss: LossModel, delta: f64, x: f64) -> (f64, f64) {
    let u = prox_unchecked(loss, delta, x);
    let l2 = loss.d2(u);
    (-loss.d1(u), -l2 / (1.0 + delta * l2))
}
