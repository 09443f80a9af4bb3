//! Gauss–Hermite rules for Gaussian expectations.
//!
//! Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix and are
//! polished by Newton on the orthonormal Hermite recurrence; weights come from
//! the derivative at the polished node, which keeps the tiny tail weights
//! accurate in relative terms.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Rule for `E[g(ξ)]`, `ξ ~ N(0,1)`, stored in probabilists' scaling:
/// `E[g(ξ)] ≈ Σ w_i g(x_i)` with `Σ w_i = 1`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Orthonormal Hermite values `(p_n(x), p_{n-1}(x))` w.r.t. `e^{-x²}`.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("gh_nodes", format!("need at least 2 nodes, got {n}")));
        }
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut roots: Vec<f64> = jacobi.symmetric_eigen().eigenvalues.iter().copied().collect();
        roots.sort_by(|a, b| a.total_cmp(b));

        let nf = n as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for x0 in roots {
            let mut x = x0;
            for _ in 0..8 {
                let (p, pm1) = hermite_pair(n, x);
                let dp = (2.0 * nf).sqrt() * pm1;
                let step = p / dp;
                x -= step;
                if step.abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, pm1) = hermite_pair(n, x);
            // Physicists' weight 1/(n p_{n-1}²); divide by √π for the normal law.
            let w = 1.0 / (nf * pm1 * pm1) / std::f64::consts::PI.sqrt();
            nodes.push(std::f64::consts::SQRT_2 * x);
            weights.push(w);
        }
        Ok(Self { nodes, weights })
    }

    /// Process-wide rule for `n` nodes, built on first use.
    pub fn shared(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&n) {
            return Ok(Arc::clone(rule));
        }
        let rule = Arc::new(Self::new(n)?);
        cache
            .lock()
            .expect("quadrature cache poisoned")
            .entry(n)
            .or_insert_with(|| Arc::clone(&rule));
        Ok(rule)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Standard-normal nodes and weights.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E[g(M + σξ)]`.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G, mean: f64, sigma: f64) -> f64 {
        self.iter().map(|(x, w)| w * g(mean + sigma * x)).sum()
    }
}

/// `E[g(M + σξ)]`, `ξ ~ N(0,1)`.
pub fn gh_expect<G: Fn(f64) -> f64>(g: G, mean: f64, sigma: f64, rule: &GaussHermite) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", format!("must be >= 0, got {sigma}")));
    }
    Ok(rule.expect(g, mean, sigma))
}
