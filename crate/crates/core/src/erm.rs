//! Poisoned-mixture data generation, regularized fits and test metrics.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::loss::{sigmoid, LossModel};
use crate::metrics::std_normal_cdf;
use crate::spectral::ProblemSpec;

pub const RIDGE_RESIDUAL_TOL: f64 = 1e-10;
pub const LOGISTIC_GRAD_TOL: f64 = 1e-9;
pub const LOGISTIC_MAX_ITER: usize = 500;

/// Independent RNG streams derived from one base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Data = 1,
    Poison = 2,
    Test = 3,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the `(base, rep, phase)` stream.
pub fn stream_seed(base_seed: u64, rep: u64, phase: Phase) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ rep) ^ phase as u64)
}

pub fn stream_rng(base_seed: u64, rep: u64, phase: Phase) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base_seed, rep, phase))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    /// `n × p`, one sample per row.
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub poisoned_mask: Vec<bool>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn poisoned_count(&self) -> usize {
        self.poisoned_mask.iter().filter(|&&m| m).count()
    }
}

/// Rows `z_i = y_i x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbedDataset {
    pub z: DMatrix<f64>,
}

/// `y_i` uniform on `{±1}`, `x_i ~ N(y_i μ, C)`.
pub fn sample_clean<R: Rng + ?Sized>(spec: &ProblemSpec, n: usize, rng: &mut R) -> RawDataset {
    let p = spec.p();
    let mu = spec.mu();
    let mut features = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut noise = vec![0.0; p];
    for i in 0..n {
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        spec.cov().sample_noise(rng, &mut noise);
        for j in 0..p {
            features[(i, j)] = y * mu[j] + noise[j];
        }
        labels.push(y);
    }
    RawDataset {
        features,
        labels,
        poisoned_mask: vec![false; n],
    }
}

/// `round(φn)` with ties to even.
pub fn poison_count(phi: f64, n: usize) -> usize {
    (phi * n as f64).round_ties_even() as usize
}

/// Adds `αv` to `round(φn)` negatives drawn without replacement and flips
/// their labels to `+1`.
pub fn poison<R: Rng + ?Sized>(
    ds: &RawDataset,
    phi: f64,
    alpha: f64,
    v: &DVector<f64>,
    rng: &mut R,
) -> Result<RawDataset> {
    if v.len() != ds.features.ncols() {
        return Err(Error::DimensionMismatch {
            expected: ds.features.ncols(),
            got: v.len(),
            context: "trigger vector",
        });
    }
    let k = poison_count(phi, ds.len());
    let negatives: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] < 0.0 && !ds.poisoned_mask[i]).collect();
    if negatives.len() < k {
        return Err(Error::InsufficientNegatives {
            needed: k,
            available: negatives.len(),
        });
    }
    let mut out = ds.clone();
    for pos in sample(rng, negatives.len(), k).into_iter() {
        let i = negatives[pos];
        for j in 0..v.len() {
            out.features[(i, j)] += alpha * v[j];
        }
        out.labels[i] = 1.0;
        out.poisoned_mask[i] = true;
    }
    Ok(out)
}

pub fn absorb(ds: &RawDataset) -> AbsorbedDataset {
    let mut z = ds.features.clone();
    for (i, &y) in ds.labels.iter().enumerate() {
        if y < 0.0 {
            z.row_mut(i).neg_mut();
        }
    }
    AbsorbedDataset { z }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(invalid("lambda", format!("must be finite and > 0, got {lambda}")))
    }
}

/// Solves `(ZᵀZ/n + λI)θ = z̄`.
pub fn ridge_fit(data: &AbsorbedDataset, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let z = &data.z;
    let n = z.nrows() as f64;
    let p = z.ncols();
    let mut a = z.tr_mul(z) / n;
    for i in 0..p {
        a[(i, i)] += lambda;
    }
    let zbar = z.row_sum().transpose() / n;
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("ridge normal equations".into()))?;
    let mut theta = chol.solve(&zbar);
    // One step of iterative refinement.
    let defect = &zbar - &a * &theta;
    theta += chol.solve(&defect);
    let defect = (&zbar - &a * &theta).amax();
    if defect > RIDGE_RESIDUAL_TOL * zbar.amax().max(1.0) {
        return Err(Error::NotConverged {
            residual: defect,
            iterations: 2,
        });
    }
    Ok(theta)
}

/// `(1/n) Σ L(z_iᵀθ) + λ/2 ‖θ‖²`.
pub fn erm_objective(data: &AbsorbedDataset, loss: LossModel, lambda: f64, theta: &DVector<f64>) -> f64 {
    let margins = &data.z * theta;
    let n = margins.len() as f64;
    margins.iter().map(|&t| loss.value(t)).sum::<f64>() / n + 0.5 * lambda * theta.norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: DVector<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Damped Newton with Armijo backtracking for the logistic objective.
pub fn logistic_fit(data: &AbsorbedDataset, lambda: f64, tol: f64) -> Result<FitResult> {
    check_lambda(lambda)?;
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be > 0"));
    }
    let z = &data.z;
    let (n, p) = (z.nrows(), z.ncols());
    let nf = n as f64;
    let loss = LossModel::Logistic;
    let mut theta = DVector::zeros(p);
    let mut obj = erm_objective(data, loss, lambda, &theta);
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let margins = z * &theta;
        // -L'(t) = σ(-t), L''(t) = σ(t)σ(-t).
        let s: DVector<f64> = margins.map(|t| sigmoid(-t));
        let grad = -(z.tr_mul(&s)) / nf + &theta * lambda;
        grad_norm = grad.amax();
        if grad_norm <= tol || iterations >= LOGISTIC_MAX_ITER {
            break;
        }
        iterations += 1;
        let mut weighted = z.clone();
        for i in 0..n {
            let w = (s[i] * (1.0 - s[i])).sqrt();
            weighted.row_mut(i).scale_mut(w);
        }
        let mut hess = weighted.tr_mul(&weighted) / nf;
        for i in 0..p {
            hess[(i, i)] += lambda;
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("logistic Hessian".into()))?
            .solve(&(-&grad));
        let slope = grad.dot(&step);
        // A predicted decrease below the objective's rounding cannot be
        // certified by Armijo; inside that region the full Newton step is taken.
        let unresolved = -slope <= 1e-14 * obj.abs().max(1.0);
        let mut t = 1.0;
        loop {
            let trial = &theta + &step * t;
            let f = erm_objective(data, loss, lambda, &trial);
            if unresolved || f <= obj + 1e-4 * t * slope || t < 1e-10 {
                theta = trial;
                obj = f;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(FitResult {
        theta,
        iterations,
        grad_norm,
        converged: grad_norm <= tol,
    })
}

/// Clean accuracy and ASR of `θ`, exact under the Gaussian test law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub clean_acc: f64,
    pub asr: f64,
    /// Set when `θᵀCθ = 0`; both metrics are then reported as 0.5.
    pub degenerate: bool,
}

pub fn evaluate_analytic(theta: &DVector<f64>, spec: &ProblemSpec, alpha_test: f64) -> Result<Evaluation> {
    let var = spec.cov().quad_form(theta)?;
    if !(var > 0.0) {
        return Ok(Evaluation {
            clean_acc: 0.5,
            asr: 0.5,
            degenerate: true,
        });
    }
    let sd = var.sqrt();
    let t_mu = theta.dot(spec.mu());
    let t_v = theta.dot(spec.v());
    Ok(Evaluation {
        clean_acc: std_normal_cdf(t_mu / sd),
        asr: std_normal_cdf((alpha_test * t_v - t_mu) / sd),
        degenerate: false,
    })
}

/// `1` if `score > 0`, `0` if `< 0`, a fair coin at exactly `0`.
fn positive_vote<R: Rng + ?Sized>(score: f64, rng: &mut R) -> bool {
    if score == 0.0 {
        rng.random::<bool>()
    } else {
        score > 0.0
    }
}

/// Monte Carlo estimate of [`evaluate_analytic`] on `n_test` fresh clean and
/// `n_test` fresh triggered negatives.
pub fn evaluate_empirical<R: Rng + ?Sized>(
    theta: &DVector<f64>,
    spec: &ProblemSpec,
    alpha_test: f64,
    n_test: usize,
    rng: &mut R,
) -> Result<Evaluation> {
    if n_test == 0 {
        return Err(invalid("n_test", "must be >= 1"));
    }
    if theta.len() != spec.p() {
        return Err(Error::DimensionMismatch {
            expected: spec.p(),
            got: theta.len(),
            context: "classifier",
        });
    }
    let p = spec.p();
    let t_mu = theta.dot(spec.mu());
    let t_v = theta.dot(spec.v());
    let mut noise = vec![0.0; p];
    let mut correct = 0usize;
    for _ in 0..n_test {
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        spec.cov().sample_noise(rng, &mut noise);
        let score = y * t_mu + theta.iter().zip(&noise).map(|(a, b)| a * b).sum::<f64>();
        if positive_vote(score, rng) == (y > 0.0) {
            correct += 1;
        }
    }
    let mut hits = 0usize;
    for _ in 0..n_test {
        spec.cov().sample_noise(rng, &mut noise);
        let score = -t_mu + alpha_test * t_v + theta.iter().zip(&noise).map(|(a, b)| a * b).sum::<f64>();
        if positive_vote(score, rng) {
            hits += 1;
        }
    }
    Ok(Evaluation {
        clean_acc: correct as f64 / n_test as f64,
        asr: hits as f64 / n_test as f64,
        degenerate: theta.iter().all(|&x| x == 0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Analytic,
    Empirical { n_test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErmRunResult {
    pub theta_mu: f64,
    pub theta_v: f64,
    pub theta_var: f64,
    pub theta_norm_sq: f64,
    pub clean_acc: f64,
    pub asr: f64,
    pub solver_iters: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub seed: u64,
}

/// Generates, poisons and fits one replicate, then evaluates it.
pub fn run_erm_rep(
    spec: &ProblemSpec,
    loss: LossModel,
    base_seed: u64,
    rep: u64,
    alpha_test: f64,
    eval: EvalMode,
) -> Result<ErmRunResult> {
    let mut data_rng = stream_rng(base_seed, rep, Phase::Data);
    let mut poison_rng = stream_rng(base_seed, rep, Phase::Poison);
    let clean = sample_clean(spec, spec.n(), &mut data_rng);
    let poisoned = poison(&clean, spec.phi(), spec.alpha(), spec.v(), &mut poison_rng)?;
    let z = absorb(&poisoned);
    let fit = match loss {
        LossModel::Squared => {
            let theta = ridge_fit(&z, spec.lambda())?;
            FitResult {
                theta,
                iterations: 1,
                grad_norm: 0.0,
                converged: true,
            }
        }
        LossModel::Logistic => logistic_fit(&z, spec.lambda(), LOGISTIC_GRAD_TOL)?,
    };
    let theta = &fit.theta;
    let ev = match eval {
        EvalMode::Analytic => evaluate_analytic(theta, spec, alpha_test)?,
        EvalMode::Empirical { n_test } => {
            let mut rng = stream_rng(base_seed, rep, Phase::Test);
            evaluate_empirical(theta, spec, alpha_test, n_test, &mut rng)?
        }
    };
    Ok(ErmRunResult {
        theta_mu: theta.dot(spec.mu()),
        theta_v: theta.dot(spec.v()),
        theta_var: spec.cov().quad_form(theta)?,
        theta_norm_sq: theta.norm_squared(),
        clean_acc: ev.clean_acc,
        asr: ev.asr,
        solver_iters: fit.iterations,
        grad_norm: fit.grad_norm,
        converged: fit.converged,
        seed: base_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::CovarianceModel;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn iso(p: usize, n: usize, alpha: f64, phi: f64, lambda: f64) -> ProblemSpec {
        let cov = Arc::new(CovarianceModel::isotropic(1.0, p).unwrap());
        ProblemSpec::structured(cov, 1.0, alpha, phi, lambda, n).unwrap()
    }

    #[test]
    fn absorbed_mean_matches_mu() {
        let spec = iso(5, 100_000, 0.0, 0.1, 0.5);
        let mut rng = stream_rng(7, 0, Phase::Data);
        let ds = sample_clean(&spec, 100_000, &mut rng);
        let z = absorb(&ds);
        let mean = z.z.row_sum() / 100_000.0;
        for j in 0..5 {
            assert!((mean[j] - spec.mu()[j]).abs() < 4.0 / (100_000f64).sqrt());
        }
    }

    #[test]
    fn residual_covariance_is_near_identity() {
        let (p, n) = (50, 100_000);
        let spec = iso(p, n, 0.0, 0.1, 0.5);
        let mut rng = stream_rng(11, 0, Phase::Data);
        let ds = sample_clean(&spec, n, &mut rng);
        let mut resid = ds.features.clone();
        for i in 0..n {
            let y = ds.labels[i];
            for j in 0..p {
                resid[(i, j)] -= y * spec.mu()[j];
            }
        }
        let cov = resid.tr_mul(&resid) / n as f64 - DMatrix::identity(p, p);
        let op = cov.symmetric_eigen().eigenvalues.amax();
        // Operator-norm deviation concentrates at about 2√(p/n).
        assert!(op < 3.0 * (p as f64 / n as f64).sqrt(), "{op}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = iso(4, 50, 1.0, 0.2, 0.5);
        let a = sample_clean(&spec, 50, &mut stream_rng(3, 1, Phase::Data));
        let b = sample_clean(&spec, 50, &mut stream_rng(3, 1, Phase::Data));
        assert_eq!(a, b);
        assert_ne!(stream_seed(3, 1, Phase::Data), stream_seed(3, 1, Phase::Poison));
        assert_ne!(stream_seed(3, 1, Phase::Data), stream_seed(3, 2, Phase::Data));
    }

    #[test]
    fn poisoning_bookkeeping() {
        let spec = iso(6, 100, 2.5, 0.05, 0.5);
        let clean = sample_clean(&spec, 100, &mut stream_rng(1, 0, Phase::Data));
        let pois = poison(&clean, 0.05, 2.5, spec.v(), &mut stream_rng(1, 0, Phase::Poison)).unwrap();
        assert_eq!(pois.poisoned_count(), 5);
        for i in 0..100 {
            if pois.poisoned_mask[i] {
                assert_eq!(clean.labels[i], -1.0);
                assert_eq!(pois.labels[i], 1.0);
                let d = (pois.features.row(i) - clean.features.row(i)).norm();
                assert_relative_eq!(d, 2.5, epsilon = 1e-12);
            } else {
                assert_eq!(pois.features.row(i), clean.features.row(i));
                assert_eq!(pois.labels[i], clean.labels[i]);
            }
        }

        let flip = poison(&clean, 0.05, 0.0, spec.v(), &mut stream_rng(1, 0, Phase::Poison)).unwrap();
        assert_eq!(flip.features, clean.features);
        assert_eq!(flip.poisoned_count(), 5);

        let none = poison(&clean, 0.004, 3.0, spec.v(), &mut stream_rng(1, 0, Phase::Poison)).unwrap();
        assert_eq!(none, clean);

        assert!(matches!(
            poison(&clean, 0.9, 1.0, spec.v(), &mut stream_rng(1, 0, Phase::Poison)),
            Err(Error::InsufficientNegatives { .. })
        ));
        assert_eq!(poison_count(0.025, 100), 2);
        assert_eq!(poison_count(0.035, 100), 4);
    }

    #[test]
    fn ridge_examples() {
        let z = AbsorbedDataset {
            z: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        };
        let th = ridge_fit(&z, 1.0).unwrap();
        assert_relative_eq!(th[0], 0.5, epsilon = 1e-15);
        assert_eq!(th[1], 0.0);

        let spec = iso(8, 40, 1.0, 0.1, 1e6);
        let ds = absorb(&sample_clean(&spec, 40, &mut stream_rng(2, 0, Phase::Data)));
        let th = ridge_fit(&ds, 1e6).unwrap();
        let zbar = ds.z.row_sum().transpose() / 40.0;
        assert!(th.norm() <= 2e-6 * zbar.norm());
    }

    #[test]
    fn logistic_fit_properties() {
        let spec = iso(10, 200, 1.5, 0.1, 0.3);
        let clean = sample_clean(&spec, 200, &mut stream_rng(5, 0, Phase::Data));
        let z = absorb(&poison(&clean, 0.1, 1.5, spec.v(), &mut stream_rng(5, 0, Phase::Poison)).unwrap());
        let fit = logistic_fit(&z, 0.3, 1e-9).unwrap();
        assert!(fit.converged && fit.grad_norm <= 1e-9);
        assert!(fit.theta.norm_squared() <= 2.0 * std::f64::consts::LN_2 / 0.3);
        let ridge = ridge_fit(&z, 0.3).unwrap();
        assert!(
            erm_objective(&z, LossModel::Logistic, 0.3, &fit.theta)
                <= erm_objective(&z, LossModel::Logistic, 0.3, &ridge)
        );

        let mut c = DMatrix::zeros(7, 4);
        for i in 0..7 {
            c[(i, 0)] = 1.7;
        }
        let fit = logistic_fit(&AbsorbedDataset { z: c }, 0.2, 1e-9).unwrap();
        assert!(fit.theta[0] > 0.0);
        for j in 1..4 {
            assert_eq!(fit.theta[j], 0.0);
        }
    }

    #[test]
    fn analytic_evaluation_examples() {
        let spec = iso(3, 10, 1.0, 0.1, 0.5);
        let orth = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert_eq!(evaluate_analytic(&orth, &spec, 0.5).unwrap().clean_acc, 0.5);
        // θᵀμ = 1, θᵀv = 2, α_test = 0.5 → ASR 0.5.
        let th = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        assert_relative_eq!(evaluate_analytic(&th, &spec, 0.5).unwrap().asr, 0.5);
        let th = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_relative_eq!(evaluate_analytic(&th, &spec, 0.5).unwrap().clean_acc, 0.841344746068543, epsilon = 1e-14);
        let zero = DVector::zeros(3);
        let e = evaluate_analytic(&zero, &spec, 0.5).unwrap();
        assert!(e.degenerate && e.clean_acc == 0.5 && e.asr == 0.5);
    }

    #[test]
    fn empirical_matches_analytic() {
        let spec = iso(4, 10, 1.0, 0.1, 0.5);
        let th = DVector::from_vec(vec![0.8, 0.6, -0.2, 0.1]);
        let exact = evaluate_analytic(&th, &spec, 0.5).unwrap();
        let n = 200_000;
        let emp = evaluate_empirical(&th, &spec, 0.5, n, &mut stream_rng(9, 0, Phase::Test)).unwrap();
        let se = |q: f64| (q * (1.0 - q) / n as f64).sqrt();
        assert!((emp.clean_acc - exact.clean_acc).abs() <= 4.0 * se(exact.clean_acc));
        assert!((emp.asr - exact.asr).abs() <= 4.0 * se(exact.asr));

        let again = evaluate_empirical(&th, &spec, 0.5, 1000, &mut stream_rng(9, 1, Phase::Test)).unwrap();
        let twice = evaluate_empirical(&th, &spec, 0.5, 1000, &mut stream_rng(9, 1, Phase::Test)).unwrap();
        assert_eq!(again, twice);

        let zero = DVector::zeros(4);
        let e = evaluate_empirical(&zero, &spec, 0.5, 10_000, &mut stream_rng(9, 2, Phase::Test)).unwrap();
        assert!((e.clean_acc - 0.5).abs() < 4.0 * se(0.5) * (n as f64 / 10_000.0).sqrt());
        assert!(evaluate_empirical(&zero, &spec, 0.5, 0, &mut stream_rng(9, 2, Phase::Test)).is_err());
    }
}
