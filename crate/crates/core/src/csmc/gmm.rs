//! Diagonal-covariance Gaussian mixtures fitted by expectation-maximization,
//! and the critical-frame selection rule built on top of them.

use crate::error::{Result, SsmError};
use crate::numerics::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lower bound on every diagonal variance entry.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Lower bound on every mixture weight.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// A fitted K-component mixture with diagonal covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams<T: Scalar> {
    /// Mixture weights on the K-simplex.
    pub weights: Vec<T>,
    /// `K×d` component means.
    pub means: Tensor<T>,
    /// `K×d` diagonal variances, floored at [`VARIANCE_FLOOR`].
    pub variances: Tensor<T>,
}

impl<T: Scalar> GmmParams<T> {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.rows() != k || self.variances.rows() != k {
            return Err(SsmError::Dimension("mixture component count mismatch".into()));
        }
        if self.means.cols() != self.variances.cols() {
            return Err(SsmError::Dimension("mixture width mismatch".into()));
        }
        let sum: T = self.weights.iter().copied().sum();
        if (sum - T::one()).abs() > T::of(1e-9) {
            return Err(SsmError::Numeric("mixture weights do not sum to 1".into()));
        }
        if self.weights.iter().any(|&w| w < T::of(WEIGHT_FLOOR)) {
            return Err(SsmError::Numeric("mixture weight below floor".into()));
        }
        if self.variances.data().iter().any(|&v| v < T::of(VARIANCE_FLOOR)) {
            return Err(SsmError::Numeric("variance below floor".into()));
        }
        Ok(())
    }
}

/// Result of an EM fit.
#[derive(Clone, Debug)]
pub struct GmmFit<T: Scalar> {
    pub params: GmmParams<T>,
    /// `n×K` posterior responsibilities; rows sum to 1.
    pub responsibilities: Tensor<T>,
    /// Total log-likelihood after each E-step, in iteration order.
    pub log_likelihood_trace: Vec<T>,
}

impl<T: Scalar> GmmFit<T> {
    pub fn final_log_likelihood(&self) -> T {
        *self
            .log_likelihood_trace
            .last()
            .expect("at least one E-step ran")
    }
}

/// Fits a K-component diagonal GMM by EM.
///
/// Seeding is k-means++ style from `seed` unless a warm start with matching
/// shape is supplied. Iterates until the log-likelihood gain drops below
/// `tol` or `max_iters` is reached. A component whose responsibility mass
/// falls under [`WEIGHT_FLOOR`] is re-seeded at the point the mixture
/// currently explains worst, and the fit continues.
pub fn fit_gmm<T: Scalar>(
    embeddings: &Tensor<T>,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: T,
    warm_start: Option<&GmmParams<T>>,
) -> Result<GmmFit<T>> {
    let n = embeddings.rows();
    let d = embeddings.cols();
    if k == 0 {
        return Err(SsmError::Argument("need at least one component".into()));
    }
    if k > n {
        return Err(SsmError::Argument(format!(
            "{k} components cannot be fitted to {n} points"
        )));
    }
    if tol <= T::zero() {
        return Err(SsmError::Argument("tolerance must be positive".into()));
    }
    if max_iters == 0 {
        return Err(SsmError::Argument("need at least one iteration".into()));
    }

    let mut params = match warm_start {
        Some(w) if w.components() == k && w.dim() == d => {
            w.validate()?;
            w.clone()
        }
        _ => seed_kmeans_pp(embeddings, k, seed),
    };

    let global_var = global_variance(embeddings);
    let mut trace: Vec<T> = Vec::new();
    let mut resp = Tensor::zeros(n, k);

    for iter in 0..max_iters {
        let e = e_step(&params, embeddings);
        resp = e.responsibilities;
        trace.push(e.log_likelihood);
        if iter > 0 && trace[iter] - trace[iter - 1] < tol {
            break;
        }
        if iter + 1 < max_iters {
            m_step(&mut params, &resp, embeddings, &e.point_log_likelihood, &global_var);
        }
    }

    params.validate()?;
    Ok(GmmFit {
        params,
        responsibilities: resp,
        log_likelihood_trace: trace,
    })
}

/// Posterior component probabilities for each point: `n×K`, rows sum to 1.
pub fn posteriors<T: Scalar>(params: &GmmParams<T>, points: &Tensor<T>) -> Result<Tensor<T>> {
    params.validate()?;
    if points.cols() != params.dim() {
        return Err(SsmError::Dimension(format!(
            "point width {} vs mixture width {}",
            points.cols(),
            params.dim()
        )));
    }
    Ok(e_step(params, points).responsibilities)
}

struct EStep<T> {
    responsibilities: Tensor<T>,
    log_likelihood: T,
    point_log_likelihood: Vec<T>,
}

fn e_step<T: Scalar>(params: &GmmParams<T>, x: &Tensor<T>) -> EStep<T> {
    let (n, d) = (x.rows(), x.cols());
    let k = params.components();
    let ln_2pi = T::of((2.0 * std::f64::consts::PI).ln());
    let half = T::of(0.5);

    // Pre-compute the per-component constants ln π_k − ½Σ_d ln(2πσ²).
    let mut comp_const = vec![T::zero(); k];
    for c in 0..k {
        let mut acc = params.weights[c].ln();
        for j in 0..d {
            acc -= half * (ln_2pi + params.variances.at(c, j).ln());
        }
        comp_const[c] = acc;
    }

    let mut resp = Tensor::zeros(n, k);
    let mut point_ll = vec![T::zero(); n];
    let mut total = T::zero();
    let mut log_terms = vec![T::zero(); k];
    for i in 0..n {
        let row = x.row(i);
        for c in 0..k {
            let mut quad = T::zero();
            let mu = params.means.row(c);
            let var = params.variances.row(c);
            for j in 0..d {
                let diff = row[j] - mu[j];
                quad += diff * diff / var[j];
            }
            log_terms[c] = comp_const[c] - half * quad;
        }
        let max = log_terms.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for c in 0..k {
            denom += (log_terms[c] - max).exp();
        }
        let lse = max + denom.ln();
        for c in 0..k {
            resp.set(i, c, (log_terms[c] - lse).exp());
        }
        point_ll[i] = lse;
        total += lse;
    }
    EStep {
        responsibilities: resp,
        log_likelihood: total,
        point_log_likelihood: point_ll,
    }
}

fn m_step<T: Scalar>(
    params: &mut GmmParams<T>,
    resp: &Tensor<T>,
    x: &Tensor<T>,
    point_ll: &[T],
    global_var: &[T],
) {
    let (n, d) = (x.rows(), x.cols());
    let k = params.components();
    let floor = T::of(VARIANCE_FLOOR);
    for c in 0..k {
        let mass: T = (0..n).map(|i| resp.at(i, c)).sum();
        if mass < T::of(WEIGHT_FLOOR) {
            // Collapsed component: restart it at the worst-explained point.
            let worst = point_ll
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite log-likelihoods"))
                .map(|(i, _)| i)
                .unwrap_or(0);
            for j in 0..d {
                params.means.set(c, j, x.at(worst, j));
                params.variances.set(c, j, global_var[j].max(floor));
            }
            params.weights[c] = T::of(1.0 / n as f64);
            continue;
        }
        params.weights[c] = mass / T::of(n as f64);
        for j in 0..d {
            let mu: T = (0..n).map(|i| resp.at(i, c) * x.at(i, j)).sum::<T>() / mass;
            params.means.set(c, j, mu);
        }
        for j in 0..d {
            let mu = params.means.at(c, j);
            let var: T = (0..n)
                .map(|i| {
                    let diff = x.at(i, j) - mu;
                    resp.at(i, c) * diff * diff
                })
                .sum::<T>()
                / mass;
            params.variances.set(c, j, var.max(floor));
        }
    }
    // Keep the simplex exact after flooring/reseeding.
    for w in params.weights.iter_mut() {
        *w = w.max(T::of(WEIGHT_FLOOR));
    }
    let sum: T = params.weights.iter().copied().sum();
    for w in params.weights.iter_mut() {
        *w /= sum;
    }
}

fn global_variance<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (n, d) = (x.rows(), x.cols());
    let nf = T::of(n as f64);
    (0..d)
        .map(|j| {
            let mean: T = (0..n).map(|i| x.at(i, j)).sum::<T>() / nf;
            let var: T = (0..n)
                .map(|i| {
                    let diff = x.at(i, j) - mean;
                    diff * diff
                })
                .sum::<T>()
                / nf;
            var.max(T::of(VARIANCE_FLOOR))
        })
        .collect()
}

fn seed_kmeans_pp<T: Scalar>(x: &Tensor<T>, k: usize, seed: u64) -> GmmParams<T> {
    let (n, d) = (x.rows(), x.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<usize> = vec![rng.gen_range(0..n)];
    let mut min_d2: Vec<f64> = (0..n)
        .map(|i| sq_distance(x.row(i), x.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with a chosen center; spread deterministically.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centers.push(next);
        for i in 0..n {
            let d2 = sq_distance(x.row(i), x.row(next));
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }

    let mut means = Tensor::zeros(k, d);
    for (c, &idx) in centers.iter().enumerate() {
        for j in 0..d {
            means.set(c, j, x.at(idx, j));
        }
    }
    let gvar = global_variance(x);
    let mut variances = Tensor::zeros(k, d);
    for c in 0..k {
        for j in 0..d {
            variances.set(c, j, gvar[j]);
        }
    }
    GmmParams {
        weights: vec![T::of(1.0 / k as f64); k],
        means,
        variances,
    }
}

fn sq_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).as_f64().powi(2))
        .sum()
}
