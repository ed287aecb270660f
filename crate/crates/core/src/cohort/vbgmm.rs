//! Variational Bayesian Gaussian mixture with a Dirichlet prior on the
//! mixing weights and Gaussian-Wishart priors on component parameters.
//!
//! Coordinate ascent alternates the responsibility update with the
//! count/mean/scale/degrees-of-freedom update; the full evidence lower bound
//! is evaluated after every parameter update so its trace is monotone.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::reducer::ReducedEmbedding;
use crate::error::{Error, Result};
use crate::par::Execution;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const JITTER_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbgmmParams {
    pub max_components: usize,
    /// Dirichlet concentration per component; `None` means `1 / M`.
    pub weight_concentration_prior: Option<f64>,
    pub prune_eps: f64,
    pub max_iter: usize,
    /// Stop once the per-point lower-bound gain drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for VbgmmParams {
    fn default() -> Self {
        VbgmmParams {
            max_components: 32,
            weight_concentration_prior: None,
            prune_eps: 1e-2,
            max_iter: 500,
            tol: 1e-5,
            seed: 0,
        }
    }
}

/// Variational posterior of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Dirichlet count `α_k`.
    pub alpha: f64,
    /// Mean precision scale `β_k`.
    pub beta: f64,
    /// Wishart degrees of freedom `ν_k`.
    pub nu: f64,
    /// Posterior mean `m_k`.
    pub mean: Vec<f64>,
    /// Inverse Wishart scale `W_k⁻¹`, row-major `d × d`.
    pub scale_inv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortModel {
    pub max_components: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Expected covariances `W_k⁻¹ / ν_k`, row-major.
    pub covariances: Vec<Vec<f64>>,
    pub dirichlet_counts: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    pub effective_mask: Vec<bool>,
    pub components: Vec<Component>,
    pub converged: bool,
}

struct Prior {
    alpha: f64,
    beta: f64,
    nu: f64,
    mean: DVector<f64>,
    scale_inv: DMatrix<f64>,
    ln_b: f64,
}

/// Component state in nalgebra form, with cached Cholesky of `W⁻¹`.
struct Posterior {
    alpha: f64,
    beta: f64,
    nu: f64,
    mean: DVector<f64>,
    scale_inv: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    ln_det_w: f64,
    e_ln_lambda: f64,
}

impl Posterior {
    /// `(x − m)ᵀ W (x − m)`.
    fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let y = self.chol.l().solve_lower_triangular(&diff).expect("triangular solve");
        y.norm_squared()
    }

    fn w(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

fn ln_wishart_b(ln_det_w: f64, nu: f64, d: usize) -> f64 {
    let df = d as f64;
    -0.5 * nu * ln_det_w
        - 0.5 * nu * df * std::f64::consts::LN_2
        - 0.25 * df * (df - 1.0) * std::f64::consts::PI.ln()
        - (1..=d).map(|i| ln_gamma(0.5 * (nu + 1.0 - i as f64))).sum::<f64>()
}

fn e_ln_det_lambda(ln_det_w: f64, nu: f64, d: usize) -> f64 {
    (1..=d).map(|i| digamma(0.5 * (nu + 1.0 - i as f64))).sum::<f64>()
        + d as f64 * std::f64::consts::LN_2
        + ln_det_w
}

/// Cholesky with escalating diagonal jitter, three retries.
fn robust_cholesky(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok((sym, c));
    }
    let d = m.nrows();
    for retry in 0..3 {
        let jitter = JITTER_FLOOR * 10f64.powi(retry);
        let adj = &sym + DMatrix::identity(d, d) * jitter;
        if let Some(c) = Cholesky::new(adj.clone()) {
            log::warn!("covariance not positive definite; added jitter {jitter:e}");
            return Ok((adj, c));
        }
    }
    Err(Error::Numerical(
        "covariance scale not positive definite after 3 jitter retries".into(),
    ))
}

fn ln_det_from_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

struct Suff {
    counts: Vec<f64>,
    means: Vec<DVector<f64>>,
    scatters: Vec<DMatrix<f64>>,
}

fn sufficient_stats(x: &[DVector<f64>], resp: &[Vec<f64>], m: usize, prior_mean: &DVector<f64>) -> Suff {
    let d = prior_mean.len();
    let mut counts = vec![0.0; m];
    let mut sums = vec![DVector::zeros(d); m];
    for (xn, rn) in x.iter().zip(resp) {
        for k in 0..m {
            if rn[k] > 0.0 {
                counts[k] += rn[k];
                sums[k].axpy(rn[k], xn, 1.0);
            }
        }
    }
    let means: Vec<DVector<f64>> = (0..m)
        .map(|k| {
            if counts[k] > 0.0 {
                &sums[k] / counts[k]
            } else {
                prior_mean.clone()
            }
        })
        .collect();
    let mut scatters = vec![DMatrix::zeros(d, d); m];
    for (xn, rn) in x.iter().zip(resp) {
        for k in 0..m {
            if rn[k] > 0.0 {
                let diff = xn - &means[k];
                scatters[k].ger(rn[k], &diff, &diff, 1.0);
            }
        }
    }
    for k in 0..m {
        if counts[k] > 0.0 {
            scatters[k] /= counts[k];
        }
    }
    Suff {
        counts,
        means,
        scatters,
    }
}

fn m_step(prior: &Prior, s: &Suff) -> Result<Vec<Posterior>> {
    let d = prior.mean.len();
    (0..s.counts.len())
        .map(|k| {
            let nk = s.counts[k];
            let beta = prior.beta + nk;
            let mean = (&prior.mean * prior.beta + &s.means[k] * nk) / beta;
            let diff = &s.means[k] - &prior.mean;
            let scale_inv = &prior.scale_inv
                + &s.scatters[k] * nk
                + (&diff * diff.transpose()) * (prior.beta * nk / beta);
            let (scale_inv, chol) = robust_cholesky(&scale_inv)?;
            let ln_det_w = -ln_det_from_chol(&chol);
            let nu = prior.nu + nk;
            Ok(Posterior {
                alpha: prior.alpha + nk,
                beta,
                nu,
                mean,
                scale_inv,
                chol,
                ln_det_w,
                e_ln_lambda: e_ln_det_lambda(ln_det_w, nu, d),
            })
        })
        .collect()
}

fn e_ln_pi(post: &[Posterior]) -> Vec<f64> {
    let total: f64 = post.iter().map(|p| p.alpha).sum();
    let dt = digamma(total);
    post.iter().map(|p| digamma(p.alpha) - dt).collect()
}

fn e_step(x: &[DVector<f64>], post: &[Posterior], exec: Execution) -> Vec<Vec<f64>> {
    let d = x.first().map_or(0, |v| v.len()) as f64;
    let ln_pi = e_ln_pi(post);
    exec.map(x, |xn| {
        let logs: Vec<f64> = post
            .iter()
            .zip(&ln_pi)
            .map(|(p, lp)| {
                let quad = d / p.beta + p.nu * p.mahalanobis(xn);
                lp + 0.5 * p.e_ln_lambda - 0.5 * d * LN_2PI - 0.5 * quad
            })
            .collect();
        crate::math::softmax(&logs)
    })
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Full evidence lower bound for responsibilities `resp` and the parameter
/// posteriors `post` that were computed from them.
fn elbo(prior: &Prior, s: &Suff, resp: &[Vec<f64>], post: &[Posterior]) -> f64 {
    let d = prior.mean.len();
    let df = d as f64;
    let m = post.len();
    let ln_pi = e_ln_pi(post);
    let mut total = 0.0;

    for k in 0..m {
        let p = &post[k];
        let w = p.w();
        let nk = s.counts[k];
        let diff = &s.means[k] - &p.mean;
        let quad = (diff.transpose() * &w * &diff)[(0, 0)];
        // E[ln p(X | Z, μ, Λ)]
        total += 0.5
            * nk
            * (p.e_ln_lambda - df / p.beta - p.nu * trace_product(&s.scatters[k], &w) - p.nu * quad - df * LN_2PI);
        // E[ln p(Z | π)]
        total += nk * ln_pi[k];
        // E[ln p(μ, Λ)]
        let dm = &p.mean - &prior.mean;
        let qm = (dm.transpose() * &w * &dm)[(0, 0)];
        total += 0.5 * (df * (prior.beta / (2.0 * std::f64::consts::PI)).ln() + p.e_ln_lambda
            - df * prior.beta / p.beta
            - prior.beta * p.nu * qm);
        total += prior.ln_b + 0.5 * (prior.nu - df - 1.0) * p.e_ln_lambda
            - 0.5 * p.nu * trace_product(&prior.scale_inv, &w);
        // − E[ln q(μ, Λ)]
        let ln_b = ln_wishart_b(p.ln_det_w, p.nu, d);
        let entropy = -ln_b - 0.5 * (p.nu - df - 1.0) * p.e_ln_lambda + 0.5 * p.nu * df;
        total -= 0.5 * p.e_ln_lambda + 0.5 * df * (p.beta / (2.0 * std::f64::consts::PI)).ln() - 0.5 * df - entropy;
    }
    // E[ln p(π)] − E[ln q(π)]
    let mf = m as f64;
    let ln_c_prior = ln_gamma(mf * prior.alpha) - mf * ln_gamma(prior.alpha);
    let alpha_sum: f64 = post.iter().map(|p| p.alpha).sum();
    let ln_c_post = ln_gamma(alpha_sum) - post.iter().map(|p| ln_gamma(p.alpha)).sum::<f64>();
    total += ln_c_prior + (prior.alpha - 1.0) * ln_pi.iter().sum::<f64>();
    total -= post.iter().zip(&ln_pi).map(|(p, l)| (p.alpha - 1.0) * l).sum::<f64>() + ln_c_post;
    // − E[ln q(Z)]
    total -= resp
        .iter()
        .flatten()
        .filter(|&&r| r > 0.0)
        .map(|&r| r * r.ln())
        .sum::<f64>();
    total
}

/// Seeded k-means++ centres followed by a few Lloyd rounds; returns hard
/// assignments.
fn kmeans_init(x: &[DVector<f64>], m: usize, seed: u64) -> Vec<usize> {
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<DVector<f64>> = vec![x[rng.random_range(0..n)].clone()];
    let mut nearest_d2: Vec<f64> = x.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < m.min(n) {
        let total: f64 = nearest_d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest_d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[next].clone());
        for (i, p) in x.iter().enumerate() {
            nearest_d2[i] = nearest_d2[i].min((p - centers.last().unwrap()).norm_squared());
        }
    }
    let assign = |centers: &[DVector<f64>]| -> Vec<usize> {
        x.iter()
            .map(|p| {
                (0..centers.len())
                    .min_by(|&a, &b| (p - &centers[a]).norm_squared().total_cmp(&(p - &centers[b]).norm_squared()))
                    .unwrap()
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..10 {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = x.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                let mut s = DVector::zeros(center.len());
                for p in &members {
                    s += *p;
                }
                *center = s / members.len() as f64;
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

impl CohortModel {
    pub fn fit(points: &[ReducedEmbedding], params: VbgmmParams, exec: Execution) -> Result<Self> {
        let m = params.max_components;
        if m == 0 {
            return Err(Error::config("max_components must be at least 1"));
        }
        if points.is_empty() {
            return Err(Error::Size("no points to fit".into()));
        }
        let d = points[0].coords.len();
        if d == 0 {
            return Err(Error::config("points must have at least one coordinate"));
        }
        if points.iter().any(|p| p.coords.len() != d) {
            return Err(Error::data("points have inconsistent dimensions"));
        }
        if points.iter().flat_map(|p| &p.coords).any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite coordinate in mixture input"));
        }
        let mut order: Vec<&ReducedEmbedding> = points.iter().collect();
        order.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        let x: Vec<DVector<f64>> = order.iter().map(|p| DVector::from_column_slice(&p.coords)).collect();
        let n = x.len() as f64;

        let mut mean = DVector::zeros(d);
        for xn in &x {
            mean += xn;
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for xn in &x {
            let diff = xn - &mean;
            cov.ger(1.0, &diff, &diff, 1.0);
        }
        cov /= n;
        cov += DMatrix::identity(d, d) * JITTER_FLOOR;
        let (cov, prior_chol) = robust_cholesky(&cov)?;
        // ν₀ = d, W₀⁻¹ = empirical covariance.
        let prior_ln_det_w = -ln_det_from_chol(&prior_chol);
        let prior = Prior {
            alpha: params.weight_concentration_prior.unwrap_or(1.0 / m as f64),
            beta: 1.0,
            nu: d as f64,
            mean,
            scale_inv: cov,
            ln_b: ln_wishart_b(prior_ln_det_w, d as f64, d),
        };
        if !(prior.alpha > 0.0) {
            return Err(Error::config("weight concentration prior must be positive"));
        }

        let labels = kmeans_init(&x, m, params.seed);
        let mut resp: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| {
                let mut r = vec![0.0; m];
                r[l] = 1.0;
                r
            })
            .collect();
        let mut suff = sufficient_stats(&x, &resp, m, &prior.mean);
        let mut post = m_step(&prior, &suff)?;
        let mut trace = vec![elbo(&prior, &suff, &resp, &post)];
        let mut converged = false;
        for _ in 0..params.max_iter {
            resp = e_step(&x, &post, exec);
            suff = sufficient_stats(&x, &resp, m, &prior.mean);
            post = m_step(&prior, &suff)?;
            let bound = elbo(&prior, &suff, &resp, &post);
            let gain = (bound - trace.last().unwrap()) / n;
            trace.push(bound);
            if gain.abs() < params.tol {
                converged = true;
                break;
            }
        }

        let alpha_sum: f64 = post.iter().map(|p| p.alpha).sum();
        let weights: Vec<f64> = post.iter().map(|p| p.alpha / alpha_sum).collect();
        let components: Vec<Component> = post
            .iter()
            .map(|p| Component {
                alpha: p.alpha,
                beta: p.beta,
                nu: p.nu,
                mean: p.mean.iter().copied().collect(),
                scale_inv: row_major(&p.scale_inv),
            })
            .collect();
        Ok(CohortModel {
            max_components: m,
            dim: d,
            effective_mask: weights.iter().map(|&w| w > params.prune_eps).collect(),
            weights,
            means: components.iter().map(|c| c.mean.clone()).collect(),
            covariances: post.iter().map(|p| row_major(&(&p.scale_inv / p.nu))).collect(),
            dirichlet_counts: post.iter().map(|p| p.alpha).collect(),
            elbo_trace: trace,
            components,
            converged,
        })
    }

    pub fn n_effective(&self) -> usize {
        self.effective_mask.iter().filter(|&&b| b).count()
    }

    /// Posterior membership of `point` using each component's Student-t
    /// predictive density weighted by the expected mixing weight.
    pub fn responsibilities(&self, point: &ReducedEmbedding) -> Result<Vec<f64>> {
        if self.components.is_empty() {
            return Err(Error::State("cohort model has not been fitted".into()));
        }
        if point.coords.len() != self.dim {
            return Err(Error::data(format!(
                "point has {} coordinates, model expects {}",
                point.coords.len(),
                self.dim
            )));
        }
        let d = self.dim;
        let df = d as f64;
        let x = DVector::from_column_slice(&point.coords);
        let alpha_sum: f64 = self.components.iter().map(|c| c.alpha).sum();
        let logs = self
            .components
            .iter()
            .map(|c| {
                let scale_inv = DMatrix::from_row_slice(d, d, &c.scale_inv);
                let chol = Cholesky::new(scale_inv)
                    .ok_or_else(|| Error::Numerical("stored scale not positive definite".into()))?;
                let ln_det_w = -ln_det_from_chol(&chol);
                let dof = c.nu + 1.0 - df;
                let factor = dof * c.beta / (1.0 + c.beta);
                let diff = &x - DVector::from_column_slice(&c.mean);
                let maha = chol.l().solve_lower_triangular(&diff).expect("triangular solve").norm_squared();
                let delta2 = factor * maha;
                let ln_t = ln_gamma(0.5 * (dof + df)) - ln_gamma(0.5 * dof) - 0.5 * df * (dof * std::f64::consts::PI).ln()
                    + 0.5 * (df * factor.ln() + ln_det_w)
                    - 0.5 * (dof + df) * (delta2 / dof).ln_1p();
                Ok((c.alpha / alpha_sum).ln() + ln_t)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(crate::math::softmax(&logs))
    }

    pub fn responsibilities_all(&self, points: &[ReducedEmbedding], exec: Execution) -> Result<Vec<Vec<f64>>> {
        exec.try_map(points, |p| self.responsibilities(p))
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Adjusted Rand index between two hard labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table = std::collections::HashMap::new();
    let mut ra = std::collections::HashMap::new();
    let mut rb = std::collections::HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0usize) += 1;
        *ra.entry(x).or_insert(0usize) += 1;
        *rb.entry(y).or_insert(0usize) += 1;
    }
    let c2 = |v: usize| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
