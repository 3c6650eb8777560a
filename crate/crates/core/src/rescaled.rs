//! Volume-rescaled sampling from a point distribution.
//!
//! `VS^k` is the law of `k` points whose joint density is the i.i.d. density
//! reweighted by `det(sum_i x_i x_i')`, normalized by `d! C(k,d) det(Sigma_D)`.
//! Three routes are provided:
//!
//! * [`DeterminantalRejectionSampler`]: exact `VS^d` draws for bounded-support
//!   distributions given only an approximate covariance `Sigma_hat`.
//! * [`gaussian_vs_sample`]: exact `VS^k` draws for a centered Gaussian from
//!   `2k + 2` i.i.d. draws, without knowing the covariance.
//! * [`vs_sample_size_k`]: `VS^k` from any `VS^d` sampler plus `k - d` i.i.d.
//!   points under a uniform random permutation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{
    draw_iid, exact_covariance, CovarianceEstimate, DistributionKind, PointDistribution, SimRng,
};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, cholesky_of, gram, gram_determinant, gram_log_determinant, leverage_score,
    LowerTriangular, PsdMatrix, Vector,
};
use crate::volume::{binomial, reverse_iterative_sample, FinitePointSet};

/// Slack allowed above 1 for `det(Sigma_tilde Sigma_hat^-1)` and above `K`
/// for observed leverages.
pub const BOUND_SLACK: f64 = 1e-9;

/// Limit on enumerated tuples in [`exact_vs_law`].
pub const MAX_ENUMERATED_TUPLES: usize = 1_000_000;

/// Rescaling factor `det(sum_i x_i x_i')`; zero for a singular Gram matrix.
pub fn vs_rescaling_weight(points: &[Vector]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    gram_determinant(&gram(points))
}

/// `d! C(k,d) det(Sigma)`.
pub fn vs_normalization_constant(k: usize, d: usize, sigma: &PsdMatrix) -> f64 {
    let d_factorial: f64 = (1..=d).map(|i| i as f64).product();
    d_factorial * binomial(k, d) * gram_determinant(sigma.as_matrix())
}

/// Exact `VS^k` law of a discrete distribution as ordered tuples of atom
/// indices. Zero-probability tuples are omitted.
pub fn exact_vs_law(dist: &PointDistribution, k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let (atoms, probs) = dist
        .atoms()
        .ok_or_else(|| Error::Unavailable("exact VS law needs a discrete distribution".into()))?;
    let d = dist.dim();
    if k < d {
        return Err(Error::BadSubsetSize {
            expected: d,
            actual: k,
        });
    }
    let n = atoms.len();
    let count = n
        .checked_pow(k as u32)
        .filter(|&c| c <= MAX_ENUMERATED_TUPLES);
    let Some(count) = count else {
        return Err(Error::TooLarge {
            count: u128::MAX,
            limit: MAX_ENUMERATED_TUPLES as u128,
        });
    };
    let norm = vs_normalization_constant(k, d, &exact_covariance(dist)?);
    if !(norm > 0.0) {
        return Err(Error::SingularCovariance);
    }
    let mut law = Vec::new();
    for code in 0..count {
        let tuple = decode_tuple(code, n, k);
        let iid: f64 = tuple.iter().map(|&i| probs[i]).product();
        if iid == 0.0 {
            continue;
        }
        let pts: Vec<Vector> = tuple.iter().map(|&i| atoms[i].clone()).collect();
        let w = vs_rescaling_weight(&pts);
        if w > 0.0 {
            law.push((tuple, iid * w / norm));
        }
    }
    Ok(law)
}

/// Base-`n` digits of `code`, most significant first.
pub(crate) fn decode_tuple(mut code: usize, n: usize, k: usize) -> Vec<usize> {
    let mut t = vec![0; k];
    for slot in t.iter_mut().rev() {
        *slot = code % n;
        code /= n;
    }
    t
}

/// Size of a volume-rescaled sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RescaledSampleSpec {
    pub k: usize,
    pub d: usize,
}

impl RescaledSampleSpec {
    pub fn new(k: usize, d: usize) -> Result<Self> {
        if d == 0 || k < d {
            return Err(Error::InvalidParameter(format!(
                "need k >= d >= 1, got k={k}, d={d}"
            )));
        }
        Ok(RescaledSampleSpec { k, d })
    }
}

/// Parameters of determinantal rejection sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectionConfig {
    /// Upper bound `K` on the leverage `x' Sigma_hat^-1 x` over the support.
    pub k_bound: f64,
    /// Pool size `t`. Any `t >= d` gives the exact law; the acceptance rate of
    /// at least 1/4 is guaranteed for `t = 2 d^2`.
    pub pool_size: usize,
    /// Accuracy of `Sigma_hat` the configuration was chosen for.
    pub epsilon: f64,
    pub max_restarts: usize,
}

impl RejectionConfig {
    /// `t = 2 d^2`, `epsilon = 1/sqrt(2d)`, `64 ln(1/delta)` restarts with `delta = 1e-6`.
    pub fn new(d: usize, k_bound: f64) -> Self {
        RejectionConfig {
            k_bound,
            pool_size: 2 * d * d,
            epsilon: default_epsilon(d),
            max_restarts: (64.0 * 1e6f64.ln()).ceil() as usize,
        }
    }

    pub fn with_pool_size(mut self, t: usize) -> Self {
        self.pool_size = t;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.pool_size < d {
            return Err(Error::InvalidParameter(format!(
                "pool size {} below dimension {d}",
                self.pool_size
            )));
        }
        if !(self.k_bound >= d as f64 * (1.0 - BOUND_SLACK)) || !self.k_bound.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "leverage bound {} must be finite and at least d = {d}",
                self.k_bound
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {} not in (0,1)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `1/sqrt(2d)`.
pub fn default_epsilon(d: usize) -> f64 {
    1.0 / (2.0 * d as f64).sqrt()
}

/// One pass of the pool-building loop.
#[derive(Clone, Debug)]
pub struct RejectionBatch {
    pub originals: Vec<Vector>,
    pub rescaled: Vec<Vector>,
    pub sigma_tilde: PsdMatrix,
    /// `det(Sigma_tilde Sigma_hat^-1)`, never above `1 + BOUND_SLACK`.
    pub det_ratio: f64,
    pub accepted: bool,
    /// Draws from the distribution, including rejected candidates.
    pub points_consumed: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RejectionStats {
    pub batches: usize,
    pub restarts: usize,
    pub points_consumed: usize,
    pub det_ratios: Vec<f64>,
}

/// Determinantal rejection sampler for a fixed `Sigma_hat` and configuration.
#[derive(Clone, Debug)]
pub struct DeterminantalRejectionSampler {
    sigma_hat: PsdMatrix,
    factor: LowerTriangular,
    log_det_hat: f64,
    cfg: RejectionConfig,
}

impl DeterminantalRejectionSampler {
    pub fn new(sigma_hat: PsdMatrix, cfg: RejectionConfig) -> Result<Self> {
        cfg.validate(sigma_hat.dim())?;
        let factor = cholesky_lower(&sigma_hat)?;
        let log_det_hat = factor.log_det();
        Ok(DeterminantalRejectionSampler {
            sigma_hat,
            factor,
            log_det_hat,
            cfg,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma_hat.dim()
    }

    pub fn config(&self) -> &RejectionConfig {
        &self.cfg
    }

    /// `x' Sigma_hat^-1 x`.
    pub fn leverage(&self, x: &Vector) -> f64 {
        x.dot(&self.factor.solve(x)).max(0.0)
    }

    /// Fill a pool of `t` leverage-accepted points and decide the batch.
    pub fn form_batch(&self, dist: &PointDistribution, rng: &mut SimRng) -> Result<RejectionBatch> {
        let d = self.dim();
        if dist.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: dist.dim(),
            });
        }
        let t = self.cfg.pool_size;
        let k_bound = self.cfg.k_bound;
        let mut originals = Vec::with_capacity(t);
        let mut rescaled = Vec::with_capacity(t);
        let mut consumed = 0;
        while originals.len() < t {
            let x = dist.draw(rng);
            consumed += 1;
            let lev = self.leverage(&x);
            if lev > k_bound * (1.0 + BOUND_SLACK) {
                return Err(Error::LeverageBoundViolated {
                    observed: lev,
                    bound: k_bound,
                });
            }
            let u: f64 = rng.random();
            if u < lev / k_bound {
                rescaled.push(&x * (d as f64 / lev).sqrt());
                originals.push(x);
            }
        }
        let sigma_tilde = PsdMatrix::symmetrized(gram(&rescaled) / t as f64);
        let det_ratio = gram_log_determinant(sigma_tilde.as_matrix())
            .map_or(0.0, |ld| (ld - self.log_det_hat).exp());
        if det_ratio > 1.0 + BOUND_SLACK {
            return Err(Error::DeterminantBoundViolated(det_ratio));
        }
        let u: f64 = rng.random();
        let accepted = u < det_ratio.clamp(0.0, 1.0);
        Ok(RejectionBatch {
            originals,
            rescaled,
            sigma_tilde,
            det_ratio,
            accepted,
            points_consumed: consumed,
        })
    }

    /// `d` original points distributed as `VS^d`.
    pub fn sample(
        &self,
        dist: &PointDistribution,
        rng: &mut SimRng,
    ) -> Result<(Vec<Vector>, RejectionStats)> {
        let mut stats = RejectionStats::default();
        loop {
            if stats.batches > self.cfg.max_restarts {
                return Err(Error::RestartBudgetExceeded(self.cfg.max_restarts));
            }
            let batch = self.form_batch(dist, rng)?;
            stats.batches += 1;
            stats.points_consumed += batch.points_consumed;
            stats.det_ratios.push(batch.det_ratio);
            if !batch.accepted {
                continue;
            }
            stats.restarts = stats.batches - 1;
            let pool = FinitePointSet::new(batch.rescaled)?;
            let chosen = reverse_iterative_sample(&pool, self.dim(), rng)?;
            let mut originals = batch.originals;
            let out = chosen
                .iter()
                .map(|&i| std::mem::take(&mut originals[i]))
                .collect();
            return Ok((out, stats));
        }
    }
}

/// Draw `d` points from `VS^d` by determinantal rejection sampling.
pub fn determinantal_rejection_sample(
    dist: &PointDistribution,
    est: &CovarianceEstimate,
    cfg: &RejectionConfig,
    rng: &mut SimRng,
) -> Result<(Vec<Vector>, RejectionStats)> {
    DeterminantalRejectionSampler::new(est.sigma_hat.clone(), cfg.clone())?.sample(dist, rng)
}

/// Leverage bound `K` valid for `est.sigma_hat`: the exact maximum over the
/// atoms of a discrete distribution, otherwise `K_D / (1 - epsilon)` from the
/// declared support bound. Never below `d`.
pub fn rejection_leverage_bound(dist: &PointDistribution, est: &CovarianceEstimate) -> Result<f64> {
    let d = dist.dim() as f64;
    let k = match dist.atoms() {
        Some((atoms, probs)) => {
            let mut worst: f64 = 0.0;
            for (a, &p) in atoms.iter().zip(probs) {
                if p > 0.0 {
                    worst = worst.max(leverage_score(a, &est.sigma_hat)?);
                }
            }
            worst
        }
        None => dist.support_bound().ok_or(Error::MissingSupportBound)? / (1.0 - est.epsilon),
    };
    Ok(k.max(d))
}

/// `VS^k` sample: a `VS^d` block from `d_sampler`, `k - d` i.i.d. draws, then
/// a uniform random permutation.
pub fn vs_sample_size_k<F>(
    dist: &PointDistribution,
    spec: RescaledSampleSpec,
    d_sampler: &mut F,
    rng: &mut SimRng,
) -> Result<Vec<Vector>>
where
    F: FnMut(&mut SimRng) -> Result<Vec<Vector>>,
{
    let mut pts = d_sampler(rng)?;
    if pts.len() != spec.d {
        return Err(Error::DimensionMismatch {
            expected: spec.d,
            actual: pts.len(),
        });
    }
    pts.extend(draw_iid(dist, spec.k - spec.d, rng));
    pts.shuffle(rng);
    Ok(pts)
}

/// `VS^k` sample for a centered Gaussian from `2k + 2` i.i.d. draws.
///
/// The first `k + 2` draws give `W = sum_j x_j x_j'`, a `W_d(k+2, Sigma_D)`
/// matrix; the next `k` form `X`. The output is `W^1/2 (X'X)^-1/2 x_i` with
/// lower Cholesky square roots, so the output Gram matrix is exactly `W`.
/// Only draw access to `dist` is used; it must be a mean-zero Gaussian
/// (a `Custom` sampler is trusted to be one).
pub fn gaussian_vs_sample(
    dist: &PointDistribution,
    k: usize,
    rng: &mut SimRng,
) -> Result<Vec<Vector>> {
    let d = dist.dim();
    if let DistributionKind::Discrete { .. } = dist.kind() {
        return Err(Error::InvalidDistribution(
            "gaussian sampler needs a gaussian distribution".into(),
        ));
    }
    if k < d {
        return Err(Error::InvalidParameter(format!(
            "need k >= d, got k={k}, d={d}"
        )));
    }
    let wishart = draw_iid(dist, k + 2, rng);
    let xs = draw_iid(dist, k, rng);
    let w_root = cholesky_of(&gram(&wishart)).map_err(|_| Error::SingularGram)?;
    let g_root = cholesky_of(&gram(&xs)).map_err(|_| Error::SingularGram)?;
    Ok(xs
        .iter()
        .map(|x| w_root.mul_vec(&g_root.solve_lower(x)))
        .collect())
}

/// `(1 - d^2/t) det(Sigma Sigma_hat^-1) / (tr(Sigma Sigma_hat^-1)/d)^d`, the lower
/// bound on the mean batch determinant ratio.
pub fn batch_acceptance_lower_bound(
    sigma: &PsdMatrix,
    sigma_hat: &PsdMatrix,
    t: usize,
) -> Result<f64> {
    let d = sigma.dim();
    let hat_inv = crate::linalg::invert_psd(sigma_hat)?;
    let m: DMatrix<f64> = sigma.as_matrix() * hat_inv.as_matrix();
    let trace = m.trace();
    let det = gram_determinant(sigma.as_matrix()) / gram_determinant(sigma_hat.as_matrix());
    let ratio = det / (trace / d as f64).powi(d as i32);
    Ok((1.0 - (d * d) as f64 / t as f64) * ratio)
}
