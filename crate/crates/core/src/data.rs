//! Data distributions, label oracles and covariance estimation.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, leverage_score, numerical_rank, stack_rows, LowerTriangular, PsdMatrix, Vector,
};

/// Generator used by every sampler in the crate.
pub type SimRng = ChaCha8Rng;

/// Seed plus stream identifier. Equal states always yield equal draw sequences;
/// parallel replicas take distinct `stream_id`s.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngState {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngState { seed, stream_id }
    }

    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    pub fn with_stream(&self, stream_id: u64) -> Self {
        RngState {
            seed: self.seed,
            stream_id,
        }
    }
}

pub type PointSampler = Arc<dyn Fn(&mut SimRng) -> Vector + Send + Sync>;

#[derive(Clone)]
pub enum DistributionKind {
    Discrete {
        atoms: Vec<Vector>,
        probs: Vec<f64>,
        cumulative: Vec<f64>,
    },
    /// Mean-zero Gaussian.
    Gaussian {
        covariance: PsdMatrix,
        factor: LowerTriangular,
    },
    Custom(PointSampler),
}

impl fmt::Debug for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionKind::Discrete { atoms, probs, .. } => f
                .debug_struct("Discrete")
                .field("atoms", &atoms.len())
                .field("probs", probs)
                .finish(),
            DistributionKind::Gaussian { covariance, .. } => f
                .debug_struct("Gaussian")
                .field("covariance", covariance)
                .finish(),
            DistributionKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Source of i.i.d. points in `R^d`.
#[derive(Clone, Debug)]
pub struct PointDistribution {
    kind: DistributionKind,
    dim: usize,
    known_covariance: Option<PsdMatrix>,
    support_bound: Option<f64>,
}

impl PointDistribution {
    /// Finite distribution over `atoms`. When `E[xx']` is invertible the support
    /// bound is set to the exact conditioning number.
    pub fn discrete(atoms: Vec<Vector>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("no atoms".into()));
        }
        if atoms.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} atoms but {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        let dim = atoms[0].len();
        if dim == 0 {
            return Err(Error::InvalidDistribution("zero-dimensional atoms".into()));
        }
        if let Some(a) = atoms.iter().find(|a| a.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: a.len(),
            });
        }
        if atoms.iter().flat_map(|a| a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite atom".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDistribution(
                "probabilities must be non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let cumulative = probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let mut dist = PointDistribution {
            kind: DistributionKind::Discrete {
                atoms,
                probs,
                cumulative,
            },
            dim,
            known_covariance: None,
            support_bound: None,
        };
        dist.known_covariance = Some(exact_covariance(&dist)?);
        dist.support_bound = conditioning_number(&dist).ok();
        Ok(dist)
    }

    pub fn uniform(atoms: Vec<Vector>) -> Result<Self> {
        let n = atoms.len();
        Self::discrete(atoms, vec![1.0 / n.max(1) as f64; n])
    }

    /// Mean-zero Gaussian `N(0, covariance)`.
    pub fn gaussian(covariance: PsdMatrix) -> Result<Self> {
        let factor = cholesky_lower(&covariance).map_err(|_| {
            Error::InvalidDistribution("gaussian covariance must be positive definite".into())
        })?;
        Ok(PointDistribution {
            dim: covariance.dim(),
            known_covariance: Some(covariance.clone()),
            kind: DistributionKind::Gaussian { covariance, factor },
            support_bound: None,
        })
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::gaussian(PsdMatrix::identity(d)).expect("identity is positive definite")
    }

    pub fn custom(dim: usize, sampler: PointSampler) -> Self {
        PointDistribution {
            kind: DistributionKind::Custom(sampler),
            dim,
            known_covariance: None,
            support_bound: None,
        }
    }

    pub fn with_known_covariance(mut self, cov: PsdMatrix) -> Result<Self> {
        if cov.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: cov.dim(),
            });
        }
        self.known_covariance = Some(cov);
        Ok(self)
    }

    pub fn with_support_bound(mut self, k: f64) -> Self {
        self.support_bound = Some(k);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &DistributionKind {
        &self.kind
    }

    pub fn support_bound(&self) -> Option<f64> {
        self.support_bound
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, DistributionKind::Gaussian { .. })
    }

    /// Atoms and probabilities of a discrete distribution.
    pub fn atoms(&self) -> Option<(&[Vector], &[f64])> {
        match &self.kind {
            DistributionKind::Discrete { atoms, probs, .. } => Some((atoms, probs)),
            _ => None,
        }
    }

    /// Index of the atom equal to `x`, if any.
    pub fn atom_index(&self, x: &Vector) -> Option<usize> {
        self.atoms()?.0.iter().position(|a| a == x)
    }

    pub fn draw(&self, rng: &mut SimRng) -> Vector {
        match &self.kind {
            DistributionKind::Discrete {
                atoms, cumulative, ..
            } => {
                let u: f64 = rng.random();
                // residual mass from rounding goes to the last atom
                let i = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(atoms.len() - 1);
                atoms[i].clone()
            }
            DistributionKind::Gaussian { factor, .. } => {
                let z = Vector::from_fn(self.dim, |_, _| rng.sample(StandardNormal));
                factor.mul_vec(&z)
            }
            DistributionKind::Custom(f) => f(rng),
        }
    }
}

/// `m` independent draws.
pub fn draw_iid(dist: &PointDistribution, m: usize, rng: &mut SimRng) -> Vec<Vector> {
    (0..m).map(|_| dist.draw(rng)).collect()
}

/// `E[x x']`, available in closed form for discrete and Gaussian distributions
/// or when a covariance was attached explicitly.
pub fn exact_covariance(dist: &PointDistribution) -> Result<PsdMatrix> {
    match &dist.kind {
        DistributionKind::Discrete { atoms, probs, .. } => {
            let mut s = DMatrix::zeros(dist.dim, dist.dim);
            for (a, &p) in atoms.iter().zip(probs) {
                s.ger(p, a, a, 1.0);
            }
            Ok(PsdMatrix::symmetrized(s))
        }
        DistributionKind::Gaussian { covariance, .. } => Ok(covariance.clone()),
        DistributionKind::Custom(_) => dist.known_covariance.clone().ok_or_else(|| {
            Error::Unavailable("custom distribution has no known covariance".into())
        }),
    }
}

/// `K_D = sup_x x' Sigma_D^-1 x` over the support.
pub fn conditioning_number(dist: &PointDistribution) -> Result<f64> {
    match &dist.kind {
        DistributionKind::Discrete { atoms, probs, .. } => {
            let cov = exact_covariance(dist)?;
            // Rank of the weighted atoms, since Cholesky can pass an exactly
            // singular matrix on rounding noise.
            let weighted: Vec<Vector> = atoms
                .iter()
                .zip(probs)
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, &p)| a * p.sqrt())
                .collect();
            if numerical_rank(&stack_rows(&weighted)) < dist.dim || cholesky_lower(&cov).is_err() {
                return Err(Error::SingularCovariance);
            }
            let mut k: f64 = 0.0;
            for (a, &p) in atoms.iter().zip(probs) {
                if p > 0.0 {
                    k = k.max(leverage_score(a, &cov)?);
                }
            }
            // the average leverage is exactly d, so rounding is all that can push this below
            Ok(k.max(dist.dim as f64))
        }
        DistributionKind::Gaussian { .. } => Err(Error::UnboundedSupport),
        DistributionKind::Custom(_) => dist.support_bound.ok_or(Error::UnboundedSupport),
    }
}

/// Sample size `ceil(C K eps^-2 ln(d / delta))` of the matrix Chernoff bound.
pub fn chernoff_sample_size(k_bound: f64, d: usize, epsilon: f64, delta: f64, c: f64) -> usize {
    let m = c * k_bound / (epsilon * epsilon) * (d as f64 / delta).ln();
    (m.ceil() as usize).max(1)
}

pub const DEFAULT_CHERNOFF_CONSTANT: f64 = 8.0;

/// Empirical second-moment matrix with its accuracy target.
#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub sigma_hat: PsdMatrix,
    pub epsilon: f64,
    pub delta: f64,
    pub samples_used: usize,
    pub chernoff_constant: f64,
}

pub fn estimate_covariance(
    dist: &PointDistribution,
    epsilon: f64,
    delta: f64,
    c: f64,
    rng: &mut SimRng,
) -> Result<CovarianceEstimate> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} not in (0,1)"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta {delta} not in (0,1)"
        )));
    }
    let k_bound = dist.support_bound.ok_or(Error::MissingSupportBound)?;
    let m = chernoff_sample_size(k_bound, dist.dim, epsilon, delta, c);
    let mut s = DMatrix::zeros(dist.dim, dist.dim);
    for _ in 0..m {
        let x = dist.draw(rng);
        s.ger(1.0, &x, &x, 1.0);
    }
    Ok(CovarianceEstimate {
        sigma_hat: PsdMatrix::symmetrized(s / m as f64),
        epsilon,
        delta,
        samples_used: m,
        chernoff_constant: c,
    })
}

/// Eigenvalues of `Sigma^-1/2 Sigma_hat Sigma^-T/2`, ascending. The sandwich
/// `(1-eps) Sigma <= Sigma_hat <= (1+eps) Sigma` holds iff they lie in `[1-eps, 1+eps]`.
pub fn relative_spectrum(sigma_hat: &PsdMatrix, sigma: &PsdMatrix) -> Result<Vec<f64>> {
    let l = cholesky_lower(sigma)?;
    let d = sigma.dim();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let col = l.solve_lower(&sigma_hat.as_matrix().column(j).into_owned());
        m.set_column(j, &col);
    }
    let mut t = DMatrix::zeros(d, d);
    for i in 0..d {
        let row = l.solve_lower(&m.row(i).transpose());
        t.set_row(i, &row.transpose());
    }
    let t = (&t + t.transpose()) * 0.5;
    let mut ev: Vec<f64> = t.symmetric_eigen().eigenvalues.iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

pub type LabelFn = Arc<dyn Fn(&Vector, &mut SimRng) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum OracleKind {
    /// `y = w'x + noise_sd * N(0,1)`.
    Linear {
        weights: Vector,
        noise_sd: f64,
    },
    /// `y = sum_i (x_i + x_i^3 / 3) + noise_sd * N(0,1)`.
    CubicSynthetic {
        noise_sd: f64,
    },
    /// Deterministic label per atom of a discrete distribution.
    AttachedLabels {
        atoms: Vec<Vector>,
        labels: Vec<f64>,
    },
    Custom(LabelFn),
}

impl fmt::Debug for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleKind::Linear { weights, noise_sd } => f
                .debug_struct("Linear")
                .field("weights", weights)
                .field("noise_sd", noise_sd)
                .finish(),
            OracleKind::CubicSynthetic { noise_sd } => f
                .debug_struct("CubicSynthetic")
                .field("noise_sd", noise_sd)
                .finish(),
            OracleKind::AttachedLabels { labels, .. } => f
                .debug_struct("AttachedLabels")
                .field("labels", labels)
                .finish(),
            OracleKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Conditional response draws `y ~ D_{Y|x}` with a running query count.
#[derive(Clone, Debug)]
pub struct LabelOracle {
    kind: OracleKind,
    query_count: u64,
}

/// `sum_i (x_i + x_i^3 / 3)`.
pub fn cubic_response(x: &Vector) -> f64 {
    x.iter().map(|v| v + v * v * v / 3.0).sum()
}

impl LabelOracle {
    pub fn new(kind: OracleKind) -> Self {
        LabelOracle {
            kind,
            query_count: 0,
        }
    }

    pub fn linear(weights: Vector, noise_sd: f64) -> Self {
        Self::new(OracleKind::Linear { weights, noise_sd })
    }

    pub fn cubic(noise_sd: f64) -> Self {
        Self::new(OracleKind::CubicSynthetic { noise_sd })
    }

    pub fn attached(atoms: Vec<Vector>, labels: Vec<f64>) -> Result<Self> {
        if atoms.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: atoms.len(),
                actual: labels.len(),
            });
        }
        Ok(Self::new(OracleKind::AttachedLabels { atoms, labels }))
    }

    pub fn kind(&self) -> &OracleKind {
        &self.kind
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    /// One label per point. The query count grows by `points.len()`; a failed
    /// query leaves it unchanged.
    pub fn query_labels(&mut self, points: &[Vector], rng: &mut SimRng) -> Result<Vec<f64>> {
        let labels = points
            .iter()
            .map(|x| self.label(x, rng))
            .collect::<Result<Vec<_>>>()?;
        self.query_count += points.len() as u64;
        Ok(labels)
    }

    fn label(&self, x: &Vector, rng: &mut SimRng) -> Result<f64> {
        let noise = |sd: f64, rng: &mut SimRng| {
            if sd > 0.0 {
                sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        };
        match &self.kind {
            OracleKind::Linear { weights, noise_sd } => {
                if weights.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: weights.len(),
                        actual: x.len(),
                    });
                }
                Ok(weights.dot(x) + noise(*noise_sd, rng))
            }
            OracleKind::CubicSynthetic { noise_sd } => {
                Ok(cubic_response(x) + noise(*noise_sd, rng))
            }
            OracleKind::AttachedLabels { atoms, labels } => atoms
                .iter()
                .position(|a| a == x)
                .map(|i| labels[i])
                .ok_or(Error::UnlabeledPoint),
            OracleKind::Custom(f) => Ok(f(x, rng)),
        }
    }
}

/// JSON description of a distribution and its label oracle.
///
/// `kind` is `"discrete"` or `"gaussian"`; `oracle` is `"linear"`, `"cubic"`
/// or `"attached"` (labels per atom in `labels`).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: String,
    pub d: usize,
    #[serde(default)]
    pub atoms: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub probs: Option<Vec<f64>>,
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub oracle: Option<String>,
    #[serde(default)]
    pub noise_sd: Option<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub labels: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DistributionSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn distribution(&self) -> Result<PointDistribution> {
        let d = self.d;
        if d == 0 {
            return Err(Error::ConfigInvalid("d must be at least 1".into()));
        }
        let dist = match self.kind.as_str() {
            "discrete" => {
                let atoms = self
                    .atoms
                    .as_ref()
                    .ok_or_else(|| Error::ConfigInvalid("discrete spec needs atoms".into()))?;
                let atoms: Vec<Vector> =
                    atoms.iter().map(|a| Vector::from_vec(a.clone())).collect();
                if let Some(a) = atoms.iter().find(|a| a.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: a.len(),
                    });
                }
                match &self.probs {
                    Some(p) => PointDistribution::discrete(atoms, p.clone())?,
                    None => PointDistribution::uniform(atoms)?,
                }
            }
            "gaussian" => {
                if let Some(mean) = &self.mean {
                    if mean.iter().any(|&m| m != 0.0) {
                        return Err(Error::ConfigInvalid(
                            "only mean-zero gaussians are supported".into(),
                        ));
                    }
                }
                let cov = match &self.covariance {
                    Some(rows) => {
                        let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                        PsdMatrix::from_rows(&rows)?
                    }
                    None => PsdMatrix::identity(d),
                };
                if cov.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: cov.dim(),
                    });
                }
                PointDistribution::gaussian(cov)?
            }
            other => {
                return Err(Error::ConfigInvalid(format!(
                    "unknown distribution kind {other:?}"
                )))
            }
        };
        Ok(dist)
    }

    pub fn oracle(&self) -> Result<Option<LabelOracle>> {
        let noise_sd = self.noise_sd.unwrap_or(0.0);
        let oracle = match self.oracle.as_deref() {
            None => None,
            Some("cubic") => Some(LabelOracle::cubic(noise_sd)),
            Some("linear") => {
                let w = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::ConfigInvalid("linear oracle needs weights".into()))?;
                if w.len() != self.d {
                    return Err(Error::DimensionMismatch {
                        expected: self.d,
                        actual: w.len(),
                    });
                }
                Some(LabelOracle::linear(Vector::from_vec(w.clone()), noise_sd))
            }
            Some("attached") => {
                let atoms = self
                    .atoms
                    .as_ref()
                    .ok_or_else(|| Error::ConfigInvalid("attached labels need atoms".into()))?;
                let labels = self
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::ConfigInvalid("attached oracle needs labels".into()))?;
                let atoms = atoms.iter().map(|a| Vector::from_vec(a.clone())).collect();
                Some(LabelOracle::attached(atoms, labels.clone())?)
            }
            Some(other) => return Err(Error::ConfigInvalid(format!("unknown oracle {other:?}"))),
        };
        Ok(oracle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn point_mass_draws() {
        let dist = PointDistribution::discrete(vec![v(&[1.0, 2.0])], vec![1.0]).unwrap();
        let draws = draw_iid(&dist, 3, &mut RngState::new(1, 0).rng());
        assert_eq!(draws, vec![v(&[1.0, 2.0]); 3]);
        // a single atom in R^2 has a singular second moment
        assert!(matches!(
            conditioning_number(&dist),
            Err(Error::SingularCovariance)
        ));
        assert_eq!(dist.support_bound(), None);
    }

    #[test]
    fn same_state_same_draws() {
        let dist = PointDistribution::standard_gaussian(3);
        let a = draw_iid(&dist, 10, &mut RngState::new(42, 7).rng());
        let b = draw_iid(&dist, 10, &mut RngState::new(42, 7).rng());
        let c = draw_iid(&dist, 10, &mut RngState::new(42, 8).rng());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_sample_covariance() {
        let cov = PsdMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let dist = PointDistribution::gaussian(cov.clone()).unwrap();
        let mut rng = RngState::new(9, 0).rng();
        let m = 200_000;
        let mut s = DMatrix::zeros(2, 2);
        for x in draw_iid(&dist, m, &mut rng) {
            s += &x * x.transpose();
        }
        s /= m as f64;
        for i in 0..2 {
            for j in 0..2 {
                let rel = (s[(i, j)] - cov.as_matrix()[(i, j)]).abs() / cov.as_matrix()[(i, j)];
                assert!(rel < 0.03, "entry ({i},{j}) = {}", s[(i, j)]);
            }
        }
    }

    #[test]
    fn discrete_frequencies_follow_probs() {
        let dist = PointDistribution::discrete(
            vec![v(&[1.0]), v(&[-2.0]), v(&[3.0])],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let mut rng = RngState::new(4, 0).rng();
        let n = 100_000;
        let mut counts = [0usize; 3];
        for x in draw_iid(&dist, n, &mut rng) {
            counts[dist.atom_index(&x).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn rejects_bad_probabilities() {
        let r = PointDistribution::discrete(vec![v(&[1.0]), v(&[2.0])], vec![0.5, 0.6]);
        assert!(matches!(r, Err(Error::InvalidDistribution(_))));
        let r = PointDistribution::discrete(vec![v(&[1.0]), v(&[2.0])], vec![-0.5, 1.5]);
        assert!(r.is_err());
        let r = PointDistribution::gaussian(PsdMatrix::from_diagonal(&[1.0, 0.0]));
        assert!(r.is_err());
    }

    #[test]
    fn deterministic_oracle_and_counter() {
        let mut oracle = LabelOracle::linear(v(&[2.0, 0.0]), 0.0);
        let mut rng = RngState::new(0, 0).rng();
        assert_eq!(
            oracle.query_labels(&[v(&[3.0, 5.0])], &mut rng).unwrap(),
            vec![6.0]
        );
        let mut oracle = LabelOracle::cubic(1.0);
        assert_eq!(oracle.query_count(), 0);
        oracle
            .query_labels(&vec![v(&[0.5, 0.1]); 7], &mut rng)
            .unwrap();
        assert_eq!(oracle.query_count(), 7);
    }

    #[test]
    fn cubic_oracle_noise_has_zero_mean() {
        let x = v(&[0.7, -1.2, 2.0]);
        let mut oracle = LabelOracle::cubic(1.0);
        let mut rng = RngState::new(17, 0).rng();
        let n = 100_000;
        let labels = oracle.query_labels(&vec![x.clone(); n], &mut rng).unwrap();
        let mean = labels.iter().sum::<f64>() / n as f64;
        let xi = cubic_response(&x);
        assert!((mean - xi).abs() < 0.02 * xi.abs(), "{mean} vs {xi}");
    }

    #[test]
    fn attached_labels_off_support() {
        let mut oracle = LabelOracle::attached(vec![v(&[1.0]), v(&[2.0])], vec![1.0, 6.0]).unwrap();
        let mut rng = RngState::new(0, 0).rng();
        assert_eq!(
            oracle
                .query_labels(&[v(&[2.0]), v(&[1.0])], &mut rng)
                .unwrap(),
            vec![6.0, 1.0]
        );
        assert!(matches!(
            oracle.query_labels(&[v(&[1.0]), v(&[1.5])], &mut rng),
            Err(Error::UnlabeledPoint)
        ));
        assert_eq!(oracle.query_count(), 2);
    }

    #[test]
    fn exact_covariance_examples() {
        let d = PointDistribution::uniform(vec![v(&[1.0]), v(&[-1.0])]).unwrap();
        assert_eq!(exact_covariance(&d).unwrap().as_matrix()[(0, 0)], 1.0);

        let d = PointDistribution::uniform(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])])
            .unwrap();
        let c = exact_covariance(&d).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) / 3.0;
        assert!((c.as_matrix() - want).norm() < 1e-15);

        let custom = PointDistribution::custom(2, Arc::new(|_| Vector::zeros(2)));
        assert!(matches!(
            exact_covariance(&custom),
            Err(Error::Unavailable(_))
        ));
    }

    #[test]
    fn conditioning_number_examples() {
        let d = PointDistribution::uniform(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert!((conditioning_number(&d).unwrap() - 2.0).abs() < 1e-12);

        let d = PointDistribution::uniform(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])])
            .unwrap();
        assert!((conditioning_number(&d).unwrap() - 2.0).abs() < 1e-12);

        let g = PointDistribution::standard_gaussian(2);
        assert!(matches!(
            conditioning_number(&g),
            Err(Error::UnboundedSupport)
        ));
    }

    #[test]
    fn conditioning_number_at_least_dimension() {
        let mut rng = RngState::new(21, 0).rng();
        for _ in 0..50 {
            let d = rng.random_range(1..4);
            let n = d + rng.random_range(0..4);
            let atoms: Vec<Vector> = (0..n)
                .map(|_| Vector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)))
                .collect();
            let mut probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            let Ok(dist) = PointDistribution::discrete(atoms.clone(), probs.clone()) else {
                continue;
            };
            let cov = exact_covariance(&dist).unwrap();
            let avg: f64 = atoms
                .iter()
                .zip(&probs)
                .map(|(a, p)| p * leverage_score(a, &cov).unwrap())
                .sum();
            assert!((avg - d as f64).abs() < 1e-9);
            assert!(conditioning_number(&dist).unwrap() >= d as f64 - 1e-9);
        }
    }

    #[test]
    fn chernoff_sample_size_formula() {
        assert_eq!(chernoff_sample_size(2.0, 2, 0.5, 0.1, 8.0), 192);
    }

    #[test]
    fn estimate_covariance_point_mass() {
        let dist = PointDistribution::discrete(vec![v(&[-1.5])], vec![1.0]).unwrap();
        let est =
            estimate_covariance(&dist, 0.5, 0.1, 8.0, &mut RngState::new(3, 0).rng()).unwrap();
        assert_eq!(est.sigma_hat.as_matrix()[(0, 0)], 2.25);
        assert_eq!(
            est.samples_used,
            chernoff_sample_size(1.0, 1, 0.5, 0.1, 8.0)
        );

        let x = v(&[1.0, 2.0]);
        let dist = PointDistribution::discrete(vec![x.clone()], vec![1.0])
            .unwrap()
            .with_support_bound(2.0);
        let est =
            estimate_covariance(&dist, 0.5, 0.1, 8.0, &mut RngState::new(3, 0).rng()).unwrap();
        assert_eq!(est.sigma_hat.as_matrix(), &(&x * x.transpose()));
    }

    #[test]
    fn estimate_covariance_requires_bound() {
        let g = PointDistribution::standard_gaussian(2);
        let r = estimate_covariance(&g, 0.5, 0.1, 8.0, &mut RngState::new(3, 0).rng());
        assert!(matches!(r, Err(Error::MissingSupportBound)));
    }

    #[test]
    fn estimate_covariance_sandwich_rate() {
        let dist = PointDistribution::discrete(
            vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap();
        let sigma = exact_covariance(&dist).unwrap();
        let eps = 1.0 / (2.0f64 * 2.0).sqrt();
        let runs = 200;
        let mut held = 0;
        for r in 0..runs {
            let mut rng = RngState::new(100, r).rng();
            let est =
                estimate_covariance(&dist, eps, 0.05, DEFAULT_CHERNOFF_CONSTANT, &mut rng).unwrap();
            let ev = relative_spectrum(&est.sigma_hat, &sigma).unwrap();
            if ev[0] >= 1.0 - eps && ev[ev.len() - 1] <= 1.0 + eps {
                held += 1;
            }
        }
        assert!(
            held as f64 >= 0.9 * runs as f64,
            "sandwich held in {held}/{runs}"
        );
    }

    #[test]
    fn estimate_covariance_converges() {
        let dist = PointDistribution::discrete(
            vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap();
        let sigma = exact_covariance(&dist).unwrap();
        let median_err = |c: f64| {
            let mut errs: Vec<f64> = (0..31)
                .map(|r| {
                    let mut rng = RngState::new(5, r).rng();
                    let est = estimate_covariance(&dist, 0.5, 0.1, c, &mut rng).unwrap();
                    (est.sigma_hat.as_matrix() - sigma.as_matrix()).norm()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[15]
        };
        let (e1, e4, e16) = (median_err(1.0), median_err(4.0), median_err(16.0));
        assert!(e1 > e4 && e4 > e16, "{e1} {e4} {e16}");
    }

    #[test]
    fn spec_roundtrip_and_validation() {
        let spec = DistributionSpec::from_json(
            r#"{"kind":"discrete","d":1,"atoms":[[1],[2]],"probs":[0.5,0.5],
                "oracle":"attached","labels":[1,6],"seed":3}"#,
        )
        .unwrap();
        let dist = spec.distribution().unwrap();
        assert_eq!(dist.dim(), 1);
        assert!(spec.oracle().unwrap().is_some());

        let bad = DistributionSpec::from_json(r#"{"kind":"gaussian","d":2,"mean":[1,0]}"#).unwrap();
        assert!(matches!(bad.distribution(), Err(Error::ConfigInvalid(_))));
        assert!(DistributionSpec::from_json(r#"{"kind":"gaussian","d":2,"bogus":1}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn atoms_and_probs() -> impl Strategy<Value = (Vec<Vector>, Vec<f64>)> {
            (1usize..4)
                .prop_flat_map(|d| (Just(d), 1usize..6))
                .prop_flat_map(|(d, n)| {
                    (
                        Just(d),
                        proptest::collection::vec(-3.0f64..3.0, n * d),
                        proptest::collection::vec(0.05f64..1.0, n),
                    )
                })
                .prop_map(|(d, xs, w)| {
                    let total: f64 = w.iter().sum();
                    (
                        xs.chunks(d).map(Vector::from_column_slice).collect(),
                        w.iter().map(|p| p / total).collect(),
                    )
                })
        }

        proptest! {
            #[test]
            fn exact_covariance_is_the_weighted_outer_product_sum((atoms, probs) in atoms_and_probs()) {
                let dist = PointDistribution::discrete(atoms.clone(), probs.clone()).unwrap();
                let cov = exact_covariance(&dist).unwrap();
                let d = dist.dim();
                for i in 0..d {
                    for j in 0..d {
                        let direct: f64 = atoms.iter().zip(&probs).map(|(a, p)| p * a[i] * a[j]).sum();
                        prop_assert!((cov.as_matrix()[(i, j)] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
                    }
                }
                let min_eig = cov.as_matrix().clone().symmetric_eigen().eigenvalues.min();
                prop_assert!(min_eig >= -1e-12 * cov.as_matrix().norm().max(1.0));
            }

            #[test]
            fn conditioning_number_bounds_dimension((atoms, probs) in atoms_and_probs()) {
                let dist = PointDistribution::discrete(atoms.clone(), probs.clone()).unwrap();
                let cov = exact_covariance(&dist).unwrap();
                prop_assume!(conditioning_number(&dist).is_ok());
                let avg: f64 = atoms.iter().zip(&probs).map(|(a, p)| p * leverage_score(a, &cov).unwrap()).sum();
                let d = dist.dim() as f64;
                prop_assert!((avg - d).abs() <= 1e-8 * d);
                prop_assert!(conditioning_number(&dist).unwrap() >= d - 1e-8);
            }

            #[test]
            fn query_count_is_the_sum_of_batch_sizes(
                batches in proptest::collection::vec(0usize..20, 0..10),
                seed in any::<u64>(),
            ) {
                let dist = PointDistribution::standard_gaussian(2);
                let mut oracle = LabelOracle::cubic(1.0);
                let mut rng = RngState::new(seed, 0).rng();
                for &m in &batches {
                    let pts = draw_iid(&dist, m, &mut rng);
                    let before = oracle.query_count();
                    prop_assert_eq!(oracle.query_labels(&pts, &mut rng).unwrap().len(), m);
                    prop_assert_eq!(oracle.query_count() - before, m as u64);
                }
                prop_assert_eq!(oracle.query_count(), batches.iter().sum::<usize>() as u64);
            }
        }
    }
}
