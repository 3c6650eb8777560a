//! Volume sampling over a finite point set.
//!
//! A size-`k` subset `S` of the rows of `X` (`k >= d`) is drawn with
//! probability `det(X_S' X_S) / (C(n-d, k-d) det(X'X))`. Reverse iterative
//! sampling reaches this law by removing one row at a time, row `i` with
//! probability `(1 - x_i' G_S^-1 x_i) / (|S| - d)`, where `G_S` is the Gram
//! matrix of the rows still present.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::SimRng;
use crate::error::{Error, Result};
use crate::linalg::{
    downdate_inverse, gram, gram_log_determinant, invert_psd, numerical_rank, stack_rows,
    PsdMatrix, Vector,
};

/// Roundoff allowance for negative removal probabilities.
const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// Enumeration limit of [`brute_force_volume_distribution`].
pub const MAX_ENUMERATED_SUBSETS: u128 = 1_000_000;

/// `n >= d` points in `R^d` with a positive definite Gram matrix.
#[derive(Clone, Debug)]
pub struct FinitePointSet {
    rows: Vec<Vector>,
    dim: usize,
}

impl FinitePointSet {
    pub fn new(rows: Vec<Vector>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if dim == 0 {
            return Err(Error::BadShape("point set is empty".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: r.len(),
            });
        }
        if rows.len() < dim {
            return Err(Error::SingularGram);
        }
        if numerical_rank(&stack_rows(&rows)) < dim || gram_log_determinant(&gram(&rows)).is_none()
        {
            return Err(Error::SingularGram);
        }
        Ok(FinitePointSet { rows, dim })
    }

    pub fn from_slices(rows: &[&[f64]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Vector::from_column_slice(r)).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vector] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vector> {
        self.rows
    }

    fn subset_gram(&self, subset: &[usize]) -> nalgebra::DMatrix<f64> {
        let mut g = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for &i in subset {
            g.ger(1.0, &self.rows[i], &self.rows[i], 1.0);
        }
        g
    }

    fn check_indices(&self, subset: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &i in subset {
            if i >= self.len() || seen[i] {
                return Err(Error::BadShape(format!("invalid or repeated index {i}")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Probabilities of removing each active row in one reverse iterative step.
#[derive(Clone, Debug, PartialEq)]
pub struct RemovalDistribution {
    pub active: Vec<usize>,
    pub probs: Vec<f64>,
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Volume sampling probability of the size-`k` subset `subset`.
pub fn volume_subset_probability(pts: &FinitePointSet, subset: &[usize], k: usize) -> Result<f64> {
    let (n, d) = (pts.len(), pts.dim());
    if subset.len() != k || k < d || k > n {
        return Err(Error::BadSubsetSize {
            expected: k,
            actual: subset.len(),
        });
    }
    pts.check_indices(subset)?;
    let Some(log_num) = gram_log_determinant(&pts.subset_gram(subset)) else {
        return Ok(0.0);
    };
    let log_den = gram_log_determinant(&gram(pts.rows())).ok_or(Error::SingularGram)?;
    Ok((log_num - log_den - binomial(n - d, k - d).ln()).exp())
}

/// Removal probabilities in Sylvester form, `q_i = (1 - x_i' G_S^-1 x_i) / (|S| - d)`.
pub fn removal_distribution(pts: &FinitePointSet, active: &[usize]) -> Result<RemovalDistribution> {
    let raw = removal_weights(pts, active)?;
    Ok(RemovalDistribution {
        active: active.to_vec(),
        probs: normalize_removal(raw)?,
    })
}

/// Sylvester-form `q_i` before clamping and renormalization. They sum to one
/// up to rounding.
pub fn removal_weights(pts: &FinitePointSet, active: &[usize]) -> Result<Vec<f64>> {
    check_active(pts, active)?;
    let g = PsdMatrix::symmetrized(pts.subset_gram(active));
    let ginv = invert_psd(&g).map_err(|_| Error::SingularGram)?;
    let scale = (active.len() - pts.dim()) as f64;
    Ok(active
        .iter()
        .map(|&i| {
            let x = &pts.rows[i];
            (1.0 - x.dot(&(ginv.as_matrix() * x))) / scale
        })
        .collect())
}

/// Removal probabilities as determinant ratios,
/// `q_i = det(G_{S \ i}) / ((|S| - d) det(G_S))`.
pub fn removal_distribution_by_determinants(
    pts: &FinitePointSet,
    active: &[usize],
) -> Result<RemovalDistribution> {
    check_active(pts, active)?;
    let log_full = gram_log_determinant(&pts.subset_gram(active)).ok_or(Error::SingularGram)?;
    let scale = (active.len() - pts.dim()) as f64;
    let raw = (0..active.len())
        .map(|pos| {
            let rest: Vec<usize> = active
                .iter()
                .enumerate()
                .filter_map(|(j, &i)| (j != pos).then_some(i))
                .collect();
            gram_log_determinant(&pts.subset_gram(&rest))
                .map_or(0.0, |l| (l - log_full).exp() / scale)
        })
        .collect();
    Ok(RemovalDistribution {
        active: active.to_vec(),
        probs: normalize_removal(raw)?,
    })
}

fn check_active(pts: &FinitePointSet, active: &[usize]) -> Result<()> {
    if active.len() <= pts.dim() {
        return Err(Error::BadShape(format!(
            "removal needs more than d = {} active rows, got {}",
            pts.dim(),
            active.len()
        )));
    }
    pts.check_indices(active)
}

fn normalize_removal(mut q: Vec<f64>) -> Result<Vec<f64>> {
    for v in q.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVE_TOLERANCE {
                return Err(Error::NegativeProbability { value: *v });
            }
            *v = 0.0;
        }
    }
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(Error::SingularGram);
    }
    q.iter_mut().for_each(|v| *v /= total);
    Ok(q)
}

/// Inverse-CDF draw over `probs` in index order.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Size-`k` volume sample by reverse iterative removal. Returns sorted indices.
///
/// One Gram inverse is formed up front; each removal then downdates the
/// inverse and the leverages of the remaining rows in `O(n d)`.
pub fn reverse_iterative_sample(
    pts: &FinitePointSet,
    k: usize,
    rng: &mut SimRng,
) -> Result<Vec<usize>> {
    reverse_iterative_traced(pts, k, rng, |_, _| {})
}

/// [`reverse_iterative_sample`] reporting `(active, q)` before every removal.
pub(crate) fn reverse_iterative_traced(
    pts: &FinitePointSet,
    k: usize,
    rng: &mut SimRng,
    mut on_step: impl FnMut(&[usize], &[f64]),
) -> Result<Vec<usize>> {
    let (n, d) = (pts.len(), pts.dim());
    if k < d || k > n {
        return Err(Error::BadSubsetSize {
            expected: k,
            actual: n,
        });
    }
    let mut active: Vec<usize> = (0..n).collect();
    if k == n {
        return Ok(active);
    }
    let mut ginv =
        invert_psd(&PsdMatrix::symmetrized(gram(pts.rows()))).map_err(|_| Error::SingularGram)?;
    let mut leverage: Vec<f64> = pts
        .rows
        .iter()
        .map(|x| x.dot(&(ginv.as_matrix() * x)))
        .collect();

    while active.len() > k {
        let scale = (active.len() - d) as f64;
        let raw = active
            .iter()
            .map(|&i| (1.0 - leverage[i]) / scale)
            .collect();
        let q = normalize_removal(raw)?;
        on_step(&active, &q);

        let pos = sample_categorical(&q, rng);
        let removed = active.remove(pos);
        let x = &pts.rows[removed];
        let u = ginv.as_matrix() * x;
        let slack = 1.0 - leverage[removed];
        ginv = downdate_inverse(&ginv, x)?;
        for &i in &active {
            let c = pts.rows[i].dot(&u);
            leverage[i] += c * c / slack;
        }
    }
    Ok(active)
}

/// Exact volume sampling law over all size-`k` subsets, keyed by sorted index set.
pub fn brute_force_volume_distribution(
    pts: &FinitePointSet,
    k: usize,
) -> Result<BTreeMap<Vec<usize>, f64>> {
    let (n, d) = (pts.len(), pts.dim());
    if k < d || k > n {
        return Err(Error::BadSubsetSize {
            expected: k,
            actual: n,
        });
    }
    let count = binomial(n, k).round() as u128;
    if count > MAX_ENUMERATED_SUBSETS {
        return Err(Error::TooLarge {
            count,
            limit: MAX_ENUMERATED_SUBSETS,
        });
    }
    let mut law = BTreeMap::new();
    for subset in combinations(n, k) {
        let p = volume_subset_probability(pts, &subset, k)?;
        law.insert(subset, p);
    }
    Ok(law)
}

/// All size-`k` subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
