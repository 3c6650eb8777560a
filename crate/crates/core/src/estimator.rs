//! Least squares estimators and the volume-sample augmentation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{
    cubic_response, draw_iid, exact_covariance, DistributionKind, LabelOracle, OracleKind,
    PointDistribution, SimRng,
};
use crate::error::{Error, Result};
use crate::linalg::{
    gram_log_determinant, pseudo_solve, solve_psd, stack_rows, PointMatrix, Vector,
};
use crate::rescaled::{decode_tuple, exact_vs_law};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Iid,
    VsD,
    Augmented,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Iid => "iid",
            Provenance::VsD => "vs_d",
            Provenance::Augmented => "augmented",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub points: Vec<Vector>,
    pub labels: Vec<f64>,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn new(points: Vec<Vector>, labels: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                actual: labels.len(),
            });
        }
        Ok(LabeledSample {
            points,
            labels,
            provenance,
        })
    }

    pub fn empty(provenance: Provenance) -> Self {
        LabeledSample {
            points: Vec::new(),
            labels: Vec::new(),
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn design(&self) -> PointMatrix {
        stack_rows(&self.points)
    }

    pub fn response(&self) -> Vector {
        Vector::from_column_slice(&self.labels)
    }
}

/// Draw `k` points i.i.d. and query their labels.
pub fn draw_labeled_iid(
    dist: &PointDistribution,
    oracle: &mut LabelOracle,
    k: usize,
    point_rng: &mut SimRng,
    label_rng: &mut SimRng,
) -> Result<LabeledSample> {
    let points = draw_iid(dist, k, point_rng);
    let labels = oracle.query_labels(&points, label_rng)?;
    LabeledSample::new(points, labels, Provenance::Iid)
}

/// `w*(S) = X^+ y`.
pub fn least_squares(sample: &LabeledSample) -> Result<Vector> {
    if sample.is_empty() {
        return Err(Error::BadShape("empty sample".into()));
    }
    pseudo_solve(&sample.design(), &sample.response())
}

/// Solution of a square system by Cramer's rule, `w_i = det(X <-i y) / det(X)`.
pub fn cramer_solve(x: &PointMatrix, y: &Vector) -> Result<Vector> {
    if !x.is_square() || x.nrows() != y.len() {
        return Err(Error::BadShape(
            "Cramer's rule needs a square system".into(),
        ));
    }
    let det = x.clone().determinant();
    if det == 0.0 {
        return Err(Error::SingularGram);
    }
    Ok(Vector::from_fn(x.ncols(), |i, _| {
        let mut xi = x.clone();
        xi.set_column(i, y);
        xi.determinant() / det
    }))
}

/// Population optimum `w*_D = Sigma_D^-1 E[x y]`, in closed form.
pub fn optimum_weights(dist: &PointDistribution, oracle: &LabelOracle) -> Result<Vector> {
    let d = dist.dim();
    if let OracleKind::Linear { weights, .. } = oracle.kind() {
        return Ok(weights.clone());
    }
    let sigma = exact_covariance(dist)?;
    let cross = match (oracle.kind(), dist.kind()) {
        (OracleKind::CubicSynthetic { .. }, DistributionKind::Gaussian { covariance, .. }) => {
            // E[x_j x_i^3 / 3] = S_ii S_ij, so E[x xi(x)] = S (1 + diag S)
            let s = covariance.as_matrix();
            let v = Vector::from_fn(d, |i, _| 1.0 + s[(i, i)]);
            return Ok(v);
        }
        (OracleKind::CubicSynthetic { .. }, DistributionKind::Discrete { atoms, probs, .. }) => {
            atoms
                .iter()
                .zip(probs.iter())
                .fold(Vector::zeros(d), |acc, (a, &p)| {
                    acc + a * (p * cubic_response(a))
                })
        }
        (
            OracleKind::AttachedLabels {
                atoms: labelled,
                labels,
            },
            DistributionKind::Discrete { atoms, probs, .. },
        ) => {
            let mut acc = Vector::zeros(d);
            for (a, &p) in atoms.iter().zip(probs.iter()) {
                if p == 0.0 {
                    continue;
                }
                let i = labelled
                    .iter()
                    .position(|b| b == a)
                    .ok_or(Error::UnlabeledPoint)?;
                acc += a * (p * labels[i]);
            }
            acc
        }
        _ => {
            return Err(Error::Unavailable(
                "no closed form for E[xy] with this distribution and oracle".into(),
            ))
        }
    };
    solve_psd(&sigma, &cross).map_err(|_| Error::SingularCovariance)
}

/// One estimator with its provenance and cost.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport {
    pub w: Vector,
    pub sample_size: usize,
    /// Labels paid for by this estimator.
    pub query_count: u64,
    pub provenance: Provenance,
    /// `||w - w*_D||^2`, present only when `w*_D` has a closed form.
    pub error_sq: Option<f64>,
}

impl EstimatorReport {
    /// `provenance,k,T_index,seed,query_count,error_sq,w_1,...,w_d`.
    pub fn to_csv_row(&self, t_index: usize, seed: u64) -> String {
        let mut row = format!(
            "{},{},{},{},{},{}",
            self.provenance,
            self.sample_size,
            t_index,
            seed,
            self.query_count,
            self.error_sq.map(|e| e.to_string()).unwrap_or_default()
        );
        for w in self.w.iter() {
            row.push(',');
            row.push_str(&w.to_string());
        }
        row
    }
}

/// Plain least squares on an i.i.d. labelled sample.
pub fn iid_least_squares(
    sample: &LabeledSample,
    w_star: Option<&Vector>,
) -> Result<EstimatorReport> {
    let w = least_squares(sample)?;
    let error_sq = w_star.map(|s| estimation_error(&w, s)).transpose()?;
    Ok(EstimatorReport {
        sample_size: sample.len(),
        query_count: sample.len() as u64,
        provenance: Provenance::Iid,
        error_sq,
        w,
    })
}

/// Augment `iid_sample` with `d` points from `d_sampler`, label them and solve
/// least squares on the union. Unbiased for `w*_D` whenever `d_sampler` draws
/// exactly from `VS^d`.
///
/// Points come from `point_rng` and the new labels from `label_rng`.
pub fn augmented_least_squares<F>(
    iid_sample: &LabeledSample,
    dist: &PointDistribution,
    oracle: &mut LabelOracle,
    d_sampler: &mut F,
    point_rng: &mut SimRng,
    label_rng: &mut SimRng,
) -> Result<EstimatorReport>
where
    F: FnMut(&mut SimRng) -> Result<Vec<Vector>>,
{
    let d = dist.dim();
    let extra = d_sampler(point_rng)?;
    if extra.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: extra.len(),
        });
    }
    let labels = oracle.query_labels(&extra, label_rng)?;
    let mut combined = iid_sample.clone();
    combined.points.extend(extra);
    combined.labels.extend(labels);
    combined.provenance = Provenance::Augmented;
    let w = least_squares(&combined)?;
    let error_sq = match optimum_weights(dist, oracle) {
        Ok(star) => Some(estimation_error(&w, &star)?),
        Err(_) => None,
    };
    Ok(EstimatorReport {
        sample_size: combined.len(),
        query_count: combined.len() as u64,
        provenance: Provenance::Augmented,
        error_sq,
        w,
    })
}

/// Exact expectation of the augmented estimator for a discrete distribution
/// with attached labels: `k` i.i.d. points plus an exact `VS^d` block, summed
/// over every outcome.
pub fn enumerate_augmented_expectation(
    dist: &PointDistribution,
    oracle: &LabelOracle,
    k: usize,
) -> Result<Vector> {
    let (atoms, probs) = dist
        .atoms()
        .ok_or_else(|| Error::Unavailable("enumeration needs a discrete distribution".into()))?;
    let OracleKind::AttachedLabels {
        atoms: labelled,
        labels,
    } = oracle.kind()
    else {
        return Err(Error::Unavailable(
            "enumeration needs deterministic labels".into(),
        ));
    };
    let label_of = |i: usize| -> Result<f64> {
        let j = labelled
            .iter()
            .position(|b| b == &atoms[i])
            .ok_or(Error::UnlabeledPoint)?;
        Ok(labels[j])
    };
    let d = dist.dim();
    let n = atoms.len();
    let vs = exact_vs_law(dist, d)?;
    let mut total = Vector::zeros(d);
    for code in 0..n.pow(k as u32) {
        let iid = decode_tuple(code, n, k);
        let p_iid: f64 = iid.iter().map(|&i| probs[i]).product();
        if p_iid == 0.0 {
            continue;
        }
        for (tuple, p_vs) in &vs {
            let idx: Vec<usize> = iid.iter().chain(tuple.iter()).copied().collect();
            let sample = LabeledSample::new(
                idx.iter().map(|&i| atoms[i].clone()).collect(),
                idx.iter().map(|&i| label_of(i)).collect::<Result<_>>()?,
                Provenance::Augmented,
            )?;
            total += least_squares(&sample)? * (p_iid * p_vs);
        }
    }
    Ok(total)
}

/// Componentwise mean of the reports' weight vectors.
pub fn average_estimators(reports: &[EstimatorReport]) -> Result<Vector> {
    let ws: Vec<&Vector> = reports.iter().map(|r| &r.w).collect();
    average_vectors(&ws)
}

pub fn average_vectors(ws: &[&Vector]) -> Result<Vector> {
    let first = ws
        .first()
        .ok_or_else(|| Error::InsufficientData("nothing to average".into()))?;
    let d = first.len();
    let mut sum = Vector::zeros(d);
    for w in ws {
        if w.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: w.len(),
            });
        }
        sum += *w;
    }
    Ok(sum / ws.len() as f64)
}

/// `||w_bar - w_star||^2`.
pub fn estimation_error(w_bar: &Vector, w_star: &Vector) -> Result<f64> {
    if w_bar.len() != w_star.len() {
        return Err(Error::DimensionMismatch {
            expected: w_star.len(),
            actual: w_bar.len(),
        });
    }
    Ok((w_bar - w_star).norm_squared())
}

/// Weights `det(X_-i' X_-i) / ((k - d) det(X'X))` of the leave-one-out identity.
pub fn leave_one_out_weights(x: &PointMatrix) -> Result<Vec<f64>> {
    let (k, d) = x.shape();
    if k <= d {
        return Err(Error::BadShape(format!(
            "need more rows than columns, got {k}x{d}"
        )));
    }
    let log_full = gram_log_determinant(&(x.transpose() * x)).ok_or(Error::SingularGram)?;
    Ok((0..k)
        .map(|i| {
            let xi = x.clone().remove_row(i);
            gram_log_determinant(&(xi.transpose() * &xi))
                .map_or(0.0, |l| (l - log_full).exp() / (k - d) as f64)
        })
        .collect())
}

/// `|| X^+ y - sum_i w_i X_-i^+ y_-i ||` for the leave-one-out weights `w_i`.
pub fn leave_one_out_identity_residual(x: &PointMatrix, y: &Vector) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let weights = leave_one_out_weights(x)?;
    let lhs = pseudo_solve(x, y)?;
    let mut rhs = Vector::zeros(x.ncols());
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let xi = x.clone().remove_row(i);
        let yi = y.clone().remove_row(i);
        rhs += pseudo_solve(&xi, &yi)? * w;
    }
    Ok((lhs - rhs).norm())
}
