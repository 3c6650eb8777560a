//! Monte Carlo behaviour of the estimators on the cubic Gaussian model.

use volsq::data::{LabelOracle, PointDistribution, RngState, SimRng};
use volsq::estimator::{augmented_least_squares, draw_labeled_iid, least_squares, optimum_weights};
use volsq::rescaled::gaussian_vs_sample;
use volsq::Vector;

/// Componentwise mean and standard error of `n` estimators.
fn mean_and_se(
    n: usize,
    mut draw: impl FnMut(&mut SimRng, &mut SimRng) -> Vector,
    seed: u64,
) -> (Vector, Vector) {
    let mut pr = RngState::new(seed, 0).rng();
    let mut lr = RngState::new(seed, 1).rng();
    let ws: Vec<Vector> = (0..n).map(|_| draw(&mut pr, &mut lr)).collect();
    let d = ws[0].len();
    let mean = ws.iter().fold(Vector::zeros(d), |a, w| a + w) / n as f64;
    let var = ws.iter().fold(Vector::zeros(d), |a, w| {
        let c = w - &mean;
        a + c.component_mul(&c)
    }) / (n - 1) as f64;
    (mean, var.map(|v| (v / n as f64).sqrt()))
}

#[test]
fn augmented_estimator_mean_matches_optimum() {
    let d = 5;
    let dist = PointDistribution::standard_gaussian(d);
    let mut oracle = LabelOracle::cubic(1.0);
    let star = optimum_weights(&dist, &oracle).unwrap();
    let (mean, se) = mean_and_se(
        100_000,
        |pr, lr| {
            let s = draw_labeled_iid(&dist, &mut oracle, 0, pr, lr).unwrap();
            let mut vs = |rng: &mut SimRng| gaussian_vs_sample(&dist, d, rng);
            augmented_least_squares(&s, &dist, &mut oracle, &mut vs, pr, lr)
                .unwrap()
                .w
        },
        41,
    );
    for i in 0..d {
        let z = (mean[i] - star[i]) / se[i];
        assert!(
            z.abs() <= 4.0,
            "component {i}: mean {} vs {}, z = {z:.2}",
            mean[i],
            star[i]
        );
    }
}

#[test]
fn plain_estimator_is_visibly_biased() {
    let d = 5;
    let dist = PointDistribution::standard_gaussian(d);
    let mut oracle = LabelOracle::cubic(1.0);
    let star = optimum_weights(&dist, &oracle).unwrap();
    let (mean, se) = mean_and_se(
        100_000,
        |pr, lr| least_squares(&draw_labeled_iid(&dist, &mut oracle, 10, pr, lr).unwrap()).unwrap(),
        43,
    );
    for i in 0..d {
        let z = (mean[i] - star[i]) / se[i];
        assert!(
            z.abs() > 10.0,
            "component {i}: mean {} vs {}, z = {z:.2}",
            mean[i],
            star[i]
        );
    }
}
