use infoplane::mi::{ksg_mi, ksg_mi_with, Ensemble, KnnBackend};
use infoplane::numerics::{normal_sample, Matrix, SeededRng};
use proptest::prelude::*;

/// `n` draws of a standard bivariate Gaussian with correlation `rho`.
fn gaussian_pair(rng: &mut SeededRng, n: usize, rho: f64) -> (Ensemble, Ensemble) {
    let x = normal_sample(rng, 0.0, 1.0, n, 1).unwrap();
    let z = normal_sample(rng, 0.0, 1.0, n, 1).unwrap();
    let s = (1.0 - rho * rho).sqrt();
    let y: Vec<f64> = x.as_slice().iter().zip(z.as_slice()).map(|(a, b)| rho * a + s * b).collect();
    (
        Ensemble::new(x).unwrap(),
        Ensemble::new(Matrix::from_vec(n, 1, y).unwrap()).unwrap(),
    )
}

fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

#[test]
fn bivariate_gaussian_matches_closed_form() {
    let mut rng = SeededRng::new(2024);
    for (rho, tol) in [(0.0, 0.05), (0.3, 0.05), (0.6, 0.05), (0.9, 0.1)] {
        let mean = (0..10)
            .map(|_| {
                let (x, y) = gaussian_pair(&mut rng, 2000, rho);
                ksg_mi(&x, &y, 3).unwrap().nats
            })
            .sum::<f64>()
            / 10.0;
        let want = gaussian_mi(rho);
        assert!((mean - want).abs() <= tol, "rho {rho}: {mean} vs {want}");
    }
}

#[test]
fn error_shrinks_with_sample_size() {
    let mut rng = SeededRng::new(77);
    let want = gaussian_mi(0.6);
    let mean_abs_err = |rng: &mut SeededRng, n: usize| {
        (0..20)
            .map(|_| {
                let (x, y) = gaussian_pair(rng, n, 0.6);
                (ksg_mi_with(&x, &y, 3, KnnBackend::KdTree).unwrap().nats - want).abs()
            })
            .sum::<f64>()
            / 20.0
    };
    let small = mean_abs_err(&mut rng, 250);
    let large = mean_abs_err(&mut rng, 4000);
    assert!(large <= small, "N=4000 error {large} exceeds N=250 error {small}");
}

#[test]
fn independent_gaussians_estimate_near_zero_in_higher_dimension() {
    let mut rng = SeededRng::new(5);
    let x = Ensemble::new(normal_sample(&mut rng, 0.0, 1.0, 1500, 3).unwrap()).unwrap();
    let y = Ensemble::new(normal_sample(&mut rng, 0.0, 1.0, 1500, 2).unwrap()).unwrap();
    assert!(ksg_mi(&x, &y, 3).unwrap().nats.abs() < 0.05);
}

#[test]
fn deterministic_function_has_large_mi() {
    let mut rng = SeededRng::new(9);
    let x = normal_sample(&mut rng, 0.0, 1.0, 1000, 1).unwrap();
    let y = x.map(|v| v.powi(3));
    let mi = ksg_mi(&Ensemble::new(x).unwrap(), &Ensemble::new(y).unwrap(), 3).unwrap();
    // a noiseless bijection has unbounded MI; the estimate sits near ψ(N) − ψ(k)
    assert!(mi.nats > 4.0, "{}", mi.nats);
}

fn ensemble_strategy() -> impl Strategy<Value = (u64, usize, usize, usize, usize)> {
    (any::<u64>(), 12usize..120, 1usize..4, 1usize..4, 1usize..5)
}

fn random_ensembles(seed: u64, n: usize, dx: usize, dy: usize) -> (Matrix, Matrix) {
    let mut rng = SeededRng::new(seed);
    let x = normal_sample(&mut rng, 0.0, 1.0, n, dx).unwrap();
    let mut y = normal_sample(&mut rng, 0.0, 1.0, n, dy).unwrap();
    // correlate the first coordinates so the estimate is not trivially near zero
    for r in 0..n {
        let v = y.get(r, 0) + x.get(r, 0);
        y.set(r, 0, v);
    }
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn symmetric_bit_for_bit((seed, n, dx, dy, k) in ensemble_strategy()) {
        let (x, y) = random_ensembles(seed, n, dx, dy);
        let (x, y) = (Ensemble::new(x).unwrap(), Ensemble::new(y).unwrap());
        let a = ksg_mi(&x, &y, k).unwrap().nats;
        let b = ksg_mi(&y, &x, k).unwrap().nats;
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn joint_scaling_is_bit_exact((seed, n, dx, dy, k) in ensemble_strategy(), a in 1e-3f64..1e3) {
        let (x, y) = random_ensembles(seed, n, dx, dy);
        let base = ksg_mi(&Ensemble::new(x.clone()).unwrap(), &Ensemble::new(y.clone()).unwrap(), k).unwrap().nats;
        let scaled = ksg_mi(&Ensemble::new(x.scale(a)).unwrap(), &Ensemble::new(y.scale(a)).unwrap(), k).unwrap().nats;
        prop_assert_eq!(base.to_bits(), scaled.to_bits());
    }

    #[test]
    fn row_permutation_is_bit_exact((seed, n, dx, dy, k) in ensemble_strategy()) {
        let (x, y) = random_ensembles(seed, n, dx, dy);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = SeededRng::new(seed ^ 0x5eed);
        for i in (1..n).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let base = ksg_mi(&Ensemble::new(x.clone()).unwrap(), &Ensemble::new(y.clone()).unwrap(), k).unwrap().nats;
        let shuffled = ksg_mi(
            &Ensemble::new(x.select_rows(&order)).unwrap(),
            &Ensemble::new(y.select_rows(&order)).unwrap(),
            k,
        )
        .unwrap()
        .nats;
        prop_assert_eq!(base.to_bits(), shuffled.to_bits());
    }

    #[test]
    fn kd_tree_backend_matches_brute_force((seed, n, dx, dy, k) in ensemble_strategy()) {
        let (x, y) = random_ensembles(seed, n, dx, dy);
        let (x, y) = (Ensemble::new(x).unwrap(), Ensemble::new(y).unwrap());
        let brute = ksg_mi_with(&x, &y, k, KnnBackend::BruteForce).unwrap();
        let tree = ksg_mi_with(&x, &y, k, KnnBackend::KdTree).unwrap();
        prop_assert_eq!(brute, tree);
    }
}
