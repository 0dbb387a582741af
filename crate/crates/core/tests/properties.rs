//! Property tests across module boundaries, driven through the public API.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use sigscore::censoring::weighted_mmd;
use sigscore::mmd::{sig_mmd, Estimator};
use sigscore::paths::AugmentedPath;
use sigscore::powerlab::{power_trial, PowerOptions};
use sigscore::sigkernel::{gram, sig_kernel, KernelConfig};
use sigscore::synthgen::{ScenarioKind, ScenarioSpec};

/// Random walk with a trailing time channel.
fn walk(steps: &[f64], variates: usize) -> AugmentedPath {
    let rows = steps.len() / variates;
    let mut level = vec![0.0; variates];
    let mut data = Vec::new();
    for r in 0..rows {
        for (v, s) in level.iter_mut().zip(&steps[r * variates..]) {
            *v += s;
        }
        data.extend_from_slice(&level);
        data.push(r as f64 / (rows - 1).max(1) as f64);
    }
    AugmentedPath::from_rows(data, variates + 1).unwrap()
}

fn walk_strategy(variates: usize) -> impl Strategy<Value = AugmentedPath> {
    (2usize..7).prop_flat_map(move |rows| {
        prop::collection::vec(-0.6f64..0.6, rows * variates).prop_map(move |s| walk(&s, variates))
    })
}

fn sets(variates: usize) -> impl Strategy<Value = (Vec<AugmentedPath>, Vec<AugmentedPath>)> {
    (
        prop::collection::vec(walk_strategy(variates), 2..6),
        prop::collection::vec(walk_strategy(variates), 2..6),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_symmetric(x in walk_strategy(2), y in walk_strategy(2), order in 0u32..3) {
        let cfg = KernelConfig::rbf(0.8).with_dyadic_order(order);
        prop_assert_eq!(sig_kernel(&x, &y, &cfg).unwrap(), sig_kernel(&y, &x, &cfg).unwrap());
    }

    #[test]
    fn gram_is_positive_semidefinite(paths in prop::collection::vec(walk_strategy(1), 2..9)) {
        let g = gram(&paths, None, &KernelConfig::rbf(1.0), false).unwrap();
        let n = paths.len();
        let m = DMatrix::from_row_slice(n, n, g.entries());
        let scale = m.diagonal().max();
        let min = SymmetricEigen::new(m).eigenvalues.min();
        prop_assert!(min >= -1e-8 * scale.max(1.0), "min eigenvalue {}", min);
    }

    #[test]
    fn biased_mmd_is_a_pseudometric((x, y) in sets(1)) {
        let cfg = KernelConfig::rbf(1.0);
        let xy = sig_mmd(&x, &y, &cfg, Estimator::Biased).unwrap().value;
        let yx = sig_mmd(&y, &x, &cfg, Estimator::Biased).unwrap().value;
        prop_assert!((xy - yx).abs() <= 1e-12 * xy.abs().max(1.0));
        prop_assert!(xy >= 0.0);
        prop_assert_eq!(sig_mmd(&x, &x.clone(), &cfg, Estimator::Biased).unwrap().value, 0.0);
        let mut shuffled = x.clone();
        shuffled.reverse();
        prop_assert!(sig_mmd(&x, &shuffled, &cfg, Estimator::Biased).unwrap().value <= 1e-12);
    }

    #[test]
    fn unbiased_differs_by_the_diagonal((x, y) in sets(2)) {
        let cfg = KernelConfig::rbf(1.2);
        let (m, n) = (x.len() as f64, y.len() as f64);
        let kxx = gram(&x, None, &cfg, false).unwrap();
        let kyy = gram(&y, None, &cfg, false).unwrap();
        let sum = |g: &sigscore::sigkernel::GramMatrix| g.entries().iter().sum::<f64>();
        let trace = |g: &sigscore::sigkernel::GramMatrix| (0..g.shape().0).map(|i| g.get(i, i)).sum::<f64>();
        let biased = sig_mmd(&x, &y, &cfg, Estimator::Biased).unwrap().value;
        let unbiased = sig_mmd(&x, &y, &cfg, Estimator::Unbiased).unwrap().value;
        // unbiased = biased with the within-set sums renormalised off the diagonal
        let expected = biased
            - sum(&kxx) / (m * m) - sum(&kyy) / (n * n)
            + (sum(&kxx) - trace(&kxx)) / (m * (m - 1.0))
            + (sum(&kyy) - trace(&kyy)) / (n * (n - 1.0));
        prop_assert!((unbiased - expected).abs() <= 1e-12 * biased.abs().max(1.0));
    }

    #[test]
    fn unit_weights_reproduce_sig_mmd((x, y) in sets(2)) {
        let cfg = KernelConfig::rbf(0.9);
        let (wx, wy) = (vec![1.0; x.len()], vec![1.0; y.len()]);
        for est in [Estimator::Biased, Estimator::Unbiased] {
            let plain = sig_mmd(&x, &y, &cfg, est).unwrap().value;
            let censored = weighted_mmd(&x, &y, &wx, &wy, &cfg, est).unwrap().value;
            prop_assert_eq!(plain.to_bits(), censored.to_bits());
        }
        let zero = weighted_mmd(&x, &y, &vec![0.0; x.len()], &vec![0.0; y.len()], &cfg, Estimator::Biased).unwrap();
        prop_assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn nullified_paths_are_absorbed_by_the_pivot((x, y) in sets(1), bump in -2.0f64..2.0, tiny in 0.0f64..1e-9) {
        let cfg = KernelConfig::rbf(1.0);
        let mut wx = vec![0.7; x.len()];
        wx[0] = tiny;
        let wy = vec![0.4; y.len()];
        let base = weighted_mmd(&x, &y, &wx, &wy, &cfg, Estimator::Biased).unwrap().value;
        let mut moved = x.clone();
        let data: Vec<f64> = x[0]
            .data()
            .chunks(2)
            .flat_map(|r| [r[0] + bump, r[1]])
            .collect();
        moved[0] = AugmentedPath::from_rows(data, 2).unwrap();
        let after = weighted_mmd(&moved, &y, &wx, &wy, &cfg, Estimator::Biased).unwrap().value;
        prop_assert!((after - base).abs() < 1e-8, "{} vs {}", base, after);
    }
}

#[test]
fn dyadic_refinement_converges_monotonically() {
    let smooth = |a: f64, w: f64| {
        let data: Vec<f64> = (0..6)
            .flat_map(|i| {
                let t = i as f64 / 5.0;
                [a * (w * t).sin(), t]
            })
            .collect();
        AugmentedPath::from_rows(data, 2).unwrap()
    };
    let (x, y) = (smooth(0.8, 2.0), smooth(-0.5, 3.0));
    let values: Vec<f64> = (0..6)
        .map(|o| sig_kernel(&x, &y, &KernelConfig::rbf(1.0).with_dyadic_order(o)).unwrap())
        .collect();
    let steps: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(steps.windows(2).all(|s| s[1] < s[0]), "{steps:?}");
}

#[test]
fn null_p_values_are_super_uniform() {
    let opts = PowerOptions {
        permutations: 100,
        seed: 21,
        ..PowerOptions::default()
    };
    let null = ScenarioSpec::new(ScenarioKind::SameGp);
    let trials = 500;
    let p: Vec<f64> = (0..trials)
        .map(|r| power_trial(&null, 4, 12, r, &opts, None).unwrap().p_value)
        .collect();
    for decile in 1..10 {
        let u = decile as f64 / 10.0;
        let frac = p.iter().filter(|&&v| v <= u).count() as f64 / trials as f64;
        assert!(frac <= u + 0.05, "P(p ≤ {u}) = {frac}");
    }
}
