//! Property-based checks of structural invariants that must hold for
//! arbitrary admissible inputs, not just the curated fixtures.

use moran_core::*;
use proptest::prelude::*;

fn raw_weights() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..10.0, 2..6)
}

/// Three positive weight vectors of one shared length.
fn weight_triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..6).prop_flat_map(|k| {
        let v = proptest::collection::vec(0.01f64..10.0, k);
        (v.clone(), v.clone(), v)
    })
}

/// Off-diagonal rate entries for a conservative generator of size k.
fn rate_entries() -> impl Strategy<Value = Vec<f64>> {
    (2usize..6).prop_flat_map(|k| proptest::collection::vec(0.05f64..5.0, k * k))
}

fn rate_matrix(entries: &[f64]) -> RateMatrix {
    let k = (entries.len() as f64).sqrt() as usize;
    RateMatrix::from_off_diagonal(k, |x, y| entries[x * k + y]).unwrap()
}

/// Additive kernel data: mutation entries plus death and birth potentials
/// of the matching size.
fn kernel_data() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..5).prop_flat_map(|k| {
        (
            proptest::collection::vec(0.05f64..5.0, k * k),
            proptest::collection::vec(0.0f64..3.0, k),
            proptest::collection::vec(0.0f64..3.0, k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_yields_probability_vectors(raw in raw_weights()) {
        let m = Measure::normalized(raw).unwrap();
        let total: f64 = m.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(m.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn tv_distance_is_a_bounded_metric((a, b, c) in weight_triple()) {
        let (a, b, c) = (
            Measure::normalized(a).unwrap(),
            Measure::normalized(b).unwrap(),
            Measure::normalized(c).unwrap(),
        );
        let ab = tv_distance(&a, &b).unwrap();
        let ba = tv_distance(&b, &a).unwrap();
        let ac = tv_distance(&a, &c).unwrap();
        let bc = tv_distance(&b, &c).unwrap();
        prop_assert!(tv_distance(&a, &a).unwrap() <= 1e-15);
        prop_assert!((ab - ba).abs() <= 1e-15);
        prop_assert!((0.0..=1.0 + 1e-15).contains(&ab));
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn generator_exponentials_are_stochastic(entries in rate_entries(), t in 0.0f64..3.0) {
        let q = rate_matrix(&entries);
        let k = q.size();
        let p = linalg::expm(&(q.matrix() * t)).unwrap();
        for x in 0..k {
            let row_sum: f64 = (0..k).map(|y| p[(x, y)]).sum();
            prop_assert!((row_sum - 1.0).abs() <= 1e-10, "row {x} sums to {row_sum}");
            for y in 0..k {
                prop_assert!(p[(x, y)] >= -1e-12, "negative transition mass at ({x}, {y})");
            }
        }
    }

    #[test]
    fn symmetric_reduction_preserves_the_drift_potential(
        (entries, death, birth) in kernel_data(),
    ) {
        let k = death.len();
        let kernel = SelectionKernel::additive(
            MuFn::Const(death),
            MuFn::Const(birth),
            SymPart::Zero,
        );
        let spec = ModelSpec::new(
            StateSpace::new(k).unwrap(),
            rate_matrix(&entries),
            kernel,
        )
        .unwrap();
        let reduced = sigma_reduce(&spec).unwrap();
        let original_potential = lambda_of(&spec).unwrap();
        let reduced_potential = lambda_of(&reduced).unwrap();
        for x in 0..k {
            prop_assert!(
                (original_potential.value(x) - reduced_potential.value(x)).abs() <= 1e-12,
                "potential changed at state {x}"
            );
        }
        // The reduced kernel never has both parts active at one state.
        let (vd, vb) = reduced
            .selection()
            .additive_parts(&Measure::uniform(k), k)
            .unwrap();
        for x in 0..k {
            prop_assert!(vd[x].min(vb[x]).abs() <= 1e-15);
        }
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(
        (entries, death, birth) in kernel_data(),
        seed in any::<u64>(),
    ) {
        let k = death.len();
        let kernel = SelectionKernel::additive(
            MuFn::Const(death),
            MuFn::Const(birth),
            SymPart::Zero,
        );
        let spec = ModelSpec::new(
            StateSpace::new(k).unwrap(),
            rate_matrix(&entries),
            kernel,
        )
        .unwrap();
        let mu0 = Measure::uniform(k);
        let first = simulate(&spec, 16, &mu0, 0.5, &[0.5], seed).unwrap();
        let second = simulate(&spec, 16, &mu0, 0.5, &[0.5], seed).unwrap();
        prop_assert_eq!(first.final_counts, second.final_counts);
        prop_assert_eq!(first.event_count, second.event_count);
    }
}
