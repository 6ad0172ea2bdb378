//! Distribution-level checks on the particle engine that go beyond
//! fixed-time histograms: the Dynkin compensator of empirical averages,
//! its quadratic variation, and exchangeability of the labeled system.

use moran_core::*;
use rayon::prelude::*;

/// Drift of F(eta) = m(eta)(phi) at the configuration with these counts:
/// m(G phi) with G the single-particle jump generator frozen at m(eta).
fn empirical_drift(spec: &ModelSpec, counts: &[f64], phi: &TestFunction) -> f64 {
    let m = Measure::normalized(counts.to_vec()).unwrap();
    let g = full_jump_generator(spec, &m);
    (0..counts.len())
        .map(|x| {
            m.weight(x)
                * (0..counts.len())
                    .map(|y| g[(x, y)] * (phi.value(y) - phi.value(x)))
                    .sum::<f64>()
        })
        .sum()
}

/// Carre du champ of the same observable at the same configuration:
/// (1/N) m(Gamma_G phi).
fn empirical_field(spec: &ModelSpec, counts: &[f64], phi: &TestFunction, n: u64) -> f64 {
    let m = Measure::normalized(counts.to_vec()).unwrap();
    let g = full_jump_generator(spec, &m);
    (0..counts.len())
        .map(|x| {
            m.weight(x)
                * (0..counts.len())
                    .map(|y| g[(x, y)] * (phi.value(y) - phi.value(x)).powi(2))
                    .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64
}

/// Walk the event log, accumulating a piecewise-constant time integral of
/// `rate_fn` along the trajectory. The integrand is exact between events,
/// so the quadrature has no discretization error.
fn integrate_along_events(
    mut counts: Vec<f64>,
    events: &[JumpEvent],
    horizon: f64,
    rate_fn: impl Fn(&[f64]) -> f64,
) -> f64 {
    let mut integral = 0.0;
    let mut prev = 0.0;
    for ev in events {
        integral += (ev.time - prev) * rate_fn(&counts);
        counts[ev.from] -= 1.0;
        counts[ev.to] += 1.0;
        prev = ev.time;
    }
    integral + (horizon - prev) * rate_fn(&counts)
}

/// The compensated empirical average M_t = F(eta_t) - F(eta_0) -
/// integral of LF along the path is a mean-zero martingale, and its
/// expected square equals the expected integral of the carre du champ.
#[test]
fn compensated_empirical_average_is_mean_zero_with_matching_variance() {
    let spec = two_allelic(1.0, 1.0, 0.5, 1.5).unwrap();
    let n = 32u64;
    let horizon = 1.5;
    let replicates = 4000u64;
    let phi = TestFunction::indicator(2, 0);
    let mu0 = Measure::normalized(vec![0.6, 0.4]).unwrap();
    let samples: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(4242, "statistical/martingale", r);
            let opts = SimulateOptions {
                record_events: true,
                ..SimulateOptions::default()
            };
            let rec =
                simulate_with_options(&spec, n, &mu0, horizon, &[0.0, horizon], seed, opts)
                    .unwrap();
            let counts0: Vec<f64> = rec.measures[0]
                .weights()
                .iter()
                .map(|w| (w * n as f64).round())
                .collect();
            let f0 = rec.measures[0].expect(&phi);
            let f_t = rec.measures[1].expect(&phi);
            let events = rec.events.as_ref().unwrap();
            let drift = integrate_along_events(counts0.clone(), events, horizon, |c| {
                empirical_drift(&spec, c, &phi)
            });
            let field = integrate_along_events(counts0, events, horizon, |c| {
                empirical_field(&spec, c, &phi, n)
            });
            (f_t - f0 - drift, field)
        })
        .collect();
    let increments: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let stats = summarize(&increments).unwrap();
    let se = stats.std_dev / (replicates as f64).sqrt();
    assert!(
        stats.mean.abs() <= 3.5 * se,
        "martingale mean {:.2e} exceeds 3.5 se {:.2e}",
        stats.mean,
        se
    );
    let mean_square =
        increments.iter().map(|m| m * m).sum::<f64>() / replicates as f64;
    let mean_bracket = samples.iter().map(|s| s.1).sum::<f64>() / replicates as f64;
    let ratio = mean_square / mean_bracket;
    assert!(
        (0.85..=1.15).contains(&ratio),
        "quadratic variation ratio {ratio:.3} outside [0.85, 1.15] \
         (mean square {mean_square:.4}, mean bracket {mean_bracket:.4})"
    );
}

/// Particle labels carry no information: every slot has the same
/// marginal type law, and the joint law of a slot pair is symmetric
/// under swapping the slots.
#[test]
fn labeled_system_is_exchangeable() {
    let spec = two_allelic(1.0, 1.0, 1.0, 2.0).unwrap();
    let n = 3u64;
    let horizon = 1.0;
    let replicates = 20_000u64;
    let mu0 = Measure::normalized(vec![0.5, 0.5]).unwrap();
    let draws: Vec<Vec<usize>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(777, "statistical/exchangeable", r);
            let rec =
                simulate_labeled(&spec, n, &mu0, horizon, &[horizon], seed, 1_000_000).unwrap();
            rec.slot_types[0].clone()
        })
        .collect();
    let m = replicates as f64;
    let mut marginals = vec![[0.0f64; 2]; n as usize];
    let mut pair = [[0.0f64; 2]; 2];
    let mut pair_swapped = [[0.0f64; 2]; 2];
    for types in &draws {
        for (slot, &ty) in types.iter().enumerate() {
            marginals[slot][ty] += 1.0 / m;
        }
        pair[types[0]][types[1]] += 1.0 / m;
        pair_swapped[types[1]][types[0]] += 1.0 / m;
    }
    for slot in 1..n as usize {
        let tv = 0.5
            * (0..2)
                .map(|ty| (marginals[slot][ty] - marginals[0][ty]).abs())
                .sum::<f64>();
        assert!(
            tv <= 0.02,
            "slot {slot} marginal deviates from slot 0 by TV {tv:.4}"
        );
    }
    let pair_tv = 0.5
        * (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| (pair[a][b] - pair_swapped[a][b]).abs())
            .sum::<f64>();
    assert!(
        pair_tv <= 0.02,
        "pair law asymmetric under slot swap: TV {pair_tv:.4}"
    );
}
