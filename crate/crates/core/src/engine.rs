//! Exact stochastic simulation of the N-particle mutation-selection
//! process: population states are count vectors over the type space, and
//! each event moves one particle from type x to type y at rate
//! counts(x) * (Q(x,y) + (counts(y)/N) * V_m(x,y)) with m the empirical
//! measure.
//!
//! Determinism contract: every run is a pure function of (spec, N, mu0,
//! seed). The sampler draws exactly two uniforms per event (holding time
//! via inverse CDF, then the categorical event choice), so equal seeds
//! reproduce trajectories bitwise.

use crate::error::{Error, Result};
use crate::measure::Measure;
use crate::model::{ModelSpec, RateMatrix, SelectionKernel};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Default per-trajectory safety cap on applied events.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

/// Default cap on the number of enumerated population states.
pub const DEFAULT_SIMPLEX_CAP: usize = 5000;

/// Sample times within this slack of the horizon are accepted.
const GRID_TOL: f64 = 1e-9;

/// One applied jump: a particle of type `from` became type `to` at `time`.
/// States are 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// Mutable simulation state: current counts, clock, event tally, and the
/// owned RNG stream.
#[derive(Debug, Clone)]
pub struct SimState {
    counts: Vec<u64>,
    n: u64,
    time: f64,
    events: u64,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn population(&self) -> u64 {
        self.n
    }

    /// Current clock; +infinity once the state froze (total rate zero).
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn event_count(&self) -> u64 {
        self.events
    }

    pub fn is_frozen(&self) -> bool {
        self.time.is_infinite()
    }

    /// Empirical measure counts/N.
    pub fn empirical(&self) -> Measure {
        empirical_of(&self.counts, self.n)
    }
}

fn empirical_of(counts: &[u64], n: u64) -> Measure {
    Measure::new(counts.iter().map(|c| *c as f64 / n as f64).collect())
        .expect("counts sum to the population size")
}

/// Samples one index from the categorical law proportional to `mu0`.
fn categorical_from_measure(rng: &mut ChaCha8Rng, mu0: &Measure) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (x, w) in mu0.weights().iter().enumerate() {
        acc += w;
        if u < acc {
            return x;
        }
    }
    mu0.len() - 1
}

/// Draws N particle types iid from `mu0` and returns the slot-ordered type
/// vector together with the advanced RNG.
fn init_types(n: u64, mu0: &Measure, seed: u64) -> (Vec<usize>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = (0..n).map(|_| categorical_from_measure(&mut rng, mu0)).collect();
    (types, rng)
}

/// Initial state with N particles sampled independently from `mu0`
/// (a multinomial(N, mu0) count vector).
pub fn init_iid(spec: &ModelSpec, n: u64, mu0: &Measure, seed: u64) -> Result<SimState> {
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    if mu0.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "initial measure",
            expected: spec.size(),
            got: mu0.len(),
        });
    }
    let (types, rng) = init_types(n, mu0, seed);
    let mut counts = vec![0u64; spec.size()];
    for t in types {
        counts[t] += 1;
    }
    Ok(SimState {
        counts,
        n,
        time: 0.0,
        events: 0,
        rng,
    })
}

/// Precomputed kernel table for population-independent kernels; `None`
/// when the kernel depends on the empirical measure and must be
/// re-evaluated each event.
fn kernel_cache(spec: &ModelSpec) -> Option<DMatrix<f64>> {
    if spec.selection().mu_dependent() {
        None
    } else {
        let probe = Measure::uniform(spec.size());
        Some(spec.selection().eval_matrix(&probe, spec.size()))
    }
}

/// Fills `out` with all positive transition rates (from, to, rate) at the
/// given counts and returns the total rate. Both the cached and the naive
/// kernel path walk pairs in the same order, so their totals are bitwise
/// equal for population-independent kernels.
fn rates_into(
    spec: &ModelSpec,
    cache: Option<&DMatrix<f64>>,
    counts: &[u64],
    n: u64,
    out: &mut Vec<(usize, usize, f64)>,
) -> f64 {
    out.clear();
    let size = counts.len();
    let m = Measure::raw(counts.iter().map(|c| *c as f64 / n as f64).collect());
    let q = spec.mutation();
    let mut total = 0.0;
    for x in 0..size {
        if counts[x] == 0 {
            continue;
        }
        let cx = counts[x] as f64;
        for y in 0..size {
            if y == x {
                continue;
            }
            let v = match cache {
                Some(table) => table[(x, y)],
                None => spec.selection().eval(&m, x, y),
            };
            let rate = cx * (q.entry(x, y) + m.weight(y) * v);
            if rate > 0.0 {
                out.push((x, y, rate));
                total += rate;
            }
        }
    }
    total
}

/// All positive transition rates (from, to, rate) out of the population
/// configuration `counts`. Entries with counts(x)=0 or x=y are excluded.
pub fn enumerate_rates(spec: &ModelSpec, counts: &[u64]) -> Result<Vec<(usize, usize, f64)>> {
    if counts.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "population counts",
            expected: spec.size(),
            got: counts.len(),
        });
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    let mut out = Vec::new();
    rates_into(spec, kernel_cache(spec).as_ref(), counts, n, &mut out);
    Ok(out)
}

fn exp_holding(rng: &mut ChaCha8Rng, total: f64) -> f64 {
    let u: f64 = rng.random::<f64>();
    -(1.0 - u).ln() / total
}

fn pick_event(rng: &mut ChaCha8Rng, rates: &[(usize, usize, f64)], total: f64) -> (usize, usize) {
    let target: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(x, y, r) in rates {
        acc += r;
        if target < acc {
            return (x, y);
        }
    }
    let &(x, y, _) = rates.last().expect("nonempty rate list");
    (x, y)
}

fn step_inner(
    spec: &ModelSpec,
    cache: Option<&DMatrix<f64>>,
    state: &mut SimState,
    buf: &mut Vec<(usize, usize, f64)>,
) -> Option<JumpEvent> {
    let total = rates_into(spec, cache, &state.counts, state.n, buf);
    if total <= 0.0 {
        state.time = f64::INFINITY;
        return None;
    }
    let dt = exp_holding(&mut state.rng, total);
    let (x, y) = pick_event(&mut state.rng, buf, total);
    state.counts[x] -= 1;
    state.counts[y] += 1;
    state.time += dt;
    state.events += 1;
    debug_assert_eq!(state.counts.iter().sum::<u64>(), state.n);
    Some(JumpEvent {
        time: state.time,
        from: x,
        to: y,
    })
}

/// Advances the state by exactly one event. Returns `None` and sets the
/// clock to +infinity when the total rate is zero (frozen state).
pub fn step(spec: &ModelSpec, state: &mut SimState) -> Result<Option<JumpEvent>> {
    if state.counts.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "population counts",
            expected: spec.size(),
            got: state.counts.len(),
        });
    }
    let cache = kernel_cache(spec);
    let mut buf = Vec::new();
    Ok(step_inner(spec, cache.as_ref(), state, &mut buf))
}

/// Knobs for [`simulate_with_options`].
#[derive(Debug, Clone, Copy)]
pub struct SimulateOptions {
    /// Abort with an error when a single trajectory applies more events
    /// than this (signals a mis-specified model).
    pub event_cap: u64,
    /// Keep the full event log in the record.
    pub record_events: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            event_cap: DEFAULT_EVENT_CAP,
            record_events: false,
        }
    }
}

/// One finished trajectory: empirical measures at the sample times, final
/// configuration, and bookkeeping for reproducibility.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Empirical measure m(eta_t) at each sample time (right-continuous:
    /// a sample at an event time sees the post-event state).
    pub measures: Vec<Measure>,
    pub final_counts: Vec<u64>,
    pub population: u64,
    pub seed: u64,
    pub event_count: u64,
    /// Clock value at which the trajectory froze (total rate zero), if it
    /// did; the in-memory state clock is +infinity from then on.
    pub frozen_at: Option<f64>,
    /// Full event log when requested in the options.
    pub events: Option<Vec<JumpEvent>>,
}

impl TrajectoryRecord {
    /// CSV with header `time,x_1,...,x_K`, 17 significant digits.
    pub fn measures_csv(&self) -> String {
        let size = self.measures.first().map_or(0, Measure::len);
        let mut out = String::from("time");
        for x in 1..=size {
            out.push_str(&format!(",x_{x}"));
        }
        out.push('\n');
        for (t, m) in self.times.iter().zip(&self.measures) {
            out.push_str(&format!("{t:.16e}"));
            for w in m.weights() {
                out.push_str(&format!(",{w:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    /// CSV with header `time,from,to` (1-based states); empty when the
    /// event log was not recorded.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("time,from,to\n");
        if let Some(events) = &self.events {
            for e in events {
                out.push_str(&format!("{:.16e},{},{}\n", e.time, e.from + 1, e.to + 1));
            }
        }
        out
    }
}

fn check_sample_grid(sample_times: &[f64], horizon: f64) -> Result<()> {
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "horizon must be finite and nonnegative, got {horizon}"
        )));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("sample times must be sorted".into()));
    }
    if sample_times
        .iter()
        .any(|t| !t.is_finite() || *t < -GRID_TOL || *t > horizon + GRID_TOL)
    {
        return Err(Error::InvalidParameter(
            "sample times must lie within [0, horizon]".into(),
        ));
    }
    Ok(())
}

/// Runs one trajectory from an iid initial condition and records the
/// empirical measure at each sample time. Deterministic in (spec, N, mu0,
/// seed).
pub fn simulate(
    spec: &ModelSpec,
    n: u64,
    mu0: &Measure,
    horizon: f64,
    sample_times: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    simulate_with_options(spec, n, mu0, horizon, sample_times, seed, SimulateOptions::default())
}

pub fn simulate_with_options(
    spec: &ModelSpec,
    n: u64,
    mu0: &Measure,
    horizon: f64,
    sample_times: &[f64],
    seed: u64,
    opts: SimulateOptions,
) -> Result<TrajectoryRecord> {
    check_sample_grid(sample_times, horizon)?;
    let mut state = init_iid(spec, n, mu0, seed)?;
    let cache = kernel_cache(spec);
    let mut buf = Vec::new();
    let mut measures: Vec<Measure> = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0usize;
    let mut frozen_at = None;
    let mut events = if opts.record_events { Some(Vec::new()) } else { None };

    loop {
        let total = rates_into(spec, cache.as_ref(), &state.counts, state.n, &mut buf);
        if total <= 0.0 {
            frozen_at = Some(state.time);
            state.time = f64::INFINITY;
            break;
        }
        let dt = exp_holding(&mut state.rng, total);
        let t_next = state.time + dt;
        if t_next > horizon {
            // The next event lands beyond the horizon: every remaining
            // sample sees the current configuration.
            state.time = horizon;
            break;
        }
        while next_sample < sample_times.len() && sample_times[next_sample] < t_next {
            measures.push(empirical_of(&state.counts, state.n));
            next_sample += 1;
        }
        let (x, y) = pick_event(&mut state.rng, &buf, total);
        state.counts[x] -= 1;
        state.counts[y] += 1;
        state.time = t_next;
        state.events += 1;
        if state.events > opts.event_cap {
            return Err(Error::EventCapExceeded {
                cap: opts.event_cap,
                time: state.time,
            });
        }
        if let Some(log) = events.as_mut() {
            log.push(JumpEvent {
                time: t_next,
                from: x,
                to: y,
            });
        }
    }
    while next_sample < sample_times.len() {
        measures.push(empirical_of(&state.counts, state.n));
        next_sample += 1;
    }
    Ok(TrajectoryRecord {
        times: sample_times.to_vec(),
        measures,
        final_counts: state.counts,
        population: n,
        seed,
        event_count: state.events,
        frozen_at,
        events,
    })
}

/// Slot-resolved trajectory: the type of every logical particle at each
/// sample time. The count process embedded in it has the same law as
/// [`simulate`]; the mover within a type is chosen uniformly, which is
/// what makes iid initial conditions stay exchangeable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabeledTrajectoryRecord {
    pub times: Vec<f64>,
    /// For each sample time, the 0-based type of each slot.
    pub slot_types: Vec<Vec<usize>>,
    pub population: u64,
    pub seed: u64,
    pub event_count: u64,
    pub frozen_at: Option<f64>,
}

pub fn simulate_labeled(
    spec: &ModelSpec,
    n: u64,
    mu0: &Measure,
    horizon: f64,
    sample_times: &[f64],
    seed: u64,
    event_cap: u64,
) -> Result<LabeledTrajectoryRecord> {
    check_sample_grid(sample_times, horizon)?;
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    if mu0.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "initial measure",
            expected: spec.size(),
            got: mu0.len(),
        });
    }
    let (mut types, mut rng) = init_types(n, mu0, seed);
    let mut counts = vec![0u64; spec.size()];
    for t in &types {
        counts[*t] += 1;
    }
    let cache = kernel_cache(spec);
    let mut buf = Vec::new();
    let mut time = 0.0f64;
    let mut event_count = 0u64;
    let mut slot_types: Vec<Vec<usize>> = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0usize;
    let mut frozen_at = None;

    loop {
        let total = rates_into(spec, cache.as_ref(), &counts, n, &mut buf);
        if total <= 0.0 {
            frozen_at = Some(time);
            break;
        }
        let dt = exp_holding(&mut rng, total);
        let t_next = time + dt;
        if t_next > horizon {
            break;
        }
        while next_sample < sample_times.len() && sample_times[next_sample] < t_next {
            slot_types.push(types.clone());
            next_sample += 1;
        }
        let (x, y) = pick_event(&mut rng, &buf, total);
        // Uniform choice of the moving particle among type-x slots.
        let k = ((rng.random::<f64>() * counts[x] as f64) as u64).min(counts[x] - 1);
        let mut seen = 0u64;
        for slot in types.iter_mut() {
            if *slot == x {
                if seen == k {
                    *slot = y;
                    break;
                }
                seen += 1;
            }
        }
        counts[x] -= 1;
        counts[y] += 1;
        time = t_next;
        event_count += 1;
        if event_count > event_cap {
            return Err(Error::EventCapExceeded {
                cap: event_cap,
                time,
            });
        }
    }
    while next_sample < sample_times.len() {
        slot_types.push(types.clone());
        next_sample += 1;
    }
    Ok(LabeledTrajectoryRecord {
        times: sample_times.to_vec(),
        slot_types,
        population: n,
        seed,
        event_count,
        frozen_at,
    })
}

/// Number of population configurations of `n` particles over `k` types:
/// C(n+k-1, k-1), or `None` on overflow.
pub fn simplex_size(n: u64, k: usize) -> Option<u128> {
    let mut result: u128 = 1;
    let k = k as u128;
    let n = n as u128;
    for i in 1..k {
        result = result.checked_mul(n + i)?;
        result /= i;
    }
    Some(result)
}

fn enumerate_simplex(n: u64, k: usize) -> Vec<Vec<u64>> {
    fn rec(remaining: u64, slots: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in (0..=remaining).rev() {
            prefix.push(c);
            rec(remaining - c, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, &mut Vec::new(), &mut out);
    out
}

/// The full generator on the enumerated population simplex, used as a
/// brute-force law oracle at small N.
#[derive(Debug, Clone)]
pub struct MasterSystem {
    states: Vec<Vec<u64>>,
    generator: RateMatrix,
    index: HashMap<Vec<u64>, usize>,
    n: u64,
}

impl MasterSystem {
    pub fn states(&self) -> &[Vec<u64>] {
        &self.states
    }

    pub fn generator(&self) -> &RateMatrix {
        &self.generator
    }

    pub fn population(&self) -> u64 {
        self.n
    }

    pub fn index_of(&self, counts: &[u64]) -> Option<usize> {
        self.index.get(counts).copied()
    }

    /// Point mass on the configuration `counts`.
    pub fn delta_law(&self, counts: &[u64]) -> Result<Vec<f64>> {
        let i = self.index_of(counts).ok_or_else(|| {
            Error::InvalidParameter(format!("configuration {counts:?} is not a state"))
        })?;
        let mut law = vec![0.0; self.states.len()];
        law[i] = 1.0;
        Ok(law)
    }

    /// Law of the configuration process at time t from the initial law
    /// `p0`, by uniformization (independent of the matrix-exponential
    /// route used elsewhere).
    pub fn law_at(&self, p0: &[f64], t: f64) -> Result<Vec<f64>> {
        crate::linalg::evolve_law_uniformization(self.generator.matrix(), p0, t)
    }

    /// Mean empirical measure E[m(eta)] under a law on configurations.
    pub fn mean_empirical(&self, law: &[f64]) -> Result<Measure> {
        if law.len() != self.states.len() {
            return Err(Error::SizeMismatch {
                context: "configuration law",
                expected: self.states.len(),
                got: law.len(),
            });
        }
        let size = self.states.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; size];
        for (p, eta) in law.iter().zip(&self.states) {
            for (x, c) in eta.iter().enumerate() {
                mean[x] += p * *c as f64 / self.n as f64;
            }
        }
        Measure::normalized(mean.iter().map(|w| w.max(0.0)).collect())
    }
}

/// Builds the master generator with the default state cap.
pub fn master_generator(spec: &ModelSpec, n: u64) -> Result<MasterSystem> {
    master_generator_with_cap(spec, n, DEFAULT_SIMPLEX_CAP)
}

pub fn master_generator_with_cap(spec: &ModelSpec, n: u64, cap: usize) -> Result<MasterSystem> {
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    let size = spec.size();
    let states_count = simplex_size(n, size)
        .filter(|s| *s <= cap as u128)
        .ok_or(Error::SimplexTooLarge {
            states: simplex_size(n, size).unwrap_or(u128::MAX) as usize,
            cap,
        })?;
    let states = enumerate_simplex(n, size);
    debug_assert_eq!(states.len() as u128, states_count);
    let index: HashMap<Vec<u64>, usize> = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    let m_states = states.len();
    let mut gen = DMatrix::<f64>::zeros(m_states, m_states);
    let q = spec.mutation();
    for (i, eta) in states.iter().enumerate() {
        let m = Measure::raw(eta.iter().map(|c| *c as f64 / n as f64).collect());
        for x in 0..size {
            if eta[x] == 0 {
                continue;
            }
            for y in 0..size {
                if y == x {
                    continue;
                }
                let rate =
                    eta[x] as f64 * (q.entry(x, y) + m.weight(y) * spec.selection().eval(&m, x, y));
                if rate == 0.0 {
                    continue;
                }
                let mut target = eta.clone();
                target[x] -= 1;
                target[y] += 1;
                let j = index[&target];
                gen[(i, j)] += rate;
            }
        }
        // Diagonal from an ascending scan so the stored row sums are
        // exactly zero under the same summation order used for checks.
        let row_sum: f64 = (0..m_states).filter(|j| *j != i).map(|j| gen[(i, j)]).sum();
        gen[(i, i)] = -row_sum;
    }
    Ok(MasterSystem {
        states,
        generator: RateMatrix::new(gen)?,
        index,
        n,
    })
}

/// Forces the birth part of an additive kernel to zero (absorbed-process
/// conditioning dynamics); death part and symmetric part are unchanged.
pub fn fleming_viot_mode(spec: &ModelSpec) -> Result<ModelSpec> {
    match spec.selection().form() {
        crate::model::KernelForm::Additive { vd, symmetric_part, .. } => spec.with_selection(
            SelectionKernel::additive(vd.clone(), crate::model::MuFn::zeros(spec.size()), symmetric_part.clone()),
        ),
        crate::model::KernelForm::General { .. } => Err(Error::NotAdditive),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MuFn, StateSpace, SymPart};

    fn two_type(a: f64, b: f64, p: f64, q: f64) -> ModelSpec {
        let qm = RateMatrix::from_rows(&[vec![-a, a], vec![b, -b]]).unwrap();
        let sel = SelectionKernel::additive(
            MuFn::Const(vec![0.0, q]),
            MuFn::Const(vec![0.0, p]),
            SymPart::Zero,
        );
        ModelSpec::new(StateSpace::new(2).unwrap(), qm, sel).unwrap()
    }

    #[test]
    fn init_from_point_mass_is_deterministic() {
        let spec = two_type(1.0, 1.0, 0.0, 1.0);
        let mu0 = Measure::delta(2, 0);
        for seed in 0..20 {
            let state = init_iid(&spec, 7, &mu0, seed).unwrap();
            assert_eq!(state.counts(), &[7, 0]);
        }
    }

    #[test]
    fn init_matches_multinomial_moments() {
        let spec = two_type(1.0, 1.0, 0.0, 0.0);
        let mu0 = Measure::new(vec![0.3, 0.7]).unwrap();
        let n = 50u64;
        let reps = 4000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..reps {
            let state = init_iid(&spec, n, &mu0, seed as u64).unwrap();
            let f = state.counts()[0] as f64 / n as f64;
            sum += f;
            sumsq += f * f;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        let expected_var = 0.3 * 0.7 / n as f64;
        let se_mean = (expected_var / reps as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * se_mean, "mean {mean}");
        // Variance of the sample variance estimator, rough normal bound.
        let se_var = expected_var * (2.0f64 / reps as f64).sqrt() * 1.5;
        assert!((var - expected_var).abs() < 3.0 * se_var, "var {var} vs {expected_var}");
    }

    #[test]
    fn rate_list_hand_values() {
        let spec = two_type(1.0, 1.0, 0.0, 1.0);
        let rates = enumerate_rates(&spec, &[2, 1]).unwrap();
        assert_eq!(rates.len(), 2);
        let r12 = rates.iter().find(|(x, y, _)| (*x, *y) == (0, 1)).unwrap().2;
        let r21 = rates.iter().find(|(x, y, _)| (*x, *y) == (1, 0)).unwrap().2;
        assert!((r12 - 2.0).abs() < 1e-15);
        assert!((r21 - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rate_list_pure_mutation_exit() {
        let qm = RateMatrix::from_rows(&[
            vec![-1.5, 1.0, 0.5],
            vec![0.2, -0.4, 0.2],
            vec![0.1, 0.3, -0.4],
        ])
        .unwrap();
        let spec = ModelSpec::new(
            StateSpace::new(3).unwrap(),
            qm,
            SelectionKernel::zero(3),
        )
        .unwrap();
        let rates = enumerate_rates(&spec, &[5, 0, 0]).unwrap();
        let total: f64 = rates.iter().map(|(_, _, r)| r).sum();
        assert!((total - 5.0 * 1.5).abs() < 1e-12);
        assert!(rates.iter().all(|(x, _, _)| *x == 0));
    }

    #[test]
    fn selection_part_scales_linearly() {
        let base = two_type(1.0, 1.0, 0.0, 1.0);
        let doubled = base
            .with_selection(SelectionKernel::additive(
                MuFn::Const(vec![0.0, 2.0]),
                MuFn::Const(vec![0.0, 0.0]),
                SymPart::Zero,
            ))
            .unwrap();
        let counts = [2u64, 1];
        let r1 = enumerate_rates(&base, &counts).unwrap();
        let r2 = enumerate_rates(&doubled, &counts).unwrap();
        let sel = |rates: &[(usize, usize, f64)]| -> f64 {
            // Selection part of the 2->1 rate: total minus the mutation part.
            let r21 = rates.iter().find(|(x, y, _)| (*x, *y) == (1, 0)).unwrap().2;
            r21 - 1.0
        };
        assert!((sel(&r2) - 2.0 * sel(&r1)).abs() < 1e-14);
    }

    #[test]
    fn step_preserves_population_and_freezes_without_rates() {
        let spec = two_type(1.0, 2.0, 0.5, 1.0);
        let mut state = init_iid(&spec, 11, &Measure::uniform(2), 42).unwrap();
        for _ in 0..10_000 {
            if step(&spec, &mut state).unwrap().is_none() {
                break;
            }
            assert_eq!(state.counts().iter().sum::<u64>(), 11);
        }

        let silent = ModelSpec::new(
            StateSpace::new(2).unwrap(),
            RateMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            SelectionKernel::zero(2),
        )
        .unwrap();
        let mut state = init_iid(&silent, 4, &Measure::uniform(2), 7).unwrap();
        let ev = step(&silent, &mut state).unwrap();
        assert!(ev.is_none());
        assert!(state.is_frozen());
    }

    #[test]
    fn simulate_is_reproducible() {
        let spec = two_type(1.0, 1.0, 0.3, 1.0);
        let mu0 = Measure::new(vec![0.4, 0.6]).unwrap();
        let times = [0.0, 0.5, 1.0, 2.0];
        let opts = SimulateOptions {
            record_events: true,
            ..SimulateOptions::default()
        };
        let a = simulate_with_options(&spec, 20, &mu0, 2.0, &times, 99, opts).unwrap();
        let b = simulate_with_options(&spec, 20, &mu0, 2.0, &times, 99, opts).unwrap();
        assert_eq!(a, b);
        let c = simulate(&spec, 20, &mu0, 2.0, &times, 100).unwrap();
        assert!(a.final_counts != c.final_counts || a.event_count != c.event_count);
    }

    #[test]
    fn simulate_matches_manual_stepping() {
        let spec = two_type(1.0, 2.0, 0.0, 1.0);
        let mu0 = Measure::new(vec![0.5, 0.5]).unwrap();
        let horizon = 3.0;
        let times = [0.0, 0.7, 1.9, 3.0];
        let seed = 3141;
        let record = simulate(&spec, 9, &mu0, horizon, &times, seed).unwrap();

        let mut state = init_iid(&spec, 9, &mu0, seed).unwrap();
        let mut measures = Vec::new();
        let mut next = 0usize;
        loop {
            let before = state.counts().to_vec();
            let before_time = state.time();
            match step(&spec, &mut state).unwrap() {
                Some(event) => {
                    let cut = event.time.min(horizon + 1.0);
                    while next < times.len() && times[next] < cut && times[next] >= before_time {
                        measures.push(empirical_of(&before, 9));
                        next += 1;
                    }
                    if event.time > horizon {
                        break;
                    }
                }
                None => break,
            }
        }
        while next < times.len() {
            measures.push(state.empirical());
            next += 1;
        }
        // The manual loop applied the event that crossed the horizon, but
        // samples were flushed before applying it, so they agree.
        assert_eq!(record.measures, measures);
    }

    #[test]
    fn cached_and_naive_rate_paths_agree() {
        // Population-independent expression kernel: the cached table must
        // reproduce the per-event evaluation bitwise.
        let qm = RateMatrix::from_rows(&[
            vec![-1.0, 0.6, 0.4],
            vec![0.3, -0.5, 0.2],
            vec![0.8, 0.2, -1.0],
        ])
        .unwrap();
        let vd = MuFn::Expr(crate::expr::KernelExpr::parse("0.25 * x").unwrap());
        let vb = MuFn::Expr(crate::expr::KernelExpr::parse("max(0.1, 1.0 - 0.2 * x)").unwrap());
        let spec = ModelSpec::new(
            StateSpace::new(3).unwrap(),
            qm,
            SelectionKernel::additive(vd, vb, SymPart::Zero),
        )
        .unwrap();
        assert!(!spec.selection().mu_dependent());
        let cache = kernel_cache(&spec);
        assert!(cache.is_some());
        let mut with_cache = Vec::new();
        let mut naive = Vec::new();
        for counts in [[3u64, 0, 0], [1, 1, 1], [0, 2, 4], [5, 1, 0]] {
            let t1 = rates_into(&spec, cache.as_ref(), &counts, counts.iter().sum(), &mut with_cache);
            let t2 = rates_into(&spec, None, &counts, counts.iter().sum(), &mut naive);
            assert_eq!(with_cache, naive);
            assert_eq!(t1.to_bits(), t2.to_bits());
        }
    }

    #[test]
    fn frozen_model_yields_flat_trajectory() {
        let silent = ModelSpec::new(
            StateSpace::new(2).unwrap(),
            RateMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            SelectionKernel::zero(2),
        )
        .unwrap();
        let mu0 = Measure::new(vec![0.5, 0.5]).unwrap();
        let record = simulate(&silent, 6, &mu0, 5.0, &[0.0, 2.5, 5.0], 11).unwrap();
        assert_eq!(record.frozen_at, Some(0.0));
        assert_eq!(record.event_count, 0);
        for m in &record.measures {
            assert_eq!(m, &record.measures[0]);
        }
    }

    #[test]
    fn event_cap_triggers() {
        let spec = two_type(5.0, 5.0, 0.0, 0.0);
        let mu0 = Measure::uniform(2);
        let opts = SimulateOptions {
            event_cap: 10,
            record_events: false,
        };
        let err = simulate_with_options(&spec, 50, &mu0, 100.0, &[100.0], 1, opts).unwrap_err();
        assert!(matches!(err, Error::EventCapExceeded { cap: 10, .. }));
    }

    #[test]
    fn simplex_enumeration_counts_and_order() {
        assert_eq!(simplex_size(3, 2), Some(4));
        assert_eq!(simplex_size(3, 3), Some(10));
        let states = enumerate_simplex(3, 2);
        assert_eq!(
            states,
            vec![vec![3, 0], vec![2, 1], vec![1, 2], vec![0, 3]]
        );
        assert_eq!(enumerate_simplex(3, 3).len(), 10);
    }

    #[test]
    fn master_generator_structure() {
        let spec = two_type(1.0, 1.0, 0.0, 1.0);
        let master = master_generator(&spec, 3).unwrap();
        assert_eq!(master.states().len(), 4);
        // Row sums vanish by construction (RateMatrix validated).
        // Rate out of (2,1) toward (1,2) is the hand value 2.
        let i = master.index_of(&[2, 1]).unwrap();
        let j = master.index_of(&[1, 2]).unwrap();
        assert!((master.generator().entry(i, j) - 2.0).abs() < 1e-15);
        // And toward (3,0) the hand value 5/3.
        let k = master.index_of(&[3, 0]).unwrap();
        assert!((master.generator().entry(i, k) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn master_law_tracks_simulation_histogram() {
        let spec = two_type(1.0, 1.0, 0.0, 1.0);
        let n = 3u64;
        let master = master_generator(&spec, n).unwrap();
        let eta0 = vec![3u64, 0];
        let law = master
            .law_at(&master.delta_law(&eta0).unwrap(), 1.0)
            .unwrap();
        let mu0 = Measure::delta(2, 0);
        let reps = 20_000usize;
        let mut hist = vec![0.0f64; master.states().len()];
        for seed in 0..reps {
            let rec = simulate(&spec, n, &mu0, 1.0, &[1.0], seed as u64).unwrap();
            let idx = master.index_of(&rec.final_counts).unwrap();
            hist[idx] += 1.0;
        }
        for h in hist.iter_mut() {
            *h /= reps as f64;
        }
        let tv: f64 = law
            .iter()
            .zip(&hist)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "TV {tv}");
    }

    #[test]
    fn single_particle_occupation_matches_matrix_exponential() {
        let qm = RateMatrix::from_rows(&[
            vec![-1.0, 0.7, 0.3],
            vec![0.4, -0.9, 0.5],
            vec![0.2, 0.3, -0.5],
        ])
        .unwrap();
        let spec = ModelSpec::new(
            StateSpace::new(3).unwrap(),
            qm,
            SelectionKernel::zero(3),
        )
        .unwrap();
        let t = 0.8;
        let e = crate::linalg::expm(&(spec.mutation().matrix() * t)).unwrap();
        let reps = 30_000usize;
        let mut hist = vec![0.0f64; 3];
        for seed in 0..reps {
            let rec = simulate(&spec, 1, &Measure::delta(3, 0), t, &[t], seed as u64).unwrap();
            let state = rec.final_counts.iter().position(|c| *c == 1).unwrap();
            hist[state] += 1.0;
        }
        for h in hist.iter_mut() {
            *h /= reps as f64;
        }
        let tv: f64 = (0..3).map(|x| (hist[x] - e[(0, x)]).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.02, "TV {tv}");
    }

    #[test]
    fn labeled_counts_match_unlabeled_distributionally() {
        let spec = two_type(1.0, 1.0, 0.2, 0.8);
        let mu0 = Measure::new(vec![0.5, 0.5]).unwrap();
        let labeled = simulate_labeled(&spec, 12, &mu0, 1.5, &[1.5], 5, 1_000_000).unwrap();
        assert_eq!(labeled.slot_types.len(), 1);
        assert_eq!(labeled.slot_types[0].len(), 12);
        // Slot histogram is a valid configuration of 12 particles.
        let mut counts = [0u64; 2];
        for t in &labeled.slot_types[0] {
            counts[*t] += 1;
        }
        assert_eq!(counts.iter().sum::<u64>(), 12);
    }

    #[test]
    fn fleming_viot_mode_zeroes_birth_part() {
        let spec = two_type(1.0, 1.0, 0.7, 1.3);
        let fv = fleming_viot_mode(&spec).unwrap();
        let lam = crate::model::lambda_of(&fv).unwrap();
        // Lambda = -Vd = (0, -1.3).
        assert!((lam.value(0) - 0.0).abs() < 1e-15);
        assert!((lam.value(1) + 1.3).abs() < 1e-15);
        // Idempotent: a second application changes nothing.
        let fv2 = fleming_viot_mode(&fv).unwrap();
        let lam2 = crate::model::lambda_of(&fv2).unwrap();
        assert_eq!(lam.values(), lam2.values());

        let general = ModelSpec::new(
            StateSpace::new(2).unwrap(),
            spec.mutation().clone(),
            SelectionKernel::general_from_matrix(
                &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]),
                SymPart::Zero,
            ),
        )
        .unwrap();
        assert!(matches!(fleming_viot_mode(&general), Err(Error::NotAdditive)));
    }
}
